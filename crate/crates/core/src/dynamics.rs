//! UAV state machine: legal actions, the safety controller, transitions and step rewards.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{Coord, EnvironmentMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Hover,
    East,
    West,
    North,
    South,
    Land,
}

impl Action {
    pub const COUNT: usize = 6;
    /// Network output order.
    pub const ALL: [Action; Action::COUNT] = [
        Action::Hover,
        Action::East,
        Action::West,
        Action::North,
        Action::South,
        Action::Land,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Horizontal displacement in cells.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::East => (1, 0),
            Action::West => (-1, 0),
            Action::North => (0, 1),
            Action::South => (0, -1),
            Action::Hover | Action::Land => (0, 0),
        }
    }
}

/// Subset of the six actions, bit `i` for `Action::ALL[i]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct ActionSet(u8);

impl ActionSet {
    pub const FULL: ActionSet = ActionSet(0b11_1111);

    pub fn contains(self, a: Action) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    pub fn contains_index(self, i: usize) -> bool {
        i < Action::COUNT && self.0 & (1 << i) != 0
    }

    pub fn insert(&mut self, a: Action) {
        self.0 |= 1 << a.index();
    }

    pub fn remove(&mut self, a: Action) {
        self.0 &= !(1 << a.index());
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        Action::ALL.into_iter().filter(move |&a| self.contains(a))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn from_bits(bits: u8) -> Self {
        ActionSet(bits & Self::FULL.0)
    }
}

impl FromIterator<Action> for ActionSet {
    fn from_iter<I: IntoIterator<Item = Action>>(iter: I) -> Self {
        let mut s = ActionSet::default();
        for a in iter {
            s.insert(a);
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct UavState {
    pub position: Coord,
    pub operational: bool,
    /// Remaining action steps.
    pub battery: u32,
}

impl UavState {
    pub fn new(position: Coord, battery: u32) -> Self {
        Self {
            position,
            operational: true,
            battery,
        }
    }

    /// Altitude in meters: flight height while operational, ground otherwise.
    pub fn altitude(&self, map: &EnvironmentMap) -> f64 {
        if self.operational {
            map.uav_height_m()
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepFlags {
    pub blocked: bool,
    pub landed: bool,
    pub crashed: bool,
}

impl StepFlags {
    pub fn terminal(&self) -> bool {
        self.landed || self.crashed
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("cannot step an inactive UAV")]
    Inactive,
    #[error("cannot step a UAV with an empty battery")]
    EmptyBattery,
    #[error("action {0:?} is not legal at ({1}, {2})")]
    IllegalAction(Action, i32, i32),
}

pub fn legal_actions(state: &UavState, map: &EnvironmentMap) -> ActionSet {
    let mut set = ActionSet::FULL;
    if !map.get(state.position).is_some_and(|c| c.is_landing()) {
        set.remove(Action::Land);
    }
    set
}

/// Replaces a move that would leave the grid or enter a no-occupy cell by Hover.
pub fn safety_filter(state: &UavState, action: Action, map: &EnvironmentMap) -> (Action, bool) {
    let (dx, dy) = action.delta();
    if (dx, dy) == (0, 0) {
        return (action, false);
    }
    match map.get(state.position.offset(dx, dy)) {
        Some(cell) if !cell.no_occupy() => (action, false),
        _ => (Action::Hover, true),
    }
}

/// One mission slot for an active UAV.
pub fn step(state: &UavState, action: Action, map: &EnvironmentMap) -> Result<(UavState, StepFlags), DynamicsError> {
    if !state.operational {
        return Err(DynamicsError::Inactive);
    }
    if state.battery == 0 {
        return Err(DynamicsError::EmptyBattery);
    }
    if !legal_actions(state, map).contains(action) {
        return Err(DynamicsError::IllegalAction(action, state.position.x, state.position.y));
    }
    let (applied, blocked) = safety_filter(state, action, map);
    let (dx, dy) = applied.delta();
    let landed = applied == Action::Land;
    let next = UavState {
        position: state.position.offset(dx, dy),
        operational: !landed,
        battery: state.battery - 1,
    };
    let flags = StepFlags {
        blocked,
        landed,
        crashed: next.battery == 0 && next.operational,
    };
    Ok((next, flags))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    /// Per newly covered target cell.
    pub r_cell: f64,
    /// Per collected data unit.
    pub r_data: f64,
    /// Safety-controller intervention.
    pub r_sc: f64,
    /// Every step that does not complete the mission.
    pub r_mov: f64,
    /// Battery exhausted while airborne.
    pub r_crash: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            r_cell: 0.4,
            r_data: 0.1,
            r_sc: -1.0,
            r_mov: -0.05,
            r_crash: -5.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), String> {
        let all = [self.r_cell, self.r_data, self.r_sc, self.r_mov, self.r_crash];
        if all.iter().any(|w| !w.is_finite()) {
            return Err("reward weights must be finite".into());
        }
        if self.r_cell < 0.0 || self.r_data < 0.0 {
            return Err("r_cell and r_data must be nonnegative".into());
        }
        if self.r_sc > 0.0 || self.r_mov > 0.0 || self.r_crash > 0.0 {
            return Err("r_sc, r_mov and r_crash must be nonpositive".into());
        }
        Ok(())
    }
}

pub fn step_reward(flags: StepFlags, newly_covered: u32, collected: f64, weights: &RewardWeights) -> f64 {
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    weights.r_cell * newly_covered as f64
        + weights.r_data * collected
        + weights.r_sc * ind(flags.blocked)
        + weights.r_mov * ind(!flags.landed)
        + weights.r_crash * ind(flags.crashed)
}
