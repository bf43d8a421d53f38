//! Mission targets behind one G×G target layer: camera coverage (CPP) and device depletion (DH).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::radio::{ray_clear, DeviceState};
use crate::world::{Cell, Coord, EnvironmentMap};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MissionKind {
    /// Coverage path planning.
    #[default]
    #[serde(rename = "cpp")]
    Cpp,
    /// Data harvesting.
    #[serde(rename = "dh")]
    Dh,
}

impl std::fmt::Display for MissionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MissionKind::Cpp => "cpp",
            MissionKind::Dh => "dh",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MissionError {
    #[error("operation requires a {expected} mission, state is {actual}")]
    WrongMission { expected: MissionKind, actual: MissionKind },
    #[error("expected {expected} per-device amounts, got {actual}")]
    AmountCount { expected: usize, actual: usize },
    #[error("device {device} asked for {amount} data units but holds {remaining}")]
    OverCollection { device: usize, amount: f64, remaining: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MissionState {
    kind: MissionKind,
    size: usize,
    /// Indexed `y * size + x`.
    target_layer: Vec<f64>,
    devices: Vec<DeviceState>,
    initial_total: f64,
}

/// Relative slack tolerated when checking collected amounts against holdings.
const HARVEST_SLACK: f64 = 1e-9;

impl MissionState {
    pub(crate) fn cpp(size: usize, target_layer: Vec<f64>) -> Self {
        let initial_total = target_layer.iter().sum();
        Self {
            kind: MissionKind::Cpp,
            size,
            target_layer,
            devices: Vec::new(),
            initial_total,
        }
    }

    pub(crate) fn dh(size: usize, devices: Vec<DeviceState>) -> Self {
        let mut target_layer = vec![0.0; size * size];
        for d in &devices {
            target_layer[d.position.y as usize * size + d.position.x as usize] = d.remaining_data;
        }
        let initial_total = devices.iter().map(|d| d.initial_data).sum();
        Self {
            kind: MissionKind::Dh,
            size,
            target_layer,
            devices,
            initial_total,
        }
    }

    /// CPP state with targets on the given cells; tall-building cells are dropped.
    pub fn cpp_from_cells(map: &EnvironmentMap, cells: &[Coord]) -> Self {
        let mut layer = vec![0.0; map.size() * map.size()];
        for &c in cells {
            if map.cell(c) != Cell::TallBuilding {
                layer[map.index(c)] = 1.0;
            }
        }
        Self::cpp(map.size(), layer)
    }

    /// DH state from explicit devices.
    pub fn dh_from_devices(map: &EnvironmentMap, devices: Vec<DeviceState>) -> Self {
        Self::dh(map.size(), devices)
    }

    pub fn kind(&self) -> MissionKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn target_layer(&self) -> &[f64] {
        &self.target_layer
    }

    pub fn target(&self, c: Coord) -> f64 {
        self.target_layer[c.y as usize * self.size + c.x as usize]
    }

    pub fn devices(&self) -> &[DeviceState] {
        &self.devices
    }

    /// Initial target-cell count (CPP) or initial total data (DH).
    pub fn initial_total(&self) -> f64 {
        self.initial_total
    }

    /// Remaining target cells (CPP) or remaining data (DH).
    pub fn remaining_total(&self) -> f64 {
        self.target_layer.iter().sum()
    }

    fn expect(&self, expected: MissionKind) -> Result<(), MissionError> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(MissionError::WrongMission {
                expected,
                actual: self.kind,
            })
        }
    }

    /// Clears every target inside `fov`, returning the number of cells cleared.
    pub fn apply_coverage(&mut self, fov: &FieldOfView) -> Result<u32, MissionError> {
        self.expect(MissionKind::Cpp)?;
        let mut flipped = 0;
        for c in &fov.covered {
            let v = &mut self.target_layer[c.y as usize * self.size + c.x as usize];
            if *v > 0.0 {
                *v = 0.0;
                flipped += 1;
            }
        }
        Ok(flipped)
    }

    /// Removes collected data from each device and the target layer.
    pub fn apply_harvest(&mut self, amounts: &[f64]) -> Result<f64, MissionError> {
        self.expect(MissionKind::Dh)?;
        if amounts.len() != self.devices.len() {
            return Err(MissionError::AmountCount {
                expected: self.devices.len(),
                actual: amounts.len(),
            });
        }
        for (k, (&a, d)) in amounts.iter().zip(&self.devices).enumerate() {
            if !(a >= 0.0) || a > d.remaining_data * (1.0 + HARVEST_SLACK) + f64::MIN_POSITIVE {
                return Err(MissionError::OverCollection {
                    device: k,
                    amount: a,
                    remaining: d.remaining_data,
                });
            }
        }
        let mut total = 0.0;
        for (&a, d) in amounts.iter().zip(self.devices.iter_mut()) {
            let a = a.min(d.remaining_data);
            d.remaining_data -= a;
            d.collected_data += a;
            total += a;
            self.target_layer[d.position.y as usize * self.size + d.position.x as usize] = d.remaining_data;
        }
        Ok(total)
    }

    /// Adds newly generated device data.
    pub fn apply_arrivals(&mut self, amounts: &[f64]) -> Result<(), MissionError> {
        self.expect(MissionKind::Dh)?;
        if amounts.len() != self.devices.len() {
            return Err(MissionError::AmountCount {
                expected: self.devices.len(),
                actual: amounts.len(),
            });
        }
        for (&a, d) in amounts.iter().zip(self.devices.iter_mut()) {
            d.remaining_data += a;
            d.generated_data += a;
            self.target_layer[d.position.y as usize * self.size + d.position.x as usize] = d.remaining_data;
        }
        Ok(())
    }
}

/// Camera window radius: a 5×5 field of view.
pub const FOV_RADIUS: i32 = 2;

/// Cells seen by the camera in the current slot.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FieldOfView {
    /// Sorted, unique.
    pub covered: Vec<Coord>,
}

/// Visible cells of the clipped 5×5 window around the UAV; only tall buildings occlude.
pub fn compute_fov(uav_cell: Coord, map: &EnvironmentMap) -> FieldOfView {
    let mut covered = Vec::with_capacity(25);
    for dy in -FOV_RADIUS..=FOV_RADIUS {
        for dx in -FOV_RADIUS..=FOV_RADIUS {
            let c = uav_cell.offset(dx, dy);
            if map.contains(c) && ray_clear(map, uav_cell, c, Cell::blocks_view) {
                covered.push(c);
            }
        }
    }
    covered.sort_unstable();
    FieldOfView { covered }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mission: MissionKind,
    pub landed: bool,
    /// Covered fraction of the initial targets; 0 for DH.
    pub coverage_ratio: f64,
    /// Collected fraction of the initially available data; 0 for CPP.
    pub collection_ratio: f64,
}

impl Metrics {
    /// Coverage for CPP, collection for DH.
    pub fn primary_ratio(&self) -> f64 {
        match self.mission {
            MissionKind::Cpp => self.coverage_ratio,
            MissionKind::Dh => self.collection_ratio,
        }
    }
}

pub fn episode_metrics(initial: &MissionState, last: &MissionState, landed: bool) -> Metrics {
    let ratio = |done: f64, total: f64| {
        if total > 0.0 {
            (done / total).clamp(0.0, 1.0)
        } else {
            0.0
        }
    };
    let (coverage_ratio, collection_ratio) = match initial.kind {
        MissionKind::Cpp => (ratio(initial.remaining_total() - last.remaining_total(), initial.initial_total), 0.0),
        MissionKind::Dh => {
            let collected: f64 = last.devices.iter().map(|d| d.collected_data).sum();
            (0.0, ratio(collected, initial.initial_total))
        }
    };
    Metrics {
        mission: initial.kind,
        landed,
        coverage_ratio,
        collection_ratio,
    }
}
