//! Episodes on a fixed map: scenario draw, UAV dynamics, coverage or
//! harvesting, rewards and the observation fed to the learner.
//!
//! Every random quantity of episode `seed` comes from streams of that seed:
//! the scenario from [`Purpose::Scenario`], start cell and budget from
//! [`Purpose::Episode`], shadow fading and arrivals from [`Purpose::Channel`].

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::dynamics::{self, Action, ActionSet, DynamicsError, RewardWeights, StepFlags, UavState};
use crate::missions::{compute_fov, episode_metrics, MissionError, MissionKind, MissionState, Metrics};
use crate::observation::{observe, ObsParams, Observation};
use crate::radio::{draw_arrivals, schedule_and_collect, ChannelParams, RadioError};
use crate::rng::{self, Purpose, SimRng};
use crate::scalar::Scalar;
use crate::world::{generate_scenario, Coord, EnvironmentMap, ScenarioError, ScenarioSpec};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error("invalid environment setup: {0}")]
    Invalid(String),
    #[error("episode is already over")]
    Finished,
}

/// Everything needed to start episodes; cheap to clone.
#[derive(Clone, Debug)]
pub struct EnvConfig {
    pub map: Arc<EnvironmentMap>,
    pub scenario: ScenarioSpec,
    pub channel: ChannelParams,
    pub obs: ObsParams,
    pub rewards: RewardWeights,
}

impl EnvConfig {
    pub fn new(map: EnvironmentMap, scenario: ScenarioSpec) -> Self {
        Self {
            map: Arc::new(map),
            scenario,
            channel: ChannelParams::default(),
            obs: ObsParams::default(),
            rewards: RewardWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        self.scenario.validate()?;
        self.channel.validate()?;
        self.obs.validate(self.map.size()).map_err(EnvError::Invalid)?;
        self.rewards.validate().map_err(EnvError::Invalid)?;
        if self.map.landing_cells().is_empty() {
            return Err(EnvError::Invalid("map has no landing cell".into()));
        }
        Ok(())
    }

    /// Divisor of the target channel: 1 for CPP, the largest initial datum for DH.
    pub fn target_scale(&self) -> f64 {
        match self.scenario.mission {
            MissionKind::Cpp => 1.0,
            MissionKind::Dh => self.scenario.device_data[1],
        }
    }

    pub fn reset(&self, seed: u64) -> Result<Episode, EnvError> {
        Episode::new(self.clone(), seed)
    }
}

/// Outcome of one [`Episode::step`].
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Action actually applied after the safety filter.
    pub applied: Action,
    pub flags: StepFlags,
    pub newly_covered: u32,
    pub collected: f64,
    /// Σ effective rate over the communication slots.
    pub throughput: f64,
    /// Device served in each communication slot (DH only).
    pub schedule: Vec<Option<usize>>,
    /// Per-device amounts collected this step (DH only).
    pub amounts: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct Episode {
    cfg: EnvConfig,
    seed: u64,
    initial: MissionState,
    mission: MissionState,
    uav: UavState,
    initial_budget: u32,
    channel_rng: SimRng,
    steps: u32,
    landed: bool,
    done: bool,
    trace: Vec<Coord>,
}

impl Episode {
    pub fn new(cfg: EnvConfig, seed: u64) -> Result<Self, EnvError> {
        let spec = ScenarioSpec {
            rng_seed: seed,
            ..cfg.scenario.clone()
        };
        let initial = generate_scenario(&cfg.map, &spec)?;
        let mut rng = rng::stream(seed, Purpose::Episode, 0);
        let landing = cfg.map.landing_cells();
        if landing.is_empty() {
            return Err(EnvError::Invalid("map has no landing cell".into()));
        }
        let start = landing[rng.random_range(0..landing.len())];
        let [lo, hi] = spec.movement_budget;
        let budget = rng.random_range(lo..=hi);
        let mut mission = initial.clone();
        if mission.kind() == MissionKind::Cpp {
            mission.apply_coverage(&compute_fov(start, &cfg.map))?;
        }
        Ok(Self {
            channel_rng: rng::stream(seed, Purpose::Channel, 0),
            cfg,
            seed,
            initial,
            mission,
            uav: UavState::new(start, budget),
            initial_budget: budget,
            steps: 0,
            landed: false,
            done: false,
            trace: vec![start],
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn map(&self) -> &EnvironmentMap {
        &self.cfg.map
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn uav(&self) -> &UavState {
        &self.uav
    }

    pub fn mission(&self) -> &MissionState {
        &self.mission
    }

    /// Mission state as drawn, before the initial camera frame.
    pub fn initial_mission(&self) -> &MissionState {
        &self.initial
    }

    pub fn initial_budget(&self) -> u32 {
        self.initial_budget
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn landed(&self) -> bool {
        self.landed
    }

    /// Visited cells, starting cell first.
    pub fn trace(&self) -> &[Coord] {
        &self.trace
    }

    pub fn legal_actions(&self) -> ActionSet {
        dynamics::legal_actions(&self.uav, &self.cfg.map)
    }

    pub fn observe<T: Scalar>(&self) -> Observation<T> {
        observe(
            &self.cfg.map,
            &self.mission,
            &self.uav,
            self.initial_budget,
            &self.cfg.obs,
            self.cfg.target_scale(),
        )
    }

    pub fn metrics(&self) -> Metrics {
        episode_metrics(&self.initial, &self.mission, self.landed)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::Finished);
        }
        let (applied, _) = dynamics::safety_filter(&self.uav, action, &self.cfg.map);
        let (next, flags) = dynamics::step(&self.uav, action, &self.cfg.map)?;
        self.uav = next;
        self.steps += 1;
        self.trace.push(next.position);

        let (mut newly_covered, mut collected, mut throughput) = (0, 0.0, 0.0);
        let (mut schedule, mut amounts) = (Vec::new(), Vec::new());
        if next.operational {
            match self.mission.kind() {
                MissionKind::Cpp => {
                    newly_covered = self.mission.apply_coverage(&compute_fov(next.position, &self.cfg.map))?;
                }
                MissionKind::Dh => {
                    let c = schedule_and_collect(
                        &next,
                        self.mission.devices(),
                        &self.cfg.map,
                        &self.cfg.channel,
                        &mut self.channel_rng,
                    )?;
                    collected = self.mission.apply_harvest(&c.amounts)?;
                    throughput = c.throughput;
                    schedule = c.schedule;
                    amounts = c.amounts;
                    if self.cfg.channel.poisson_rate > 0.0 {
                        let arrivals = draw_arrivals(self.mission.devices().len(), &self.cfg.channel, &mut self.channel_rng);
                        self.mission.apply_arrivals(&arrivals)?;
                    }
                }
            }
        }
        let reward = dynamics::step_reward(flags, newly_covered, collected, &self.cfg.rewards);
        self.landed = flags.landed;
        self.done = flags.terminal();
        Ok(StepOutcome {
            applied,
            flags,
            newly_covered,
            collected,
            throughput,
            schedule,
            amounts,
            reward,
            done: self.done,
        })
    }
}

/// Runs one episode to termination under `policy(observation, legal)`.
pub fn rollout<T: Scalar, E: From<EnvError>>(
    cfg: &EnvConfig,
    seed: u64,
    mut policy: impl FnMut(&Observation<T>, ActionSet) -> Result<Action, E>,
) -> Result<Episode, E> {
    let mut ep = cfg.reset(seed)?;
    while !ep.is_done() {
        let obs = ep.observe::<T>();
        let a = policy(&obs, ep.legal_actions())?;
        ep.step(a)?;
    }
    Ok(ep)
}
