//! Monte Carlo policy evaluation.

use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{Action, ActionSet};
use crate::env::{rollout, EnvConfig, EnvError};
use crate::missions::MissionKind;
use crate::observation::Observation;
use crate::qnet::{NetError, QNetwork};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;
use crate::trainer::greedy_action;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("evaluation needs at least one episode")]
    NoEpisodes,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub seed: u64,
    pub mission: MissionKind,
    pub steps_used: u32,
    pub landed: bool,
    pub coverage_ratio: f64,
    pub collection_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub landing_ratio: f64,
    /// Mean over episodes; 0 for DH.
    pub coverage_ratio_mean: f64,
    /// Mean over episodes; 0 for CPP.
    pub collection_ratio_mean: f64,
    pub rows: Vec<EpisodeRow>,
}

pub const REPORT_HEADER: &str = "episode,seed,mission,steps_used,landed,coverage_ratio,collection_ratio";

impl EvalReport {
    pub fn from_rows(rows: Vec<EpisodeRow>) -> Self {
        let n = rows.len();
        let mean = |f: &dyn Fn(&EpisodeRow) -> f64| {
            if n == 0 {
                0.0
            } else {
                rows.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let landed = rows.iter().filter(|r| r.landed).count();
        Self {
            episodes: n,
            landing_ratio: if n == 0 { 0.0 } else { landed as f64 / n as f64 },
            coverage_ratio_mean: mean(&|r| r.coverage_ratio),
            collection_ratio_mean: mean(&|r| r.collection_ratio),
            rows,
        }
    }

    pub fn mission(&self) -> Option<MissionKind> {
        self.rows.first().map(|r| r.mission)
    }

    /// Coverage for CPP, collection for DH.
    pub fn primary_ratio(&self) -> f64 {
        match self.mission() {
            Some(MissionKind::Dh) => self.collection_ratio_mean,
            _ => self.coverage_ratio_mean,
        }
    }

    pub fn summary(&self) -> EvalSummary {
        EvalSummary {
            landing_ratio: self.landing_ratio,
            primary_ratio: self.primary_ratio(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{:.9},{:.9}\n",
                r.episode, r.seed, r.mission, r.steps_used, r.landed as u8, r.coverage_ratio, r.collection_ratio
            ));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalSummary {
    pub landing_ratio: f64,
    pub primary_ratio: f64,
}

/// Seed of evaluation episode `k`.
pub fn eval_seed(master: u64, k: usize) -> u64 {
    rng::episode_seed(master, Purpose::Eval, k as u64)
}

/// Evaluates an arbitrary policy on `episodes` fresh scenarios.
pub fn evaluate_with<T: Scalar>(
    env: &EnvConfig,
    episodes: usize,
    seed: u64,
    mut policy: impl FnMut(&Observation<T>, ActionSet) -> Result<Action, EvalError>,
) -> Result<EvalReport, EvalError> {
    if episodes == 0 {
        return Err(EvalError::NoEpisodes);
    }
    env.validate()?;
    let rows = (0..episodes)
        .map(|k| {
            let s = eval_seed(seed, k);
            let ep = rollout(env, s, &mut policy)?;
            let m = ep.metrics();
            Ok(EpisodeRow {
                episode: k,
                seed: s,
                mission: m.mission,
                steps_used: ep.steps(),
                landed: m.landed,
                coverage_ratio: m.coverage_ratio,
                collection_ratio: m.collection_ratio,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(EvalReport::from_rows(rows))
}

/// Greedy masked-argmax policy of `net`.
pub fn greedy_policy<T: Scalar>(net: &QNetwork<T>) -> impl FnMut(&Observation<T>, ActionSet) -> Result<Action, EvalError> + '_ {
    move |obs, legal| Ok(Action::ALL[greedy_action(&net.forward(obs)?, legal)])
}

pub fn evaluate<T: Scalar>(net: &QNetwork<T>, env: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalReport, EvalError> {
    evaluate_with(env, episodes, seed, greedy_policy(net))
}

pub fn evaluate_greedy<T: Scalar>(net: &QNetwork<T>, env: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalSummary, EvalError> {
    evaluate(net, env, episodes, seed).map(|r| r.summary())
}
