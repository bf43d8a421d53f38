use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ActionSet, Action};
use crate::scalar::Scalar;

/// Exploration schedule of the behaviour policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Exploration {
    /// Boltzmann sampling; the temperature decays linearly to
    /// `final_temperature` over `decay_steps` when that is set.
    Softmax {
        temperature: f64,
        #[serde(default)]
        final_temperature: Option<f64>,
        #[serde(default)]
        decay_steps: u64,
    },
    /// ε decays linearly from `start` to `end` over `decay_steps`.
    EpsilonGreedy { start: f64, end: f64, decay_steps: u64 },
}

impl Default for Exploration {
    fn default() -> Self {
        Exploration::Softmax {
            temperature: 0.1,
            final_temperature: None,
            decay_steps: 0,
        }
    }
}

impl Exploration {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Exploration::Softmax {
                temperature,
                final_temperature,
                ..
            } => {
                let end = final_temperature.unwrap_or(temperature);
                if !(temperature > 0.0 && end > 0.0 && temperature.is_finite() && end.is_finite()) {
                    return Err("softmax temperatures must be positive".into());
                }
            }
            Exploration::EpsilonGreedy { start, end, .. } => {
                if !((0.0..=1.0).contains(&start) && (0.0..=1.0).contains(&end)) {
                    return Err("epsilon must lie in [0, 1]".into());
                }
            }
        }
        Ok(())
    }

    /// Policy in force at training step `step`.
    pub fn at(&self, step: u64) -> Policy {
        let lerp = |a: f64, b: f64, n: u64| {
            if n == 0 || step >= n {
                b
            } else {
                a + (b - a) * step as f64 / n as f64
            }
        };
        match *self {
            Exploration::Softmax {
                temperature,
                final_temperature,
                decay_steps,
            } => Policy::Softmax {
                temperature: match final_temperature {
                    Some(end) => lerp(temperature, end, decay_steps),
                    None => temperature,
                },
            },
            Exploration::EpsilonGreedy { start, end, decay_steps } => Policy::EpsilonGreedy {
                epsilon: lerp(start, end, decay_steps),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Policy {
    Greedy,
    Softmax { temperature: f64 },
    EpsilonGreedy { epsilon: f64 },
}

impl Policy {
    /// The ε or temperature value logged during training.
    pub fn parameter(&self) -> f64 {
        match *self {
            Policy::Greedy => 0.0,
            Policy::Softmax { temperature } => temperature,
            Policy::EpsilonGreedy { epsilon } => epsilon,
        }
    }
}

/// Highest-valued legal action, ties to the lowest index.
pub fn greedy_action<T: Scalar>(q: &[T], legal: ActionSet) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in q.iter().enumerate() {
        if legal.contains_index(i) && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.expect("legal action set must be nonempty").0
}

pub fn select_action<T: Scalar, R: Rng + ?Sized>(q: &[T], legal: ActionSet, policy: Policy, rng: &mut R) -> usize {
    assert!(!legal.is_empty(), "legal action set must be nonempty");
    match policy {
        Policy::Greedy => greedy_action(q, legal),
        Policy::EpsilonGreedy { epsilon } => {
            if rng.random::<f64>() < epsilon {
                let k = rng.random_range(0..legal.len());
                legal.iter().nth(k).unwrap().index()
            } else {
                greedy_action(q, legal)
            }
        }
        Policy::Softmax { temperature } => {
            let probs = softmax_probabilities(q, legal, temperature);
            let u = rng.random::<f64>();
            let mut acc = 0.0;
            let mut last = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > 0.0 {
                    acc += p;
                    last = i;
                    if u < acc {
                        return i;
                    }
                }
            }
            last
        }
    }
}

/// Boltzmann distribution over legal actions; illegal entries are exactly 0.
pub fn softmax_probabilities<T: Scalar>(q: &[T], legal: ActionSet, temperature: f64) -> [f64; Action::COUNT] {
    let mut p = [0.0; Action::COUNT];
    let max = (0..q.len())
        .filter(|&i| legal.contains_index(i))
        .map(|i| q[i].as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for i in 0..q.len() {
        if legal.contains_index(i) {
            p[i] = ((q[i].as_f64() - max) / temperature).exp();
            z += p[i];
        }
    }
    p.iter_mut().for_each(|v| *v /= z);
    p
}
