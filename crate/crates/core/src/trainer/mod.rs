//! Double-DQN training: replay, exploration, double-Q targets, gradient
//! steps and soft target updates.

mod policy;
mod replay;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Action, ActionSet};
use crate::env::{EnvConfig, EnvError};
use crate::harness::eval::{evaluate_greedy, EvalError, EvalSummary};
use crate::observation::Observation;
use crate::qnet::{NetConfig, NetError, NetShape, Params, QNetwork, ACTIONS};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;

pub use policy::{greedy_action, select_action, softmax_probabilities, Exploration, Policy};
pub use replay::{ReplayBuffer, Transition};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: u64, loss: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    NotEnoughData { have: usize, need: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub soft_update_eta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub exploration: Exploration,
    pub total_steps: u64,
    pub update_target_interval: u64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Environment steps before the first gradient step (at least `batch_size`).
    pub learning_starts: usize,
    /// Environment steps per gradient step.
    pub train_interval: u64,
    /// Steps between log rows; each row runs a greedy evaluation.
    pub log_interval: u64,
    /// Greedy episodes per log row.
    pub log_eval_episodes: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            soft_update_eta: 0.005,
            learning_rate: 3e-4,
            batch_size: 128,
            buffer_capacity: 50_000,
            exploration: Exploration::default(),
            total_steps: 200_000,
            update_target_interval: 1,
            optimizer: OptimizerKind::Sgd,
            grad_clip: Some(1.0),
            learning_starts: 0,
            train_interval: 1,
            log_interval: 5_000,
            log_eval_episodes: 20,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.soft_update_eta > 0.0 && self.soft_update_eta <= 1.0) {
            return bad("soft_update_eta must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("batch_size and buffer_capacity must be positive");
        }
        if self.batch_size > self.buffer_capacity {
            return bad("batch_size must not exceed buffer_capacity");
        }
        if self.update_target_interval == 0 || self.train_interval == 0 || self.log_interval == 0 {
            return bad("intervals must be positive");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        self.exploration.validate().map_err(TrainError::Config)
    }
}

/// `target ← (1−η)·target + η·main`, array by array.
pub fn soft_update<T: Scalar>(target: &mut Params<T>, main: &Params<T>, eta: T) -> Result<(), NetError> {
    if !target.same_layout(main) {
        return Err(NetError::Layout("soft update between differently shaped networks".into()));
    }
    let keep = T::one() - eta;
    for (t, m) in target.tensors.iter_mut().zip(&main.tensors) {
        for (a, &b) in t.data.iter_mut().zip(&m.data) {
            *a = keep * *a + eta * b;
        }
    }
    Ok(())
}

/// Double-Q regression targets: the main network picks the next action,
/// the target network values it.
pub fn ddqn_target<T: Scalar>(
    batch: &[&Transition<T>],
    main: &QNetwork<T>,
    target: &QNetwork<T>,
    gamma: T,
) -> Result<Vec<T>, NetError> {
    batch.iter().map(|t| bootstrap(t, main, target, gamma)).collect()
}

fn bootstrap<T: Scalar>(t: &Transition<T>, main: &QNetwork<T>, target: &QNetwork<T>, gamma: T) -> Result<T, NetError> {
    if t.terminal {
        return Ok(t.reward);
    }
    let a_star = greedy_action(&main.forward(&t.next_obs)?, t.next_legal);
    let q_next = target.forward(&t.next_obs)?;
    Ok(t.reward + gamma * q_next[a_star])
}

/// SGD or Adam with optional global-norm clipping.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub learning_rate: T,
    pub grad_clip: Option<T>,
    moments: Option<(Params<T>, Params<T>)>,
    steps: i32,
}

impl<T: Scalar> Optimizer<T> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, learning_rate: f64, grad_clip: Option<f64>) -> Self {
        Self {
            kind,
            learning_rate: T::of(learning_rate),
            grad_clip: grad_clip.map(T::of),
            moments: None,
            steps: 0,
        }
    }

    pub fn from_config(cfg: &TrainerConfig) -> Self {
        Self::new(cfg.optimizer, cfg.learning_rate, cfg.grad_clip)
    }

    /// Clips `grads` in place and takes one descent step on `params`.
    pub fn apply(&mut self, params: &mut Params<T>, grads: &mut Params<T>) {
        if let Some(clip) = self.grad_clip {
            let norm = grads.norm();
            if norm > clip {
                grads.scale(clip / norm);
            }
        }
        match self.kind {
            OptimizerKind::Sgd => params.axpy(-self.learning_rate, grads),
            OptimizerKind::Adam => {
                self.steps += 1;
                let (m, v) = self.moments.get_or_insert_with(|| (grads.zeros_like(), grads.zeros_like()));
                let (b1, b2) = (T::of(Self::BETA1), T::of(Self::BETA2));
                let c1 = T::one() - b1.powi(self.steps);
                let c2 = T::one() - b2.powi(self.steps);
                let eps = T::of(Self::EPS);
                let lr = self.learning_rate;
                for (((p, g), m), v) in params
                    .tensors
                    .iter_mut()
                    .zip(&grads.tensors)
                    .zip(&mut m.tensors)
                    .zip(&mut v.tensors)
                {
                    for k in 0..p.data.len() {
                        let gk = g.data[k];
                        m.data[k] = b1 * m.data[k] + (T::one() - b1) * gk;
                        v.data[k] = b2 * v.data[k] + (T::one() - b2) * gk * gk;
                        let mh = m.data[k] / c1;
                        let vh = v.data[k] / c2;
                        p.data[k] -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Mean squared TD error of `batch` and its parameter gradient.
pub fn loss_and_gradient<T: Scalar>(
    batch: &[&Transition<T>],
    main: &QNetwork<T>,
    target: &QNetwork<T>,
    gamma: T,
    grads: &mut Params<T>,
) -> Result<T, NetError> {
    grads.fill(T::zero());
    let n = T::of(batch.len() as f64);
    let mut loss = T::zero();
    for t in batch {
        let y = bootstrap(t, main, target, gamma)?;
        let (q, cache) = main.forward_cached(&t.obs)?;
        let err = q[t.action] - y;
        loss += err * err;
        let mut d_q = [T::zero(); ACTIONS];
        d_q[t.action] = T::of(2.0) * err / n;
        main.backward(&cache, &d_q, grads);
    }
    Ok(loss / n)
}

/// Reusable state for [`train_step`].
#[derive(Clone, Debug)]
pub struct Learner<T> {
    pub main: QNetwork<T>,
    pub target: QNetwork<T>,
    pub optimizer: Optimizer<T>,
    grads: Params<T>,
}

impl<T: Scalar> Learner<T> {
    pub fn new(main: QNetwork<T>, cfg: &TrainerConfig) -> Self {
        Self {
            target: main.clone(),
            grads: main.params.zeros_like(),
            optimizer: Optimizer::from_config(cfg),
            main,
        }
    }
}

/// Samples a minibatch, takes one gradient step on the main network and
/// returns the pre-update loss.
pub fn train_step<T: Scalar, R: Rng + ?Sized>(
    buffer: &ReplayBuffer<T>,
    learner: &mut Learner<T>,
    cfg: &TrainerConfig,
    rng: &mut R,
) -> Result<f64, TrainError> {
    if buffer.len() < cfg.batch_size {
        return Err(TrainError::NotEnoughData {
            have: buffer.len(),
            need: cfg.batch_size,
        });
    }
    let idx = buffer.sample_indices(cfg.batch_size, rng);
    let batch: Vec<&Transition<T>> = idx.iter().map(|&i| buffer.get(i)).collect();
    let loss = loss_and_gradient(&batch, &learner.main, &learner.target, T::of(cfg.gamma), &mut learner.grads)?;
    let loss = loss.as_f64();
    if !loss.is_finite() || !learner.grads.all_finite() {
        return Err(TrainError::Divergence { step: 0, loss });
    }
    learner.optimizer.apply(&mut learner.main.params, &mut learner.grads);
    Ok(loss)
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub step: u64,
    pub episode: u64,
    /// Mean loss of the gradient steps since the previous row.
    pub loss: Option<f64>,
    pub epsilon_or_temp: f64,
    pub eval_landing_ratio: f64,
    pub eval_primary_ratio: f64,
}

pub const LOG_HEADER: &str = "step,episode,loss,epsilon_or_temp,eval_landing_ratio,eval_primary_ratio";

impl LogRow {
    pub fn csv(&self) -> String {
        let loss = self.loss.map(|l| format!("{l:.9e}")).unwrap_or_default();
        format!(
            "{},{},{},{:.6},{:.6},{:.6}",
            self.step, self.episode, loss, self.epsilon_or_temp, self.eval_landing_ratio, self.eval_primary_ratio
        )
    }
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutput<T> {
    pub net: QNetwork<T>,
    pub log: Vec<LogRow>,
    pub steps: u64,
    pub episodes: u64,
}

/// Initial network for a run: a pure function of the configs and seed.
pub fn initial_network<T: Scalar>(env: &EnvConfig, net: NetConfig, seed: u64) -> Result<QNetwork<T>, NetError> {
    let shape = NetShape::for_grid(env.map.size(), &env.obs);
    QNetwork::init(net, shape, &mut rng::stream(seed, Purpose::Init, 0))
}

/// Full training loop. `on_row` sees each log row as it is produced.
pub fn run_training<T: Scalar>(
    env: &EnvConfig,
    net: NetConfig,
    cfg: &TrainerConfig,
    seed: u64,
    mut on_row: impl FnMut(&LogRow),
) -> Result<TrainOutput<T>, TrainError> {
    cfg.validate()?;
    env.validate()?;
    let mut learner = Learner::new(initial_network::<T>(env, net, seed)?, cfg);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut explore_rng = rng::stream(seed, Purpose::Exploration, 0);
    let mut replay_rng = rng::stream(seed, Purpose::Replay, 0);
    let warmup = cfg.learning_starts.max(cfg.batch_size);
    let eta = T::of(cfg.soft_update_eta);

    let mut log = Vec::new();
    let (mut step, mut episode) = (0u64, 0u64);
    let (mut loss_sum, mut loss_n) = (0.0, 0u64);
    while step < cfg.total_steps {
        let mut ep = env.reset(rng::episode_seed(seed, Purpose::Episode, episode))?;
        let mut obs: Arc<Observation<T>> = Arc::new(ep.observe());
        while !ep.is_done() && step < cfg.total_steps {
            let policy = cfg.exploration.at(step);
            let legal = ep.legal_actions();
            let q = learner.main.forward(&obs)?;
            let a = select_action(&q, legal, policy, &mut explore_rng);
            let out = ep.step(Action::ALL[a])?;
            let next: Arc<Observation<T>> = Arc::new(ep.observe());
            buffer.push(Transition {
                obs,
                action: a,
                reward: T::of(out.reward),
                next_obs: next.clone(),
                terminal: out.done,
                next_legal: if out.done { ActionSet::FULL } else { ep.legal_actions() },
            });
            obs = next;
            step += 1;

            if buffer.len() >= warmup && step % cfg.train_interval == 0 {
                let loss = train_step(&buffer, &mut learner, cfg, &mut replay_rng).map_err(|e| match e {
                    TrainError::Divergence { loss, .. } => TrainError::Divergence { step, loss },
                    e => e,
                })?;
                loss_sum += loss;
                loss_n += 1;
            }
            if step % cfg.update_target_interval == 0 {
                soft_update(&mut learner.target.params, &learner.main.params, eta)?;
            }
            if step % cfg.log_interval == 0 {
                let summary = if cfg.log_eval_episodes > 0 {
                    evaluate_greedy(&learner.main, env, cfg.log_eval_episodes, seed)?
                } else {
                    EvalSummary::default()
                };
                let row = LogRow {
                    step,
                    episode,
                    loss: (loss_n > 0).then(|| loss_sum / loss_n as f64),
                    epsilon_or_temp: policy.parameter(),
                    eval_landing_ratio: summary.landing_ratio,
                    eval_primary_ratio: summary.primary_ratio,
                };
                on_row(&row);
                log.push(row);
                loss_sum = 0.0;
                loss_n = 0;
            }
        }
        episode += 1;
    }
    Ok(TrainOutput {
        net: learner.main,
        log,
        steps: step,
        episodes: episode,
    })
}
