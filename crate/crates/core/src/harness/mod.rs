//! Experiment configuration, training/evaluation drivers, the five-core
//! comparison and artifact persistence. The CLI in [`cli`] is a thin layer
//! over these functions.

pub mod cli;
pub mod eval;
pub mod render;
pub mod selfcheck;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::dynamics::RewardWeights;
use crate::env::EnvConfig;
use crate::observation::ObsParams;
use crate::qnet::checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
use crate::qnet::{CoreKind, NetConfig, NetShape, QNetwork};
use crate::radio::ChannelParams;
use crate::trainer::{log_csv, run_training, LogRow, TrainerConfig};
use crate::world::{load_map, EnvironmentMap, ScenarioSpec};
pub use eval::{evaluate, evaluate_with, EpisodeRow, EvalReport, EvalSummary};

pub const CHECKPOINT_FILE: &str = "checkpoint.ardq";
pub const LOG_FILE: &str = "train_log.csv";
pub const REPORT_CSV: &str = "eval_report.csv";
pub const REPORT_JSON: &str = "eval_report.json";

/// Maps compiled into the binary, addressed as `builtin:<name>`.
pub const BUILTIN_MAPS: &[(&str, &str)] = &[
    ("manhattan32", include_str!("../../../../assets/maps/manhattan32.map")),
    ("urban50", include_str!("../../../../assets/maps/urban50.map")),
    ("smoke6", include_str!("../../../../assets/maps/smoke6.map")),
    ("bench16", include_str!("../../../../assets/maps/bench16.map")),
];

pub fn builtin_map(name: &str) -> Option<EnvironmentMap> {
    BUILTIN_MAPS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| load_map(text).expect("built-in maps are valid"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Map file, relative to the config file, or `builtin:<name>`.
    pub map_path: String,
    pub scenario: ScenarioSpec,
    pub channel: ChannelParams,
    pub obs: ObsParams,
    pub net: NetConfig,
    pub trainer: TrainerConfig,
    pub rewards: RewardWeights,
    pub eval_episodes: usize,
    pub seed: u64,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            map_path: "builtin:manhattan32".into(),
            scenario: ScenarioSpec::default(),
            channel: ChannelParams::default(),
            obs: ObsParams::default(),
            net: NetConfig::default(),
            trainer: TrainerConfig::default(),
            rewards: RewardWeights::default(),
            eval_episodes: 1000,
            seed: 0,
            base_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = Self::from_json(&text).with_context(|| format!("invalid config {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load_map(&self) -> Result<EnvironmentMap> {
        if let Some(name) = self.map_path.strip_prefix("builtin:") {
            return builtin_map(name).with_context(|| {
                let names: Vec<_> = BUILTIN_MAPS.iter().map(|(n, _)| *n).collect();
                format!("unknown built-in map `{name}`; available: {}", names.join(", "))
            });
        }
        let path = match &self.base_dir {
            Some(dir) => dir.join(&self.map_path),
            None => PathBuf::from(&self.map_path),
        };
        let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read map {}", path.display()))?;
        load_map(&text).with_context(|| format!("invalid map {}", path.display()))
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        let map = self.load_map()?;
        let env = EnvConfig {
            map: map.into(),
            scenario: self.scenario.clone(),
            channel: self.channel,
            obs: self.obs,
            rewards: self.rewards,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        self.env_config()?;
        self.trainer.validate()?;
        if self.eval_episodes == 0 {
            bail!("eval_episodes must be positive");
        }
        Ok(())
    }

    pub fn net_shape(&self, env: &EnvConfig) -> NetShape {
        NetShape::for_grid(env.map.size(), &self.obs)
    }
}

/// Command-line overrides of config fields.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<u64>,
    pub episodes: Option<usize>,
    pub core: Option<CoreKind>,
    pub attention: Option<bool>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.steps {
            cfg.trainer.total_steps = s;
        }
        if let Some(e) = self.episodes {
            cfg.eval_episodes = e;
        }
        if let Some(c) = self.core {
            cfg.net.core = c;
        }
        if let Some(a) = self.attention {
            cfg.net.attention = a;
        }
    }
}

pub struct TrainArtifacts {
    pub net: QNetwork<f64>,
    pub log: Vec<LogRow>,
    pub checkpoint: PathBuf,
}

/// Trains per `cfg` and writes the checkpoint and log into `out_dir`.
pub fn train_experiment(cfg: &ExperimentConfig, out_dir: &Path, on_row: impl FnMut(&LogRow)) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let env = cfg.env_config()?;
    let out = run_training::<f64>(&env, cfg.net, &cfg.trainer, cfg.seed, on_row)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let meta = serde_json::to_value(cfg)?;
    save_checkpoint(&checkpoint, &out.net, cfg.seed, meta)
        .with_context(|| format!("cannot write checkpoint {}", checkpoint.display()))?;
    let log_path = out_dir.join(LOG_FILE);
    std::fs::write(&log_path, log_csv(&out.log)).with_context(|| format!("cannot write {}", log_path.display()))?;
    Ok(TrainArtifacts {
        net: out.net,
        log: out.log,
        checkpoint,
    })
}

/// Loads a checkpoint and checks it against the network `cfg` asks for.
pub fn load_compatible(cfg: &ExperimentConfig, env: &EnvConfig, path: &Path) -> Result<(CheckpointHeader, QNetwork<f64>)> {
    let shape = cfg.net_shape(env);
    load_checkpoint(path, Some((&cfg.net, &shape))).with_context(|| format!("cannot use checkpoint {}", path.display()))
}

/// Greedy evaluation of a checkpoint; writes CSV and JSON reports into `out_dir`.
pub fn eval_experiment(cfg: &ExperimentConfig, checkpoint: &Path, out_dir: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let env = cfg.env_config()?;
    let (_, net) = load_compatible(cfg, &env, checkpoint)?;
    let report = evaluate(&net, &env, cfg.eval_episodes, cfg.seed)?;
    write_report(&report, out_dir)?;
    Ok(report)
}

pub fn write_report(report: &EvalReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    std::fs::write(out_dir.join(REPORT_CSV), report.to_csv())?;
    std::fs::write(out_dir.join(REPORT_JSON), report.to_json())?;
    Ok(())
}

/// Greedy episode `episode` of the evaluation set, rendered as PPM.
pub fn render_experiment(cfg: &ExperimentConfig, checkpoint: &Path, episode: usize, scale: usize) -> Result<Vec<u8>> {
    let env = cfg.env_config()?;
    let (_, net) = load_compatible(cfg, &env, checkpoint)?;
    let seed = eval::eval_seed(cfg.seed, episode);
    let mut policy = eval::greedy_policy(&net);
    let ep = crate::env::rollout::<f64, eval::EvalError>(&env, seed, &mut policy)?;
    let img = render::render_trajectory(ep.map(), ep.mission(), ep.trace(), env.target_scale(), scale)?;
    Ok(img.to_ppm())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    pub core: CoreKind,
    pub attention: bool,
    pub parameters: usize,
    pub landing_ratio: f64,
    pub coverage_ratio: f64,
    pub collection_ratio: f64,
}

pub const COMPARE_HEADER: &str = "core,attention,parameters,landing_ratio,coverage_ratio,collection_ratio";

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut s = format!("{COMPARE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6}",
            r.core, r.attention, r.parameters, r.landing_ratio, r.coverage_ratio, r.collection_ratio
        );
    }
    s
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let mut s = String::from("| core | attention | parameters | landing | coverage | collection |\n");
    s.push_str("|---|---|---:|---:|---:|---:|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.3} | {:.3} | {:.3} |",
            r.core,
            if r.attention { "on" } else { "off" },
            r.parameters,
            r.landing_ratio,
            r.coverage_ratio,
            r.collection_ratio
        );
    }
    s
}

/// Trains and evaluates every core type under `cfg`. Each core gets its own
/// subdirectory of `out_dir`; the table goes to `compare.csv` and `compare.md`.
pub fn compare_cores(cfg: &ExperimentConfig, out_dir: &Path, mut progress: impl FnMut(CoreKind, &LogRow)) -> Result<Vec<CompareRow>> {
    let mut rows = Vec::new();
    for core in CoreKind::ALL {
        let mut c = cfg.clone();
        c.net.core = core;
        let dir = out_dir.join(core.name());
        let art = train_experiment(&c, &dir, |row| progress(core, row))?;
        let env = c.env_config()?;
        let report = evaluate(&art.net, &env, c.eval_episodes, c.seed)?;
        write_report(&report, &dir)?;
        rows.push(CompareRow {
            core,
            attention: c.net.attention,
            parameters: art.net.parameter_count(),
            landing_ratio: report.landing_ratio,
            coverage_ratio: report.coverage_ratio_mean,
            collection_ratio: report.collection_ratio_mean,
        });
    }
    std::fs::write(out_dir.join("compare.csv"), compare_csv(&rows))?;
    std::fs::write(out_dir.join("compare.md"), compare_table(&rows))?;
    Ok(rows)
}
