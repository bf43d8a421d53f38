use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use super::{
    compare_cores, compare_table, eval_experiment, render_experiment, selfcheck, train_experiment, ExperimentConfig,
    Overrides,
};
use crate::qnet::CoreKind;
use crate::world::{generate_map, save_map, MapGenSpec};

#[derive(Debug, Parser)]
#[command(name = "uav-ddqn", version, about = "UAV coverage and data-harvesting planner trained with a recurrent double DQN")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network; writes checkpoint.ardq and train_log.csv.
    Train {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
        /// Output directory [default: runs/<config name>].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy evaluation of a checkpoint; writes eval_report.csv and eval_report.json.
    Eval {
        config: PathBuf,
        checkpoint: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
        /// Output directory [default: the checkpoint's directory].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render one greedy evaluation episode as a binary PPM image.
    Render {
        config: PathBuf,
        checkpoint: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
        /// Evaluation episode index.
        #[arg(long, default_value_t = 0)]
        episode: usize,
        /// Pixels per cell.
        #[arg(long, default_value_t = 16)]
        scale: usize,
    },
    /// Generate a random map from a JSON spec.
    GenMap {
        spec: PathBuf,
        /// Output file [default: stdout].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in oracle suites.
    Selfcheck,
    /// Train and evaluate all five core types and print a comparison table.
    Compare {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CoreArg {
    None,
    Lstm,
    Bilstm,
    Gru,
    Bigru,
}

impl From<CoreArg> for CoreKind {
    fn from(c: CoreArg) -> Self {
        match c {
            CoreArg::None => CoreKind::None,
            CoreArg::Lstm => CoreKind::Lstm,
            CoreArg::Bilstm => CoreKind::BiLstm,
            CoreArg::Gru => CoreKind::Gru,
            CoreArg::Bigru => CoreKind::BiGru,
        }
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct OverrideArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training steps.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Evaluation episodes.
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long, value_enum)]
    pub core: Option<CoreArg>,
    #[arg(long, value_enum)]
    pub attention: Option<Switch>,
}

impl OverrideArgs {
    fn to_overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            steps: self.steps,
            episodes: self.episodes,
            core: self.core.map(Into::into),
            attention: self.attention.map(|s| s == Switch::On),
        }
    }
}

fn load_config(path: &Path, overrides: &OverrideArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    overrides.to_overrides().apply(&mut cfg);
    cfg.validate().with_context(|| format!("invalid config {}", path.display()))?;
    Ok(cfg)
}

fn default_out(config: &Path) -> PathBuf {
    let stem = config.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    PathBuf::from("runs").join(stem)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, overrides, out } => {
            let cfg = load_config(&config, &overrides)?;
            let out = out.unwrap_or_else(|| default_out(&config));
            let env = cfg.env_config()?;
            let params = crate::trainer::initial_network::<f64>(&env, cfg.net, cfg.seed)?.parameter_count();
            eprintln!("training {} core, {params} parameters, {} steps", cfg.net.core, cfg.trainer.total_steps);
            let art = train_experiment(&cfg, &out, |row| eprintln!("{}", row.csv()))?;
            println!("checkpoint written to {}", art.checkpoint.display());
        }
        Command::Eval {
            config,
            checkpoint,
            overrides,
            out,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let out = out.unwrap_or_else(|| checkpoint.parent().map(Path::to_path_buf).unwrap_or_default());
            let report = eval_experiment(&cfg, &checkpoint, &out)?;
            println!(
                "episodes {}  landing {:.4}  coverage {:.4}  collection {:.4}",
                report.episodes, report.landing_ratio, report.coverage_ratio_mean, report.collection_ratio_mean
            );
        }
        Command::Render {
            config,
            checkpoint,
            output,
            overrides,
            episode,
            scale,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let bytes = render_experiment(&cfg, &checkpoint, episode, scale)?;
            std::fs::write(&output, bytes).with_context(|| format!("cannot write {}", output.display()))?;
        }
        Command::GenMap { spec, out } => {
            let text = std::fs::read_to_string(&spec).with_context(|| format!("cannot read {}", spec.display()))?;
            let spec: MapGenSpec = serde_json::from_str(&text).with_context(|| format!("invalid map spec {}", spec.display()))?;
            let map = save_map(&generate_map(&spec)?);
            match out {
                Some(path) => std::fs::write(&path, map).with_context(|| format!("cannot write {}", path.display()))?,
                None => print!("{map}"),
            }
        }
        Command::Selfcheck => {
            let results = selfcheck::run_all();
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            if results.iter().any(|r| !r.passed) {
                bail!("selfcheck failed");
            }
        }
        Command::Compare { config, overrides, out } => {
            let cfg = load_config(&config, &overrides)?;
            let out = out.unwrap_or_else(|| default_out(&config).join("compare"));
            let rows = compare_cores(&cfg, &out, |core, row| eprintln!("{core}: {}", row.csv()))?;
            print!("{}", compare_table(&rows));
        }
    }
    Ok(())
}
