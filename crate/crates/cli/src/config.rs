//! Resolution of run settings: command-line flags and `DASH_*` environment
//! variables first, then an optional TOML file, then defaults.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use dash::eval::{DataSource, ExperimentConfig};
use dash::{ExecMode, StatsPolicy, SynthParams, DEFAULT_LAMBDA, DEFAULT_WINDOW};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML file with any of the settings below.
    #[arg(long, env = "DASH_CONFIG")]
    pub config: Option<PathBuf>,
    /// Dataset directory holding manifest.json.
    #[arg(long, env = "DASH_DATASET", conflicts_with = "synth")]
    pub dataset: Option<PathBuf>,
    /// Synthetic data spec, e.g. "slices=20,cols=15,rank=3,noise=0.1".
    #[arg(long, env = "DASH_SYNTH")]
    pub synth: Option<String>,
    #[arg(long, env = "DASH_RANK")]
    pub rank: Option<usize>,
    #[arg(long, env = "DASH_LAMBDA")]
    pub lambda: Option<f64>,
    /// Time steps per update batch.
    #[arg(long, env = "DASH_CYCLE")]
    pub cycle: Option<usize>,
    #[arg(long, env = "DASH_INIT_FRACTION")]
    pub init_fraction: Option<f64>,
    /// ALS sweeps for the initial fit.
    #[arg(long, env = "DASH_ITERS")]
    pub iters: Option<usize>,
    #[arg(long, env = "DASH_SEED")]
    pub seed: Option<u64>,
    /// Trailing window of the anomaly threshold.
    #[arg(long, env = "DASH_WINDOW")]
    pub window: Option<usize>,
    #[arg(long, env = "DASH_OUT")]
    pub out: Option<PathBuf>,
    /// Serial reductions; results are bit-reproducible.
    #[arg(long, env = "DASH_DETERMINISTIC")]
    pub deterministic: bool,
    /// Refit static ALS after every batch for comparison.
    #[arg(long, env = "DASH_BASELINE")]
    pub baseline: bool,
    /// Per-column scaling: causal-frozen, global or none.
    #[arg(long, env = "DASH_NORMALIZE")]
    pub normalize: Option<String>,
    /// Write checkpoints with the compact binary encoding.
    #[arg(long, env = "DASH_BINARY")]
    pub binary: bool,
}

/// Settings as they may appear in a config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<PathBuf>,
    synth: Option<String>,
    rank: Option<usize>,
    lambda: Option<f64>,
    cycle: Option<usize>,
    init_fraction: Option<f64>,
    iters: Option<usize>,
    seed: Option<u64>,
    window: Option<usize>,
    out: Option<PathBuf>,
    deterministic: Option<bool>,
    baseline: Option<bool>,
    normalize: Option<String>,
    binary: Option<bool>,
}

impl FileConfig {
    fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Fully resolved settings of one command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub window: usize,
    pub out: PathBuf,
    pub binary: bool,
}

fn parse_policy(s: &str) -> Result<Option<StatsPolicy>> {
    Ok(match s {
        "causal-frozen" => Some(StatsPolicy::CausalFrozen),
        "global" => Some(StatsPolicy::Global),
        "none" => None,
        other => bail!("unknown normalization {other:?}; expected causal-frozen, global or none"),
    })
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => FileConfig::read(path)?,
            None => FileConfig::default(),
        };
        let defaults = ExperimentConfig::default();

        let source = match (&self.dataset, &self.synth) {
            (Some(dir), _) => DataSource::Dataset(dir.clone()),
            (None, Some(spec)) => DataSource::Synth(parse_synth(spec)?),
            (None, None) => match (&file.dataset, &file.synth) {
                (Some(_), Some(_)) => bail!("config sets both dataset and synth"),
                (Some(dir), None) => DataSource::Dataset(dir.clone()),
                (None, Some(spec)) => DataSource::Synth(parse_synth(spec)?),
                (None, None) => bail!("no data source: pass --dataset or --synth"),
            },
        };
        let deterministic = self.deterministic || file.deterministic.unwrap_or(false);
        let normalize = match self.normalize.as_ref().or(file.normalize.as_ref()) {
            Some(s) => parse_policy(s)?,
            None => defaults.normalize,
        };
        let experiment = ExperimentConfig {
            source,
            rank: self.rank.or(file.rank).unwrap_or(defaults.rank),
            lambda: self.lambda.or(file.lambda).unwrap_or(DEFAULT_LAMBDA),
            update_cycle: self.cycle.or(file.cycle).unwrap_or(defaults.update_cycle),
            init_fraction: self
                .init_fraction
                .or(file.init_fraction)
                .unwrap_or(defaults.init_fraction),
            iters: self.iters.or(file.iters).unwrap_or(defaults.iters),
            seed: self.seed.or(file.seed).unwrap_or(defaults.seed),
            baseline: self.baseline || file.baseline.unwrap_or(false),
            normalize,
            mode: if deterministic {
                ExecMode::Deterministic
            } else {
                ExecMode::Parallel
            },
            ..defaults
        };
        let config = RunConfig {
            experiment,
            window: self.window.or(file.window).unwrap_or(DEFAULT_WINDOW),
            out: self
                .out
                .clone()
                .or(file.out)
                .unwrap_or_else(|| PathBuf::from("dash-out")),
            binary: self.binary || file.binary.unwrap_or(false),
        };
        config.validate()?;
        Ok(config)
    }
}

fn parse_synth(spec: &str) -> Result<SynthParams> {
    spec.parse()
        .with_context(|| format!("invalid synth spec {spec:?}"))
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.rank < 1 {
            bail!("--rank must be at least 1");
        }
        if !(e.lambda > 0.0 && e.lambda <= 1.0) {
            bail!("--lambda must lie in (0, 1], got {}", e.lambda);
        }
        if e.update_cycle < 1 {
            bail!("--cycle must be at least 1");
        }
        if !(e.init_fraction > 0.0 && e.init_fraction < 1.0) {
            bail!(
                "--init-fraction must lie in (0, 1), got {}",
                e.init_fraction
            );
        }
        if e.iters < 1 {
            bail!("--iters must be at least 1");
        }
        if self.window < 2 {
            bail!("--window must be at least 2");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth_args() -> RunArgs {
        RunArgs {
            synth: Some("slices=4,cols=5,rank=2,duration=30".into()),
            ..RunArgs::default()
        }
    }

    #[test]
    fn defaults_apply() {
        let c = synth_args().resolve().unwrap();
        assert_eq!(c.experiment.rank, 10);
        assert_eq!(c.experiment.iters, 10);
        assert_eq!(c.experiment.lambda, 0.7);
        assert_eq!(c.window, 5);
    }

    #[test]
    fn flags_override_file() {
        let dir = std::env::temp_dir().join(format!("dash-cfg-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.toml");
        fs::write(&path, "rank = 3\nlambda = 0.5\nwindow = 7\n").unwrap();
        let args = RunArgs {
            config: Some(path),
            rank: Some(4),
            ..synth_args()
        };
        let c = args.resolve().unwrap();
        assert_eq!(c.experiment.rank, 4);
        assert_eq!(c.experiment.lambda, 0.5);
        assert_eq!(c.window, 7);
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn invariants_are_checked() {
        for bad in [
            RunArgs {
                lambda: Some(0.0),
                ..synth_args()
            },
            RunArgs {
                lambda: Some(1.5),
                ..synth_args()
            },
            RunArgs {
                init_fraction: Some(1.0),
                ..synth_args()
            },
            RunArgs {
                window: Some(1),
                ..synth_args()
            },
            RunArgs {
                cycle: Some(0),
                ..synth_args()
            },
            RunArgs {
                rank: Some(0),
                ..synth_args()
            },
        ] {
            assert!(bad.resolve().is_err());
        }
    }

    #[test]
    fn missing_source_is_an_error() {
        assert!(RunArgs::default().resolve().is_err());
    }
}
