//! End-to-end streaming runs: initialize on the first part of a dataset,
//! replay the rest batch by batch, and record errors and update times.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::{concatenate, Axis};
use serde::{Deserialize, Serialize};

use super::metrics::{global_error, local_error, slice_errors, History};
use super::stats::{log_log_slope, mean, median, spearman, standard_error};
use crate::anomaly::ErrorSeries;
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::io::load_dataset;
use crate::normalize::{normalize_batch, normalize_tensor, ColumnStats, StatsPolicy};
use crate::parafac2::{parafac2_als, relative_error, AlsOptions};
use crate::replay::replay;
use crate::stream::checkpoint::Checkpoint;
use crate::stream::{prepare_update, StreamState, UpdateOptions, UpdateOutcome, DEFAULT_LAMBDA};
use crate::synth::{synthesize, SynthParams};
use crate::tensor::{IrregularTensor, SliceMatrix, UpdateBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Dataset(PathBuf),
    Synth(SynthParams),
}

impl DataSource {
    pub fn load(&self, seed: u64) -> Result<IrregularTensor> {
        match self {
            DataSource::Dataset(dir) => load_dataset(dir),
            DataSource::Synth(params) => synthesize(params, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub rank: usize,
    pub lambda: f64,
    pub update_cycle: usize,
    pub init_fraction: f64,
    /// Sweep cap of the initializing ALS fit.
    pub iters: usize,
    pub seed: u64,
    /// Also refit static ALS on the accumulated tensor after every batch.
    pub baseline: bool,
    pub baseline_iters: usize,
    pub normalize: Option<StatsPolicy>,
    pub mode: ExecMode,
    pub passes: usize,
    /// Keep every ingested row to report global errors.
    pub track_global: bool,
    /// Each update is computed this many times and the fastest run is
    /// reported; only the last one is applied.
    #[serde(default = "one")]
    pub timing_repeats: usize,
}

fn one() -> usize {
    1
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synth(SynthParams::default()),
            rank: 10,
            lambda: DEFAULT_LAMBDA,
            update_cycle: 20,
            init_fraction: 0.2,
            iters: 10,
            seed: 0,
            baseline: false,
            baseline_iters: 10,
            normalize: Some(StatsPolicy::CausalFrozen),
            mode: ExecMode::Deterministic,
            passes: 1,
            track_global: true,
            timing_repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitSummary {
    pub loss: f64,
    pub relative_error: f64,
    pub iterations: usize,
    pub seconds: f64,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub update_index: usize,
    pub dash_seconds: f64,
    pub baseline_seconds: Option<f64>,
    pub local_error: f64,
    pub global_error: Option<f64>,
    pub rows_ingested: usize,
    pub new_slices: usize,
    pub slices_updated: usize,
    #[serde(skip)]
    pub slice_errors: Vec<(String, f64)>,
}

/// A stream consumer: factors, helpers, scaling statistics and, optionally,
/// the raw history needed for global errors.
#[derive(Debug, Clone)]
pub struct Session {
    pub state: StreamState,
    pub stats: Option<(ColumnStats, StatsPolicy)>,
    pub options: UpdateOptions,
    /// See [`ExperimentConfig::timing_repeats`].
    pub timing_repeats: usize,
    history: Option<History>,
}

/// Outcome of feeding one batch to a [`Session`].
#[derive(Debug, Clone)]
pub struct Ingested {
    pub report: UpdateReport,
    /// The batch as the factors saw it (after scaling).
    pub batch: UpdateBatch,
    pub outcome: UpdateOutcome,
}

#[derive(Debug, Clone, Copy)]
pub struct SessionConfig {
    pub rank: usize,
    pub lambda: f64,
    pub iters: usize,
    pub seed: u64,
    pub tol: f64,
    /// Random starts of the initial fit.
    pub restarts: usize,
    pub normalize: Option<StatsPolicy>,
    pub options: UpdateOptions,
    pub track_global: bool,
}

impl Session {
    /// Fits the initial tensor and builds helpers. `full` supplies global
    /// scaling statistics when the policy asks for them.
    pub fn start(
        initial: &IrregularTensor,
        full: Option<&IrregularTensor>,
        cfg: &SessionConfig,
    ) -> Result<(Self, InitSummary)> {
        let (initial, stats) = match cfg.normalize {
            Some(policy) => {
                let seed_stats = match (policy, full) {
                    (StatsPolicy::Global, Some(full)) => ColumnStats::from_tensor(full),
                    _ => ColumnStats::default(),
                };
                let (scaled, stats) = normalize_tensor(initial, &seed_stats, policy);
                (scaled, Some((stats, policy)))
            }
            None => (initial.clone(), None),
        };
        let started = Instant::now();
        let fit = parafac2_als(
            &initial,
            &AlsOptions {
                rank: cfg.rank,
                iters: cfg.iters,
                seed: cfg.seed,
                tol: cfg.tol,
                mode: cfg.options.mode,
                restarts: cfg.restarts,
            },
        )?;
        let state = StreamState::initialize(&initial, fit.factors, cfg.lambda)?;
        let seconds = started.elapsed().as_secs_f64();
        let summary = InitSummary {
            loss: fit.losses.last().copied().unwrap_or(f64::NAN),
            relative_error: relative_error(&initial, &state.factors),
            iterations: fit.losses.len(),
            seconds,
            losses: fit.losses,
        };
        let history = cfg.track_global.then(|| History::from_initial(&initial));
        Ok((
            Self {
                state,
                stats,
                options: cfg.options,
                timing_repeats: 1,
                history,
            },
            summary,
        ))
    }

    /// Continues from a checkpoint; global errors are unavailable.
    pub fn resume(ckpt: Checkpoint, options: UpdateOptions) -> Self {
        let stats = ckpt.column_stats.zip(ckpt.stats_policy);
        Self {
            state: ckpt.state,
            stats,
            options,
            timing_repeats: 1,
            history: None,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let ckpt = Checkpoint::new(self.state.clone());
        match &self.stats {
            Some((stats, policy)) => ckpt.with_stats(stats.clone(), *policy),
            None => ckpt,
        }
    }

    /// Scales, applies and scores one raw batch.
    pub fn ingest(&mut self, raw: &UpdateBatch) -> Result<Ingested> {
        let index = self.state.update_index + 1;
        let (batch, next_stats) = match &self.stats {
            Some((stats, policy)) => {
                let (scaled, next) = normalize_batch(raw, stats, *policy);
                (scaled, Some((next, *policy)))
            }
            None => (raw.clone(), None),
        };
        let mut dash_seconds = f64::INFINITY;
        for _ in 1..self.timing_repeats {
            let started = Instant::now();
            let trial = prepare_update(&self.state, &batch, &self.options)
                .map_err(|e| e.at_update(index))?;
            dash_seconds = dash_seconds.min(started.elapsed().as_secs_f64());
            drop(trial);
        }
        let started = Instant::now();
        let outcome = self
            .state
            .update(&batch, &self.options)
            .map_err(|e| e.at_update(index))?;
        let dash_seconds = dash_seconds.min(started.elapsed().as_secs_f64());
        if next_stats.is_some() {
            self.stats = next_stats;
        }

        let local = local_error(&self.state, &batch, &outcome).map_err(|e| e.at_update(index))?;
        let global = match &mut self.history {
            Some(history) => {
                let g = global_error(&self.state, history, &batch, &outcome)
                    .map_err(|e| e.at_update(index))?;
                history.absorb(&batch, &outcome);
                Some(g)
            }
            None => None,
        };
        let report = UpdateReport {
            update_index: self.state.update_index,
            dash_seconds,
            baseline_seconds: None,
            local_error: local,
            global_error: global,
            rows_ingested: batch.rows_ingested(),
            new_slices: batch.new_slices.len(),
            slices_updated: outcome.slots.len(),
            slice_errors: slice_errors(&self.state, &batch, &outcome),
        };
        Ok(Ingested {
            report,
            batch,
            outcome,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub init: InitSummary,
    pub reports: Vec<UpdateReport>,
    pub errors: ErrorSeries,
    pub session: Session,
}

impl ExperimentRun {
    pub fn local_errors(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.local_error).collect()
    }

    pub fn global_errors(&self) -> Vec<f64> {
        self.reports.iter().filter_map(|r| r.global_error).collect()
    }

    pub fn dash_seconds(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.dash_seconds).collect()
    }

    pub fn baseline_seconds(&self) -> Vec<f64> {
        self.reports
            .iter()
            .filter_map(|r| r.baseline_seconds)
            .collect()
    }
}

/// Accumulates scaled rows for the static-refit baseline.
struct Accumulated(Vec<SliceMatrix>);

impl Accumulated {
    fn absorb(&mut self, batch: &UpdateBatch) {
        for s in &batch.existing_rows {
            let slot = self
                .0
                .iter_mut()
                .find(|a| a.id == s.id)
                .expect("existing rows belong to a known slice");
            slot.rows = concatenate(Axis(0), &[slot.rows.view(), s.rows.view()])
                .expect("column counts agree");
        }
        self.0.extend(batch.new_slices.iter().cloned());
    }
}

impl ExperimentConfig {
    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            rank: self.rank,
            lambda: self.lambda,
            iters: self.iters,
            seed: self.seed,
            tol: AlsOptions::default().tol,
            restarts: 1,
            normalize: self.normalize,
            options: UpdateOptions {
                mode: self.mode,
                passes: self.passes,
            },
            track_global: self.track_global,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda must lie in (0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Initializes on the first `init_fraction` of the data and streams the rest.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentRun> {
    config.validate()?;
    let full = config.source.load(config.seed)?;
    let (initial, batches) = replay(&full, config.init_fraction, config.update_cycle)?;
    let (mut session, init) = Session::start(&initial, Some(&full), &config.session_config())?;
    session.timing_repeats = config.timing_repeats.max(1);

    let mut accumulated = config.baseline.then(|| {
        let scaled = match &session.stats {
            Some((_, policy)) => {
                let seed = match policy {
                    StatsPolicy::Global => ColumnStats::from_tensor(&full),
                    StatsPolicy::CausalFrozen => ColumnStats::default(),
                };
                normalize_tensor(&initial, &seed, *policy).0
            }
            None => initial.clone(),
        };
        Accumulated(scaled.into_slices())
    });

    let mut reports = Vec::with_capacity(batches.len());
    let mut errors = ErrorSeries::default();
    for raw in &batches {
        let Ingested {
            mut report, batch, ..
        } = session.ingest(raw)?;
        if let Some(acc) = accumulated.as_mut() {
            acc.absorb(&batch);
            let tensor = IrregularTensor::new(acc.0.clone())?;
            let opts = AlsOptions {
                rank: config.rank,
                iters: config.baseline_iters,
                seed: config.seed.wrapping_add(report.update_index as u64),
                tol: 0.0,
                mode: config.mode,
                restarts: 1,
            };
            let started = Instant::now();
            parafac2_als(&tensor, &opts).map_err(|e| e.at_update(report.update_index))?;
            report.baseline_seconds = Some(started.elapsed().as_secs_f64());
        }
        errors.record(
            report.update_index,
            report.local_error,
            &report.slice_errors,
        );
        reports.push(report);
    }
    Ok(ExperimentRun {
        init,
        reports,
        errors,
        session,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub lambda: f64,
    pub mean_local: f64,
    pub se_local: f64,
    pub mean_global: f64,
    pub se_global: f64,
}

/// Mean local and global errors for each forgetting factor.
pub fn lambda_sweep(base: &ExperimentConfig, lambdas: &[f64]) -> Result<Vec<LambdaPoint>> {
    lambdas
        .iter()
        .map(|&lambda| {
            let run = run_experiment(&ExperimentConfig {
                lambda,
                track_global: true,
                ..base.clone()
            })?;
            let (local, global) = (run.local_errors(), run.global_errors());
            Ok(LambdaPoint {
                lambda,
                mean_local: mean(&local),
                se_local: standard_error(&local),
                mean_global: mean(&global),
                se_global: standard_error(&global),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub cycle: usize,
    pub updates: usize,
    pub median_rows: f64,
    pub median_seconds: f64,
    /// Spearman correlation of refit time with update index, when measured.
    pub baseline_spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSummary {
    pub points: Vec<ScalingPoint>,
    /// Slope of ln(median update time) against ln(median rows per batch).
    pub slope: f64,
}

/// Runs one stream per update cycle and fits the growth of update time
/// with batch size.
pub fn scaling_benchmark(base: &ExperimentConfig, cycles: &[usize]) -> Result<ScalingSummary> {
    let mut points = Vec::with_capacity(cycles.len());
    for &cycle in cycles {
        let run = run_experiment(&ExperimentConfig {
            update_cycle: cycle,
            track_global: false,
            ..base.clone()
        })?;
        let rows: Vec<f64> = run.reports.iter().map(|r| r.rows_ingested as f64).collect();
        let baseline = run.baseline_seconds();
        let baseline_spearman = (baseline.len() >= 2).then(|| {
            let idx: Vec<f64> = (1..=baseline.len()).map(|i| i as f64).collect();
            spearman(&idx, &baseline)
        });
        points.push(ScalingPoint {
            cycle,
            updates: run.reports.len(),
            median_rows: median(&rows),
            median_seconds: median(&run.dash_seconds()),
            baseline_spearman,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.median_rows).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.median_seconds).collect();
    Ok(ScalingSummary {
        slope: log_log_slope(&xs, &ys),
        points,
    })
}
