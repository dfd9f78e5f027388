//! `dash`: streaming PARAFAC2 from the command line.
//!
//! Every setting can also come from a `DASH_<NAME>` environment variable
//! (e.g. `DASH_RANK=5`) or a TOML file given by `--config`. Flags win over
//! the environment, which wins over the file, which wins over defaults.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dash::eval::{
    config_hash, run_experiment, scaling_benchmark, write_run, ExperimentConfig, Session,
    UpdateReport,
};
use dash::io::{export_factors, read_batch, write_batch};
use dash::stream::checkpoint::{load, save};
use dash::{detect, replay, Encoding, ExecMode, UpdateOptions};
use serde::Serialize;
use serde_json::json;

use config::{RunArgs, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "dash",
    version,
    about = "Streaming PARAFAC2 decomposition of irregular tensors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the initial part of a dataset and write a checkpoint.
    Init(RunArgs),
    /// Apply one batch directory to a checkpoint.
    Update(UpdateArgs),
    /// Initialize, stream every batch and detect anomalies.
    Replay(RunArgs),
    /// Measure update time across update cycles.
    Bench(BenchArgs),
    /// Write the update batches of a dataset as batch directories.
    Split(RunArgs),
}

#[derive(Debug, Args)]
struct UpdateArgs {
    #[arg(long, env = "DASH_CHECKPOINT")]
    checkpoint: PathBuf,
    /// Batch directory with manifest.json.
    #[arg(long)]
    batch: PathBuf,
    #[arg(long, env = "DASH_OUT", default_value = "dash-out")]
    out: PathBuf,
    #[arg(long, env = "DASH_DETERMINISTIC")]
    deterministic: bool,
    #[arg(long, env = "DASH_BINARY")]
    binary: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated update cycles.
    #[arg(long, value_delimiter = ',', default_value = "20,40,60,80,100")]
    cycles: Vec<usize>,
    /// Time each update this many times and keep the fastest.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
}

fn encoding(binary: bool) -> (Encoding, &'static str) {
    if binary {
        (Encoding::Binary, "checkpoint.bin")
    } else {
        (Encoding::Json, "checkpoint.json")
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_manifest(
    out: &Path,
    command: &str,
    config: &impl Serialize,
    outputs: &[PathBuf],
    started: Instant,
) -> Result<()> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "config_hash": config_hash(config)?,
        "outputs": outputs,
        "seconds": started.elapsed().as_secs_f64(),
    });
    write_json(&out.join("run_manifest.json"), &manifest)
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn cmd_init(cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    prepare_out(&cfg.out)?;
    let e = &cfg.experiment;
    let full = e.source.load(e.seed)?;
    let (initial, _) = replay(&full, e.init_fraction, e.update_cycle)?;
    let (session, summary) = Session::start(&initial, Some(&full), &e.session_config())?;

    let (enc, name) = encoding(cfg.binary);
    let ckpt_path = cfg.out.join(name);
    save(&ckpt_path, &session.checkpoint(), enc)?;
    let summary_path = cfg.out.join("init.json");
    write_json(&summary_path, &summary)?;
    let factors = export_factors(
        &cfg.out.join("factors"),
        &session.state.factors,
        &summary.losses,
    )?;

    println!(
        "initialized {} slices, rank {}: loss {:.6e}, relative error {:.6e} after {} sweeps",
        session.state.factors.num_slices(),
        e.rank,
        summary.loss,
        summary.relative_error,
        summary.iterations
    );
    println!("checkpoint: {}", ckpt_path.display());
    write_manifest(
        &cfg.out,
        "init",
        cfg,
        &[ckpt_path, summary_path, factors],
        started,
    )
}

fn cmd_update(args: &UpdateArgs) -> Result<()> {
    let started = Instant::now();
    prepare_out(&args.out)?;
    let ckpt = load(&args.checkpoint)?;
    let mode = if args.deterministic {
        ExecMode::Deterministic
    } else {
        ExecMode::Parallel
    };
    let mut session = Session::resume(
        ckpt,
        UpdateOptions {
            mode,
            ..UpdateOptions::default()
        },
    );
    let next = session.state.update_index + 1;
    let batch = read_batch(&args.batch, next, |id| session.state.slot(id).is_some())?;
    let ingested = session.ingest(&batch)?;
    let report: &UpdateReport = &ingested.report;

    let (enc, name) = encoding(args.binary);
    let ckpt_path = args.out.join(name);
    save(&ckpt_path, &session.checkpoint(), enc)?;
    let report_path = args
        .out
        .join(format!("report_{:04}.json", report.update_index));
    write_json(
        &report_path,
        &json!({ "report": report, "slice_errors": report.slice_errors }),
    )?;
    println!(
        "update {}: {} rows, {} new slices, local error {:.6e}, {:.3} ms",
        report.update_index,
        report.rows_ingested,
        report.new_slices,
        report.local_error,
        report.dash_seconds * 1e3
    );
    let inputs = json!({
        "checkpoint": args.checkpoint,
        "batch": args.batch,
        "deterministic": args.deterministic,
    });
    write_manifest(
        &args.out,
        "update",
        &inputs,
        &[ckpt_path, report_path],
        started,
    )
}

fn cmd_replay(cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    prepare_out(&cfg.out)?;
    let run = run_experiment(&cfg.experiment)?;
    let flags = detect(&run.errors, cfg.window);
    let hash = config_hash(cfg)?;
    let files = write_run(&cfg.out, &hash, &run, &flags, cfg.window)?;
    let (enc, name) = encoding(cfg.binary);
    let ckpt_path = cfg.out.join(name);
    save(&ckpt_path, &run.session.checkpoint(), enc)?;

    println!(
        "replayed {} updates: init relative error {:.6e}, {} anomaly flags",
        run.reports.len(),
        run.init.relative_error,
        flags.len()
    );
    for f in flags.iter().take(10) {
        println!(
            "  {:?} update {} {}: {:.4e} > {:.4e}",
            f.level,
            f.update_index,
            f.slice_id.as_deref().unwrap_or("-"),
            f.score,
            f.threshold
        );
    }
    let outputs = [
        files.reports_csv,
        files.summary_json,
        files.anomalies_json,
        files.tensor_errors_csv,
        files.slice_errors_csv,
        ckpt_path,
    ];
    write_manifest(&cfg.out, "replay", cfg, &outputs, started)
}

fn cmd_bench(cfg: &RunConfig, cycles: &[usize], repeats: usize) -> Result<()> {
    let started = Instant::now();
    prepare_out(&cfg.out)?;
    let base = ExperimentConfig {
        track_global: false,
        timing_repeats: repeats.max(1),
        ..cfg.experiment.clone()
    };
    let summary = scaling_benchmark(&base, cycles)?;
    for p in &summary.points {
        println!(
            "cycle {:>4}: {:>3} updates, median {:>8.1} rows, median {:>9.3} ms{}",
            p.cycle,
            p.updates,
            p.median_rows,
            p.median_seconds * 1e3,
            p.baseline_spearman
                .map(|s| format!(", refit time trend {s:.3}"))
                .unwrap_or_default()
        );
    }
    println!("log-log slope of update time vs rows: {:.3}", summary.slope);
    let bench_config = json!({ "run": cfg, "cycles": cycles, "repeats": repeats });
    let path = cfg
        .out
        .join(format!("bench_{}.json", config_hash(&bench_config)?));
    write_json(&path, &summary)?;
    write_manifest(&cfg.out, "bench", &bench_config, &[path], started)
}

fn cmd_split(cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    prepare_out(&cfg.out)?;
    let e = &cfg.experiment;
    let full = e.source.load(e.seed)?;
    let (_, batches) = replay(&full, e.init_fraction, e.update_cycle)?;
    let mut outputs = Vec::with_capacity(batches.len());
    for b in &batches {
        let dir = cfg.out.join(format!("batch_{:04}", b.update_index));
        write_batch(&dir, b)?;
        outputs.push(dir);
    }
    println!(
        "wrote {} batches under {}",
        batches.len(),
        cfg.out.display()
    );
    write_manifest(&cfg.out, "split", cfg, &outputs, started)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Init(args) => cmd_init(&args.resolve()?),
        Command::Update(args) => cmd_update(args),
        Command::Replay(args) => cmd_replay(&args.resolve()?),
        Command::Bench(args) => cmd_bench(&args.run.resolve()?, &args.cycles, args.repeats),
        Command::Split(args) => cmd_split(&args.resolve()?),
    }
}
