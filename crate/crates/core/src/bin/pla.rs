//! `pla`: generate data, train predictors, evaluate, sweep, time, report.
//!
//! Every verb reads an optional TOML experiment plan (`--config`); flags
//! given on the command line override the file.

use std::path::PathBuf;
use std::process::ExitCode;

use candle_core::Device;
use clap::{Args, Parser, Subcommand};

use pla_core::checkpoint::{PredictorCheckpoint, PredictorKind};
use pla_core::harness::{
    build_predictor, estimate_energy, evaluate_cell, measure_latency, prepare_data,
    regenerate_report, run_sweep, scheme_config, train_scheme, DataSource, ExperimentPlan,
    ObservedCell, BUNDLE_FILES,
};
use pla_core::auth::MetricsReport;
use pla_core::scenario::save_bundle;
use pla_core::{PlaError, Result};

#[derive(Parser)]
#[command(name = "pla", version, about = "Physical-layer authentication by channel extrapolation")]
struct Cli {
    /// Experiment plan (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Overrides,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Overrides {
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Comma-separated schemes: gdm,vae,lstm,gru,direct.
    #[arg(long, global = true, value_delimiter = ',')]
    schemes: Option<Vec<PredictorKind>>,
    /// Comma-separated SNRs in dB.
    #[arg(long, global = true, value_delimiter = ',')]
    snr_db: Option<Vec<f64>>,
    /// Comma-separated seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    ddim_steps: Option<usize>,
    #[arg(long, global = true)]
    power_watts: Option<f64>,
    #[arg(long, global = true)]
    target_fa: Option<f64>,
    #[arg(long, global = true)]
    max_trials: Option<usize>,
    /// Read train/val/test bundles from this directory instead of simulating.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Override the epochs of every learned scheme.
    #[arg(long, global = true)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Verb {
    /// Simulate the scenario and write train/val/test bundles.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one scheme and write its checkpoint.
    Train {
        #[arg(long)]
        scheme: PredictorKind,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Calibrate and evaluate a checkpoint at each SNR of the plan.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Full sweep over schemes, SNRs and seeds, then emit the report.
    Sweep {
        /// Fail instead of training when a checkpoint is missing.
        #[arg(long)]
        no_train: bool,
        /// Time predict+authenticate for each scheme.
        #[arg(long)]
        latency: bool,
    },
    /// Median and interquartile range of predict+authenticate wall time.
    Latency {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-emit tables and plots of a finished sweep from its raw verdicts.
    Report {
        /// Sweep output directory (defaults to the plan's).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn load_plan(cli: &Cli) -> Result<ExperimentPlan> {
    let mut plan = match &cli.config {
        Some(path) => ExperimentPlan::from_toml_file(path)?,
        None => ExperimentPlan::default(),
    };
    let o = &cli.common;
    if let Some(v) = &o.output_dir {
        plan.output_dir = v.clone();
    }
    if let Some(v) = &o.schemes {
        plan.schemes = v.clone();
    }
    if let Some(v) = &o.snr_db {
        plan.snr_db_list = v.clone();
    }
    if let Some(v) = &o.seeds {
        plan.seeds = v.clone();
    }
    if let Some(v) = o.ddim_steps {
        plan.ddim_steps = v;
    }
    if let Some(v) = o.power_watts {
        plan.power_watts = Some(v);
    }
    if let Some(v) = o.target_fa {
        plan.target_fa = v;
    }
    if let Some(v) = o.max_trials {
        plan.max_trials = Some(v);
    }
    if let Some(v) = &o.data_dir {
        plan.data = DataSource::Bundles { dir: v.clone() };
    }
    if let Some(v) = o.epochs {
        for t in [&mut plan.train.gdm, &mut plan.train.vae, &mut plan.train.recurrent] {
            t.epochs = v;
        }
    }
    if let Verb::Sweep { no_train, latency } = &cli.verb {
        if *no_train {
            plan.train.enabled = false;
        }
        if *latency {
            plan.latency.enabled = true;
        }
    }
    plan.validate()?;
    Ok(plan)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let plan = load_plan(&cli)?;
    let device = Device::Cpu;
    match cli.verb {
        Verb::GenData { out, seed } => {
            let data = prepare_data(&plan.data, seed)?;
            std::fs::create_dir_all(&out)?;
            for (name, bundle) in BUNDLE_FILES.iter().zip([&data.train, &data.val, &data.test]) {
                save_bundle(bundle, &out.join(name))?;
            }
            println!("wrote {} / {} / {} pairs to {}", data.train.len(), data.val.len(), data.test.len(), out.display());
        }
        Verb::Train { scheme, out, seed } => {
            let data = prepare_data(&plan.data, seed)?;
            let cfg = scheme_config(&plan, scheme, &data, seed)?;
            let ckpt = train_scheme(&cfg, &data.train, &device)?;
            let path = out.unwrap_or_else(|| plan.output_dir.join(format!("{scheme}-seed{seed}.json")));
            ckpt.save(&path)?;
            if let Some(last) = ckpt.training_log.last() {
                println!("final loss {:.6} after {} epochs", last.loss, last.epoch + 1);
            }
            println!("checkpoint {} ({})", path.display(), ckpt.content_hash()?);
        }
        Verb::Eval { checkpoint, seed } => {
            let ckpt = PredictorCheckpoint::load(&checkpoint)?;
            let predictor = build_predictor(&ckpt, plan.ddim_steps, &device)?;
            let data = prepare_data(&plan.data, seed)?;
            let mut reports: Vec<MetricsReport> = Vec::new();
            for snr in plan.canonical_snrs() {
                let cell = ObservedCell::new(&data, predictor.context_len(), snr, seed, plan.max_trials)?;
                let (th, verdicts, _) = evaluate_cell(&plan, predictor.as_ref(), &cell)?;
                reports.push(MetricsReport::from_verdicts(&verdicts, snr, th.tau, plan.roc_points)?);
            }
            print_json(&reports)?;
        }
        Verb::Sweep { .. } => {
            let rows = run_sweep(&plan, &device)?;
            println!("{} cells; report in {}", rows.len(), plan.output_dir.display());
        }
        Verb::Latency { checkpoint, warmup, trials, seed } => {
            let ckpt = PredictorCheckpoint::load(&checkpoint)?;
            let predictor = build_predictor(&ckpt, plan.ddim_steps, &device)?;
            let data = prepare_data(&plan.data, seed)?;
            let snr = plan.canonical_snrs()[0];
            let cell = ObservedCell::new(&data, predictor.context_len(), snr, seed, plan.max_trials)?;
            let (th, _, _) = evaluate_cell(&plan, predictor.as_ref(), &cell)?;
            let w = predictor.context_len();
            let stats = measure_latency(predictor.as_ref(), cell.histories(w, false)[0], &cell.alice_test[0], &th, warmup, trials)?;
            let energy = plan
                .power_watts
                .map(|p| estimate_energy(p, stats.median_ms / 1e3))
                .transpose()?;
            print_json(&serde_json::json!({
                "scheme": ckpt.kind,
                "ddim_steps": plan.ddim_steps,
                "latency": stats,
                "iqr_ms": stats.iqr_ms(),
                "energy_j": energy,
            }))?;
        }
        Verb::Report { dir } => {
            let dir = dir.unwrap_or(plan.output_dir.clone());
            let rows = regenerate_report(&dir)?;
            if rows.is_empty() {
                return Err(PlaError::Data("no rows".into()));
            }
            println!("re-emitted {} rows in {}", rows.len(), dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
