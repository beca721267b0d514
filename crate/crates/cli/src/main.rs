use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use arrivalnet::checkpoint::{load_checkpoint, save_checkpoint};
use arrivalnet::data::{load_dataset, save_trips};
use arrivalnet::model::ModelConfig;
use arrivalnet::sample::SequenceSample;
use arrivalnet::sim::{simulate, NetworkParams, Profile, SimParams};
use arrivalnet::train::{
    evaluate, evaluate_persistence, link_delay_export, train, write_link_csv, TrainOptions,
};
use arrivalnet::ArrivalNet64;

/// Multi-step bus and tram arrival-time forecasting.
#[derive(Debug, Parser)]
#[command(name = "arrivalnet", version)]
struct Cli {
    /// Model configuration JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted (where applicable).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic trip dataset (JSONL).
    Simulate(SimulateArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Report arrival-time metrics of a checkpoint on a dataset.
    Evaluate(EvalArgs),
    /// Print delay and arrival forecasts, one JSON line per window.
    Predict(DataArgs),
    /// Show the periods each block selects for one window.
    InspectPeriods(InspectArgs),
    /// Write per-link mean true and predicted link delays (CSV).
    ExportLinkDelays(DataArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 7)]
    days: u32,
    #[arg(long, default_value = "tram")]
    profile: Profile,
    #[arg(long, default_value_t = 4)]
    routes: usize,
    #[arg(long, default_value_t = 30)]
    stops: usize,
    /// Set every negative delay to zero.
    #[arg(long)]
    clip_negative: bool,
    /// Simulation parameter overrides (JSON).
    #[arg(long)]
    sim_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    io: DataArgs,
    /// Also report the last-delay persistence baseline.
    #[arg(long)]
    baseline: bool,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[command(flatten)]
    io: DataArgs,
    /// Window index in the dataset.
    #[arg(long, default_value_t = 0)]
    index: usize,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_model_and_data(args: &DataArgs) -> Result<(ArrivalNet64, Vec<SequenceSample>)> {
    let model: ArrivalNet64 = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let (samples, report) = load_dataset(&args.data, model.config.n_p, model.config.n_f)
        .with_context(|| format!("loading dataset {}", args.data.display()))?;
    if !report.rejected.is_empty() {
        log::warn!("{} malformed lines skipped", report.rejected.len());
    }
    Ok((model, samples))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => {
            let net = NetworkParams {
                profile: a.profile,
                n_routes: a.routes,
                stops_per_route: a.stops,
                ..Default::default()
            };
            let params: SimParams = match &a.sim_config {
                Some(p) => read_json(p)?,
                None => SimParams::default(),
            };
            let sim = simulate(cli.seed, &net, &params, a.days, a.clip_negative)?;
            let Some(out) = &cli.out else {
                bail!("simulate needs --out <path>");
            };
            save_trips(out, &sim.trips)?;
            eprintln!(
                "{} trips from {} logs ({} stops dropped) written to {}",
                sim.trips.len(),
                sim.stats.logs,
                sim.stats.dropped_stops,
                out.display()
            );
        }
        Command::Train(a) => {
            let config: ModelConfig = match &cli.config {
                Some(p) => read_json(p)?,
                None => ModelConfig::default(),
            };
            config.validate()?;
            let defaults = TrainOptions::default();
            let opts = TrainOptions {
                epochs: a.epochs.unwrap_or(defaults.epochs),
                batch_size: a.batch_size.unwrap_or(defaults.batch_size),
                patience: a.patience.unwrap_or(defaults.patience),
            };
            let (samples, report) = load_dataset(&a.data, config.n_p, config.n_f)?;
            eprintln!("{} windows from {} trips", samples.len(), report.trips);
            let outcome = train::<f64>(&config, &samples, cli.seed, &opts)?;
            let Some(out) = &cli.out else {
                bail!("train needs --out <checkpoint>");
            };
            save_checkpoint(&outcome.model, out)?;
            let test: Vec<&SequenceSample> = outcome.test_idx.iter().map(|&i| &samples[i]).collect();
            let metrics = evaluate(&outcome.model, &test)?;
            let summary = json!({
                "checkpoint": out,
                "train_samples": outcome.train_idx.len(),
                "test_samples": outcome.test_idx.len(),
                "best_epoch": outcome.best_epoch,
                "history": outcome.history,
                "test_metrics": {"rmse_s": metrics.rmse, "mae_s": metrics.mae, "mape_pct": metrics.mape},
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Evaluate(a) => {
            let (model, samples) = load_model_and_data(&a.io)?;
            let refs: Vec<&SequenceSample> = samples.iter().collect();
            let report = evaluate(&model, &refs)?;
            report.write_csv(output(&cli.out)?)?;
            if a.baseline {
                let base = evaluate_persistence(&refs)?;
                eprintln!(
                    "persistence baseline: rmse {:.3} s, mae {:.3} s, mape {:.3} %",
                    base.rmse, base.mae, base.mape
                );
            }
        }
        Command::Predict(a) => {
            let (model, samples) = load_model_and_data(&a)?;
            let mut w = output(&cli.out)?;
            for s in &samples {
                let delays = model.forward(s)?.to_f64_vec();
                let arrivals = model.predict_arrivals(s)?.to_f64_vec();
                let line = json!({
                    "route_id": s.route_id,
                    "trip_id": s.trip_id,
                    "first_stop": s.offset,
                    "pred_delays_s": delays,
                    "pred_arrivals_s": arrivals,
                });
                writeln!(w, "{line}")?;
            }
            w.flush()?;
        }
        Command::InspectPeriods(a) => {
            let (model, samples) = load_model_and_data(&a.io)?;
            let Some(s) = samples.get(a.index) else {
                bail!("window {} out of range ({} windows)", a.index, samples.len());
            };
            let periods = model.inspect_periods(s)?;
            let mut w = output(&cli.out)?;
            writeln!(w, "{}", serde_json::to_string_pretty(&periods)?)?;
            w.flush()?;
        }
        Command::ExportLinkDelays(a) => {
            let (model, samples) = load_model_and_data(&a)?;
            let refs: Vec<&SequenceSample> = samples.iter().collect();
            let (rows, skipped) = link_delay_export(&model, &refs)?;
            if skipped > 0 {
                log::warn!("{skipped} windows without a route id skipped");
            }
            let mut w = output(&cli.out)?;
            write_link_csv(&rows, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
