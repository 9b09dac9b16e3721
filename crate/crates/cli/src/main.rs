//! `v2xsim`: run scenarios, train and evaluate predictors, sweep and plot.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use v2x_core::experiment::{self, load_models, read_weight_file, replicate, summarize, write_cell_csv};
use v2x_core::metrics::{
    pooled_mean, read_prr_csv, write_records, CBR_HEADER, MOBILITY_HEADER, PREDICTION_ERROR_HEADER, SCHEDULING_HEADER,
};
use v2x_core::predictor::{Models, PredictorKind};
use v2x_core::training::{evaluate, train_all, TrainingConfig};
use v2x_core::{packet_log, plot, LearningMode, RunOptions, ScenarioConfig};

#[derive(Parser)]
#[command(name = "v2xsim", version, about = "Learning-assisted V2X channel access simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the replications of one scenario and write its PRR table.
    Simulate {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Overrides the configured number of runs.
        #[arg(long)]
        runs: Option<usize>,
        /// Overrides the configured learning mode.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<LearningMode>,
        /// Overrides the simulated duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Overrides the configured weight file.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Packet log of the first run (input for `train`).
        #[arg(long)]
        packet_log: Option<PathBuf>,
        /// Per-node CBR series of the first run.
        #[arg(long)]
        cbr: Option<PathBuf>,
        /// Mobility trace of the first run.
        #[arg(long)]
        mobility: Option<PathBuf>,
        /// Learning-node scheduling decisions of the first run.
        #[arg(long)]
        scheduling: Option<PathBuf>,
        /// Learning-node prediction errors of the first run.
        #[arg(long)]
        prediction_errors: Option<PathBuf>,
    },
    /// Train the per-type interval networks on a packet log.
    Train {
        packet_log: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Optional TOML file with training hyper-parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Replay a packet log through a trained predictor and write the errors.
    EvalPredictor {
        weights: PathBuf,
        packet_log: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Use last-interval persistence instead of the networks.
        #[arg(long)]
        baseline: bool,
    },
    /// Run every scenario of a directory under every learning mode.
    Sweep {
        config_dir: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Render PRR-versus-distance curves of one or more PRR tables.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        title: Option<String>,
    },
}

fn parse_mode(s: &str) -> Result<LearningMode, String> {
    LearningMode::parse(s).ok_or_else(|| {
        let names: Vec<_> = LearningMode::ALL.iter().map(|m| m.as_str()).collect();
        format!("unknown mode '{s}', expected one of {}", names.join(", "))
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn seed_override() -> Option<String> {
    std::env::var("SEED").ok()
}

/// Command-line overrides of a scenario file.
struct Overrides {
    runs: Option<usize>,
    mode: Option<LearningMode>,
    duration: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    config: &Path,
    output: &Path,
    over: Overrides,
    weights: Option<PathBuf>,
    packet_log_out: Option<PathBuf>,
    cbr: Option<PathBuf>,
    mobility: Option<PathBuf>,
    scheduling: Option<PathBuf>,
    prediction_errors: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = ScenarioConfig::load(config)?;
    cfg.apply_seed_override(seed_override().as_deref())?;
    if let Some(r) = over.runs {
        cfg.runs = r;
    }
    if let Some(m) = over.mode {
        cfg.mode = m;
    }
    if let Some(d) = over.duration {
        cfg.duration_s = d;
    }
    cfg.validate()?;
    if weights.is_some() {
        cfg.weight_file = weights;
    }
    let models = load_models(&cfg)?;
    let first = RunOptions {
        packet_log: packet_log_out.is_some(),
        cbr_series: cbr.is_some(),
        mobility_trace: mobility.is_some(),
    };
    let mut results = replicate(&cfg, 1, cfg.seed, models.clone(), first)?;
    if cfg.runs > 1 {
        results.extend(replicate(&cfg, cfg.runs - 1, cfg.seed + 1, models, RunOptions::default())?);
    }

    let r0 = &results[0];
    if let Some(p) = &packet_log_out {
        packet_log::write(create(p)?, &r0.packet_log)?;
    }
    if let Some(p) = &cbr {
        write_records(create(p)?, &CBR_HEADER, &r0.cbr_series)?;
    }
    if let Some(p) = &mobility {
        write_records(create(p)?, &MOBILITY_HEADER, &r0.mobility_trace)?;
    }
    if let Some(p) = &scheduling {
        write_records(create(p)?, &SCHEDULING_HEADER, &r0.scheduling)?;
    }
    if let Some(p) = &prediction_errors {
        write_records(create(p)?, &PREDICTION_ERROR_HEADER, &r0.prediction_errors)?;
    }

    let hists: Vec<_> = results.iter().map(|r| &r.prr).collect();
    let at_200 = pooled_mean(&hists, 175.0, 225.0);
    let cell = summarize(&cfg.name, cfg.mode, results);
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_cell_csv(output, &cell)?;
    print!("{} {}: {} runs, mean CBR {:.2} %", cell.scenario, cell.mode, cell.runs.len(), 100.0 * cell.mean_cbr);
    match at_200 {
        Some(m) => println!(", PRR 175-225 m {:.3}{}", m.mean, m.ci95.map_or(String::new(), |c| format!(" ± {c:.3}"))),
        None => println!(),
    }
    Ok(())
}

fn train(log: &Path, output: &Path, config: Option<&Path>, epochs: Option<usize>, seed: Option<u64>) -> Result<()> {
    let mut tc = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<TrainingConfig>(&text).map_err(|e| anyhow::anyhow!("{}: {}", p.display(), e))?
        }
        None => TrainingConfig::default(),
    };
    if let Some(e) = epochs {
        tc.epochs = e;
    }
    if let Some(s) = seed {
        tc.seed = s;
    }
    let records = packet_log::read(open(log)?).with_context(|| format!("reading {}", log.display()))?;
    let (file, reports) = train_all(&records, &ScenarioConfig::default().mobility, &tc)?;
    file.write_to(create(output)?)?;
    for r in reports {
        match r.epoch_losses.last() {
            Some(l) => println!("{}: {} sequences, {} steps, final loss {l:.5}", r.kind.name(), r.sequences, r.steps),
            None => println!("{}: no data, left untrained", r.kind.name()),
        }
    }
    Ok(())
}

fn eval_predictor(weights: &Path, log: &Path, output: &Path, baseline: bool) -> Result<()> {
    let models = Models::from_weight_file(&read_weight_file(weights)?)?;
    let records = packet_log::read(open(log)?).with_context(|| format!("reading {}", log.display()))?;
    let kind = if baseline { PredictorKind::Baseline } else { PredictorKind::Lstm };
    let defaults = ScenarioConfig::default();
    let errors = evaluate(&records, &models, kind, &defaults.mobility, defaults.predictor.min_interval_ms / 1e3)?;
    write_records(create(output)?, &PREDICTION_ERROR_HEADER, &errors)?;
    if errors.is_empty() {
        println!("no predictions (each sender needs at least three packets of a type)");
    } else {
        let mut abs: Vec<f64> = errors.iter().map(|e| e.abs_error_ms).collect();
        abs.sort_by(f64::total_cmp);
        let mean = abs.iter().sum::<f64>() / abs.len() as f64;
        println!("{} predictions, mean |error| {mean:.3} ms, median {:.3} ms", abs.len(), abs[abs.len() / 2]);
    }
    Ok(())
}

fn sweep(config_dir: &Path, output: &Path) -> Result<()> {
    let written = experiment::sweep(config_dir, output, seed_override().as_deref())?;
    println!("wrote {} PRR tables and channel_load.csv to {}", written.len(), output.display());
    Ok(())
}

fn plot_cmd(csvs: &[PathBuf], output: &Path, title: Option<String>) -> Result<()> {
    let mut rows = Vec::new();
    for p in csvs {
        rows.extend(read_prr_csv(open(p)?).with_context(|| format!("reading {}", p.display()))?);
    }
    if rows.is_empty() {
        bail!("no PRR rows in the given files");
    }
    let title = title.unwrap_or_else(|| rows[0].scenario.clone());
    std::fs::write(output, plot::render_prr_svg(&rows, &title))
        .with_context(|| format!("writing {}", output.display()))?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            output,
            runs,
            mode,
            duration,
            weights,
            packet_log,
            cbr,
            mobility,
            scheduling,
            prediction_errors,
        } => {
            let over = Overrides { runs, mode, duration };
            simulate(&config, &output, over, weights, packet_log, cbr, mobility, scheduling, prediction_errors)
        }
        Command::Train { packet_log, output, config, epochs, seed } => {
            train(&packet_log, &output, config.as_deref(), epochs, seed)
        }
        Command::EvalPredictor { weights, packet_log, output, baseline } => {
            eval_predictor(&weights, &packet_log, &output, baseline)
        }
        Command::Sweep { config_dir, output } => sweep(&config_dir, &output),
        Command::Plot { csv, output, title } => plot_cmd(&csv, &output, title),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
