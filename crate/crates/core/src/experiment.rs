//! Replications and scenario × mode sweeps.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use v2x_nn::WeightFile;

use crate::config::{ConfigError, ScenarioConfig};
use crate::metrics::{aggregate, mean_ci, write_prr_csv, PrrRow};
use crate::predictor::{Models, PredictorError};
use crate::scheduler::LearningMode;
use crate::world::{self, RunMetrics, RunOptions, WorldError};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("run {run} (seed {seed}) failed: {source}")]
    Run { run: usize, seed: u64, source: WorldError },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("weight file {path}: {source}")]
    Weights { path: PathBuf, source: v2x_nn::NnError },
    #[error("weight file {path}: {source}")]
    Models { path: PathBuf, source: PredictorError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("no scenario files (*.toml) in {0}")]
    EmptySweep(PathBuf),
}

/// Runs `n_runs` replications with seeds `base_seed + i`, possibly in
/// parallel; results are in run order.
pub fn replicate(
    cfg: &ScenarioConfig,
    n_runs: usize,
    base_seed: u64,
    models: Option<Arc<Models>>,
    opts: RunOptions,
) -> Result<Vec<RunMetrics>, ExperimentError> {
    let results: Vec<Result<RunMetrics, WorldError>> =
        (0..n_runs).into_par_iter().map(|i| world::run(cfg, base_seed + i as u64, models.clone(), opts)).collect();
    results
        .into_iter()
        .enumerate()
        .map(|(run, r)| r.map_err(|source| ExperimentError::Run { run, seed: base_seed + run as u64, source }))
        .collect()
}

pub fn read_weight_file(path: &Path) -> Result<WeightFile, ExperimentError> {
    let f = File::open(path).map_err(|source| ExperimentError::Io { path: path.into(), source })?;
    WeightFile::read_from(std::io::BufReader::new(f))
        .map_err(|source| ExperimentError::Weights { path: path.into(), source })
}

/// Loads the predictor a configuration asks for: `None` when the mode needs
/// no trained weights.
pub fn load_models(cfg: &ScenarioConfig) -> Result<Option<Arc<Models>>, ExperimentError> {
    if !cfg.needs_weights() {
        return Ok(None);
    }
    let Some(path) = &cfg.weight_file else {
        return Err(ExperimentError::Run { run: 0, seed: cfg.seed, source: WorldError::MissingWeights(cfg.mode) });
    };
    let file = read_weight_file(path)?;
    let models =
        Models::from_weight_file(&file).map_err(|source| ExperimentError::Models { path: path.clone(), source })?;
    Ok(Some(Arc::new(models)))
}

/// Everything a cell of a sweep reports.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub scenario: String,
    pub mode: LearningMode,
    pub rows: Vec<PrrRow>,
    pub mean_cbr: f64,
    pub runs: Vec<RunMetrics>,
}

pub fn summarize(scenario: &str, mode: LearningMode, runs: Vec<RunMetrics>) -> CellSummary {
    let hists: Vec<_> = runs.iter().map(|r| &r.prr).collect();
    let rows = aggregate(&hists);
    let cbrs: Vec<f64> = runs.iter().map(|r| r.mean_cbr).collect();
    let mean_cbr = mean_ci(&cbrs).map_or(0.0, |m| m.mean);
    CellSummary { scenario: scenario.into(), mode, rows, mean_cbr, runs }
}

pub fn write_cell_csv(path: &Path, cell: &CellSummary) -> Result<(), ExperimentError> {
    let f = File::create(path).map_err(|source| ExperimentError::Io { path: path.into(), source })?;
    write_prr_csv(BufWriter::new(f), &cell.scenario, cell.mode.as_str(), &cell.rows)
        .map_err(|source| ExperimentError::Csv { path: path.into(), source })
}

/// Scenario files of a directory in name order.
pub fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let rd = std::fs::read_dir(dir).map_err(|source| ExperimentError::Io { path: dir.into(), source })?;
    let mut files = Vec::new();
    for entry in rd {
        let p = entry.map_err(|source| ExperimentError::Io { path: dir.into(), source })?.path();
        if p.extension().is_some_and(|e| e == "toml") {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(ExperimentError::EmptySweep(dir.into()));
    }
    Ok(files)
}

/// Runs every scenario of `config_dir` under every learning mode and writes
/// one PRR CSV per cell (`<scenario>_<mode>.csv`) plus `channel_load.csv`.
/// Returns the written PRR files in order.
pub fn sweep(config_dir: &Path, out_dir: &Path, seed_override: Option<&str>) -> Result<Vec<PathBuf>, ExperimentError> {
    let files = scenario_files(config_dir)?;
    std::fs::create_dir_all(out_dir).map_err(|source| ExperimentError::Io { path: out_dir.into(), source })?;
    let mut written = Vec::new();
    let mut loads = Vec::new();
    for file in files {
        let mut base = ScenarioConfig::load(&file)?;
        base.apply_seed_override(seed_override)?;
        for mode in LearningMode::ALL {
            let mut cfg = base.clone();
            cfg.mode = mode;
            let models = load_models(&cfg)?;
            let runs = replicate(&cfg, cfg.runs, cfg.seed, models, RunOptions::default())?;
            let cell = summarize(&cfg.name, mode, runs);
            let path = out_dir.join(format!("{}_{}.csv", cfg.name, mode.as_str()));
            write_cell_csv(&path, &cell)?;
            loads.push((cell.scenario.clone(), mode, cell.mean_cbr, cell.runs.len()));
            written.push(path);
        }
    }
    let path = out_dir.join("channel_load.csv");
    let write = || -> csv::Result<()> {
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["scenario", "mode", "mean_cbr", "n_runs"])?;
        for (s, m, c, n) in &loads {
            w.write_record([s.clone(), m.as_str().to_string(), format!("{c:.6}"), n.to_string()])?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|source| ExperimentError::Csv { path: path.clone(), source })?;
    Ok(written)
}
