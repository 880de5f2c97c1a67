//! Experiment configuration: grids, run counts, seeds, and the key=value
//! config-file format the CLI layers flags on top of.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::{read_lines, CsvOptions, DatasetRef};
use crate::error::{Error, Result};
use crate::eval::ExtractionMethod;
use crate::factorize::Variant;

/// Hyperparameter grid shared by the α, β, and λ axes in the reference
/// protocol.
pub const DEFAULT_VALUE_GRID: [f64; 7] = [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0];

/// Neighbor counts swept by the sensitivity study.
pub const DEFAULT_NEIGHBOR_SWEEP: [usize; 7] = [3, 5, 7, 9, 11, 13, 15];

/// Environment variable overriding the worker-thread count.
pub const WORKERS_ENV: &str = "CFSRAG_WORKERS";

/// How many runner threads to use. The choice never affects results, only
/// wall time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkerCount {
    /// `CFSRAG_WORKERS` if set, otherwise the machine's parallelism.
    Auto,
    Fixed(usize),
}

impl WorkerCount {
    pub fn resolve(&self) -> usize {
        match self {
            WorkerCount::Fixed(n) => (*n).max(1),
            WorkerCount::Auto => {
                if let Ok(raw) = std::env::var(WORKERS_ENV) {
                    if let Ok(n) = raw.trim().parse::<usize>() {
                        if n >= 1 {
                            return n;
                        }
                    }
                }
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            }
        }
    }
}

/// Full description of a benchmark, ablation, or sweep experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetRef,
    pub variants: Vec<Variant>,
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub neighbor_grid: Vec<usize>,
    /// Target cluster count; `None` uses the dataset's class count.
    pub clusters: Option<usize>,
    pub runs: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub extraction: ExtractionMethod,
    pub restarts: usize,
    pub scale_features: bool,
    pub workers: WorkerCount,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetRef) -> ExperimentConfig {
        ExperimentConfig {
            dataset,
            variants: Variant::ALL.to_vec(),
            alpha_grid: DEFAULT_VALUE_GRID.to_vec(),
            beta_grid: DEFAULT_VALUE_GRID.to_vec(),
            lambda_grid: DEFAULT_VALUE_GRID.to_vec(),
            neighbor_grid: vec![5],
            clusters: None,
            runs: 10,
            seed: 0,
            max_iter: 200,
            rel_tol: 1e-6,
            extraction: ExtractionMethod::KMeansOnV,
            restarts: 10,
            scale_features: false,
            workers: WorkerCount::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::Config("no variants selected".into()));
        }
        for (i, v) in self.variants.iter().enumerate() {
            if self.variants[..i].contains(v) {
                return Err(Error::Config(format!("variant '{v}' listed twice")));
            }
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        for (name, grid) in [
            ("alpha", &self.alpha_grid),
            ("beta", &self.beta_grid),
            ("lambda", &self.lambda_grid),
        ] {
            if grid.is_empty() {
                return Err(Error::Config(format!("{name} grid is empty")));
            }
            for &v in grid {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Config(format!(
                        "{name} grid value {v} is not a finite nonnegative number"
                    )));
                }
            }
        }
        if self.alpha_grid.iter().any(|&a| a == 0.0) {
            return Err(Error::Config("alpha grid values must be positive".into()));
        }
        if self.neighbor_grid.is_empty() {
            return Err(Error::Config("neighbor grid is empty".into()));
        }
        if self.neighbor_grid.iter().any(|&p| p == 0) {
            return Err(Error::Config("neighbor counts must be at least 1".into()));
        }
        if self.clusters == Some(0) {
            return Err(Error::Config("clusters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config(format!(
                "tol must be > 0, got {}",
                self.rel_tol
            )));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` setting. Both the config file and the CLI
    /// flags funnel through here so they accept identical spellings.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let bad = |what: &str| Error::Config(format!("{key}: {what}: '{value}'"));
        match key.as_str() {
            "dataset" => {
                let options = match &self.dataset {
                    DatasetRef::Csv { options, .. } => options.clone(),
                    _ => CsvOptions::default(),
                };
                self.dataset = DatasetRef::parse(value, &options)?;
            }
            "variant" | "variants" => {
                self.variants = value
                    .split(',')
                    .map(|s| Variant::parse(s.trim()))
                    .collect::<Result<Vec<_>>>()?;
            }
            "alpha" => self.alpha_grid = parse_f64_list(value)?,
            "beta" => self.beta_grid = parse_f64_list(value)?,
            "lambda" => self.lambda_grid = parse_f64_list(value)?,
            "neighbors" => self.neighbor_grid = parse_usize_list(value)?,
            "clusters" => {
                self.clusters = Some(value.parse().map_err(|_| bad("expected an integer"))?)
            }
            "runs" => self.runs = value.parse().map_err(|_| bad("expected an integer"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("expected an integer"))?,
            "max-iter" => self.max_iter = value.parse().map_err(|_| bad("expected an integer"))?,
            "tol" => self.rel_tol = value.parse().map_err(|_| bad("expected a number"))?,
            "extract" => self.extraction = ExtractionMethod::parse(value)?,
            "restarts" => self.restarts = value.parse().map_err(|_| bad("expected an integer"))?,
            "scale-features" => self.scale_features = parse_bool(value).ok_or_else(|| bad("expected true or false"))?,
            "workers" => {
                self.workers = if value == "auto" {
                    WorkerCount::Auto
                } else {
                    WorkerCount::Fixed(value.parse().map_err(|_| bad("expected an integer or 'auto'"))?)
                }
            }
            other => {
                return Err(Error::Config(format!("unknown setting '{other}'")));
            }
        }
        Ok(())
    }
}

pub(crate) fn parse_bool(value: &str) -> Option<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

/// Comma-separated floats: `0.001,0.01,0.1,1,10,100,1000`.
pub fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|piece| {
            piece
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("'{piece}' is not a number")))
        })
        .collect()
}

/// Comma-separated nonnegative integers: `3,5,7`.
pub fn parse_usize_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|piece| {
            piece
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("'{piece}' is not an integer")))
        })
        .collect()
}

/// Reads a `key = value` file. `#` starts a comment; blank lines are skipped.
/// Returns the pairs in file order so later settings override earlier ones.
pub fn parse_config_file(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let mut pairs = Vec::new();
    for (lineno, raw) in read_lines(path)?.into_iter().enumerate() {
        let line = match raw.split_once('#') {
            Some((before, _)) => before,
            None => raw.as_str(),
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "{}:{}: expected 'key = value', got '{line}'",
                path.display(),
                lineno + 1
            ))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}
