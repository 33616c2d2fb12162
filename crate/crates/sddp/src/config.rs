//! Run configuration: a small sectioned key=value format and the typed
//! `RunConfig` that turns it into model instances and engine settings.
//!
//! Format example:
//!
//! ```text
//! [model]
//! experiment = market
//! copies = 1
//! mode = conditional
//! sigma = 0.94
//!
//! [engine]
//! backward_samples = 10000
//! splits = 10
//!
//! [output]
//! dir = runs/market
//! seed = 42
//! ```
//!
//! Unknown keys are rejected so typos fail loudly; every key has a
//! default carrying the reference experiment constants.

use crate::engine::SddpConfig;
use crate::model::{
    build_combined_storage, build_demand_storage, build_market_storage, Mode, ModelError,
    ModelInstance, StorageParams,
};
use crate::scenario::{AR1DemandModel, OneFactorPriceModel, TimeGrid};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("config key [{section}] {key}: {message}")]
    Value { section: String, key: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn parse_err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Parse { line, message: message.into() }
}

/// Raw sectioned key=value text.
#[derive(Debug, Default)]
pub struct RawConfig {
    sections: HashMap<String, HashMap<String, String>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: HashMap<String, HashMap<String, String>> = HashMap::new();
        let mut current = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
                continue;
            }
            if let Some(name) = s.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| parse_err(line, "unterminated section header"))?
                    .trim();
                if name.is_empty() {
                    return Err(parse_err(line, "empty section name"));
                }
                current = name.to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| parse_err(line, format!("expected key = value, got {s:?}")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(parse_err(line, "empty key"));
            }
            if current.is_empty() {
                return Err(parse_err(line, format!("key {key:?} before any [section]")));
            }
            let prev = sections
                .get_mut(&current)
                .unwrap()
                .insert(key.to_string(), value.trim().to_string());
            if prev.is_some() {
                return Err(parse_err(line, format!("duplicate key {key:?} in [{current}]")));
            }
        }
        Ok(RawConfig { sections })
    }

    fn take(&mut self, section: &str, key: &str) -> Option<String> {
        self.sections.get_mut(section).and_then(|m| m.remove(key))
    }

    /// Error on anything that was never consumed.
    fn finish(self) -> Result<(), ConfigError> {
        for (section, keys) in &self.sections {
            if let Some(key) = keys.keys().next() {
                return Err(ConfigError::Value {
                    section: section.clone(),
                    key: key.clone(),
                    message: "unknown key".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Market,
    Demand,
    Combined,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Market => "market",
            Experiment::Demand => "demand",
            Experiment::Combined => "combined",
        }
    }
}

/// Fully typed run description; defaults are the reference constants.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub copies: usize,
    pub mode: Mode,
    pub horizon: f64,
    pub stages: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub sigma_d: f64,
    pub storage: StorageParams,
    pub injection_cost: f64,
    pub engine: SddpConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: Experiment::Market,
            copies: 1,
            mode: Mode::Conditional,
            horizon: 1.0,
            stages: 52,
            sigma: 0.94,
            alpha: 0.29,
            kappa: 0.9,
            sigma_d: 1000.0,
            storage: StorageParams::benchmark_default(),
            injection_cost: 0.1,
            engine: SddpConfig::default(),
            out_dir: PathBuf::from("out"),
            seed: 42,
        }
    }
}

fn value_err(section: &str, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        section: section.to_string(),
        key: key.to_string(),
        message: message.into(),
    }
}

fn take_parsed<T: std::str::FromStr>(
    raw: &mut RawConfig,
    section: &str,
    key: &str,
    slot: &mut T,
) -> Result<(), ConfigError> {
    if let Some(text) = raw.take(section, key) {
        *slot = text
            .parse()
            .map_err(|_| value_err(section, key, format!("cannot parse {text:?}")))?;
    }
    Ok(())
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::parse(text)?;
        let mut cfg = RunConfig::default();

        if let Some(v) = raw.take("model", "experiment") {
            cfg.experiment = match v.as_str() {
                "market" => Experiment::Market,
                "demand" => Experiment::Demand,
                "combined" => Experiment::Combined,
                other => {
                    return Err(value_err(
                        "model",
                        "experiment",
                        format!("expected market|demand|combined, got {other:?}"),
                    ))
                }
            };
        }
        if let Some(v) = raw.take("model", "mode") {
            cfg.mode = match v.as_str() {
                "conditional" => Mode::Conditional,
                "augmented" => Mode::Augmented,
                other => {
                    return Err(value_err(
                        "model",
                        "mode",
                        format!("expected conditional|augmented, got {other:?}"),
                    ))
                }
            };
        }
        take_parsed(&mut raw, "model", "copies", &mut cfg.copies)?;
        take_parsed(&mut raw, "model", "horizon", &mut cfg.horizon)?;
        take_parsed(&mut raw, "model", "stages", &mut cfg.stages)?;
        take_parsed(&mut raw, "model", "sigma", &mut cfg.sigma)?;
        take_parsed(&mut raw, "model", "alpha", &mut cfg.alpha)?;
        take_parsed(&mut raw, "model", "kappa", &mut cfg.kappa)?;
        take_parsed(&mut raw, "model", "sigma_d", &mut cfg.sigma_d)?;
        take_parsed(&mut raw, "model", "c_max", &mut cfg.storage.c_max)?;
        take_parsed(&mut raw, "model", "a_in", &mut cfg.storage.a_in)?;
        take_parsed(&mut raw, "model", "a_out", &mut cfg.storage.a_out)?;
        take_parsed(&mut raw, "model", "injection_cost", &mut cfg.injection_cost)?;

        take_parsed(&mut raw, "engine", "backward_samples", &mut cfg.engine.backward_samples)?;
        take_parsed(&mut raw, "engine", "forward_samples", &mut cfg.engine.forward_samples)?;
        take_parsed(&mut raw, "engine", "eval_samples", &mut cfg.engine.eval_samples)?;
        take_parsed(&mut raw, "engine", "eval_period", &mut cfg.engine.eval_period)?;
        take_parsed(&mut raw, "engine", "rel_gap", &mut cfg.engine.rel_gap)?;
        take_parsed(&mut raw, "engine", "confidence_z", &mut cfg.engine.confidence_z)?;
        take_parsed(&mut raw, "engine", "max_iterations", &mut cfg.engine.max_iterations)?;
        if let Some(v) = raw.take("engine", "splits") {
            let parsed: Result<Vec<usize>, _> =
                v.split(',').map(|p| p.trim().parse::<usize>()).collect();
            cfg.engine.splits = parsed.map_err(|_| {
                value_err("engine", "splits", format!("expected comma-separated counts, got {v:?}"))
            })?;
        }

        if let Some(v) = raw.take("output", "dir") {
            cfg.out_dir = PathBuf::from(v);
        }
        take_parsed(&mut raw, "output", "seed", &mut cfg.seed)?;
        raw.finish()?;

        cfg.engine.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        RunConfig::from_str(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.copies == 0 {
            return Err(value_err("model", "copies", "must be >= 1"));
        }
        if self.stages == 0 {
            return Err(value_err("model", "stages", "must be >= 1"));
        }
        if self.mode == Mode::Augmented && self.experiment != Experiment::Demand {
            return Err(value_err(
                "model",
                "mode",
                format!(
                    "augmented mode needs uncertainty in the constraints only; \
                     the {} experiment has price in the objective",
                    self.experiment.name()
                ),
            ));
        }
        let expected_dim = if self.experiment == Experiment::Combined { 2 } else { 1 };
        if self.mode == Mode::Conditional && self.engine.splits.len() != expected_dim {
            return Err(value_err(
                "engine",
                "splits",
                format!(
                    "{} split counts for the {}-dimensional {} experiment",
                    self.engine.splits.len(),
                    expected_dim,
                    self.experiment.name()
                ),
            ));
        }
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid, ConfigError> {
        TimeGrid::new(self.horizon, self.stages).map_err(|e| {
            value_err("model", "horizon", e.to_string())
        })
    }

    fn price_model(&self, grid: &TimeGrid) -> Result<OneFactorPriceModel, ConfigError> {
        let curve = (0..grid.num_dates())
            .map(|i| crate::scenario::forward_curve(i, grid.stages))
            .collect();
        OneFactorPriceModel::new(self.sigma, self.alpha, curve)
            .map_err(|e| value_err("model", "sigma", e.to_string()))
    }

    fn demand_model(&self, grid: &TimeGrid) -> Result<AR1DemandModel, ConfigError> {
        let scale = self.copies as f64;
        let curve = (0..grid.num_dates())
            .map(|i| scale * crate::scenario::demand_mean_curve(i, grid.stages))
            .collect();
        AR1DemandModel::new(self.kappa, scale * self.sigma_d, curve)
            .map_err(|e| value_err("model", "kappa", e.to_string()))
    }

    /// Instantiate the configured experiment.
    pub fn build_model(&self) -> Result<ModelInstance, ConfigError> {
        let grid = self.time_grid()?;
        let model = match self.experiment {
            Experiment::Market => {
                build_market_storage(self.storage, self.price_model(&grid)?, grid, self.copies)?
            }
            Experiment::Demand => {
                let price_curve = (0..grid.num_dates())
                    .map(|i| crate::scenario::forward_curve(i, grid.stages))
                    .collect();
                build_demand_storage(
                    self.storage,
                    self.injection_cost,
                    self.demand_model(&grid)?,
                    price_curve,
                    grid,
                    self.copies,
                    self.mode,
                )?
            }
            Experiment::Combined => build_combined_storage(
                self.storage,
                self.injection_cost,
                self.price_model(&grid)?,
                self.demand_model(&grid)?,
                grid,
                self.copies,
                self.mode,
            )?,
        };
        Ok(model)
    }
}
