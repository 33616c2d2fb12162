//! Regression dynamic programming oracle for a single market storage.
//!
//! Stock is discretized on a uniform grid, controls are bang-bang
//! (withdraw at rate, idle, inject at rate, clipped to the capacity),
//! and continuation values are conditional expectations of the next
//! stage's value given the current price, fitted per cell of an
//! equal-count price mesh. Costs are signed like the cutting-plane
//! engine: negative values are trading gains.

use crate::model::StorageParams;
use crate::partition::{FitMode, LocalAffineModel, Partition, RegressionError};
use crate::rng;
use crate::scenario::{self, MarkovProcessModel, OneFactorPriceModel, ScenarioSet, TimeGrid};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DpError {
    #[error("invalid oracle parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Regression(#[from] RegressionError),
}

#[derive(Debug, Clone)]
pub struct DpParams {
    /// Stock grid spacing; rates and capacity should be multiples.
    pub stock_step: f64,
    /// Price mesh cells per date.
    pub meshes: usize,
    /// Optimization sample paths.
    pub sample_paths: usize,
    pub seed: u64,
}

impl Default for DpParams {
    fn default() -> Self {
        DpParams { stock_step: 15_000.0, meshes: 6, sample_paths: 20_000, seed: 42 }
    }
}

#[derive(Debug, Clone)]
pub struct StockGrid {
    pub step: f64,
    pub levels: Vec<f64>,
}

impl StockGrid {
    pub fn new(c_max: f64, step: f64) -> Result<Self, DpError> {
        if !(step > 0.0) || !(c_max > 0.0) {
            return Err(DpError::InvalidParameter("grid needs positive step and capacity".into()));
        }
        let count = (c_max / step).round() as usize;
        if (count as f64 * step - c_max).abs() > 1e-6 * c_max {
            return Err(DpError::InvalidParameter(format!(
                "capacity {c_max} is not a multiple of step {step}"
            )));
        }
        Ok(StockGrid { step, levels: (0..=count).map(|i| i as f64 * step).collect() })
    }

    /// Linear interpolation of a per-level table at stock `c`.
    pub fn interpolate(&self, table: &[f64], c: f64) -> f64 {
        let last = self.levels.len() - 1;
        let pos = (c / self.step).clamp(0.0, last as f64);
        let i = (pos.floor() as usize).min(last - 1);
        let w = pos - i as f64;
        (1.0 - w) * table[i] + w * table[i + 1]
    }
}

/// Continuation tables: `cont[t][level]` estimates the expected
/// stage-(t+1) value entering with that stock, conditional on the date-t
/// price. The last date has no continuation.
pub struct DpTables {
    pub grid: StockGrid,
    pub storage: StorageParams,
    pub cont: Vec<Vec<LocalAffineModel>>,
}

pub struct DpResult {
    /// Expected policy value from full stock at date 0.
    pub value: f64,
    pub tables: DpTables,
}

/// Feasible bang-bang candidates at stock `c`.
fn candidates(storage: &StorageParams, c: f64) -> [f64; 3] {
    [-storage.a_out.min(c), 0.0, storage.a_in.min(storage.c_max - c)]
}

fn greedy_value(
    storage: &StorageParams,
    grid: &StockGrid,
    cont_at: &[f64],
    price: f64,
    c: f64,
) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    for u in candidates(storage, c) {
        let v = price * u + grid.interpolate(cont_at, c + u);
        if v < best.0 {
            best = (v, u);
        }
    }
    best
}

/// Backward recursion on sampled price paths. The fitted continuation
/// picks the control; values propagate the realized path outcomes, so
/// the estimate is free of in-sample foresight bias.
pub fn dp_optimize(
    storage: StorageParams,
    price: OneFactorPriceModel,
    time: TimeGrid,
    params: &DpParams,
) -> Result<DpResult, DpError> {
    if params.meshes == 0 || params.sample_paths < params.meshes.max(2) {
        return Err(DpError::InvalidParameter(format!(
            "{} paths cannot support {} mesh cells",
            params.sample_paths, params.meshes
        )));
    }
    let grid = StockGrid::new(storage.c_max, params.stock_step)?;
    let model = MarkovProcessModel::Price(price);
    let set = scenario::simulate(&model, &time, params.sample_paths, params.seed);
    let t_count = time.num_dates();
    let n_levels = grid.levels.len();
    let n_paths = set.samples;

    // values[s][l] holds the stage-(t+1) value during the sweep
    let mut values = vec![vec![0.0; n_levels]; n_paths];
    let mut cont_rev: Vec<Vec<LocalAffineModel>> = Vec::with_capacity(t_count - 1);
    for t in (0..t_count).rev() {
        let cont_t: Option<Vec<LocalAffineModel>> = if t + 1 < t_count {
            // regress the next-stage values on the date-t price
            let points: Vec<f64> = (0..n_paths).map(|s| set.state(s, t)[0]).collect();
            let partition = Arc::new(if t == 0 {
                Partition::single_cell(1, n_paths)
            } else {
                Partition::build(&points, 1, &[params.meshes])?
            });
            let mut models = Vec::with_capacity(n_levels);
            for l in 0..n_levels {
                let responses: Vec<f64> = (0..n_paths).map(|s| values[s][l]).collect();
                models.push(LocalAffineModel::fit(
                    Arc::clone(&partition),
                    &points,
                    &responses,
                    FitMode::Affine,
                ));
            }
            Some(models)
        } else {
            None
        };
        let mut next = vec![vec![0.0; n_levels]; n_paths];
        let mut cont_at = vec![0.0; n_levels];
        for s in 0..n_paths {
            let spot = set.state(s, t)[0];
            for (l, slot) in cont_at.iter_mut().enumerate() {
                *slot = match &cont_t {
                    Some(models) => models[l].evaluate(&[spot]),
                    None => 0.0,
                };
            }
            for l in 0..n_levels {
                let c = grid.levels[l];
                let (_, u) = greedy_value(&storage, &grid, &cont_at, spot, c);
                next[s][l] = spot * u + grid.interpolate(&values[s], c + u);
            }
        }
        values = next;
        if let Some(models) = cont_t {
            cont_rev.push(models);
        }
    }
    cont_rev.reverse();
    let full = n_levels - 1;
    let value = values.iter().map(|row| row[full]).sum::<f64>() / n_paths as f64;
    Ok(DpResult { value, tables: DpTables { grid, storage, cont: cont_rev } })
}

/// Run the greedy policy implied by the tables on fresh paths; returns
/// the realized cost per path.
pub fn dp_simulate(
    tables: &DpTables,
    price: OneFactorPriceModel,
    time: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Vec<f64> {
    let model = MarkovProcessModel::Price(price);
    let set: ScenarioSet =
        scenario::simulate_with_stream(&model, &time, n_paths, seed, rng::stream::DP_SIM);
    let t_count = time.num_dates();
    let n_levels = tables.grid.levels.len();
    let zero = vec![0.0; n_levels];
    (0..n_paths)
        .map(|s| {
            let mut c = tables.storage.c_max;
            let mut cost = 0.0;
            let mut cont_at = vec![0.0; n_levels];
            for t in 0..t_count {
                let spot = set.state(s, t)[0];
                if t < tables.cont.len() {
                    for (l, slot) in cont_at.iter_mut().enumerate() {
                        *slot = tables.cont[t][l].evaluate(&[spot]);
                    }
                } else {
                    cont_at.copy_from_slice(&zero);
                }
                let (_, u) = greedy_value(&tables.storage, &tables.grid, &cont_at, spot, c);
                cost += spot * u;
                c += u;
            }
            cost
        })
        .collect()
}
