//! Symbolic multistage problem descriptions and builders for the three
//! storage experiment families.
//!
//! A stage template carries the LP data of one decision date as a
//! function of the realized uncertainty: `min c'x` over
//! `A x = b - B s_in` with variable bounds, where `s_in` is the state
//! handed over by the previous stage (stock volumes, plus the lagged
//! demand in augmented mode). Everything is cost-oriented; market gains
//! appear as negative costs.

use crate::scenario::{AR1DemandModel, MarkovProcessModel, OneFactorPriceModel, TimeGrid};
use crate::simplex::LinearProgram;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("augmented mode is unavailable: {0}")]
    AugmentedUnavailable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Conditional cuts on the Markov state; cut coefficients are affine
    /// functions of the conditioning state.
    Conditional,
    /// Classical augmented-state variant: lagged demand joins the state
    /// vector and all cuts are constant.
    Augmented,
}

/// Dense stage LP data. `a` is rows x n row-major, `b_state` rows x
/// state_dim (the B matrix applied to the incoming state).
#[derive(Debug, Clone)]
pub struct StageData {
    pub c: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub b_state: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// How the realized uncertainty patches the base stage data.
#[derive(Debug, Clone)]
enum StageKind {
    /// Spot price multiplies every control in the cost row.
    Market { copies: usize },
    /// Realized demand lands in the balance-row RHS.
    DemandConditional { balance_row: usize },
    /// Lagged demand is part of the state. The stage demand
    /// D_t = drift + kappa D_lag + sigma_d eps is formed in-stage: both
    /// the balance row and the transition row carry `drift + sigma_d eps`
    /// in the RHS, with the kappa weight sitting in the B matrix.
    DemandAugmented {
        balance_row: usize,
        transition_row: usize,
        drift: f64,
        sigma_d: f64,
    },
    /// Two-dimensional uncertainty: spot in the costs, demand in the RHS.
    Combined { copies: usize, balance_row: usize },
}

/// Symbolic stage data as a function of the realized Markov state.
#[derive(Debug, Clone)]
pub struct StageTemplate {
    pub stage: usize,
    pub n: usize,
    pub rows: usize,
    pub state_dim: usize,
    /// Columns of the decision vector that form the outgoing state.
    pub state_cols: Vec<usize>,
    /// Finite lower bound on the cost-to-go entering this stage's
    /// epigraph (the trivial seed cut).
    pub value_lb: f64,
    base: StageData,
    kind: StageKind,
}

impl StageTemplate {
    /// Instantiate the stage LP at an incoming state and realized
    /// uncertainty. With `epigraph` an extra free variable of cost 1 is
    /// appended (column `n`) for the engine's cut rows; cut rows
    /// themselves are appended by the caller.
    pub fn instantiate(
        &self,
        state_in: &[f64],
        xi: &[f64],
        innovation: Option<f64>,
        epigraph: bool,
    ) -> LinearProgram {
        assert_eq!(state_in.len(), self.state_dim, "state dimension mismatch");
        let n_lp = self.n + usize::from(epigraph);
        let mut lp = LinearProgram::new(n_lp);
        lp.c[..self.n].copy_from_slice(&self.base.c);
        lp.lower[..self.n].copy_from_slice(&self.base.lower);
        lp.upper[..self.n].copy_from_slice(&self.base.upper);
        if epigraph {
            lp.c[self.n] = 1.0;
            // r stays free; the seed cut bounds it below
        }
        let mut b = self.base.b.clone();
        match &self.kind {
            StageKind::Market { copies } => {
                for k in 0..*copies {
                    lp.c[2 * k] = xi[0];
                }
            }
            StageKind::DemandConditional { balance_row } => {
                b[*balance_row] = xi[0];
            }
            StageKind::DemandAugmented { balance_row, transition_row, drift, sigma_d } => {
                let rhs = drift + sigma_d * innovation.unwrap_or(0.0);
                b[*balance_row] = rhs;
                b[*transition_row] = rhs;
            }
            StageKind::Combined { copies, balance_row } => {
                lp.c[0] = xi[0];
                let _ = copies;
                b[*balance_row] = xi[1];
            }
        }
        let mut row = vec![0.0; n_lp];
        for i in 0..self.rows {
            row[..self.n].copy_from_slice(&self.base.a[i * self.n..(i + 1) * self.n]);
            if epigraph {
                row[self.n] = 0.0;
            }
            let mut rhs = b[i];
            for (s, &sv) in state_in.iter().enumerate() {
                rhs -= self.b_entry(i, s) * sv;
            }
            lp.add_eq(&row, rhs);
        }
        lp
    }

    #[inline]
    pub fn b_entry(&self, row: usize, state: usize) -> f64 {
        self.base.b_state[row * self.state_dim + state]
    }

    /// Slope of the stage value in the incoming state: `-B' pi`.
    pub fn state_slope(&self, pi: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.state_dim];
        for s in 0..self.state_dim {
            let mut acc = 0.0;
            for i in 0..self.rows {
                acc += self.b_entry(i, s) * pi[i];
            }
            g[s] = -acc;
        }
        g
    }
}

/// A fully specified multistage instance.
pub struct ModelInstance {
    pub grid: TimeGrid,
    /// One template per decision date, t = 0..=N.
    pub templates: Vec<StageTemplate>,
    pub uncertainty: MarkovProcessModel,
    /// State entering stage 0.
    pub initial_state: Vec<f64>,
    pub mode: Mode,
    pub name: String,
}

impl ModelInstance {
    pub fn num_stages(&self) -> usize {
        self.templates.len()
    }

    pub fn state_dim(&self) -> usize {
        self.templates[0].state_dim
    }
}

/// Storage facility constants shared by all experiment families.
#[derive(Debug, Clone, Copy)]
pub struct StorageParams {
    pub c_max: f64,
    pub a_in: f64,
    pub a_out: f64,
}

impl StorageParams {
    /// Benchmark values: C_max = 360000, a_in = 60000, a_out = 45000.
    pub fn benchmark_default() -> Self {
        StorageParams { c_max: 360_000.0, a_in: 60_000.0, a_out: 45_000.0 }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.c_max <= 0.0 || self.a_in <= 0.0 || self.a_out <= 0.0 {
            return Err(ModelError::InvalidParameter(format!(
                "capacities and rates must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Market storage: inject from / withdraw to the market at the stochastic
/// spot price, `copies` identical facilities valued jointly. Stage
/// variables per copy: control u_k in [-a_out, a_in] and next stock
/// C'_k in [0, C_max] with C'_k - u_k = C_k; stage cost sum_k S_i u_k.
pub fn build_market_storage(
    storage: StorageParams,
    price: OneFactorPriceModel,
    grid: TimeGrid,
    copies: usize,
) -> Result<ModelInstance, ModelError> {
    storage.validate()?;
    if copies == 0 {
        return Err(ModelError::InvalidParameter("copies must be >= 1".into()));
    }
    let n = 2 * copies;
    let rows = copies;
    let state_dim = copies;
    let dates = grid.num_dates();

    // price envelope at three factor standard deviations, used for the
    // trivial value bound; exact when sigma = 0
    let env: Vec<f64> = (0..dates)
        .map(|i| {
            let sd = price.sigma * price.factor_variance(grid.time(i)).sqrt();
            price.initial_curve[i] * (3.0 * sd).exp()
        })
        .collect();
    // value_lb[t] bounds Q_{t+1}: stages t+1..N can each earn at most
    // a_out * envelope price per copy
    let mut tail = vec![0.0; dates + 1];
    for t in (0..dates).rev() {
        tail[t] = tail[t + 1] + copies as f64 * storage.a_out * env[t];
    }

    let mut base = StageData {
        c: vec![0.0; n],
        a: vec![0.0; rows * n],
        b: vec![0.0; rows],
        b_state: vec![0.0; rows * state_dim],
        lower: vec![0.0; n],
        upper: vec![0.0; n],
    };
    let mut state_cols = Vec::with_capacity(copies);
    for k in 0..copies {
        base.a[k * n + 2 * k] = -1.0; // -u_k
        base.a[k * n + 2 * k + 1] = 1.0; // +C'_k
        base.b_state[k * state_dim + k] = -1.0; // rhs picks up +C_k
        base.lower[2 * k] = -storage.a_out;
        base.upper[2 * k] = storage.a_in;
        base.lower[2 * k + 1] = 0.0;
        base.upper[2 * k + 1] = storage.c_max;
        state_cols.push(2 * k + 1);
    }

    let templates = (0..dates)
        .map(|t| StageTemplate {
            stage: t,
            n,
            rows,
            state_dim,
            state_cols: state_cols.clone(),
            value_lb: -tail[t + 1],
            base: base.clone(),
            kind: StageKind::Market { copies },
        })
        .collect();

    Ok(ModelInstance {
        grid,
        templates,
        uncertainty: MarkovProcessModel::Price(price),
        initial_state: vec![storage.c_max; copies],
        mode: Mode::Conditional,
        name: format!("market_storage(copies={copies})"),
    })
}

/// Demand-constrained storage: gas is bought at a deterministic price to
/// serve an AR(1) demand, with withdrawal only toward demand. Stage
/// variables: purchase x^b >= 0, then per copy injection x^in_k in
/// [0, a_in], withdrawal x^out_k in [-a_out, 0] and next stock C'_k; the
/// coupling balance is x^b - sum_k (x^in_k + x^out_k) = D_i.
///
/// For `copies = n` replication the caller scales the demand model's mean
/// curve and sigma_d by n (see `AR1DemandModel::benchmark_default`).
pub fn build_demand_storage(
    storage: StorageParams,
    injection_cost: f64,
    demand: AR1DemandModel,
    price_curve: Vec<f64>,
    grid: TimeGrid,
    copies: usize,
    mode: Mode,
) -> Result<ModelInstance, ModelError> {
    storage.validate()?;
    if copies == 0 {
        return Err(ModelError::InvalidParameter("copies must be >= 1".into()));
    }
    if injection_cost < 0.0 {
        return Err(ModelError::InvalidParameter("injection cost must be >= 0".into()));
    }
    if price_curve.len() != grid.num_dates() {
        return Err(ModelError::InvalidParameter(format!(
            "price curve has {} entries for {} dates",
            price_curve.len(),
            grid.num_dates()
        )));
    }
    let augmented = mode == Mode::Augmented;
    // columns: x^b, then per copy (x^in_k, x^out_k, C'_k), then D' if augmented
    let n = 1 + 3 * copies + usize::from(augmented);
    let rows = copies + 1 + usize::from(augmented);
    let state_dim = copies + usize::from(augmented);
    let balance_row = copies;
    let transition_row = copies + 1;

    let mut base = StageData {
        c: vec![0.0; n],
        a: vec![0.0; rows * n],
        b: vec![0.0; rows],
        b_state: vec![0.0; rows * state_dim],
        lower: vec![0.0; n],
        upper: vec![f64::INFINITY; n],
    };
    base.c[0] = 0.0; // patched with the stage price below
    base.a[balance_row * n] = 1.0; // x^b
    let mut state_cols = Vec::with_capacity(state_dim);
    for k in 0..copies {
        let (xin, xout, cnext) = (1 + 3 * k, 2 + 3 * k, 3 + 3 * k);
        base.c[xin] = injection_cost;
        base.lower[xin] = 0.0;
        base.upper[xin] = storage.a_in;
        base.lower[xout] = -storage.a_out;
        base.upper[xout] = 0.0;
        base.lower[cnext] = 0.0;
        base.upper[cnext] = storage.c_max;
        // stock flow: C'_k - x^in_k - x^out_k = C_k
        base.a[k * n + cnext] = 1.0;
        base.a[k * n + xin] = -1.0;
        base.a[k * n + xout] = -1.0;
        base.b_state[k * state_dim + k] = -1.0;
        // balance row
        base.a[balance_row * n + xin] = -1.0;
        base.a[balance_row * n + xout] = -1.0;
        state_cols.push(cnext);
    }
    if augmented {
        let dcol = n - 1;
        base.lower[dcol] = f64::NEG_INFINITY;
        base.upper[dcol] = f64::INFINITY;
        base.a[transition_row * n + dcol] = 1.0;
        // both rows see kappa times the lagged demand through the RHS
        base.b_state[balance_row * state_dim + copies] = -demand.kappa;
        base.b_state[transition_row * state_dim + copies] = -demand.kappa;
        state_cols.push(dcol);
    }

    let dates = grid.num_dates();
    let templates = (0..dates)
        .map(|t| {
            let mut b = base.clone();
            b.c[0] = price_curve[t];
            let kind = if augmented {
                let mean_t = demand.mean_curve[t];
                let mean_prev = if t == 0 { mean_t } else { demand.mean_curve[t - 1] };
                StageKind::DemandAugmented {
                    balance_row,
                    transition_row,
                    drift: mean_t - demand.kappa * mean_prev,
                    // stage 0 demand is the deterministic mean
                    sigma_d: if t == 0 { 0.0 } else { demand.sigma_d },
                }
            } else {
                StageKind::DemandConditional { balance_row }
            };
            StageTemplate {
                stage: t,
                n,
                rows,
                state_dim,
                state_cols: state_cols.clone(),
                value_lb: 0.0, // all stage costs are nonnegative
                base: b,
                kind,
            }
        })
        .collect();

    let mut initial_state = vec![storage.c_max; copies];
    if augmented {
        initial_state.push(demand.mean_curve[0]); // lagged seed, yields D_0 = mean
    }
    Ok(ModelInstance {
        grid,
        templates,
        uncertainty: MarkovProcessModel::Demand(demand),
        initial_state,
        mode,
        name: format!("demand_storage(copies={copies})"),
    })
}

/// Demand-constrained storage with a stochastic purchase price:
/// two-dimensional uncertainty (S_i, D_i). Price uncertainty sits in the
/// cost row, so the augmented-state formulation would be bilinear; the
/// mode is forced to conditional.
pub fn build_combined_storage(
    storage: StorageParams,
    injection_cost: f64,
    price: OneFactorPriceModel,
    demand: AR1DemandModel,
    grid: TimeGrid,
    copies: usize,
    mode: Mode,
) -> Result<ModelInstance, ModelError> {
    if mode == Mode::Augmented {
        return Err(ModelError::AugmentedUnavailable(
            "price uncertainty multiplies decision variables; adding it to the state \
             would make the transition problems bilinear (non-convex)"
                .into(),
        ));
    }
    let price_curve = price.initial_curve.clone();
    let mut inst = build_demand_storage(
        storage,
        injection_cost,
        demand.clone(),
        price_curve,
        grid,
        copies,
        Mode::Conditional,
    )?;
    for tpl in &mut inst.templates {
        let balance_row = match tpl.kind {
            StageKind::DemandConditional { balance_row } => balance_row,
            _ => unreachable!("demand builder produces conditional stages"),
        };
        tpl.kind = StageKind::Combined { copies, balance_row };
    }
    inst.uncertainty = MarkovProcessModel::PriceDemand(price, demand);
    inst.name = format!("combined_storage(copies={copies})");
    Ok(inst)
}

/// Assemble the whole horizon as one LP for a fixed (deterministic)
/// uncertainty path: the exactness oracle for zero-noise runs.
pub fn monolithic_deterministic_lp(model: &ModelInstance, xi_path: &[Vec<f64>]) -> LinearProgram {
    let t_count = model.num_stages();
    assert_eq!(xi_path.len(), t_count);
    let n_stage: Vec<usize> = model.templates.iter().map(|t| t.n).collect();
    let offsets: Vec<usize> = n_stage
        .iter()
        .scan(0usize, |acc, &n| {
            let o = *acc;
            *acc += n;
            Some(o)
        })
        .collect();
    let n_total: usize = n_stage.iter().sum();
    let mut lp = LinearProgram::new(n_total);
    for (t, tpl) in model.templates.iter().enumerate() {
        let zero_state = vec![0.0; tpl.state_dim];
        let stage_lp = tpl.instantiate(&zero_state, &xi_path[t], Some(0.0), false);
        let off = offsets[t];
        for j in 0..tpl.n {
            lp.c[off + j] = stage_lp.c[j];
            lp.lower[off + j] = stage_lp.lower[j];
            lp.upper[off + j] = stage_lp.upper[j];
        }
        for i in 0..tpl.rows {
            let mut row = vec![0.0; n_total];
            row[off..off + tpl.n].copy_from_slice(&stage_lp.a_eq[i * tpl.n..(i + 1) * tpl.n]);
            let mut rhs = stage_lp.b_eq[i];
            if t == 0 {
                for (s, &sv) in model.initial_state.iter().enumerate() {
                    rhs -= tpl.b_entry(i, s) * sv;
                }
            } else {
                let prev = &model.templates[t - 1];
                for (s, &col) in prev.state_cols.iter().enumerate() {
                    row[offsets[t - 1] + col] += tpl.b_entry(i, s);
                }
            }
            lp.add_eq(&row, rhs);
        }
    }
    lp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::{self, LpStatus};

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n).unwrap()
    }

    fn flat_price(grid: &TimeGrid, level: f64) -> OneFactorPriceModel {
        OneFactorPriceModel::new(0.0, 0.29, vec![level; grid.num_dates()]).unwrap()
    }

    /// The deterministic toy: prices 50 then 60, unit storage, start full.
    pub fn toy_two_stage() -> ModelInstance {
        let g = grid(1);
        let price = OneFactorPriceModel::new(0.0, 0.29, vec![50.0, 60.0]).unwrap();
        let storage = StorageParams { c_max: 1.0, a_in: 1.0, a_out: 1.0 };
        build_market_storage(storage, price, g, 1).unwrap()
    }

    #[test]
    fn market_stage_instantiation_matches_hand_expansion() {
        let g = grid(52);
        let m = build_market_storage(
            StorageParams::benchmark_default(),
            OneFactorPriceModel::benchmark_default(&g),
            g,
            1,
        )
        .unwrap();
        let lp = m.templates[5].instantiate(&[360_000.0], &[50.0], None, false);
        // min 50u s.t. C' - u = 360000, u in [-45000, 60000], C' in [0, 360000]
        assert_eq!(lp.n, 2);
        assert_eq!(lp.c, vec![50.0, 0.0]);
        assert_eq!(lp.a_eq, vec![-1.0, 1.0]);
        assert_eq!(lp.b_eq, vec![360_000.0]);
        assert_eq!(lp.lower, vec![-45_000.0, 0.0]);
        assert_eq!(lp.upper, vec![60_000.0, 360_000.0]);
        // zero incoming state leaves the raw RHS
        let lp0 = m.templates[5].instantiate(&[0.0], &[50.0], None, false);
        assert_eq!(lp0.b_eq, vec![0.0]);
    }

    #[test]
    fn toy_two_stage_deterministic_value() {
        // enumerate bang-bang policies: hold then sell at 60 is optimal
        let m = toy_two_stage();
        let path: Vec<Vec<f64>> = vec![vec![50.0], vec![60.0]];
        let lp = monolithic_deterministic_lp(&m, &path);
        let sol = simplex::solve(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective + 60.0).abs() < 1e-9, "objective {}", sol.objective);
    }

    #[test]
    fn replication_scales_the_deterministic_value() {
        let g = grid(8);
        let price = OneFactorPriceModel::new(
            0.0,
            0.29,
            (0..=8).map(|i| crate::scenario::forward_curve(i * 6, 52)).collect(),
        )
        .unwrap();
        let storage = StorageParams::benchmark_default();
        let single = build_market_storage(storage, price.clone(), g, 1).unwrap();
        let triple = build_market_storage(storage, price, g, 3).unwrap();
        let path: Vec<Vec<f64>> = (0..=8)
            .map(|i| vec![crate::scenario::forward_curve(i * 6, 52)])
            .collect();
        let v1 = simplex::solve(&monolithic_deterministic_lp(&single, &path))
            .unwrap()
            .objective;
        let v3 = simplex::solve(&monolithic_deterministic_lp(&triple, &path))
            .unwrap()
            .objective;
        assert!((v3 - 3.0 * v1).abs() <= 1e-9 * v1.abs(), "v1={v1} v3={v3}");
    }

    #[test]
    fn single_stage_demand_lp_by_inspection() {
        // empty storage, demand 10000, price 50: buy exactly the demand
        let g = grid(1);
        let demand = AR1DemandModel::new(0.9, 1000.0, vec![10_000.0, 10_000.0]).unwrap();
        let m = build_demand_storage(
            StorageParams::benchmark_default(),
            0.1,
            demand,
            vec![50.0, 50.0],
            g,
            1,
            Mode::Conditional,
        )
        .unwrap();
        let lp = m.templates[0].instantiate(&[0.0], &[10_000.0], None, false);
        let sol = simplex::solve(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 10_000.0).abs() < 1e-6, "x^b = {}", sol.x[0]);
        assert!((sol.objective - 500_000.0).abs() < 1e-6);
    }

    #[test]
    fn augmented_transition_row_rhs() {
        let g = grid(52);
        let demand = AR1DemandModel::benchmark_default(&g, 1.0);
        let kappa = demand.kappa;
        let mean: Vec<f64> = demand.mean_curve.clone();
        let m = build_demand_storage(
            StorageParams::benchmark_default(),
            0.1,
            demand,
            (0..=52).map(|i| crate::scenario::forward_curve(i, 52)).collect(),
            g,
            1,
            Mode::Augmented,
        )
        .unwrap();
        let tpl = &m.templates[7];
        let d_lag = 23_456.0;
        let lp = tpl.instantiate(&[100_000.0, d_lag], &[], Some(0.5), false);
        // in-stage demand: D_7 = mean_7 + kappa (D_6 - mean_6) + sigma eps
        let expected = mean[7] + kappa * (d_lag - mean[6]) + 1000.0 * 0.5;
        let sol = simplex::solve(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        let d_cur = sol.x[tpl.state_cols[1]];
        assert!((d_cur - expected).abs() < 1e-6, "{d_cur} vs {expected}");
        // the balance row serves exactly that demand
        let served = sol.x[0] - sol.x[1] - sol.x[2];
        assert!((served - expected).abs() < 1e-6, "{served} vs {expected}");
        // stage 0 with the mean seed reproduces the mean demand
        let tpl0 = &m.templates[0];
        let lp0 = tpl0.instantiate(&[360_000.0, mean[0]], &[], Some(3.0), false);
        let sol0 = simplex::solve(&lp0).unwrap();
        assert!((sol0.x[tpl0.state_cols[1]] - mean[0]).abs() < 1e-6);
    }

    #[test]
    fn combined_builder_shape_and_augmented_guard() {
        let g = grid(52);
        let price = OneFactorPriceModel::benchmark_default(&g);
        let demand = AR1DemandModel::benchmark_default(&g, 1.0);
        let m = build_combined_storage(
            StorageParams::benchmark_default(),
            0.1,
            price.clone(),
            demand.clone(),
            g,
            1,
            Mode::Conditional,
        )
        .unwrap();
        assert_eq!(m.uncertainty.dimension(), 2);
        assert!(matches!(
            build_combined_storage(
                StorageParams::benchmark_default(),
                0.1,
                price,
                demand,
                g,
                1,
                Mode::Augmented
            ),
            Err(ModelError::AugmentedUnavailable(_))
        ));
    }

    #[test]
    fn value_bounds_are_finite_and_tail_shaped() {
        let g = grid(52);
        let m = build_market_storage(
            StorageParams::benchmark_default(),
            OneFactorPriceModel::benchmark_default(&g),
            g,
            1,
        )
        .unwrap();
        // terminal cost-to-go is zero by definition
        assert_eq!(m.templates[52].value_lb, 0.0);
        for t in 0..52 {
            assert!(m.templates[t].value_lb.is_finite());
            assert!(m.templates[t].value_lb <= m.templates[t + 1].value_lb);
        }
        // deterministic prices: the bound is exactly -sum of remaining sales
        let flat = build_market_storage(
            StorageParams::benchmark_default(),
            flat_price(&grid(4), 50.0),
            grid(4),
            1,
        )
        .unwrap();
        let expect = -(50.0 * 45_000.0) * 4.0;
        assert!((flat.templates[0].value_lb - expect).abs() < 1e-9);
    }

    #[test]
    fn relatively_complete_recourse_on_sampled_states() {
        let g = grid(52);
        let m = build_market_storage(
            StorageParams::benchmark_default(),
            OneFactorPriceModel::benchmark_default(&g),
            g,
            1,
        )
        .unwrap();
        let set = crate::scenario::simulate(&m.uncertainty, &g, 50, 3);
        // doing nothing is always feasible from any reachable stock
        for s in 0..set.samples {
            for t in 0..m.num_stages() {
                let stock = (s as f64 / set.samples as f64) * 360_000.0;
                let lp = m.templates[t].instantiate(&[stock], set.state(s, t), None, false);
                let sol = simplex::solve(&lp).unwrap();
                assert_eq!(sol.status, LpStatus::Optimal, "stage {t} sample {s}");
            }
        }
    }

    #[test]
    fn dual_slope_matches_finite_difference_in_stock() {
        let g = grid(52);
        let m = build_market_storage(
            StorageParams::benchmark_default(),
            OneFactorPriceModel::benchmark_default(&g),
            g,
            1,
        )
        .unwrap();
        let tpl = &m.templates[10];
        let xi = [55.0];
        let stock = 123_456.0;
        let solve_at = |c: f64| {
            let lp = tpl.instantiate(&[c], &xi, None, false);
            simplex::solve(&lp).unwrap()
        };
        let sol = solve_at(stock);
        let g_slope = tpl.state_slope(&sol.pi)[0];
        let h = 1.0;
        let fd = (solve_at(stock + h).objective - solve_at(stock - h).objective) / (2.0 * h);
        assert!((g_slope - fd).abs() < 1e-6, "slope {g_slope} fd {fd}");
        assert!((-55.0..=1e-9).contains(&g_slope), "slope in [-S, 0]: {g_slope}");
    }
}
