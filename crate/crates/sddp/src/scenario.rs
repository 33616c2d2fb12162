//! Markovian uncertainty processes on a discrete stage grid.
//!
//! Three processes are supported: a one-factor lognormal forward-curve
//! (HJM) price model, an AR(1) demand process, and their independent
//! product. Sampling uses the exact transition of each process (no Euler
//! discretization error), with Gaussian innovations addressed by
//! `(seed, sample, stage, component)` so a path is reproducible from the
//! seed and its sample index alone.

use crate::rng;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario file schema mismatch: {0}")]
    Schema(String),
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
}

/// Decision dates t_i = i * horizon / stages for i = 0..=stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    /// Horizon in years (T).
    pub horizon: f64,
    /// Number of steps N; there are N + 1 decision dates.
    pub stages: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, stages: usize) -> Result<Self, ScenarioError> {
        if stages == 0 || horizon <= 0.0 {
            return Err(ScenarioError::InvalidParameter(format!(
                "time grid needs stages >= 1 and horizon > 0, got stages={stages}, horizon={horizon}"
            )));
        }
        Ok(Self { horizon, stages })
    }

    /// Step length in years.
    pub fn dt(&self) -> f64 {
        self.horizon / self.stages as f64
    }

    /// Number of decision dates (N + 1).
    pub fn num_dates(&self) -> usize {
        self.stages + 1
    }

    /// Time of date index i.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }
}

/// Initial forward curve of the storage experiments: 50 + 10 sin(4 pi i / N).
pub fn forward_curve(i: usize, n: usize) -> f64 {
    50.0 + 10.0 * (4.0 * std::f64::consts::PI * i as f64 / n as f64).sin()
}

/// Mean consumption curve of the demand experiments: 22000 + 7000 sin(4 pi i / N).
pub fn demand_mean_curve(i: usize, n: usize) -> f64 {
    22000.0 + 7000.0 * (4.0 * std::f64::consts::PI * i as f64 / n as f64).sin()
}

/// One-factor forward-curve model dF(T,t)/F(T,t) = sigma e^{-alpha (T-t)} dW.
///
/// The spot S_t = F(t,t) is a deterministic function of the date and of a
/// single Ornstein-Uhlenbeck factor Z_t with Z_0 = 0.
#[derive(Debug, Clone)]
pub struct OneFactorPriceModel {
    pub sigma: f64,
    pub alpha: f64,
    /// Initial curve F(0, t_i), one entry per decision date.
    pub initial_curve: Vec<f64>,
}

impl OneFactorPriceModel {
    pub fn new(sigma: f64, alpha: f64, initial_curve: Vec<f64>) -> Result<Self, ScenarioError> {
        if sigma < 0.0 {
            return Err(ScenarioError::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
        }
        if alpha <= 0.0 {
            return Err(ScenarioError::InvalidParameter(format!("alpha must be > 0, got {alpha}")));
        }
        if initial_curve.iter().any(|&f| !(f > 0.0) || !f.is_finite()) {
            return Err(ScenarioError::InvalidParameter(
                "initial curve must be positive and finite".into(),
            ));
        }
        Ok(Self { sigma, alpha, initial_curve })
    }

    /// Benchmark defaults: sigma = 0.94, alpha = 0.29, sine initial curve.
    pub fn benchmark_default(grid: &TimeGrid) -> Self {
        let curve = (0..grid.num_dates()).map(|i| forward_curve(i, grid.stages)).collect();
        Self::new(0.94, 0.29, curve).expect("benchmark defaults are valid")
    }

    /// Variance of the OU factor Z at time t (Z_0 = 0).
    pub fn factor_variance(&self, t: f64) -> f64 {
        (1.0 - (-2.0 * self.alpha * t).exp()) / (2.0 * self.alpha)
    }

    /// One-step parameters of the exact OU recursion
    /// Z_{t+dt} = e^{-alpha dt} Z_t + g zeta, g^2 = (1 - e^{-2 alpha dt}) / (2 alpha).
    pub fn ou_step(&self, dt: f64) -> (f64, f64) {
        let decay = (-self.alpha * dt).exp();
        let g = ((1.0 - (-2.0 * self.alpha * dt).exp()) / (2.0 * self.alpha)).sqrt();
        (decay, g)
    }

    /// Spot price at date i given the OU factor value:
    /// F(0,t_i) exp(sigma Z - sigma^2 (1 - e^{-2 alpha t_i}) / (4 alpha)).
    ///
    /// The drift correction makes the spot a martingale along the curve:
    /// E[S_{t_i}] = F(0, t_i).
    pub fn spot_from_factor(&self, grid: &TimeGrid, stage: usize, factor: f64) -> f64 {
        let t = grid.time(stage);
        let correction = self.sigma * self.sigma * self.factor_variance(t) / 2.0;
        self.initial_curve[stage] * (self.sigma * factor - correction).exp()
    }
}

/// AR(1) deviation-from-mean demand:
/// D_{i+1} - mean_{i+1} = kappa (D_i - mean_i) + sigma_d eps_i.
#[derive(Debug, Clone)]
pub struct AR1DemandModel {
    pub kappa: f64,
    pub sigma_d: f64,
    /// Mean curve, one entry per decision date.
    pub mean_curve: Vec<f64>,
}

impl AR1DemandModel {
    pub fn new(kappa: f64, sigma_d: f64, mean_curve: Vec<f64>) -> Result<Self, ScenarioError> {
        if !(0.0..1.0).contains(&kappa) {
            return Err(ScenarioError::InvalidParameter(format!(
                "kappa must satisfy 0 <= kappa < 1, got {kappa}"
            )));
        }
        if sigma_d < 0.0 {
            return Err(ScenarioError::InvalidParameter(format!(
                "sigma_d must be >= 0, got {sigma_d}"
            )));
        }
        Ok(Self { kappa, sigma_d, mean_curve })
    }

    /// Benchmark defaults: kappa = 0.9, sigma_d = 1000, sine mean curve,
    /// optionally scaled for replicated storages.
    pub fn benchmark_default(grid: &TimeGrid, scale: f64) -> Self {
        let curve = (0..grid.num_dates())
            .map(|i| scale * demand_mean_curve(i, grid.stages))
            .collect();
        Self::new(0.9, scale * 1000.0, curve).expect("benchmark defaults are valid")
    }

    /// One transition of the recursion.
    pub fn step(&self, stage: usize, demand: f64, innovation: f64) -> f64 {
        self.mean_curve[stage + 1]
            + self.kappa * (demand - self.mean_curve[stage])
            + self.sigma_d * innovation
    }

    /// Variance of D_i - mean_i after i transitions from D_0 = mean_0:
    /// sigma_d^2 (1 - kappa^{2i}) / (1 - kappa^2).
    pub fn deviation_variance(&self, i: usize) -> f64 {
        let k2 = self.kappa * self.kappa;
        self.sigma_d * self.sigma_d * (1.0 - k2.powi(i as i32)) / (1.0 - k2)
    }
}

/// The Markov process driving a model: price, demand, or their product.
/// Components are independent; the state at each date is the realized
/// (spot, demand) sub-vector in this order.
#[derive(Debug, Clone)]
pub enum MarkovProcessModel {
    Price(OneFactorPriceModel),
    Demand(AR1DemandModel),
    PriceDemand(OneFactorPriceModel, AR1DemandModel),
}

impl MarkovProcessModel {
    /// State dimension m per date.
    pub fn dimension(&self) -> usize {
        match self {
            MarkovProcessModel::Price(_) | MarkovProcessModel::Demand(_) => 1,
            MarkovProcessModel::PriceDemand(..) => 2,
        }
    }

    /// Deterministic state at date 0.
    pub fn initial_state(&self, grid: &TimeGrid) -> Vec<f64> {
        match self {
            MarkovProcessModel::Price(p) => vec![p.spot_from_factor(grid, 0, 0.0)],
            MarkovProcessModel::Demand(d) => vec![d.mean_curve[0]],
            MarkovProcessModel::PriceDemand(p, d) => {
                vec![p.spot_from_factor(grid, 0, 0.0), d.mean_curve[0]]
            }
        }
    }

    pub fn price(&self) -> Option<&OneFactorPriceModel> {
        match self {
            MarkovProcessModel::Price(p) | MarkovProcessModel::PriceDemand(p, _) => Some(p),
            MarkovProcessModel::Demand(_) => None,
        }
    }

    pub fn demand(&self) -> Option<&AR1DemandModel> {
        match self {
            MarkovProcessModel::Demand(d) | MarkovProcessModel::PriceDemand(_, d) => Some(d),
            MarkovProcessModel::Price(_) => None,
        }
    }

    /// Short descriptor used in file headers and run summaries.
    pub fn descriptor(&self) -> String {
        match self {
            MarkovProcessModel::Price(p) => {
                format!("price(sigma={},alpha={})", p.sigma, p.alpha)
            }
            MarkovProcessModel::Demand(d) => {
                format!("demand(kappa={},sigma_d={})", d.kappa, d.sigma_d)
            }
            MarkovProcessModel::PriceDemand(p, d) => format!(
                "price_demand(sigma={},alpha={},kappa={},sigma_d={})",
                p.sigma, p.alpha, d.kappa, d.sigma_d
            ),
        }
    }
}

/// A set of sampled Markov-state paths; the engine's only representation
/// of uncertainty.
#[derive(Debug, Clone)]
pub struct ScenarioSet {
    pub samples: usize,
    /// Number of decision dates (N + 1).
    pub dates: usize,
    /// State dimension m.
    pub dim: usize,
    /// Row-major `[sample][date][component]`.
    pub states: Vec<f64>,
    pub seed: u64,
    pub model_id: String,
}

impl ScenarioSet {
    /// State vector of sample `s` at date `i`.
    #[inline]
    pub fn state(&self, s: usize, date: usize) -> &[f64] {
        let off = (s * self.dates + date) * self.dim;
        &self.states[off..off + self.dim]
    }
}

/// Gaussian innovation stream used by `simulate` and by forward-path
/// generation in the engine: component 0 drives the price factor,
/// component 1 the demand.
pub fn simulate_with_stream(
    model: &MarkovProcessModel,
    grid: &TimeGrid,
    samples: usize,
    seed: u64,
    stream: u64,
) -> ScenarioSet {
    assert!(samples >= 1, "samples must be >= 1");
    let m = model.dimension();
    let dates = grid.num_dates();
    let mut states = vec![0.0f64; samples * dates * m];
    let mut negative_demand = 0usize;

    for s in 0..samples {
        let mut z = 0.0f64; // OU factor
        let mut d = model.demand().map(|dm| dm.mean_curve[0]);
        for i in 0..dates {
            let off = (s * dates + i) * m;
            match model {
                MarkovProcessModel::Price(p) => {
                    states[off] = p.spot_from_factor(grid, i, z);
                }
                MarkovProcessModel::Demand(_) => {
                    states[off] = d.unwrap();
                }
                MarkovProcessModel::PriceDemand(p, _) => {
                    states[off] = p.spot_from_factor(grid, i, z);
                    states[off + 1] = d.unwrap();
                }
            }
            if let Some(dv) = d {
                if dv < 0.0 {
                    negative_demand += 1;
                }
            }
            if i + 1 < dates {
                if let Some(p) = model.price() {
                    let (decay, g) = p.ou_step(grid.dt());
                    let zeta = rng::gaussian(seed, stream, s as u64, i as u64, 0);
                    z = decay * z + g * zeta;
                }
                if let Some(dm) = model.demand() {
                    let eps = rng::gaussian(seed, stream, s as u64, i as u64, 1);
                    d = Some(dm.step(i, d.unwrap(), eps));
                }
            }
        }
    }
    if negative_demand > 0 {
        log::warn!("sampled demand below zero at {negative_demand} (sample, date) points");
    }
    ScenarioSet {
        samples,
        dates,
        dim: m,
        states,
        seed,
        model_id: model.descriptor(),
    }
}

/// Sample `samples` paths of the process on the grid. Path `s` is a pure
/// function of `(seed, s)`.
pub fn simulate(
    model: &MarkovProcessModel,
    grid: &TimeGrid,
    samples: usize,
    seed: u64,
) -> ScenarioSet {
    simulate_with_stream(model, grid, samples, seed, rng::stream::BACKWARD)
}

const SCENARIO_MAGIC: &[u8; 8] = b"SDDPSCN1";

/// Binary scenario file: magic, u64 S, u64 dates, u64 m, u64 seed,
/// then f64 payload in (sample, date, component) order, little-endian.
pub fn save_scenarios(set: &ScenarioSet, path: &Path) -> Result<(), ScenarioError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(SCENARIO_MAGIC)?;
    for v in [set.samples as u64, set.dates as u64, set.dim as u64, set.seed] {
        w.write_all(&v.to_le_bytes())?;
    }
    for x in &set.states {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_scenarios(path: &Path) -> Result<ScenarioSet, ScenarioError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| ScenarioError::Schema("file too short for header".into()))?;
    if &magic != SCENARIO_MAGIC {
        return Err(ScenarioError::Schema(format!(
            "bad magic: expected {:?}, found {:?}",
            SCENARIO_MAGIC, magic
        )));
    }
    let mut u64buf = [0u8; 8];
    let mut header = [0u64; 4];
    for h in header.iter_mut() {
        r.read_exact(&mut u64buf)
            .map_err(|_| ScenarioError::Schema("truncated header".into()))?;
        *h = u64::from_le_bytes(u64buf);
    }
    let (samples, dates, dim, seed) = (header[0] as usize, header[1] as usize, header[2] as usize, header[3]);
    let expected = samples
        .checked_mul(dates)
        .and_then(|v| v.checked_mul(dim))
        .ok_or_else(|| ScenarioError::Schema("header dimensions overflow".into()))?;
    let mut states = Vec::with_capacity(expected);
    let mut f64buf = [0u8; 8];
    for k in 0..expected {
        r.read_exact(&mut f64buf).map_err(|_| {
            ScenarioError::Schema(format!(
                "payload truncated: expected {expected} values, found {k}"
            ))
        })?;
        states.push(f64::from_le_bytes(f64buf));
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(ScenarioError::Schema(format!(
            "trailing bytes after {expected} payload values (header S={samples}, dates={dates}, m={dim})"
        )));
    }
    Ok(ScenarioSet {
        samples,
        dates,
        dim,
        states,
        seed,
        model_id: String::new(),
    })
}

/// CSV export for inspection: one row per (sample, date).
pub fn export_csv(set: &ScenarioSet, path: &Path) -> Result<(), ScenarioError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(w, "sample,date")?;
    for c in 0..set.dim {
        write!(w, ",x{c}")?;
    }
    writeln!(w)?;
    for s in 0..set.samples {
        for i in 0..set.dates {
            write!(w, "{s},{i}")?;
            for &x in set.state(s, i) {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid52() -> TimeGrid {
        TimeGrid::new(1.0, 52).unwrap()
    }

    #[test]
    fn forward_curve_values() {
        assert_eq!(forward_curve(0, 52), 50.0);
        assert!((forward_curve(13, 52) - 50.0).abs() < 1e-9); // sin(pi) = 0
        assert!((forward_curve(6, 52) - 59.927).abs() < 1e-3);
        assert_eq!(demand_mean_curve(0, 52), 22000.0);
    }

    #[test]
    fn ou_step_variance_closed_form() {
        let grid = grid52();
        let p = OneFactorPriceModel::benchmark_default(&grid);
        let (_, g) = p.ou_step(grid.dt());
        assert!((g * g - 0.019124).abs() < 1e-5, "g^2 = {}", g * g);
    }

    #[test]
    fn spot_at_origin_and_zero_vol() {
        let grid = grid52();
        let p = OneFactorPriceModel::benchmark_default(&grid);
        assert!((p.spot_from_factor(&grid, 0, 0.0) - 50.0).abs() < 1e-12);
        let flat = OneFactorPriceModel::new(0.0, 0.29, p.initial_curve.clone()).unwrap();
        for i in 0..=52 {
            assert!((flat.spot_from_factor(&grid, i, 3.0) - forward_curve(i, 52)).abs() < 1e-12);
        }
    }

    #[test]
    fn ar1_step_arithmetic() {
        let mut curve = vec![0.0; 3];
        curve[0] = 22000.0;
        curve[1] = 22500.0;
        let m = AR1DemandModel::new(0.9, 1000.0, curve).unwrap();
        // on-mean, no noise
        assert!((m.step(0, 22000.0, 0.0) - 22500.0).abs() < 1e-12);
        // 22500 + 0.9*(25000-22000) = 25200
        assert!((m.step(0, 25000.0, 0.0) - 25200.0).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_paths_follow_means() {
        let grid = grid52();
        let d0 = AR1DemandModel::benchmark_default(&grid, 1.0);
        let d = AR1DemandModel::new(d0.kappa, 0.0, d0.mean_curve.clone()).unwrap();
        let set = simulate(&MarkovProcessModel::Demand(d.clone()), &grid, 4, 99);
        for s in 0..4 {
            for i in 0..set.dates {
                assert!((set.state(s, i)[0] - d.mean_curve[i]).abs() < 1e-9);
            }
        }
        let p = OneFactorPriceModel::new(0.0, 0.29, d0.mean_curve.iter().map(|_| 1.0).collect())
            .unwrap();
        let set = simulate(&MarkovProcessModel::Price(p), &grid, 3, 1);
        assert!(set.states.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn simulate_is_reproducible_per_path() {
        let grid = grid52();
        let model = MarkovProcessModel::PriceDemand(
            OneFactorPriceModel::benchmark_default(&grid),
            AR1DemandModel::benchmark_default(&grid, 1.0),
        );
        let a = simulate(&model, &grid, 5, 1234);
        let b = simulate(&model, &grid, 9, 1234);
        // path s depends only on (seed, s), not on the total sample count
        for s in 0..5 {
            for i in 0..a.dates {
                assert_eq!(a.state(s, i), b.state(s, i));
            }
        }
    }

    #[test]
    fn martingale_property_of_spot() {
        let grid = grid52();
        let p = OneFactorPriceModel::benchmark_default(&grid);
        let n = 100_000;
        let set = simulate(&MarkovProcessModel::Price(p.clone()), &grid, n, 777);
        for i in 1..set.dates {
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for s in 0..n {
                let x = set.state(s, i)[0];
                sum += x;
                sumsq += x * x;
            }
            let mean = sum / n as f64;
            let var = (sumsq / n as f64 - mean * mean).max(0.0);
            let se = (var / n as f64).sqrt();
            let target = p.initial_curve[i];
            assert!(
                (mean - target).abs() <= 3.0 * se,
                "date {i}: mean {mean} vs F(0,t) {target}, se {se}"
            );
        }
    }

    #[test]
    fn ar1_deviation_variance_matches_transient_formula() {
        let grid = grid52();
        let d = AR1DemandModel::benchmark_default(&grid, 1.0);
        let n = 100_000;
        let set = simulate(&MarkovProcessModel::Demand(d.clone()), &grid, n, 31);
        let i = set.dates - 1;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for s in 0..n {
            let dev = set.state(s, i)[0] - d.mean_curve[i];
            sum += dev;
            sumsq += dev * dev;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let expected = d.deviation_variance(i);
        assert!(
            (var - expected).abs() / expected < 0.05,
            "var {var} vs transient formula {expected}"
        );
    }

    #[test]
    fn scenario_file_round_trip_and_schema_errors() {
        let grid = grid52();
        let model = MarkovProcessModel::Price(OneFactorPriceModel::benchmark_default(&grid));
        let set = simulate(&model, &grid, 7, 5);
        let dir = std::env::temp_dir().join("sddp_scn_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.bin");
        save_scenarios(&set, &path).unwrap();
        let back = load_scenarios(&path).unwrap();
        assert_eq!(set.states, back.states);
        assert_eq!(set.samples, back.samples);
        assert_eq!(set.seed, back.seed);

        let empty = dir.join("empty.bin");
        std::fs::write(&empty, b"").unwrap();
        assert!(matches!(load_scenarios(&empty), Err(ScenarioError::Schema(_))));

        // corrupt the header dimension so the payload no longer matches
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[24] = bytes[24].wrapping_add(1); // m field
        let bad = dir.join("badm.bin");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(load_scenarios(&bad), Err(ScenarioError::Schema(_))));
    }
}
