//! Cutting-plane engine: forward simulation of the current policy,
//! backward generation of cuts, bound tracking and the stopping rule.
//!
//! Cuts bound the expected cost-to-go conditionally on the driving
//! Markov state: coefficients are affine functions of the state, fitted
//! per cell of an equal-count mesh built once from the backward sample
//! set. The augmented-state variant degenerates to single-cell meshes
//! and constant coefficients averaged over freshly drawn innovations.

use crate::model::{Mode, ModelInstance, StageTemplate};
use crate::partition::{affine_fit, AffineFit, Partition};
use crate::rng;
use crate::scenario::{self, MarkovProcessModel, ScenarioSet};
use crate::simplex::{self, LinearProgram, LpError, LpSolution, LpStatus};
use rayon::prelude::*;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("stage {stage} subproblem is {status:?}; the model lacks complete recourse")]
    Stage { stage: usize, status: LpStatus },
    #[error("LP solver failed at stage {stage}: {source}")]
    Solver { stage: usize, source: LpError },
    #[error("mesh construction failed: {0}")]
    Mesh(#[from] crate::partition::RegressionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cut file schema violation: {0}")]
    Schema(String),
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
}

/// One supporting hyperplane of the expected cost-to-go. Coefficient
/// vectors are affine in the conditioning state (`[constant, per
/// component...]`); constant cuts store just the constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Cut {
    pub intercept: Vec<f64>,
    /// One coefficient vector per state dimension.
    pub slopes: Vec<Vec<f64>>,
}

#[inline]
fn affine_eval(coeffs: &[f64], xi: &[f64]) -> f64 {
    // zip truncation makes constant cuts ignore xi
    coeffs[0] + coeffs[1..].iter().zip(xi).map(|(c, x)| c * x).sum::<f64>()
}

impl Cut {
    pub fn alpha(&self, xi: &[f64]) -> f64 {
        affine_eval(&self.intercept, xi)
    }

    pub fn beta(&self, s: usize, xi: &[f64]) -> f64 {
        affine_eval(&self.slopes[s], xi)
    }
}

/// Cuts for the cost-to-go entering one stage, bucketed by mesh cell of
/// the previous date's Markov state.
#[derive(Debug, Clone)]
pub struct CutPool {
    pub partition: Arc<Partition>,
    pub cells: Vec<Vec<Cut>>,
}

impl CutPool {
    fn seeded(partition: Arc<Partition>, value_lb: f64) -> Self {
        let cells = vec![
            vec![Cut { intercept: vec![value_lb], slopes: Vec::new() }];
            partition.cell_count
        ];
        CutPool { partition, cells }
    }

    pub fn len(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The trained object: per-date meshes plus cut pools. `pools[t]` bounds
/// the cost-to-go entering stage t and is indexed by the cell of
/// `partitions[t - 1]`; `pools[0]` stays empty.
pub struct Policy {
    pub mode: Mode,
    pub state_dim: usize,
    pub xi_dim: usize,
    pub partitions: Vec<Arc<Partition>>,
    pub pools: Vec<CutPool>,
}

impl Policy {
    pub fn cuts_total(&self) -> usize {
        self.pools.iter().map(CutPool::len).sum()
    }
}

#[derive(Debug, Clone)]
pub struct SddpConfig {
    /// Size of the fixed backward sample set (mesh + regressions).
    pub backward_samples: usize,
    /// Forward trial paths per iteration.
    pub forward_samples: usize,
    /// Paths of the held-out policy evaluation.
    pub eval_samples: usize,
    /// Evaluate every this many iterations.
    pub eval_period: usize,
    /// Stop when (eval_mean - z_lower) / |eval_mean| falls below this.
    pub rel_gap: f64,
    /// Normal quantile for the confidence diagnostic.
    pub confidence_z: f64,
    pub max_iterations: usize,
    pub seed: u64,
    /// Mesh split counts per uncertainty dimension.
    pub splits: Vec<usize>,
}

impl Default for SddpConfig {
    fn default() -> Self {
        SddpConfig {
            backward_samples: 10_000,
            forward_samples: 8,
            eval_samples: 20_000,
            eval_period: 10,
            rel_gap: 1e-3,
            confidence_z: 1.96,
            max_iterations: 1000,
            seed: 42,
            splits: vec![10],
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub z_lower: f64,
    pub fwd_mean: f64,
    pub fwd_std: f64,
    pub eval_mean: Option<f64>,
    pub eval_std: Option<f64>,
    pub gap_rel: Option<f64>,
    pub gap_conf: Option<f64>,
    pub cuts_total: usize,
    pub wall_ms: u128,
}

pub struct RunReport {
    pub z_lower: f64,
    pub eval_mean: f64,
    pub eval_std: f64,
    pub gap_rel: f64,
    pub gap_conf: f64,
    pub iterations: usize,
    pub converged: bool,
    pub records: Vec<IterationRecord>,
    pub policy: Policy,
}

fn sample_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn solve_or_err(lp: &LinearProgram, stage: usize) -> Result<LpSolution, EngineError> {
    let sol = simplex::solve(lp).map_err(|source| EngineError::Solver { stage, source })?;
    if sol.status != LpStatus::Optimal {
        return Err(EngineError::Stage { stage, status: sol.status });
    }
    Ok(sol)
}

/// Coordinates used for mesh location and cut regression. The price-only
/// model regresses on log spot (the value surface is closer to affine
/// there and the lognormal tail is compressed); the combined model keeps
/// raw coordinates, where the two-dimensional fits measurably tighten the
/// gap.
fn cond_coords(model: &ModelInstance, xi: &[f64]) -> Vec<f64> {
    if xi.is_empty() {
        return Vec::new(); // augmented solves carry no conditioning state
    }
    match &model.uncertainty {
        MarkovProcessModel::Price(_) => vec![xi[0].ln()],
        MarkovProcessModel::Demand(_) => vec![xi[0]],
        MarkovProcessModel::PriceDemand(..) => vec![xi[0], xi[1]],
    }
}

/// Instantiate stage `t` with the epigraph variable and the cut rows of
/// the pool guarding the next stage's cost-to-go.
fn stage_lp(
    model: &ModelInstance,
    policy: &Policy,
    t: usize,
    state_in: &[f64],
    xi: &[f64],
    innovation: Option<f64>,
) -> LinearProgram {
    let tpl = &model.templates[t];
    let last = t + 1 == model.num_stages();
    let mut lp = tpl.instantiate(state_in, xi, innovation, !last);
    if !last {
        let pool = &policy.pools[t + 1];
        let coords = cond_coords(model, xi);
        let cell =
            if pool.partition.cell_count == 1 { 0 } else { pool.partition.locate(&coords) };
        add_cut_rows(&mut lp, tpl, &pool.cells[cell], &coords);
    }
    lp
}

fn add_cut_rows(lp: &mut LinearProgram, tpl: &StageTemplate, cuts: &[Cut], coords: &[f64]) {
    // evaluate every cut at the current coordinates first; among cuts
    // with matching slopes only the largest intercept can bind, and the
    // duplicates would make simplex bases near singular
    let n_state = tpl.state_cols.len();
    let mut kept: Vec<(Vec<f64>, f64)> = Vec::with_capacity(cuts.len());
    let eval_cut = |cut: &Cut| {
        let betas: Vec<f64> = (0..n_state)
            .map(|s| if cut.slopes.is_empty() { 0.0 } else { cut.beta(s, coords) })
            .collect();
        (betas, cut.alpha(coords))
    };
    if n_state != 1 {
        'next_cut: for cut in cuts {
            let (betas, alpha) = eval_cut(cut);
            for (kb, ka) in kept.iter_mut() {
                let same = kb
                    .iter()
                    .zip(&betas)
                    .all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs())));
                if same {
                    if alpha > *ka {
                        *ka = alpha;
                    }
                    continue 'next_cut;
                }
            }
            kept.push((betas, alpha));
        }
    } else {
        // the envelope filter below subsumes the pairwise slope merge
        kept.extend(cuts.iter().map(eval_cut));
    }
    // a cut lying below another cut everywhere on the state box can never
    // bind; nearly-parallel survivors of the slope merge above otherwise
    // produce ill-conditioned bases when both rows go tight
    if n_state == 1 {
        let col = tpl.state_cols[0];
        upper_envelope(&mut kept, lp.lower[col], lp.upper[col]);
        let mut row = vec![0.0; lp.n];
        for (betas, alpha) in kept {
            row.iter_mut().for_each(|v| *v = 0.0);
            row[tpl.n] = -1.0;
            row[tpl.state_cols[0]] = betas[0];
            lp.add_ineq(&row, -alpha);
        }
        return;
    }
    let mut dropped = vec![false; kept.len()];
    for i in 0..kept.len() {
        for j in 0..kept.len() {
            if i == j || dropped[j] || dropped[i] {
                continue;
            }
            let (bi, ai) = &kept[i];
            let (bj, aj) = &kept[j];
            // margin = max over the box of (cut i - cut j)
            let mut margin = ai - aj;
            for (s, &col) in tpl.state_cols.iter().enumerate() {
                let d = bi[s] - bj[s];
                if d == 0.0 {
                    continue;
                }
                let edge = if d > 0.0 { lp.upper[col] } else { lp.lower[col] };
                margin += d * edge;
                if !margin.is_finite() {
                    break;
                }
            }
            let tol = 1e-10 * (1.0 + ai.abs().max(aj.abs()));
            // near-ties count as mutual dominance; keep the lower index
            if margin < tol && (margin < -tol || j < i) {
                dropped[i] = true;
            }
        }
    }
    let mut row = vec![0.0; lp.n];
    for (k, (betas, alpha)) in kept.iter().enumerate() {
        if dropped[k] {
            continue;
        }
        row.iter_mut().for_each(|v| *v = 0.0);
        row[tpl.n] = -1.0;
        for (s, &col) in tpl.state_cols.iter().enumerate() {
            row[col] += betas[s];
        }
        lp.add_ineq(&row, -alpha);
    }
}

/// Exact redundancy filter for one-dimensional cuts: keep only the lines
/// r >= alpha + beta x forming the upper envelope over [lo, hi]. Every
/// discarded line lies below a kept one on the whole interval.
fn upper_envelope(lines: &mut Vec<(Vec<f64>, f64)>, lo: f64, hi: f64) {
    if lines.len() < 2 {
        return;
    }
    lines.sort_by(|p, q| {
        p.0[0].partial_cmp(&q.0[0]).unwrap().then(p.1.partial_cmp(&q.1).unwrap())
    });
    // collapse near-equal slopes (adjacent after the sort) onto the max
    // intercept; two such lines crossing inside the box would otherwise
    // both survive and make simplex bases near singular
    let mut w = 0;
    for r in 1..lines.len() {
        let (bw, br) = (lines[w].0[0], lines[r].0[0]);
        if (br - bw).abs() <= 1e-9 * (1.0 + bw.abs().max(br.abs())) {
            if lines[r].1 > lines[w].1 {
                lines[w].1 = lines[r].1;
            }
        } else {
            w += 1;
            lines.swap(w, r);
        }
    }
    lines.truncate(w + 1);
    if lines.len() < 2 {
        return;
    }
    // breaks[i] is the x where envelope line i takes over from line i-1
    let mut env: Vec<usize> = Vec::with_capacity(lines.len());
    let mut breaks: Vec<f64> = Vec::with_capacity(lines.len());
    for i in 0..lines.len() {
        let (b, a) = (lines[i].0[0], lines[i].1);
        if let Some(&j) = env.last() {
            if lines[j].0[0] == b {
                // equal slope: the sort puts the larger intercept last
                env.pop();
                breaks.pop();
            }
        }
        loop {
            match env.last() {
                None => {
                    env.push(i);
                    breaks.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&j) => {
                    let x = (lines[j].1 - a) / (b - lines[j].0[0]);
                    if x <= *breaks.last().unwrap() {
                        env.pop();
                        breaks.pop();
                    } else {
                        env.push(i);
                        breaks.push(x);
                        break;
                    }
                }
            }
        }
    }
    // keep lines whose active interval [breaks[k], breaks[k+1]] meets [lo, hi]
    let mut keep = vec![false; lines.len()];
    for (k, &i) in env.iter().enumerate() {
        let start = breaks[k];
        let end = breaks.get(k + 1).copied().unwrap_or(f64::INFINITY);
        if start <= hi && end >= lo {
            keep[i] = true;
        }
    }
    let mut k = 0;
    lines.retain(|_| {
        k += 1;
        keep[k - 1]
    });
}

/// Per-date innovation of an augmented demand path, recovered from the
/// realized states so the LP transition reproduces the path exactly.
fn path_innovations(model: &ModelInstance, set: &ScenarioSet, s: usize) -> Option<Vec<f64>> {
    if model.mode != Mode::Augmented {
        return None;
    }
    let demand = match &model.uncertainty {
        MarkovProcessModel::Demand(d) => d,
        _ => return None,
    };
    let t_count = model.num_stages();
    let mut eps = vec![0.0; t_count];
    if demand.sigma_d > 0.0 {
        for t in 1..t_count {
            let d_cur = set.state(s, t)[0];
            let d_prev = set.state(s, t - 1)[0];
            eps[t] = (d_cur - demand.mean_curve[t]
                - demand.kappa * (d_prev - demand.mean_curve[t - 1]))
                / demand.sigma_d;
        }
    }
    Some(eps)
}

struct PathResult {
    cost: f64,
    /// Outgoing state and conditioning cell per date (trial points).
    trials: Vec<(Vec<f64>, usize)>,
}

fn simulate_path(
    model: &ModelInstance,
    policy: &Policy,
    set: &ScenarioSet,
    s: usize,
    collect_trials: bool,
) -> Result<PathResult, EngineError> {
    let t_count = model.num_stages();
    let eps = path_innovations(model, set, s);
    let mut state = model.initial_state.clone();
    let mut cost = 0.0;
    let mut trials = Vec::new();
    for t in 0..t_count {
        let xi = set.state(s, t);
        let innovation = eps.as_ref().map(|e| e[t]);
        let lp = stage_lp(model, policy, t, &state, xi, innovation);
        let sol = solve_or_err(&lp, t)?;
        let tpl = &model.templates[t];
        cost += lp.c[..tpl.n].iter().zip(&sol.x).map(|(c, x)| c * x).sum::<f64>();
        state = tpl.state_cols.iter().map(|&col| sol.x[col]).collect();
        if collect_trials && t + 1 < t_count {
            let cell = if policy.partitions[t].cell_count == 1 {
                0
            } else {
                policy.partitions[t].locate(&cond_coords(model, xi))
            };
            trials.push((state.clone(), cell));
        }
    }
    Ok(PathResult { cost, trials })
}

fn simulate_many(
    model: &ModelInstance,
    policy: &Policy,
    set: &ScenarioSet,
    collect_trials: bool,
) -> Result<Vec<PathResult>, EngineError> {
    (0..set.samples)
        .into_par_iter()
        .map(|s| simulate_path(model, policy, set, s, collect_trials))
        .collect()
}

/// Held-out policy cost per path.
pub fn evaluate_policy(
    model: &ModelInstance,
    policy: &Policy,
    set: &ScenarioSet,
) -> Result<Vec<f64>, EngineError> {
    Ok(simulate_many(model, policy, set, false)?.into_iter().map(|r| r.cost).collect())
}

/// First-stage problem value under the current pools (the lower bound).
pub fn lower_bound(model: &ModelInstance, policy: &Policy) -> Result<f64, EngineError> {
    let xi0 = model.uncertainty.initial_state(&model.grid);
    let lp = stage_lp(model, policy, 0, &model.initial_state, &xi0, Some(0.0));
    Ok(solve_or_err(&lp, 0)?.objective)
}

/// Combine value and slope regressions into a cut at trial state `x`:
/// the intercept function is `v_hat - sum_s g_hat_s * x_s`.
fn assemble_cut(xi_dim: usize, vfit: &AffineFit, gfits: &[AffineFit], x: &[f64]) -> Cut {
    let mut intercept = vfit.coeffs.clone();
    for (g, &xs) in gfits.iter().zip(x) {
        for (ic, &gc) in intercept.iter_mut().zip(&g.coeffs) {
            *ic -= gc * xs;
        }
    }
    debug_assert_eq!(intercept.len(), xi_dim + 1);
    Cut { intercept, slopes: gfits.iter().map(|g| g.coeffs.clone()).collect() }
}

fn backward_pass(
    model: &ModelInstance,
    policy: &mut Policy,
    backward: &ScenarioSet,
    cfg: &SddpConfig,
    iteration: usize,
    trials: &[Vec<(Vec<f64>, usize)>],
) -> Result<(), EngineError> {
    let t_count = model.num_stages();
    let state_dim = policy.state_dim;
    let xi_dim = policy.xi_dim;
    for t in (1..t_count).rev() {
        // distinct trial states per cell; repeated states add nothing
        let mut jobs: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut seen: HashMap<(usize, Vec<u64>), ()> = HashMap::new();
        for path in trials {
            let (state, cell) = &path[t - 1];
            let key = (*cell, state.iter().map(|v| v.to_bits()).collect());
            if seen.insert(key, ()).is_none() {
                jobs.push((*cell, state.clone()));
            }
        }
        for (cell, x_bar) in jobs {
            let (vfit, gfits) = if model.mode == Mode::Augmented {
                regress_inner(model, policy, t, &x_bar, cfg, iteration)?
            } else {
                regress_conditional(model, policy, backward, t, cell, &x_bar)?
            };
            let cut = assemble_cut(
                if model.mode == Mode::Augmented { 0 } else { xi_dim },
                &vfit,
                &gfits,
                &x_bar,
            );
            debug_assert_eq!(cut.slopes.len(), state_dim);
            policy.pools[t].cells[cell].push(cut);
        }
    }
    Ok(())
}

/// Conditional regression: solve stage `t` for every backward sample in
/// the cell and regress value and slopes on the previous date's state.
fn regress_conditional(
    model: &ModelInstance,
    policy: &Policy,
    backward: &ScenarioSet,
    t: usize,
    cell: usize,
    x_bar: &[f64],
) -> Result<(AffineFit, Vec<AffineFit>), EngineError> {
    let members = policy.partitions[t - 1].cell(cell);
    let tpl = &model.templates[t];
    let results: Vec<(f64, Vec<f64>)> = members
        .par_iter()
        .map(|&s| {
            let lp = stage_lp(model, policy, t, x_bar, backward.state(s, t), None);
            let sol = solve_or_err(&lp, t)?;
            Ok((sol.objective, tpl.state_slope(&sol.pi)))
        })
        .collect::<Result<_, EngineError>>()?;
    let rows: Vec<Vec<f64>> =
        members.iter().map(|&s| cond_coords(model, backward.state(s, t - 1))).collect();
    let values: Vec<f64> = results.iter().map(|r| r.0).collect();
    let vfit = affine_fit(policy.xi_dim, rows.iter().map(|r| r.as_slice()), &values);
    let gfits = (0..policy.state_dim)
        .map(|k| {
            let g: Vec<f64> = results.iter().map(|r| r.1[k]).collect();
            affine_fit(policy.xi_dim, rows.iter().map(|r| r.as_slice()), &g)
        })
        .collect();
    Ok((vfit, gfits))
}

/// Augmented-state regression: average value and slopes over fresh
/// innovations, giving a constant cut.
fn regress_inner(
    model: &ModelInstance,
    policy: &Policy,
    t: usize,
    x_bar: &[f64],
    cfg: &SddpConfig,
    iteration: usize,
) -> Result<(AffineFit, Vec<AffineFit>), EngineError> {
    let tpl = &model.templates[t];
    let stream = rng::stream::INNER + iteration as u64;
    let n = cfg.backward_samples;
    let results: Vec<(f64, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let eps = rng::gaussian(cfg.seed, stream, j as u64, t as u64, 0);
            let lp = stage_lp(model, policy, t, x_bar, &[], Some(eps));
            let sol = solve_or_err(&lp, t)?;
            Ok((sol.objective, tpl.state_slope(&sol.pi)))
        })
        .collect::<Result<_, EngineError>>()?;
    let inv = 1.0 / n as f64;
    let v_mean = results.iter().map(|r| r.0).sum::<f64>() * inv;
    let vfit = AffineFit { coeffs: vec![v_mean], degenerate: false };
    let gfits = (0..policy.state_dim)
        .map(|k| AffineFit {
            coeffs: vec![results.iter().map(|r| r.1[k]).sum::<f64>() * inv],
            degenerate: false,
        })
        .collect();
    Ok((vfit, gfits))
}

fn build_policy(
    model: &ModelInstance,
    backward: &ScenarioSet,
    cfg: &SddpConfig,
) -> Result<Policy, EngineError> {
    let t_count = model.num_stages();
    let xi_dim = model.uncertainty.dimension();
    if model.mode == Mode::Conditional && cfg.splits.len() != xi_dim {
        return Err(EngineError::InvalidConfig(format!(
            "{} split counts for a {xi_dim}-dimensional process",
            cfg.splits.len()
        )));
    }
    let mut partitions = Vec::with_capacity(t_count);
    for t in 0..t_count {
        // date 0 is deterministic; augmented runs never condition on xi
        if t == 0 || model.mode == Mode::Augmented {
            partitions.push(Arc::new(Partition::single_cell(xi_dim, backward.samples)));
            continue;
        }
        let points: Vec<f64> =
            (0..backward.samples).flat_map(|s| cond_coords(model, backward.state(s, t))).collect();
        partitions.push(Arc::new(Partition::build(&points, xi_dim, &cfg.splits)?));
    }
    let mut pools = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let lb = if t == 0 { 0.0 } else { model.templates[t - 1].value_lb };
        let pool = CutPool::seeded(Arc::clone(&partitions[t.saturating_sub(1)]), lb);
        pools.push(pool);
    }
    pools[0].cells.iter_mut().for_each(Vec::clear); // stage 0 has no incoming cost-to-go
    Ok(Policy {
        mode: model.mode,
        state_dim: model.templates[0].state_dim,
        xi_dim,
        partitions,
        pools,
    })
}

pub fn run(model: &ModelInstance, cfg: &SddpConfig) -> Result<RunReport, EngineError> {
    if cfg.max_iterations == 0 || cfg.forward_samples == 0 || cfg.backward_samples == 0 {
        return Err(EngineError::InvalidConfig(
            "iteration and sample counts must be positive".into(),
        ));
    }
    let backward =
        scenario::simulate(&model.uncertainty, &model.grid, cfg.backward_samples, cfg.seed);
    let mut policy = build_policy(model, &backward, cfg)?;

    let mut records = Vec::new();
    let mut best = (f64::NEG_INFINITY, f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    let mut converged = false;
    let mut prev_lower = f64::NEG_INFINITY;
    let mut iterations = 0;
    for k in 1..=cfg.max_iterations {
        let clock = Instant::now();
        iterations = k;
        let fwd_set = scenario::simulate_with_stream(
            &model.uncertainty,
            &model.grid,
            cfg.forward_samples,
            cfg.seed,
            rng::stream::FORWARD + k as u64,
        );
        let fwd = simulate_many(model, &policy, &fwd_set, true)?;
        let costs: Vec<f64> = fwd.iter().map(|r| r.cost).collect();
        let (fwd_mean, fwd_std) = sample_stats(&costs);
        let trials: Vec<_> = fwd.into_iter().map(|r| r.trials).collect();
        backward_pass(model, &mut policy, &backward, cfg, k, &trials)?;
        let z_lower = lower_bound(model, &policy)?;
        if z_lower + 1e-7 * (1.0 + z_lower.abs()) < prev_lower {
            log::warn!("lower bound regressed: {prev_lower} -> {z_lower}");
        }
        prev_lower = prev_lower.max(z_lower);

        let mut record = IterationRecord {
            iteration: k,
            z_lower,
            fwd_mean,
            fwd_std,
            eval_mean: None,
            eval_std: None,
            gap_rel: None,
            gap_conf: None,
            cuts_total: policy.cuts_total(),
            wall_ms: 0,
        };
        if k % cfg.eval_period == 0 || k == cfg.max_iterations {
            // new trajectories for every estimate: reusing one held-out
            // set would freeze a single draw's bias into every gap
            let eval_set = scenario::simulate_with_stream(
                &model.uncertainty,
                &model.grid,
                cfg.eval_samples,
                cfg.seed,
                rng::stream::EVAL + k as u64,
            );
            let eval_costs = evaluate_policy(model, &policy, &eval_set)?;
            let (em, es) = sample_stats(&eval_costs);
            let gap_rel = (em - z_lower) / em.abs().max(f64::MIN_POSITIVE);
            let gap_conf =
                em + cfg.confidence_z * es / (eval_costs.len() as f64).sqrt() - z_lower;
            record.eval_mean = Some(em);
            record.eval_std = Some(es);
            record.gap_rel = Some(gap_rel);
            record.gap_conf = Some(gap_conf);
            best = (z_lower, em, es, gap_rel, gap_conf);
            let se = es / (eval_costs.len() as f64).sqrt();
            if z_lower > em + 3.0 * se {
                log::warn!(
                    "lower bound {z_lower:.6e} above evaluation {em:.6e} + 3 SE: \
                     regression cuts are overestimating the cost-to-go"
                );
            }
            // the magnitude matters: a negative gap means the backward
            // value overshot the forward estimate and has not converged
            if gap_rel.abs() < cfg.rel_gap {
                converged = true;
            }
        }
        record.wall_ms = clock.elapsed().as_millis();
        log::info!(
            "iter {k}: z_lower={z_lower:.6e} fwd={fwd_mean:.6e} cuts={} {}",
            record.cuts_total,
            record
                .eval_mean
                .map(|e| format!("eval={e:.6e} gap={:.3e}", record.gap_rel.unwrap()))
                .unwrap_or_default()
        );
        records.push(record);
        if converged {
            break;
        }
    }
    if best.0 == f64::NEG_INFINITY {
        // max_iterations forced at least one evaluation above
        unreachable!("run always evaluates at least once");
    }
    Ok(RunReport {
        z_lower: best.0,
        eval_mean: best.1,
        eval_std: best.2,
        gap_rel: best.3,
        gap_conf: best.4,
        iterations,
        converged,
        records,
        policy,
    })
}

pub fn write_iteration_csv(records: &[IterationRecord], path: &Path) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "iteration,z_lower,fwd_mean,fwd_std,eval_mean,eval_std,gap_rel,gap_conf,cuts_total,wall_ms"
    )?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.10e}")).unwrap_or_default();
    for r in records {
        writeln!(
            w,
            "{},{:.10e},{:.10e},{:.10e},{},{},{},{},{},{}",
            r.iteration,
            r.z_lower,
            r.fwd_mean,
            r.fwd_std,
            opt(r.eval_mean),
            opt(r.eval_std),
            opt(r.gap_rel),
            opt(r.gap_conf),
            r.cuts_total,
            r.wall_ms
        )?;
    }
    w.flush()
}

const CUT_MAGIC: &[u8; 8] = b"SDDPCUT1";
const CUT_VERSION: u32 = 1;

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64_slice(w: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
    put_u64(w, v.len() as u64)?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn get_u64(r: &mut impl Read) -> Result<u64, EngineError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|_| EngineError::Schema("truncated cut file".into()))?;
    Ok(u64::from_le_bytes(buf))
}

fn get_f64_slice(r: &mut impl Read, cap: u64) -> Result<Vec<f64>, EngineError> {
    let len = get_u64(r)?;
    if len > cap {
        return Err(EngineError::Schema(format!("implausible vector length {len}")));
    }
    let mut out = Vec::with_capacity(len as usize);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut buf).map_err(|_| EngineError::Schema("truncated cut file".into()))?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

/// Versioned binary cut store: meshes and pools, enough to re-evaluate a
/// policy without retraining.
pub fn save_cuts(policy: &Policy, path: &Path) -> Result<(), EngineError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CUT_MAGIC)?;
    w.write_all(&CUT_VERSION.to_le_bytes())?;
    w.write_all(&[match policy.mode {
        Mode::Conditional => 0u8,
        Mode::Augmented => 1u8,
    }])?;
    put_u64(&mut w, policy.partitions.len() as u64)?;
    put_u64(&mut w, policy.state_dim as u64)?;
    put_u64(&mut w, policy.xi_dim as u64)?;
    for p in &policy.partitions {
        put_u64(&mut w, p.dim as u64)?;
        put_u64(&mut w, p.splits.len() as u64)?;
        for &s in &p.splits {
            put_u64(&mut w, s as u64)?;
        }
        put_u64(&mut w, p.boundary_tables().len() as u64)?;
        for table in p.boundary_tables() {
            put_f64_slice(&mut w, table)?;
        }
    }
    for pool in &policy.pools[1..] {
        put_u64(&mut w, pool.cells.len() as u64)?;
        for cell in &pool.cells {
            put_u64(&mut w, cell.len() as u64)?;
            for cut in cell {
                put_f64_slice(&mut w, &cut.intercept)?;
                put_u64(&mut w, cut.slopes.len() as u64)?;
                for s in &cut.slopes {
                    put_f64_slice(&mut w, s)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_cuts(path: &Path) -> Result<Policy, EngineError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| EngineError::Schema("missing header".into()))?;
    if &magic != CUT_MAGIC {
        return Err(EngineError::Schema("bad magic, not a cut file".into()));
    }
    let mut vbuf = [0u8; 4];
    r.read_exact(&mut vbuf).map_err(|_| EngineError::Schema("truncated header".into()))?;
    let version = u32::from_le_bytes(vbuf);
    if version != CUT_VERSION {
        return Err(EngineError::Schema(format!("unsupported version {version}")));
    }
    let mut mode_buf = [0u8; 1];
    r.read_exact(&mut mode_buf).map_err(|_| EngineError::Schema("truncated header".into()))?;
    let mode = match mode_buf[0] {
        0 => Mode::Conditional,
        1 => Mode::Augmented,
        m => return Err(EngineError::Schema(format!("unknown mode tag {m}"))),
    };
    const CAP: u64 = 1 << 32;
    let t_count = get_u64(&mut r)? as usize;
    let state_dim = get_u64(&mut r)? as usize;
    let xi_dim = get_u64(&mut r)? as usize;
    if t_count == 0 || t_count > 1 << 20 || state_dim > 1 << 20 || xi_dim > 1 << 20 {
        return Err(EngineError::Schema("implausible dimensions".into()));
    }
    let mut partitions = Vec::with_capacity(t_count);
    for _ in 0..t_count {
        let dim = get_u64(&mut r)? as usize;
        let n_splits = get_u64(&mut r)?;
        if n_splits > CAP {
            return Err(EngineError::Schema("implausible split count".into()));
        }
        let mut splits = Vec::with_capacity(n_splits as usize);
        for _ in 0..n_splits {
            splits.push(get_u64(&mut r)? as usize);
        }
        let tables = get_u64(&mut r)?;
        if tables > CAP {
            return Err(EngineError::Schema("implausible table count".into()));
        }
        let mut boundaries = Vec::with_capacity(tables as usize);
        for _ in 0..tables {
            boundaries.push(get_f64_slice(&mut r, CAP)?);
        }
        partitions.push(Arc::new(Partition::from_parts(dim, splits, boundaries)));
    }
    let mut pools = vec![CutPool {
        partition: Arc::clone(&partitions[0]),
        cells: vec![Vec::new(); partitions[0].cell_count],
    }];
    for t in 1..t_count {
        let n_cells = get_u64(&mut r)? as usize;
        let partition = Arc::clone(&partitions[t - 1]);
        if n_cells != partition.cell_count {
            return Err(EngineError::Schema(format!(
                "pool {t} has {n_cells} cells, mesh has {}",
                partition.cell_count
            )));
        }
        let mut cells = Vec::with_capacity(n_cells);
        for _ in 0..n_cells {
            let n_cuts = get_u64(&mut r)?;
            if n_cuts > CAP {
                return Err(EngineError::Schema("implausible cut count".into()));
            }
            let mut cuts = Vec::with_capacity(n_cuts as usize);
            for _ in 0..n_cuts {
                let intercept = get_f64_slice(&mut r, CAP)?;
                let n_slopes = get_u64(&mut r)?;
                if n_slopes as usize != state_dim && !(n_slopes == 0 && intercept.len() == 1) {
                    return Err(EngineError::Schema("slope arity mismatch".into()));
                }
                let mut slopes = Vec::with_capacity(n_slopes as usize);
                for _ in 0..n_slopes {
                    slopes.push(get_f64_slice(&mut r, CAP)?);
                }
                cuts.push(Cut { intercept, slopes });
            }
            cells.push(cuts);
        }
        pools.push(CutPool { partition, cells });
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(EngineError::Schema("trailing bytes after cut data".into()));
    }
    Ok(Policy { mode, state_dim, xi_dim, partitions, pools })
}
