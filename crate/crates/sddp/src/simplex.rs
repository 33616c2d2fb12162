//! Dense bounded-variable primal simplex with dual extraction.
//!
//! Solves `min c'x` subject to `A x = b`, `G x <= h`, `l <= x <= u`
//! (infinite bounds allowed), returning the primal point, the objective
//! and the multipliers `pi` (equalities, `pi = dv/db`) and `rho >= 0`
//! (inequalities, `-rho = dv/dh`) needed for cut construction.
//!
//! Inequalities receive slack variables and phase 1 adds artificials, so
//! every non-structural column is a (signed) unit vector. The basis is
//! factorized by eliminating those unit columns first: only the small
//! square block of structural basic columns against uncovered rows is
//! LU-factorized. Stage problems carry many cut rows but only a handful
//! of structural variables, which keeps each solve at microseconds even
//! with hundreds of rows.

use thiserror::Error;

const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-10;
const STALL_LIMIT: usize = 60;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("simplex iteration limit exceeded: {0}")]
    IterationLimit(String),
    #[error("singular basis encountered: {0}")]
    SingularBasis(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

/// Bounded-variable LP with equality rows and inequality (cut) rows.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub n: usize,
    pub c: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// p x n row-major.
    pub a_eq: Vec<f64>,
    pub b_eq: Vec<f64>,
    /// q x n row-major, meaning `G x <= h`.
    pub a_ineq: Vec<f64>,
    pub h_ineq: Vec<f64>,
}

impl LinearProgram {
    pub fn new(n: usize) -> Self {
        LinearProgram {
            n,
            c: vec![0.0; n],
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            a_eq: Vec::new(),
            b_eq: Vec::new(),
            a_ineq: Vec::new(),
            h_ineq: Vec::new(),
        }
    }

    pub fn num_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.h_ineq.len()
    }

    pub fn add_eq(&mut self, row: &[f64], rhs: f64) {
        debug_assert_eq!(row.len(), self.n);
        self.a_eq.extend_from_slice(row);
        self.b_eq.push(rhs);
    }

    pub fn add_ineq(&mut self, row: &[f64], rhs: f64) {
        debug_assert_eq!(row.len(), self.n);
        self.a_ineq.extend_from_slice(row);
        self.h_ineq.push(rhs);
    }

    pub fn validate(&self) -> Result<(), LpError> {
        for j in 0..self.n {
            if self.lower[j] > self.upper[j] {
                return Err(LpError::InvalidProblem(format!(
                    "lower[{j}] = {} exceeds upper[{j}] = {}",
                    self.lower[j], self.upper[j]
                )));
            }
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.c) || !finite(&self.a_eq) || !finite(&self.a_ineq)
            || !finite(&self.b_eq) || !finite(&self.h_ineq)
        {
            return Err(LpError::InvalidProblem("non-finite matrix entry".into()));
        }
        Ok(())
    }

    /// Text dump for failure triage.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        writeln!(s, "min {:?}", self.c).unwrap();
        for i in 0..self.num_eq() {
            writeln!(s, "eq {}: {:?} = {}", i, &self.a_eq[i * self.n..(i + 1) * self.n], self.b_eq[i]).unwrap();
        }
        for i in 0..self.num_ineq() {
            writeln!(s, "le {}: {:?} <= {}", i, &self.a_ineq[i * self.n..(i + 1) * self.n], self.h_ineq[i]).unwrap();
        }
        writeln!(s, "lower {:?}", self.lower).unwrap();
        writeln!(s, "upper {:?}", self.upper).unwrap();
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub pi: Vec<f64>,
    pub rho: Vec<f64>,
    pub reduced_costs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarStatus {
    Basic,
    AtLower,
    AtUpper,
    FreeAtZero,
}

struct Worker {
    n: usize, // structural
    m: usize, // equality + inequality rows
    ncols: usize,
    /// Structural columns, column-major m x n.
    acol: Vec<f64>,
    /// For var >= n: (row, coefficient) of its unit column.
    unit: Vec<(usize, f64)>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    status: Vec<VarStatus>,
    basis: Vec<usize>,
    rhs: Vec<f64>,
    feas_tol: f64,
    // factorization workspace
    tight_rows: Vec<usize>,
    struct_basics: Vec<usize>,
    lu: Vec<f64>,
    lu_piv: Vec<usize>,
    pos_in_tight: Vec<usize>,
    unit_on_row: Vec<usize>, // m entries: covering unit basic var or usize::MAX
}

impl Worker {
    fn refactorize(&mut self) -> Result<(), LpError> {
        self.unit_on_row.iter_mut().for_each(|v| *v = usize::MAX);
        self.struct_basics.clear();
        for &b in &self.basis {
            if b < self.n {
                self.struct_basics.push(b);
            } else {
                let (r, _) = self.unit[b - self.n];
                if self.unit_on_row[r] != usize::MAX {
                    return Err(LpError::SingularBasis(format!("two unit basics on row {r}")));
                }
                self.unit_on_row[r] = b;
            }
        }
        self.tight_rows.clear();
        for r in 0..self.m {
            if self.unit_on_row[r] == usize::MAX {
                self.tight_rows.push(r);
            }
        }
        let k = self.struct_basics.len();
        if self.tight_rows.len() != k {
            return Err(LpError::SingularBasis(format!(
                "{} tight rows for {} structural basics",
                self.tight_rows.len(),
                k
            )));
        }
        self.pos_in_tight.iter_mut().for_each(|v| *v = usize::MAX);
        for (i, &r) in self.tight_rows.iter().enumerate() {
            self.pos_in_tight[r] = i;
        }
        self.lu.resize(k * k, 0.0);
        self.lu_piv.resize(k, 0);
        for (i, &r) in self.tight_rows.iter().enumerate() {
            for (j, &v) in self.struct_basics.iter().enumerate() {
                self.lu[i * k + j] = self.acol[v * self.m + r];
            }
        }
        // LU with partial pivoting, in place
        for col in 0..k {
            let mut best = col;
            let mut best_abs = self.lu[col * k + col].abs();
            for r in col + 1..k {
                let a = self.lu[r * k + col].abs();
                if a > best_abs {
                    best = r;
                    best_abs = a;
                }
            }
            if best_abs < PIVOT_TOL {
                return Err(LpError::SingularBasis(format!("LU pivot {best_abs:.3e} at col {col}")));
            }
            self.lu_piv[col] = best;
            if best != col {
                for j in 0..k {
                    self.lu.swap(col * k + j, best * k + j);
                }
            }
            let d = self.lu[col * k + col];
            for r in col + 1..k {
                let f = self.lu[r * k + col] / d;
                self.lu[r * k + col] = f;
                for j in col + 1..k {
                    self.lu[r * k + j] -= f * self.lu[col * k + j];
                }
            }
        }
        Ok(())
    }

    fn lu_solve(&self, b: &mut [f64]) {
        let k = self.struct_basics.len();
        // the factorization swaps whole rows, multipliers included, so all
        // interchanges must be applied before the triangular solves
        for col in 0..k {
            b.swap(col, self.lu_piv[col]);
        }
        for col in 0..k {
            for r in col + 1..k {
                b[r] -= self.lu[r * k + col] * b[col];
            }
        }
        for col in (0..k).rev() {
            b[col] /= self.lu[col * k + col];
            for r in 0..col {
                b[r] -= self.lu[r * k + col] * b[col];
            }
        }
    }

    fn lu_solve_transposed(&self, b: &mut [f64]) {
        let k = self.struct_basics.len();
        // U^T forward
        for col in 0..k {
            b[col] /= self.lu[col * k + col];
            for r in col + 1..k {
                b[r] -= self.lu[col * k + r] * b[col];
            }
        }
        // L^T backward, then undo the row interchanges in reverse order
        for col in (0..k).rev() {
            for r in col + 1..k {
                b[col] -= self.lu[r * k + col] * b[r];
            }
        }
        for col in (0..k).rev() {
            b.swap(col, self.lu_piv[col]);
        }
    }

    /// Solve `B z = v`; returns one multiplier per basic variable
    /// (`z[j]` corresponds to `struct_basics`/unit basics, exposed via a
    /// dense per-variable map into `out`, indexed like `basis`).
    fn ftran(&self, v: &[f64], out: &mut [f64]) {
        let k = self.struct_basics.len();
        let mut small = vec![0.0; k];
        for (i, &r) in self.tight_rows.iter().enumerate() {
            small[i] = v[r];
        }
        self.lu_solve(&mut small);
        // struct_basics was filled scanning basis in order, so positions of
        // structural basics enumerate the small solution in sequence
        let mut si = 0usize;
        for (pos, &b) in self.basis.iter().enumerate() {
            if b < self.n {
                out[pos] = small[si];
                si += 1;
            }
        }
        for (pos, &b) in self.basis.iter().enumerate() {
            if b >= self.n {
                let (r, cf) = self.unit[b - self.n];
                let mut dot = 0.0;
                for (j, &vbar) in self.struct_basics.iter().enumerate() {
                    dot += self.acol[vbar * self.m + r] * small[j];
                }
                out[pos] = (v[r] - dot) / cf;
            }
        }
    }

    /// Solve `B^T y = cost over basics`, dense `y` over rows.
    fn btran(&self, y: &mut [f64]) {
        let k = self.struct_basics.len();
        for r in 0..self.m {
            let u = self.unit_on_row[r];
            if u != usize::MAX {
                let (_, cf) = self.unit[u - self.n];
                y[r] = self.cost[u] / cf;
            } else {
                y[r] = 0.0;
            }
        }
        let mut small = vec![0.0; k];
        for (j, &v) in self.struct_basics.iter().enumerate() {
            let mut rhs = self.cost[v];
            for r in 0..self.m {
                if self.unit_on_row[r] != usize::MAX {
                    rhs -= self.acol[v * self.m + r] * y[r];
                }
            }
            small[j] = rhs;
        }
        self.lu_solve_transposed(&mut small);
        for (i, &r) in self.tight_rows.iter().enumerate() {
            y[r] = small[i];
        }
    }

    /// Recompute all basic variable values from the nonbasic point.
    fn recompute_basics(&mut self) {
        let mut resid = self.rhs.clone();
        for j in 0..self.ncols {
            if self.status[j] == VarStatus::Basic || self.x[j] == 0.0 {
                continue;
            }
            if j < self.n {
                let xj = self.x[j];
                for r in 0..self.m {
                    resid[r] -= self.acol[j * self.m + r] * xj;
                }
            } else {
                let (r, cf) = self.unit[j - self.n];
                resid[r] -= cf * self.x[j];
            }
        }
        let mut vals = vec![0.0; self.m];
        self.ftran(&resid, &mut vals);
        for (pos, &b) in self.basis.iter().enumerate() {
            self.x[b] = vals[pos];
        }
    }

    fn reduced_cost(&self, y: &[f64], j: usize) -> f64 {
        if j < self.n {
            let mut d = self.cost[j];
            for r in 0..self.m {
                d -= y[r] * self.acol[j * self.m + r];
            }
            d
        } else {
            let (r, cf) = self.unit[j - self.n];
            self.cost[j] - y[r] * cf
        }
    }

    /// Primal simplex on the current cost vector. Returns Ok(true) if
    /// optimal, Ok(false) if unbounded.
    fn optimize(&mut self) -> Result<bool, LpError> {
        let iter_limit = 400 * (self.m + self.n) + 2000;
        let mut y = vec![0.0; self.m];
        let mut w = vec![0.0; self.m];
        let mut col = vec![0.0; self.m];
        let mut stall = 0usize;
        let mut bland = false;
        // entering variables whose pivot produced a numerically singular
        // basis; skipped until some other pivot succeeds
        let mut barred: Vec<usize> = Vec::new();
        let mut barred_clears = 0usize;
        self.refactorize()?;
        self.recompute_basics();
        for _iter in 0..iter_limit {
            self.btran(&mut y);
            // pricing
            let mut entering = usize::MAX;
            let mut entering_dir = 1.0;
            let mut best = OPT_TOL;
            for j in 0..self.ncols {
                let st = self.status[j];
                if st == VarStatus::Basic || self.lower[j] == self.upper[j] {
                    continue;
                }
                if barred.contains(&j) {
                    continue;
                }
                let d = self.reduced_cost(&y, j);
                let (viol, dir) = match st {
                    VarStatus::AtLower => (-d, 1.0),
                    VarStatus::AtUpper => (d, -1.0),
                    VarStatus::FreeAtZero => (d.abs(), if d > 0.0 { -1.0 } else { 1.0 }),
                    VarStatus::Basic => unreachable!(),
                };
                if viol > best {
                    entering = j;
                    entering_dir = dir;
                    if bland {
                        break; // first eligible index
                    }
                    best = viol;
                }
            }
            if entering == usize::MAX {
                if barred.is_empty() {
                    return Ok(true);
                }
                if barred_clears >= 3 {
                    // every improving column leads to a singular basis;
                    // claiming optimality here would silently return a
                    // wrong objective
                    return Err(LpError::SingularBasis(format!(
                        "all improving columns {barred:?} pivot into singular bases"
                    )));
                }
                // give barred variables another chance; bases change
                // between attempts
                barred.clear();
                barred_clears += 1;
                continue;
            }
            // direction through the basis
            if entering < self.n {
                col.copy_from_slice(&self.acol[entering * self.m..(entering + 1) * self.m]);
            } else {
                col.iter_mut().for_each(|v| *v = 0.0);
                let (r, cf) = self.unit[entering - self.n];
                col[r] = cf;
            }
            self.ftran(&col, &mut w);

            // ratio test: basic variables move by -dir * w. Two passes in
            // the spirit of Harris: find the minimal ratio first, then
            // leave on the largest pivot among the near-ties, which keeps
            // the next basis well conditioned.
            let flip_limit = if self.lower[entering].is_finite()
                && self.upper[entering].is_finite()
            {
                self.upper[entering] - self.lower[entering]
            } else {
                f64::INFINITY
            };
            let ratio = |pos: usize| -> Option<(f64, bool)> {
                let b = self.basis[pos];
                let step = entering_dir * w[pos];
                if step > PIVOT_TOL && self.lower[b].is_finite() {
                    Some((((self.x[b] - self.lower[b]) / step).max(0.0), false))
                } else if step < -PIVOT_TOL && self.upper[b].is_finite() {
                    Some((((self.upper[b] - self.x[b]) / -step).max(0.0), true))
                } else {
                    None
                }
            };
            let mut t_rows = f64::INFINITY;
            for pos in 0..self.m {
                if let Some((t, _)) = ratio(pos) {
                    t_rows = t_rows.min(t);
                }
            }
            if !t_rows.is_finite() && !flip_limit.is_finite() {
                return Ok(false); // unbounded ray
            }
            let mut limit = flip_limit;
            let mut leave_pos = usize::MAX;
            let mut leave_to_upper = false;
            if t_rows < flip_limit {
                let slack = 1e-12 + 1e-9 * t_rows;
                let mut best_pivot = 0.0;
                for pos in 0..self.m {
                    if let Some((t, to_upper)) = ratio(pos) {
                        if t <= t_rows + slack && w[pos].abs() > best_pivot {
                            best_pivot = w[pos].abs();
                            limit = t;
                            leave_pos = pos;
                            leave_to_upper = to_upper;
                        }
                    }
                }
            }
            if limit <= 1e-12 {
                stall += 1;
                if stall > STALL_LIMIT {
                    bland = true;
                }
            } else {
                stall = 0;
                bland = false;
            }
            if leave_pos == usize::MAX {
                // bound-to-bound flip of the entering variable
                self.x[entering] += entering_dir * limit;
                self.status[entering] = if entering_dir > 0.0 {
                    VarStatus::AtUpper
                } else {
                    VarStatus::AtLower
                };
                self.recompute_basics();
                continue;
            }
            // pivot
            let leaving = self.basis[leave_pos];
            let entering_status = self.status[entering];
            let leaving_x = self.x[leaving];
            self.status[leaving] = if leave_to_upper {
                self.x[leaving] = self.upper[leaving];
                VarStatus::AtUpper
            } else {
                self.x[leaving] = self.lower[leaving];
                VarStatus::AtLower
            };
            self.x[entering] += entering_dir * limit;
            self.status[entering] = VarStatus::Basic;
            self.basis[leave_pos] = entering;
            if self.refactorize().is_err() {
                // the new basis is numerically singular; undo the pivot
                // and bar the entering column for now
                self.basis[leave_pos] = leaving;
                self.status[leaving] = VarStatus::Basic;
                self.x[leaving] = leaving_x;
                self.x[entering] -= entering_dir * limit;
                self.status[entering] = entering_status;
                self.refactorize()?; // the previous basis factorized before
                barred.push(entering);
                continue;
            }
            barred.clear();
            self.recompute_basics();
        }
        Err(LpError::IterationLimit(format!(
            "no convergence in {iter_limit} iterations (m={}, n={}, basis={:?})",
            self.m, self.n, self.basis
        )))
    }
}

/// Solve the LP. Statuses are returned, not raised; only iteration-limit
/// or singular-basis failures are errors.
pub fn solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let n = lp.n;
    let p = lp.num_eq();
    let q = lp.num_ineq();
    let m = p + q;
    let ncols = n + q + m; // structural, slacks, one artificial per row

    let mut acol = vec![0.0; n * m];
    for j in 0..n {
        for i in 0..p {
            acol[j * m + i] = lp.a_eq[i * n + j];
        }
        for i in 0..q {
            acol[j * m + p + i] = lp.a_ineq[i * n + j];
        }
    }
    let mut rhs = vec![0.0; m];
    rhs[..p].copy_from_slice(&lp.b_eq);
    rhs[p..].copy_from_slice(&lp.h_ineq);
    let rhs_scale = rhs.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let feas_tol = 1e-8 * (1.0 + rhs_scale);

    let mut lower = vec![0.0; ncols];
    let mut upper = vec![0.0; ncols];
    let mut cost = vec![0.0; ncols];
    lower[..n].copy_from_slice(&lp.lower);
    upper[..n].copy_from_slice(&lp.upper);
    for j in n..n + q {
        upper[j] = f64::INFINITY; // slack in [0, inf)
    }
    // artificial bounds are set row by row below

    let mut unit = Vec::with_capacity(q + m);
    for i in 0..q {
        unit.push((p + i, 1.0)); // slack columns
    }
    for i in 0..m {
        unit.push((i, 1.0)); // artificial sign fixed after residuals are known
    }

    let mut x = vec![0.0; ncols];
    let mut status = vec![VarStatus::AtLower; ncols];
    for j in 0..n {
        if lp.lower[j].is_finite() {
            x[j] = lp.lower[j];
            status[j] = VarStatus::AtLower;
        } else if lp.upper[j].is_finite() {
            x[j] = lp.upper[j];
            status[j] = VarStatus::AtUpper;
        } else {
            x[j] = 0.0;
            status[j] = VarStatus::FreeAtZero;
        }
    }
    // residuals at the initial nonbasic point
    let mut resid = rhs.clone();
    for j in 0..n {
        if x[j] != 0.0 {
            for r in 0..m {
                resid[r] -= acol[j * m + r] * x[j];
            }
        }
    }
    let mut basis = Vec::with_capacity(m);
    let mut any_artificial = false;
    for r in 0..m {
        let art = n + q + r;
        if r >= p && resid[r] >= 0.0 {
            // slack absorbs the inequality residual
            let s = n + (r - p);
            x[s] = resid[r];
            status[s] = VarStatus::Basic;
            basis.push(s);
            lower[art] = 0.0;
            upper[art] = 0.0;
        } else {
            let sign = if r >= p {
                -1.0
            } else if resid[r] >= 0.0 {
                1.0
            } else {
                -1.0
            };
            unit[q + r] = (r, sign);
            x[art] = resid[r] / sign;
            status[art] = VarStatus::Basic;
            basis.push(art);
            upper[art] = f64::INFINITY;
            any_artificial = true;
        }
    }

    let mut w = Worker {
        n,
        m,
        ncols,
        acol,
        unit,
        lower,
        upper,
        cost,
        x,
        status,
        basis,
        rhs,
        feas_tol,
        tight_rows: Vec::new(),
        struct_basics: Vec::new(),
        lu: Vec::new(),
        lu_piv: Vec::new(),
        pos_in_tight: vec![usize::MAX; m],
        unit_on_row: vec![usize::MAX; m],
    };

    if any_artificial {
        for r in 0..m {
            w.cost[n + q + r] = 1.0;
        }
        let optimal = w.optimize()?;
        debug_assert!(optimal, "phase 1 objective is bounded below by zero");
        let infeas: f64 = (0..m).map(|r| w.x[n + q + r].max(0.0)).sum();
        if infeas > w.feas_tol {
            return Ok(infeasible_solution(lp, p, q));
        }
        // pin artificials for phase 2; basic ones stay at (numerical) zero
        for r in 0..m {
            let art = n + q + r;
            w.cost[art] = 0.0;
            w.lower[art] = 0.0;
            w.upper[art] = 0.0;
            if w.status[art] != VarStatus::Basic {
                w.x[art] = 0.0;
                w.status[art] = VarStatus::AtLower;
            }
        }
    }

    cost = vec![0.0; ncols];
    cost[..n].copy_from_slice(&lp.c);
    w.cost = cost;
    let optimal = w.optimize()?;
    if !optimal {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: w.x[..n].to_vec(),
            objective: f64::NEG_INFINITY,
            pi: vec![0.0; p],
            rho: vec![0.0; q],
            reduced_costs: vec![0.0; n],
        });
    }

    let mut y = vec![0.0; m];
    w.btran(&mut y);
    let pi = y[..p].to_vec();
    let rho: Vec<f64> = y[p..].iter().map(|&v| -v).collect();
    let reduced_costs: Vec<f64> = (0..n).map(|j| w.reduced_cost(&y, j)).collect();
    let objective: f64 = (0..n).map(|j| lp.c[j] * w.x[j]).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x: w.x[..n].to_vec(),
        objective,
        pi,
        rho,
        reduced_costs,
    })
}

fn infeasible_solution(lp: &LinearProgram, p: usize, q: usize) -> LpSolution {
    LpSolution {
        status: LpStatus::Infeasible,
        x: vec![0.0; lp.n],
        objective: f64::INFINITY,
        pi: vec![0.0; p],
        rho: vec![0.0; q],
        reduced_costs: vec![0.0; lp.n],
    }
}

/// KKT residual report for an optimal solution.
#[derive(Debug, Clone, Copy)]
pub struct KktReport {
    pub max_primal: f64,
    pub max_dual: f64,
    pub max_complementarity: f64,
}

/// Check primal feasibility, stationarity (with bound-activity signs) and
/// complementary slackness of `sol` against `lp`.
pub fn check_kkt(lp: &LinearProgram, sol: &LpSolution) -> KktReport {
    let n = lp.n;
    let mut max_primal = 0.0f64;
    for i in 0..lp.num_eq() {
        let ax: f64 = (0..n).map(|j| lp.a_eq[i * n + j] * sol.x[j]).sum();
        max_primal = max_primal.max((ax - lp.b_eq[i]).abs());
    }
    for i in 0..lp.num_ineq() {
        let gx: f64 = (0..n).map(|j| lp.a_ineq[i * n + j] * sol.x[j]).sum();
        max_primal = max_primal.max(gx - lp.h_ineq[i]);
    }
    for j in 0..n {
        max_primal = max_primal.max(lp.lower[j] - sol.x[j]).max(sol.x[j] - lp.upper[j]);
    }

    let mut max_dual = 0.0f64;
    for (i, &r) in sol.rho.iter().enumerate() {
        let _ = i;
        max_dual = max_dual.max(-r); // rho must be nonnegative
    }
    for j in 0..n {
        // stationarity: c - A'pi + G'rho = reduced cost
        let mut d = lp.c[j];
        for i in 0..lp.num_eq() {
            d -= lp.a_eq[i * n + j] * sol.pi[i];
        }
        for i in 0..lp.num_ineq() {
            d += lp.a_ineq[i * n + j] * sol.rho[i];
        }
        // sign by bound activity
        let at_lower = (sol.x[j] - lp.lower[j]).abs() <= 1e-7 * (1.0 + lp.lower[j].abs());
        let at_upper = (sol.x[j] - lp.upper[j]).abs() <= 1e-7 * (1.0 + lp.upper[j].abs());
        let viol = if at_lower && at_upper {
            0.0
        } else if at_lower {
            (-d).max(0.0)
        } else if at_upper {
            d.max(0.0)
        } else {
            d.abs()
        };
        max_dual = max_dual.max(viol);
        max_dual = max_dual.max((d - sol.reduced_costs[j]).abs());
    }

    let mut max_comp = 0.0f64;
    for i in 0..lp.num_ineq() {
        let gx: f64 = (0..n).map(|j| lp.a_ineq[i * n + j] * sol.x[j]).sum();
        max_comp = max_comp.max((sol.rho[i] * (lp.h_ineq[i] - gx)).abs());
    }
    KktReport {
        max_primal,
        max_dual,
        max_complementarity: max_comp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_only_lp() {
        let mut lp = LinearProgram::new(1);
        lp.c[0] = -1.0;
        lp.lower[0] = 0.0;
        lp.upper[0] = 1.0;
        let sol = solve(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        assert!((sol.objective + 1.0).abs() < 1e-9);
        assert!((sol.reduced_costs[0] + 1.0).abs() < 1e-9);
    }

    fn two_var_example() -> LinearProgram {
        let mut lp = LinearProgram::new(2);
        lp.c = vec![-1.0, -2.0];
        lp.lower = vec![0.0, 0.0];
        lp.upper = vec![1.0, 1.0];
        lp.add_eq(&[1.0, 1.0], 1.0);
        lp
    }

    #[test]
    fn two_var_equality_lp_with_duals() {
        let sol = solve(&two_var_example()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0]).abs() < 1e-9);
        assert!((sol.x[1] - 1.0).abs() < 1e-9);
        assert!((sol.objective + 2.0).abs() < 1e-9);
        // v(b) = -2b near b = 1
        assert!((sol.pi[0] + 2.0).abs() < 1e-9, "pi = {:?}", sol.pi);
        let report = check_kkt(&two_var_example(), &sol);
        assert!(report.max_primal < 1e-9);
        assert!(report.max_dual < 1e-9);
        assert!(report.max_complementarity < 1e-9);
    }

    #[test]
    fn infeasible_by_bounds() {
        let mut lp = LinearProgram::new(2);
        lp.lower = vec![0.0, 0.0];
        lp.upper = vec![1.0, 1.0];
        lp.add_eq(&[1.0, 1.0], 3.0);
        let sol = solve(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_detection() {
        let mut lp = LinearProgram::new(1);
        lp.c[0] = -1.0;
        lp.lower[0] = 0.0;
        let sol = solve(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn inequality_duals_have_the_pinned_sign() {
        // min x, x >= 0 free above, -x <= -3  =>  x = 3, rho = dv/d(-h)...
        let mut lp = LinearProgram::new(1);
        lp.c[0] = 1.0;
        lp.lower[0] = 0.0;
        lp.add_ineq(&[-1.0], -3.0);
        let sol = solve(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 3.0).abs() < 1e-9);
        // raising h by delta lowers the optimum by delta: -rho = dv/dh = -1
        assert!((sol.rho[0] - 1.0).abs() < 1e-9, "rho = {:?}", sol.rho);
    }

    #[test]
    fn kkt_flags_injected_violations() {
        let lp = two_var_example();
        let sol = solve(&lp).unwrap();
        let mut perturbed = sol.clone();
        perturbed.x[1] += 1e-3;
        let report = check_kkt(&lp, &perturbed);
        assert!((report.max_primal - 1e-3).abs() < 1e-6);
        let mut negated = sol.clone();
        negated.rho = vec![];
        let mut lp2 = lp.clone();
        lp2.add_ineq(&[1.0, 0.0], 0.5);
        let sol2 = solve(&lp2).unwrap();
        let mut bad = sol2.clone();
        bad.rho[0] = -bad.rho[0].abs() - 1.0;
        let report2 = check_kkt(&lp2, &bad);
        assert!(report2.max_dual >= 1.0);
        let _ = negated;
    }

    #[test]
    fn free_variable_equality() {
        // min x1 + x2, x1 free, x2 in [0, 10], x1 + x2 = 4
        let mut lp = LinearProgram::new(2);
        lp.c = vec![1.0, 1.0];
        lp.lower[1] = 0.0;
        lp.upper[1] = 10.0;
        lp.add_eq(&[1.0, 1.0], 4.0);
        let sol = solve(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 4.0).abs() < 1e-9);
    }

    #[test]
    fn negative_lower_bounds_and_cut_rows() {
        // storage-like stage: min 50 u + r, C - u = 300, u in [-45, 60],
        // C in [0, 360], cuts r >= -10000, r >= -40 C + 2000
        let mut lp = LinearProgram::new(3);
        lp.c = vec![50.0, 0.0, 1.0];
        lp.lower = vec![-45.0, 0.0, f64::NEG_INFINITY];
        lp.upper = vec![60.0, 360.0, f64::INFINITY];
        lp.add_eq(&[-1.0, 1.0, 0.0], 300.0);
        lp.add_ineq(&[0.0, 0.0, -1.0], 10000.0);
        lp.add_ineq(&[0.0, -40.0, -1.0], -2000.0);
        let sol = solve(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        let report = check_kkt(&lp, &sol);
        assert!(report.max_primal < 1e-6, "{report:?}");
        assert!(report.max_dual < 1e-6, "{report:?}");
        // candidates: withdraw to u=-45 (C=255, r=2000-40*255) vs inject
        // enumerate u endpoints and interior C bound
        let eval = |u: f64| {
            let c = 300.0 + u;
            50.0 * u + (-10000.0f64).max(2000.0 - 40.0 * c)
        };
        let best = [-45.0, 60.0, 0.0, -300.0 / 40.0]
            .iter()
            .map(|&u| eval(u))
            .fold(f64::INFINITY, f64::min);
        assert!((sol.objective - best).abs() <= 1e-6 * best.abs().max(1.0));
    }

    #[test]
    fn permuted_lu_regression() {
        // basis factorizations here interchange LU rows with unequal
        // column-0 multipliers; an interleaved permutation in the solve
        // once returned a point violating both a bound and the equality
        let mut lp = LinearProgram::new(3);
        lp.c = vec![45.948040405287564, 0.0, 1.0];
        lp.lower = vec![-45_000.0, 0.0, f64::NEG_INFINITY];
        lp.upper = vec![60_000.0, 360_000.0, f64::INFINITY];
        lp.add_eq(&[-1.0, 1.0, 0.0], 209_999.99999999985);
        lp.add_ineq(&[0.0, 0.0, -1.0], 13_214_293.142563853);
        lp.add_ineq(&[0.0, -49.29078220225719, -1.0], 1_767_957.0178972967);
        lp.add_ineq(&[0.0, -48.515641658164576, -1.0], 559_954.881134498);
        lp.add_ineq(&[0.0, -48.515641658164576, -1.0], 559_954.8811344999);
        let sol = solve(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        for j in 0..lp.n {
            assert!(
                sol.x[j] >= lp.lower[j] - 1e-6 && sol.x[j] <= lp.upper[j] + 1e-6,
                "var {j} = {}",
                sol.x[j]
            );
        }
        let report = check_kkt(&lp, &sol);
        assert!(report.max_primal < 1e-6, "{report:?}");
        assert!(report.max_dual < 1e-6, "{report:?}");
        assert!(report.max_complementarity < 1e-4, "{report:?}");
    }
}
