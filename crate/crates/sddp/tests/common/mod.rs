//! Shared helpers for the integration suites: a brute-force LP oracle
//! and small deterministic instance generators.

use sddp::rng;
use sddp::simplex::{LinearProgram, LpStatus};

/// Solve a fully boxed LP by enumerating candidate vertices: every
/// choice of `n` active constraints among equality rows, inequality
/// rows and variable bounds. Exponential, so only for tiny instances.
///
/// All bounds must be finite, which makes the feasible set a polytope:
/// it is nonempty iff it has a feasible vertex, and the minimum is
/// attained at one.
pub fn enumerate_lp(lp: &LinearProgram) -> (LpStatus, f64) {
    let n = lp.n;
    assert!(n <= 6, "vertex enumeration is exponential in n");
    assert!(
        lp.lower.iter().chain(&lp.upper).all(|v| v.is_finite()),
        "oracle needs a bounded box"
    );
    let p = lp.num_eq();
    let q = lp.num_ineq();
    // constraint list: equalities, inequalities, lower bounds, upper bounds
    let total = p + q + 2 * n;
    let row = |k: usize, j: usize| -> f64 {
        if k < p {
            lp.a_eq[k * n + j]
        } else if k < p + q {
            lp.a_ineq[(k - p) * n + j]
        } else if k < p + q + n {
            if k - p - q == j { 1.0 } else { 0.0 }
        } else {
            if k - p - q - n == j { 1.0 } else { 0.0 }
        }
    };
    let rhs = |k: usize| -> f64 {
        if k < p {
            lp.b_eq[k]
        } else if k < p + q {
            lp.h_ineq[k - p]
        } else if k < p + q + n {
            lp.lower[k - p - q]
        } else {
            lp.upper[k - p - q - n]
        }
    };

    let feas_tol = 1e-7;
    let mut best: Option<f64> = None;
    let mut active = vec![0usize; n];
    // iterate over all C(total, n) combinations that include every equality
    let mut combo: Vec<usize> = (0..n).collect();
    loop {
        if p == 0 || combo[..p.min(n)] == (0..p.min(n)).collect::<Vec<_>>()[..] {
            active[..n].copy_from_slice(&combo);
            if let Some(x) = solve_square(n, &active, &row, &rhs) {
                if is_feasible(lp, &x, feas_tol) {
                    let obj: f64 = lp.c.iter().zip(&x).map(|(c, v)| c * v).sum();
                    best = Some(match best {
                        Some(b) if b <= obj => b,
                        _ => obj,
                    });
                }
            }
        }
        // next combination
        let mut i = n;
        loop {
            if i == 0 {
                return match best {
                    Some(v) => (LpStatus::Optimal, v),
                    None => (LpStatus::Infeasible, f64::NAN),
                };
            }
            i -= 1;
            if combo[i] + (n - i) <= total {
                combo[i] += 1;
                if combo[i] + (n - 1 - i) < total {
                    for j in i + 1..n {
                        combo[j] = combo[j - 1] + 1;
                    }
                    break;
                }
            }
        }
        if combo[n - 1] >= total {
            continue;
        }
    }
}

fn solve_square(
    n: usize,
    active: &[usize],
    row: &dyn Fn(usize, usize) -> f64,
    rhs: &dyn Fn(usize) -> f64,
) -> Option<Vec<f64>> {
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for (i, &k) in active.iter().enumerate() {
        for j in 0..n {
            a[i * n + j] = row(k, j);
        }
        b[i] = rhs(k);
    }
    // Gaussian elimination with partial pivoting
    for col in 0..n {
        let (pivot, mag) = (col..n)
            .map(|r| (r, a[r * n + col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if mag < 1e-9 {
            return None; // dependent constraint set
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            b.swap(col, pivot);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            for j in col..n {
                a[r * n + j] -= f * a[col * n + j];
            }
            b[r] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        for r in 0..col {
            b[r] -= a[r * n + col] / a[col * n + col] * b[col];
        }
        b[col] /= a[col * n + col];
    }
    Some(b)
}

pub fn is_feasible(lp: &LinearProgram, x: &[f64], tol: f64) -> bool {
    let n = lp.n;
    let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for j in 0..n {
        if x[j] < lp.lower[j] - tol * scale || x[j] > lp.upper[j] + tol * scale {
            return false;
        }
    }
    for i in 0..lp.num_eq() {
        let dot: f64 = (0..n).map(|j| lp.a_eq[i * n + j] * x[j]).sum();
        if (dot - lp.b_eq[i]).abs() > tol * scale {
            return false;
        }
    }
    for i in 0..lp.num_ineq() {
        let dot: f64 = (0..n).map(|j| lp.a_ineq[i * n + j] * x[j]).sum();
        if dot > lp.h_ineq[i] + tol * scale {
            return false;
        }
    }
    true
}

/// Deterministic random boxed LP with a mix of equality and inequality
/// rows; always has finite bounds so `enumerate_lp` applies.
pub fn random_boxed_lp(seed: u64, instance: u64) -> LinearProgram {
    let g = |component: u64| rng::gaussian(seed, 7 << 32, instance, 0, component);
    let u = |component: u64| rng::uniform(seed, 7 << 32, instance, 1, component);
    let n = 2 + (u(0) * 3.0) as usize; // 2..=4
    let p = (u(1) * 2.0) as usize; // 0..=1
    let q = 1 + (u(2) * 3.0) as usize; // 1..=3
    let mut lp = LinearProgram::new(n);
    let mut comp = 10u64;
    let mut next = || {
        comp += 1;
        g(comp)
    };
    for j in 0..n {
        lp.c[j] = next();
        let a = 2.0 * next();
        let b = 2.0 * next();
        lp.lower[j] = a.min(b);
        lp.upper[j] = a.max(b) + 0.5;
    }
    for _ in 0..p {
        let row: Vec<f64> = (0..n).map(|_| next()).collect();
        // anchor the rhs near the box center so most instances are feasible
        let mid: f64 = (0..n).map(|j| row[j] * 0.5 * (lp.lower[j] + lp.upper[j])).sum();
        lp.add_eq(&row, mid + 0.2 * next());
    }
    for _ in 0..q {
        let row: Vec<f64> = (0..n).map(|_| next()).collect();
        let mid: f64 = (0..n).map(|j| row[j] * 0.5 * (lp.lower[j] + lp.upper[j])).sum();
        lp.add_ineq(&row, mid + next().abs());
    }
    lp
}
