//! Dense two-phase simplex for the small LPs behind membership and pruning.
//!
//! Entering columns follow Bland's rule. The ratio test is Harris-style for
//! stability and reverts to strict Bland after a pivot budget, so cycling
//! cannot persist. Problem sizes are a few hundred columns at most, so a full
//! tableau is fine.

const PIVOT_EPS: f64 = 1e-11;
const HARRIS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

/// Minimizes `c·z` subject to `a_ub·z ≤ b_ub`, `a_eq·z = b_eq`, `z ≥ 0`.
pub(crate) fn minimize(
    c: &[f64],
    a_ub: &[Vec<f64>],
    b_ub: &[f64],
    a_eq: &[Vec<f64>],
    b_eq: &[f64],
) -> LpOutcome {
    let n = c.len();
    let m_ub = a_ub.len();
    let m = m_ub + a_eq.len();
    let n_real = n + m_ub;
    let ncol = n_real + m;
    let rhs = ncol;
    let mut t = vec![vec![0.0; ncol + 1]; m + 1];
    for (i, row) in a_ub.iter().enumerate() {
        t[i][..n].copy_from_slice(row);
        t[i][n + i] = 1.0;
        t[i][rhs] = b_ub[i];
    }
    for (k, row) in a_eq.iter().enumerate() {
        let i = m_ub + k;
        t[i][..n].copy_from_slice(row);
        t[i][rhs] = b_eq[k];
    }
    for (i, row) in t.iter_mut().enumerate().take(m) {
        if row[rhs] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        row[n_real + i] = 1.0;
    }
    let mut basis: Vec<usize> = (n_real..ncol).collect();

    // Phase 1: drive the artificial variables to zero.
    for j in 0..n_real {
        t[m][j] = -(0..m).map(|i| t[i][j]).sum::<f64>();
    }
    t[m][rhs] = -(0..m).map(|i| t[i][rhs]).sum::<f64>();
    // Phase 1 is bounded below by zero; a column without a pivot row is a rounding artefact.
    run(&mut t, &mut basis, ncol, true);
    let b_scale = 1.0 + t[..m].iter().map(|r| r[rhs].abs()).fold(0.0, f64::max);
    // rounding in phase 1 grows with the number of pivots
    if -t[m][rhs] > 1e-7 * b_scale {
        return LpOutcome::Infeasible;
    }
    for i in 0..m {
        if basis[i] >= n_real {
            if let Some(j) = (0..n_real).find(|&j| t[i][j].abs() > PIVOT_EPS) {
                pivot(&mut t, &mut basis, i, j);
            }
        }
    }

    // Phase 2 over the real columns only.
    let cost = |j: usize| if j < n { c[j] } else { 0.0 };
    for j in 0..=ncol {
        t[m][j] = if j < n_real { cost(j) } else { 0.0 };
    }
    for i in 0..m {
        let b = basis[i];
        if b < n_real {
            let cb = cost(b);
            if cb != 0.0 {
                for j in 0..=ncol {
                    t[m][j] -= cb * t[i][j];
                }
            }
        }
    }
    if !run(&mut t, &mut basis, n_real, false) {
        return LpOutcome::Unbounded;
    }
    let mut x = vec![0.0; n];
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            x[b] = t[i][rhs];
        }
    }
    let value = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    LpOutcome::Optimal { x, value }
}

/// Pivots until optimal. Only columns below `allowed` may enter. Returns
/// false on unboundedness; with `bounded` set, such columns are skipped instead.
fn run(t: &mut [Vec<f64>], basis: &mut [usize], allowed: usize, bounded: bool) -> bool {
    let m = basis.len();
    let rhs = t[0].len() - 1;
    let mut blocked = vec![false; allowed];
    let budget = 20 * (m + allowed);
    let mut pivots = 0usize;
    loop {
        let Some(j) = (0..allowed).find(|&j| !blocked[j] && t[m][j] < -PIVOT_EPS) else {
            return true;
        };
        // Harris two-pass ratio test: allow a small primal slack, then take the
        // largest pivot among the rows that fit, which keeps degenerate
        // tableaus from pivoting on near-zero entries.
        let strict = pivots >= budget;
        let slack = if strict { 0.0 } else { HARRIS_TOL };
        let mut theta = f64::INFINITY;
        for i in 0..m {
            if t[i][j] > PIVOT_EPS {
                theta = theta.min((t[i][rhs].max(0.0) + slack) / t[i][j]);
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for i in 0..m {
            let a = t[i][j];
            if a > PIVOT_EPS && t[i][rhs].max(0.0) / a <= theta {
                best = match best {
                    Some((bi, _)) if strict && basis[bi] <= basis[i] => best,
                    Some((_, ba)) if !strict && ba >= a => best,
                    _ => Some((i, a)),
                };
            }
        }
        let Some((i, _)) = best else {
            if bounded {
                blocked[j] = true;
                continue;
            }
            return false;
        };
        blocked.iter_mut().for_each(|b| *b = false);
        pivot(t, basis, i, j);
        pivots += 1;
    }
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], r: usize, c: usize) {
    let p = t[r][c];
    t[r].iter_mut().for_each(|v| *v /= p);
    let pivot_row = t[r].clone();
    for (i, row) in t.iter_mut().enumerate() {
        if i == r {
            continue;
        }
        let f = row[c];
        if f != 0.0 {
            for (v, pr) in row.iter_mut().zip(&pivot_row) {
                *v -= f * pr;
            }
        }
    }
    basis[r] = c;
}
