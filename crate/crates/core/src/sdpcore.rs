//! Small dense LMI solver: maximize `t` such that every block `F_b(y) ⪰ t·I`
//! and `a·y = b` for each equality.
//!
//! Equalities are eliminated with an orthonormal null-space basis,
//! `y = y₀ + N z`. The remaining problem is solved by a log-barrier
//! path-following method in `(z, t)`, with a large ball `‖z‖ ≤ R` keeping
//! the barrier bounded. Newton steps are damped by backtracking, and
//! feasibility is tested by Cholesky.
//!
//! Every iterate also yields a dual bound. Normalizing `Z_b = S_b⁻¹ / Σ tr S_b⁻¹`
//! and pairing it with the slacks gives `t ≤ Σ tr(Z_b E₀_b) + R‖r‖` for every
//! point of the ball, where `r_i = Σ tr(Z_b E_bi)`. "Infeasible" is reported
//! only when this bound is negative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{self, Mat};

pub const MAX_BLOCK_SIZE: usize = 64;
pub const MAX_DIM: usize = 512;
const SYMMETRY_TOL: f64 = 1e-12;
const EQUALITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiBlock {
    pub f0: Mat,
    /// One coefficient matrix per decision variable.
    pub coeffs: Vec<Mat>,
}

impl LmiBlock {
    pub fn size(&self) -> usize {
        self.f0.rows()
    }

    pub fn value(&self, y: &[f64]) -> Mat {
        let mut v = self.f0.clone();
        for (c, yj) in self.coeffs.iter().zip(y) {
            if *yj != 0.0 {
                numkit::axpy(*yj, c.as_slice(), v.as_mut_slice());
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiProblem {
    pub dim: usize,
    pub blocks: Vec<LmiBlock>,
    pub equalities: Vec<(Vec<f64>, f64)>,
}

impl LmiProblem {
    pub fn new(dim: usize, blocks: Vec<LmiBlock>, equalities: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        if dim > MAX_DIM {
            return Err(Error::Size(format!("{dim} decision variables exceed {MAX_DIM}")));
        }
        for (i, b) in blocks.iter().enumerate() {
            let n = b.f0.rows();
            if !b.f0.is_square() || n == 0 || n > MAX_BLOCK_SIZE {
                return Err(Error::Shape(format!("block {i} is {:?}", b.f0.shape())));
            }
            if b.coeffs.len() != dim {
                return Err(Error::Shape(format!(
                    "block {i} has {} coefficient matrices for {dim} variables",
                    b.coeffs.len()
                )));
            }
            for m in std::iter::once(&b.f0).chain(&b.coeffs) {
                if m.shape() != (n, n) {
                    return Err(Error::Shape(format!("block {i} mixes sizes")));
                }
                if m.asymmetry() > SYMMETRY_TOL {
                    return Err(Error::InvalidInput(format!(
                        "block {i} has a non-symmetric matrix (asymmetry {:.2e})",
                        m.asymmetry()
                    )));
                }
            }
        }
        if let Some((a, _)) = equalities.iter().find(|(a, _)| a.len() != dim) {
            return Err(Error::Shape(format!("equality row of length {} for {dim} variables", a.len())));
        }
        Ok(Self { dim, blocks, equalities })
    }

    /// Largest Frobenius norm among all block data, used as a scale.
    pub fn scale(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| std::iter::once(&b.f0).chain(&b.coeffs))
            .map(|m| m.norm_fro())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LmiStatus {
    Feasible,
    Infeasible,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiSolution {
    pub y: Vec<f64>,
    /// Smallest eigenvalue over all blocks at `y`, recomputed independently.
    pub margin: f64,
    pub status: LmiStatus,
    /// Best dual upper bound on the achievable margin (within the search ball).
    pub upper_bound: f64,
    pub eq_residual: f64,
    pub newton_steps: usize,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative optimality gap at which the path following stops.
    pub rel_gap: f64,
    /// Radius of the search ball, relative to `max(1, ‖y₀‖)`.
    pub ball_factor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { rel_gap: 1e-9, ball_factor: 1e4 }
    }
}

/// Default strict-feasibility threshold: `1e-6` times the problem scale.
pub fn default_target_margin(p: &LmiProblem) -> f64 {
    1e-6 * p.scale()
}

/// Recomputes the minimum block eigenvalue and the largest equality residual at `y`.
pub fn check_solution(p: &LmiProblem, y: &[f64]) -> (f64, f64) {
    let margin = p
        .blocks
        .iter()
        .map(|b| numkit::min_sym_eigenvalue(&b.value(y).symmetrize()).unwrap_or(f64::NEG_INFINITY))
        .fold(f64::INFINITY, f64::min);
    let residual = p
        .equalities
        .iter()
        .map(|(a, b)| (numkit::dot(a, y) - b).abs())
        .fold(0.0, f64::max);
    (margin, residual)
}

pub fn solve_max_margin(p: &LmiProblem, target_margin: f64, iter_cap: usize) -> Result<LmiSolution> {
    solve_with(p, target_margin, iter_cap, SolverOptions::default())
}

struct Reduced {
    e0: Vec<Mat>,
    /// `e[b][i]`: coefficient of reduced variable `i` in block `b`.
    e: Vec<Vec<Mat>>,
    k: usize,
    radius: f64,
}

impl Reduced {
    fn slack(&self, b: usize, z: &[f64], t: f64) -> Mat {
        let mut s = self.e0[b].clone();
        for (c, zi) in self.e[b].iter().zip(z) {
            numkit::axpy(*zi, c.as_slice(), s.as_mut_slice());
        }
        for i in 0..s.rows() {
            s[(i, i)] -= t;
        }
        s
    }

    /// Barrier value, or `None` outside the domain.
    fn barrier(&self, z: &[f64], t: f64, tau: f64) -> Option<f64> {
        let ball = self.radius * self.radius - numkit::dot(z, z);
        if !(ball > 0.0) {
            return None;
        }
        let mut phi = -tau * t - ball.ln();
        for b in 0..self.e0.len() {
            let l = numkit::cholesky(&self.slack(b, z, t))?;
            phi -= 2.0 * (0..l.rows()).map(|i| l[(i, i)].ln()).sum::<f64>();
        }
        Some(phi)
    }

    /// Gradient, Hessian and the dual bound at a strictly feasible point.
    fn derivatives(&self, z: &[f64], t: f64, tau: f64) -> Option<(Vec<f64>, Mat, f64)> {
        let k = self.k;
        let mut g = vec![0.0; k + 1];
        let mut h = Mat::zeros(k + 1, k + 1);
        g[k] = -tau;
        let mut c0 = 0.0;
        let mut r = vec![0.0; k];
        let mut trace_w = 0.0;
        for b in 0..self.e0.len() {
            let l = numkit::cholesky(&self.slack(b, z, t))?;
            let w = numkit::cholesky_inverse(&l);
            let mut prods: Vec<Mat> = self.e[b].iter().map(|e| &w * e).collect();
            prods.push(w.scale(-1.0));
            for i in 0..=k {
                g[i] -= prods[i].trace();
                for j in 0..=i {
                    let v = trace_of_product(&prods[i], &prods[j]);
                    h[(i, j)] += v;
                    if i != j {
                        h[(j, i)] += v;
                    }
                }
            }
            trace_w += w.trace();
            c0 += trace_of_product(&w, &self.e0[b]);
            for i in 0..k {
                r[i] += prods[i].trace();
            }
        }
        let ball = self.radius * self.radius - numkit::dot(z, z);
        for i in 0..k {
            g[i] += 2.0 * z[i] / ball;
            h[(i, i)] += 2.0 / ball;
            for j in 0..k {
                h[(i, j)] += 4.0 * z[i] * z[j] / (ball * ball);
            }
        }
        let bound = if trace_w > 0.0 {
            (c0 + self.radius * numkit::vec_norm2(&r)) / trace_w
        } else {
            f64::INFINITY
        };
        Some((g, h, bound))
    }
}

fn trace_of_product(a: &Mat, b: &Mat) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    s
}

fn regularized_cholesky(h: &Mat) -> Option<Mat> {
    if let Some(l) = numkit::cholesky(h) {
        return Some(l);
    }
    let scale = (0..h.rows()).map(|i| h[(i, i)].abs()).fold(0.0, f64::max);
    let mut shift = 1e-14 * scale;
    for _ in 0..6 {
        let mut hs = h.clone();
        for i in 0..hs.rows() {
            hs[(i, i)] += shift;
        }
        if let Some(l) = numkit::cholesky(&hs) {
            return Some(l);
        }
        shift *= 100.0;
    }
    None
}

fn cholesky_solve(l: &Mat, rhs: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = rhs.to_vec();
    for i in 0..n {
        for j in 0..i {
            y[i] -= l[(i, j)] * y[j];
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for j in (i + 1)..n {
            y[i] -= l[(j, i)] * y[j];
        }
        y[i] /= l[(i, i)];
    }
    y
}

pub fn solve_with(
    p: &LmiProblem,
    target_margin: f64,
    iter_cap: usize,
    opts: SolverOptions,
) -> Result<LmiSolution> {
    let m = p.dim;
    // Equality elimination.
    let (y0, basis) = if p.equalities.is_empty() {
        (vec![0.0; m], Mat::identity(m))
    } else {
        let rows: Vec<Vec<f64>> = p.equalities.iter().map(|(a, _)| a.clone()).collect();
        let a = Mat::from_rows(&rows)?;
        let b = Mat::col_vec(&p.equalities.iter().map(|(_, b)| *b).collect::<Vec<_>>());
        let y0 = numkit::solve_least_squares(&a, &b)?.into_vec();
        let basis = numkit::null_space(&a, numkit::DEFAULT_RANK_TOL)?;
        (y0, basis)
    };
    let (_, eq0) = check_solution(p, &y0);
    let eq_scale = 1.0 + p.equalities.iter().map(|(_, b)| b.abs()).fold(0.0, f64::max);
    if eq0 > EQUALITY_TOL * eq_scale {
        // The equalities alone are inconsistent: the least-squares residual certifies it.
        return Ok(LmiSolution {
            y: y0,
            margin: f64::NEG_INFINITY,
            status: LmiStatus::Infeasible,
            upper_bound: f64::NEG_INFINITY,
            eq_residual: eq0,
            newton_steps: 0,
            gradient_norm: 0.0,
        });
    }
    let k = basis.cols();
    let reduced = Reduced {
        e0: p.blocks.iter().map(|b| b.value(&y0)).collect(),
        e: p
            .blocks
            .iter()
            .map(|b| {
                (0..k)
                    .map(|i| {
                        let mut e = Mat::zeros(b.size(), b.size());
                        for (j, c) in b.coeffs.iter().enumerate() {
                            let nji = basis[(j, i)];
                            if nji != 0.0 {
                                numkit::axpy(nji, c.as_slice(), e.as_mut_slice());
                            }
                        }
                        e.symmetrize()
                    })
                    .collect()
            })
            .collect(),
        k,
        radius: opts.ball_factor * numkit::vec_norm2(&y0).max(1.0),
    };
    let recover = |z: &[f64]| -> Vec<f64> {
        let mut y = y0.clone();
        for (i, zi) in z.iter().enumerate() {
            for j in 0..m {
                y[j] += basis[(j, i)] * zi;
            }
        }
        y
    };

    if p.blocks.is_empty() {
        let (_, eq) = check_solution(p, &y0);
        return Ok(LmiSolution {
            y: y0,
            margin: f64::INFINITY,
            status: LmiStatus::Feasible,
            upper_bound: f64::INFINITY,
            eq_residual: eq,
            newton_steps: 0,
            gradient_norm: 0.0,
        });
    }

    let scale = {
        let s = reduced.e0.iter().map(|e| e.norm_fro()).fold(0.0, f64::max);
        if s > 0.0 {
            s
        } else {
            p.scale().max(1.0)
        }
    };
    let mut z = vec![0.0; k];
    let min_eig0 = reduced
        .e0
        .iter()
        .map(numkit::min_sym_eigenvalue)
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let mut t = min_eig0 - 0.5 * scale.max(min_eig0.abs());
    let total_degree: f64 = p.blocks.iter().map(|b| b.size() as f64).sum::<f64>() + 1.0;
    let mut tau = 1.0 / scale;
    let mut upper = f64::INFINITY;
    let mut steps = 0;
    let mut grad_norm = 0.0;
    let mut status = LmiStatus::Inconclusive;

    'outer: loop {
        // Centre for the current τ.
        for _ in 0..100 {
            if steps >= iter_cap {
                break 'outer;
            }
            let Some((g, h, bound)) = reduced.derivatives(&z, t, tau) else {
                return Err(Error::Numerical("barrier iterate left the feasible region".into()));
            };
            upper = upper.min(bound);
            grad_norm = numkit::vec_norm2(&g);
            // Late in the path the Hessian can lose definiteness to rounding;
            // a small diagonal shift keeps Newton usable, otherwise stop here.
            let Some(l) = regularized_cholesky(&h) else {
                break 'outer;
            };
            let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
            let dx = cholesky_solve(&l, &neg_g);
            let decrement = -numkit::dot(&g, &dx);
            if decrement < 1e-10 {
                break;
            }
            let phi = reduced.barrier(&z, t, tau).expect("current iterate is feasible");
            let mut step = 1.0;
            loop {
                let zn: Vec<f64> = z.iter().zip(&dx).map(|(a, d)| a + step * d).collect();
                let tn = t + step * dx[k];
                if let Some(pn) = reduced.barrier(&zn, tn, tau) {
                    if pn <= phi - 0.25 * step * decrement {
                        z = zn;
                        t = tn;
                        break;
                    }
                }
                step *= 0.5;
                if step < 1e-14 {
                    break;
                }
            }
            steps += 1;
            if step < 1e-14 {
                break;
            }
        }
        if upper < 0.0 {
            status = LmiStatus::Infeasible;
            break;
        }
        let gap = total_degree / tau;
        if gap <= opts.rel_gap * t.abs().max(1e-6 * scale) || upper - t <= opts.rel_gap * t.abs() {
            break;
        }
        if upper < target_margin {
            break;
        }
        tau *= 10.0;
    }

    let y = recover(&z);
    let (margin, eq_residual) = check_solution(p, &y);
    if status != LmiStatus::Infeasible {
        status = if margin >= target_margin && margin > 0.0 && eq_residual <= EQUALITY_TOL * eq_scale {
            LmiStatus::Feasible
        } else {
            LmiStatus::Inconclusive
        };
    }
    Ok(LmiSolution { y, margin, status, upper_bound: upper, eq_residual, newton_steps: steps, gradient_norm: grad_norm })
}
