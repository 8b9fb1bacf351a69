//! Reachable-set bounds on the virtual tracking error and the output error.
//!
//! `ξ = x − Πη` evolves as `ξ⁺ = (A + BK)ξ + Δ₁(x₀ + δ) + cΠFz`, and the
//! output error is `e = Cξ + Δ₂(x₀ + δ) + Hδ`, with `Δ₁ = AΠ + BΓ − ΠS` and
//! `Δ₂ = CΠ − H`. Replacing every unknown matrix by its polytope and `x₀` by a
//! box around the leader orbit gives a vertex recursion for `ξ` and a scalar
//! bound `r(t) ≥ ‖e(t)‖∞`.
//!
//! There is also a second, ellipsoidal bound driven by the Lyapunov matrix
//! `P`. With `β = max_v ‖P^{1/2} Q_v P^{-1/2}‖₂`, the quantity `‖P^{1/2}ξ‖`
//! contracts by at least `β` per step up to the disturbance.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphnet::Topology;
use crate::numkit::{self, Mat};
use crate::polytope::{self, bounds_box, minkowski_sum, MatrixPolytope, VPolytope, DEFAULT_VERTEX_CAP};
use crate::regulator::RegulatorFit;
use crate::simulate::{check_leader_spectrum, LeaderModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSeries {
    /// `r(t) ≥ ‖e(t)‖∞`, one entry per step.
    pub r: Vec<f64>,
    /// Limit of the ellipsoidal bound as `t → ∞` (infinite when `β ≥ 1`).
    pub asymptotic: f64,
    /// Steps at which the vertex recursion fell back to a bounding box.
    pub boxed_steps: Vec<usize>,
}

/// `β` and `μ = √cond(P)` for a common quadratic Lyapunov function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contraction {
    pub beta: f64,
    pub mu: f64,
}

fn complex_solve(a: &[Vec<Complex64>], b: &[Complex64]) -> Option<Vec<Complex64>> {
    let n = b.len();
    let mut m: Vec<Vec<Complex64>> = a.iter().zip(b).map(|(r, bi)| {
        let mut r = r.clone();
        r.push(*bi);
        r
    }).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].norm().total_cmp(&m[j][col].norm()))?;
        if m[piv][col].norm() == 0.0 {
            return None;
        }
        m.swap(col, piv);
        for r in (col + 1)..n {
            let factor = m[r][col] / m[col][col];
            for c in col..=n {
                let v = m[col][c];
                m[r][c] -= factor * v;
            }
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for r in (0..n).rev() {
        let mut s = m[r][n];
        for c in (r + 1)..n {
            s -= m[r][c] * x[c];
        }
        x[r] = s / m[r][r];
    }
    Some(x)
}

/// Quadratic form `P ≻ 0` with `SᵀPS = P`, from the eigenvectors of `S`.
///
/// For `S = TΛT⁻¹` with unimodular `Λ`, `‖T⁻¹x‖` is invariant along the
/// orbit. Its real part `P = Re(T⁻ᴴT⁻¹)` gives the same quadratic form on real vectors.
pub fn invariant_form(s: &Mat) -> Result<Mat> {
    check_leader_spectrum(s)?;
    let n = s.rows();
    let eig = numkit::eigenvalues(s)?.eigenvalues;
    let sc: Vec<Vec<Complex64>> =
        (0..n).map(|i| (0..n).map(|j| Complex64::new(s[(i, j)], 0.0)).collect()).collect();
    // Inverse iteration for each eigenvector; the columns of T.
    let mut t_cols = Vec::with_capacity(n);
    for (k, lambda) in eig.iter().enumerate() {
        let shift = lambda + Complex64::new(1e-10, 1e-10);
        let shifted: Vec<Vec<Complex64>> = (0..n)
            .map(|i| (0..n).map(|j| sc[i][j] - if i == j { shift } else { Complex64::new(0.0, 0.0) }).collect())
            .collect();
        let mut v: Vec<Complex64> = (0..n).map(|i| Complex64::new(1.0 + (i + k) as f64 * 0.37, 0.1 * i as f64)).collect();
        for _ in 0..3 {
            v = complex_solve(&shifted, &v).ok_or_else(|| Error::Numerical("eigenvector solve failed".into()))?;
            let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            v.iter_mut().for_each(|c| *c /= norm);
        }
        t_cols.push(v);
    }
    // T⁻¹ column by column.
    let t: Vec<Vec<Complex64>> = (0..n).map(|i| (0..n).map(|j| t_cols[j][i]).collect()).collect();
    let mut tinv = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for j in 0..n {
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        e[j] = Complex64::new(1.0, 0.0);
        let col = complex_solve(&t, &e).ok_or_else(|| Error::Numerical("eigenvector basis is singular".into()))?;
        for i in 0..n {
            tinv[i][j] = col[i];
        }
    }
    Ok(Mat::from_fn(n, n, |i, j| (0..n).map(|k| tinv[k][i].conj() * tinv[k][j]).sum::<Complex64>().re).symmetrize())
}

/// Box containing the whole leader orbit from `x0`.
///
/// The invariant form bounds `|x_i(t)| ≤ √(x₀ᵀPx₀ · (P⁻¹)_ii)` for every `t`.
pub fn leader_state_polytope(leader: &LeaderModel, x0: &[f64]) -> Result<VPolytope> {
    let p = invariant_form(&leader.s)?;
    if x0.len() != p.rows() {
        return Err(Error::Shape(format!("x₀ has {} entries for n₀ = {}", x0.len(), p.rows())));
    }
    let level = numkit::dot(x0, &p.mul_vec(x0)?);
    let p_inv = numkit::inverse(&p)?;
    let half: Vec<f64> = (0..x0.len()).map(|i| (level * p_inv[(i, i)]).max(0.0).sqrt()).collect();
    let lo: Vec<f64> = half.iter().map(|h| -h).collect();
    bounds_box(&lo, &half)
}

/// Over-approximates `Δ₁(x₀ + δ) + cΠFz` for all `x₀` in `px0` and `Δ₁` in the fit's polytope.
///
/// `Δ₁x₀` and `Δ₁δ` share the same (unknown) `Δ₁`, so the box is shifted by
/// `δ` before the matrix image is taken. This is never larger than summing
/// the two images separately.
#[allow(clippy::too_many_arguments)]
pub fn disturbance_polytope(
    fit: &RegulatorFit,
    px0: &VPolytope,
    pi: &Mat,
    f: &Mat,
    t: &Topology,
    agent: usize,
    delta_t: &[f64],
    z_t: &[f64],
) -> Result<VPolytope> {
    let shifted = polytope::add_point(px0, delta_t)?;
    let image = polytope::prune(&fit.delta1_poly.apply(&shifted)?, DEFAULT_VERTEX_CAP)?.polytope;
    let coupling = pi.matmul(f)?.mul_vec(z_t)?;
    let scaled: Vec<f64> = coupling.iter().map(|v| v * t.normalizer(agent)).collect();
    polytope::add_point(&image, &scaled)
}

/// `P̄_{t+1} = M_Z^K P̄_t ⊕ D_t`, pruned after each product and each sum.
/// Returns the boxed-step indices along with the `horizon + 1` sets.
pub fn xi_bound_recursion_traced(
    mzk: &MatrixPolytope,
    p0: &VPolytope,
    disturbances: &[VPolytope],
    horizon: usize,
) -> Result<(Vec<VPolytope>, Vec<usize>)> {
    if disturbances.len() < horizon {
        return Err(Error::InvalidInput(format!(
            "{} disturbance sets for a horizon of {horizon}",
            disturbances.len()
        )));
    }
    let mut sets = Vec::with_capacity(horizon + 1);
    let mut boxed = Vec::new();
    let first = polytope::prune(p0, DEFAULT_VERTEX_CAP)?;
    if first.boxed {
        boxed.push(0);
    }
    sets.push(first.polytope);
    for (step, d) in disturbances.iter().enumerate().take(horizon) {
        let prev = sets.last().expect("seeded above");
        let mapped = polytope::prune(&mzk.dedup().apply(prev)?, DEFAULT_VERTEX_CAP)?;
        let d = polytope::prune(d, DEFAULT_VERTEX_CAP)?;
        let next = polytope::prune(&minkowski_sum(&mapped.polytope, &d.polytope)?, DEFAULT_VERTEX_CAP)?;
        if mapped.boxed || d.boxed || next.boxed {
            boxed.push(step + 1);
        }
        if next.polytope.vertices().iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("reachable set diverged at step {}", step + 1)));
        }
        sets.push(next.polytope);
    }
    Ok((sets, boxed))
}

pub fn xi_bound_recursion(
    mzk: &MatrixPolytope,
    p0: &VPolytope,
    disturbances: &[VPolytope],
    horizon: usize,
) -> Result<Vec<VPolytope>> {
    Ok(xi_bound_recursion_traced(mzk, p0, disturbances, horizon)?.0)
}

/// `max_{Δ₂, x ∈ px0} ‖Δ₂(x + δ)‖∞ + ‖Hδ‖∞`: the part of `e` not driven by `ξ`.
fn output_offset(fit: &RegulatorFit, px0: &VPolytope, h: &Mat, delta: &[f64]) -> Result<f64> {
    let shifted = polytope::add_point(px0, delta)?;
    let mut worst = 0.0f64;
    for d2 in fit.delta2_poly.vertices() {
        for v in shifted.vertices() {
            worst = worst.max(numkit::vec_norm_inf(&d2.mul_vec(v)?));
        }
    }
    Ok(worst + numkit::vec_norm_inf(&h.mul_vec(delta)?))
}

fn max_output(c_poly: &MatrixPolytope, set: &VPolytope) -> Result<f64> {
    let mut worst = 0.0f64;
    for c in c_poly.vertices() {
        for v in set.vertices() {
            worst = worst.max(numkit::vec_norm_inf(&c.mul_vec(v)?));
        }
    }
    Ok(worst)
}

/// `r(t) = max_{C, v} ‖Cv‖∞ + max_{Δ₂, x} ‖Δ₂(x + δ(t))‖∞ + ‖Hδ(t)‖∞`.
///
/// `deltas` holds the observer errors `δ(t)` (zeros if the observers start
/// on the leader); `h` is the leader output matrix.
pub fn error_bound_series(
    c_poly: &MatrixPolytope,
    xi_series: &[VPolytope],
    fit: &RegulatorFit,
    px0: &VPolytope,
    deltas: &[Vec<f64>],
    h: &Mat,
) -> Result<Vec<f64>> {
    if deltas.len() < xi_series.len() {
        return Err(Error::InvalidInput(format!("{} observer errors for {} sets", deltas.len(), xi_series.len())));
    }
    xi_series
        .iter()
        .zip(deltas)
        .map(|(set, delta)| Ok(max_output(c_poly, set)? + output_offset(fit, px0, h, delta)?))
        .collect()
}

/// `β = max_v ‖P^{1/2} Q_v P^{-1/2}‖₂` and `μ = √cond(P)`.
pub fn contraction(mzk: &MatrixPolytope, p: &Mat) -> Result<Contraction> {
    let (half, inv_half) = numkit::sym_sqrt_pair(p)?;
    let mut beta = 0.0f64;
    for q in mzk.vertices() {
        beta = beta.max(numkit::norm2(&half.matmul(q)?.matmul(&inv_half)?)?);
    }
    let (lo, hi) = (numkit::min_sym_eigenvalue(p)?, numkit::max_sym_eigenvalue(p)?);
    Ok(Contraction { beta, mu: (hi / lo).sqrt() })
}

/// Largest `‖P^{1/2}v‖₂` over the vertices.
fn weighted_radius(half: &Mat, set: &VPolytope) -> Result<f64> {
    set.vertices().iter().try_fold(0.0f64, |acc, v| Ok(acc.max(numkit::vec_norm2(&half.mul_vec(v)?))))
}

/// `max_C max_rows ‖c_row P^{-1/2}‖₂`: the ∞-norm of `Cξ` per unit of `‖P^{1/2}ξ‖`.
fn output_gain(c_poly: &MatrixPolytope, inv_half: &Mat) -> Result<f64> {
    c_poly.vertices().iter().try_fold(0.0f64, |acc, c| {
        let g = c.matmul(inv_half)?;
        Ok((0..g.rows()).map(|i| numkit::vec_norm2(g.row(i))).fold(acc, f64::max))
    })
}

/// Ellipsoidal bound: `s₀ = max ‖P^{1/2}v‖` over `p0`,
/// `s_{t+1} = β s_t + max_{d ∈ D_t} ‖P^{1/2}d‖`, and
/// `r(t) = g·s_t + offset(t)` with `g` the output gain.
/// The asymptotic value uses the `δ = 0, z = 0` disturbance `d_inf`.
#[allow(clippy::too_many_arguments)]
pub fn ellipsoid_bound_series(
    mzk: &MatrixPolytope,
    p: &Mat,
    c_poly: &MatrixPolytope,
    p0: &VPolytope,
    disturbances: &[VPolytope],
    d_inf: &VPolytope,
    fit: &RegulatorFit,
    px0: &VPolytope,
    deltas: &[Vec<f64>],
    h: &Mat,
    horizon: usize,
) -> Result<(Vec<f64>, f64, Contraction)> {
    let k = contraction(mzk, p)?;
    let (half, inv_half) = numkit::sym_sqrt_pair(p)?;
    let gain = output_gain(c_poly, &inv_half)?;
    if disturbances.len() < horizon || deltas.len() < horizon + 1 {
        return Err(Error::InvalidInput("disturbance or observer series shorter than the horizon".into()));
    }
    let mut s = weighted_radius(&half, p0)?;
    let mut r = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        r.push(gain * s + output_offset(fit, px0, h, &deltas[t])?);
        if t < horizon {
            s = k.beta * s + weighted_radius(&half, &disturbances[t])?;
        }
    }
    let zero = vec![0.0; px0.dim()];
    let asymptotic = if k.beta < 1.0 {
        gain * weighted_radius(&half, d_inf)? / (1.0 - k.beta) + output_offset(fit, px0, h, &zero)?
    } else {
        f64::INFINITY
    };
    Ok((r, asymptotic, k))
}

/// Bound CSV: `t, r, asymptotic`.
pub fn write_bounds_csv(path: &Path, b: &BoundSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "r", "asymptotic"])?;
    for (t, r) in b.r.iter().enumerate() {
        w.write_record([t.to_string(), r.to_string(), b.asymptotic.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_bounds_csv(path: &Path) -> Result<BoundSeries> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut r = Vec::new();
    let mut asymptotic = f64::NAN;
    for rec in rd.records() {
        let rec = rec?;
        let parse = |i: usize| {
            rec[i].parse::<f64>().map_err(|e| Error::InvalidInput(format!("bad number in {}: {e}", path.display())))
        };
        r.push(parse(1)?);
        asymptotic = parse(2)?;
    }
    Ok(BoundSeries { r, asymptotic, boxed_steps: Vec::new() })
}
