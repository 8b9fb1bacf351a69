//! Output regulator equations, exact and data-driven.
//!
//! The exact equations `ĀΠ + B̄Γ = ΠS`, `C̄Π = H` need the true model. From
//! data, the same residuals are minimized over every vertex of the
//! consistency set at once; both problems are linear least squares in
//! `(vec Π, vec Γ)` via `vec(AΠ) = (I ⊗ A) vec Π` and `vec(ΠS) = (Sᵀ ⊗ I) vec Π`.

use serde::{Deserialize, Serialize};

use crate::datagen::TrueSystem;
use crate::error::{Error, Result};
use crate::numkit::{self, Mat, DEFAULT_RANK_TOL};
use crate::polytope::{max_matrix_vertex_norm, MatrixPolytope, VertexNorm};
use crate::represent::ConsistencySet;

/// Residual above which the exact regulator equations count as unsolvable.
pub const EXACT_RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegulatorFit {
    pub pi: Mat,
    pub gamma: Mat,
    /// `‖Z_v[Γ; Π] − ΠS‖_F` per vertex of the `[B A]` polytope.
    pub residual1_per_vertex: Vec<f64>,
    /// `‖C_v Π − H‖_F` per vertex of the `C` polytope.
    pub residual2_per_vertex: Vec<f64>,
    pub bound1: f64,
    pub bound2: f64,
    /// Over-approximation of `ĀΠ + B̄Γ − ΠS`.
    pub delta1_poly: MatrixPolytope,
    /// Over-approximation of `C̄Π − H`.
    pub delta2_poly: MatrixPolytope,
    /// The stacked least-squares problem was rank deficient; the minimum-norm solution was taken.
    pub degenerate: bool,
    pub objective: f64,
}

fn check_leader(s: &Mat, h: &Mat) -> Result<()> {
    if !s.is_square() || h.cols() != s.rows() {
        return Err(Error::Shape(format!("S {:?} and H {:?} are not conformal", s.shape(), h.shape())));
    }
    Ok(())
}

/// Rows of `vec(AΠ + BΓ − ΠS)` as a function of `[vec Π; vec Γ]`.
fn dynamics_rows(a: &Mat, b: &Mat, s: &Mat) -> Mat {
    let (n, n0) = (a.rows(), s.rows());
    let pi_part = &Mat::identity(n0).kron(a) - &s.transpose().kron(&Mat::identity(n));
    let gamma_part = Mat::identity(n0).kron(b);
    pi_part.hstack(&gamma_part).expect("equal row counts")
}

/// Rows of `vec(CΠ)` padded with zeros for the `vec Γ` unknowns.
fn output_rows(c: &Mat, n0: usize, p: usize) -> Mat {
    let pi_part = Mat::identity(n0).kron(c);
    let rows = pi_part.rows();
    pi_part.hstack(&Mat::zeros(rows, p * n0)).expect("equal row counts")
}

fn split(sol: &[f64], n: usize, p: usize, n0: usize) -> (Mat, Mat) {
    (Mat::unvec(&sol[..n * n0], n, n0), Mat::unvec(&sol[n * n0..], p, n0))
}

/// Minimum-norm solution of the model-based regulator equations.
pub fn exact_regulator(sys: &TrueSystem, s: &Mat, h: &Mat) -> Result<(Mat, Mat)> {
    check_leader(s, h)?;
    if h.rows() != sys.q() {
        return Err(Error::Shape(format!("H has {} rows but the agent has {} outputs", h.rows(), sys.q())));
    }
    let (n, p, n0) = (sys.n(), sys.p(), s.rows());
    let a = dynamics_rows(&sys.a, &sys.b, s).vstack(&output_rows(&sys.c, n0, p))?;
    let mut rhs = vec![0.0; n * n0];
    rhs.extend(h.vec());
    let b = Mat::col_vec(&rhs);
    let sol = numkit::solve_least_squares(&a, &b)?;
    let residual = (&(&a * &sol) - &b).norm_fro();
    if !(residual < EXACT_RESIDUAL_TOL) {
        return Err(Error::NoRegulatorSolution { residual });
    }
    Ok(split(sol.as_slice(), n, p, n0))
}

/// Sum over vertices of the squared regulator residuals at `(Π, Γ)`.
pub fn fit_objective(cs: &ConsistencySet, s: &Mat, h: &Mat, pi: &Mat, gamma: &Mat) -> Result<f64> {
    let (r1, r2) = residuals(cs, s, h, pi, gamma)?;
    Ok(r1.iter().chain(&r2).map(|r| r * r).sum())
}

fn residuals(cs: &ConsistencySet, s: &Mat, h: &Mat, pi: &Mat, gamma: &Mat) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = gamma.vstack(pi)?;
    let pis = pi.matmul(s)?;
    let r1 = cs
        .z_poly
        .vertices()
        .iter()
        .map(|z| Ok(z.matmul(&g)?.try_sub(&pis)?.norm_fro()))
        .collect::<Result<Vec<_>>>()?;
    let r2 = cs
        .c_poly
        .vertices()
        .iter()
        .map(|c| Ok(c.matmul(pi)?.try_sub(h)?.norm_fro()))
        .collect::<Result<Vec<_>>>()?;
    Ok((r1, r2))
}

/// Fits `(Π, Γ)` to every vertex of the consistency set in the least-squares sense.
pub fn solve_fit(cs: &ConsistencySet, s: &Mat, h: &Mat) -> Result<RegulatorFit> {
    check_leader(s, h)?;
    let (n, p, n0) = (cs.n, cs.p, s.rows());
    let q = cs.c_poly.rows();
    if h.rows() != q {
        return Err(Error::Shape(format!("H has {} rows but the agent has {q} outputs", h.rows())));
    }
    let unknowns = (n + p) * n0;
    let n_rows = cs.z_poly.len() * n * n0 + cs.c_poly.len() * q * n0;
    let mut a = Mat::zeros(n_rows, unknowns);
    let mut rhs = vec![0.0; n_rows];
    let mut r = 0;
    for z in cs.z_poly.vertices() {
        let bv = z.block(0, 0, n, p);
        let av = z.block(0, p, n, n);
        let rows = dynamics_rows(&av, &bv, s);
        a.set_block(r, 0, &rows);
        r += rows.rows();
    }
    let h_vec = h.vec();
    for c in cs.c_poly.vertices() {
        let rows = output_rows(c, n0, p);
        a.set_block(r, 0, &rows);
        rhs[r..r + rows.rows()].copy_from_slice(&h_vec);
        r += rows.rows();
    }
    let degenerate = numkit::rank(&a, DEFAULT_RANK_TOL)? < unknowns;
    let sol = numkit::solve_least_squares(&a, &Mat::col_vec(&rhs))?;
    let (pi, gamma) = split(sol.as_slice(), n, p, n0);
    let (residual1_per_vertex, residual2_per_vertex) = residuals(cs, s, h, &pi, &gamma)?;
    let objective = residual1_per_vertex.iter().chain(&residual2_per_vertex).map(|r| r * r).sum();

    let (bound1, bound2, delta1_poly, delta2_poly) = error_sets(cs, s, h, &pi, &gamma)?;
    Ok(RegulatorFit {
        pi,
        gamma,
        residual1_per_vertex,
        residual2_per_vertex,
        bound1,
        bound2,
        delta1_poly,
        delta2_poly,
        degenerate,
        objective,
    })
}

/// Keeps `(Π, Γ)` but recomputes the error bounds and polytopes from another
/// consistency set built on the same data (for instance with a different hull mode).
pub fn rebase_fit(fit: &RegulatorFit, cs: &ConsistencySet, s: &Mat, h: &Mat) -> Result<RegulatorFit> {
    check_leader(s, h)?;
    let (residual1_per_vertex, residual2_per_vertex) = residuals(cs, s, h, &fit.pi, &fit.gamma)?;
    let objective = residual1_per_vertex.iter().chain(&residual2_per_vertex).map(|r| r * r).sum();
    let (bound1, bound2, delta1_poly, delta2_poly) = error_sets(cs, s, h, &fit.pi, &fit.gamma)?;
    Ok(RegulatorFit {
        pi: fit.pi.clone(),
        gamma: fit.gamma.clone(),
        residual1_per_vertex,
        residual2_per_vertex,
        bound1,
        bound2,
        delta1_poly,
        delta2_poly,
        degenerate: fit.degenerate,
        objective,
    })
}

fn error_sets(
    cs: &ConsistencySet,
    s: &Mat,
    h: &Mat,
    pi: &Mat,
    gamma: &Mat,
) -> Result<(f64, f64, MatrixPolytope, MatrixPolytope)> {
    let g = gamma.vstack(pi)?;
    let dg = cs.ux_pinv.matmul(&g)?;
    let xp = cs.x_pinv.matmul(pi)?;
    let w_bar = max_matrix_vertex_norm(&cs.w_poly, VertexNorm::Frobenius)?;
    let v_bar = max_matrix_vertex_norm(&cs.v_poly, VertexNorm::Frobenius)?;
    // γ·ρ is the vertex count of the noise matrix polytope.
    let bound1 = 2.0 * cs.w_poly.len() as f64 * w_bar * dg.norm_fro();
    let bound2 = 2.0 * cs.v_poly.len() as f64 * v_bar * xp.norm_fro();

    // Centre: the residual of the noise-free estimate. Spread: ±2 Ŵ_k D†[Γ; Π].
    let centre1 = cs.z_nominal().matmul(&g)?.try_sub(&pi.matmul(s)?)?;
    let centre2 = cs.c_nominal().matmul(pi)?.try_sub(h)?;
    let delta1_poly = symmetric_hull(&centre1, cs.w_poly.vertices(), &dg)?;
    let delta2_poly = symmetric_hull(&centre2, cs.v_poly.vertices(), &xp)?;
    Ok((bound1, bound2, delta1_poly, delta2_poly))
}

fn symmetric_hull(centre: &Mat, noise_vertices: &[Mat], right: &Mat) -> Result<MatrixPolytope> {
    let mut vertices = Vec::with_capacity(2 * noise_vertices.len());
    for w in noise_vertices {
        let spread = w.matmul(right)?.scale(2.0);
        vertices.push(centre + &spread);
        vertices.push(centre - &spread);
    }
    Ok(MatrixPolytope::new(vertices)?.dedup())
}

/// The a-priori bounds on `‖Δ₁‖_F` and `‖Δ₂‖_F`.
pub fn delta_bounds(fit: &RegulatorFit) -> (f64, f64) {
    (fit.bound1, fit.bound2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{collect_with, NoiseModel, Restart};
    use crate::polytope::box_polytope;
    use crate::represent::build_consistency_set;

    pub(crate) fn leader() -> (Mat, Mat) {
        (Mat::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]).unwrap(), Mat::from_rows(&[[1.0, 0.0]]).unwrap())
    }

    fn scalar() -> TrueSystem {
        TrueSystem::new(Mat::diag(&[2.0]), Mat::diag(&[3.0]), Mat::diag(&[1.0])).unwrap()
    }

    fn follower2() -> TrueSystem {
        TrueSystem::new(
            Mat::from_rows(&[[0.0, 1.0], [1.0, -1.0]]).unwrap(),
            Mat::from_rows(&[[0.0], [1.0]]).unwrap(),
            Mat::from_rows(&[[1.0, 1.0]]).unwrap(),
        )
        .unwrap()
    }

    fn fit_for(sys: &TrueSystem, level: f64, seed: u64) -> (RegulatorFit, ConsistencySet) {
        let (s, h) = leader();
        let noise = NoiseModel::boxes(sys.n(), sys.q(), level, level).unwrap();
        let d = collect_with(
            sys,
            &noise,
            20,
            &box_polytope(&[1.0]).unwrap(),
            &vec![0.3; sys.n()],
            seed,
            Restart { above: Some(1e3) },
        )
        .unwrap();
        let cs = build_consistency_set(&d, &noise).unwrap();
        (solve_fit(&cs, &s, &h).unwrap(), cs)
    }

    fn close(a: &Mat, rows: &[&[f64]], tol: f64) -> bool {
        let b = Mat::from_rows(rows).unwrap();
        (a - &b).max_abs() < tol
    }

    #[test]
    fn exact_follower1_and_2() {
        let (s, h) = leader();
        let (pi, gamma) = exact_regulator(&scalar(), &s, &h).unwrap();
        assert!(close(&pi, &[&[1.0, 0.0]], 1e-12));
        assert!(close(&gamma, &[&[-2.0 / 3.0, 1.0 / 3.0]], 1e-12));

        let (pi, gamma) = exact_regulator(&follower2(), &s, &h).unwrap();
        assert!(close(&pi, &[&[0.5, -0.5], &[0.5, 0.5]], 1e-12));
        assert!(close(&gamma, &[&[-0.5, 1.5]], 1e-12));
    }

    #[test]
    fn exact_degenerate_single_pole() {
        let c = Mat::from_rows(&[[1.0, 2.0]]).unwrap();
        let sys = TrueSystem::new(Mat::zeros(2, 2), Mat::identity(2), c.clone()).unwrap();
        let (pi, gamma) = exact_regulator(&sys, &Mat::identity(1), &c.block(0, 0, 1, 1)).unwrap();
        assert!((&(&c * &pi) - &c.block(0, 0, 1, 1)).max_abs() < 1e-12);
        assert!((&pi - &gamma).max_abs() < 1e-12);
    }

    #[test]
    fn exact_unsolvable() {
        // C̄ = 0 can never reproduce H.
        let sys = TrueSystem::new(Mat::diag(&[0.5]), Mat::diag(&[1.0]), Mat::zeros(1, 1)).unwrap();
        let (s, h) = leader();
        let out = exact_regulator(&sys, &s, &h);
        assert!(matches!(out, Err(Error::NoRegulatorSolution { .. })), "{out:?}");
    }

    #[test]
    fn zero_noise_matches_exact() {
        for sys in [scalar(), follower2()] {
            let (fit, _) = fit_for(&sys, 0.0, 2);
            let (s, h) = leader();
            let (pi, gamma) = exact_regulator(&sys, &s, &h).unwrap();
            assert!((&fit.pi - &pi).norm_fro() < 1e-8);
            assert!((&fit.gamma - &gamma).norm_fro() < 1e-8);
            assert!(fit.residual1_per_vertex.iter().chain(&fit.residual2_per_vertex).all(|r| *r < 1e-9));
            assert_eq!(delta_bounds(&fit), (0.0, 0.0));
            assert!(!fit.degenerate);
        }
    }

    #[test]
    fn noisy_follower1_fit_is_close() {
        let (fit, _) = fit_for(&scalar(), 0.01, 7);
        let pi_err = numkit::norm2(&(&fit.pi - &Mat::from_rows(&[[1.0, 0.0]]).unwrap())).unwrap();
        let g_err = numkit::norm2(&(&fit.gamma - &Mat::from_rows(&[[-2.0 / 3.0, 1.0 / 3.0]]).unwrap())).unwrap();
        assert!(pi_err < 0.05 && g_err < 0.05, "{pi_err} {g_err}");
    }

    #[test]
    fn more_noise_worse_fit() {
        let (s, h) = leader();
        let sys = follower2();
        let (pi_s, _) = exact_regulator(&sys, &s, &h).unwrap();
        let mut errs = [0.0; 2];
        for (slot, level) in [0.001, 0.1].iter().enumerate() {
            let mut e: Vec<f64> = (0..9).map(|seed| (&fit_for(&sys, *level, seed).0.pi - &pi_s).norm_fro()).collect();
            e.sort_by(f64::total_cmp);
            errs[slot] = e[4];
        }
        assert!(errs[1] > errs[0], "{errs:?}");
    }

    #[test]
    fn bound_constants() {
        let (fit, cs) = fit_for(&follower2(), 0.01, 4);
        let g = fit.gamma.vstack(&fit.pi).unwrap();
        let want = 2.0 * 4.0 * 20.0 * (0.01 * 2f64.sqrt()) * (&cs.ux_pinv * &g).norm_fro();
        assert!((fit.bound1 - want).abs() < 1e-12 * want);
        assert_eq!(fit.residual1_per_vertex.len(), 80);
        assert_eq!(fit.residual2_per_vertex.len(), 40);
    }

    #[test]
    fn bound_is_linear_in_noise_size() {
        // Same data, noise description doubled: the bound doubles.
        let sys = follower2();
        let (s, h) = leader();
        let noise = NoiseModel::boxes(2, 1, 0.01, 0.01).unwrap();
        let d = collect_with(&sys, &noise, 20, &box_polytope(&[1.0]).unwrap(), &[0.3, 0.3], 1, Restart { above: Some(1e3) }).unwrap();
        let fit = solve_fit(&build_consistency_set(&d, &noise).unwrap(), &s, &h).unwrap();
        let wide = NoiseModel::boxes(2, 1, 0.02, 0.01).unwrap();
        let cs2 = build_consistency_set(&d, &wide).unwrap();
        let g = fit.gamma.vstack(&fit.pi).unwrap();
        let doubled = 2.0 * 4.0 * 20.0 * (0.02 * 2f64.sqrt()) * (&cs2.ux_pinv * &g).norm_fro();
        assert!((doubled - 2.0 * fit.bound1).abs() < 1e-12 * doubled);
    }

    #[test]
    fn fit_beats_oracle_and_bounds_hold() {
        let (s, h) = leader();
        for seed in 0..10 {
            let sys = follower2();
            let (fit, cs) = fit_for(&sys, 0.01, seed);
            let (pi_s, gamma_s) = exact_regulator(&sys, &s, &h).unwrap();
            let at_oracle = fit_objective(&cs, &s, &h, &pi_s, &gamma_s).unwrap();
            assert!(fit.objective <= at_oracle * (1.0 + 1e-9) + 1e-15);

            let d1 = &(&(&sys.a * &fit.pi) + &(&sys.b * &fit.gamma)) - &(&fit.pi * &s);
            let d2 = &(&sys.c * &fit.pi) - &h;
            let max_r1 = fit.residual1_per_vertex.iter().copied().fold(0.0, f64::max);
            let max_r2 = fit.residual2_per_vertex.iter().copied().fold(0.0, f64::max);
            assert!(d1.norm_fro() <= fit.bound1 + max_r1, "seed {seed}");
            assert!(d2.norm_fro() <= fit.bound2 + max_r2, "seed {seed}");
        }
    }
}
