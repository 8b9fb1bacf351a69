//! Feedback gain `K` from data and observer gain `F` from the graph.
//!
//! The feedback LMI is built over a decision matrix `M` (ρ×n): `X·M` must be
//! symmetric, `trace(X·M) = 1` fixes the scale, and for every noise vertex
//! `Ŵ_k`, with `Ω_k = X₊ − Ŵ_k`,
//!
//! ```text
//! [ λ·X·M      Ω_k·M ]
//! [ (Ω_k·M)ᵀ   λ·X·M ]  ⪰ t·I,     λ = 1 − margin.
//! ```
//!
//! A positive `t` means every `Ω_k·M·(X·M)⁻¹` has spectral radius below `λ`,
//! with the common Lyapunov matrix `P = (X·M)⁻¹`. `M` is also kept in the row
//! space of `[U; X]`. Then `Ω_k·M = Z_k·[U; X]·M` for the consistent system
//! `Z_k` of that vertex, so the certificate covers exactly the vertices of
//! the closed-loop polytope.

use serde::{Deserialize, Serialize};

use crate::datagen::{AgentDataset, NoiseModel};
use crate::error::{Error, Result};
use crate::graphnet::{coupling, has_spanning_tree, observer_composite, Topology};
use crate::numkit::{self, Mat, DEFAULT_RANK_TOL};
use crate::polytope::{HullMode, MatrixPolytope};
use crate::represent::{build_consistency_set_with, closed_loop_polytope, ConsistencySet};
use crate::sdpcore::{self, LmiBlock, LmiProblem, LmiStatus};
use crate::simulate::check_leader_spectrum;

pub const DEFAULT_MARGIN: f64 = 1e-3;
const SOLVER_ITER_CAP: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub k: Mat,
    pub m_decision: Mat,
    /// `(X·M)⁻¹`.
    pub lyapunov_p: Mat,
    pub worst_vertex_radius: f64,
    /// Requested decay margin: every vertex radius is below `1 − margin`.
    pub margin: f64,
    /// Smallest eigenvalue over all LMI blocks at the solution.
    pub lmi_margin: f64,
    pub vertex_radii: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverDesign {
    pub f: Mat,
    pub composite_radius: f64,
    /// Set when `F = α·S`.
    pub alpha: Option<f64>,
}

/// Builds the feedback LMI for one agent's consistency set.
pub fn feedback_lmi(d: &AgentDataset, cs: &ConsistencySet, margin: f64) -> Result<LmiProblem> {
    let (n, rho) = (d.n(), d.rho);
    let dim = rho * n;
    let lambda = 1.0 - margin;
    // Coefficient of M[i, j] (column-major index i + j·ρ) in X·M and Ω·M:
    // column j receives column i of X (resp. Ω).
    let unit_image = |a: &Mat, i: usize, j: usize| {
        let mut out = Mat::zeros(a.rows(), n);
        out.set_col(j, &a.col(i));
        out
    };
    let xm_coeffs: Vec<Mat> = (0..dim)
        .map(|idx| {
            let (i, j) = (idx % rho, idx / rho);
            unit_image(&d.x, i, j).symmetrize().scale(lambda)
        })
        .collect();
    let noise = cs.w_poly.dedup();
    let mut blocks = Vec::with_capacity(noise.len());
    for w in noise.vertices() {
        let omega = &d.x_plus - w;
        let coeffs = (0..dim)
            .map(|idx| {
                let (i, j) = (idx % rho, idx / rho);
                let om = unit_image(&omega, i, j);
                let xm = &xm_coeffs[idx];
                let mut b = Mat::zeros(2 * n, 2 * n);
                b.set_block(0, 0, xm);
                b.set_block(n, n, xm);
                b.set_block(0, n, &om);
                b.set_block(n, 0, &om.transpose());
                b
            })
            .collect();
        blocks.push(LmiBlock { f0: Mat::zeros(2 * n, 2 * n), coeffs });
    }

    let mut equalities = Vec::new();
    let entry = |r: usize, c: usize| {
        // (X·M)[r, c] = Σ_i X[r, i]·M[i, c].
        let mut row = vec![0.0; dim];
        for i in 0..rho {
            row[i + c * rho] = d.x[(r, i)];
        }
        row
    };
    for r in 0..n {
        for c in (r + 1)..n {
            let a: Vec<f64> = entry(r, c).iter().zip(entry(c, r)).map(|(x, y)| x - y).collect();
            equalities.push((a, 0.0));
        }
    }
    // M must lie in the row space of [U; X]: Nᵀ·M = 0 for a null basis N.
    let null = numkit::null_space(&d.ux(), DEFAULT_RANK_TOL)?;
    for k in 0..null.cols() {
        for c in 0..n {
            let mut row = vec![0.0; dim];
            for i in 0..rho {
                row[i + c * rho] = null[(i, k)];
            }
            equalities.push((row, 0.0));
        }
    }
    let mut trace = vec![0.0; dim];
    for r in 0..n {
        numkit::axpy(1.0, &entry(r, r), &mut trace);
    }
    equalities.push((trace, 1.0));
    LmiProblem::new(dim, blocks, equalities)
}

pub fn synthesize_k(d: &AgentDataset, noise: &NoiseModel, margin: f64) -> Result<SynthesisResult> {
    synthesize_k_with(d, noise, margin, HullMode::Verbatim)
}

pub fn synthesize_k_with(
    d: &AgentDataset,
    noise: &NoiseModel,
    margin: f64,
    mode: HullMode,
) -> Result<SynthesisResult> {
    if !(0.0..1.0).contains(&margin) {
        return Err(Error::InvalidInput(format!("decay margin must lie in [0, 1), got {margin}")));
    }
    let cs = build_consistency_set_with(d, noise, mode)?;
    let problem = feedback_lmi(d, &cs, margin)?;
    let target = 1e-9 * problem.scale();
    let sol = sdpcore::solve_max_margin(&problem, target, SOLVER_ITER_CAP)?;
    if sol.status != LmiStatus::Feasible {
        let reason = match sol.status {
            LmiStatus::Infeasible => "the feedback LMI is infeasible",
            _ => "the solver could not certify the feedback LMI",
        };
        return Err(Error::Synthesis { reason: reason.into(), best_margin: sol.margin.max(sol.upper_bound.min(sol.margin)) });
    }
    let (n, rho) = (d.n(), d.rho);
    let m = Mat::unvec(&sol.y, rho, n);
    let xm = d.x.matmul(&m)?.symmetrize();
    let lyapunov_p = numkit::inverse(&xm)?.symmetrize();
    let k = d.u.matmul(&m)?.matmul(&lyapunov_p)?;

    let closed = closed_loop_polytope(&cs, &k)?;
    let vertex_radii = vertex_spectral_radii(&closed)?;
    let worst = vertex_radii.iter().copied().fold(0.0, f64::max);
    if !(worst < 1.0 - margin) {
        return Err(Error::CertificateMismatch(format!(
            "LMI margin {:.3e} but a closed-loop vertex has spectral radius {worst:.9}",
            sol.margin
        )));
    }
    Ok(SynthesisResult {
        k,
        m_decision: m,
        lyapunov_p,
        worst_vertex_radius: worst,
        margin,
        lmi_margin: sol.margin,
        vertex_radii,
    })
}

pub fn vertex_spectral_radii(mp: &MatrixPolytope) -> Result<Vec<f64>> {
    mp.vertices().iter().map(numkit::spectral_radius).collect()
}

/// Largest eigenvalue of `QᵀPQ − P` over the vertices.
pub fn lyapunov_decrease(mp: &MatrixPolytope, p: &Mat) -> Result<f64> {
    mp.vertices().iter().try_fold(f64::NEG_INFINITY, |acc, q| {
        let d = q.transpose().matmul(&p.matmul(q)?)?.try_sub(p)?.symmetrize();
        Ok(acc.max(numkit::max_sym_eigenvalue(&d)?))
    })
}

fn composite_radius(t: &Topology, s: &Mat, f: &Mat) -> Result<f64> {
    numkit::spectral_radius(&observer_composite(t, s, f)?)
}

fn check_observer_inputs(t: &Topology, s: &Mat) -> Result<()> {
    if !has_spanning_tree(t) {
        return Err(Error::Assumption(
            "Assumption 1 fails: some follower is not reachable from the leader".into(),
        ));
    }
    check_leader_spectrum(s)
}

fn observer_failure(t: &Topology, best_radius: f64) -> Error {
    let coupling_moduli =
        numkit::eigenvalues(&coupling(t)).map(|sp| sp.moduli()).unwrap_or_default();
    Error::ObserverDesign { best_radius, coupling_moduli }
}

/// Searches `F = α·S` over a log grid, then refines by golden section.
pub fn design_f(t: &Topology, s: &Mat, margin: f64) -> Result<ObserverDesign> {
    check_observer_inputs(t, s)?;
    let eval = |log_alpha: f64| composite_radius(t, s, &s.scale(log_alpha.exp()));
    let grid: Vec<f64> = (0..=80).map(|i| (1e-3f64).ln() + i as f64 * (1e5f64).ln() / 80.0).collect();
    let values = grid.iter().map(|&g| eval(g)).collect::<Result<Vec<_>>>()?;
    let best = (0..grid.len()).min_by(|&a, &b| values[a].total_cmp(&values[b])).expect("grid is nonempty");
    let (mut lo, mut hi) = (grid[best.saturating_sub(1)], grid[(best + 1).min(grid.len() - 1)]);
    let (mut best_x, mut best_v) = (grid[best], values[best]);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (eval(a)?, eval(b)?);
    for _ in 0..60 {
        for (x, v) in [(a, fa), (b, fb)] {
            if v < best_v {
                best_x = x;
                best_v = v;
            }
        }
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = eval(a)?;
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = eval(b)?;
        }
    }
    let alpha = best_x.exp();
    let f = s.scale(alpha);
    // Re-verified from scratch rather than trusting the search value.
    let composite_radius = composite_radius(t, s, &f)?;
    if !(composite_radius < 1.0 - margin) {
        return Err(observer_failure(t, composite_radius));
    }
    Ok(ObserverDesign { f, composite_radius, alpha: Some(alpha) })
}

/// Accepts a user-supplied `F` after checking the composite radius.
pub fn verify_f(t: &Topology, s: &Mat, f: &Mat, margin: f64) -> Result<ObserverDesign> {
    check_observer_inputs(t, s)?;
    let r = composite_radius(t, s, f)?;
    if !(r < 1.0 - margin) {
        return Err(observer_failure(t, r));
    }
    Ok(ObserverDesign { f: f.clone(), composite_radius: r, alpha: None })
}

/// The observer composite is Schur and every closed-loop vertex of every agent is Schur.
pub fn verify_lemma1(t: &Topology, s: &Mat, f: &Mat, closed_loops: &[MatrixPolytope]) -> bool {
    let observer_ok = composite_radius(t, s, f).is_ok_and(|r| r < 1.0);
    observer_ok
        && closed_loops
            .iter()
            .all(|mp| vertex_spectral_radii(mp).is_ok_and(|r| r.iter().all(|v| *v < 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{collect, collect_with, Restart, TrueSystem};
    use crate::polytope::box_polytope;
    use crate::represent::build_consistency_set;
    use crate::sdpcore::check_solution;

    fn rotation() -> Mat {
        Mat::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]).unwrap()
    }

    fn follower4() -> TrueSystem {
        TrueSystem::new(
            Mat::from_rows(&[[0.0, 1.0], [-1.0, -3.0]]).unwrap(),
            Mat::from_rows(&[[1.0], [1.0]]).unwrap(),
            Mat::from_rows(&[[-1.0, 1.0]]).unwrap(),
        )
        .unwrap()
    }

    fn inputs() -> crate::polytope::VPolytope {
        box_polytope(&[1.0]).unwrap()
    }

    #[test]
    fn scalar_noise_free() {
        let sys = TrueSystem::new(Mat::diag(&[2.0]), Mat::diag(&[3.0]), Mat::diag(&[1.0])).unwrap();
        let noise = NoiseModel::zero(1, 1);
        let d = collect(&sys, &noise, 6, &inputs(), &[0.3], 1).unwrap();
        let r = synthesize_k(&d, &noise, DEFAULT_MARGIN).unwrap();
        let cl = 2.0 + 3.0 * r.k[(0, 0)];
        assert!(cl.abs() < 1.0, "K = {}", r.k[(0, 0)]);
        assert!(d.x.matmul(&r.m_decision).unwrap()[(0, 0)] > 0.0);
    }

    #[test]
    fn follower4_noisy_all_vertices_schur() {
        let sys = follower4();
        let noise = NoiseModel::boxes(2, 1, 0.01, 0.01).unwrap();
        let d = collect_with(&sys, &noise, 20, &inputs(), &[0.5, -0.5], 7, Restart { above: Some(1e3) }).unwrap();
        let r = synthesize_k(&d, &noise, DEFAULT_MARGIN).unwrap();
        assert_eq!(r.vertex_radii.len(), 80);
        assert!(r.vertex_radii.iter().all(|v| *v < 1.0));
        let true_cl = &sys.a + &(&sys.b * &r.k);
        assert!(numkit::spectral_radius(&true_cl).unwrap() < 1.0);

        let cs = build_consistency_set(&d, &noise).unwrap();
        let closed = closed_loop_polytope(&cs, &r.k).unwrap();
        assert!(lyapunov_decrease(&closed, &r.lyapunov_p).unwrap() < -1e-9);
    }

    #[test]
    fn schur_complement_and_convex_combinations() {
        let sys = follower4();
        let noise = NoiseModel::boxes(2, 1, 0.01, 0.01).unwrap();
        let d = collect_with(&sys, &noise, 20, &inputs(), &[0.5, -0.5], 11, Restart { above: Some(1e3) }).unwrap();
        let r = synthesize_k(&d, &noise, DEFAULT_MARGIN).unwrap();
        let cs = build_consistency_set(&d, &noise).unwrap();
        let lmi = feedback_lmi(&d, &cs, r.margin).unwrap();
        let (lmi_margin, eq) = check_solution(&lmi, &r.m_decision.vec());
        assert!(lmi_margin > 0.0 && eq < 1e-8);

        let lambda = 1.0 - r.margin;
        let xm = d.x.matmul(&r.m_decision).unwrap().symmetrize();
        let xm_inv = numkit::inverse(&xm).unwrap();
        for w in cs.w_poly.vertices() {
            let om = (&d.x_plus - w).matmul(&r.m_decision).unwrap();
            let schur = &xm.scale(lambda) - &(&om * &(&xm_inv * &om.transpose())).scale(1.0 / lambda);
            assert!(numkit::min_sym_eigenvalue(&schur.symmetrize()).unwrap() > 0.0);
        }

        let mut rng = crate::datagen::rng_from(3);
        let closed = closed_loop_polytope(&cs, &r.k).unwrap();
        for _ in 0..100 {
            let wts = crate::datagen::simplex_weights(closed.len(), &mut rng);
            let q = closed.combine(&wts).unwrap();
            assert!(numkit::spectral_radius(&q).unwrap() < 1.0);
        }
    }

    #[test]
    fn uncontrollable_fails() {
        let sys = TrueSystem::new(Mat::identity(2), Mat::zeros(2, 1), Mat::from_rows(&[[1.0, 0.0]]).unwrap())
            .unwrap();
        let noise = NoiseModel::zero(2, 1);
        let d = collect(&sys, &noise, 10, &inputs(), &[1.0, 0.5], 2);
        // Either the rank test or the LMI must refuse: no K can stabilize.
        match d.and_then(|d| synthesize_k(&d, &noise, DEFAULT_MARGIN)) {
            Err(Error::Synthesis { .. }) | Err(Error::Assumption(_)) => {}
            other => panic!("expected a failure, got {other:?}"),
        }
    }

    #[test]
    fn uncontrollable_with_rank_fails_in_lmi() {
        // A = I, B = 0 but with noisy data the rank condition can hold, while
        // every consistent system still has an uncontrollable unit mode.
        let sys = TrueSystem::new(Mat::identity(1), Mat::zeros(1, 1), Mat::identity(1)).unwrap();
        let noise = NoiseModel::boxes(1, 1, 0.01, 0.0).unwrap();
        let d = collect(&sys, &noise, 10, &inputs(), &[1.0], 5).unwrap();
        // The column-wise vertex hull misses the realized noise, so only the
        // scaled hull is guaranteed to contain B = 0.
        let err = synthesize_k_with(&d, &noise, DEFAULT_MARGIN, HullMode::Scaled).unwrap_err();
        assert!(matches!(err, Error::Synthesis { .. } | Error::CertificateMismatch(_)), "{err:?}");
    }

    #[test]
    fn observer_examples() {
        let s = rotation();
        let one = Topology::chain(1).unwrap();
        let d = design_f(&one, &s, 1e-3).unwrap();
        assert!(d.composite_radius < 1e-6, "{d:?}");
        assert!((d.alpha.unwrap() - 2.0).abs() < 1e-4);

        let two = Topology::chain(2).unwrap();
        let d = design_f(&two, &s, 1e-3).unwrap();
        assert!(d.composite_radius < 1e-3);
        assert!((d.alpha.unwrap() - 2.0).abs() < 1e-2);

        let six = Topology::chain(6).unwrap();
        let d = design_f(&six, &s, 1e-3).unwrap();
        assert!(d.composite_radius < 0.999);
        let again = composite_radius(&six, &s, &d.f).unwrap();
        assert_eq!(again, d.composite_radius);

        assert!(matches!(verify_f(&one, &s, &Mat::zeros(2, 2), 1e-3), Err(Error::ObserverDesign { .. })));
        let unpinned = Topology::new(Mat::zeros(1, 1), vec![0.0]).unwrap();
        assert!(matches!(design_f(&unpinned, &s, 1e-3), Err(Error::Assumption(_))));
    }

    #[test]
    fn lemma1_examples() {
        let s = rotation();
        let t = Topology::chain(2).unwrap();
        let f = design_f(&t, &s, 1e-3).unwrap().f;
        let zero = MatrixPolytope::singleton(Mat::zeros(2, 2)).unwrap();
        assert!(verify_lemma1(&t, &s, &f, &[zero.clone(), zero.clone()]));
        let bad = MatrixPolytope::new(vec![Mat::zeros(2, 2), Mat::diag(&[1.01, 0.0])]).unwrap();
        assert!(!verify_lemma1(&t, &s, &f, &[zero, bad]));
    }
}
