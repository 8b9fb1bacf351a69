//! The set of systems consistent with one agent's data.
//!
//! With `D = [U; X]` of full row rank, every `[B A]` that could have produced
//! the data under some noise matrix `W` equals `(X₊ − W)D†`, and every `C`
//! equals `(Y − V)X†`. Letting `W` and `V` range over the noise matrix
//! polytopes yields two matrix polytopes that contain the true system.

use serde::{Deserialize, Serialize};

use crate::datagen::{AgentDataset, NoiseModel, TrueSystem};
use crate::error::{Error, Result};
use crate::numkit::{self, Mat, DEFAULT_RANK_TOL};
use crate::polytope::{map_matrix_polytope, noise_matrix_polytope, HullMode, MatrixPolytope};

/// Residual below which the reconstruction identity counts as exact.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySet {
    /// Vertices of `[B A]`, each `n × (p + n)`.
    pub z_poly: MatrixPolytope,
    /// Vertices of `C`, each `q × n`.
    pub c_poly: MatrixPolytope,
    /// The noise matrix polytopes the two sets were built from.
    pub w_poly: MatrixPolytope,
    pub v_poly: MatrixPolytope,
    /// Cached `[U; X]†`.
    pub ux_pinv: Mat,
    /// Cached `X†`.
    pub x_pinv: Mat,
    pub n: usize,
    pub p: usize,
    pub mode: HullMode,
}

impl ConsistencySet {
    /// `X₊[U; X]†`, the noise-free estimate of `[B A]`.
    pub fn z_nominal(&self) -> Mat {
        // Every vertex is nominal − Ŵ_k·D†; the noise vertex set is symmetric
        // for boxes, but recomputing from one vertex keeps this general.
        let w0 = &self.w_poly.vertices()[0];
        &self.z_poly.vertices()[0] + &(w0 * &self.ux_pinv)
    }

    /// `Y X†`, the noise-free estimate of `C`.
    pub fn c_nominal(&self) -> Mat {
        let v0 = &self.v_poly.vertices()[0];
        &self.c_poly.vertices()[0] + &(v0 * &self.x_pinv)
    }
}

pub fn build_consistency_set(d: &AgentDataset, noise: &NoiseModel) -> Result<ConsistencySet> {
    build_consistency_set_with(d, noise, HullMode::Verbatim)
}

pub fn build_consistency_set_with(
    d: &AgentDataset,
    noise: &NoiseModel,
    mode: HullMode,
) -> Result<ConsistencySet> {
    let (n, p, q) = (d.n(), d.p(), d.q());
    if noise.process.dim() != n || noise.measurement.dim() != q {
        return Err(Error::Shape(format!(
            "noise dims ({}, {}) do not match n = {n}, q = {q}",
            noise.process.dim(),
            noise.measurement.dim()
        )));
    }
    let ux = d.ux();
    let s = numkit::singular_values(&ux)?;
    let smax = s.first().copied().unwrap_or(0.0);
    if ux.rows() > ux.cols() || s.last().is_none_or(|v| *v <= DEFAULT_RANK_TOL * smax) {
        return Err(Error::Assumption(format!(
            "Assumption 5 (full row rank of [U; X]) fails: {}x{} with smallest singular value {:.3e}",
            ux.rows(),
            ux.cols(),
            if ux.rows() > ux.cols() { 0.0 } else { s.last().copied().unwrap_or(0.0) }
        )));
    }
    let ux_pinv = numkit::pinv(&ux, DEFAULT_RANK_TOL)?;
    let x_pinv = numkit::pinv(&d.x, DEFAULT_RANK_TOL)?;
    let w_poly = noise_matrix_polytope(&noise.process, d.rho, mode)?;
    let v_poly = noise_matrix_polytope(&noise.measurement, d.rho, mode)?;
    let z_poly = map_matrix_polytope(&w_poly, &ux_pinv, &Mat::identity(n).scale(-1.0), &(&d.x_plus * &ux_pinv))?;
    let c_poly = map_matrix_polytope(&v_poly, &x_pinv, &Mat::identity(q).scale(-1.0), &(&d.y * &x_pinv))?;
    Ok(ConsistencySet { z_poly, c_poly, w_poly, v_poly, ux_pinv, x_pinv, n, p, mode })
}

/// Frobenius residuals of `[B̄ Ā] − (X₊ − W)[U; X]†` and `C̄ − (Y − V)X†`
/// for the realized noise.
pub fn true_membership_residuals(
    cs: &ConsistencySet,
    sys: &TrueSystem,
    d: &AgentDataset,
) -> Result<(f64, f64)> {
    let (Some(w), Some(v)) = (&d.w, &d.v) else {
        return Err(Error::OracleUnavailable(
            "dataset was stored without its noise realization".into(),
        ));
    };
    let z = &(&d.x_plus - w) * &cs.ux_pinv;
    let c = &(&d.y - v) * &cs.x_pinv;
    Ok(((&sys.z() - &z).norm_fro(), (&sys.c - &c).norm_fro()))
}

pub fn verify_true_membership(cs: &ConsistencySet, sys: &TrueSystem, d: &AgentDataset) -> Result<bool> {
    let (rz, rc) = true_membership_residuals(cs, sys, d)?;
    Ok(rz < MEMBERSHIP_TOL && rc < MEMBERSHIP_TOL)
}

/// `M_Z [K; I]`: every consistent closed-loop matrix `A + BK` lies in its hull.
pub fn closed_loop_polytope(cs: &ConsistencySet, k: &Mat) -> Result<MatrixPolytope> {
    if k.shape() != (cs.p, cs.n) {
        return Err(Error::Shape(format!(
            "gain is {:?}, expected {}x{}",
            k.shape(),
            cs.p,
            cs.n
        )));
    }
    let right = k.vstack(&Mat::identity(cs.n))?;
    map_matrix_polytope(&cs.z_poly, &right, &Mat::identity(cs.n), &Mat::zeros(cs.n, cs.n))
}
