//! Factorizations: one-sided Jacobi SVD, cyclic Jacobi for symmetric matrices,
//! Cholesky and partial-pivot LU.

use super::mat::Mat;
use crate::error::{Error, Result};

/// Relative rank tolerance used when callers have no better information.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

const JACOBI_MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `m = u · diag(s) · vᵀ`, singular values descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

fn check_finite(m: &Mat) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput("matrix has non-finite entries".into()))
    }
}

/// Singular value decomposition by one-sided (Hestenes) Jacobi rotations.
pub fn svd(m: &Mat) -> Result<Svd> {
    check_finite(m)?;
    if m.rows() < m.cols() {
        let t = svd_tall(&m.transpose())?;
        return Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    svd_tall(m)
}

fn svd_tall(m: &Mat) -> Result<Svd> {
    let (rows, n) = m.shape();
    // Work on columns stored contiguously.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| m.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    // Columns that have shrunk to rounding noise are left alone; rotating them
    // against each other can cycle without ever meeting the relative test.
    let negligible = {
        let fro = m.norm_fro();
        (f64::EPSILON * fro).powi(2)
    };
    let orth_tol = f64::EPSILON * (rows as f64).sqrt();
    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..rows {
                    let (a, b) = (cols[p][i], cols[q][i]);
                    alpha += a * a;
                    beta += b * b;
                    gamma += a * b;
                }
                if gamma == 0.0
                    || alpha <= negligible
                    || beta <= negligible
                    || gamma.abs() <= orth_tol * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (cp, cq) = split_pair(&mut cols, p, q);
                rotate(cp, cq, c, s);
                let (vp, vq) = split_pair(&mut v, p, q);
                rotate(vp, vq, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("Jacobi SVD did not converge".into()));
    }

    let mut order: Vec<(usize, f64)> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (j, c.iter().map(|x| x * x).sum::<f64>().sqrt()))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut u = Mat::zeros(rows, n);
    let mut vm = Mat::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, (j, sigma)) in order.iter().enumerate() {
        s.push(*sigma);
        for i in 0..rows {
            u[(i, k)] = if *sigma > 0.0 { cols[*j][i] / sigma } else { 0.0 };
        }
        for i in 0..n {
            vm[(i, k)] = v[*j][i];
        }
    }
    Ok(Svd { u, s, v: vm })
}

fn split_pair(v: &mut [Vec<f64>], p: usize, q: usize) -> (&mut Vec<f64>, &mut Vec<f64>) {
    debug_assert!(p < q);
    let (lo, hi) = v.split_at_mut(q);
    (&mut lo[p], &mut hi[0])
}

fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xa, yb) = (*x, *y);
        *x = c * xa - s * yb;
        *y = s * xa + c * yb;
    }
}

pub fn singular_values(m: &Mat) -> Result<Vec<f64>> {
    Ok(svd(m)?.s)
}

/// Spectral norm (largest singular value).
pub fn norm2(m: &Mat) -> Result<f64> {
    Ok(singular_values(m)?.first().copied().unwrap_or(0.0))
}

/// Moore–Penrose pseudoinverse. Singular values below `tol · σ_max` are treated as zero.
pub fn pinv(m: &Mat, tol: f64) -> Result<Mat> {
    if tol < 0.0 || !tol.is_finite() {
        return Err(Error::InvalidInput(format!("rank tolerance must be >= 0, got {tol}")));
    }
    let Svd { u, s, v } = svd(m)?;
    let cutoff = tol * s.first().copied().unwrap_or(0.0);
    let mut out = Mat::zeros(m.cols(), m.rows());
    for (k, sigma) in s.iter().enumerate() {
        if *sigma <= cutoff || *sigma == 0.0 {
            continue;
        }
        for i in 0..m.cols() {
            let vik = v[(i, k)] / sigma;
            if vik == 0.0 {
                continue;
            }
            for j in 0..m.rows() {
                out[(i, j)] += vik * u[(j, k)];
            }
        }
    }
    Ok(out)
}

/// Numerical rank relative to `tol · σ_max`.
pub fn rank(m: &Mat, tol: f64) -> Result<usize> {
    let s = singular_values(m)?;
    let cutoff = tol * s.first().copied().unwrap_or(0.0);
    Ok(s.iter().filter(|v| **v > cutoff && **v > 0.0).count())
}

/// Minimum-norm least-squares solution of `a·x ≈ b`.
pub fn solve_least_squares(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.rows() != b.rows() {
        return Err(Error::Shape(format!(
            "least squares needs equal row counts, got {} and {}",
            a.rows(),
            b.rows()
        )));
    }
    pinv(a, DEFAULT_RANK_TOL)?.matmul(b)
}

/// Orthonormal basis of the null space of `m` (columns), using the given relative tolerance.
pub fn null_space(m: &Mat, tol: f64) -> Result<Mat> {
    let n = m.cols();
    if m.rows() == 0 {
        return Ok(Mat::identity(n));
    }
    // Full V is needed, so pad to a tall matrix.
    let padded = if m.rows() < n {
        m.vstack(&Mat::zeros(n - m.rows(), n))?
    } else {
        m.clone()
    };
    let Svd { s, v, .. } = svd(&padded)?;
    let cutoff = tol * s.first().copied().unwrap_or(0.0);
    let keep: Vec<usize> = (0..n).filter(|k| s[*k] <= cutoff || s[*k] == 0.0).collect();
    Ok(Mat::from_fn(n, keep.len(), |i, j| v[(i, keep[j])]))
}

/// Symmetric eigendecomposition by cyclic Jacobi. Eigenvalues ascending, eigenvectors as columns.
pub fn sym_eigen(m: &Mat) -> Result<(Vec<f64>, Mat)> {
    if !m.is_square() {
        return Err(Error::Shape(format!("sym_eigen needs a square matrix, got {:?}", m.shape())));
    }
    check_finite(m)?;
    let n = m.rows();
    let mut a = m.symmetrize();
    let mut v = Mat::identity(n);
    let scale = a.norm_fro();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || off == 0.0 {
            let mut pairs: Vec<(f64, usize)> = (0..n).map(|i| (a[(i, i)], i)).collect();
            pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
            let vals = pairs.iter().map(|p| p.0).collect();
            let vecs = Mat::from_fn(n, n, |i, j| v[(i, pairs[j].1)]);
            return Ok((vals, vecs));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(Error::Numerical("symmetric Jacobi eigensolver did not converge".into()))
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &Mat) -> Result<f64> {
    Ok(sym_eigen(m)?.0.first().copied().unwrap_or(f64::INFINITY))
}

pub fn max_sym_eigenvalue(m: &Mat) -> Result<f64> {
    Ok(sym_eigen(m)?.0.last().copied().unwrap_or(f64::NEG_INFINITY))
}

/// Lower-triangular Cholesky factor; `None` if the matrix is not numerically positive definite.
pub fn cholesky(m: &Mat) -> Option<Mat> {
    if !m.is_square() {
        return None;
    }
    let n = m.rows();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Inverse of a symmetric positive-definite matrix from its Cholesky factor.
pub fn cholesky_inverse(l: &Mat) -> Mat {
    let n = l.rows();
    // Invert L by forward substitution, then form L⁻ᵀ L⁻¹.
    let mut linv = Mat::zeros(n, n);
    for j in 0..n {
        linv[(j, j)] = 1.0 / l[(j, j)];
        for i in (j + 1)..n {
            let mut s = 0.0;
            for k in j..i {
                s -= l[(i, k)] * linv[(k, j)];
            }
            linv[(i, j)] = s / l[(i, i)];
        }
    }
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..n {
                s += linv[(k, i)] * linv[(k, j)];
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

/// General inverse by LU with partial pivoting.
pub fn inverse(m: &Mat) -> Result<Mat> {
    if !m.is_square() {
        return Err(Error::Shape(format!("inverse needs a square matrix, got {:?}", m.shape())));
    }
    check_finite(m)?;
    let n = m.rows();
    let mut a = m.clone();
    let mut inv = Mat::identity(n);
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|x, y| a[(*x, col)].abs().total_cmp(&a[(*y, col)].abs()))
            .unwrap();
        if a[(pivot, col)].abs() <= 1e-14 * scale {
            return Err(Error::Numerical("matrix is singular to working precision".into()));
        }
        if pivot != col {
            for j in 0..n {
                let t = a[(col, j)];
                a[(col, j)] = a[(pivot, j)];
                a[(pivot, j)] = t;
                let t = inv[(col, j)];
                inv[(col, j)] = inv[(pivot, j)];
                inv[(pivot, j)] = t;
            }
        }
        let d = a[(col, col)];
        for j in 0..n {
            a[(col, j)] /= d;
            inv[(col, j)] /= d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[(r, col)];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                a[(r, j)] -= f * a[(col, j)];
                inv[(r, j)] -= f * inv[(col, j)];
            }
        }
    }
    Ok(inv)
}

/// Symmetric square root and inverse square root of an SPD matrix.
pub fn sym_sqrt_pair(m: &Mat) -> Result<(Mat, Mat)> {
    let (vals, vecs) = sym_eigen(m)?;
    if vals.iter().any(|v| *v <= 0.0) {
        return Err(Error::Numerical("matrix is not positive definite".into()));
    }
    let n = m.rows();
    let build = |f: &dyn Fn(f64) -> f64| {
        let mut out = Mat::zeros(n, n);
        for (k, lam) in vals.iter().enumerate() {
            let w = f(*lam);
            for i in 0..n {
                for j in 0..n {
                    out[(i, j)] += w * vecs[(i, k)] * vecs[(j, k)];
                }
            }
        }
        out
    };
    Ok((build(&|l| l.sqrt()), build(&|l| 1.0 / l.sqrt())))
}
