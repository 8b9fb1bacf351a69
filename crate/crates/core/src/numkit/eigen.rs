//! Eigenvalues of a general real matrix.
//!
//! The matrix is balanced by exact powers of two, reduced to upper Hessenberg
//! form with Householder reflections, and then driven to quasi-triangular form
//! by Francis double-shift QR sweeps. Only eigenvalues are produced.

use num_complex::Complex64;

use super::mat::Mat;
use crate::error::{Error, Result};

const MAX_ITERS_PER_EIGENVALUE: usize = 60;

/// Full complex spectrum of a real square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn moduli(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|z| z.norm()).collect()
    }

    pub fn radius(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

pub fn eigenvalues(m: &Mat) -> Result<Spectrum> {
    if !m.is_square() {
        return Err(Error::Shape(format!(
            "eigenvalues need a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let n = m.rows();
    if n == 0 {
        return Ok(Spectrum { eigenvalues: vec![] });
    }
    let mut a = OneBased::from_mat(m);
    balance(&mut a);
    hessenberg(&mut a);
    let eigenvalues = hqr(&mut a)?;
    Ok(Spectrum { eigenvalues })
}

pub fn spectral_radius(m: &Mat) -> Result<f64> {
    Ok(eigenvalues(m)?.radius())
}

/// True iff the spectral radius is strictly below `1 − margin`.
pub fn is_schur(m: &Mat, margin: f64) -> Result<bool> {
    if !(0.0..1.0).contains(&margin) {
        return Err(Error::InvalidInput(format!("margin must lie in [0, 1), got {margin}")));
    }
    Ok(spectral_radius(m)? < 1.0 - margin)
}

/// Dense storage addressed with 1-based indices, which keeps the QR sweep
/// close to its classical formulation.
struct OneBased {
    n: usize,
    data: Vec<f64>,
}

impl OneBased {
    fn from_mat(m: &Mat) -> Self {
        let n = m.rows();
        let mut data = vec![0.0; (n + 1) * (n + 1)];
        for i in 0..n {
            for j in 0..n {
                data[(i + 1) * (n + 1) + j + 1] = m[(i, j)];
            }
        }
        Self { n, data }
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.n + 1) + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * (self.n + 1) + j] = v;
    }

    #[inline]
    fn sub(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * (self.n + 1) + j] -= v;
    }
}

fn balance(a: &mut OneBased) {
    const RADIX: f64 = 2.0;
    let n = a.n;
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 1..=n {
            let (mut r, mut c) = (0.0, 0.0);
            for j in 1..=n {
                if j != i {
                    c += a.get(j, i).abs();
                    r += a.get(i, j).abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 1..=n {
                        let v = a.get(i, j) * g;
                        a.set(i, j, v);
                    }
                    for j in 1..=n {
                        let v = a.get(j, i) * f;
                        a.set(j, i, v);
                    }
                }
            }
        }
    }
}

fn hessenberg(a: &mut OneBased) {
    let n = a.n;
    let mut ort = vec![0.0; n + 1];
    for m in 2..n {
        let scale: f64 = (m..=n).map(|i| a.get(i, m - 1).abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut h = 0.0;
        for i in (m..=n).rev() {
            ort[i] = a.get(i, m - 1) / scale;
            h += ort[i] * ort[i];
        }
        let mut g = h.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        h -= ort[m] * g;
        ort[m] -= g;
        for j in m..=n {
            let f: f64 = (m..=n).rev().map(|i| ort[i] * a.get(i, j)).sum::<f64>() / h;
            for i in m..=n {
                a.sub(i, j, f * ort[i]);
            }
        }
        for i in 1..=n {
            let f: f64 = (m..=n).rev().map(|j| ort[j] * a.get(i, j)).sum::<f64>() / h;
            for j in m..=n {
                a.sub(i, j, f * ort[j]);
            }
        }
        a.set(m, m - 1, scale * g);
        for i in (m + 1)..=n {
            a.set(i, m - 1, 0.0);
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

#[allow(clippy::many_single_char_names, unused_assignments)]
fn hqr(a: &mut OneBased) -> Result<Vec<Complex64>> {
    let n = a.n;
    let mut wr = vec![0.0; n + 1];
    let mut wi = vec![0.0; n + 1];
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a.get(i, j).abs();
        }
    }
    let mut nn = n;
    let mut t = 0.0;
    let (mut p, mut q, mut r) = (0.0f64, 0.0f64, 0.0f64);
    while nn >= 1 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l >= 2 {
                let mut s = a.get(l - 1, l - 1).abs() + a.get(l, l).abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a.get(l, l - 1).abs() <= f64::EPSILON * s {
                    a.set(l, l - 1, 0.0);
                    break;
                }
                l -= 1;
            }
            let mut x = a.get(nn, nn);
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = 0.0;
                nn -= 1;
            } else {
                let mut y = a.get(nn - 1, nn - 1);
                let mut w = a.get(nn, nn - 1) * a.get(nn - 1, nn);
                if l == nn - 1 {
                    p = 0.5 * (y - x);
                    q = p * p + w;
                    let mut z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + sign(z, p);
                        wr[nn - 1] = x + z;
                        wr[nn] = x + z;
                        if z != 0.0 {
                            wr[nn] = x - w / z;
                        }
                        wi[nn - 1] = 0.0;
                        wi[nn] = 0.0;
                    } else {
                        wr[nn - 1] = x + p;
                        wr[nn] = x + p;
                        wi[nn - 1] = -z;
                        wi[nn] = z;
                    }
                    nn = nn.saturating_sub(2);
                } else {
                    if its == MAX_ITERS_PER_EIGENVALUE {
                        return Err(Error::Numerical(format!(
                            "QR iteration did not converge after {its} sweeps"
                        )));
                    }
                    if its > 0 && its % 10 == 0 {
                        // Exceptional shift.
                        t += x;
                        for i in 1..=nn {
                            a.sub(i, i, x);
                        }
                        let s = a.get(nn, nn - 1).abs() + a.get(nn - 1, nn - 2).abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    let mut m = nn - 2;
                    loop {
                        let z = a.get(m, m);
                        let r0 = x - z;
                        let s0 = y - z;
                        p = (r0 * s0 - w) / a.get(m + 1, m) + a.get(m, m + 1);
                        q = a.get(m + 1, m + 1) - z - r0 - s0;
                        r = a.get(m + 2, m + 1);
                        let s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = a.get(m, m - 1).abs() * (q.abs() + r.abs());
                        let v = p.abs()
                            * (a.get(m - 1, m - 1).abs() + z.abs() + a.get(m + 1, m + 1).abs());
                        if u <= f64::EPSILON * v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in (m + 2)..=nn {
                        a.set(i, i - 2, 0.0);
                        if i != m + 2 {
                            a.set(i, i - 3, 0.0);
                        }
                    }
                    let mut k = m;
                    while k < nn {
                        if k != m {
                            p = a.get(k, k - 1);
                            q = a.get(k + 1, k - 1);
                            r = 0.0;
                            if k != nn - 1 {
                                r = a.get(k + 2, k - 1);
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != 0.0 {
                            if k == m {
                                if l != m {
                                    let v = -a.get(k, k - 1);
                                    a.set(k, k - 1, v);
                                }
                            } else {
                                a.set(k, k - 1, -s * x);
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            let z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nn {
                                let mut pp = a.get(k, j) + q * a.get(k + 1, j);
                                if k != nn - 1 {
                                    pp += r * a.get(k + 2, j);
                                    a.sub(k + 2, j, pp * z);
                                }
                                a.sub(k + 1, j, pp * y);
                                a.sub(k, j, pp * x);
                            }
                            let mmin = nn.min(k + 3);
                            for i in l..=mmin {
                                let mut pp = x * a.get(i, k) + y * a.get(i, k + 1);
                                if k != nn - 1 {
                                    pp += z * a.get(i, k + 2);
                                    a.sub(i, k + 2, pp * r);
                                }
                                a.sub(i, k + 1, pp * q);
                                a.sub(i, k, pp);
                            }
                        }
                        k += 1;
                    }
                }
            }
            if nn == 0 || l + 1 >= nn {
                break;
            }
        }
    }
    Ok((1..=n).map(|i| Complex64::new(wr[i], wi[i])).collect())
}
