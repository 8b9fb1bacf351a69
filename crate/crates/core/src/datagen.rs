//! Offline open-loop experiments and the data-richness check.
//!
//! A dataset holds `ρ` columns of `(x(T), x(T+1), u(T), y(T))` generated by
//! `x(T+1) = Āx(T) + B̄u(T) + w(T)`, `y(T) = C̄x(T) + v(T)`. The realized
//! noise is kept alongside so that oracle checks can reconstruct the true
//! matrices; identification and synthesis never read it.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{self, Mat};
use crate::polytope::{box_polytope, VPolytope};

/// States beyond this magnitude are treated as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueSystem {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
}

impl TrueSystem {
    pub fn new(a: Mat, b: Mat, c: Mat) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() || b.rows() != n || c.cols() != n {
            return Err(Error::Shape(format!(
                "A {:?}, B {:?}, C {:?} are not conformal",
                a.shape(),
                b.shape(),
                c.shape()
            )));
        }
        if n == 0 || b.cols() == 0 || c.rows() == 0 {
            return Err(Error::Shape("system dimensions must be at least 1".into()));
        }
        Ok(Self { a, b, c })
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn p(&self) -> usize {
        self.b.cols()
    }

    pub fn q(&self) -> usize {
        self.c.rows()
    }

    /// `[B̄ Ā]`, the matrix the data-based representation reconstructs.
    pub fn z(&self) -> Mat {
        self.b.hstack(&self.a).expect("conformal by construction")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub process: VPolytope,
    pub measurement: VPolytope,
}

impl NoiseModel {
    /// Hypercube noise of half-widths `w_bar` (process) and `v_bar` (measurement).
    /// A zero half-width gives the singleton `{0}`.
    pub fn boxes(n: usize, q: usize, w_bar: f64, v_bar: f64) -> Result<Self> {
        let cube = |dim: usize, h: f64| {
            if h == 0.0 {
                Ok(VPolytope::origin(dim))
            } else {
                box_polytope(&vec![h; dim])
            }
        };
        Ok(Self { process: cube(n, w_bar)?, measurement: cube(q, v_bar)? })
    }

    pub fn zero(n: usize, q: usize) -> Self {
        Self { process: VPolytope::origin(n), measurement: VPolytope::origin(q) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDataset {
    pub x: Mat,
    pub x_plus: Mat,
    pub u: Mat,
    pub y: Mat,
    pub rho: usize,
    /// Realized process noise, when retained.
    pub w: Option<Mat>,
    /// Realized measurement noise, when retained.
    pub v: Option<Mat>,
    /// Columns at which the state was re-drawn instead of propagated.
    #[serde(default)]
    pub restarts: Vec<usize>,
}

impl AgentDataset {
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn p(&self) -> usize {
        self.u.rows()
    }

    pub fn q(&self) -> usize {
        self.y.rows()
    }

    /// The stacked regressor `[U; X]`.
    pub fn ux(&self) -> Mat {
        self.u.vstack(&self.x).expect("equal column counts")
    }

    /// Copy without the noise realizations.
    pub fn without_noise(&self) -> AgentDataset {
        AgentDataset { w: None, v: None, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        let cols = [self.x.cols(), self.x_plus.cols(), self.u.cols(), self.y.cols()];
        if cols.iter().any(|c| *c != self.rho) || self.x_plus.rows() != self.x.rows() {
            return Err(Error::Shape(format!(
                "dataset matrices disagree: ρ = {}, X {:?}, X+ {:?}, U {:?}, Y {:?}",
                self.rho,
                self.x.shape(),
                self.x_plus.shape(),
                self.u.shape(),
                self.y.shape()
            )));
        }
        Ok(())
    }
}

/// Bounded-restart policy for open-loop unstable agents.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Restart {
    /// When `‖x(T+1)‖∞` exceeds this, column `T+1` starts from a fresh state.
    pub above: Option<f64>,
}

pub(crate) fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform-on-simplex convex weights (normalized exponentials).
pub(crate) fn simplex_weights(k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

pub(crate) fn sample_in(p: &VPolytope, rng: &mut impl Rng) -> Vec<f64> {
    if p.len() == 1 {
        return p.vertices()[0].clone();
    }
    let w = simplex_weights(p.len(), rng);
    p.combine(&w).expect("weights are a valid simplex point")
}

/// One random point of `hull(p)`, deterministic in `seed`.
pub fn sample_noise(p: &VPolytope, rng_seed: u64) -> Vec<f64> {
    sample_in(p, &mut rng_from(rng_seed))
}

/// A point drawn uniformly from `[−h, h]ⁿ`, deterministic in `seed`.
pub fn uniform_state(n: usize, h: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed);
    (0..n).map(|_| rng.random_range(-h..=h)).collect()
}

/// Runs the open-loop experiment without restarts.
pub fn collect(
    sys: &TrueSystem,
    noise: &NoiseModel,
    rho: usize,
    input_poly: &VPolytope,
    x0: &[f64],
    seed: u64,
) -> Result<AgentDataset> {
    collect_with(sys, noise, rho, input_poly, x0, seed, Restart::default())
}

pub fn collect_with(
    sys: &TrueSystem,
    noise: &NoiseModel,
    rho: usize,
    input_poly: &VPolytope,
    x0: &[f64],
    seed: u64,
    restart: Restart,
) -> Result<AgentDataset> {
    let (n, p, q) = (sys.n(), sys.p(), sys.q());
    if rho == 0 {
        return Err(Error::InvalidInput("data length ρ must be at least 1".into()));
    }
    if x0.len() != n || input_poly.dim() != p || noise.process.dim() != n || noise.measurement.dim() != q
    {
        return Err(Error::Shape(format!(
            "x0 has {} entries, input polytope dim {}, noise dims ({}, {}); system is n={n}, p={p}, q={q}",
            x0.len(),
            input_poly.dim(),
            noise.process.dim(),
            noise.measurement.dim()
        )));
    }
    if let Some(r) = restart.above {
        if !(r > 0.0 && r < DIVERGENCE_THRESHOLD) {
            return Err(Error::InvalidInput(format!(
                "restart threshold must lie in (0, {DIVERGENCE_THRESHOLD:e}), got {r}"
            )));
        }
    }
    let mut rng = rng_from(seed);
    let mut x = Mat::zeros(n, rho);
    let mut x_plus = Mat::zeros(n, rho);
    let mut u = Mat::zeros(p, rho);
    let mut y = Mat::zeros(q, rho);
    let mut w = Mat::zeros(n, rho);
    let mut v = Mat::zeros(q, rho);
    let mut restarts = Vec::new();
    let mut state = x0.to_vec();
    for t in 0..rho {
        let ut = sample_in(input_poly, &mut rng);
        let wt = sample_in(&noise.process, &mut rng);
        let vt = sample_in(&noise.measurement, &mut rng);
        let mut next = sys.a.mul_vec(&state)?;
        numkit::axpy(1.0, &sys.b.mul_vec(&ut)?, &mut next);
        numkit::axpy(1.0, &wt, &mut next);
        let mut yt = sys.c.mul_vec(&state)?;
        numkit::axpy(1.0, &vt, &mut yt);

        x.set_col(t, &state);
        x_plus.set_col(t, &next);
        u.set_col(t, &ut);
        y.set_col(t, &yt);
        w.set_col(t, &wt);
        v.set_col(t, &vt);

        let magnitude = numkit::vec_norm_inf(&next);
        if !(magnitude <= DIVERGENCE_THRESHOLD) {
            return Err(Error::Divergence { step: t + 1, magnitude });
        }
        state = match restart.above {
            Some(limit) if magnitude > limit && t + 1 < rho => {
                restarts.push(t + 1);
                (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
            }
            _ => next,
        };
    }
    Ok(AgentDataset { x, x_plus, u, y, rho, w: Some(w), v: Some(v), restarts })
}

/// Assumption 5: `[U; X]` has full row rank, with every singular value above `tol`.
pub fn rank_ok(d: &AgentDataset, tol: f64) -> bool {
    let ux = d.ux();
    if ux.rows() > ux.cols() {
        return false;
    }
    match numkit::singular_values(&ux) {
        Ok(s) => s.len() == ux.rows() && s.iter().all(|v| *v > tol),
        Err(_) => false,
    }
}

/// Smallest singular value of `[U; X]`, or zero when it is wide in the wrong direction.
pub fn min_singular_value(d: &AgentDataset) -> Result<f64> {
    let ux = d.ux();
    if ux.rows() > ux.cols() {
        return Ok(0.0);
    }
    Ok(numkit::singular_values(&ux)?.last().copied().unwrap_or(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub rho: usize,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub restarts: Vec<usize>,
    pub noise_retained: bool,
}

pub fn write_matrix_csv(path: &Path, m: &Mat) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Mat> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| {
                    Error::InvalidInput(format!("{}:{}: {e} ({s:?})", path.display(), line + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Mat::from_rows(&rows)
}

/// Writes one CSV per matrix (rows are matrix rows, columns are time steps)
/// plus `manifest.json`.
pub fn export_dataset(dir: &Path, d: &AgentDataset, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix_csv(&dir.join("x.csv"), &d.x)?;
    write_matrix_csv(&dir.join("x_plus.csv"), &d.x_plus)?;
    write_matrix_csv(&dir.join("u.csv"), &d.u)?;
    write_matrix_csv(&dir.join("y.csv"), &d.y)?;
    if let (Some(w), Some(v)) = (&d.w, &d.v) {
        write_matrix_csv(&dir.join("w.csv"), w)?;
        write_matrix_csv(&dir.join("v.csv"), v)?;
    }
    let manifest = DatasetManifest {
        rho: d.rho,
        seed,
        n: d.n(),
        p: d.p(),
        q: d.q(),
        restarts: d.restarts.clone(),
        noise_retained: d.w.is_some() && d.v.is_some(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn import_dataset(dir: &Path) -> Result<(AgentDataset, DatasetManifest)> {
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let (w, v) = if manifest.noise_retained {
        (Some(read_matrix_csv(&dir.join("w.csv"))?), Some(read_matrix_csv(&dir.join("v.csv"))?))
    } else {
        (None, None)
    };
    let d = AgentDataset {
        x: read_matrix_csv(&dir.join("x.csv"))?,
        x_plus: read_matrix_csv(&dir.join("x_plus.csv"))?,
        u: read_matrix_csv(&dir.join("u.csv"))?,
        y: read_matrix_csv(&dir.join("y.csv"))?,
        rho: manifest.rho,
        w,
        v,
        restarts: manifest.restarts.clone(),
    };
    d.validate()?;
    if (d.n(), d.p(), d.q()) != (manifest.n, manifest.p, manifest.q) {
        return Err(Error::Shape(format!(
            "{}: manifest dimensions do not match the CSV files",
            dir.display()
        )));
    }
    Ok((d, manifest))
}
