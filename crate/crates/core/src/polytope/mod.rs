//! Vertex-represented polytopes of vectors and matrices.
//!
//! Only the V-representation is used. Every set in the method is generated
//! from finitely many vertices, and sums or affine images of such sets stay
//! vertex-generated. Vertex lists may contain redundant (interior) points;
//! [`prune`] removes them when it matters.

mod lp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{self, Mat};

use lp::LpOutcome;

/// Largest dimension accepted by [`box_polytope`].
pub const MAX_BOX_DIM: usize = 12;

pub const DEFAULT_MEMBERSHIP_TOL: f64 = 1e-8;

pub const DEFAULT_VERTEX_CAP: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VPolytope {
    dim: usize,
    vertices: Vec<Vec<f64>>,
}

impl VPolytope {
    pub fn new(vertices: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = vertices.first() else {
            return Err(Error::InvalidInput("a polytope needs at least one vertex".into()));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::InvalidInput("polytope dimension must be at least 1".into()));
        }
        if let Some(bad) = vertices.iter().find(|v| v.len() != dim) {
            return Err(Error::Shape(format!(
                "vertex of length {} in a {dim}-dimensional polytope",
                bad.len()
            )));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("polytope vertex has non-finite entries".into()));
        }
        Ok(Self { dim, vertices })
    }

    pub fn point(x: &[f64]) -> Result<Self> {
        Self::new(vec![x.to_vec()])
    }

    pub fn origin(dim: usize) -> Self {
        Self { dim, vertices: vec![vec![0.0; dim]] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for v in &self.vertices {
            numkit::axpy(1.0, v, &mut c);
        }
        let k = self.vertices.len() as f64;
        c.iter_mut().for_each(|x| *x /= k);
        c
    }

    /// Convex combination of the vertices with the given weights.
    pub fn combine(&self, weights: &[f64]) -> Result<Vec<f64>> {
        check_weights(weights, self.len())?;
        let mut out = vec![0.0; self.dim];
        for (w, v) in weights.iter().zip(&self.vertices) {
            numkit::axpy(*w, v, &mut out);
        }
        Ok(out)
    }

    /// Image under the linear map `m`.
    pub fn map(&self, m: &Mat) -> Result<VPolytope> {
        if m.cols() != self.dim {
            return Err(Error::Shape(format!(
                "cannot map a {}-dimensional polytope by a {}x{} matrix",
                self.dim,
                m.rows(),
                m.cols()
            )));
        }
        let vertices = self.vertices.iter().map(|v| m.mul_vec(v)).collect::<Result<_>>()?;
        VPolytope::new(vertices)
    }

    /// Per-coordinate lower and upper bounds over the vertices.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for v in &self.vertices {
            for (i, x) in v.iter().enumerate() {
                lo[i] = lo[i].min(*x);
                hi[i] = hi[i].max(*x);
            }
        }
        (lo, hi)
    }

    /// Largest `|x_i|` over the set, coordinate by coordinate.
    pub fn abs_bounds(&self) -> Vec<f64> {
        let (lo, hi) = self.bounding_box();
        lo.iter().zip(&hi).map(|(l, h)| l.abs().max(h.abs())).collect()
    }

    /// Removes exactly repeated vertices, keeping first occurrences.
    pub fn dedup(&self) -> VPolytope {
        let mut seen: Vec<Vec<f64>> = Vec::with_capacity(self.len());
        for v in &self.vertices {
            if !seen.iter().any(|s| s == v) {
                seen.push(v.clone());
            }
        }
        VPolytope { dim: self.dim, vertices: seen }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VertexNorm {
    Frobenius,
    Two,
    Inf,
}

pub fn vector_norm(v: &[f64], norm: VertexNorm) -> f64 {
    match norm {
        VertexNorm::Frobenius | VertexNorm::Two => numkit::vec_norm2(v),
        VertexNorm::Inf => numkit::vec_norm_inf(v),
    }
}

/// Matrix norm: Frobenius, spectral, or the induced ∞-norm (max row sum).
pub fn matrix_norm(m: &Mat, norm: VertexNorm) -> Result<f64> {
    Ok(match norm {
        VertexNorm::Frobenius => m.norm_fro(),
        VertexNorm::Two => numkit::norm2(m)?,
        VertexNorm::Inf => m.norm_inf(),
    })
}

/// All `2^dim` sign patterns `(±h_1, …, ±h_dim)`.
pub fn box_polytope(half_widths: &[f64]) -> Result<VPolytope> {
    let dim = half_widths.len();
    if dim > MAX_BOX_DIM {
        return Err(Error::Size(format!(
            "box of dimension {dim} would need 2^{dim} vertices (limit {MAX_BOX_DIM})"
        )));
    }
    if let Some(h) = half_widths.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
        return Err(Error::InvalidInput(format!("box half-widths must be positive, got {h}")));
    }
    let vertices = (0..1usize << dim)
        .map(|mask| {
            half_widths
                .iter()
                .enumerate()
                .map(|(i, h)| if mask & (1 << i) == 0 { *h } else { -*h })
                .collect()
        })
        .collect();
    VPolytope::new(vertices)
}

/// Axis-aligned box with the given corners. Degenerate axes do not multiply vertices.
pub fn bounds_box(lo: &[f64], hi: &[f64]) -> Result<VPolytope> {
    if lo.len() != hi.len() {
        return Err(Error::Shape("box corners differ in length".into()));
    }
    let dim = lo.len();
    if dim > MAX_BOX_DIM {
        return Err(Error::Size(format!("box of dimension {dim} exceeds {MAX_BOX_DIM}")));
    }
    let mut vertices = vec![Vec::with_capacity(dim)];
    for i in 0..dim {
        if lo[i] == hi[i] {
            vertices.iter_mut().for_each(|v| v.push(lo[i]));
        } else {
            let mut next = Vec::with_capacity(vertices.len() * 2);
            for v in &vertices {
                for x in [hi[i], lo[i]] {
                    let mut w = v.clone();
                    w.push(x);
                    next.push(w);
                }
            }
            vertices = next;
        }
    }
    VPolytope::new(vertices)
}

pub fn minkowski_sum(a: &VPolytope, b: &VPolytope) -> Result<VPolytope> {
    if a.dim != b.dim {
        return Err(Error::Shape(format!(
            "Minkowski sum of dimensions {} and {}",
            a.dim, b.dim
        )));
    }
    let mut vertices = Vec::with_capacity(a.len() * b.len());
    for u in &a.vertices {
        for v in &b.vertices {
            vertices.push(u.iter().zip(v).map(|(x, y)| x + y).collect());
        }
    }
    VPolytope::new(vertices)
}

pub fn add_point(a: &VPolytope, x: &[f64]) -> Result<VPolytope> {
    if a.dim != x.len() {
        return Err(Error::Shape(format!(
            "cannot translate a {}-dimensional polytope by a {}-vector",
            a.dim,
            x.len()
        )));
    }
    let vertices = a
        .vertices
        .iter()
        .map(|v| v.iter().zip(x).map(|(p, q)| p + q).collect())
        .collect();
    VPolytope::new(vertices)
}

pub fn max_vertex_norm(p: &VPolytope, norm: VertexNorm) -> f64 {
    p.vertices.iter().map(|v| vector_norm(v, norm)).fold(0.0, f64::max)
}

/// Smallest `‖Σβ_k v_k − x‖_∞` over the simplex, solved as an LP.
pub fn hull_distance_inf(p: &VPolytope, x: &[f64]) -> Result<f64> {
    if p.dim != x.len() {
        return Err(Error::Shape(format!(
            "membership of a {}-vector in a {}-dimensional polytope",
            x.len(),
            p.dim
        )));
    }
    let scale = p
        .vertices
        .iter()
        .flatten()
        .chain(x)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(0.0);
    }
    // Variables: β (k of them) then the residual bound s.
    let k = p.len();
    let mut c = vec![0.0; k + 1];
    c[k] = 1.0;
    let mut a_ub = Vec::with_capacity(2 * p.dim);
    let mut b_ub = Vec::with_capacity(2 * p.dim);
    for i in 0..p.dim {
        let mut up: Vec<f64> = p.vertices.iter().map(|v| v[i] / scale).collect();
        let mut down: Vec<f64> = up.iter().map(|v| -v).collect();
        up.push(-1.0);
        down.push(-1.0);
        a_ub.push(up);
        b_ub.push(x[i] / scale);
        a_ub.push(down);
        b_ub.push(-x[i] / scale);
    }
    let mut ones = vec![1.0; k];
    ones.push(0.0);
    match lp::minimize(&c, &a_ub, &b_ub, &[ones], &[1.0]) {
        LpOutcome::Optimal { value, .. } => Ok(value.max(0.0) * scale),
        other => Err(Error::Numerical(format!("membership LP ended as {other:?}"))),
    }
}

/// True iff some convex combination of the vertices lies within `tol` of `x` in the ∞-norm.
///
/// A floating-point slack of a few ulps of the data scale is added to `tol`,
/// so vertices are members even at `tol = 0`.
pub fn contains(p: &VPolytope, x: &[f64], tol: f64) -> Result<bool> {
    if p.vertices.iter().any(|v| v.as_slice() == x) {
        return Ok(true);
    }
    let scale = p.vertices.iter().flatten().chain(x).map(|v| v.abs()).fold(0.0, f64::max);
    Ok(hull_distance_inf(p, x)? <= tol + 64.0 * f64::EPSILON * scale)
}

/// Result of [`prune`]: the reduced polytope and whether the box fallback fired.
#[derive(Debug, Clone, PartialEq)]
pub struct Pruned {
    pub polytope: VPolytope,
    pub boxed: bool,
}

/// Removes redundant vertices, falling back to the bounding box when more
/// than `cap` vertices would remain.
///
/// Exact hulls are computed in one and two dimensions. In higher dimensions
/// each vertex is tested against the hull of the others by LP, but only when
/// the vertex count is small enough for that to be cheap; otherwise the box is
/// used directly. The result always contains the input.
pub fn prune(p: &VPolytope, cap: usize) -> Result<Pruned> {
    let cap = cap.max(1);
    let p = p.dedup();
    let reduced = match p.dim {
        1 => {
            let (lo, hi) = p.bounding_box();
            if lo[0] == hi[0] {
                VPolytope::point(&lo)?
            } else {
                VPolytope::new(vec![lo, hi])?
            }
        }
        2 => hull_2d(&p)?,
        _ if p.len() <= 4 * cap => lp_prune(&p)?,
        _ => p.clone(),
    };
    if reduced.len() <= cap {
        return Ok(Pruned { polytope: reduced, boxed: false });
    }
    let (lo, hi) = reduced.bounding_box();
    Ok(Pruned { polytope: bounds_box(&lo, &hi)?, boxed: true })
}

/// Bounding box of `p` as a polytope.
pub fn box_hull(p: &VPolytope) -> Result<VPolytope> {
    let (lo, hi) = p.bounding_box();
    bounds_box(&lo, &hi)
}

fn hull_2d(p: &VPolytope) -> Result<VPolytope> {
    let mut pts: Vec<[f64; 2]> = p.vertices.iter().map(|v| [v[0], v[1]]).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() <= 2 {
        return VPolytope::new(pts.iter().map(|q| q.to_vec()).collect());
    }
    let cross = |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for q in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], q) <= 0.0 {
            hull.pop();
        }
        hull.push(*q);
    }
    let lower_len = hull.len() + 1;
    for q in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], q) <= 0.0
        {
            hull.pop();
        }
        hull.push(*q);
    }
    hull.pop();
    VPolytope::new(hull.iter().map(|q| q.to_vec()).collect())
}

fn lp_prune(p: &VPolytope) -> Result<VPolytope> {
    let mut keep = p.vertices.clone();
    let mut i = 0;
    while i < keep.len() && keep.len() > 1 {
        let candidate = keep[i].clone();
        let others: Vec<Vec<f64>> =
            keep.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v.clone()).collect();
        let rest = VPolytope::new(others)?;
        let scale = rest.vertices.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
        if hull_distance_inf(&rest, &candidate)? <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            keep.remove(i);
        } else {
            i += 1;
        }
    }
    VPolytope::new(keep)
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::Shape(format!("{} weights for {n} vertices", weights.len())));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| *w < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput("weights must be nonnegative and sum to one".into()));
    }
    Ok(())
}

/// How the column-wise noise vertices are scaled when building a noise matrix polytope.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HullMode {
    /// One vertex per (noise vertex, column) pair, as in the original construction.
    /// The hull does not contain every matrix whose columns are each admissible.
    #[default]
    Verbatim,
    /// Vertices multiplied by ρ. The hull then contains every column-wise
    /// admissible matrix, at the price of a ρ-fold larger set.
    Scaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixPolytope {
    rows: usize,
    cols: usize,
    vertices: Vec<Mat>,
}

impl MatrixPolytope {
    pub fn new(vertices: Vec<Mat>) -> Result<Self> {
        let Some(first) = vertices.first() else {
            return Err(Error::InvalidInput("a matrix polytope needs at least one vertex".into()));
        };
        let (rows, cols) = first.shape();
        if let Some(bad) = vertices.iter().find(|v| v.shape() != (rows, cols)) {
            return Err(Error::Shape(format!(
                "vertex of shape {:?} in a {rows}x{cols} matrix polytope",
                bad.shape()
            )));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix polytope vertex is not finite".into()));
        }
        Ok(Self { rows, cols, vertices })
    }

    pub fn singleton(m: Mat) -> Result<Self> {
        Self::new(vec![m])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn vertices(&self) -> &[Mat] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn combine(&self, weights: &[f64]) -> Result<Mat> {
        check_weights(weights, self.len())?;
        let mut out = Mat::zeros(self.rows, self.cols);
        for (w, v) in weights.iter().zip(&self.vertices) {
            numkit::axpy(*w, v.as_slice(), out.as_mut_slice());
        }
        Ok(out)
    }

    /// Removes exactly repeated vertices.
    pub fn dedup(&self) -> MatrixPolytope {
        let mut seen: Vec<Mat> = Vec::with_capacity(self.len());
        for v in &self.vertices {
            if !seen.contains(v) {
                seen.push(v.clone());
            }
        }
        MatrixPolytope { rows: self.rows, cols: self.cols, vertices: seen }
    }

    /// Image of a vector polytope under every vertex matrix (all products `M_k·v_j`).
    pub fn apply(&self, p: &VPolytope) -> Result<VPolytope> {
        if self.cols != p.dim() {
            return Err(Error::Shape(format!(
                "cannot apply {}x{} matrices to a {}-dimensional polytope",
                self.rows,
                self.cols,
                p.dim()
            )));
        }
        let mut vertices = Vec::with_capacity(self.len() * p.len());
        for m in &self.vertices {
            for v in p.vertices() {
                vertices.push(m.mul_vec(v)?);
            }
        }
        VPolytope::new(vertices)
    }
}

/// Stacks the vertex matrices of one noise polytope column by column.
///
/// Vertex `m + k·ρ` (zero-based) carries the `k`-th vertex of `p` in column `m`
/// and zeros elsewhere, giving `γ·ρ` vertices.
pub fn noise_matrix_polytope(p: &VPolytope, rho: usize, mode: HullMode) -> Result<MatrixPolytope> {
    if rho == 0 {
        return Err(Error::InvalidInput("horizon ρ must be at least 1".into()));
    }
    let factor = match mode {
        HullMode::Verbatim => 1.0,
        HullMode::Scaled => rho as f64,
    };
    let mut vertices = Vec::with_capacity(p.len() * rho);
    for w in p.vertices() {
        for m in 0..rho {
            let mut v = Mat::zeros(p.dim(), rho);
            for (i, x) in w.iter().enumerate() {
                v[(i, m)] = factor * x;
            }
            vertices.push(v);
        }
    }
    MatrixPolytope::new(vertices)
}

/// Vertex-wise affine image `left·V·right + shift`.
pub fn map_matrix_polytope(
    mp: &MatrixPolytope,
    right: &Mat,
    left: &Mat,
    shift: &Mat,
) -> Result<MatrixPolytope> {
    if left.cols() != mp.rows || mp.cols != right.rows() {
        return Err(Error::Shape(format!(
            "cannot form {:?}·[{}x{}]·{:?}",
            left.shape(),
            mp.rows,
            mp.cols,
            right.shape()
        )));
    }
    if shift.shape() != (left.rows(), right.cols()) {
        return Err(Error::Shape(format!(
            "shift of shape {:?} for an image of shape {:?}",
            shift.shape(),
            (left.rows(), right.cols())
        )));
    }
    let vertices = mp
        .vertices
        .iter()
        .map(|v| left.matmul(&v.matmul(right)?)?.try_add(shift))
        .collect::<Result<_>>()?;
    MatrixPolytope::new(vertices)
}

pub fn max_matrix_vertex_norm(mp: &MatrixPolytope, norm: VertexNorm) -> Result<f64> {
    mp.vertices.iter().map(|v| matrix_norm(v, norm)).try_fold(0.0, |acc, n| Ok(f64::max(acc, n?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(h: f64) -> VPolytope {
        box_polytope(&[h, h]).unwrap()
    }

    #[test]
    fn box_examples() {
        let b = square(0.01);
        assert_eq!(b.len(), 4);
        for v in b.vertices() {
            assert!(v.iter().all(|x| x.abs() == 0.01));
        }
        let seg = box_polytope(&[0.01]).unwrap();
        assert_eq!(seg.vertices(), &[vec![0.01], vec![-0.01]]);
        let cube = box_polytope(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(cube.len(), 8);
        assert!(cube.vertices().contains(&vec![1.0, 2.0, 3.0]));
        assert!((max_vertex_norm(&cube, VertexNorm::Two) - 14f64.sqrt()).abs() < 1e-15);
        assert!(matches!(box_polytope(&[1.0; 13]), Err(Error::Size(_))));
        assert!(box_polytope(&[0.0]).is_err());
    }

    #[test]
    fn noise_matrix_examples() {
        let p = box_polytope(&[0.01]).unwrap();
        let mp = noise_matrix_polytope(&p, 2, HullMode::Verbatim).unwrap();
        let want = [[0.01, 0.0], [0.0, 0.01], [-0.01, 0.0], [0.0, -0.01]];
        assert_eq!(mp.len(), 4);
        for (v, w) in mp.vertices().iter().zip(want) {
            assert_eq!(v.as_slice(), &w);
        }

        let zero = noise_matrix_polytope(&VPolytope::origin(1), 5, HullMode::Verbatim).unwrap();
        assert_eq!(zero.len(), 5);
        assert!(zero.vertices().iter().all(|v| v.max_abs() == 0.0));

        let w = VPolytope::point(&[1.0, 1.0]).unwrap();
        let mp = noise_matrix_polytope(&w, 3, HullMode::Verbatim).unwrap();
        assert_eq!(mp.vertices()[1].to_rows(), vec![vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0]]);

        let p20 = noise_matrix_polytope(&p, 20, HullMode::Verbatim).unwrap();
        let n = max_matrix_vertex_norm(&p20, VertexNorm::Frobenius).unwrap();
        assert!((n - 0.01).abs() < 1e-15);
        let scaled = noise_matrix_polytope(&p, 20, HullMode::Scaled).unwrap();
        let n = max_matrix_vertex_norm(&scaled, VertexNorm::Frobenius).unwrap();
        assert!((n - 0.2).abs() < 1e-15);
    }

    #[test]
    fn map_examples() {
        let x_plus_pinv = Mat::from_rows(&[[3.0, 2.0]]).unwrap();
        let zero = MatrixPolytope::singleton(Mat::zeros(1, 4)).unwrap();
        let img = map_matrix_polytope(&zero, &Mat::zeros(4, 2), &Mat::identity(1), &x_plus_pinv)
            .unwrap();
        assert_eq!(img.vertices(), &[x_plus_pinv]);

        let p = noise_matrix_polytope(&square(1.0), 20, HullMode::Verbatim).unwrap();
        let id = map_matrix_polytope(&p, &Mat::identity(20), &Mat::identity(2), &Mat::zeros(2, 20))
            .unwrap();
        assert_eq!(id, p);

        let four = MatrixPolytope::new(vec![Mat::zeros(2, 20); 4]).unwrap();
        let img = map_matrix_polytope(&four, &Mat::zeros(20, 3), &Mat::identity(2), &Mat::zeros(2, 3))
            .unwrap();
        assert_eq!((img.len(), img.shape()), (4, (2, 3)));
        assert!(matches!(
            map_matrix_polytope(&four, &Mat::zeros(3, 3), &Mat::identity(2), &Mat::zeros(2, 3)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn minkowski_examples() {
        let b = box_polytope(&[0.3, 0.7]).unwrap();
        assert_eq!(minkowski_sum(&VPolytope::origin(2), &b).unwrap(), b);

        let s = minkowski_sum(&box_polytope(&[1.0]).unwrap(), &box_polytope(&[2.0]).unwrap()).unwrap();
        let pruned = prune(&s, 64).unwrap().polytope;
        assert_eq!(pruned.vertices(), &[vec![-3.0], vec![3.0]]);

        let s = minkowski_sum(&square(1.0), &square(1.0)).unwrap();
        assert_eq!(max_vertex_norm(&s, VertexNorm::Inf), 2.0);
        assert!(s.vertices().contains(&vec![2.0, 2.0]));

        let t = add_point(&square(1.0), &[1.0, -1.0]).unwrap();
        assert!(t.vertices().contains(&vec![2.0, -2.0]));
        assert!(add_point(&square(1.0), &[1.0]).is_err());
    }

    #[test]
    fn norm_examples() {
        assert!((max_vertex_norm(&square(0.01), VertexNorm::Frobenius) - 0.01 * 2f64.sqrt()).abs() < 1e-16);
        assert_eq!(max_vertex_norm(&VPolytope::origin(3), VertexNorm::Two), 0.0);
    }

    #[test]
    fn membership_examples() {
        let b = box_polytope(&[1.0, 2.0, 3.0]).unwrap();
        assert!(contains(&b, &b.centroid(), 0.0).unwrap());
        for v in b.vertices() {
            assert!(contains(&b, v, 0.0).unwrap());
        }
        assert!(!contains(&b, &[2.0, 4.0, 6.0], DEFAULT_MEMBERSHIP_TOL).unwrap());
        let tri = VPolytope::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(contains(&tri, &[0.25, 0.25], 0.0).unwrap());
        assert!(!contains(&tri, &[0.6, 0.6], 1e-3).unwrap());
        assert!((hull_distance_inf(&tri, &[0.6, 0.6]).unwrap() - 0.1).abs() < 1e-12);
        assert!(contains(&tri, &[0.6, 0.6], 0.1 + 1e-12).unwrap());
    }

    #[test]
    fn prune_2d_and_box_fallback() {
        let mut pts = square(1.0).vertices().to_vec();
        pts.push(vec![0.0, 0.0]);
        pts.push(vec![0.5, -0.2]);
        pts.push(vec![1.0, 0.0]);
        let p = prune(&VPolytope::new(pts).unwrap(), 64).unwrap();
        assert!(!p.boxed);
        assert_eq!(p.polytope.len(), 4);

        let circle: Vec<Vec<f64>> = (0..100)
            .map(|k| {
                let a = k as f64 * std::f64::consts::TAU / 100.0;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let p = prune(&VPolytope::new(circle).unwrap(), 16).unwrap();
        assert!(p.boxed);
        assert_eq!(p.polytope.len(), 4);
    }

    #[test]
    fn degenerate_box_corner_membership() {
        // seven corners of a nearly symmetric box against the eighth; once
        // made the simplex stall in phase 1
        let hi = [4602518680286378268u64, 4599570216880039464, 4595060566508448550];
        let lo = [13825890717139558246u64, 13822942253734201951, 13818432603362982970];
        let mut verts = Vec::new();
        for mask in 0..7u32 {
            let v: Vec<f64> = (0..3)
                .map(|k| f64::from_bits(if mask & (4 >> k) == 0 { hi[k] } else { lo[k] }))
                .collect();
            verts.push(v);
        }
        let x: Vec<f64> = lo.iter().map(|&b| f64::from_bits(b)).collect();
        let d = hull_distance_inf(&VPolytope::new(verts).unwrap(), &x).unwrap();
        assert!((d - 0.1784994546310178).abs() < 1e-9, "{d}");
    }

    #[test]
    fn prune_3d_by_lp() {
        let mut pts = box_polytope(&[1.0, 1.0, 1.0]).unwrap().vertices().to_vec();
        pts.push(vec![0.1, 0.2, -0.3]);
        pts.push(vec![1.0, 0.0, 0.0]);
        let p = prune(&VPolytope::new(pts).unwrap(), 64).unwrap();
        assert_eq!(p.polytope.len(), 8);
        assert!(!p.boxed);
    }

    fn arb_poly(dim: usize) -> impl Strategy<Value = VPolytope> {
        prop::collection::vec(prop::collection::vec(-5.0..5.0f64, dim), 1..12)
            .prop_map(|v| VPolytope::new(v).unwrap())
    }

    fn arb_mat(r: usize, c: usize) -> impl Strategy<Value = Mat> {
        prop::collection::vec(-3.0..3.0f64, r * c).prop_map(move |d| Mat::from_vec(r, c, d).unwrap())
    }

    proptest! {
        #[test]
        fn noise_polytope_structure(dim in 1usize..4, gamma in 1usize..5, rho in 1usize..8, seed in prop::collection::vec(-1.0..1.0f64, 16)) {
            let verts: Vec<Vec<f64>> = (0..gamma).map(|k| (0..dim).map(|i| seed[(k * dim + i) % 16] + 2.0).collect()).collect();
            let p = VPolytope::new(verts).unwrap();
            let mp = noise_matrix_polytope(&p, rho, HullMode::Verbatim).unwrap();
            prop_assert_eq!(mp.len(), gamma * rho);
            for v in mp.vertices() {
                let nonzero_cols = (0..rho).filter(|j| v.col(*j).iter().any(|x| *x != 0.0)).count();
                prop_assert_eq!(nonzero_cols, 1);
            }
        }

        #[test]
        fn map_preserves_weights(vs in prop::collection::vec(arb_mat(2, 3), 1..6), r in arb_mat(3, 2), l in arb_mat(2, 2), s in arb_mat(2, 2), raw in prop::collection::vec(0.01..1.0f64, 6)) {
            let mp = MatrixPolytope::new(vs).unwrap();
            let total: f64 = raw[..mp.len()].iter().sum();
            let w: Vec<f64> = raw[..mp.len()].iter().map(|x| x / total).collect();
            let img = map_matrix_polytope(&mp, &r, &l, &s).unwrap();
            let direct = &(&l * &(&mp.combine(&w).unwrap() * &r)) + &s;
            let via = img.combine(&w).unwrap();
            prop_assert!((&direct - &via).max_abs() < 1e-9);
        }

        #[test]
        fn map_norm_bound(vs in prop::collection::vec(arb_mat(2, 4), 1..6), r in arb_mat(4, 3)) {
            let mp = MatrixPolytope::new(vs).unwrap();
            let img = map_matrix_polytope(&mp, &r, &Mat::identity(2), &Mat::zeros(2, 3)).unwrap();
            let lhs = max_matrix_vertex_norm(&img, VertexNorm::Frobenius).unwrap();
            let rhs = max_matrix_vertex_norm(&mp, VertexNorm::Frobenius).unwrap() * numkit::norm2(&r).unwrap();
            prop_assert!(lhs <= rhs + 1e-9);
        }

        #[test]
        fn vertices_are_members(p in arb_poly(3)) {
            for v in p.vertices() {
                prop_assert!(contains(&p, v, 0.0).unwrap());
            }
        }

        #[test]
        fn minkowski_norm_subadditive(a in arb_poly(2), b in arb_poly(2)) {
            let s = minkowski_sum(&a, &b).unwrap();
            for norm in [VertexNorm::Two, VertexNorm::Inf] {
                prop_assert!(max_vertex_norm(&s, norm) <= max_vertex_norm(&a, norm) + max_vertex_norm(&b, norm) + 1e-12);
            }
        }

        #[test]
        fn prune_keeps_every_point(p in arb_poly(2), q in arb_poly(3), cap in 4usize..16) {
            for poly in [p, q] {
                let pr = prune(&poly, cap).unwrap().polytope;
                prop_assert!(pr.len() <= cap.max(1 << poly.dim()));
                for v in poly.vertices() {
                    prop_assert!(contains(&pr, v, 1e-9).unwrap());
                }
            }
        }
    }
}
