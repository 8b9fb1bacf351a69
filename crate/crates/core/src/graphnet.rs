//! Leader-follower communication graph.
//!
//! Node 0 is the leader; followers are 1..=N. An edge `(j, i, a)` means agent
//! `i` receives from `j` with weight `a`. Edges leaving the leader are pinning
//! gains `g_i`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologySpec", into = "TopologySpec")]
pub struct Topology {
    n: usize,
    /// `adjacency[(i, j)] = a_ij`, zero-based follower indices.
    adjacency: Mat,
    pinning: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TopologySpec {
    followers: usize,
    edges: Vec<Edge>,
}

impl TryFrom<TopologySpec> for Topology {
    type Error = Error;

    fn try_from(spec: TopologySpec) -> Result<Self> {
        Topology::from_edges(spec.followers, &spec.edges)
    }
}

impl From<Topology> for TopologySpec {
    fn from(t: Topology) -> Self {
        TopologySpec { followers: t.n, edges: t.edges() }
    }
}

impl Topology {
    pub fn new(adjacency: Mat, pinning: Vec<f64>) -> Result<Self> {
        let n = pinning.len();
        if adjacency.shape() != (n, n) {
            return Err(Error::Shape(format!(
                "adjacency is {:?} but there are {n} pinning gains",
                adjacency.shape()
            )));
        }
        if n == 0 {
            return Err(Error::InvalidInput("a topology needs at least one follower".into()));
        }
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::InvalidInput(format!("self-loop at follower {}", i + 1)));
            }
        }
        if adjacency.as_slice().iter().chain(&pinning).any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput("edge weights must be finite and nonnegative".into()));
        }
        Ok(Self { n, adjacency, pinning })
    }

    /// Builds from `(from, to, weight)` edges; index 0 is the leader.
    pub fn from_edges(n_followers: usize, edges: &[Edge]) -> Result<Self> {
        let mut adjacency = Mat::zeros(n_followers, n_followers);
        let mut pinning = vec![0.0; n_followers];
        for e in edges {
            if e.to == 0 || e.to > n_followers || e.from > n_followers {
                return Err(Error::InvalidInput(format!(
                    "edge {} -> {} is outside nodes 0..={n_followers} (the leader cannot receive)",
                    e.from, e.to
                )));
            }
            if e.from == 0 {
                pinning[e.to - 1] += e.weight;
            } else {
                adjacency[(e.to - 1, e.from - 1)] += e.weight;
            }
        }
        Self::new(adjacency, pinning)
    }

    /// Directed path `0 → 1 → … → N` with unit weights.
    pub fn chain(n_followers: usize) -> Result<Self> {
        let edges: Vec<Edge> =
            (0..n_followers).map(|i| Edge { from: i, to: i + 1, weight: 1.0 }).collect();
        Self::from_edges(n_followers, &edges)
    }

    pub fn n_followers(&self) -> usize {
        self.n
    }

    pub fn adjacency(&self) -> &Mat {
        &self.adjacency
    }

    pub fn pinning(&self) -> &[f64] {
        &self.pinning
    }

    /// In-degree `d_i` of follower `i` (zero-based), not counting the leader.
    pub fn degree(&self, i: usize) -> f64 {
        self.adjacency.row(i).iter().sum()
    }

    /// Neighbors of follower `i` (zero-based) with their weights.
    pub fn neighbors(&self, i: usize) -> Vec<(usize, f64)> {
        self.adjacency
            .row(i)
            .iter()
            .enumerate()
            .filter(|(_, a)| **a > 0.0)
            .map(|(j, a)| (j, *a))
            .collect()
    }

    /// Observer normalization `(1 + d_i + g_i)⁻¹`.
    pub fn normalizer(&self, i: usize) -> f64 {
        1.0 / (1.0 + self.degree(i) + self.pinning[i])
    }

    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for (i, g) in self.pinning.iter().enumerate() {
            if *g > 0.0 {
                out.push(Edge { from: 0, to: i + 1, weight: *g });
            }
        }
        for i in 0..self.n {
            for (j, a) in self.neighbors(i) {
                out.push(Edge { from: j + 1, to: i + 1, weight: a });
            }
        }
        out
    }
}

/// `L = D − 𝒜`.
pub fn laplacian(t: &Topology) -> Mat {
    let mut l = t.adjacency.scale(-1.0);
    for i in 0..t.n {
        l[(i, i)] = t.degree(i);
    }
    l
}

/// `(I + D + G)⁻¹ (L + G)`.
pub fn coupling(t: &Topology) -> Mat {
    let mut c = laplacian(t);
    for i in 0..t.n {
        c[(i, i)] += t.pinning[i];
        let s = t.normalizer(i);
        for j in 0..t.n {
            c[(i, j)] *= s;
        }
    }
    c
}

/// Breadth-first reachability of every follower from the leader.
pub fn has_spanning_tree(t: &Topology) -> bool {
    let mut seen = vec![false; t.n];
    let mut queue: VecDeque<usize> = (0..t.n).filter(|&i| t.pinning[i] > 0.0).collect();
    for &i in &queue {
        seen[i] = true;
    }
    while let Some(j) = queue.pop_front() {
        for i in 0..t.n {
            if !seen[i] && t.adjacency[(i, j)] > 0.0 {
                seen[i] = true;
                queue.push_back(i);
            }
        }
    }
    seen.iter().all(|s| *s)
}

/// `I_N ⊗ S − coupling ⊗ F`, the observer-error transition matrix.
pub fn observer_composite(t: &Topology, s: &Mat, f: &Mat) -> Result<Mat> {
    if !s.is_square() || s.shape() != f.shape() {
        return Err(Error::Shape(format!(
            "S {:?} and F {:?} must be square and equal in size",
            s.shape(),
            f.shape()
        )));
    }
    Mat::identity(t.n).kron(s).try_sub(&coupling(t).kron(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::spectral_radius;
    use proptest::prelude::*;

    fn rotation() -> Mat {
        Mat::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]).unwrap()
    }

    #[test]
    fn coupling_examples() {
        let two = Topology::chain(2).unwrap();
        assert_eq!(coupling(&two).to_rows(), vec![vec![0.5, 0.0], vec![-0.5, 0.5]]);
        let one = Topology::chain(1).unwrap();
        assert_eq!(coupling(&one).to_rows(), vec![vec![0.5]]);
        let empty = Topology::new(Mat::zeros(3, 3), vec![0.0; 3]).unwrap();
        assert_eq!(coupling(&empty).max_abs(), 0.0);
    }

    #[test]
    fn spanning_tree_examples() {
        assert!(has_spanning_tree(&Topology::chain(6).unwrap()));
        let unpinned = Topology::new(Mat::zeros(2, 2), vec![0.0, 0.0]).unwrap();
        assert!(!has_spanning_tree(&unpinned));
        // 0 → 1 → 2 and a separate 3 ↔ 4 pair
        let edges = [
            Edge { from: 0, to: 1, weight: 1.0 },
            Edge { from: 1, to: 2, weight: 1.0 },
            Edge { from: 3, to: 4, weight: 1.0 },
            Edge { from: 4, to: 3, weight: 1.0 },
        ];
        assert!(!has_spanning_tree(&Topology::from_edges(4, &edges).unwrap()));
    }

    #[test]
    fn composite_examples() {
        let s = rotation();
        let one = Topology::chain(1).unwrap();
        let c = observer_composite(&one, &s, &s.scale(2.0)).unwrap();
        assert!(spectral_radius(&c).unwrap() < 1e-12);
        let c = observer_composite(&one, &s, &Mat::zeros(2, 2)).unwrap();
        assert!((spectral_radius(&c).unwrap() - 1.0).abs() < 1e-12);

        let two = Topology::chain(2).unwrap();
        for alpha in [0.5, 1.0, 1.7, 2.0, 3.0] {
            let c = observer_composite(&two, &s, &s.scale(alpha)).unwrap();
            let want = (1.0 - 0.5 * alpha).abs();
            let got = spectral_radius(&c).unwrap();
            // Defective when α = 2 (nilpotent Jordan block): radius zero up to √eps.
            assert!((got - want).abs() < 1e-7, "α={alpha}: {got} vs {want}");
        }
        assert!(observer_composite(&two, &s, &Mat::identity(3)).is_err());
    }

    #[test]
    fn serde_roundtrip_and_validation() {
        let t = Topology::chain(3).unwrap();
        let json = serde_json::to_string(&t).unwrap();
        let back: Topology = serde_json::from_str(&json).unwrap();
        assert_eq!(t, back);
        assert!(Topology::from_edges(2, &[Edge { from: 1, to: 0, weight: 1.0 }]).is_err());
        assert!(Topology::from_edges(2, &[Edge { from: 1, to: 2, weight: -1.0 }]).is_err());
    }

    fn arb_topology() -> impl Strategy<Value = Topology> {
        (1usize..6).prop_flat_map(|n| {
            (
                prop::collection::vec(prop_oneof![Just(0.0), 0.1..2.0f64], n * n),
                prop::collection::vec(prop_oneof![Just(0.0), 0.1..2.0f64], n),
            )
                .prop_map(move |(mut a, g)| {
                    for i in 0..n {
                        a[i * n + i] = 0.0;
                    }
                    Topology::new(Mat::from_vec(n, n, a).unwrap(), g).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn laplacian_rows_sum_to_zero(t in arb_topology()) {
            let l = laplacian(&t);
            for i in 0..t.n_followers() {
                // Exact up to the rounding of the degree sum itself.
                prop_assert!(l.row(i).iter().sum::<f64>().abs() <= 4.0 * f64::EPSILON * t.degree(i));
            }
        }

        #[test]
        fn coupling_on_ones(t in arb_topology()) {
            let n = t.n_followers();
            let c1 = coupling(&t).mul_vec(&vec![1.0; n]).unwrap();
            for i in 0..n {
                let want = t.normalizer(i) * t.pinning()[i];
                prop_assert!((c1[i] - want).abs() < 1e-12);
            }
        }

        #[test]
        fn spanning_tree_monotone(t in arb_topology(), i in 0usize..6, j in 0usize..6, w in 0.1..1.0f64) {
            let n = t.n_followers();
            let (i, j) = (i % n, j % n);
            let before = has_spanning_tree(&t);
            let mut a = t.adjacency().clone();
            if i != j {
                a[(i, j)] += w;
            }
            let mut g = t.pinning().to_vec();
            g[j] += w;
            let more = Topology::new(a, g).unwrap();
            prop_assert!(!before || has_spanning_tree(&more));
        }

        #[test]
        fn zero_gain_keeps_leader_radius(t in arb_topology()) {
            let s = rotation().scale(0.8);
            let c = observer_composite(&t, &s, &Mat::zeros(2, 2)).unwrap();
            prop_assert!((spectral_radius(&c).unwrap() - 0.8).abs() < 1e-9);
        }
    }
}
