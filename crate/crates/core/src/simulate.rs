//! Closed-loop execution of the distributed protocol.
//!
//! Each step is synchronous. Every follower reads its neighbors' broadcast
//! observer states from the previous step, plus the leader state if pinned.
//! It then updates its observer and applies
//! `u = K(x − Πη) + Γη` to its true, noise-free dynamics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{TrueSystem, DIVERGENCE_THRESHOLD};
use crate::error::{Error, Result};
use crate::graphnet::Topology;
use crate::numkit::{self, Mat};
use crate::regulator::RegulatorFit;

/// Tolerance for unit-modulus and distinctness of the leader eigenvalues.
pub const LEADER_SPECTRUM_TOL: f64 = 1e-9;

/// Leader eigenvalues must be simple and on the unit circle (Assumption 3).
pub fn check_leader_spectrum(s: &Mat) -> Result<()> {
    if !s.is_square() {
        return Err(Error::Shape(format!("S is {:?}", s.shape())));
    }
    let ev = numkit::eigenvalues(s)?.eigenvalues;
    for (i, l) in ev.iter().enumerate() {
        if (l.norm() - 1.0).abs() > LEADER_SPECTRUM_TOL {
            return Err(Error::Assumption(format!(
                "Assumption 3 fails: leader eigenvalue {l} has modulus {:.12}",
                l.norm()
            )));
        }
        // Repeated eigenvalues come out of the QR iteration split by about √eps.
        if ev[..i].iter().any(|m| (l - m).norm() < 1e-6) {
            return Err(Error::Assumption(format!("Assumption 3 fails: leader eigenvalue {l} is repeated")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderModel {
    pub s: Mat,
    pub h: Mat,
}

impl LeaderModel {
    pub fn new(s: Mat, h: Mat) -> Result<Self> {
        if h.cols() != s.rows() {
            return Err(Error::Shape(format!("S {:?} and H {:?} are not conformal", s.shape(), h.shape())));
        }
        check_leader_spectrum(&s)?;
        let n0 = s.rows();
        let mut obs = h.clone();
        let mut block = h.clone();
        for _ in 1..n0 {
            block = block.matmul(&s)?;
            obs = obs.vstack(&block)?;
        }
        if numkit::rank(&obs, numkit::DEFAULT_RANK_TOL)? < n0 {
            return Err(Error::Assumption("(S, H) is not observable".into()));
        }
        Ok(Self { s, h })
    }

    pub fn n0(&self) -> usize {
        self.s.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentController {
    pub k: Mat,
    pub pi: Mat,
    pub gamma: Mat,
}

impl AgentController {
    pub fn new(k: Mat, pi: Mat, gamma: Mat) -> Result<Self> {
        let (p, n) = k.shape();
        if pi.rows() != n || gamma.rows() != p || gamma.cols() != pi.cols() {
            return Err(Error::Shape(format!(
                "K {:?}, Π {:?}, Γ {:?} are not conformal",
                k.shape(),
                pi.shape(),
                gamma.shape()
            )));
        }
        Ok(Self { k, pi, gamma })
    }

    /// `u = K(x − Πη) + Γη`.
    pub fn input(&self, x: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
        let mut xi = x.to_vec();
        numkit::axpy(-1.0, &self.pi.mul_vec(eta)?, &mut xi);
        let mut u = self.k.mul_vec(&xi)?;
        numkit::axpy(1.0, &self.gamma.mul_vec(eta)?, &mut u);
        Ok(u)
    }
}

/// What a follower may read from the network during one step.
pub trait Broadcast {
    /// Observer state broadcast by follower `j` (zero-based) at the previous step.
    fn eta(&self, j: usize) -> &[f64];
    /// Leader state; only pinned followers may call this.
    fn leader(&self) -> &[f64];
}

struct Snapshot<'a> {
    etas: &'a [Vec<f64>],
    leader: &'a [f64],
}

impl Broadcast for Snapshot<'_> {
    fn eta(&self, j: usize) -> &[f64] {
        &self.etas[j]
    }

    fn leader(&self) -> &[f64] {
        self.leader
    }
}

/// `z_i = Σ_j a_ij(η_i − η_j) + g_i(η_i − x₀)`.
pub fn local_disagreement(t: &Topology, i: usize, eta_i: &[f64], net: &impl Broadcast) -> Vec<f64> {
    let mut z = vec![0.0; eta_i.len()];
    for (j, a) in t.neighbors(i) {
        for (zk, (ei, ej)) in z.iter_mut().zip(eta_i.iter().zip(net.eta(j))) {
            *zk += a * (ei - ej);
        }
    }
    let g = t.pinning()[i];
    if g > 0.0 {
        for (zk, (ei, x0)) in z.iter_mut().zip(eta_i.iter().zip(net.leader())) {
            *zk += g * (ei - x0);
        }
    }
    z
}

/// `η_i⁺ = Sη_i − (1 + d_i + g_i)⁻¹ F z_i`.
pub fn observer_step(
    t: &Topology,
    s: &Mat,
    f: &Mat,
    i: usize,
    eta_i: &[f64],
    net: &impl Broadcast,
) -> Result<Vec<f64>> {
    let z = local_disagreement(t, i, eta_i, net);
    let mut next = s.mul_vec(eta_i)?;
    numkit::axpy(-t.normalizer(i), &f.mul_vec(&z)?, &mut next);
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSeries {
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    /// Local disagreement `z_i(t)`.
    pub z: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub horizon: usize,
    pub leader_x: Vec<Vec<f64>>,
    pub leader_y: Vec<Vec<f64>>,
    pub agents: Vec<AgentSeries>,
}

impl SimResult {
    /// `max_i max_{t ≥ from} ‖e_i(t)‖∞`.
    pub fn max_abs_error(&self, from: usize) -> f64 {
        self.agents
            .iter()
            .flat_map(|a| a.e.iter().skip(from))
            .map(|e| numkit::vec_norm_inf(e))
            .fold(0.0, f64::max)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_closed_loop(
    leader: &LeaderModel,
    systems: &[TrueSystem],
    ctrls: &[AgentController],
    f: &Mat,
    t: &Topology,
    x0_leader: &[f64],
    x0_agents: &[Vec<f64>],
    eta0: &[Vec<f64>],
    horizon: usize,
) -> Result<SimResult> {
    let n_agents = t.n_followers();
    let n0 = leader.n0();
    if systems.len() != n_agents || ctrls.len() != n_agents || x0_agents.len() != n_agents || eta0.len() != n_agents
    {
        return Err(Error::Shape(format!(
            "{n_agents} followers but {} systems, {} controllers, {} initial states, {} observer states",
            systems.len(),
            ctrls.len(),
            x0_agents.len(),
            eta0.len()
        )));
    }
    if f.shape() != (n0, n0) || x0_leader.len() != n0 {
        return Err(Error::Shape(format!("F {:?} and x₀ of length {} for n₀ = {n0}", f.shape(), x0_leader.len())));
    }
    for (i, ((sys, c), (x, eta))) in systems.iter().zip(ctrls).zip(x0_agents.iter().zip(eta0)).enumerate() {
        if c.k.shape() != (sys.p(), sys.n()) || c.pi.shape() != (sys.n(), n0) || x.len() != sys.n() || eta.len() != n0
        {
            return Err(Error::Shape(format!("follower {} has inconsistent controller or initial state", i + 1)));
        }
        if sys.q() != leader.h.rows() {
            return Err(Error::Shape(format!("follower {} output size differs from the leader's", i + 1)));
        }
    }

    let mut agents: Vec<AgentSeries> = (0..n_agents)
        .map(|_| AgentSeries {
            x: Vec::with_capacity(horizon + 1),
            u: Vec::with_capacity(horizon),
            y: Vec::with_capacity(horizon + 1),
            eta: Vec::with_capacity(horizon + 1),
            delta: Vec::with_capacity(horizon + 1),
            xi: Vec::with_capacity(horizon + 1),
            e: Vec::with_capacity(horizon + 1),
            z: Vec::with_capacity(horizon + 1),
        })
        .collect();
    let mut leader_x = Vec::with_capacity(horizon + 1);
    let mut leader_y = Vec::with_capacity(horizon + 1);

    let mut x0 = x0_leader.to_vec();
    let mut xs: Vec<Vec<f64>> = x0_agents.to_vec();
    let mut etas: Vec<Vec<f64>> = eta0.to_vec();
    for step in 0..=horizon {
        let y0 = leader.h.mul_vec(&x0)?;
        let net = Snapshot { etas: &etas, leader: &x0 };
        let mut next_etas = Vec::with_capacity(n_agents);
        let mut next_xs = Vec::with_capacity(n_agents);
        for i in 0..n_agents {
            let (sys, c, x, eta) = (&systems[i], &ctrls[i], &xs[i], &etas[i]);
            let y = sys.c.mul_vec(x)?;
            let e: Vec<f64> = y.iter().zip(&y0).map(|(a, b)| a - b).collect();
            let delta: Vec<f64> = eta.iter().zip(&x0).map(|(a, b)| a - b).collect();
            let mut xi = x.clone();
            numkit::axpy(-1.0, &c.pi.mul_vec(eta)?, &mut xi);
            let series = &mut agents[i];
            series.x.push(x.clone());
            series.y.push(y);
            series.eta.push(eta.clone());
            series.delta.push(delta);
            series.xi.push(xi);
            series.e.push(e);
            series.z.push(local_disagreement(t, i, eta, &net));
            if step < horizon {
                next_etas.push(observer_step(t, &leader.s, f, i, eta, &net)?);
                let u = c.input(x, eta)?;
                let mut xn = sys.a.mul_vec(x)?;
                numkit::axpy(1.0, &sys.b.mul_vec(&u)?, &mut xn);
                let magnitude = numkit::vec_norm_inf(&xn);
                if !(magnitude <= DIVERGENCE_THRESHOLD) {
                    return Err(Error::Divergence { step: step + 1, magnitude });
                }
                series.u.push(u);
                next_xs.push(xn);
            }
        }
        leader_x.push(x0.clone());
        leader_y.push(y0);
        if step < horizon {
            x0 = leader.s.mul_vec(&x0)?;
            etas = next_etas;
            xs = next_xs;
        }
    }
    Ok(SimResult { horizon, leader_x, leader_y, agents })
}

/// `‖δ_i(t)‖₂` per agent.
pub fn observer_error_series(r: &SimResult) -> Vec<Vec<f64>> {
    r.agents.iter().map(|a| a.delta.iter().map(|d| numkit::vec_norm2(d)).collect()).collect()
}

/// Least-squares slope of `ln v(t)` against `t`, over the entries above `floor`.
pub fn log_linear_slope(series: &[f64], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        series.iter().enumerate().filter(|(_, v)| **v > floor).map(|(t, v)| (t as f64, v.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mt, mv) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let cov: f64 = pts.iter().map(|(t, v)| (t - mt) * (v - mv)).sum();
    let var: f64 = pts.iter().map(|(t, _)| (t - mt).powi(2)).sum();
    Some(cov / var)
}

/// `φ₁ = max_i ‖Π_i^s − Π_i*‖₂`, `φ₂ = max_i ‖Γ_i^s − Γ_i*‖₂`.
pub fn phi_metrics(fits: &[RegulatorFit], oracles: &[(Mat, Mat)]) -> Result<(f64, f64)> {
    if fits.len() != oracles.len() {
        return Err(Error::Shape(format!("{} fits for {} oracles", fits.len(), oracles.len())));
    }
    let mut phi = (0.0f64, 0.0f64);
    for (fit, (pi, gamma)) in fits.iter().zip(oracles) {
        phi.0 = phi.0.max(numkit::norm2(&pi.try_sub(&fit.pi)?)?);
        phi.1 = phi.1.max(numkit::norm2(&gamma.try_sub(&fit.gamma)?)?);
    }
    Ok(phi)
}

/// One CSV for agent `i`: `t, x…, u…, y…, eta…, delta…, xi…, e…`. The input
/// columns are empty in the final row.
pub fn write_trajectory_csv(path: &Path, r: &SimResult, i: usize) -> Result<()> {
    let a = r
        .agents
        .get(i)
        .ok_or_else(|| Error::InvalidInput(format!("no follower with index {i}")))?;
    let mut w = csv::Writer::from_path(path)?;
    let widths = [
        ("x", a.x[0].len()),
        ("u", a.u.first().map_or(0, Vec::len)),
        ("y", a.y[0].len()),
        ("eta", a.eta[0].len()),
        ("delta", a.delta[0].len()),
        ("xi", a.xi[0].len()),
        ("e", a.e[0].len()),
    ];
    let mut header = vec!["t".to_string()];
    for (name, n) in widths {
        header.extend((1..=n).map(|k| format!("{name}{k}")));
    }
    w.write_record(&header)?;
    for t in 0..=r.horizon {
        let mut rec = vec![t.to_string()];
        let u_cells: Vec<String> = match a.u.get(t) {
            Some(u) => u.iter().map(f64::to_string).collect(),
            None => vec![String::new(); widths[1].1],
        };
        rec.extend(a.x[t].iter().map(f64::to_string));
        rec.extend(u_cells);
        for s in [&a.y[t], &a.eta[t], &a.delta[t], &a.xi[t], &a.e[t]] {
            rec.extend(s.iter().map(f64::to_string));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the `e` columns back from a trajectory CSV.
pub fn read_error_column(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.len() > 1 && h.starts_with('e') && h[1..].chars().all(|c| c.is_ascii_digit()))
        .map(|(i, _)| i)
        .collect();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = cols
            .iter()
            .map(|&c| rec[c].parse::<f64>().map_err(|e| Error::InvalidInput(format!("bad number in {}: {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        out.push(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regulator::exact_regulator;
    use crate::synthesis::design_f;
    use std::cell::RefCell;

    fn leader() -> LeaderModel {
        LeaderModel::new(Mat::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]).unwrap(), Mat::from_rows(&[[1.0, 0.0]]).unwrap())
            .unwrap()
    }

    fn systems() -> Vec<TrueSystem> {
        vec![
            TrueSystem::new(Mat::diag(&[2.0]), Mat::diag(&[3.0]), Mat::diag(&[1.0])).unwrap(),
            TrueSystem::new(
                Mat::from_rows(&[[0.0, 1.0], [1.0, -1.0]]).unwrap(),
                Mat::from_rows(&[[0.0], [1.0]]).unwrap(),
                Mat::from_rows(&[[1.0, 1.0]]).unwrap(),
            )
            .unwrap(),
        ]
    }

    /// Deadbeat-ish gains found by hand: `2 + 3K = 0` and `A₂ + B₂K` nilpotent.
    fn controllers(l: &LeaderModel) -> Vec<AgentController> {
        let gains = [Mat::from_rows(&[[-2.0 / 3.0]]).unwrap(), Mat::from_rows(&[[-1.0, 1.0]]).unwrap()];
        systems()
            .iter()
            .zip(gains)
            .map(|(s, k)| {
                let (pi, gamma) = exact_regulator(s, &l.s, &l.h).unwrap();
                AgentController::new(k, pi, gamma).unwrap()
            })
            .collect()
    }

    #[test]
    fn leader_assumptions() {
        assert!(LeaderModel::new(Mat::diag(&[0.5, 1.0]), Mat::from_rows(&[[1.0, 1.0]]).unwrap()).is_err());
        assert!(LeaderModel::new(Mat::identity(2), Mat::from_rows(&[[1.0, 0.0]]).unwrap()).is_err());
        let s = Mat::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]).unwrap();
        assert!(LeaderModel::new(s, Mat::from_rows(&[[0.0, 0.0]]).unwrap()).is_err());
    }

    #[test]
    fn invariant_manifold_gives_zero_error() {
        let l = leader();
        let t = Topology::chain(2).unwrap();
        let f = design_f(&t, &l.s, 1e-3).unwrap().f;
        let ctrls = controllers(&l);
        let x0 = [0.7, -0.2];
        let xs: Vec<Vec<f64>> = ctrls.iter().map(|c| c.pi.mul_vec(&x0).unwrap()).collect();
        let r = run_closed_loop(&l, &systems(), &ctrls, &f, &t, &x0, &xs, &[x0.to_vec(), x0.to_vec()], 50).unwrap();
        assert!(r.max_abs_error(0) < 1e-12);
        assert!(observer_error_series(&r).iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn error_identity_and_convergence() {
        let l = leader();
        let t = Topology::chain(2).unwrap();
        let f = design_f(&t, &l.s, 1e-3).unwrap().f;
        let ctrls = controllers(&l);
        let sys = systems();
        let r = run_closed_loop(
            &l,
            &sys,
            &ctrls,
            &f,
            &t,
            &[1.0, 0.0],
            &[vec![0.3], vec![-0.4, 0.9]],
            &[vec![0.0, 0.5], vec![-1.0, 0.2]],
            200,
        )
        .unwrap();
        assert_eq!(r.agents[0].x.len(), 201);
        assert_eq!(r.agents[0].u.len(), 200);
        for (i, a) in r.agents.iter().enumerate() {
            let (c, pi) = (&sys[i].c, &ctrls[i].pi);
            let cpi = c * pi;
            let cpi_h = &cpi - &l.h;
            for k in 0..=200 {
                let mut rebuilt = c.mul_vec(&a.xi[k]).unwrap();
                numkit::axpy(1.0, &cpi_h.mul_vec(&r.leader_x[k]).unwrap(), &mut rebuilt);
                numkit::axpy(1.0, &cpi.mul_vec(&a.delta[k]).unwrap(), &mut rebuilt);
                assert!((rebuilt[0] - a.e[k][0]).abs() < 1e-10);
            }
        }
        assert!(r.max_abs_error(200) < 1e-4);
    }

    #[test]
    fn zero_gain_observer_error_is_isometric() {
        let l = leader();
        let t = Topology::chain(2).unwrap();
        let ctrls = controllers(&l);
        let r = run_closed_loop(
            &l,
            &systems(),
            &ctrls,
            &Mat::zeros(2, 2),
            &t,
            &[1.0, 0.0],
            &[vec![0.0], vec![0.0, 0.0]],
            &[vec![0.0, 0.5], vec![-1.0, 0.2]],
            40,
        )
        .unwrap();
        for s in observer_error_series(&r) {
            assert!(s.iter().all(|v| (v - s[0]).abs() < 1e-12));
        }
    }

    #[test]
    fn observer_error_decays() {
        let l = leader();
        let t = Topology::chain(2).unwrap();
        // α = 1 leaves the composite radius at 1/2 without defective blocks.
        let f = l.s.clone();
        let r = run_closed_loop(
            &l,
            &systems(),
            &controllers(&l),
            &f,
            &t,
            &[1.0, 0.0],
            &[vec![0.0], vec![0.0, 0.0]],
            &[vec![0.0, 0.5], vec![-1.0, 0.2]],
            60,
        )
        .unwrap();
        let worst: Vec<f64> = (0..=60)
            .map(|k| observer_error_series(&r).iter().map(|s| s[k]).fold(0.0, f64::max))
            .collect();
        let slope = log_linear_slope(&worst, 1e-300).unwrap();
        assert!(slope < 0.0);
        // Radius 1/2 with a 2×2 Jordan coupling: ‖δ(t)‖ ≤ c·0.6ᵗ eventually.
        assert!(worst[60] <= worst[0] * 60.0 * 0.5f64.powi(59) + 1e-15);
    }

    #[test]
    fn divergence_is_reported() {
        let l = leader();
        let t = Topology::chain(1).unwrap();
        let sys = vec![TrueSystem::new(Mat::diag(&[3.0]), Mat::diag(&[1.0]), Mat::diag(&[1.0])).unwrap()];
        let ctrl = vec![AgentController::new(Mat::zeros(1, 1), Mat::zeros(1, 2), Mat::zeros(1, 2)).unwrap()];
        let err = run_closed_loop(&l, &sys, &ctrl, &Mat::zeros(2, 2), &t, &[1.0, 0.0], &[vec![1.0]], &[vec![0.0, 0.0]], 100)
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 26, .. }), "{err:?}");
    }

    struct Audit<'a> {
        etas: &'a [Vec<f64>],
        leader: &'a [f64],
        reads: RefCell<Vec<Option<usize>>>,
    }

    impl Broadcast for Audit<'_> {
        fn eta(&self, j: usize) -> &[f64] {
            self.reads.borrow_mut().push(Some(j));
            &self.etas[j]
        }

        fn leader(&self) -> &[f64] {
            self.reads.borrow_mut().push(None);
            self.leader
        }
    }

    #[test]
    fn protocol_reads_only_neighbors() {
        // 0 → 1, 1 → 2, 1 → 3, 3 → 2
        let edges = [(0, 1), (1, 2), (1, 3), (3, 2)]
            .map(|(from, to)| crate::graphnet::Edge { from, to, weight: 1.0 });
        let t = Topology::from_edges(3, &edges).unwrap();
        let s = leader().s;
        let etas = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]];
        for i in 0..3 {
            let audit = Audit { etas: &etas, leader: &[0.0, 0.0], reads: RefCell::new(Vec::new()) };
            observer_step(&t, &s, &s, i, &etas[i], &audit).unwrap();
            let mut reads = audit.reads.into_inner();
            reads.sort();
            let expected: Vec<Option<usize>> = match i {
                0 => vec![None],
                1 => vec![Some(0), Some(2)],
                _ => vec![Some(0)],
            };
            assert_eq!(reads, expected, "follower {}", i + 1);
        }
    }

    #[test]
    fn phi_and_slope_helpers() {
        assert_eq!(log_linear_slope(&[1.0], 0.0), None);
        let s: Vec<f64> = (0..10).map(|k| 0.5f64.powi(k)).collect();
        assert!((log_linear_slope(&s, 0.0).unwrap() - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn determinism_and_csv() {
        let l = leader();
        let t = Topology::chain(2).unwrap();
        let f = design_f(&t, &l.s, 1e-3).unwrap().f;
        let run = || {
            run_closed_loop(
                &l,
                &systems(),
                &controllers(&l),
                &f,
                &t,
                &[1.0, 0.0],
                &[vec![0.3], vec![-0.4, 0.9]],
                &[vec![0.0, 0.5], vec![-1.0, 0.2]],
                30,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent2.csv");
        write_trajectory_csv(&path, &a, 1).unwrap();
        let e = read_error_column(&path).unwrap();
        assert_eq!(e.len(), 31);
        assert_eq!(e[7][0], a.agents[1].e[7][0]);
    }
}
