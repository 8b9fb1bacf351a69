//! The end-to-end stages: collect, identify, regulate, synthesize, simulate, bound.

use polysync::datagen::{self, collect_with, AgentDataset, NoiseModel, Restart, TrueSystem};
use polysync::graphnet::Topology;
use polysync::numkit::{self, Mat};
use polysync::polytope::{box_polytope, HullMode, VPolytope};
use polysync::reach::{self, BoundSeries, Contraction};
use polysync::regulator::{self, RegulatorFit};
use polysync::represent::{self, ConsistencySet};
use polysync::simulate::{self, AgentController, LeaderModel, SimResult};
use polysync::synthesis::{self, ObserverDesign, SynthesisResult};
use polysync::Error;
use serde::{Deserialize, Serialize};

use crate::config::{to_mat, ConfigError, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("synthesis failed: {0}")]
    Synthesis(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{0}")]
    Other(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Assumption(_) => 2,
            PipelineError::Synthesis(_) => 3,
            PipelineError::Verification(_) => 4,
            PipelineError::Other(_) => 1,
        }
    }

    fn agent(i: usize, e: Error) -> Self {
        let m = format!("follower {}: {e}", i + 1);
        match e {
            Error::Assumption(_) => PipelineError::Assumption(m),
            Error::Synthesis { .. } | Error::CertificateMismatch(_) | Error::ObserverDesign { .. } => {
                PipelineError::Synthesis(m)
            }
            _ => PipelineError::Other(m),
        }
    }
}

impl From<Error> for PipelineError {
    fn from(e: Error) -> Self {
        match e {
            Error::Assumption(m) => PipelineError::Assumption(m),
            Error::Synthesis { .. } | Error::CertificateMismatch(_) | Error::ObserverDesign { .. } => {
                PipelineError::Synthesis(e.to_string())
            }
            other => PipelineError::Other(other.to_string()),
        }
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Assumption(m) => PipelineError::Assumption(m),
            other => PipelineError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Other(e.to_string())
    }
}

impl From<serde_json::Error> for PipelineError {
    fn from(e: serde_json::Error) -> Self {
        PipelineError::Other(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// The configured leader, followers and graph in library types.
#[derive(Debug, Clone)]
pub struct Model {
    pub leader: LeaderModel,
    pub systems: Vec<TrueSystem>,
    pub noises: Vec<NoiseModel>,
    pub inputs: Vec<VPolytope>,
    pub topology: Topology,
    pub names: Vec<String>,
    pub x0_leader: Vec<f64>,
}

impl Model {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let leader = LeaderModel::new(cfg.matrix(&cfg.leader.s), cfg.matrix(&cfg.leader.h))?;
        let mut systems = Vec::new();
        let mut noises = Vec::new();
        let mut inputs = Vec::new();
        let mut names = Vec::new();
        for (i, a) in cfg.agents.iter().enumerate() {
            let sys = TrueSystem::new(cfg.matrix(&a.a), cfg.matrix(&a.b), cfg.matrix(&a.c))?;
            noises.push(NoiseModel::boxes(sys.n(), sys.q(), a.w_bar, a.v_bar)?);
            let hw = a.input_half_width.clone().unwrap_or_else(|| vec![1.0; sys.p()]);
            inputs.push(box_polytope(&hw)?);
            names.push(a.name.clone().unwrap_or_else(|| format!("follower{}", i + 1)));
            systems.push(sys);
        }
        let x0_leader = cfg
            .leader
            .x0
            .clone()
            .unwrap_or_else(|| datagen::uniform_state(leader.n0(), 1.0, cfg.leader.seed));
        Ok(Self { leader, systems, noises, inputs, topology: cfg.topology(), names, x0_leader })
    }

    pub fn len(&self) -> usize {
        self.systems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.systems.is_empty()
    }
}

/// Maps `f` over agent indices on scoped threads; results keep agent order.
pub fn par_agents<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n).map(|i| scope.spawn(move || f(i))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(PipelineError::Other("worker thread panicked".into()))))
            .collect()
    })
}

/// Per-agent seed derived from a base seed.
pub fn agent_seed(base: u64, i: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1 + i as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub agent: String,
    pub rows: usize,
    pub cols: usize,
    pub min_singular_value: f64,
    pub rank_ok: bool,
    pub restarts: usize,
}

/// Open-loop experiments for every follower.
pub fn collect(model: &Model, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<AgentDataset>> {
    let restart = Restart { above: cfg.data.restart_above };
    model
        .systems
        .iter()
        .enumerate()
        .map(|(i, sys)| {
            let s = agent_seed(seed, i);
            let x0 = datagen::uniform_state(sys.n(), 1.0, s ^ 0x5EED);
            collect_with(sys, &model.noises[i], cfg.data.rho, &model.inputs[i], &x0, s, restart)
                .map_err(|e| PipelineError::agent(i, e))
        })
        .collect()
}

pub fn rank_table(model: &Model, data: &[AgentDataset]) -> Result<Vec<RankRow>> {
    data.iter()
        .enumerate()
        .map(|(i, d)| {
            let ux = d.ux();
            Ok(RankRow {
                agent: model.names[i].clone(),
                rows: ux.rows(),
                cols: ux.cols(),
                min_singular_value: datagen::min_singular_value(d)?,
                rank_ok: datagen::rank_ok(d, 0.0) && numkit::rank(&ux, numkit::DEFAULT_RANK_TOL)? == ux.rows(),
                restarts: d.restarts.len(),
            })
        })
        .collect()
}

/// Fails with an assumption error naming the first rank-deficient agent.
pub fn require_rank(table: &[RankRow]) -> Result<()> {
    if let Some(r) = table.iter().find(|r| !r.rank_ok) {
        return Err(PipelineError::Assumption(format!(
            "{}: Assumption 5 (full row rank of [U; X]) fails for a {}x{} data matrix (smallest singular value {:.3e})",
            r.agent, r.rows, r.cols, r.min_singular_value
        )));
    }
    Ok(())
}

pub fn identify(model: &Model, data: &[AgentDataset], mode: HullMode) -> Result<Vec<ConsistencySet>> {
    data.iter()
        .enumerate()
        .map(|(i, d)| {
            represent::build_consistency_set_with(d, &model.noises[i], mode).map_err(|e| PipelineError::agent(i, e))
        })
        .collect()
}

pub fn regulate(model: &Model, sets: &[ConsistencySet]) -> Result<Vec<RegulatorFit>> {
    sets.iter()
        .enumerate()
        .map(|(i, cs)| regulator::solve_fit(cs, &model.leader.s, &model.leader.h).map_err(|e| PipelineError::agent(i, e)))
        .collect()
}

/// Model-based regulator solutions, used only as oracles.
pub fn oracles(model: &Model) -> Result<Vec<(Mat, Mat)>> {
    model
        .systems
        .iter()
        .enumerate()
        .map(|(i, s)| regulator::exact_regulator(s, &model.leader.s, &model.leader.h).map_err(|e| PipelineError::agent(i, e)))
        .collect()
}

pub fn synthesize(model: &Model, cfg: &ExperimentConfig, data: &[AgentDataset]) -> Result<Vec<SynthesisResult>> {
    par_agents(data.len(), |i| {
        synthesis::synthesize_k(&data[i], &model.noises[i], cfg.synthesis.margin).map_err(|e| PipelineError::agent(i, e))
    })
}

pub fn design_observer(model: &Model, cfg: &ExperimentConfig) -> Result<ObserverDesign> {
    let margin = cfg.synthesis.observer_margin;
    Ok(match &cfg.synthesis.observer_f {
        Some(f) => synthesis::verify_f(&model.topology, &model.leader.s, &to_mat(f).map_err(PipelineError::Other)?, margin)?,
        None => synthesis::design_f(&model.topology, &model.leader.s, margin)?,
    })
}

pub fn controllers(fits: &[RegulatorFit], gains: &[Mat]) -> Result<Vec<AgentController>> {
    fits.iter()
        .zip(gains)
        .map(|(fit, k)| Ok(AgentController::new(k.clone(), fit.pi.clone(), fit.gamma.clone())?))
        .collect()
}

/// Initial follower and observer states drawn from the simulation seed.
pub fn initial_states(model: &Model, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n0 = model.leader.n0();
    let xs = model.systems.iter().enumerate().map(|(i, s)| datagen::uniform_state(s.n(), 1.0, agent_seed(seed, i))).collect();
    let etas = (0..model.len()).map(|i| datagen::uniform_state(n0, 1.0, agent_seed(seed, i) ^ 0xE7A)).collect();
    (xs, etas)
}

pub fn simulate(
    model: &Model,
    ctrls: &[AgentController],
    f: &Mat,
    horizon: usize,
    seed: u64,
) -> Result<SimResult> {
    let (xs, etas) = initial_states(model, seed);
    Ok(simulate::run_closed_loop(&model.leader, &model.systems, ctrls, f, &model.topology, &model.x0_leader, &xs, &etas, horizon)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBound {
    pub series: BoundSeries,
    /// `r` from the vertex recursion alone.
    pub polytope_r: Vec<f64>,
    /// `r` from the ellipsoidal recursion alone.
    pub ellipsoid_r: Vec<f64>,
    pub contraction: Contraction,
    /// `ξ(t)` left the recursion's set at these steps (should be empty).
    pub xi_escapes: Vec<usize>,
}

/// Bounds for one agent along a simulated trajectory.
#[allow(clippy::too_many_arguments)]
pub fn bound_agent(
    model: &Model,
    i: usize,
    d: &AgentDataset,
    fit: &RegulatorFit,
    k: &Mat,
    p: &Mat,
    f: &Mat,
    sim: &SimResult,
    mode: HullMode,
) -> Result<AgentBound> {
    let (s, h) = (&model.leader.s, &model.leader.h);
    let cs = represent::build_consistency_set_with(d, &model.noises[i], mode).map_err(|e| PipelineError::agent(i, e))?;
    let fit_b = regulator::rebase_fit(fit, &cs, s, h)?;
    let mzk = represent::closed_loop_polytope(&cs, k)?;
    let px0 = reach::leader_state_polytope(&model.leader, &model.x0_leader)?;
    let a = &sim.agents[i];
    let horizon = sim.horizon;
    let disturbances = (0..horizon)
        .map(|t| reach::disturbance_polytope(&fit_b, &px0, &fit.pi, f, &model.topology, i, &a.delta[t], &a.z[t]))
        .collect::<polysync::Result<Vec<_>>>()?;
    let zero = vec![0.0; model.leader.n0()];
    let d_inf = reach::disturbance_polytope(&fit_b, &px0, &fit.pi, f, &model.topology, i, &zero, &zero)?;
    let p0 = VPolytope::point(&a.xi[0])?;
    let (sets, boxed_steps) = reach::xi_bound_recursion_traced(&mzk, &p0, &disturbances, horizon)?;
    let polytope_r = reach::error_bound_series(&cs.c_poly, &sets, &fit_b, &px0, &a.delta, h)?;
    let (ellipsoid_r, asymptotic, contraction) = reach::ellipsoid_bound_series(
        &mzk, p, &cs.c_poly, &p0, &disturbances, &d_inf, &fit_b, &px0, &a.delta, h, horizon,
    )?;
    let r = polytope_r.iter().zip(&ellipsoid_r).map(|(a, b)| a.min(*b)).collect();
    let mut xi_escapes = Vec::new();
    for (t, set) in sets.iter().enumerate() {
        let tol = 1e-9 * (1.0 + numkit::vec_norm_inf(&a.xi[t]));
        if !polysync::polytope::contains(set, &a.xi[t], tol)? {
            xi_escapes.push(t);
        }
    }
    Ok(AgentBound {
        series: BoundSeries { r, asymptotic, boxed_steps },
        polytope_r,
        ellipsoid_r,
        contraction,
        xi_escapes,
    })
}

/// First step at which `‖e(t)‖∞` exceeds `r(t)`, if any.
pub fn first_violation(e: &[Vec<f64>], r: &[f64]) -> Option<usize> {
    e.iter()
        .zip(r)
        .position(|(e, r)| numkit::vec_norm_inf(e) > r + 1e-9 * (1.0 + r.abs()))
}

/// `(φ₁, φ₂)` for one data seed.
pub fn phi_for_seed(model: &Model, cfg: &ExperimentConfig, oracles: &[(Mat, Mat)], seed: u64) -> Result<(f64, f64)> {
    let data = collect(model, cfg, seed)?;
    let sets = identify(model, &data, HullMode::Verbatim)?;
    let fits = regulate(model, &sets)?;
    Ok(simulate::phi_metrics(&fits, oracles)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub level: f64,
    pub seeds: usize,
    pub phi1_median: f64,
    pub phi2_median: f64,
    pub phi1_max: f64,
    pub phi2_max: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Table of φ medians over `seeds` data seeds per noise level.
pub fn noise_sweep(cfg: &ExperimentConfig, levels: &[f64], seeds: usize) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &level in levels {
        let cfg_l = cfg.clone().with_noise_level(level);
        let model = Model::from_config(&cfg_l)?;
        let orc = oracles(&model)?;
        let mut p1 = Vec::with_capacity(seeds);
        let mut p2 = Vec::with_capacity(seeds);
        for k in 0..seeds {
            let (a, b) = phi_for_seed(&model, &cfg_l, &orc, cfg.data.seed.wrapping_add(k as u64))?;
            p1.push(a);
            p2.push(b);
        }
        let (m1, m2) = (p1.iter().copied().fold(0.0, f64::max), p2.iter().copied().fold(0.0, f64::max));
        rows.push(SweepRow { level, seeds, phi1_median: median(&mut p1), phi2_median: median(&mut p2), phi1_max: m1, phi2_max: m2 });
    }
    Ok(rows)
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Collect,
    Identify,
    Regulate,
    Synthesize,
    Simulate,
    Bound,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Collect => "collect",
            Stage::Identify => "identify",
            Stage::Regulate => "regulate",
            Stage::Synthesize => "synthesize",
            Stage::Simulate => "simulate",
            Stage::Bound => "bound",
        }
    }
}

/// Everything produced by one run. Later fields stay empty when the run
/// stops early.
#[derive(Debug, Clone)]
pub struct Run {
    pub model: Model,
    pub data: Vec<AgentDataset>,
    pub ranks: Vec<RankRow>,
    pub sets: Vec<ConsistencySet>,
    pub fits: Vec<RegulatorFit>,
    pub synthesis: Vec<SynthesisResult>,
    pub observer: ObserverDesign,
    pub sim: SimResult,
    pub bounds: Vec<AgentBound>,
}

/// Callback invoked after each completed stage.
pub type StageHook<'a> = &'a mut dyn FnMut(Stage, &Run) -> Result<()>;

/// Runs the stages up to and including `until`. `on_stage` sees the partially
/// filled run after each stage, so callers can persist artifacts as they
/// become available.
pub fn run_until(cfg: &ExperimentConfig, until: Stage, on_stage: Option<StageHook<'_>>) -> Result<Run> {
    let mut noop = |_: Stage, _: &Run| Ok(());
    let hook: StageHook<'_> = match on_stage {
        Some(h) => h,
        None => &mut noop,
    };
    let model = Model::from_config(cfg)?;
    let data = collect(&model, cfg, cfg.data.seed)?;
    let ranks = rank_table(&model, &data)?;
    let mut run = Run {
        model,
        data,
        ranks,
        sets: Vec::new(),
        fits: Vec::new(),
        synthesis: Vec::new(),
        observer: ObserverDesign { f: Mat::zeros(0, 0), composite_radius: f64::NAN, alpha: None },
        sim: SimResult { horizon: 0, leader_x: vec![], leader_y: vec![], agents: vec![] },
        bounds: Vec::new(),
    };
    hook(Stage::Collect, &run)?;
    require_rank(&run.ranks)?;
    let done = |s: Stage| s >= until;
    if done(Stage::Collect) {
        return Ok(run);
    }
    run.sets = identify(&run.model, &run.data, HullMode::Verbatim)?;
    hook(Stage::Identify, &run)?;
    if done(Stage::Identify) {
        return Ok(run);
    }
    run.fits = regulate(&run.model, &run.sets)?;
    hook(Stage::Regulate, &run)?;
    if done(Stage::Regulate) {
        return Ok(run);
    }
    run.synthesis = synthesize(&run.model, cfg, &run.data)?;
    run.observer = design_observer(&run.model, cfg)?;
    hook(Stage::Synthesize, &run)?;
    if done(Stage::Synthesize) {
        return Ok(run);
    }
    let gains: Vec<Mat> = run.synthesis.iter().map(|s| s.k.clone()).collect();
    let ctrls = controllers(&run.fits, &gains)?;
    run.sim = simulate(&run.model, &ctrls, &run.observer.f, cfg.simulation.horizon, cfg.simulation.seed)?;
    hook(Stage::Simulate, &run)?;
    if done(Stage::Simulate) {
        return Ok(run);
    }
    let r = &run;
    let bounds = par_agents(r.model.len(), |i| {
        let syn = &r.synthesis[i];
        bound_agent(&r.model, i, &r.data[i], &r.fits[i], &syn.k, &syn.lyapunov_p, &r.observer.f, &r.sim, cfg.bounds.hull)
    })?;
    run.bounds = bounds;
    hook(Stage::Bound, &run)?;
    Ok(run)
}

/// All stages.
pub fn run_all(cfg: &ExperimentConfig, on_stage: Option<StageHook<'_>>) -> Result<Run> {
    run_until(cfg, Stage::Bound, on_stage)
}
