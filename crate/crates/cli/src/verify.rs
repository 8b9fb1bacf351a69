//! Independent re-check of a stored bundle. Nothing is re-solved: stored
//! decisions are plugged back into the certificates and the stored
//! trajectories are compared against the stored bounds.

use std::fs;
use std::path::Path;

use polysync::datagen::{self, NoiseModel};
use polysync::numkit::{self, Mat};
use polysync::polytope::HullMode;
use polysync::represent;
use polysync::sdpcore;
use polysync::synthesis;
use polysync::{reach, simulate};
use serde::{Deserialize, Serialize};

use crate::bundle::{self, GainsFile, STAGE_FILE};
use crate::config::ExperimentConfig;
use crate::pipeline::{first_violation, Model, PipelineError, Result};

/// Relative tolerance for recomputed identities such as `K = UM(XM)⁻¹`.
pub const IDENTITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub agent: Option<String>,
    pub pass: bool,
    pub detail: String,
    /// First failing time step, for per-step checks.
    pub step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub completed: String,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

fn integrity(msg: String) -> PipelineError {
    PipelineError::Verification(format!("integrity: {msg}"))
}

fn completed_stage(root: &Path) -> Result<String> {
    let text = fs::read_to_string(root.join(STAGE_FILE))
        .map_err(|e| integrity(format!("missing stage marker in {}: {e}", root.display())))?;
    text.lines()
        .find_map(|l| l.strip_prefix("completed="))
        .map(str::to_string)
        .ok_or_else(|| integrity("stage marker has no completed= line".into()))
}

fn rel_diff(a: &Mat, b: &Mat) -> f64 {
    match a.try_sub(b) {
        Ok(d) => d.norm_fro() / (1.0 + b.norm_fro()),
        Err(_) => f64::INFINITY,
    }
}

/// Re-checks every artifact of the bundle at `root`.
///
/// Missing or unreadable files are integrity errors; failed checks are
/// reported in the returned report.
pub fn verify_bundle(root: &Path) -> Result<VerifyReport> {
    let completed = completed_stage(root)?;
    let rank = |s: &str| ["none", "collect", "identify", "regulate", "synthesize", "simulate", "bound"].iter().position(|x| *x == s);
    let level = rank(&completed).ok_or_else(|| integrity(format!("unknown stage {completed:?}")))?;
    if level < rank("synthesize").expect("known stage") {
        return Err(integrity(format!("bundle stops at {completed}; nothing to verify before synthesize")));
    }
    let cfg = ExperimentConfig::from_path(&root.join("config.toml")).map_err(|e| integrity(e.to_string()))?;
    let model = Model::from_config(&cfg)?;
    let gains: GainsFile = bundle::read_json(&root.join("gains.json"))?;
    if gains.agents.len() != model.len() {
        return Err(integrity(format!("gains.json has {} agents, config has {}", gains.agents.len(), model.len())));
    }
    let mut checks = Vec::new();
    let mut push = |name: &str, agent: Option<&str>, pass: bool, detail: String, step: Option<usize>| {
        checks.push(Check { name: name.into(), agent: agent.map(str::to_string), pass, detail, step })
    };
    let mut closed_loops = Vec::new();
    for (i, entry) in gains.agents.iter().enumerate() {
        let name = model.names[i].as_str();
        let (d, _) = datagen::import_dataset(&bundle::agent_dir(root, i)).map_err(|e| integrity(format!("{name}: {e}")))?;
        let noise: &NoiseModel = &model.noises[i];
        let cs = represent::build_consistency_set_with(&d, noise, HullMode::Verbatim)?;
        let g = &entry.result;

        let problem = synthesis::feedback_lmi(&d, &cs, g.margin)?;
        let y = g.m_decision.vec();
        if y.len() != problem.dim {
            return Err(integrity(format!("{name}: stored M has {} entries, the LMI needs {}", y.len(), problem.dim)));
        }
        let (lmi_margin, eq_res) = sdpcore::check_solution(&problem, &y);
        let eq_tol = IDENTITY_TOL * (1.0 + problem.scale());
        push(
            "lmi certificate",
            Some(name),
            lmi_margin > 0.0 && eq_res <= eq_tol,
            format!("min block eigenvalue {lmi_margin:.3e}, equality residual {eq_res:.3e}"),
            None,
        );

        let xm = d.x.matmul(&g.m_decision)?.symmetrize();
        let p_rec = numkit::inverse(&xm)?.symmetrize();
        let k_rec = d.u.matmul(&g.m_decision)?.matmul(&p_rec)?;
        let (dk, dp) = (rel_diff(&g.k, &k_rec), rel_diff(&g.lyapunov_p, &p_rec));
        push(
            "gain matches certificate",
            Some(name),
            dk <= IDENTITY_TOL && dp <= IDENTITY_TOL,
            format!("relative mismatch K {dk:.3e}, P {dp:.3e}"),
            None,
        );

        let closed = represent::closed_loop_polytope(&cs, &g.k)?;
        let radii = synthesis::vertex_spectral_radii(&closed)?;
        let worst = radii.iter().copied().fold(0.0, f64::max);
        push(
            "vertex schur sweep",
            Some(name),
            worst < 1.0,
            format!("{} vertices, worst spectral radius {worst:.6}", radii.len()),
            None,
        );

        let decrease = synthesis::lyapunov_decrease(&closed, &g.lyapunov_p)?;
        push(
            "lyapunov decrease",
            Some(name),
            decrease < -1e-9,
            format!("max eigenvalue of QᵀPQ − P is {decrease:.3e}"),
            None,
        );
        closed_loops.push(closed);
    }

    let f = &gains.observer.f;
    let observer_ok = synthesis::verify_f(&model.topology, &model.leader.s, f, 0.0);
    push(
        "observer composite",
        None,
        observer_ok.is_ok(),
        match &observer_ok {
            Ok(o) => format!("composite spectral radius {:.3e}", o.composite_radius),
            Err(e) => e.to_string(),
        },
        None,
    );
    push(
        "lemma 1",
        None,
        synthesis::verify_lemma1(&model.topology, &model.leader.s, f, &closed_loops),
        "observer and every closed-loop vertex Schur".into(),
        None,
    );

    if level >= rank("bound").expect("known stage") {
        for i in 0..model.len() {
            let name = model.names[i].as_str();
            let tp = bundle::trajectory_path(root, i);
            let bp = bundle::bounds_path(root, i);
            let e = simulate::read_error_column(&tp).map_err(|err| integrity(format!("{}: {err}", tp.display())))?;
            let b = reach::read_bounds_csv(&bp).map_err(|err| integrity(format!("{}: {err}", bp.display())))?;
            if e.len() != b.r.len() {
                return Err(integrity(format!(
                    "{name}: {} trajectory rows but {} bound rows",
                    e.len(),
                    b.r.len()
                )));
            }
            let violation = first_violation(&e, &b.r);
            push(
                "bound containment",
                Some(name),
                violation.is_none(),
                match violation {
                    None => format!("‖e(t)‖∞ ≤ r(t) for all {} steps", e.len()),
                    Some(t) => format!(
                        "‖e({t})‖∞ = {:.6e} exceeds r({t}) = {:.6e}",
                        numkit::vec_norm_inf(&e[t]),
                        b.r[t]
                    ),
                },
                violation,
            );
        }
    }
    Ok(VerifyReport { completed, checks })
}
