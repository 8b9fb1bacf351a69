//! Artifact bundles: everything a run produced, laid out on disk so that
//! `verify` can re-check it without re-solving anything.
//!
//! ```text
//! config.toml            effective configuration
//! STAGE                  last completed stage, plus the failure if any
//! ranks.json             rank check per agent
//! data/agent{i}/         datasets (CSV + manifest.json)
//! consistency.json       nominal estimates and oracle residuals
//! fits.json              regulator fits and model-based oracles
//! gains.json             K, M, P, vertex radii, observer F
//! simulation.json        leader trajectory and error summary
//! trajectories/agent{i}.csv
//! bounds/agent{i}.csv
//! sweep.csv, report.json (repro-paper only)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use polysync::datagen;
use polysync::numkit::Mat;
use polysync::reach;
use polysync::regulator::RegulatorFit;
use polysync::represent;
use polysync::simulate;
use polysync::synthesis::{ObserverDesign, SynthesisResult};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::pipeline::{self, first_violation, oracles, PipelineError, Result, Run, Stage, SweepRow};

pub const STAGE_FILE: &str = "STAGE";

pub fn agent_dir(root: &Path, i: usize) -> PathBuf {
    root.join("data").join(format!("agent{}", i + 1))
}

pub fn trajectory_path(root: &Path, i: usize) -> PathBuf {
    root.join("trajectories").join(format!("agent{}.csv", i + 1))
}

pub fn bounds_path(root: &Path, i: usize) -> PathBuf {
    root.join("bounds").join(format!("agent{}.csv", i + 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyEntry {
    pub agent: String,
    pub z_nominal: Mat,
    pub c_nominal: Mat,
    pub z_vertices: usize,
    pub c_vertices: usize,
    /// Frobenius residuals of the reconstruction with the realized noise.
    pub z_residual: Option<f64>,
    pub c_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEntry {
    pub agent: String,
    pub fit: RegulatorFit,
    pub exact_pi: Mat,
    pub exact_gamma: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainEntry {
    pub agent: String,
    #[serde(flatten)]
    pub result: SynthesisResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainsFile {
    pub agents: Vec<GainEntry>,
    pub observer: ObserverDesign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub horizon: usize,
    pub tail_from: usize,
    /// `max_i max_{t ≥ tail_from} ‖e_i(t)‖∞`.
    pub max_tail_error: f64,
    /// `max_i ‖e_i(horizon)‖∞`.
    pub final_error: f64,
    pub leader_x: Vec<Vec<f64>>,
    pub leader_y: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub agent: String,
    pub worst_vertex_radius: f64,
    pub lmi_margin: f64,
    pub beta: f64,
    pub mu: f64,
    pub asymptotic_bound: f64,
    pub final_bound: f64,
    pub first_violation: Option<usize>,
    pub xi_escapes: usize,
    pub boxed_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub noise_half_width: f64,
    pub observer_radius: f64,
    /// Observer composite and every closed-loop vertex are Schur.
    pub lemma1: bool,
    pub max_tail_error: f64,
    pub final_error: f64,
    /// Tail error within 50 noise half-widths (or below 1e-4 without noise).
    pub synchronized: bool,
    pub containment: bool,
    pub phi1: f64,
    pub phi2: f64,
    pub agents: Vec<AgentReport>,
    pub sweep: Vec<SweepRow>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::Verification(format!("integrity: cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Verification(format!("integrity: {} does not parse: {e}", path.display())))
}

/// Tail window used for the synchronization summary.
pub fn tail_from(horizon: usize) -> usize {
    (2 * horizon) / 3
}

pub fn noise_half_width(cfg: &ExperimentConfig) -> f64 {
    cfg.agents.iter().map(|a| a.w_bar.max(a.v_bar)).fold(0.0, f64::max)
}

/// Writes artifacts as stages complete and keeps the stage marker current.
pub struct BundleWriter {
    root: PathBuf,
    data_seed: u64,
    completed: Option<Stage>,
}

impl BundleWriter {
    pub fn create(root: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(root)?;
        fs::write(root.join("config.toml"), cfg.to_toml_string())?;
        let w = Self { root: root.to_path_buf(), data_seed: cfg.data.seed, completed: None };
        w.write_marker(None)?;
        Ok(w)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn write_marker(&self, failure: Option<&PipelineError>) -> Result<()> {
        let mut text = format!("completed={}\n", self.completed.map_or("none", Stage::name));
        if let Some(e) = failure {
            text.push_str(&format!("failed={e}\n"));
        }
        fs::write(self.root.join(STAGE_FILE), text)?;
        Ok(())
    }

    /// Records a failure in the marker; earlier artifacts stay in place.
    pub fn mark_failed(&self, e: &PipelineError) -> Result<()> {
        self.write_marker(Some(e))
    }

    pub fn write_stage(&mut self, stage: Stage, run: &Run) -> Result<()> {
        let root = &self.root;
        let names = &run.model.names;
        match stage {
            Stage::Collect => {
                for (i, d) in run.data.iter().enumerate() {
                    datagen::export_dataset(&agent_dir(root, i), d, pipeline::agent_seed(self.data_seed, i))?;
                }
                write_json(&root.join("ranks.json"), &run.ranks)?;
            }
            Stage::Identify => {
                let entries = run
                    .sets
                    .iter()
                    .enumerate()
                    .map(|(i, cs)| {
                        let residuals =
                            represent::true_membership_residuals(cs, &run.model.systems[i], &run.data[i]).ok();
                        ConsistencyEntry {
                            agent: names[i].clone(),
                            z_nominal: cs.z_nominal(),
                            c_nominal: cs.c_nominal(),
                            z_vertices: cs.z_poly.len(),
                            c_vertices: cs.c_poly.len(),
                            z_residual: residuals.map(|r| r.0),
                            c_residual: residuals.map(|r| r.1),
                        }
                    })
                    .collect::<Vec<_>>();
                write_json(&root.join("consistency.json"), &entries)?;
            }
            Stage::Regulate => {
                let exact = oracles(&run.model)?;
                let entries = run
                    .fits
                    .iter()
                    .zip(exact)
                    .enumerate()
                    .map(|(i, (fit, (pi, gamma)))| FitEntry {
                        agent: names[i].clone(),
                        fit: fit.clone(),
                        exact_pi: pi,
                        exact_gamma: gamma,
                    })
                    .collect::<Vec<_>>();
                write_json(&root.join("fits.json"), &entries)?;
            }
            Stage::Synthesize => {
                let gains = GainsFile {
                    agents: run
                        .synthesis
                        .iter()
                        .enumerate()
                        .map(|(i, r)| GainEntry { agent: names[i].clone(), result: r.clone() })
                        .collect(),
                    observer: run.observer.clone(),
                };
                write_json(&root.join("gains.json"), &gains)?;
            }
            Stage::Simulate => {
                fs::create_dir_all(root.join("trajectories"))?;
                for i in 0..run.model.len() {
                    simulate::write_trajectory_csv(&trajectory_path(root, i), &run.sim, i)?;
                }
                let sim = &run.sim;
                let summary = SimulationSummary {
                    horizon: sim.horizon,
                    tail_from: tail_from(sim.horizon),
                    max_tail_error: sim.max_abs_error(tail_from(sim.horizon)),
                    final_error: sim.max_abs_error(sim.horizon),
                    leader_x: sim.leader_x.clone(),
                    leader_y: sim.leader_y.clone(),
                };
                write_json(&root.join("simulation.json"), &summary)?;
            }
            Stage::Bound => {
                fs::create_dir_all(root.join("bounds"))?;
                for (i, b) in run.bounds.iter().enumerate() {
                    reach::write_bounds_csv(&bounds_path(root, i), &b.series)?;
                }
            }
        }
        self.completed = Some(stage);
        self.write_marker(None)
    }

    pub fn write_sweep(&self, rows: &[SweepRow]) -> Result<()> {
        let mut text = String::from("level,seeds,phi1_median,phi2_median,phi1_max,phi2_max\n");
        for r in rows {
            text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.level, r.seeds, r.phi1_median, r.phi2_median, r.phi1_max, r.phi2_max
            ));
        }
        fs::write(self.root.join("sweep.csv"), text)?;
        Ok(())
    }

    pub fn write_report(&self, report: &Report) -> Result<()> {
        write_json(&self.root.join("report.json"), report)
    }
}

/// Summary of a completed run.
pub fn build_report(cfg: &ExperimentConfig, run: &Run, sweep: Vec<SweepRow>) -> Result<Report> {
    let sim = &run.sim;
    let closed = run
        .sets
        .iter()
        .zip(&run.synthesis)
        .map(|(cs, s)| represent::closed_loop_polytope(cs, &s.k))
        .collect::<polysync::Result<Vec<_>>>()?;
    let lemma1 = polysync::synthesis::verify_lemma1(&run.model.topology, &run.model.leader.s, &run.observer.f, &closed);
    let agents: Vec<AgentReport> = run
        .bounds
        .iter()
        .enumerate()
        .map(|(i, b)| AgentReport {
            agent: run.model.names[i].clone(),
            worst_vertex_radius: run.synthesis[i].worst_vertex_radius,
            lmi_margin: run.synthesis[i].lmi_margin,
            beta: b.contraction.beta,
            mu: b.contraction.mu,
            asymptotic_bound: b.series.asymptotic,
            final_bound: b.series.r.last().copied().unwrap_or(f64::NAN),
            first_violation: first_violation(&sim.agents[i].e, &b.series.r),
            xi_escapes: b.xi_escapes.len(),
            boxed_steps: b.series.boxed_steps.len(),
        })
        .collect();
    let noise = noise_half_width(cfg);
    let max_tail_error = sim.max_abs_error(tail_from(sim.horizon));
    let (phi1, phi2) = simulate::phi_metrics(&run.fits, &oracles(&run.model)?)?;
    Ok(Report {
        noise_half_width: noise,
        observer_radius: run.observer.composite_radius,
        lemma1,
        max_tail_error,
        final_error: sim.max_abs_error(sim.horizon),
        synchronized: max_tail_error < (50.0 * noise).max(1e-4),
        containment: agents.iter().all(|a| a.first_violation.is_none()),
        phi1,
        phi2,
        agents,
        sweep,
    })
}
