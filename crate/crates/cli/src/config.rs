//! Experiment configuration: TOML with nested sections, matrices as
//! row-major nested lists.

use std::path::Path;

use polysync::graphnet::{has_spanning_tree, Edge, Topology};
use polysync::polytope::HullMode;
use polysync::simulate::check_leader_spectrum;
use polysync::Mat;
use serde::{Deserialize, Serialize};
use toml::Spanned;

pub const PAPER_EXAMPLE: &str = include_str!("../configs/paper_example.toml");

type Rows = Spanned<Vec<Vec<f64>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub leader: LeaderConfig,
    pub agents: Vec<AgentConfig>,
    pub topology: TopologyConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub bounds: BoundsConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderConfig {
    pub s: Rows,
    pub h: Rows,
    /// Leader initial state; drawn from `seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
    pub w_bar: f64,
    pub v_bar: f64,
    /// Half-widths of the input box; defaults to 1 per input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_half_width: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub rho: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restart_above: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    pub margin: f64,
    pub observer_margin: f64,
    /// Observer gain to verify instead of designing one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observer_f: Option<Vec<Vec<f64>>>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { margin: polysync::synthesis::DEFAULT_MARGIN, observer_margin: 1e-3, observer_f: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub horizon: usize,
    /// Seed for the followers' initial states and observer states.
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { horizon: 300, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    /// Noise hull used for the reachable-set bounds. `verbatim` is the
    /// γ_w·ρ vertex set the gain is certified on; `scaled` is provably
    /// outer but becomes vacuous once the consistent set holds unstable loops.
    pub hull: HullMode,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self { hull: HullMode::Verbatim }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub levels: Vec<f64>,
    pub seeds: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { levels: vec![0.001, 0.005, 0.01, 0.05, 0.1], seeds: 20 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("{0}")]
    Other(String),
    /// A standing assumption fails for the configured model.
    #[error("{0}")]
    Assumption(String),
}

fn line_of(source: Option<&str>, offset: usize) -> usize {
    source.map_or(0, |s| s[..offset.min(s.len())].matches('\n').count() + 1)
}

pub fn to_mat(rows: &[Vec<f64>]) -> Result<Mat, String> {
    Mat::from_rows(rows).map_err(|e| e.to_string())
}

impl ExperimentConfig {
    pub fn paper_example() -> Self {
        Self::from_toml_str(PAPER_EXAMPLE).expect("bundled config is valid")
    }

    pub fn from_toml_str(source: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(source).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate(Some(source))?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Other(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn matrix(&self, rows: &Rows) -> Mat {
        to_mat(rows.get_ref()).expect("validated on load")
    }

    pub fn topology(&self) -> Topology {
        Topology::from_edges(self.agents.len(), &self.topology.edges).expect("validated on load")
    }

    /// Overrides every agent's noise half-widths.
    pub fn with_noise_level(mut self, level: f64) -> Self {
        for a in &mut self.agents {
            a.w_bar = level;
            a.v_bar = level;
        }
        self
    }

    /// Dimensional consistency and the assumptions on the graph and leader.
    /// Without `source` the reported line numbers are 0.
    pub fn validate(&self, source: Option<&str>) -> Result<(), ConfigError> {
        let bad = |rows: &Rows, message: String| ConfigError::Invalid { line: line_of(source, rows.span().start), message };
        let shape = |rows: &Rows, what: &str| -> Result<Mat, ConfigError> {
            let m = to_mat(rows.get_ref()).map_err(|e| bad(rows, format!("{what}: {e}")))?;
            if m.rows() == 0 || m.cols() == 0 || !m.is_finite() {
                return Err(bad(rows, format!("{what} must be a nonempty finite matrix")));
            }
            Ok(m)
        };
        let s = shape(&self.leader.s, "leader.s")?;
        let h = shape(&self.leader.h, "leader.h")?;
        if !s.is_square() || h.cols() != s.rows() {
            return Err(bad(&self.leader.h, format!("leader.h is {:?} but S is {:?}", h.shape(), s.shape())));
        }
        if let Some(x0) = &self.leader.x0 {
            if x0.len() != s.rows() {
                return Err(bad(&self.leader.s, format!("leader.x0 has {} entries for n0 = {}", x0.len(), s.rows())));
            }
        }
        check_leader_spectrum(&s).map_err(|e| ConfigError::Assumption(format!("leader.s: {e}")))?;
        polysync::simulate::LeaderModel::new(s.clone(), h.clone())
            .map_err(|e| ConfigError::Assumption(format!("leader: {e}")))?;
        if self.agents.is_empty() {
            return Err(ConfigError::Other("at least one agent is required".into()));
        }
        for (i, ag) in self.agents.iter().enumerate() {
            let tag = |f: &str| format!("agents[{i}].{f}");
            let a = shape(&ag.a, &tag("a"))?;
            let b = shape(&ag.b, &tag("b"))?;
            let c = shape(&ag.c, &tag("c"))?;
            if !a.is_square() {
                return Err(bad(&ag.a, format!("{} must be square, got {:?}", tag("a"), a.shape())));
            }
            if b.rows() != a.rows() {
                return Err(bad(&ag.b, format!("{} has {} rows, expected {}", tag("b"), b.rows(), a.rows())));
            }
            if c.cols() != a.rows() {
                return Err(bad(&ag.c, format!("{} has {} columns, expected {}", tag("c"), c.cols(), a.rows())));
            }
            if c.rows() != h.rows() {
                return Err(bad(&ag.c, format!("{} has {} outputs but the leader has {}", tag("c"), c.rows(), h.rows())));
            }
            if !(ag.w_bar >= 0.0 && ag.v_bar >= 0.0) {
                return Err(bad(&ag.a, format!("agents[{i}] noise half-widths must be nonnegative")));
            }
            if let Some(hw) = &ag.input_half_width {
                if hw.len() != b.cols() || hw.iter().any(|v| v.is_nan() || *v <= 0.0) {
                    return Err(bad(&ag.b, format!("agents[{i}].input_half_width needs {} positive entries", b.cols())));
                }
            }
        }
        let topo = Topology::from_edges(self.agents.len(), &self.topology.edges)
            .map_err(|e| ConfigError::Other(format!("topology: {e}")))?;
        if !has_spanning_tree(&topo) {
            return Err(ConfigError::Assumption(
                "topology: Assumption 1 fails (no directed spanning tree rooted at the leader)".into(),
            ));
        }
        if self.data.rho == 0 {
            return Err(ConfigError::Other("data.rho must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.synthesis.margin) || !(0.0..1.0).contains(&self.synthesis.observer_margin) {
            return Err(ConfigError::Other("synthesis margins must lie in [0, 1)".into()));
        }
        if let Some(f) = &self.synthesis.observer_f {
            let f = to_mat(f).map_err(|e| ConfigError::Other(format!("synthesis.observer_f: {e}")))?;
            if f.shape() != s.shape() {
                return Err(ConfigError::Other(format!("synthesis.observer_f is {:?}, expected {:?}", f.shape(), s.shape())));
            }
        }
        Ok(())
    }
}
