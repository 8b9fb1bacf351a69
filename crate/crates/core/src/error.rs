use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("size limit exceeded: {0}")]
    Size(String),

    /// A standing assumption of the method does not hold for the given data or model.
    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("state diverged at step {step} (|x| = {magnitude:.3e}); use a shorter horizon or enable bounded restarts")]
    Divergence { step: usize, magnitude: f64 },

    #[error("regulator equations have no solution (residual {residual:.3e})")]
    NoRegulatorSolution { residual: f64 },

    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error("synthesis failed: {reason} (best margin {best_margin:.3e})")]
    Synthesis { reason: String, best_margin: f64 },

    #[error("certificate mismatch: {0}")]
    CertificateMismatch(String),

    #[error("observer design failed: best composite radius {best_radius:.6} (coupling spectrum moduli {coupling_moduli:?})")]
    ObserverDesign {
        best_radius: f64,
        coupling_moduli: Vec<f64>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
