use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read case file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("case parse error: {0}")]
    Parse(String),

    #[error("case validation error: {0}")]
    Validation(String),

    #[error("unknown bus {0}")]
    UnknownBus(u32),

    #[error("unknown generator {0:?}")]
    UnknownGenerator(String),

    #[error("power flow did not converge after {iterations} iterations (max mismatch {mismatch:.3e} pu)")]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },

    #[error("dynamic initialization residual above tolerance: |f|={f_norm:.3e}, |g|={g_norm:.3e}")]
    InitResidual { f_norm: f64, g_norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("Newton iteration failed at t={time:.4} s: residual {residual:.3e} after {iterations} iterations")]
    NewtonDiverged {
        time: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("singular Jacobian: {0}")]
    SingularJacobian(String),

    #[error("equilibrium solve failed: residual {residual:.3e} after {iterations} iterations")]
    EquilibriumDiverged { residual: f64, iterations: usize },

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("near-defective eigenpair: |w^T v| = {0:.3e} below biorthonormalization tolerance")]
    DefectiveMode(f64),

    #[error("mode selection produced an empty set; lower the participation threshold (currently {threshold}) or raise the slow-mode cutoff ({cutoff} rad/s)")]
    EmptyModeSet { threshold: f64, cutoff: f64 },

    #[error("conjugate pairing violated: {0}")]
    PairingViolation(String),

    #[error("nadir prediction failed: {0}")]
    NadirPrediction(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Process exit code for CLI use: 2 for input problems, 1 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Parse(_)
            | Error::Validation(_)
            | Error::UnknownBus(_)
            | Error::UnknownGenerator(_)
            | Error::InvalidArgument(_) => 2,
            _ => 1,
        }
    }
}
