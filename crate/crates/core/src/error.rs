use thiserror::Error;

/// Unified error type for the library.
#[derive(Debug, Error)]
pub enum KppError {
    /// Expression text could not be parsed; `col` is 1-based.
    #[error("parse error at column {col}: {msg}")]
    Parse { col: usize, msg: String },

    /// Expression evaluation failed (division by zero, invalid power, ...).
    #[error("evaluation error: {0}")]
    Eval(String),

    /// Model file or model semantics rejected.
    #[error("model error: {0}")]
    Model(String),

    /// Grid construction or shape mismatch.
    #[error("grid error: {0}")]
    Grid(String),

    /// Time step exceeds the stability bound; carries the admissible dt.
    #[error("CFL violation: dt = {dt:.3e} exceeds the stable bound {required:.3e}")]
    Cfl { dt: f64, required: f64 },

    /// NaN or overflow detected during time stepping.
    #[error("numerical blow-up at step {step}: {msg}")]
    BlowUp { step: usize, msg: String },

    /// Power iteration did not converge; carries the last two growth factors.
    #[error("eigensolve did not converge in {max_iter} iterations (last growth factors {rho_prev:.12e}, {rho_last:.12e})")]
    NonConvergence {
        max_iter: usize,
        rho_prev: f64,
        rho_last: f64,
    },

    /// A documented precondition of an operation does not hold.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// A minimized function was observed to be non-unimodal beyond noise.
    #[error("unimodality violated during golden-section search: {0}")]
    Unimodal(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, KppError>;
