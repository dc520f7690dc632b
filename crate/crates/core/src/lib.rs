//! Principal eigenvalues, spreading speeds, and long-time regimes for
//! reaction-diffusion systems with space-time periodic coefficients.
//!
//! The library is organized bottom-up:
//!
//! - [`exprlang`]: the expression language used for coefficient fields;
//! - [`model`]: the model description, loading, and assumption checks;
//! - [`grid`]: periodic and truncated-box grids, discrete operators, and
//!   explicit time stepping;
//! - [`floquet`]: principal periodic eigenvalues via power iteration on the
//!   one-period evolution (monodromy) operator;
//! - [`speeds`]: dispersion curves, critical spreading speeds in a direction,
//!   and the directional (envelope) spreading speed;
//! - [`cauchy`]: direct simulation of the Cauchy problem, regime
//!   classification, and the measurement/diagnostic harnesses;
//! - [`cli`]: the `kpp-spectra` command-line interface.

pub mod cauchy;
pub mod cli;
pub mod error;
pub mod exprlang;
pub mod floquet;
pub mod grid;
pub mod model;
pub mod oracle;
pub mod speeds;
pub mod verify;

pub use error::{KppError, Result};
