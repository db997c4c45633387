//! Numerical radial geometry of asymptotically complex hyperbolic almost
//! Hermitian metrics in Fermi coordinates.
//!
//! The pipeline transports admissible frames along radial geodesics, builds
//! the rescaled coframes, extrapolates the boundary contact form, Carnot
//! metric, Reeb field and the endomorphism `φ`, and then checks the CR
//! identities and the predicted decay rates on the recovered data.
//!
//! The crate is `no_std` with `alloc`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

use alloc::string::String;

pub mod boundary;
pub mod chart;
pub mod cr;
pub mod curvature;
pub mod frames;
pub mod jet;
pub mod linalg;
pub mod models;
pub mod radial;
pub mod rates;

pub use chart::{Chart, Grid, Metric, TensorField};
pub use models::{ModelKind, ModelSpec};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{field} {msg}")]
    Config { field: String, msg: String },
    #[error("valence mismatch")]
    ValenceMismatch,
    #[error("chart mismatch")]
    ChartMismatch,
    #[error("grid too small for stencil on axis {0}")]
    GridTooSmall(usize),
    #[error("metric not positive definite at {0}")]
    NotPositiveDefinite(String),
    #[error("unsupported model: {0}")]
    Unsupported(String),
    #[error("oracle only for exact kinds")]
    OracleKind,
    #[error("incompatible J: {0}")]
    IncompatibleJ(String),
    #[error("frame drift {drift:e} exceeds tolerance at r = {r}")]
    Drift { drift: f64, r: f64 },
    #[error("r = {0} outside chart")]
    OutOfChart(f64),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("unknown quantity key {0}")]
    UnknownQuantity(String),
    #[error("Gram-Schmidt breakdown for every seed permutation")]
    GramSchmidt,
    #[error("J-pairing extraction failed at index {0}")]
    Pairing(usize),
}

impl Error {
    pub fn config(field: &str, msg: &str) -> Self {
        Error::Config { field: field.into(), msg: msg.into() }
    }
}
