//! Numerics for the renormalized volume of conformally compact Einstein ends:
//! boundary-expansion solvers, conformal-class functionals and their Hessians,
//! warped model geometries, and closed-form spectral multipliers for the
//! second variation on Fuchsian cylinders, with a rigorous interval-arithmetic
//! positivity certificate.

pub mod chart_geometry;
pub mod conformal_functionals;
pub mod fg_expansion;
pub mod fields;
pub mod fuchsian_spectral;
pub mod grid;
pub mod io;
pub mod parallel;
pub mod smat;
pub mod warped_models;
pub mod xseries;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dimension {dim}: {why}")]
    Dimension { dim: usize, why: String },
    #[error("axis {axis}: resolution {res} cannot hold band limit {band} (need res >= 6*band)")]
    Aliasing { axis: usize, res: usize, band: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{what}: operator singular or near-singular (smallest singular value est. {sigma_min:.3e})")]
    Singular { what: String, sigma_min: f64 },
    #[error("{what}: no convergence in {cap} iterations (residual history {history:?})")]
    IterationCap {
        what: String,
        cap: usize,
        history: Vec<f64>,
    },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
