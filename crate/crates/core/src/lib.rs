//! Floquet-Bloch analysis of space-time periodic compressible Navier-Stokes
//! flow in a horizontally periodic layer.
//!
//! The pipeline computes a time-periodic base state, linearizes about it,
//! builds monodromy operators for each Bloch parameter and extracts the
//! low-order dispersion coefficients both from perturbation cell problems
//! and from direct Floquet sweeps.

pub mod bloch_transform;
pub mod cell_grid;
pub mod cli_io;
pub mod config_params;
pub mod dispersion;
pub mod floquet_engine;
pub mod linalg;
pub mod linear_operators;
pub mod periodic_state;

pub use faer::c64;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    Incompatible(String),
    #[error("no convergence: {message}")]
    NoConvergence { message: String, history: Vec<f64> },
    #[error("simplicity violated: |mu1| = {mu1}, |mu2| = {mu2}")]
    NotSimple { mu1: f64, mu2: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Sets the worker count used by the dense kernels from `CNS_FLOQUET_THREADS`.
/// Unset or `1` keeps everything sequential.
pub fn init_threads_from_env() {
    let n = std::env::var("CNS_FLOQUET_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .unwrap_or(1);
    if n <= 1 {
        faer::set_global_parallelism(faer::Par::Seq);
    } else {
        faer::set_global_parallelism(faer::Par::rayon(n));
    }
}
