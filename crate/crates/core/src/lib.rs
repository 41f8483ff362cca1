//! Structured heat-OU diffusion for hypergraph generation on relaxed
//! incidence matrices.

pub mod ablation;
pub mod align;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod error;
pub mod forward;
pub mod incidence;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod spectral;
pub mod trainer;
pub mod validation;

pub use error::{HedgeError, Result};
pub use incidence::{IncidenceMatrix, RelaxedState};
