//! Discrete β-ensembles on multi-interval lattices.
//!
//! The crate covers exact small-N computation, Metropolis sampling,
//! constrained equilibrium measures, limit covariance kernels and Monte Carlo
//! fluctuation statistics.

pub mod covariance;
pub mod equilibrium;
pub mod error;
pub mod exact;
pub mod fluctuations;
pub mod lattice;
pub mod mcmc;
pub mod models;
pub mod poly;
pub mod quad;
pub mod special;

pub use num_complex::Complex64 as C64;

pub use error::{Error, Result};
pub use lattice::{ParticleConfig, StateSpaceSpec};
pub use models::{ModelPreset, WeightModel};
pub use exact::ExactEnsemble;
pub use mcmc::{ChainOptions, ChainState};
pub use equilibrium::{EquilibriumMeasure, SolverOptions, SpectralData};
pub use covariance::{ContourSet, CovarianceKernel, KernelMode};
pub use fluctuations::{CumulantEstimate, LinearStatSample};
