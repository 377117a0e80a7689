//! Finite mixtures of functional linear concurrent models (FMFLCM).
//!
//! Fits mixtures of concurrent functional regressions by a regularized EM
//! algorithm, clustering subjects while selecting functional covariates with
//! SCAD-type group penalties (FS, FS-Net, FGS-Net) or a roughness-penalty
//! baseline (RP). Includes a synthetic-data generator and the evaluation
//! metrics used to benchmark the methods.
//!
//! Core numerics are generic over the scalar type through [`scalar::Scalar`];
//! the aliases below fix `f64` for ordinary use.

pub mod basis;
pub mod dataset;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod params;
pub mod penalty;
pub mod rem;
pub mod scalar;
pub mod simgen;
pub mod solver;
pub mod tuning;

pub use error::Error;
pub use scalar::Scalar;

/// Default scalar type for the f64 aliases.
pub type Real = f64;

pub type SplineBasis = basis::SplineBasis<Real>;
pub type FunctionalDataset = dataset::FunctionalDataset<Real>;
pub type SubjectRecord = dataset::SubjectRecord<Real>;
pub type MixtureParams = params::MixtureParams<Real>;
pub type Responsibilities = params::Responsibilities<Real>;
pub type PenaltyConfig = penalty::PenaltyConfig<Real>;
pub type WorkingProblem = solver::WorkingProblem<Real>;
pub type FitResult = rem::FitResult<Real>;
pub type TuningGrid = tuning::TuningGrid<Real>;
