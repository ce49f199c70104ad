//! Fusion of a reference sample with neighboring samples under a density
//! ratio model with per-neighbor ("variable") tilts.
//!
//! The typical workflow:
//!
//! 1. build [`Sample`]s and fuse them with [`validate`];
//! 2. choose tilts, either directly or with [`inference::refine_tilts`];
//! 3. [`likelihood::fit`] the model;
//! 4. read off [`inference::drm_cdf`], threshold probabilities with
//!    confidence intervals, and goodness-of-fit pairs.

pub mod asymptotics;
pub mod error;
pub mod inference;
pub mod likelihood;
mod linalg;
pub mod model;
pub mod simulation;

pub use error::{DrmError, Result};
pub use likelihood::{fit, FitOptions};
pub use linalg::{min_eigenvalue, spd_inverse, MAX_CONDITION};
pub use model::{validate, Basis, FittedModel, FusedData, Role, Sample, StepCDF, Theta, TiltSpec};
