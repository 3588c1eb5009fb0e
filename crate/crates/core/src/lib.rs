//! Multi-view rigid registration by expectation-maximization over per-point
//! Student's-t mixtures.
//!
//! Every point of every view is explained by an equal-weight mixture of
//! t-distributions centred on its nearest neighbours in the other views. EM
//! alternates nearest-neighbour correspondence and posterior computation with
//! weighted rigid alignment and a shared isotropic covariance update,
//! recovering one rigid transform per view.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` deliberately treats NaN as invalid.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod error;
pub mod geometry;
pub mod solver;
pub mod spatial;
pub mod stmm;

pub use error::{Error, Result};
pub use geometry::{
    apply_transform, compose, nearest_rotation, perturb, rotation_deviation, rotation_error,
    sample_perturbation, translation_error, PerturbationSpec, Point3, PointSet, RigidTransform,
};
pub use solver::{
    average_resolution, build_indices, e_step, initialize_sigma, m_step_transform, q_value,
    register, update_covariance, EStepResult, Initialization, Mode, ModelParams, Registration,
    RegistrationConfig, RegistrationReport, Termination, WeightedPair,
};
pub use spatial::{build_index, nearest, KdIndex, Neighbor};
pub use stmm::{MixtureParams, PosteriorTriple};
