//! Training backends, diagnostics, and experiment machinery for
//! positivity-constrained input-convex networks.
//!
//! The library trains small input-convex energy networks and convex potential
//! flows under the non-negativity constraint on their inter-layer weights,
//! with the constraint routed through one of six interchangeable backends
//! (direct softplus reparametrizations, a slack-plus-hypernetwork lift, hard
//! projection, and ADMM consensus splitting). Alongside the training loops it
//! ships the structural diagnostics used to compare the backends: a
//! trailing-window cross-covariance estimator, shoulder occupancy and escape
//! statistics, a synthetic escape SDE, and two-dimensional loss-landscape
//! slicing.

pub mod ad;
pub mod adam;
pub mod backends;
pub mod diagnostics;
pub mod experiments;
pub mod params;
pub mod hypernet;
pub mod icnn;
pub mod landscape;
pub mod rng;
pub mod sde;
pub mod targets;
pub mod training;

pub use ad::{Array, Dual, Jet2, Scalar, Tape, Var};
pub use adam::{AdamHyper, AdamState};
pub use backends::{AdmmSchedule, BackendKind, BackendState};
pub use diagnostics::{shoulder_threshold, TrailingWindow};
pub use icnn::IcnnConfig;
pub use params::{ParamStore, ParamTensor};
pub use targets::{tv_between, tv_distance, QuadratureGrid, Target1D, Target2D};
pub use training::{train, tv_eval, LossKind, RunConfig, RunRecord, TargetSpec};
