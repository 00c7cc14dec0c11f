//! Assignment-free frequency fitting.

pub mod joint;
pub mod local;
pub mod nafons;
pub mod objective;
pub mod problem;
pub mod weights;

pub use joint::build_joint_hetero_problem;
pub use local::{descent_step, local_solve, LocalConfig, LocalOutcome};
pub use nafons::{nafons_fit, random_weight_values, FitResult, Mode, NafonsConfig, RestartOutcome};
pub use objective::{objective, Evaluation, TargetFit, SHORT_PENALTY};
pub use problem::{Bounds, FitProblem, SpectrumTarget};
pub use weights::{sample_weights, stream_rng, FitRng, WeightVector};
