//! Spin Hamiltonian simulation for dipolar-coupled NMR spectra and
//! assignment-free recovery of Hamiltonian parameters from peak frequencies.

// Validation uses `!(x > 0.0)` style checks on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod config;
pub mod error;
pub mod fit;
pub mod formats;
pub mod peaks;
pub mod refine;
pub mod simulate;
pub mod spectral;
pub mod spin_model;

pub use error::{Error, Result};
pub use fit::{
    build_joint_hetero_problem, nafons_fit, objective, Bounds, Evaluation, FitProblem, FitResult, Mode, NafonsConfig,
    SpectrumTarget, WeightVector,
};
pub use peaks::{pick_peaks, PeakList, PickOptions};
pub use refine::{
    estimate_errors, lineshape_refine, ErrorConfig, ErrorEstimate, RefineConfig, RefineResult, RefineTarget,
};
pub use simulate::{simulate, Preparation, Simulation, SpectrumRequest};
pub use spectral::{
    detection_operator, diagonalize, stick_spectrum_from_state, stick_spectrum_thermal, synth_lineshape, top_n_sorted,
    EigenSystem, LineWidths, SampledSpectrum, Transition,
};
pub use spin_model::{build_hamiltonian, HamiltonianParams, HermitianOperator, ParamId, Spin, SpinSystem};
