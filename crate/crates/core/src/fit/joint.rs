//! Joint fit of transition-selective subspectra for heteronuclear couplings.

use crate::error::{Error, Result};
use crate::fit::problem::{Bounds, FitProblem, SpectrumTarget};
use crate::peaks::PeakList;
use crate::simulate::{simulate, Preparation, SpectrumRequest};
use crate::spin_model::{HamiltonianParams, ParamId, SpinSystem};

/// Half-width of the heteronuclear coupling search interval (Hz).
pub const HETERO_BOUND_HZ: f64 = 2500.0;

/// Builds the problem for a set of coupled subspectra, each recorded after
/// preparing one coherence of the prepared species' sub-Hamiltonian.
///
/// Free parameters are every heteronuclear dipolar coupling (bounds
/// `±2500 Hz`, starting from zero) and, when `shift_window_hz > 0`, the
/// shifts of the prepared species within `±shift_window_hz` of `known`.
/// Everything else stays at `known`.
pub fn build_joint_hetero_problem(
    sys: &SpinSystem,
    known: &HamiltonianParams,
    subspectra: Vec<(Preparation, PeakList)>,
    shift_window_hz: f64,
) -> Result<FitProblem> {
    if subspectra.is_empty() {
        return Err(Error::InvalidProblem("no subspectra given".into()));
    }
    if !(shift_window_hz >= 0.0) || !shift_window_hz.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "shift window must be finite and non-negative, got {shift_window_hz}"
        )));
    }
    known.validate(sys.len())?;

    let mut hetero = Vec::new();
    for j in 0..sys.len() {
        for k in j + 1..sys.len() {
            if !sys.is_homonuclear(j, k) {
                hetero.push(ParamId::dipolar(j, k));
            }
        }
    }
    if hetero.is_empty() {
        return Err(Error::InvalidProblem(
            "the spin system has no heteronuclear pairs".into(),
        ));
    }

    let mut fixed = known.clone();
    for &id in &hetero {
        fixed.set(id, 0.0);
    }

    let mut prep_species: Vec<String> = Vec::new();
    let mut targets = Vec::with_capacity(subspectra.len());
    for (prep, peaks) in subspectra {
        let (species, i, j) = match &prep {
            Preparation::Coherence { species, i, j } => (species.clone(), *i, *j),
            Preparation::Thermal => {
                return Err(Error::InvalidProblem(
                    "joint subspectra need eigenpair preparations".into(),
                ))
            }
        };
        let req = SpectrumRequest {
            observe: species.clone(),
            decouple: false,
            prep,
        };
        if simulate(sys, &fixed, &req)?.transitions.is_empty() {
            return Err(Error::InvalidPrep {
                i,
                j,
                reason: "the prepared state produces no observable lines".into(),
            });
        }
        if !prep_species.contains(&species) {
            prep_species.push(species);
        }
        targets.push(SpectrumTarget::new(peaks, req)?);
    }

    let mut free = hetero.clone();
    let mut bounds = vec![Bounds::symmetric(HETERO_BOUND_HZ); hetero.len()];
    let mut start = vec![0.0; hetero.len()];
    if shift_window_hz > 0.0 {
        for j in 0..sys.len() {
            if prep_species.iter().any(|s| s == sys.species(j)) {
                let v = known.shifts_hz[j];
                free.push(ParamId::Shift(j));
                bounds.push(Bounds::new(v - shift_window_hz, v + shift_window_hz)?);
                start.push(v);
            }
        }
    }
    FitProblem::new(sys.clone(), fixed, free, bounds, targets)?.with_start(start)
}
