use crate::error::{Error, Result};
use crate::peaks::PeakList;
use crate::simulate::SpectrumRequest;
use crate::spin_model::{HamiltonianParams, ParamId, SpinSystem};

/// Closed search interval for one parameter, in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidProblem(format!("invalid bounds [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn symmetric(half_width: f64) -> Self {
        Self {
            lo: -half_width,
            hi: half_width,
        }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// One experimental spectrum to match: sorted peak frequencies and the
/// experiment that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumTarget {
    pub peaks: PeakList,
    pub request: SpectrumRequest,
}

impl SpectrumTarget {
    pub fn new(peaks: PeakList, request: SpectrumRequest) -> Result<Self> {
        if peaks.is_empty() {
            return Err(Error::InvalidProblem("a target needs at least one peak".into()));
        }
        Ok(Self { peaks, request })
    }

    /// Noiseless target: the `n` strongest simulated lines at `params`,
    /// with their integrals.
    pub fn synthetic(sys: &SpinSystem, params: &HamiltonianParams, request: SpectrumRequest, n: usize) -> Result<Self> {
        let sim = crate::simulate::simulate(sys, params, &request)?;
        let top = crate::spectral::top_n_sorted(&sim.transitions, n)?;
        let integrals = top.picks.iter().map(|&k| sim.transitions[k].integral).collect();
        Self::new(PeakList::new(top.freqs, integrals)?, request)
    }

    /// Number of simulated lines selected for comparison.
    pub fn n(&self) -> usize {
        self.peaks.len()
    }
}

/// Free parameters, their domain, the fixed baseline, and the spectra to match.
#[derive(Debug, Clone, PartialEq)]
pub struct FitProblem {
    sys: SpinSystem,
    free: Vec<ParamId>,
    fixed: HamiltonianParams,
    bounds: Vec<Bounds>,
    start: Vec<f64>,
    targets: Vec<SpectrumTarget>,
}

impl FitProblem {
    /// The starting point defaults to zero for every parameter, clamped into
    /// its bounds.
    pub fn new(
        sys: SpinSystem,
        fixed: HamiltonianParams,
        free: Vec<ParamId>,
        bounds: Vec<Bounds>,
        targets: Vec<SpectrumTarget>,
    ) -> Result<Self> {
        fixed.validate(sys.len())?;
        if free.is_empty() {
            return Err(Error::InvalidProblem("no free parameters".into()));
        }
        if bounds.len() != free.len() {
            return Err(Error::DimensionMismatch {
                expected: free.len(),
                found: bounds.len(),
            });
        }
        for (i, id) in free.iter().enumerate() {
            id.validate(sys.len())?;
            if free[..i].contains(id) {
                return Err(Error::InvalidProblem(format!(
                    "parameter {} listed twice",
                    id.display(&sys)
                )));
            }
        }
        for b in &bounds {
            Bounds::new(b.lo, b.hi)?;
        }
        if targets.is_empty() {
            return Err(Error::InvalidProblem("no spectra to fit".into()));
        }
        for t in &targets {
            if !sys.has_species(&t.request.observe) {
                return Err(Error::UnknownSpecies(t.request.observe.clone()));
            }
        }
        let start = bounds.iter().map(|b| b.clamp(0.0)).collect();
        Ok(Self {
            sys,
            free,
            fixed,
            bounds,
            start,
            targets,
        })
    }

    pub fn with_start(mut self, start: Vec<f64>) -> Result<Self> {
        if start.len() != self.free.len() {
            return Err(Error::DimensionMismatch {
                expected: self.free.len(),
                found: start.len(),
            });
        }
        if start.iter().zip(&self.bounds).any(|(v, b)| !b.contains(*v)) {
            return Err(Error::InvalidProblem("starting point outside the bounds".into()));
        }
        self.start = start;
        Ok(self)
    }

    /// Same problem with different experimental peaks (same counts).
    pub fn with_targets(&self, targets: Vec<SpectrumTarget>) -> Result<Self> {
        if targets.len() != self.targets.len() {
            return Err(Error::DimensionMismatch {
                expected: self.targets.len(),
                found: targets.len(),
            });
        }
        let mut out = self.clone();
        out.targets = targets;
        Ok(out)
    }

    pub fn sys(&self) -> &SpinSystem {
        &self.sys
    }

    pub fn free(&self) -> &[ParamId] {
        &self.free
    }

    pub fn fixed(&self) -> &HamiltonianParams {
        &self.fixed
    }

    pub fn bounds(&self) -> &[Bounds] {
        &self.bounds
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn targets(&self) -> &[SpectrumTarget] {
        &self.targets
    }

    pub fn dim(&self) -> usize {
        self.free.len()
    }

    /// Total number of experimental lines across all targets.
    pub fn n_lines(&self) -> usize {
        self.targets.iter().map(SpectrumTarget::n).sum()
    }

    /// Clamps into the bounds, reporting whether anything moved.
    pub fn clamp(&self, x: &[f64]) -> (Vec<f64>, bool) {
        let mut moved = false;
        let out = x
            .iter()
            .zip(&self.bounds)
            .map(|(&v, b)| {
                let c = b.clamp(v);
                moved |= c != v;
                c
            })
            .collect();
        (out, moved)
    }

    /// Baseline parameters with the free entries replaced by `x`.
    pub fn params_at(&self, x: &[f64]) -> HamiltonianParams {
        let mut p = self.fixed.clone();
        for (&id, &v) in self.free.iter().zip(x) {
            p.set(id, v);
        }
        p
    }

    /// Current values of the free parameters in `params`.
    pub fn free_values(&self, params: &HamiltonianParams) -> Vec<f64> {
        params.values(&self.free)
    }
}
