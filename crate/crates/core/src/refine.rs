//! Line-shape refinement after the frequency fit, and Monte-Carlo error bars.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::local::{local_solve, LocalConfig};
use crate::fit::objective::objective;
use crate::fit::problem::{FitProblem, SpectrumTarget};
use crate::fit::weights::stream_rng;
use crate::peaks::PeakList;
use crate::simulate::{simulate, SpectrumRequest};
use crate::spectral::{synth_lineshape, LineWidths, SampledSpectrum};
use crate::spin_model::{canonical_params, HamiltonianParams, ParamId, SpinSystem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    /// Shifts and dipolar couplings stay within `± frac · max(|v|, 10 Hz)`
    /// of their starting values.
    pub param_window_frac: f64,
    pub max_iters: usize,
    /// Consecutive iterations whose trial step raised the rss before aborting.
    pub divergence_iters: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            param_window_frac: 0.01,
            max_iters: 100,
            divergence_iters: 20,
        }
    }
}

/// One measured spectrum for refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineTarget {
    pub request: SpectrumRequest,
    pub spectrum: SampledSpectrum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    pub params: HamiltonianParams,
    pub widths: LineWidths,
    /// `|Δv| / max(|v|, 10 Hz)` for every parameter in canonical order.
    pub rel_param_change: Vec<(ParamId, f64)>,
    pub rss: f64,
    /// Fitted `(amplitude, baseline)` per target.
    pub scales: Vec<(f64, f64)>,
    pub iterations: usize,
    /// Stopped because the rss kept rising.
    pub aborted: bool,
}

type Residuals = (DVector<f64>, Vec<(f64, f64)>);

/// Floor used when turning a window fraction or a change into Hz.
const WINDOW_FLOOR_HZ: f64 = 10.0;

/// Layout of the refinement vector: T2* values, then scalar couplings, then
/// windowed shifts and dipolar couplings.
struct Layout {
    n_spins: usize,
    scalar: Vec<ParamId>,
    windowed: Vec<ParamId>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Layout {
    fn new(sys: &SpinSystem, params: &HamiltonianParams, frac: f64) -> Self {
        let n = sys.len();
        let mut scalar = Vec::new();
        let mut windowed: Vec<ParamId> = (0..n).map(ParamId::Shift).collect();
        for j in 0..n {
            for k in j + 1..n {
                scalar.push(ParamId::scalar(j, k));
                windowed.push(ParamId::dipolar(j, k));
            }
        }
        let mut lo = vec![1e-6; n];
        let mut hi = vec![f64::INFINITY; n];
        lo.extend(std::iter::repeat_n(f64::NEG_INFINITY, scalar.len()));
        hi.extend(std::iter::repeat_n(f64::INFINITY, scalar.len()));
        for &id in &windowed {
            let v = params.get(id);
            let half = frac * v.abs().max(WINDOW_FLOOR_HZ);
            lo.push(v - half);
            hi.push(v + half);
        }
        Self {
            n_spins: n,
            scalar,
            windowed,
            lo,
            hi,
        }
    }

    fn pack(&self, params: &HamiltonianParams, widths: &LineWidths) -> Vec<f64> {
        let mut v = widths.t2star_s().to_vec();
        v.extend(self.scalar.iter().map(|&id| params.get(id)));
        v.extend(self.windowed.iter().map(|&id| params.get(id)));
        v
    }

    fn unpack(&self, v: &[f64], base: &HamiltonianParams) -> Result<(HamiltonianParams, LineWidths)> {
        let n = self.n_spins;
        let widths = LineWidths::new(v[..n].to_vec())?;
        let mut p = base.clone();
        for (&id, &x) in self.scalar.iter().chain(&self.windowed).zip(&v[n..]) {
            p.set(id, x);
        }
        Ok((p, widths))
    }

    fn clamp(&self, v: &mut [f64]) {
        for ((x, lo), hi) in v.iter_mut().zip(&self.lo).zip(&self.hi) {
            *x = x.clamp(*lo, *hi);
        }
    }
}

/// Simulated intensity of one target on its own axis.
pub fn model_spectrum(
    sys: &SpinSystem,
    params: &HamiltonianParams,
    widths: &LineWidths,
    target: &RefineTarget,
) -> Result<SampledSpectrum> {
    let sim = simulate(sys, params, &target.request)?;
    let sub = LineWidths::new(sim.kept.iter().map(|&j| widths.t2star_s()[j]).collect())?;
    synth_lineshape(&sim.transitions, &sub, target.spectrum.freq_axis_hz())
}

/// Least-squares amplitude and baseline of `y ≈ a·m + b`.
fn scale_fit(m: &[f64], y: &[f64]) -> (f64, f64) {
    let n = m.len() as f64;
    let (sm, sy) = (m.iter().sum::<f64>(), y.iter().sum::<f64>());
    let smm: f64 = m.iter().map(|v| v * v).sum();
    let smy: f64 = m.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = n * smm - sm * sm;
    if det.abs() <= 1e-300 {
        return (0.0, sy / n);
    }
    let a = (n * smy - sm * sy) / det;
    (a, (sy - a * sm) / n)
}

struct Model<'a> {
    sys: &'a SpinSystem,
    base: &'a HamiltonianParams,
    targets: &'a [RefineTarget],
    layout: Layout,
}

impl Model<'_> {
    /// Stacked residuals and the fitted `(amplitude, baseline)` per target.
    fn residuals(&self, v: &[f64]) -> Result<Residuals> {
        let (p, w) = self.layout.unpack(v, self.base)?;
        let mut r = Vec::new();
        let mut scales = Vec::with_capacity(self.targets.len());
        for t in self.targets {
            let m = model_spectrum(self.sys, &p, &w, t)?;
            let y = t.spectrum.intensity();
            let (a, b) = scale_fit(m.intensity(), y);
            r.extend(y.iter().zip(m.intensity()).map(|(y, m)| y - a * m - b));
            scales.push((a, b));
        }
        Ok((DVector::from_vec(r), scales))
    }

    /// Forward-difference Jacobian of the model (negated residual).
    fn jacobian(&self, v: &[f64], r0: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(r0.len(), v.len());
        for c in 0..v.len() {
            let h = 1e-6 * v[c].abs().max(if c < self.layout.n_spins { 1e-3 } else { 1.0 });
            let mut vp = v.to_vec();
            vp[c] += h;
            let (rp, _) = self.residuals(&vp)?;
            jac.set_column(c, &((r0 - rp) / h));
        }
        Ok(jac)
    }
}

/// Levenberg-Marquardt over T2*, scalar couplings and windowed shifts and
/// dipolar couplings, with per-spectrum amplitude and baseline solved in
/// closed form at every evaluation.
pub fn lineshape_refine(
    sys: &SpinSystem,
    params: &HamiltonianParams,
    widths: &LineWidths,
    targets: &[RefineTarget],
    cfg: &RefineConfig,
) -> Result<RefineResult> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no spectra to refine against".into()));
    }
    if widths.len() != sys.len() {
        return Err(Error::DimensionMismatch {
            expected: sys.len(),
            found: widths.len(),
        });
    }
    if !(cfg.param_window_frac >= 0.0) {
        return Err(Error::InvalidArgument("param_window_frac must be non-negative".into()));
    }
    params.validate(sys.len())?;
    let layout = Layout::new(sys, params, cfg.param_window_frac);
    let model = Model {
        sys,
        base: params,
        targets,
        layout,
    };
    let mut v = model.layout.pack(params, widths);
    model.layout.clamp(&mut v);
    let (mut r, mut scales) = model.residuals(&v)?;
    let mut rss = r.norm_squared();
    let mut mu = 1e-3;
    let mut rises = 0;
    let mut iterations = 0;
    let mut aborted = false;

    while iterations < cfg.max_iters && rss > 0.0 {
        iterations += 1;
        let jac = model.jacobian(&v, &r)?;
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * &r;
        let mut accepted = false;
        let mut converged = false;
        while mu < 1e12 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += mu * (jtj[(k, k)] + 1e-12);
            }
            let Some(ch) = a.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let delta = ch.solve(&g);
            let mut vn: Vec<f64> = v.iter().zip(delta.iter()).map(|(x, d)| x + d).collect();
            model.layout.clamp(&mut vn);
            if vn == v {
                converged = true;
                break;
            }
            let (rn, sn) = model.residuals(&vn)?;
            let rss_n = rn.norm_squared();
            if rss_n < rss {
                converged = (rss - rss_n) <= 1e-12 * rss;
                v = vn;
                r = rn;
                scales = sn;
                rss = rss_n;
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                rises = 0;
                break;
            }
            rises += 1;
            if rises >= cfg.divergence_iters {
                aborted = true;
                break;
            }
            mu *= 4.0;
        }
        if aborted || converged || !accepted {
            break;
        }
    }

    let (p, w) = model.layout.unpack(&v, params)?;
    let rel_param_change = canonical_params(sys.len())
        .into_iter()
        .map(|id| {
            let old = params.get(id);
            (id, (p.get(id) - old).abs() / old.abs().max(WINDOW_FLOOR_HZ))
        })
        .collect();
    Ok(RefineResult {
        params: p,
        widths: w,
        rel_param_change,
        rss,
        scales,
        iterations,
        aborted,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorEstimate {
    pub params: Vec<ParamId>,
    /// Sample standard deviation per parameter (Hz).
    pub std_hz: Vec<f64>,
    pub mean: Vec<f64>,
    /// Trials that converged and entered the statistics.
    pub trials: usize,
    pub failed: usize,
    pub noise_sigma_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorConfig {
    pub noise_sigma_hz: f64,
    pub trials: usize,
    pub seed: u64,
    pub workers: usize,
    pub local: LocalConfig,
}

impl Default for ErrorConfig {
    fn default() -> Self {
        Self {
            noise_sigma_hz: 0.25,
            trials: 100,
            seed: 0,
            workers: 1,
            local: LocalConfig::default(),
        }
    }
}

fn noisy_targets(prob: &FitProblem, sigma: f64, seed: u64, trial: usize) -> Result<Vec<SpectrumTarget>> {
    let mut rng = stream_rng(seed, trial as u64);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    prob.targets()
        .iter()
        .map(|t| {
            let pairs = t
                .peaks
                .freqs_hz()
                .iter()
                .zip(t.peaks.integrals())
                .map(|(&f, &i)| (f + normal.sample(&mut rng), i))
                .collect();
            SpectrumTarget::new(PeakList::from_unsorted(pairs)?, t.request.clone())
        })
        .collect()
}

/// Refit from `x_star` after perturbing every experimental frequency with
/// Gaussian noise; `None` when the trial did not converge. `base_rms` is the
/// residual of `x_star` on the unperturbed peaks.
fn error_trial(
    prob: &FitProblem,
    x_star: &[f64],
    base_rms: f64,
    cfg: &ErrorConfig,
    trial: usize,
) -> Result<Option<Vec<f64>>> {
    let noisy = prob.with_targets(noisy_targets(prob, cfg.noise_sigma_hz, cfg.seed, trial)?)?;
    let out = local_solve(&noisy, x_star, None, &cfg.local)?;
    let ok = !out.hit_cap
        && !out.evaluation.penalized()
        && out.evaluation.rms_hz() <= base_rms + 3.0 * cfg.noise_sigma_hz + 1e-6
        && out.x.iter().all(|v| v.is_finite());
    Ok(ok.then_some(out.x))
}

/// Monte-Carlo spread of the fitted parameters under frequency noise.
/// Trial `t` draws its noise from stream `t` of `seed`.
pub fn estimate_errors(prob: &FitProblem, x_star: &[f64], cfg: &ErrorConfig) -> Result<ErrorEstimate> {
    if cfg.trials < 2 {
        return Err(Error::InvalidArgument("at least two trials are needed".into()));
    }
    if !(cfg.noise_sigma_hz >= 0.0) || !cfg.noise_sigma_hz.is_finite() {
        return Err(Error::InvalidArgument(
            "noise sigma must be finite and non-negative".into(),
        ));
    }
    if x_star.len() != prob.dim() {
        return Err(Error::DimensionMismatch {
            expected: prob.dim(),
            found: x_star.len(),
        });
    }
    let base = objective(x_star, prob, None)?;
    if base.penalized() {
        return Err(Error::InvalidArgument(
            "the fitted point does not reproduce the peak count".into(),
        ));
    }
    let base_rms = base.rms_hz();
    let run = |t: usize| error_trial(prob, x_star, base_rms, cfg, t);
    let results: Vec<Result<Option<Vec<f64>>>> = if cfg.workers <= 1 {
        (0..cfg.trials).map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
        pool.install(|| (0..cfg.trials).into_par_iter().map(run).collect())
    };
    let mut samples = Vec::new();
    for r in results {
        if let Some(x) = r? {
            samples.push(x);
        }
    }
    let failed = cfg.trials - samples.len();
    if 2 * failed > cfg.trials || samples.len() < 2 {
        return Err(Error::TooManyFailures {
            failed,
            trials: cfg.trials,
        });
    }
    let k = samples.len() as f64;
    let mean: Vec<f64> = (0..prob.dim())
        .map(|c| samples.iter().map(|s| s[c]).sum::<f64>() / k)
        .collect();
    let std_hz = (0..prob.dim())
        .map(|c| (samples.iter().map(|s| (s[c] - mean[c]).powi(2)).sum::<f64>() / (k - 1.0)).sqrt())
        .collect();
    Ok(ErrorEstimate {
        params: prob.free().to_vec(),
        std_hz,
        mean,
        trials: samples.len(),
        failed,
        noise_sigma_hz: cfg.noise_sigma_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::problem::Bounds;
    use crate::spectral::uniform_axis;
    use crate::spin_model::Spin;

    fn pair() -> (SpinSystem, HamiltonianParams) {
        let sys = SpinSystem::new(vec![Spin::new("A", "1H"), Spin::new("B", "19F")]).unwrap();
        let mut p = HamiltonianParams::zeros(2);
        p.shifts_hz[0] = 40.0;
        p.shifts_hz[1] = -30.0;
        p.set(ParamId::dipolar(0, 1), 25.0);
        p.set(ParamId::scalar(0, 1), 3.0);
        (sys, p)
    }

    #[test]
    fn scale_fit_is_exact_for_affine_data() {
        let m = [0.0, 1.0, 2.0, 5.0];
        let y: Vec<f64> = m.iter().map(|v| 3.0 * v - 1.5).collect();
        let (a, b) = scale_fit(&m, &y);
        assert!((a - 3.0).abs() < 1e-12 && (b + 1.5).abs() < 1e-12);
    }

    #[test]
    fn recovers_widths_of_a_doublet() {
        let (sys, p) = pair();
        let truth = LineWidths::new(vec![0.05, 0.02]).unwrap();
        let axis = uniform_axis(-150.0, 150.0, 1201).unwrap();
        let targets: Vec<RefineTarget> = ["1H", "19F"]
            .iter()
            .map(|sp| {
                let request = SpectrumRequest::thermal(sp, false);
                let t = RefineTarget {
                    request,
                    spectrum: SampledSpectrum::new(axis.clone(), vec![0.0; axis.len()]).unwrap(),
                };
                let s = model_spectrum(&sys, &p, &truth, &t).unwrap();
                let y = s.intensity().iter().map(|v| 2.0 * v + 0.1).collect();
                RefineTarget {
                    spectrum: SampledSpectrum::new(axis.clone(), y).unwrap(),
                    ..t
                }
            })
            .collect();
        let start = LineWidths::new(vec![0.1, 0.04]).unwrap();
        let out = lineshape_refine(&sys, &p, &start, &targets, &RefineConfig::default()).unwrap();
        for (got, want) in out.widths.t2star_s().iter().zip(truth.t2star_s()) {
            assert!((got / want - 1.0).abs() < 1e-4, "{got} vs {want}");
        }
        assert!(out.rel_param_change.iter().all(|(_, c)| *c <= 0.01 + 1e-12));
        assert!((out.scales[0].0 - 2.0).abs() < 1e-3);
    }

    #[test]
    fn zero_noise_gives_zero_spread() {
        let sys = SpinSystem::new(vec![Spin::new("A", "1H")]).unwrap();
        let prob = FitProblem::new(
            sys,
            HamiltonianParams::zeros(1),
            vec![ParamId::Shift(0)],
            vec![Bounds::symmetric(2500.0)],
            vec![SpectrumTarget::new(
                PeakList::from_freqs(vec![100.0]).unwrap(),
                SpectrumRequest::thermal("1H", true),
            )
            .unwrap()],
        )
        .unwrap();
        let cfg = ErrorConfig {
            noise_sigma_hz: 0.0,
            trials: 5,
            ..Default::default()
        };
        let e = estimate_errors(&prob, &[100.0], &cfg).unwrap();
        assert_eq!(e.std_hz, vec![0.0]);
        let cfg = ErrorConfig {
            noise_sigma_hz: 1.0,
            trials: 400,
            ..Default::default()
        };
        let e = estimate_errors(&prob, &[100.0], &cfg).unwrap();
        assert!((e.std_hz[0] - 1.0).abs() < 0.1, "{:?}", e.std_hz);
    }
}
