//! Peak picking on digitised spectra.

use crate::error::{Error, Result};
use crate::spectral::SampledSpectrum;

/// Experimental peak frequencies (ascending) with their integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakList {
    freqs_hz: Vec<f64>,
    integrals: Vec<f64>,
    noise_sigma_hz: Option<Vec<f64>>,
}

impl PeakList {
    pub fn new(freqs_hz: Vec<f64>, integrals: Vec<f64>) -> Result<Self> {
        if freqs_hz.len() != integrals.len() {
            return Err(Error::DimensionMismatch {
                expected: freqs_hz.len(),
                found: integrals.len(),
            });
        }
        if freqs_hz.iter().chain(&integrals).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("peak list"));
        }
        if freqs_hz.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("peak frequencies must be ascending".into()));
        }
        if integrals.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("peak integrals must be non-negative".into()));
        }
        Ok(Self {
            freqs_hz,
            integrals,
            noise_sigma_hz: None,
        })
    }

    /// Frequencies only; integrals set to zero (unknown).
    pub fn from_freqs(mut freqs_hz: Vec<f64>) -> Result<Self> {
        freqs_hz.sort_by(f64::total_cmp);
        let n = freqs_hz.len();
        Self::new(freqs_hz, vec![0.0; n])
    }

    /// Sorts `(freq, integral)` pairs by frequency.
    pub fn from_unsorted(mut pairs: Vec<(f64, f64)>) -> Result<Self> {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
    }

    pub fn with_noise(mut self, sigma_hz: Vec<f64>) -> Result<Self> {
        if sigma_hz.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: sigma_hz.len(),
            });
        }
        self.noise_sigma_hz = Some(sigma_hz);
        Ok(self)
    }

    pub fn freqs_hz(&self) -> &[f64] {
        &self.freqs_hz
    }

    pub fn integrals(&self) -> &[f64] {
        &self.integrals
    }

    pub fn noise_sigma_hz(&self) -> Option<&[f64]> {
        self.noise_sigma_hz.as_deref()
    }

    pub fn len(&self) -> usize {
        self.freqs_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs_hz.is_empty()
    }

    /// True when at least one integral is positive.
    pub fn has_integrals(&self) -> bool {
        self.integrals.iter().any(|&v| v > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PickOptions {
    /// Minimum peak height as a fraction of the global maximum.
    pub min_prominence: f64,
    /// Half-window (samples) for integration. `None` derives it per peak as
    /// eight half-widths at half maximum.
    pub window_pts: Option<usize>,
}

impl Default for PickOptions {
    fn default() -> Self {
        Self {
            min_prominence: 0.02,
            window_pts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PickedPeaks {
    pub peaks: PeakList,
    /// Fewer than the requested number of peaks were found.
    pub short: bool,
}

/// Apex offset in samples from three neighbouring values, using a parabola
/// through `ln y` when all three are positive.
fn parabolic_offset(l: f64, c: f64, r: f64) -> f64 {
    let (l, c, r) = if l > 0.0 && c > 0.0 && r > 0.0 {
        (l.ln(), c.ln(), r.ln())
    } else {
        (l, c, r)
    };
    let denom = l - 2.0 * c + r;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
}

fn half_width_pts(y: &[f64], i: usize) -> usize {
    let half = 0.5 * y[i];
    let mut left = i;
    while left > 0 && y[left] > half {
        left -= 1;
    }
    let mut right = i;
    while right + 1 < y.len() && y[right] > half {
        right += 1;
    }
    ((right - left) / 2).max(1)
}

/// Finds local maxima above `min_prominence · max`, refines each apex by
/// parabolic interpolation of the log-intensity, integrates each peak by the
/// trapezoidal rule over its window (cut at the valleys to its neighbours),
/// and keeps the `n` largest integrals in ascending frequency order.
pub fn pick_peaks(spec: &SampledSpectrum, n: usize, opts: &PickOptions) -> Result<PickedPeaks> {
    if n == 0 {
        return Err(Error::InvalidArgument("peak count must be at least 1".into()));
    }
    if !(opts.min_prominence > 0.0 && opts.min_prominence < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "min_prominence must lie in (0, 1), got {}",
            opts.min_prominence
        )));
    }
    let x = spec.freq_axis_hz();
    let y = spec.intensity();
    let step = spec.spacing();
    let top = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(top > 0.0) {
        return Ok(PickedPeaks {
            peaks: PeakList::new(vec![], vec![])?,
            short: true,
        });
    }
    let floor = opts.min_prominence * top;
    let maxima: Vec<usize> = (1..y.len() - 1)
        .filter(|&i| y[i] > y[i - 1] && y[i] >= y[i + 1] && y[i] > floor)
        .collect();

    // Valley between each pair of neighbouring maxima.
    let valleys: Vec<usize> = maxima
        .windows(2)
        .map(|w| (w[0]..=w[1]).min_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap_or(w[0]))
        .collect();

    let mut found: Vec<(f64, f64)> = Vec::with_capacity(maxima.len());
    for (m, &i) in maxima.iter().enumerate() {
        let w = opts.window_pts.unwrap_or_else(|| 8 * half_width_pts(y, i)).max(1);
        let mut lo = i.saturating_sub(w);
        let mut hi = (i + w).min(y.len() - 1);
        if m > 0 {
            lo = lo.max(valleys[m - 1]);
        }
        if m + 1 < maxima.len() {
            hi = hi.min(valleys[m]);
        }
        let integral: f64 = (lo..hi).map(|k| 0.5 * (y[k] + y[k + 1]) * (x[k + 1] - x[k])).sum();
        let freq = x[i] + parabolic_offset(y[i - 1], y[i], y[i + 1]) * step;
        found.push((freq, integral.max(0.0)));
    }

    let short = found.len() < n;
    let mut ranked: Vec<usize> = (0..found.len()).collect();
    ranked.sort_by(|&a, &b| {
        found[b]
            .1
            .total_cmp(&found[a].1)
            .then(found[a].0.total_cmp(&found[b].0))
    });
    ranked.truncate(n);
    let peaks = PeakList::from_unsorted(ranked.iter().map(|&k| found[k]).collect())?;
    Ok(PickedPeaks { peaks, short })
}
