use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Generator used for every random draw in fitting. Restart `r` of a run
/// seeded with `s` uses stream `r` of the generator seeded with `s`.
pub type FitRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> FitRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Non-negative per-line weights of the perturbed objective.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        if !w.iter().any(|&v| v > 0.0) {
            return Err(Error::InvalidArgument("weights must not all be zero".into()));
        }
        Ok(Self(w))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * c).collect())
    }
}

/// Independent 0/1 entries, zero with probability `p_zero`. An all-zero draw
/// is discarded and redrawn.
pub fn sample_weights<R: Rng + ?Sized>(n: usize, p_zero: f64, rng: &mut R) -> Result<WeightVector> {
    if !(0.0..1.0).contains(&p_zero) {
        return Err(Error::InvalidArgument(format!(
            "p_zero must lie in [0, 1), got {p_zero}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("weight vector length must be positive".into()));
    }
    loop {
        let w: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p_zero { 0.0 } else { 1.0 })
            .collect();
        if w.iter().any(|&v| v > 0.0) {
            return Ok(WeightVector(w));
        }
    }
}
