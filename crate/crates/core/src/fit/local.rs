//! Bound-constrained local minimisation of `f_w`: a projected
//! Levenberg-Marquardt stage on analytic Jacobians followed by a compass
//! pattern search that handles the kinks of top-n re-selection.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::fit::objective::{evaluate, Evaluation};
use crate::fit::problem::FitProblem;
use crate::fit::weights::WeightVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalConfig {
    pub max_lm_iters: usize,
    pub pattern_initial_step_hz: f64,
    pub pattern_min_step_hz: f64,
    /// Cap on objective evaluations for one call.
    pub max_evals: usize,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self {
            max_lm_iters: 200,
            pattern_initial_step_hz: 10.0,
            pattern_min_step_hz: 1e-3,
            max_evals: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    pub x: Vec<f64>,
    /// `f_w` at `x` (plain `f` when no weights were given).
    pub value: f64,
    pub evaluation: Evaluation,
    pub evals: usize,
    /// Stopped on the evaluation cap rather than a convergence test.
    pub hit_cap: bool,
}

/// Objective wrapper that counts evaluations and applies the weights.
pub(crate) struct Evaluator<'a> {
    prob: &'a FitProblem,
    w: Option<&'a WeightVector>,
    pub evals: usize,
}

impl<'a> Evaluator<'a> {
    pub fn new(prob: &'a FitProblem, w: Option<&'a WeightVector>) -> Self {
        Self { prob, w, evals: 0 }
    }

    fn value(&self, ev: &Evaluation) -> f64 {
        match self.w {
            Some(w) => ev.weighted(w),
            None => ev.unweighted,
        }
    }

    pub fn eval(&mut self, x: &[f64]) -> Result<(f64, Evaluation)> {
        self.evals += 1;
        let (ev, _) = evaluate(self.prob, x, false)?;
        Ok((self.value(&ev), ev))
    }

    fn eval_jac(&mut self, x: &[f64]) -> Result<(f64, Evaluation, DMatrix<f64>)> {
        self.evals += 1;
        let (ev, jac) = evaluate(self.prob, x, true)?;
        Ok((self.value(&ev), ev, jac.expect("jacobian requested")))
    }

    fn sqrt_weights(&self) -> Vec<f64> {
        match self.w {
            Some(w) => w.as_slice().iter().map(|v| v.sqrt()).collect(),
            None => vec![1.0; self.prob.n_lines()],
        }
    }
}

struct Point {
    x: Vec<f64>,
    value: f64,
    ev: Evaluation,
}

/// One Levenberg-Marquardt trial step from `p` with damping `mu`.
fn lm_trial(prob: &FitProblem, p: &Point, jac: &DMatrix<f64>, sw: &[f64], mu: f64) -> Option<Vec<f64>> {
    let r = DVector::from_iterator(sw.len(), p.ev.residuals().iter().zip(sw).map(|(r, s)| r * s));
    let mut j = jac.clone();
    for (row, s) in sw.iter().enumerate() {
        j.row_mut(row).scale_mut(*s);
    }
    // Residual r = F_exp − F_sim, so dr/dx = −J and the step solves
    // (JᵀJ + μ D) δ = Jᵀ r.
    let jt = j.transpose();
    let mut a = &jt * &j;
    let g = &jt * r;
    for k in 0..a.nrows() {
        let d = a[(k, k)];
        a[(k, k)] = d + mu * (d + 1e-6);
    }
    let delta = a.cholesky()?.solve(&g);
    let (x, _) = prob.clamp(&p.x.iter().zip(delta.iter()).map(|(x, d)| x + d).collect::<Vec<_>>());
    Some(x)
}

fn lm_stage(prob: &FitProblem, ev: &mut Evaluator, start: Point, cfg: &LocalConfig) -> Result<(Point, bool)> {
    let sw = ev.sqrt_weights();
    let mut p = start;
    if p.ev.penalized() {
        return Ok((p, false));
    }
    let mut mu = 1e-3;
    let (_, _, mut jac) = ev.eval_jac(&p.x)?;
    for _ in 0..cfg.max_lm_iters {
        if ev.evals >= cfg.max_evals {
            return Ok((p, true));
        }
        if p.value <= 1e-24 {
            break;
        }
        let mut improved = false;
        while mu < 1e10 {
            let Some(x) = lm_trial(prob, &p, &jac, &sw, mu) else {
                mu *= 10.0;
                continue;
            };
            if x == p.x {
                mu = f64::INFINITY;
                break;
            }
            let (value, evn) = ev.eval(&x)?;
            if value < p.value {
                let gain = (p.value - value) / p.value;
                p = Point { x, value, ev: evn };
                mu = (mu / 3.0).max(1e-12);
                improved = true;
                if gain < 1e-12 {
                    return Ok((p, false));
                }
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
        let (_, _, j) = ev.eval_jac(&p.x)?;
        jac = j;
    }
    Ok((p, false))
}

fn pattern_stage(prob: &FitProblem, ev: &mut Evaluator, start: Point, cfg: &LocalConfig) -> Result<(Point, bool)> {
    let mut p = start;
    let mut step = cfg.pattern_initial_step_hz;
    while step >= cfg.pattern_min_step_hz {
        let mut moved = false;
        for c in 0..prob.dim() {
            for dir in [1.0, -1.0] {
                if ev.evals >= cfg.max_evals {
                    return Ok((p, true));
                }
                let mut x = p.x.clone();
                x[c] = prob.bounds()[c].clamp(x[c] + dir * step);
                if x[c] == p.x[c] {
                    continue;
                }
                let (value, evn) = ev.eval(&x)?;
                if value < p.value {
                    p = Point { x, value, ev: evn };
                    moved = true;
                    break;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
        if p.value <= 1e-24 {
            break;
        }
    }
    Ok((p, false))
}

/// Local minimiser of `f_w` (plain `f` when `w` is `None`) from `x0`, which
/// is clamped into the bounds. Never returns a point worse than `x0`.
pub fn local_solve(prob: &FitProblem, x0: &[f64], w: Option<&WeightVector>, cfg: &LocalConfig) -> Result<LocalOutcome> {
    let mut ev = Evaluator::new(prob, w);
    let (x0, _) = prob.clamp(x0);
    let (value, e) = ev.eval(&x0)?;
    let start = Point { x: x0, value, ev: e };
    let (p, cap) = lm_stage(prob, &mut ev, start, cfg)?;
    let (p, cap2) = if cap {
        (p, true)
    } else {
        pattern_stage(prob, &mut ev, p, cfg)?
    };
    // A pattern move can open a smooth valley again.
    let (p, cap3) = if cap2 {
        (p, true)
    } else {
        lm_stage(prob, &mut ev, p, cfg)?
    };
    Ok(LocalOutcome {
        x: p.x,
        value: p.value,
        evaluation: p.ev,
        evals: ev.evals,
        hit_cap: cap3,
    })
}

/// A single accepted descent move from `x`: one damped Gauss-Newton step if it
/// lowers the objective, otherwise the first improving compass move at
/// `step_hz`. Returns `None` when neither improves.
pub fn descent_step(
    prob: &FitProblem,
    x: &[f64],
    w: Option<&WeightVector>,
    step_hz: f64,
) -> Result<Option<(Vec<f64>, f64)>> {
    let mut ev = Evaluator::new(prob, w);
    let (x, _) = prob.clamp(x);
    let (value, e, jac) = ev.eval_jac(&x)?;
    let p = Point { x, value, ev: e };
    if !p.ev.penalized() {
        let sw = ev.sqrt_weights();
        let mut mu = 1e-3;
        for _ in 0..8 {
            if let Some(xn) = lm_trial(prob, &p, &jac, &sw, mu) {
                let (v, _) = ev.eval(&xn)?;
                if v < p.value {
                    return Ok(Some((xn, v)));
                }
            }
            mu *= 10.0;
        }
    }
    for c in 0..prob.dim() {
        for dir in [1.0, -1.0] {
            let mut xn = p.x.clone();
            xn[c] = prob.bounds()[c].clamp(xn[c] + dir * step_hz);
            let (v, _) = ev.eval(&xn)?;
            if v < p.value {
                return Ok(Some((xn, v)));
            }
        }
    }
    Ok(None)
}
