//! The random-weight perturbation loop around [`local_solve`].

use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::local::{descent_step, local_solve, LocalConfig};
use crate::fit::objective::{objective, Evaluation};
use crate::fit::problem::FitProblem;
use crate::fit::weights::{sample_weights, stream_rng, FitRng};
use crate::spin_model::{HamiltonianParams, ParamId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `M` rounds of {solve `f_w`, solve `f`}.
    Loop,
    /// Single accepted descent steps, alternating between `f` and a fresh `f_w`.
    RandomWalk,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loop" => Ok(Mode::Loop),
            "random_walk" | "random-walk" => Ok(Mode::RandomWalk),
            _ => Err(Error::InvalidArgument(format!("unknown mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Loop => "loop",
            Mode::RandomWalk => "random_walk",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NafonsConfig {
    /// Perturbation rounds `M` per restart.
    pub loops: usize,
    pub p_zero: f64,
    pub seed: u64,
    /// Target RMS residual per line (Hz).
    pub tol_hz: f64,
    /// Applies to the whole run; restarts not yet started are skipped.
    pub max_wall_time: Option<Duration>,
    pub restarts: usize,
    pub mode: Mode,
    /// Restart `r > 0` starts from the problem's start point plus a uniform
    /// offset in `±jitter_frac · (bound width) / 2` per parameter.
    pub jitter_frac: f64,
    /// Random weight vectors in the convergence certificate.
    pub certificate_draws: usize,
    /// Worker threads for restarts; 1 runs them serially.
    pub workers: usize,
    /// Skip remaining restarts once one has converged (serial runs only).
    pub stop_when_converged: bool,
    /// Images of a new best point under relabelling of same-species spins
    /// (and a sign flip of the homonuclear dipolar couplings) that are
    /// locally refined; 0 disables the move.
    pub symmetry_trials: usize,
    pub local: LocalConfig,
}

impl Default for NafonsConfig {
    fn default() -> Self {
        Self {
            loops: 50,
            p_zero: 0.5,
            seed: 0,
            tol_hz: 0.05,
            max_wall_time: None,
            restarts: 1,
            mode: Mode::Loop,
            jitter_frac: 1.0,
            certificate_draws: 10,
            workers: 1,
            stop_when_converged: false,
            symmetry_trials: 64,
            local: LocalConfig::default(),
        }
    }
}

impl NafonsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.p_zero) {
            return Err(Error::InvalidArgument(format!(
                "p_zero must lie in [0, 1), got {}",
                self.p_zero
            )));
        }
        if !(self.tol_hz > 0.0) {
            return Err(Error::InvalidArgument("tol_hz must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.jitter_frac) {
            return Err(Error::InvalidArgument("jitter_frac must lie in [0, 1]".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// What one restart produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartOutcome {
    pub restart: usize,
    pub x: Vec<f64>,
    /// Unweighted `f` at `x` (Hz²).
    pub residual: f64,
    pub rms_hz: f64,
    pub converged: bool,
    pub loops_used: usize,
    pub evals: usize,
    pub elapsed: Duration,
    /// Stopped by the wall-time cap.
    pub timed_out: bool,
    /// Mismatch between normalised experimental and simulated integrals;
    /// `None` when the peaks carry no integrals.
    pub integral_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub x_star: Vec<f64>,
    pub params: HamiltonianParams,
    pub residual_unweighted: f64,
    pub rms_hz: f64,
    pub evaluation: Evaluation,
    /// Per target, the eigenstate pair `(p, q)` matched to each experimental
    /// line in order. Sorted matching makes the map exp `j` → sim `j`.
    pub assignment: Vec<Vec<(usize, usize)>>,
    pub loops_used: usize,
    pub seed: u64,
    pub converged: bool,
    pub best_restart: usize,
    pub restarts: Vec<RestartOutcome>,
    pub elapsed: Duration,
}

fn integral_score(prob: &FitProblem, ev: &Evaluation) -> Option<f64> {
    let mut score = 0.0;
    let mut any = false;
    for (t, fit) in prob.targets().iter().zip(&ev.targets) {
        if !t.peaks.has_integrals() || fit.deficit > 0 {
            continue;
        }
        any = true;
        let se: f64 = t.peaks.integrals().iter().sum();
        let ss: f64 = fit.sim_integrals.iter().sum();
        if ss <= 0.0 {
            continue;
        }
        score += t
            .peaks
            .integrals()
            .iter()
            .zip(&fit.sim_integrals)
            .map(|(e, s)| (e / se - s / ss).powi(2))
            .sum::<f64>();
    }
    any.then_some(score)
}

/// The `K` random-weight certificate: `f_w(x) < n · tol²` for every draw.
fn certificate(prob: &FitProblem, ev: &Evaluation, cfg: &NafonsConfig, rng: &mut FitRng) -> Result<bool> {
    let bound = prob.n_lines() as f64 * cfg.tol_hz * cfg.tol_hz;
    for _ in 0..cfg.certificate_draws {
        let w = sample_weights(prob.n_lines(), cfg.p_zero, rng)?;
        if !(ev.weighted(&w) < bound) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn start_point(prob: &FitProblem, r: usize, cfg: &NafonsConfig, rng: &mut FitRng) -> Vec<f64> {
    let x0 = prob.start();
    if r == 0 || cfg.jitter_frac == 0.0 {
        return x0.to_vec();
    }
    x0.iter()
        .zip(prob.bounds())
        .map(|(&v, b)| {
            let half = 0.5 * cfg.jitter_frac * b.width();
            b.clamp(v + rng.random_range(-half..=half))
        })
        .collect()
}

/// Upper limit on enumerated relabellings; larger groups are sampled.
const MAX_IMAGES: usize = 1440;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for m in 0..n {
        let mut next = Vec::with_capacity(out.len() * (m + 1));
        for p in &out {
            for pos in 0..=m {
                let mut q: Vec<usize> = p.clone();
                q.insert(pos, m);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// Spin relabellings that only exchange spins of the same species and
/// touch at least one free parameter. Identity excluded.
fn relabellings(prob: &FitProblem, rng: &mut FitRng) -> Vec<Vec<usize>> {
    let sys = prob.sys();
    let touched = |j: usize| {
        prob.free().iter().any(|id| match *id {
            ParamId::Shift(a) => a == j,
            ParamId::Dipolar(a, b) | ParamId::Scalar(a, b) => a == j || b == j,
        })
    };
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for sp in sys.species_list() {
        let sites: Vec<usize> = (0..sys.len()).filter(|&j| sys.species(j) == sp && touched(j)).collect();
        if sites.len() >= 2 {
            groups.push(sites);
        }
    }
    let total = groups
        .iter()
        .map(|g| (1..=g.len()).product::<usize>())
        .try_fold(1usize, |acc, f| acc.checked_mul(f));
    let identity: Vec<usize> = (0..sys.len()).collect();
    let mut out = Vec::new();
    match total {
        Some(t) if t <= MAX_IMAGES => {
            let mut all = vec![identity.clone()];
            for g in &groups {
                let mut next = Vec::new();
                for base in &all {
                    for p in permutations(g.len()) {
                        let mut q = base.clone();
                        for (a, &b) in p.iter().enumerate() {
                            q[g[a]] = g[b];
                        }
                        next.push(q);
                    }
                }
                all = next;
            }
            out.extend(all.into_iter().filter(|q| *q != identity));
        }
        _ => {
            for _ in 0..MAX_IMAGES {
                let mut q = identity.clone();
                for g in &groups {
                    let mut idx = g.clone();
                    for i in (1..idx.len()).rev() {
                        idx.swap(i, rng.random_range(0..=i));
                    }
                    for (a, &b) in idx.iter().enumerate() {
                        q[g[a]] = b;
                    }
                }
                if q != identity {
                    out.push(q);
                }
            }
        }
    }
    out
}

/// `x` mapped through a relabelling `perm` (spin `j` becomes `perm[j]`),
/// optionally with every free homonuclear dipolar coupling negated.
fn image(prob: &FitProblem, x: &[f64], perm: &[usize], flip: bool) -> Vec<f64> {
    let p = prob.params_at(x);
    let n = prob.sys().len();
    let mut q = p.clone();
    for j in 0..n {
        q.shifts_hz[perm[j]] = p.shifts_hz[j];
        for k in 0..n {
            q.dipolar_hz[(perm[j], perm[k])] = p.dipolar_hz[(j, k)];
            q.scalar_hz[(perm[j], perm[k])] = p.scalar_hz[(j, k)];
        }
    }
    let mut v = q.values(prob.free());
    if flip {
        for (val, id) in v.iter_mut().zip(prob.free()) {
            if let ParamId::Dipolar(j, k) = *id {
                if prob.sys().is_homonuclear(j, k) {
                    *val = -*val;
                }
            }
        }
    }
    prob.clamp(&v).0
}

/// Screens all symmetry images of `x` by their objective value and locally
/// refines the most promising `cfg.symmetry_trials`. Returns the best
/// refined point when it beats `current`.
fn symmetry_move(
    prob: &FitProblem,
    x: &[f64],
    current: f64,
    cfg: &NafonsConfig,
    rng: &mut FitRng,
    evals: &mut usize,
) -> Result<Option<(Vec<f64>, Evaluation)>> {
    let mut candidates: Vec<(f64, Vec<f64>)> = Vec::new();
    let identity: Vec<usize> = (0..prob.sys().len()).collect();
    let mut perms = relabellings(prob, rng);
    perms.push(identity);
    for perm in &perms {
        for flip in [false, true] {
            let xi = image(prob, x, perm, flip);
            if xi.as_slice() == x {
                continue;
            }
            let f = objective(&xi, prob, None)?.unweighted;
            *evals += 1;
            candidates.push((f, xi));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<(Vec<f64>, Evaluation)> = None;
    for (_, xi) in candidates.into_iter().take(cfg.symmetry_trials) {
        let out = local_solve(prob, &xi, None, &cfg.local)?;
        *evals += out.evals;
        let bar = best.as_ref().map_or(current, |b| b.1.unweighted);
        if out.evaluation.unweighted < bar {
            best = Some((out.x, out.evaluation));
        }
    }
    Ok(best)
}

struct Best {
    x: Vec<f64>,
    ev: Evaluation,
}

impl Best {
    fn offer(&mut self, x: &[f64], ev: Evaluation) -> bool {
        if ev.unweighted < self.ev.unweighted {
            self.x = x.to_vec();
            self.ev = ev;
            return true;
        }
        false
    }
}

fn run_restart(prob: &FitProblem, r: usize, cfg: &NafonsConfig, deadline: Option<Instant>) -> Result<RestartOutcome> {
    let t0 = Instant::now();
    // Stream consumption order: jitter draws, then per round one weight
    // vector followed by certificate draws whenever the RMS test passes.
    // Sampled relabellings (only for large groups) draw after the solve
    // that triggered them.
    let mut rng = stream_rng(cfg.seed, r as u64);
    let x0 = start_point(prob, r, cfg, &mut rng);
    let tol_rms = |ev: &Evaluation| ev.rms_hz() < cfg.tol_hz;
    let past_deadline = || deadline.is_some_and(|d| Instant::now() >= d);
    let mut evals = 0;
    let mut timed_out = false;
    let mut converged = false;
    let mut loops_used = 0;

    let first = match cfg.mode {
        Mode::Loop => {
            let out = local_solve(prob, &x0, None, &cfg.local)?;
            evals += out.evals;
            Best {
                x: out.x,
                ev: out.evaluation,
            }
        }
        Mode::RandomWalk => {
            let ev = objective(&x0, prob, None)?;
            evals += 1;
            Best { x: x0.clone(), ev }
        }
    };
    let mut best = first;
    let sym = |best: &mut Best, rng: &mut FitRng, evals: &mut usize| -> Result<()> {
        if cfg.mode == Mode::Loop && cfg.symmetry_trials > 0 && !tol_rms(&best.ev) {
            if let Some((xs, ev)) = symmetry_move(prob, &best.x, best.ev.unweighted, cfg, rng, evals)? {
                best.offer(&xs, ev);
            }
        }
        Ok(())
    };
    sym(&mut best, &mut rng, &mut evals)?;
    let mut x = best.x.clone();
    let mut step_hz = cfg.local.pattern_initial_step_hz;

    if tol_rms(&best.ev) && certificate(prob, &best.ev, cfg, &mut rng)? {
        converged = true;
    }
    while !converged && loops_used < cfg.loops {
        if past_deadline() {
            timed_out = true;
            break;
        }
        loops_used += 1;
        let w = sample_weights(prob.n_lines(), cfg.p_zero, &mut rng)?;
        match cfg.mode {
            Mode::Loop => {
                let a = local_solve(prob, &x, Some(&w), &cfg.local)?;
                let b = local_solve(prob, &a.x, None, &cfg.local)?;
                evals += a.evals + b.evals;
                x = b.x;
                if best.offer(&x, b.evaluation) {
                    sym(&mut best, &mut rng, &mut evals)?;
                    x = best.x.clone();
                }
            }
            Mode::RandomWalk => {
                let mut moved = false;
                if let Some((xn, _)) = descent_step(prob, &x, None, step_hz)? {
                    x = xn;
                    moved = true;
                }
                if let Some((xn, _)) = descent_step(prob, &x, Some(&w), step_hz)? {
                    x = xn;
                    moved = true;
                }
                evals += 2;
                if !moved {
                    step_hz = (step_hz * 0.5).max(cfg.local.pattern_min_step_hz);
                }
                let ev = objective(&x, prob, None)?;
                best.offer(&x, ev);
            }
        }
        if tol_rms(&best.ev) && certificate(prob, &best.ev, cfg, &mut rng)? {
            converged = true;
        }
    }

    Ok(RestartOutcome {
        restart: r,
        residual: best.ev.unweighted,
        rms_hz: best.ev.rms_hz(),
        integral_score: integral_score(prob, &best.ev),
        x: best.x,
        converged,
        loops_used,
        evals,
        elapsed: t0.elapsed(),
        timed_out,
    })
}

/// Scores closer than this count as tied.
const SCORE_TIE: f64 = 1e-9;

/// Picks the winning restart. Converged restarts beat the rest; among them
/// the best integral agreement wins (frequencies alone leave discrete
/// ambiguities), otherwise the lowest residual. Ties go to the lower index.
fn select(outcomes: &[RestartOutcome]) -> usize {
    let mut best = 0;
    for (i, o) in outcomes.iter().enumerate().skip(1) {
        let b = &outcomes[best];
        let better = match (o.converged, b.converged) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => match (o.integral_score, b.integral_score) {
                (Some(a), Some(c)) => a < c - SCORE_TIE,
                _ => false,
            },
            (false, false) => o.residual < b.residual,
        };
        if better {
            best = i;
        }
    }
    best
}

/// Runs NAFONS with `cfg.restarts` independent restarts.
pub fn nafons_fit(prob: &FitProblem, cfg: &NafonsConfig) -> Result<FitResult> {
    cfg.validate()?;
    let t0 = Instant::now();
    let deadline = cfg.max_wall_time.map(|d| t0 + d);
    let mut outcomes: Vec<RestartOutcome> = Vec::with_capacity(cfg.restarts);
    if cfg.workers <= 1 {
        for r in 0..cfg.restarts {
            if r > 0 && deadline.is_some_and(|d| Instant::now() >= d) {
                break;
            }
            let o = run_restart(prob, r, cfg, deadline)?;
            let done = o.converged && cfg.stop_when_converged;
            outcomes.push(o);
            if done {
                break;
            }
        }
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
        let results: Vec<Option<Result<RestartOutcome>>> = pool.install(|| {
            (0..cfg.restarts)
                .into_par_iter()
                .map(|r| {
                    if r > 0 && deadline.is_some_and(|d| Instant::now() >= d) {
                        None
                    } else {
                        Some(run_restart(prob, r, cfg, deadline))
                    }
                })
                .collect()
        });
        for o in results.into_iter().flatten() {
            outcomes.push(o?);
        }
    }

    let best = select(&outcomes);
    let win = &outcomes[best];
    let evaluation = objective(&win.x, prob, None)?;
    Ok(FitResult {
        params: prob.params_at(&win.x),
        residual_unweighted: evaluation.unweighted,
        rms_hz: evaluation.rms_hz(),
        assignment: evaluation.targets.iter().map(|t| t.levels.clone()).collect(),
        evaluation,
        x_star: win.x.clone(),
        loops_used: win.loops_used,
        seed: cfg.seed,
        converged: win.converged,
        best_restart: best,
        restarts: outcomes,
        elapsed: t0.elapsed(),
    })
}

/// `f_w(x)` for `draws` random weight vectors; used to certify a solution.
pub fn random_weight_values(prob: &FitProblem, x: &[f64], draws: usize, p_zero: f64, seed: u64) -> Result<Vec<f64>> {
    let ev = objective(x, prob, None)?;
    let mut rng = stream_rng(seed, 0);
    (0..draws)
        .map(|_| Ok(ev.weighted(&sample_weights(prob.n_lines(), p_zero, &mut rng)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::problem::{Bounds, SpectrumTarget};
    use crate::peaks::PeakList;
    use crate::simulate::SpectrumRequest;
    use crate::spin_model::{ParamId, Spin, SpinSystem};

    fn one_spin() -> FitProblem {
        let sys = SpinSystem::new(vec![Spin::new("A", "1H")]).unwrap();
        FitProblem::new(
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
        .unwrap()
    }

    #[test]
    fn zero_loops_is_one_local_solve() {
        let cfg = NafonsConfig {
            loops: 0,
            ..Default::default()
        };
        let r = nafons_fit(&one_spin(), &cfg).unwrap();
        assert!(r.converged);
        assert_eq!(r.loops_used, 0);
        assert!((r.x_star[0] - 100.0).abs() < 1e-6);
    }

    #[test]
    fn random_walk_converges_on_convex_problem() {
        let cfg = NafonsConfig {
            mode: Mode::RandomWalk,
            loops: 200,
            ..Default::default()
        };
        let r = nafons_fit(&one_spin(), &cfg).unwrap();
        assert!(r.converged, "{:?}", r.x_star);
    }

    #[test]
    fn converged_restarts_beat_lower_residual_ones() {
        let mk = |restart, converged, score, residual| RestartOutcome {
            restart,
            x: vec![],
            residual,
            rms_hz: 0.0,
            converged,
            loops_used: 0,
            evals: 0,
            elapsed: Duration::ZERO,
            timed_out: false,
            integral_score: score,
        };
        let o = vec![
            mk(0, false, None, 0.0),
            mk(1, true, Some(0.5), 1e-9),
            mk(2, true, Some(0.1), 1e-8),
        ];
        assert_eq!(select(&o), 2);
        let o = vec![mk(0, true, None, 1e-6), mk(1, true, None, 1e-9)];
        assert_eq!(select(&o), 0);
        let o = vec![mk(0, false, None, 1e-6), mk(1, false, None, 1e-9)];
        assert_eq!(select(&o), 1);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = NafonsConfig {
            restarts: 0,
            ..Default::default()
        };
        assert!(nafons_fit(&one_spin(), &bad).is_err());
    }
}
