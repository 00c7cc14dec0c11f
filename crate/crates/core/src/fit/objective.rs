//! The assignment-free frequency objective
//! `f_w(x) = Σ_j w_j (F_exp_j − F_sim_j)²`, where `F_sim` holds the
//! frequencies of the `n` strongest simulated lines in increasing order.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::Result;
use crate::fit::problem::FitProblem;
use crate::fit::weights::WeightVector;
use crate::simulate::{prepared_factors, Preparation};
use crate::spectral::{
    collect_lines, degeneracy_flags, detection_operator, diagonalize, level_gradient, thermal_lines, top_n_sorted,
    EigenSystem, Transition,
};
use crate::spin_model::{build_hamiltonian, restrict_with_map, HamiltonianParams, ParamId, SpinSystem};

/// Base penalty (Hz²) for a target with fewer simulated lines than peaks;
/// the squared deficit is added on top.
pub const SHORT_PENALTY: f64 = 1e12;

/// Central-difference step (Hz) used when analytic gradients are unavailable.
pub const FD_STEP_HZ: f64 = 1e-4;

/// Comparison of one target against its simulated counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetFit {
    /// Selected simulated frequencies, ascending.
    pub sim_freqs: Vec<f64>,
    pub sim_integrals: Vec<f64>,
    /// Eigenstate pair `(p, q)` of each selected line.
    pub levels: Vec<(usize, usize)>,
    /// `F_exp − F_sim` per experimental line; zero where no line was available.
    pub residuals: Vec<f64>,
    /// Number of experimental lines left without a simulated partner.
    pub deficit: usize,
}

impl TargetFit {
    fn contribution(&self, w: Option<&[f64]>) -> f64 {
        if self.deficit > 0 {
            return SHORT_PENALTY + (self.deficit * self.deficit) as f64;
        }
        match w {
            Some(w) => self.residuals.iter().zip(w).map(|(r, w)| w * r * r).sum(),
            None => self.residuals.iter().map(|r| r * r).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// `f_w(x)`, or `f(x)` when no weights were given.
    pub value: f64,
    /// `f(x)` with all weights equal to one.
    pub unweighted: f64,
    pub targets: Vec<TargetFit>,
    /// The point had to be clamped into the bounds first.
    pub clamped: bool,
}

impl Evaluation {
    pub fn penalized(&self) -> bool {
        self.targets.iter().any(|t| t.deficit > 0)
    }

    /// All residuals, target by target.
    pub fn residuals(&self) -> Vec<f64> {
        self.targets.iter().flat_map(|t| t.residuals.iter().copied()).collect()
    }

    /// Root-mean-square residual per line (Hz).
    pub fn rms_hz(&self) -> f64 {
        let n: usize = self.targets.iter().map(|t| t.residuals.len()).sum();
        (self.unweighted / n as f64).sqrt()
    }

    /// Re-weights the stored residuals without simulating again.
    pub fn weighted(&self, w: &WeightVector) -> f64 {
        let mut off = 0;
        let mut total = 0.0;
        for t in &self.targets {
            let n = t.residuals.len();
            total += t.contribution(Some(&w.as_slice()[off..off + n]));
            off += n;
        }
        total
    }
}

/// Evaluates `f_w` at `x` (clamped into the bounds first).
pub fn objective(x: &[f64], prob: &FitProblem, w: Option<&WeightVector>) -> Result<Evaluation> {
    if let Some(w) = w {
        if w.len() != prob.n_lines() {
            return Err(crate::Error::DimensionMismatch {
                expected: prob.n_lines(),
                found: w.len(),
            });
        }
    }
    if x.len() != prob.dim() {
        return Err(crate::Error::DimensionMismatch {
            expected: prob.dim(),
            found: x.len(),
        });
    }
    let (xc, clamped) = prob.clamp(x);
    let (mut ev, _) = evaluate(prob, &xc, false)?;
    ev.clamped = clamped;
    if let Some(w) = w {
        ev.value = ev.weighted(w);
    }
    Ok(ev)
}

struct Group {
    decouple: bool,
    observe: String,
    targets: Vec<usize>,
}

fn groups(prob: &FitProblem) -> Vec<Group> {
    let mut out: Vec<Group> = Vec::new();
    for (i, t) in prob.targets().iter().enumerate() {
        let r = &t.request;
        match out
            .iter_mut()
            .find(|g| g.decouple == r.decouple && g.observe == r.observe)
        {
            Some(g) => g.targets.push(i),
            None => out.push(Group {
                decouple: r.decouple,
                observe: r.observe.clone(),
                targets: vec![i],
            }),
        }
    }
    out
}

/// Maps a parameter of the full system onto a sub-system given the kept spins.
fn map_param(id: ParamId, kept: &[usize]) -> Option<ParamId> {
    let pos = |j: usize| kept.iter().position(|&k| k == j);
    match id {
        ParamId::Shift(j) => pos(j).map(ParamId::Shift),
        ParamId::Dipolar(j, k) => Some(ParamId::Dipolar(pos(j)?, pos(k)?)),
        ParamId::Scalar(j, k) => Some(ParamId::Scalar(pos(j)?, pos(k)?)),
    }
}

struct GroupState {
    sys: SpinSystem,
    kept: Vec<usize>,
    eig: EigenSystem,
}

fn target_lines(
    prob: &FitProblem,
    g: &Group,
    params_full: &HamiltonianParams,
) -> Result<(GroupState, Vec<Vec<Transition>>)> {
    let (sys, params, kept) = if g.decouple {
        restrict_with_map(prob.sys(), params_full, &[g.observe.as_str()])?
    } else {
        (prob.sys().clone(), params_full.clone(), (0..prob.sys().len()).collect())
    };
    let eig = diagonalize(&build_hamiltonian(&sys, &params)?)?;
    let detect = detection_operator(&sys, &g.observe)?;
    let t = eig.to_eigenbasis(detect.matrix())?;
    let mut states: HashMap<(usize, usize, String), Vec<Transition>> = HashMap::new();
    let mut sub_systems: HashMap<String, (EigenSystem, Vec<usize>)> = HashMap::new();
    let mut thermal: Option<Vec<Transition>> = None;
    let mut out = Vec::with_capacity(g.targets.len());
    for &ti in &g.targets {
        let lines = match &prob.targets()[ti].request.prep {
            Preparation::Thermal => thermal.get_or_insert_with(|| thermal_lines(&eig, &detect, &t)).clone(),
            Preparation::Coherence { i, j, species } => {
                let key = (*i, *j, species.clone());
                if let Some(l) = states.get(&key) {
                    l.clone()
                } else {
                    if !sub_systems.contains_key(species) {
                        let (sub, sub_params, sites) = restrict_with_map(&sys, &params, &[species.as_str()])?;
                        let sub_eig = diagonalize(&build_hamiltonian(&sub, &sub_params)?)?;
                        sub_systems.insert(species.clone(), (sub_eig, sites));
                    }
                    let (sub_eig, sites) = &sub_systems[species];
                    let (left, right) = prepared_factors(sub_eig, sites, sys.len(), *i, *j)?;
                    // ρ̃_qp = Σ_f L̃_qf conj(R̃_pf), evaluated only where D̃_pq ≠ 0.
                    let (lt, rt) = (eig.vectors_to_eigenbasis(&left), eig.vectors_to_eigenbasis(&right));
                    let l = collect_lines(&eig, &detect, |p, q| {
                        let d = t[(p, q)];
                        if d.re == 0.0 && d.im == 0.0 {
                            return 0.0;
                        }
                        let r: Complex64 = (0..lt.ncols()).map(|f| lt[(q, f)] * rt[(p, f)].conj()).sum();
                        (r * d).norm_sqr().sqrt()
                    });
                    states.insert(key, l.clone());
                    l
                }
            }
        };
        out.push(lines);
    }
    Ok((GroupState { sys, kept, eig }, out))
}

/// Unweighted evaluation, optionally with the Jacobian `∂F_sim/∂x`
/// (rows = experimental lines in target order, columns = free parameters).
/// The Jacobian comes from Hellmann-Feynman derivatives, or from central
/// differences when a selected line touches a near-degenerate level.
pub(crate) fn evaluate(prob: &FitProblem, x: &[f64], with_jac: bool) -> Result<(Evaluation, Option<DMatrix<f64>>)> {
    let params_full = prob.params_at(x);
    let mut fits: Vec<Option<TargetFit>> = vec![None; prob.targets().len()];
    let n_lines = prob.n_lines();
    let offsets: Vec<usize> = prob
        .targets()
        .iter()
        .scan(0, |acc, t| {
            let o = *acc;
            *acc += t.n();
            Some(o)
        })
        .collect();
    let mut jac = with_jac.then(|| DMatrix::<f64>::zeros(n_lines, prob.dim()));
    let mut need_fd = false;

    for g in groups(prob) {
        let (state, lines) = target_lines(prob, &g, &params_full)?;
        let mapped: Vec<Option<ParamId>> = prob.free().iter().map(|&id| map_param(id, &state.kept)).collect();
        let active: Vec<ParamId> = mapped.iter().flatten().copied().collect();
        let flags = if with_jac {
            degeneracy_flags(&state.eig, &state.sys)
        } else {
            Vec::new()
        };
        let mut level_cache: Vec<Option<Vec<f64>>> = vec![None; state.eig.dim()];

        for (&ti, lines) in g.targets.iter().zip(&lines) {
            let target = &prob.targets()[ti];
            let n = target.n();
            let exp = target.peaks.freqs_hz();
            let fit = if lines.is_empty() {
                TargetFit {
                    sim_freqs: vec![],
                    sim_integrals: vec![],
                    levels: vec![],
                    residuals: vec![0.0; n],
                    deficit: n,
                }
            } else {
                let top = top_n_sorted(lines, n)?;
                let sel: Vec<&Transition> = top.picks.iter().map(|&i| &lines[i]).collect();
                let mut residuals = vec![0.0; n];
                for (r, (e, s)) in residuals.iter_mut().zip(exp.iter().zip(&top.freqs)) {
                    *r = e - s;
                }
                if let Some(jac) = jac.as_mut() {
                    for (row, tr) in sel.iter().enumerate() {
                        if flags[tr.from_idx] || flags[tr.to_idx] {
                            need_fd = true;
                        }
                        for lvl in [tr.from_idx, tr.to_idx] {
                            if level_cache[lvl].is_none() {
                                level_cache[lvl] = Some(level_gradient(&state.eig, &state.sys, lvl, &active));
                            }
                        }
                        let gp = level_cache[tr.from_idx].as_ref().unwrap();
                        let gq = level_cache[tr.to_idx].as_ref().unwrap();
                        let mut a = 0;
                        for (col, m) in mapped.iter().enumerate() {
                            if m.is_some() {
                                jac[(offsets[ti] + row, col)] = (gp[a] - gq[a]) / (2.0 * std::f64::consts::PI);
                                a += 1;
                            }
                        }
                    }
                }
                TargetFit {
                    sim_freqs: top.freqs,
                    sim_integrals: sel.iter().map(|t| t.integral).collect(),
                    levels: sel.iter().map(|t| (t.from_idx, t.to_idx)).collect(),
                    residuals,
                    deficit: n.saturating_sub(sel.len()),
                }
            };
            fits[ti] = Some(fit);
        }
    }

    let targets: Vec<TargetFit> = fits.into_iter().map(|f| f.expect("every target evaluated")).collect();
    let unweighted = targets.iter().map(|t| t.contribution(None)).sum();
    let ev = Evaluation {
        value: unweighted,
        unweighted,
        targets,
        clamped: false,
    };
    if need_fd {
        jac = Some(fd_jacobian(prob, x)?);
    }
    Ok((ev, jac))
}

/// Central-difference Jacobian of the selected, sorted simulated frequencies.
pub(crate) fn fd_jacobian(prob: &FitProblem, x: &[f64]) -> Result<DMatrix<f64>> {
    let mut jac = DMatrix::<f64>::zeros(prob.n_lines(), prob.dim());
    let sim = |xx: &[f64]| -> Result<Vec<f64>> {
        let (ev, _) = evaluate(prob, xx, false)?;
        Ok(ev
            .targets
            .iter()
            .flat_map(|t| {
                let mut s = t.sim_freqs.clone();
                s.resize(t.residuals.len(), 0.0);
                s
            })
            .collect())
    };
    for c in 0..prob.dim() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[c] += FD_STEP_HZ;
        xm[c] -= FD_STEP_HZ;
        let (fp, fm) = (sim(&xp)?, sim(&xm)?);
        for r in 0..fp.len() {
            jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * FD_STEP_HZ);
        }
    }
    Ok(jac)
}
