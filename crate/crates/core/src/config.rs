//! Fit problem configuration files and fit reports.
//!
//! A problem file holds the spin-system sections (the fixed baseline) plus
//!
//! ```text
//! [free]          # one parameter per line: nu(L), D(L1,L2) or J(L1,L2)
//! [bounds]        # `default lo hi` and/or `<param> lo hi`
//! [start]         # `<param> value`; unlisted parameters start at 0
//! [targets]       # `peaks_file observe decoupled|coupled prep`
//! ```
//!
//! Peak files are paths relative to the problem file.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fit::nafons::FitResult;
use crate::fit::problem::{Bounds, FitProblem, SpectrumTarget};
use crate::formats::{content_lines, parse_spin_sections, sections, Line};
use crate::peaks::PeakList;
use crate::simulate::{Preparation, SpectrumRequest};
use crate::spin_model::{HamiltonianParams, ParamId, SpinSystem};

/// Default search interval half-width (Hz).
pub const DEFAULT_BOUND_HZ: f64 = 2500.0;

/// Parses `nu(L)`, `D(L1,L2)` or `J(L1,L2)`.
pub fn parse_param_id(token: &str, sys: &SpinSystem) -> Result<ParamId> {
    let bad = || Error::InvalidArgument(format!("`{token}` is not a parameter name"));
    let (kind, rest) = token.split_once('(').ok_or_else(bad)?;
    let inner = rest.strip_suffix(')').ok_or_else(bad)?;
    let labels: Vec<&str> = inner.split(',').map(str::trim).collect();
    match (kind, labels.as_slice()) {
        ("nu", [a]) => Ok(ParamId::Shift(sys.index_of(a)?)),
        ("D" | "J", [a, b]) => {
            let (j, k) = (sys.index_of(a)?, sys.index_of(b)?);
            if j == k {
                return Err(Error::InvalidArgument(format!("`{token}` couples a spin to itself")));
            }
            Ok(if kind == "D" {
                ParamId::dipolar(j, k)
            } else {
                ParamId::scalar(j, k)
            })
        }
        _ => Err(bad()),
    }
}

fn param_at(l: &Line<'_>, sys: &SpinSystem) -> Result<ParamId> {
    parse_param_id(l.tokens[0], sys).map_err(|e| l.error(e.to_string()))
}

/// One `[targets]` row before its peak file is loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub peaks_path: String,
    pub request: SpectrumRequest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub sys: SpinSystem,
    pub fixed: HamiltonianParams,
    pub free: Vec<ParamId>,
    pub bounds: Vec<Bounds>,
    pub start: Vec<f64>,
    pub targets: Vec<TargetSpec>,
}

impl ProblemConfig {
    /// Overrides every bound with `±half_width`.
    pub fn with_uniform_bounds(mut self, half_width: f64) -> Result<Self> {
        let b = Bounds::new(-half_width, half_width)?;
        self.bounds = vec![b; self.free.len()];
        self.start = self.start.iter().map(|v| b.clamp(*v)).collect();
        Ok(self)
    }

    /// Assembles the problem once the peak lists are loaded (in target order).
    pub fn into_problem(self, peaks: Vec<PeakList>) -> Result<FitProblem> {
        if peaks.len() != self.targets.len() {
            return Err(Error::DimensionMismatch {
                expected: self.targets.len(),
                found: peaks.len(),
            });
        }
        let targets = self
            .targets
            .into_iter()
            .zip(peaks)
            .map(|(t, p)| SpectrumTarget::new(p, t.request))
            .collect::<Result<Vec<_>>>()?;
        FitProblem::new(self.sys, self.fixed, self.free, self.bounds, targets)?.with_start(self.start)
    }
}

pub fn parse_problem_config(text: &str) -> Result<ProblemConfig> {
    let secs = sections(text)?;
    let (sys, fixed) = parse_spin_sections(&secs, &["free", "bounds", "start", "targets"])?;
    let lines_of = |name: &'static str| secs.iter().filter(move |(n, _)| n == name).flat_map(|(_, l)| l.iter());

    let mut free = Vec::new();
    for l in lines_of("free") {
        l.expect_len(1)?;
        let id = param_at(l, &sys)?;
        if free.contains(&id) {
            return Err(l.error("parameter listed twice"));
        }
        free.push(id);
    }
    if free.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no [free] parameters".into(),
        });
    }

    let mut default = Bounds::symmetric(DEFAULT_BOUND_HZ);
    let mut specific: Vec<(ParamId, Bounds)> = Vec::new();
    for l in lines_of("bounds") {
        l.expect_len(3)?;
        let b = Bounds::new(l.f64_at(1)?, l.f64_at(2)?).map_err(|e| l.error(e.to_string()))?;
        if l.tokens[0] == "default" {
            default = b;
        } else {
            let id = param_at(l, &sys)?;
            if !free.contains(&id) {
                return Err(l.error("bounds given for a parameter that is not free"));
            }
            specific.push((id, b));
        }
    }
    let bounds: Vec<Bounds> = free
        .iter()
        .map(|id| {
            specific
                .iter()
                .rev()
                .find(|(s, _)| s == id)
                .map_or(default, |(_, b)| *b)
        })
        .collect();

    let mut start: Vec<f64> = bounds.iter().map(|b| b.clamp(0.0)).collect();
    for l in lines_of("start") {
        l.expect_len(2)?;
        let id = param_at(l, &sys)?;
        let pos = free
            .iter()
            .position(|f| *f == id)
            .ok_or_else(|| l.error("start value for a parameter that is not free"))?;
        let v = l.f64_at(1)?;
        if !bounds[pos].contains(v) {
            return Err(l.error("start value outside the bounds"));
        }
        start[pos] = v;
    }

    let mut targets = Vec::new();
    for l in lines_of("targets") {
        l.expect_len(4)?;
        let observe = l.tokens[1];
        if !sys.has_species(observe) {
            return Err(l.error(format!("species `{observe}` is not in the spin system")));
        }
        let decouple = match l.tokens[2] {
            "decoupled" => true,
            "coupled" => false,
            other => return Err(l.error(format!("expected `decoupled` or `coupled`, found `{other}`"))),
        };
        let prep = Preparation::parse(l.tokens[3], observe).map_err(|e| l.error(e.to_string()))?;
        targets.push(TargetSpec {
            peaks_path: l.tokens[0].to_string(),
            request: SpectrumRequest {
                observe: observe.to_string(),
                decouple,
                prep,
            },
        });
    }
    if targets.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no [targets]".into(),
        });
    }
    Ok(ProblemConfig {
        sys,
        fixed,
        free,
        bounds,
        start,
        targets,
    })
}

/// Writes a problem file (inverse of [`parse_problem_config`]).
pub fn write_problem_config(cfg: &ProblemConfig) -> String {
    let mut s = crate::formats::write_spin_system(&cfg.sys, &cfg.fixed);
    s.push_str("\n[free]\n");
    for id in &cfg.free {
        let _ = writeln!(s, "{}", id.display(&cfg.sys));
    }
    s.push_str("\n[bounds]\n");
    for (id, b) in cfg.free.iter().zip(&cfg.bounds) {
        let _ = writeln!(s, "{} {} {}", id.display(&cfg.sys), b.lo, b.hi);
    }
    s.push_str("\n[start]\n");
    for (id, v) in cfg.free.iter().zip(&cfg.start) {
        let _ = writeln!(s, "{} {}", id.display(&cfg.sys), v);
    }
    s.push_str("\n[targets]\n");
    for t in &cfg.targets {
        let _ = writeln!(
            s,
            "{} {} {} {}",
            t.peaks_path,
            t.request.observe,
            if t.request.decouple { "decoupled" } else { "coupled" },
            t.request.prep
        );
    }
    s
}

/// Key-value fit report. Holds no timings so identical runs produce
/// identical bytes.
pub fn write_fit_report(prob: &FitProblem, res: &FitResult) -> String {
    let sys = prob.sys();
    let mut s = String::from("# nafons fit report\n[summary]\n");
    let _ = writeln!(s, "converged {}", res.converged);
    let _ = writeln!(s, "seed {}", res.seed);
    let _ = writeln!(s, "rms_hz {:.6}", res.rms_hz);
    let _ = writeln!(s, "residual_hz2 {:.6e}", res.residual_unweighted);
    let _ = writeln!(s, "loops_used {}", res.loops_used);
    let _ = writeln!(s, "best_restart {}", res.best_restart);
    let _ = writeln!(s, "restarts_run {}", res.restarts.len());
    let _ = writeln!(s, "lines {}", prob.n_lines());
    if res.evaluation.penalized() {
        let _ = writeln!(
            s,
            "short_targets {}",
            res.evaluation.targets.iter().filter(|t| t.deficit > 0).count()
        );
    }

    s.push_str("\n[parameters]\n");
    for (id, v) in prob.free().iter().zip(&res.x_star) {
        let _ = writeln!(s, "{} {:.6}", id.display(sys), v);
    }

    s.push_str("\n[targets]\n# index observe mode prep lines rms_hz\n");
    for (k, (t, fit)) in prob.targets().iter().zip(&res.evaluation.targets).enumerate() {
        let n = fit.residuals.len() as f64;
        let rms = (fit.residuals.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
        let _ = writeln!(
            s,
            "{k} {} {} {} {} {:.6}",
            t.request.observe,
            if t.request.decouple { "decoupled" } else { "coupled" },
            t.request.prep,
            t.n(),
            rms
        );
    }

    s.push_str("\n[assignment]\n# target line exp_hz sim_hz residual_hz level_p level_q\n");
    for (k, (t, fit)) in prob.targets().iter().zip(&res.evaluation.targets).enumerate() {
        for (j, &f) in t.peaks.freqs_hz().iter().enumerate() {
            match (fit.sim_freqs.get(j), fit.levels.get(j)) {
                (Some(sf), Some((p, q))) => {
                    let _ = writeln!(s, "{k} {j} {f:.6} {sf:.6} {:.6} {p} {q}", fit.residuals[j]);
                }
                _ => {
                    let _ = writeln!(s, "{k} {j} {f:.6} nan nan - -");
                }
            }
        }
    }

    s.push_str("\n[restarts]\n# restart converged rms_hz residual_hz2 loops evals timed_out integral_score\n");
    for o in &res.restarts {
        let score = o.integral_score.map_or("-".to_string(), |v| format!("{v:.6e}"));
        let _ = writeln!(
            s,
            "{} {} {:.6} {:.6e} {} {} {} {score}",
            o.restart, o.converged, o.rms_hz, o.residual, o.loops_used, o.evals, o.timed_out
        );
    }
    s
}

/// Reads the `[parameters]` section of a report as `(parameter, value)` pairs.
pub fn parse_report_parameters(text: &str, sys: &SpinSystem) -> Result<Vec<(ParamId, f64)>> {
    let mut in_params = false;
    let mut out = Vec::new();
    let mut seen = false;
    for l in content_lines(text) {
        if l.tokens[0].starts_with('[') {
            in_params = l.tokens[0] == "[parameters]";
            seen |= in_params;
            continue;
        }
        if in_params {
            l.expect_len(2)?;
            out.push((param_at(&l, sys)?, l.f64_at(1)?));
        }
    }
    if !seen {
        return Err(Error::Parse {
            line: 0,
            message: "report has no [parameters] section".into(),
        });
    }
    Ok(out)
}

/// Value of a `[summary]` key in a report.
pub fn report_summary_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    let mut in_summary = false;
    for l in content_lines(text) {
        if l.tokens[0].starts_with('[') {
            in_summary = l.tokens[0] == "[summary]";
        } else if in_summary && l.tokens[0] == key {
            return l.tokens.get(1).copied();
        }
    }
    None
}
