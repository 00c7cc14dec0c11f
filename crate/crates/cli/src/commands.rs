use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use nafons::config::{
    parse_problem_config, parse_report_parameters, write_fit_report, write_problem_config, ProblemConfig, TargetSpec,
};
use nafons::formats::{
    parse_peak_list, parse_sampled_spectrum, parse_spin_system, write_peak_list, write_sampled_spectrum,
    write_stick_spectrum,
};
use nafons::spectral::uniform_axis;
use nafons::{
    build_joint_hetero_problem, estimate_errors, lineshape_refine, nafons_fit, pick_peaks, synth_lineshape,
    ErrorConfig, FitProblem, FitResult, LineWidths, PeakList, PickOptions, Preparation, RefineConfig, RefineTarget,
    SpectrumRequest,
};

use crate::exit;
use crate::manifest::{manifest_path, RunManifest};
use crate::{ErrorsArgs, FitArgs, FitFlags, FitJointArgs, PickArgs, RefineArgs, SimulateArgs};

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn seed_or_clock(seed: Option<u64>) -> (u64, bool) {
    match seed {
        Some(s) => (s, false),
        None => {
            let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos());
            let s = (nanos as u64) ^ ((nanos >> 64) as u64);
            eprintln!("no --seed given, using {s}");
            (s, true)
        }
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<u8> {
    let (sys, params) = parse_spin_system(&read_text(&a.system)?).with_context(|| a.system.display().to_string())?;
    let req = SpectrumRequest {
        observe: a.observe.clone(),
        decouple: a.decouple,
        prep: Preparation::parse(&a.prep, &a.observe)?,
    };
    let sim = nafons::simulate(&sys, &params, &req)?;
    let sticks = with_suffix(&a.out, ".sticks");
    std::fs::write(&sticks, write_stick_spectrum(&sim.transitions))
        .with_context(|| format!("cannot write {}", sticks.display()))?;
    println!("{} lines -> {}", sim.transitions.len(), sticks.display());

    if let Some(t2_ms) = &a.t2 {
        if t2_ms.len() != sys.len() {
            bail!("--t2 needs {} values, got {}", sys.len(), t2_ms.len());
        }
        let widths = LineWidths::new(sim.kept.iter().map(|&j| t2_ms[j] * 1e-3).collect())?;
        let axis = match &a.axis {
            Some(v) if v.len() == 3 && v[2] >= 2.0 && v[2].fract() == 0.0 => uniform_axis(v[0], v[1], v[2] as usize)?,
            Some(_) => bail!("--axis expects START,STOP,POINTS"),
            None => {
                if sim.transitions.is_empty() {
                    bail!("no lines to place an automatic axis around; pass --axis");
                }
                let lo = sim.transitions.iter().map(|t| t.freq_hz).fold(f64::INFINITY, f64::min) - 200.0;
                let hi = sim
                    .transitions
                    .iter()
                    .map(|t| t.freq_hz)
                    .fold(f64::NEG_INFINITY, f64::max)
                    + 200.0;
                uniform_axis(lo, hi, ((hi - lo) / 0.5).round() as usize + 1)?
            }
        };
        let spec = synth_lineshape(&sim.transitions, &widths, &axis)?;
        let path = with_suffix(&a.out, ".spec");
        std::fs::write(&path, write_sampled_spectrum(&spec))
            .with_context(|| format!("cannot write {}", path.display()))?;
        println!("{} points -> {}", axis.len(), path.display());
    } else if a.axis.is_some() {
        bail!("--axis needs --t2");
    }
    Ok(exit::OK)
}

pub fn pick(a: &PickArgs) -> Result<u8> {
    let spec = parse_sampled_spectrum(&read_text(&a.spectrum)?).with_context(|| a.spectrum.display().to_string())?;
    let opts = PickOptions {
        min_prominence: a.min_prominence,
        window_pts: a.window_pts,
    };
    let picked = pick_peaks(&spec, a.n, &opts)?;
    std::fs::write(&a.out, write_peak_list(&picked.peaks))
        .with_context(|| format!("cannot write {}", a.out.display()))?;
    let ints = picked.peaks.integrals();
    let (lo, hi) = ints
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    println!(
        "{} of {} peaks, integral dynamic range {range:.3}",
        picked.peaks.len(),
        a.n
    );
    if picked.short {
        eprintln!("warning: only {} peaks found, {} requested", picked.peaks.len(), a.n);
        return Ok(exit::INCOMPLETE);
    }
    Ok(exit::OK)
}

/// Problem file plus its peak lists (paths relative to the problem file).
/// `bounds` replaces every bound with `±bounds` Hz.
fn load_problem(path: &Path, manifest: &mut RunManifest, bounds: Option<f64>) -> Result<FitProblem> {
    let text = String::from_utf8(manifest.input(path)?).with_context(|| format!("{} is not UTF-8", path.display()))?;
    let mut cfg = parse_problem_config(&text).with_context(|| path.display().to_string())?;
    if let Some(half) = bounds {
        cfg = cfg.with_uniform_bounds(half)?;
    }
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut peaks = Vec::with_capacity(cfg.targets.len());
    for t in &cfg.targets {
        let p = dir.join(&t.peaks_path);
        let bytes = manifest.input(&p)?;
        let text = String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", p.display()))?;
        peaks.push(parse_peak_list(&text).with_context(|| p.display().to_string())?);
    }
    Ok(cfg.into_problem(peaks)?)
}

fn run_fit(prob: &FitProblem, flags: &FitFlags, report: &Path, mut manifest: RunManifest, t0: Instant) -> Result<u8> {
    let (seed, generated) = seed_or_clock(flags.seed);
    let cfg = flags.to_config(seed);
    let mut settings = flags.settings(seed);
    settings.push(("workers", flags.workers.to_string()));
    manifest.config(&settings);
    manifest.seed = Some(seed);
    manifest.seed_generated = generated;

    let res = nafons_fit(prob, &cfg)?;
    manifest.output(report, &write_fit_report(prob, &res))?;
    manifest.wall_time = t0.elapsed();
    manifest.write(&manifest_path(report, None))?;
    print_summary(prob, &res);
    Ok(if res.converged { exit::OK } else { exit::INCOMPLETE })
}

fn print_summary(prob: &FitProblem, res: &FitResult) {
    println!(
        "{} after {} restart(s): rms {:.4} Hz (best restart {})",
        if res.converged { "converged" } else { "not converged" },
        res.restarts.len(),
        res.rms_hz,
        res.best_restart
    );
    for (id, v) in prob.free().iter().zip(&res.x_star) {
        println!("  {:<12} {v:12.3}", id.display(prob.sys()));
    }
}

pub fn fit(a: &FitArgs, argv: Vec<String>) -> Result<u8> {
    let t0 = Instant::now();
    let mut manifest = RunManifest::new(argv);
    let prob = load_problem(&a.problem, &mut manifest, a.flags.bounds)?;
    run_fit(&prob, &a.flags, &a.report, manifest, t0)
}

/// `PEAKS_FILE:I,J` → peaks path and preparation.
fn parse_sub(s: &str, species: &str) -> Result<(PathBuf, Preparation)> {
    let (path, pair) = s
        .rsplit_once(':')
        .with_context(|| format!("expected PEAKS_FILE:I,J, got `{s}`"))?;
    let prep = Preparation::parse(&format!("eig:{pair}"), species)?;
    Ok((PathBuf::from(path), prep))
}

pub fn fit_joint(a: &FitJointArgs, argv: Vec<String>) -> Result<u8> {
    let t0 = Instant::now();
    let mut manifest = RunManifest::new(argv);
    let text = String::from_utf8(manifest.input(&a.system)?).context("system file is not UTF-8")?;
    let (sys, known) = parse_spin_system(&text).with_context(|| a.system.display().to_string())?;
    let mut subs = Vec::new();
    let mut specs = Vec::new();
    for s in &a.subs {
        let (path, prep) = parse_sub(s, &a.species)?;
        let text = String::from_utf8(manifest.input(&path)?).context("peak file is not UTF-8")?;
        let peaks: PeakList = parse_peak_list(&text).with_context(|| path.display().to_string())?;
        specs.push(TargetSpec {
            peaks_path: std::path::absolute(&path)?.display().to_string(),
            request: SpectrumRequest {
                observe: a.species.clone(),
                decouple: false,
                prep: prep.clone(),
            },
        });
        subs.push((prep, peaks));
    }
    let mut prob = build_joint_hetero_problem(&sys, &known, subs, a.shift_window)?;
    if let Some(half) = a.flags.bounds {
        let bounds = vec![nafons::Bounds::symmetric(half); prob.dim()];
        let start = prob.start().iter().map(|v| v.clamp(-half, half)).collect();
        prob = FitProblem::new(
            sys.clone(),
            prob.fixed().clone(),
            prob.free().to_vec(),
            bounds,
            prob.targets().to_vec(),
        )?
        .with_start(start)?;
    }
    if prob.n_lines() < prob.dim() {
        eprintln!(
            "warning: {} lines for {} free parameters, the problem is underdetermined",
            prob.n_lines(),
            prob.dim()
        );
    }
    if let Some(path) = &a.save_problem {
        let cfg = ProblemConfig {
            sys: sys.clone(),
            fixed: prob.fixed().clone(),
            free: prob.free().to_vec(),
            bounds: prob.bounds().to_vec(),
            start: prob.start().to_vec(),
            targets: specs,
        };
        manifest.output(path, &write_problem_config(&cfg))?;
    }
    run_fit(&prob, &a.flags, &a.report, manifest, t0)
}

fn append_report(report: &Path, section: &str, manifest: &mut RunManifest) -> Result<()> {
    let mut text = read_text(report)?;
    if !text.ends_with('\n') {
        text.push('\n');
    }
    text.push('\n');
    text.push_str(section);
    manifest.output(report, &text)
}

/// Parses a `"PATH OBSERVE decoupled|coupled PREP"` spectrum argument.
fn parse_spectrum_arg(s: &str) -> Result<(PathBuf, SpectrumRequest)> {
    let t: Vec<&str> = s.split_whitespace().collect();
    let [path, observe, mode, prep] = t.as_slice() else {
        bail!("expected \"PATH OBSERVE decoupled|coupled PREP\", got `{s}`");
    };
    let decouple = match *mode {
        "decoupled" => true,
        "coupled" => false,
        other => bail!("expected decoupled or coupled, got `{other}`"),
    };
    Ok((
        PathBuf::from(path),
        SpectrumRequest {
            observe: observe.to_string(),
            decouple,
            prep: Preparation::parse(prep, observe)?,
        },
    ))
}

pub fn refine(a: &RefineArgs, argv: Vec<String>) -> Result<u8> {
    let t0 = Instant::now();
    let mut manifest = RunManifest::new(argv);
    let text = String::from_utf8(manifest.input(&a.system)?).context("system file is not UTF-8")?;
    let (sys, mut params) = parse_spin_system(&text).with_context(|| a.system.display().to_string())?;
    let report = String::from_utf8(manifest.input(&a.report)?).context("report is not UTF-8")?;
    let fitted = parse_report_parameters(&report, &sys).context("no prior fit result")?;
    for (id, v) in &fitted {
        params.set(*id, *v);
    }
    if a.t2.len() != sys.len() {
        bail!("--t2 needs {} values, got {}", sys.len(), a.t2.len());
    }
    let widths = LineWidths::new(a.t2.iter().map(|v| v * 1e-3).collect())?;
    let mut targets = Vec::new();
    for s in &a.spectra {
        let (path, request) = parse_spectrum_arg(s)?;
        let text = String::from_utf8(manifest.input(&path)?).context("spectrum is not UTF-8")?;
        let spectrum = parse_sampled_spectrum(&text).with_context(|| path.display().to_string())?;
        targets.push(RefineTarget { request, spectrum });
    }
    let cfg = RefineConfig {
        param_window_frac: a.window_frac,
        max_iters: a.max_iters,
        ..RefineConfig::default()
    };
    manifest.config(&[
        ("t2", format!("{:?}", a.t2)),
        ("window_frac", a.window_frac.to_string()),
        ("max_iters", a.max_iters.to_string()),
    ]);
    let res = lineshape_refine(&sys, &params, &widths, &targets, &cfg)?;

    let mut s = String::from("[refine]\n");
    let _ = writeln!(s, "iterations {}", res.iterations);
    let _ = writeln!(s, "aborted {}", res.aborted);
    let _ = writeln!(s, "rss {:.6e}", res.rss);
    s.push_str("# spin t2star_ms\n");
    for (j, t) in res.widths.t2star_s().iter().enumerate() {
        let _ = writeln!(s, "t2 {} {:.4}", sys.label(j), t * 1e3);
    }
    s.push_str("# parameter value relative_change\n");
    for (id, rel) in &res.rel_param_change {
        let _ = writeln!(s, "param {} {:.6} {:.3e}", id.display(&sys), res.params.get(*id), rel);
    }
    for (k, (amp, base)) in res.scales.iter().enumerate() {
        let _ = writeln!(s, "scale {k} {amp:.6e} {base:.6e}");
    }
    append_report(&a.report, &s, &mut manifest)?;

    if let Some(prefix) = &a.plot_prefix {
        for (k, t) in targets.iter().enumerate() {
            let m = nafons::refine::model_spectrum(&sys, &res.params, &res.widths, t)?;
            let (amp, base) = res.scales[k];
            let mut out = String::from("# freq_hz experiment simulation\n");
            for ((f, y), m) in t
                .spectrum
                .freq_axis_hz()
                .iter()
                .zip(t.spectrum.intensity())
                .zip(m.intensity())
            {
                let _ = writeln!(out, "{f} {y} {}", amp * m + base);
            }
            manifest.output(&with_suffix(prefix, &format!(".{k}.dat")), &out)?;
        }
    }
    manifest.wall_time = t0.elapsed();
    manifest.write(&manifest_path(&a.report, Some("refine")))?;
    println!("refined in {} iterations, rss {:.4e}", res.iterations, res.rss);
    for (j, t) in res.widths.t2star_s().iter().enumerate() {
        println!("  T2*({}) = {:.3} ms", sys.label(j), t * 1e3);
    }
    Ok(if res.aborted { exit::INCOMPLETE } else { exit::OK })
}

pub fn errors(a: &ErrorsArgs, argv: Vec<String>) -> Result<u8> {
    let t0 = Instant::now();
    let mut manifest = RunManifest::new(argv);
    let prob = load_problem(&a.problem, &mut manifest, None)?;
    let report = String::from_utf8(manifest.input(&a.report)?).context("report is not UTF-8")?;
    let fitted = parse_report_parameters(&report, prob.sys()).context("no prior fit result")?;
    let mut x = prob.start().to_vec();
    for (c, id) in prob.free().iter().enumerate() {
        match fitted.iter().find(|(f, _)| f == id) {
            Some((_, v)) => x[c] = *v,
            None => bail!("report has no value for {}", id.display(prob.sys())),
        }
    }
    let (seed, generated) = seed_or_clock(a.seed);
    manifest.seed = Some(seed);
    manifest.seed_generated = generated;
    manifest.config(&[
        ("noise", a.noise.to_string()),
        ("trials", a.trials.to_string()),
        ("seed", seed.to_string()),
    ]);
    let cfg = ErrorConfig {
        noise_sigma_hz: a.noise,
        trials: a.trials,
        seed,
        workers: a.workers,
        ..ErrorConfig::default()
    };
    let est = estimate_errors(&prob, &x, &cfg)?;

    let mut s = String::from("[errors]\n");
    let _ = writeln!(s, "noise_sigma_hz {}", est.noise_sigma_hz);
    let _ = writeln!(s, "trials {}", est.trials);
    let _ = writeln!(s, "failed {}", est.failed);
    s.push_str("# parameter value(std) std_hz\n");
    for ((id, v), sd) in est.params.iter().zip(&x).zip(&est.std_hz) {
        let _ = writeln!(s, "param {} {v:.3}({sd:.3}) {sd:.6}", id.display(prob.sys()));
    }
    append_report(&a.report, &s, &mut manifest)?;
    manifest.wall_time = t0.elapsed();
    manifest.write(&manifest_path(&a.report, Some("errors")))?;
    println!("{} trials used, {} failed", est.trials, est.failed);
    for ((id, v), sd) in est.params.iter().zip(&x).zip(&est.std_hz) {
        println!("  {:<12} {v:10.3}({sd:.3})", id.display(prob.sys()));
    }
    Ok(exit::OK)
}
