mod common;

use common::table_one;
use nafons::refine::{model_spectrum, RefineTarget};
use nafons::{
    estimate_errors, lineshape_refine, nafons_fit, Bounds, ErrorConfig, FitProblem, LineWidths, NafonsConfig, ParamId,
    RefineConfig, SampledSpectrum, SpectrumRequest, SpectrumTarget,
};

fn fluorine_problem() -> FitProblem {
    let (sys, p) = table_one();
    let target = SpectrumTarget::synthetic(&sys, &p, SpectrumRequest::thermal("19F", true), 4).unwrap();
    let free = vec![ParamId::Shift(4), ParamId::Shift(5), ParamId::dipolar(4, 5)];
    let mut fixed = p.clone();
    for &id in &free {
        fixed.set(id, 0.0);
    }
    FitProblem::new(sys, fixed, free, vec![Bounds::symmetric(2500.0); 3], vec![target]).unwrap()
}

/// Four lines admit several exact solutions; integrals select between restarts.
#[test]
fn fluorine_fit_converges_to_an_equivalent_labelling() {
    let prob = fluorine_problem();
    let r = nafons_fit(
        &prob,
        &NafonsConfig {
            seed: 3,
            restarts: 8,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(r.converged);
    let x = &r.x_star;
    let direct = (x[0] + 885.0).abs().max((x[1] - 948.0).abs());
    let swapped = (x[0] - 948.0).abs().max((x[1] + 885.0).abs());
    assert!(direct.min(swapped) < 0.01, "{x:?}");
    assert!((x[2] + 1589.0).abs() < 0.01, "{x:?}");
}

#[test]
fn worker_count_does_not_change_the_result() {
    let prob = fluorine_problem();
    let cfg = NafonsConfig {
        seed: 11,
        restarts: 4,
        loops: 5,
        ..Default::default()
    };
    let serial = nafons_fit(&prob, &cfg).unwrap();
    let parallel = nafons_fit(
        &prob,
        &NafonsConfig {
            workers: 3,
            ..cfg.clone()
        },
    )
    .unwrap();
    assert_eq!(serial.x_star, parallel.x_star);
    let a: Vec<_> = serial.restarts.iter().map(|o| o.x.clone()).collect();
    let b: Vec<_> = parallel.restarts.iter().map(|o| o.x.clone()).collect();
    assert_eq!(a, b);
}

#[test]
fn noise_free_errors_are_zero() {
    let prob = fluorine_problem();
    let (_, p) = table_one();
    let x = p.values(prob.free());
    let cfg = ErrorConfig {
        noise_sigma_hz: 0.0,
        trials: 5,
        ..Default::default()
    };
    let e = estimate_errors(&prob, &x, &cfg).unwrap();
    assert_eq!(e.trials, 5);
    assert!(e.std_hz.iter().all(|&s| s < 1e-9), "{:?}", e.std_hz);
}

#[test]
fn refinement_recovers_fluorine_widths() {
    let (sys, p) = table_one();
    let truth = LineWidths::new(vec![0.08, 0.066, 0.06, 0.062, 0.0116, 0.0159]).unwrap();
    let request = SpectrumRequest::thermal("19F", true);
    let axis: Vec<f64> = (0..6400).map(|k| -3200.0 + k as f64).collect();
    let blank = RefineTarget {
        request: request.clone(),
        spectrum: SampledSpectrum::new(axis.clone(), vec![0.0; axis.len()]).unwrap(),
    };
    let spectrum = model_spectrum(&sys, &p, &truth, &blank).unwrap();
    let targets = [RefineTarget { request, spectrum }];
    let start = LineWidths::new(truth.t2star_s().iter().map(|t| 2.0 * t).collect()).unwrap();
    let r = lineshape_refine(&sys, &p, &start, &targets, &RefineConfig::default()).unwrap();
    for k in 4..6 {
        let rel = r.widths.t2star_s()[k] / truth.t2star_s()[k] - 1.0;
        assert!(rel.abs() < 1e-6, "spin {k}: {rel}");
    }
    assert!(r.rel_param_change.iter().all(|(_, c)| *c < 0.01));
}
