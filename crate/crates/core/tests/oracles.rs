mod common;

use approx::assert_relative_eq;
use common::table_one;
use nafons::simulate::prepared_state;
use nafons::{
    build_hamiltonian, diagonalize, objective, pick_peaks, simulate, stick_spectrum_from_state, synth_lineshape,
    top_n_sorted, Bounds, FitProblem, LineWidths, ParamId, PickOptions, Preparation, SpectrumRequest, SpectrumTarget,
};

/// Reference values: diagonal shifts, upper triangle dipolar, lower triangle scalar (Hz).
const REFERENCE: [[f64; 6]; 6] = [
    [-1770.0, -424.0, -144.0, -154.0, -1505.0, -232.0],
    [0.38, -149.0, -2166.0, -368.0, -42.0, -106.0],
    [-0.05, 7.88, 172.0, -931.0, -62.0, -46.0],
    [0.36, 1.75, 7.70, -234.0, -236.0, -384.0],
    [-0.04, 5.56, 1.43, 8.14, -885.0, -1589.0],
    [-0.73, 1.45, 4.35, 9.82, 20.75, 948.0],
];

#[test]
fn shipped_system_matches_reference_table() {
    let (sys, p) = table_one();
    let labels = ["H1", "H2", "H3", "H4", "F5", "F6"];
    for (j, l) in labels.iter().enumerate() {
        assert_eq!(sys.label(j), *l);
        assert_eq!(sys.species(j), if j < 4 { "1H" } else { "19F" });
        assert_eq!(p.shifts_hz[j], REFERENCE[j][j]);
        for k in j + 1..6 {
            assert_eq!(p.get(ParamId::dipolar(j, k)), REFERENCE[j][k]);
            assert_eq!(p.get(ParamId::scalar(j, k)), REFERENCE[k][j]);
        }
    }
}

#[test]
fn fluorine_pair_matches_closed_form() {
    let (sys, p) = table_one();
    let sim = simulate(&sys, &p, &SpectrumRequest::thermal("19F", true)).unwrap();
    assert_eq!(sim.transitions.len(), 4);
    let (n1, n2) = (p.shifts_hz[4], p.shifts_hz[5]);
    let d = p.get(ParamId::dipolar(4, 5));
    let j = p.get(ParamId::scalar(4, 5));
    let r = ((n1 - n2).powi(2) + (2.0 * j - d).powi(2)).sqrt();
    let mut expected: Vec<f64> = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
        .iter()
        .map(|(a, b)| 0.5 * (n1 + n2) + a * (d + j) + b * 0.5 * r)
        .collect();
    expected.sort_by(f64::total_cmp);
    let mut got: Vec<f64> = sim.transitions.iter().map(|t| t.freq_hz).collect();
    got.sort_by(f64::total_cmp);
    for (g, e) in got.iter().zip(&expected) {
        assert_relative_eq!(*g, *e, max_relative = 1e-8);
    }
    for (g, e) in got.iter().zip([-2763.4, -310.1, 373.1, 2826.4]) {
        assert!((g - e).abs() < 0.1, "{g} vs {e}");
    }
}

#[test]
fn fluorine_central_block_energies() {
    let (sys, p) = table_one();
    let (sub, sp) = nafons::spin_model::restrict_to_species(&sys, &p, &["19F"]).unwrap();
    let eig = diagonalize(&build_hamiltonian(&sub, &sp).unwrap()).unwrap();
    let pi = std::f64::consts::PI;
    let (n1, n2, d, j): (f64, f64, f64, f64) = (-885.0, 948.0, -1589.0, 20.75);
    let r = ((n1 - n2) * (n1 - n2) + (2.0 * j - d) * (2.0 * j - d)).sqrt();
    let mut expected = vec![
        pi * (n1 + n2) + pi * (d + j),
        -pi * (n1 + n2) + pi * (d + j),
        -pi * (d + j) + pi * r,
        -pi * (d + j) - pi * r,
    ];
    expected.sort_by(f64::total_cmp);
    for (g, e) in eig.energies().iter().zip(&expected) {
        assert_relative_eq!(*g, *e, max_relative = 1e-10);
    }
}

#[test]
fn full_hamiltonian_energies_sum_to_zero() {
    let (sys, p) = table_one();
    let eig = diagonalize(&build_hamiltonian(&sys, &p).unwrap()).unwrap();
    assert_eq!(eig.dim(), 64);
    let sum: f64 = eig.energies().iter().sum();
    assert!(sum.abs() < 1e-9 * eig.scale());
}

#[test]
fn decoupled_proton_spectrum_has_56_lines() {
    let (sys, p) = table_one();
    let sim = simulate(&sys, &p, &SpectrumRequest::thermal("1H", true)).unwrap();
    assert_eq!(sim.transitions.len(), 56);
    let top = top_n_sorted(&sim.transitions, 26).unwrap();
    assert_eq!(top.freqs.len(), 26);
    assert!(!top.short);
}

/// The objective builds prepared-state lines from factors; they must agree
/// with the explicit density operator path.
#[test]
fn factored_preparation_matches_explicit_state() {
    let (sys, p) = table_one();
    let eig = diagonalize(&build_hamiltonian(&sys, &p).unwrap()).unwrap();
    let detect = nafons::detection_operator(&sys, "1H").unwrap();
    let mut checked = 0;
    for (i, j) in (0..16).flat_map(|i| (0..16).map(move |j| (i, j))) {
        let prep = Preparation::Coherence {
            i,
            j,
            species: "1H".into(),
        };
        let request = SpectrumRequest {
            observe: "1H".into(),
            decouple: false,
            prep,
        };

        let rho = prepared_state(&sys, &p, "1H", i, j).unwrap();
        let explicit = stick_spectrum_from_state(&eig, &rho, &detect).unwrap();
        if explicit.is_empty() {
            continue;
        }
        checked += 1;
        let top = top_n_sorted(&explicit, 6).unwrap();

        let target = SpectrumTarget::synthetic(&sys, &p, request, 6).unwrap();
        assert_eq!(target.peaks.freqs_hz(), top.freqs.as_slice());
        let free = vec![ParamId::dipolar(0, 4)];
        let prob = FitProblem::new(
            sys.clone(),
            p.clone(),
            free,
            vec![Bounds::symmetric(2500.0)],
            vec![target],
        )
        .unwrap();
        let e = objective(&p.values(prob.free()), &prob, None).unwrap();
        assert!(e.unweighted < 1e-16, "{}", e.unweighted);
        for (a, &k) in e.targets[0].sim_integrals.iter().zip(&top.picks) {
            assert_relative_eq!(*a, explicit[k].integral, max_relative = 1e-9);
        }
    }
    assert!(checked >= 40, "{checked}");
}

#[test]
fn out_of_range_preparation_is_rejected() {
    let (sys, p) = table_one();
    let request = SpectrumRequest {
        observe: "1H".into(),
        decouple: false,
        prep: Preparation::Coherence {
            i: 16,
            j: 0,
            species: "1H".into(),
        },
    };
    assert!(simulate(&sys, &p, &request).is_err());
}

#[test]
fn picking_recovers_well_resolved_lines() {
    let (sys, p) = table_one();
    let sim = simulate(&sys, &p, &SpectrumRequest::thermal("19F", true)).unwrap();
    let widths = LineWidths::new(vec![0.05, 0.05]).unwrap();
    let axis: Vec<f64> = (0..12000).map(|k| -3000.0 + 0.5 * k as f64).collect();
    let spec = synth_lineshape(&sim.transitions, &widths, &axis).unwrap();
    let picked = pick_peaks(&spec, 4, &PickOptions::default()).unwrap();
    assert!(!picked.short);
    let mut truth: Vec<(f64, f64)> = sim.transitions.iter().map(|t| (t.freq_hz, t.integral)).collect();
    truth.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (f, (tf, _)) in picked.peaks.freqs_hz().iter().zip(&truth) {
        assert!((f - tf).abs() < 0.05, "{f} vs {tf}");
    }
    // Equal widths: picked integrals are proportional to the stick integrals.
    let ints = picked.peaks.integrals();
    let ratio = ints[0] / truth[0].1;
    for ((_, ti), pi) in truth.iter().zip(ints) {
        assert_relative_eq!(pi / ratio, *ti, max_relative = 0.02);
    }
}
