use criterion::{criterion_group, criterion_main, Criterion};
use nafons::formats::parse_spin_system;
use nafons::{build_hamiltonian, diagonalize, simulate, Preparation, SpectrumRequest};
use std::hint::black_box;

const SYSTEM: &str = include_str!("../../core/data/23dfba.spinsys");

fn spectral(c: &mut Criterion) {
    let (sys, p) = parse_spin_system(SYSTEM).unwrap();
    let h = build_hamiltonian(&sys, &p).unwrap();
    c.bench_function("build_hamiltonian/6 spins", |b| {
        b.iter(|| build_hamiltonian(black_box(&sys), &p).unwrap())
    });
    c.bench_function("diagonalize/6 spins", |b| {
        b.iter(|| diagonalize(black_box(&h)).unwrap())
    });

    let thermal = SpectrumRequest::thermal("1H", false);
    c.bench_function("simulate/thermal 1H coupled", |b| {
        b.iter(|| simulate(&sys, black_box(&p), &thermal).unwrap())
    });
    let decoupled = SpectrumRequest::thermal("1H", true);
    c.bench_function("simulate/thermal 1H decoupled", |b| {
        b.iter(|| simulate(&sys, black_box(&p), &decoupled).unwrap())
    });
    let prepared = SpectrumRequest {
        observe: "1H".into(),
        decouple: false,
        prep: Preparation::Coherence {
            i: 12,
            j: 0,
            species: "1H".into(),
        },
    };
    c.bench_function("simulate/prepared 1H", |b| {
        b.iter(|| simulate(&sys, black_box(&p), &prepared).unwrap())
    });
}

criterion_group!(benches, spectral);
criterion_main!(benches);
