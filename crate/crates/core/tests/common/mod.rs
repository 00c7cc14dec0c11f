#![allow(dead_code)]

use nafons::formats::parse_spin_system;
use nafons::{HamiltonianParams, ParamId, Spin, SpinSystem};
use proptest::prelude::*;

pub const TABLE_ONE: &str = include_str!("../../data/23dfba.spinsys");

pub fn table_one() -> (SpinSystem, HamiltonianParams) {
    parse_spin_system(TABLE_ONE).unwrap()
}

/// Spin system with random species and parameters of realistic size.
pub fn random_system(max_spins: usize) -> impl Strategy<Value = (SpinSystem, HamiltonianParams)> {
    (1..=max_spins)
        .prop_flat_map(|n| {
            let pairs = n * (n - 1) / 2;
            (
                prop::collection::vec(prop::bool::ANY, n),
                prop::collection::vec(-3000.0..3000.0f64, n),
                prop::collection::vec(-2000.0..2000.0f64, pairs),
                prop::collection::vec(-20.0..20.0f64, pairs),
            )
        })
        .prop_map(|(fluorine, shifts, d, j)| build(&fluorine, &shifts, &d, &j))
}

pub fn build(fluorine: &[bool], shifts: &[f64], d: &[f64], j: &[f64]) -> (SpinSystem, HamiltonianParams) {
    let n = fluorine.len();
    let spins = fluorine
        .iter()
        .enumerate()
        .map(|(k, &f)| Spin::new(format!("S{k}"), if f { "19F" } else { "1H" }))
        .collect();
    let sys = SpinSystem::new(spins).unwrap();
    let mut p = HamiltonianParams::zeros(n);
    p.shifts_hz.copy_from_slice(shifts);
    let mut c = 0;
    for a in 0..n {
        for b in a + 1..n {
            p.set(ParamId::dipolar(a, b), d[c]);
            p.set(ParamId::scalar(a, b), j[c]);
            c += 1;
        }
    }
    (sys, p)
}

/// Merges lines closer than `tol` Hz, summing their integrals.
pub fn merged(mut lines: Vec<(f64, f64)>, tol: f64) -> Vec<(f64, f64)> {
    lines.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (f, i) in lines {
        match out.last_mut() {
            Some(last) if (f - last.0).abs() < tol => last.1 += i,
            _ => out.push((f, i)),
        }
    }
    out
}
