//! Spin systems, Hamiltonian parameters, and construction of the internal
//! Hamiltonian of a dipolar-coupled spin-1/2 network.
//!
//! Basis convention: computational basis with `Z|0> = +|0>`. Spin 0 is the
//! leftmost tensor factor, so for `n` spins the state index `b` carries spin
//! `j` in bit `n - 1 - j`. All parameters are in Hz; operators returned by
//! [`build_hamiltonian`] are in rad/s so that eigenvalue differences divided by
//! `2π` come out in Hz.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest spin count accepted unless a system is built with an explicit limit.
pub const DEFAULT_MAX_SPINS: usize = 10;

/// Tolerance used when validating that an operator equals its adjoint.
pub const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Spin {
    pub label: String,
    /// Isotope tag such as `1H` or `19F`.
    pub species: String,
}

impl Spin {
    pub fn new(label: impl Into<String>, species: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            species: species.into(),
        }
    }
}

/// An ordered list of labelled spins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpinSystem {
    spins: Vec<Spin>,
    max_spins: usize,
}

impl SpinSystem {
    pub fn new(spins: Vec<Spin>) -> Result<Self> {
        Self::with_max_spins(spins, DEFAULT_MAX_SPINS)
    }

    pub fn with_max_spins(spins: Vec<Spin>, max_spins: usize) -> Result<Self> {
        if spins.is_empty() {
            return Err(Error::InvalidSystem("a spin system needs at least one spin".into()));
        }
        if spins.len() > max_spins {
            return Err(Error::TooManySpins {
                count: spins.len(),
                max: max_spins,
            });
        }
        for (i, s) in spins.iter().enumerate() {
            if s.label.trim().is_empty() || s.label.split_whitespace().count() != 1 {
                return Err(Error::InvalidSystem(format!("spin {i} has an invalid label")));
            }
            if s.species.trim().is_empty() {
                return Err(Error::InvalidSystem(format!(
                    "spin `{}` has an empty species tag",
                    s.label
                )));
            }
            if spins[..i].iter().any(|o| o.label == s.label) {
                return Err(Error::InvalidSystem(format!("duplicate label `{}`", s.label)));
            }
        }
        Ok(Self { spins, max_spins })
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    /// Hilbert-space dimension `2^N`.
    pub fn dim(&self) -> usize {
        1 << self.spins.len()
    }

    pub fn max_spins(&self) -> usize {
        self.max_spins
    }

    pub fn spins(&self) -> &[Spin] {
        &self.spins
    }

    pub fn label(&self, j: usize) -> &str {
        &self.spins[j].label
    }

    pub fn species(&self, j: usize) -> &str {
        &self.spins[j].species
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.spins
            .iter()
            .position(|s| s.label == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Distinct species tags in order of first appearance.
    pub fn species_list(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in &self.spins {
            if !out.contains(&s.species.as_str()) {
                out.push(&s.species);
            }
        }
        out
    }

    pub fn has_species(&self, species: &str) -> bool {
        self.spins.iter().any(|s| s.species == species)
    }

    /// Indices of all spins of the given species.
    pub fn sites_of(&self, species: &str) -> Result<Vec<usize>> {
        let sites: Vec<usize> = (0..self.len()).filter(|&j| self.spins[j].species == species).collect();
        if sites.is_empty() {
            Err(Error::UnknownSpecies(species.to_string()))
        } else {
            Ok(sites)
        }
    }

    pub fn is_homonuclear(&self, j: usize, k: usize) -> bool {
        self.spins[j].species == self.spins[k].species
    }

    /// Eigenvalue (+1 or -1) of `Z_j` on basis state `b`.
    #[inline]
    pub(crate) fn z_sign(&self, j: usize, b: usize) -> f64 {
        if b & self.bit(j) == 0 {
            1.0
        } else {
            -1.0
        }
    }

    #[inline]
    pub(crate) fn bit(&self, j: usize) -> usize {
        1 << (self.len() - 1 - j)
    }
}

/// One adjustable Hamiltonian parameter. Pair indices are stored with `j < k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    Shift(usize),
    Dipolar(usize, usize),
    Scalar(usize, usize),
}

impl ParamId {
    pub fn dipolar(j: usize, k: usize) -> Self {
        ParamId::Dipolar(j.min(k), j.max(k))
    }

    pub fn scalar(j: usize, k: usize) -> Self {
        ParamId::Scalar(j.min(k), j.max(k))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            ParamId::Shift(j) if j < n => Ok(()),
            ParamId::Dipolar(j, k) | ParamId::Scalar(j, k) if j < k && k < n => Ok(()),
            ParamId::Shift(j) => Err(Error::SiteOutOfRange { index: j, count: n }),
            ParamId::Dipolar(j, k) | ParamId::Scalar(j, k) => {
                if j == k {
                    Err(Error::InvalidArgument(format!("coupling of spin {j} with itself")))
                } else {
                    Err(Error::SiteOutOfRange {
                        index: j.max(k),
                        count: n,
                    })
                }
            }
        }
    }

    /// Human-readable name, e.g. `D(H1,F5)`.
    pub fn display(&self, sys: &SpinSystem) -> String {
        match *self {
            ParamId::Shift(j) => format!("nu({})", sys.label(j)),
            ParamId::Dipolar(j, k) => format!("D({},{})", sys.label(j), sys.label(k)),
            ParamId::Scalar(j, k) => format!("J({},{})", sys.label(j), sys.label(k)),
        }
    }
}

/// Canonical parameter order: shifts, then dipolar upper triangle, then
/// scalar upper triangle (row-major).
pub fn canonical_params(n: usize) -> Vec<ParamId> {
    let mut ids: Vec<ParamId> = (0..n).map(ParamId::Shift).collect();
    for j in 0..n {
        for k in j + 1..n {
            ids.push(ParamId::Dipolar(j, k));
        }
    }
    for j in 0..n {
        for k in j + 1..n {
            ids.push(ParamId::Scalar(j, k));
        }
    }
    ids
}

/// Chemical shifts and coupling constants, all in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianParams {
    pub shifts_hz: Vec<f64>,
    pub dipolar_hz: DMatrix<f64>,
    pub scalar_hz: DMatrix<f64>,
}

impl HamiltonianParams {
    pub fn zeros(n: usize) -> Self {
        Self {
            shifts_hz: vec![0.0; n],
            dipolar_hz: DMatrix::zeros(n, n),
            scalar_hz: DMatrix::zeros(n, n),
        }
    }

    pub fn len(&self) -> usize {
        self.shifts_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts_hz.is_empty()
    }

    pub fn get(&self, id: ParamId) -> f64 {
        match id {
            ParamId::Shift(j) => self.shifts_hz[j],
            ParamId::Dipolar(j, k) => self.dipolar_hz[(j, k)],
            ParamId::Scalar(j, k) => self.scalar_hz[(j, k)],
        }
    }

    /// Sets a parameter, keeping coupling matrices symmetric.
    pub fn set(&mut self, id: ParamId, value: f64) {
        match id {
            ParamId::Shift(j) => self.shifts_hz[j] = value,
            ParamId::Dipolar(j, k) => {
                self.dipolar_hz[(j, k)] = value;
                self.dipolar_hz[(k, j)] = value;
            }
            ParamId::Scalar(j, k) => {
                self.scalar_hz[(j, k)] = value;
                self.scalar_hz[(k, j)] = value;
            }
        }
    }

    pub fn values(&self, ids: &[ParamId]) -> Vec<f64> {
        ids.iter().map(|&id| self.get(id)).collect()
    }

    /// Entrywise `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        Self {
            shifts_hz: self
                .shifts_hz
                .iter()
                .zip(&other.shifts_hz)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            dipolar_hz: &self.dipolar_hz * a + &other.dipolar_hz * b,
            scalar_hz: &self.scalar_hz * a + &other.scalar_hz * b,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for len in [
            self.shifts_hz.len(),
            self.dipolar_hz.nrows(),
            self.dipolar_hz.ncols(),
            self.scalar_hz.nrows(),
            self.scalar_hz.ncols(),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        if self.shifts_hz.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("chemical shifts"));
        }
        for (m, name) in [(&self.dipolar_hz, "dipolar_hz"), (&self.scalar_hz, "scalar_hz")] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name));
            }
            for j in 0..n {
                if m[(j, j)] != 0.0 {
                    return Err(Error::NonSymmetricCoupling(name));
                }
                for k in j + 1..n {
                    if m[(j, k)] != m[(k, j)] {
                        return Err(Error::NonSymmetricCoupling(name));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Dense complex matrix that equals its conjugate transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    matrix: DMatrix<Complex64>,
}

impl HermitianOperator {
    pub fn new(matrix: DMatrix<Complex64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        let dev = hermitian_deviation(&matrix);
        if dev > HERMITIAN_TOL {
            return Err(Error::NotHermitian(dev));
        }
        Ok(Self { matrix })
    }

    pub(crate) fn new_unchecked(matrix: DMatrix<Complex64>) -> Self {
        Self { matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.matrix
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }
}

/// Largest `|A_ij - conj(A_ji)|` over the matrix.
pub fn hermitian_deviation(m: &DMatrix<Complex64>) -> f64 {
    let n = m.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PauliAxis {
    X,
    Y,
    Z,
}

impl PauliAxis {
    pub fn matrix(self) -> DMatrix<Complex64> {
        let o = Complex64::new(0.0, 0.0);
        let r = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        match self {
            PauliAxis::X => DMatrix::from_row_slice(2, 2, &[o, r, r, o]),
            PauliAxis::Y => DMatrix::from_row_slice(2, 2, &[o, -i, i, o]),
            PauliAxis::Z => DMatrix::from_row_slice(2, 2, &[r, o, o, -r]),
        }
    }
}

/// `I ⊗ … ⊗ σ_axis ⊗ … ⊗ I` with the Pauli factor at `site`, built by
/// explicit Kronecker products.
pub fn pauli_embed(axis: PauliAxis, site: usize, n: usize) -> Result<HermitianOperator> {
    embed_single(&axis.matrix(), site, n).map(HermitianOperator::new_unchecked)
}

/// Embeds an arbitrary 2×2 single-spin operator at `site`.
pub fn embed_single(op: &DMatrix<Complex64>, site: usize, n: usize) -> Result<DMatrix<Complex64>> {
    if n > DEFAULT_MAX_SPINS {
        return Err(Error::TooManySpins {
            count: n,
            max: DEFAULT_MAX_SPINS,
        });
    }
    if site >= n {
        return Err(Error::SiteOutOfRange { index: site, count: n });
    }
    let id = DMatrix::<Complex64>::identity(2, 2);
    let mut out = DMatrix::<Complex64>::identity(1, 1);
    for k in 0..n {
        out = out.kronecker(if k == site { op } else { &id });
    }
    Ok(out)
}

/// Builds the internal Hamiltonian (rad/s)
///
/// `H = Σ_j πν_j Z_j + Σ_{j<k} π(D_jk + J_jk) Z_j Z_k`, plus, for homonuclear
/// pairs only, `π(J_jk − D_jk/2)(X_j X_k + Y_j Y_k)`.
pub fn build_hamiltonian(sys: &SpinSystem, params: &HamiltonianParams) -> Result<HermitianOperator> {
    let real = build_hamiltonian_real(sys, params)?;
    Ok(HermitianOperator::new_unchecked(real.map(|v| Complex64::new(v, 0.0))))
}

/// Same operator as [`build_hamiltonian`]; the model is real symmetric.
pub(crate) fn build_hamiltonian_real(sys: &SpinSystem, params: &HamiltonianParams) -> Result<DMatrix<f64>> {
    let n = sys.len();
    params.validate(n)?;
    let dim = sys.dim();
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for b in 0..dim {
        let mut diag = 0.0;
        for j in 0..n {
            let zj = sys.z_sign(j, b);
            diag += PI * params.shifts_hz[j] * zj;
            for k in j + 1..n {
                let c = params.dipolar_hz[(j, k)] + params.scalar_hz[(j, k)];
                diag += PI * c * zj * sys.z_sign(k, b);
            }
        }
        h[(b, b)] = diag;
    }
    for j in 0..n {
        for k in j + 1..n {
            if !sys.is_homonuclear(j, k) {
                continue;
            }
            // (XX + YY) maps |01> <-> |10> with amplitude 2.
            let amp = PI * (2.0 * params.scalar_hz[(j, k)] - params.dipolar_hz[(j, k)]);
            if amp == 0.0 {
                continue;
            }
            let mask = sys.bit(j) | sys.bit(k);
            for b in 0..dim {
                let bits = b & mask;
                if bits != 0 && bits != mask {
                    h[(b, b ^ mask)] += amp;
                }
            }
        }
    }
    Ok(h)
}

/// `∂H/∂θ` for one parameter, in rad/s per Hz.
pub fn param_derivative(sys: &SpinSystem, id: ParamId) -> Result<HermitianOperator> {
    id.validate(sys.len())?;
    let mut unit = HamiltonianParams::zeros(sys.len());
    unit.set(id, 1.0);
    build_hamiltonian(sys, &unit)
}

/// Keeps only spins whose species is in `keep`, dropping every term that
/// touches a removed spin. Models ideal decoupling of the other species.
pub fn restrict_to_species(
    sys: &SpinSystem,
    params: &HamiltonianParams,
    keep: &[&str],
) -> Result<(SpinSystem, HamiltonianParams)> {
    let (sub, p, _) = restrict_with_map(sys, params, keep)?;
    Ok((sub, p))
}

/// Like [`restrict_to_species`], also returning the original index of each kept spin.
pub fn restrict_with_map(
    sys: &SpinSystem,
    params: &HamiltonianParams,
    keep: &[&str],
) -> Result<(SpinSystem, HamiltonianParams, Vec<usize>)> {
    if keep.is_empty() {
        return Err(Error::EmptySelection);
    }
    for sp in keep {
        if !sys.has_species(sp) {
            return Err(Error::UnknownSpecies(sp.to_string()));
        }
    }
    params.validate(sys.len())?;
    let kept: Vec<usize> = (0..sys.len()).filter(|&j| keep.contains(&sys.species(j))).collect();
    let spins = kept.iter().map(|&j| sys.spins()[j].clone()).collect();
    let sub = SpinSystem::with_max_spins(spins, sys.max_spins())?;
    let m = kept.len();
    let mut p = HamiltonianParams::zeros(m);
    for (a, &j) in kept.iter().enumerate() {
        p.shifts_hz[a] = params.shifts_hz[j];
        for (b, &k) in kept.iter().enumerate() {
            p.dipolar_hz[(a, b)] = params.dipolar_hz[(j, k)];
            p.scalar_hz[(a, b)] = params.scalar_hz[(j, k)];
        }
    }
    Ok((sub, p, kept))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn two_spin(a: &str, b: &str) -> SpinSystem {
        SpinSystem::new(vec![Spin::new("A", a), Spin::new("B", b)]).unwrap()
    }

    #[test]
    fn single_spin_z() {
        let z = pauli_embed(PauliAxis::Z, 0, 1).unwrap();
        assert_eq!(z.matrix()[(0, 0)], c(1.0));
        assert_eq!(z.matrix()[(1, 1)], c(-1.0));
        assert_eq!(z.matrix()[(0, 1)], c(0.0));
    }

    #[test]
    fn pauli_embed_is_involutory() {
        for axis in [PauliAxis::X, PauliAxis::Y, PauliAxis::Z] {
            for site in 0..3 {
                let p = pauli_embed(axis, site, 3).unwrap();
                let sq = p.matrix() * p.matrix();
                assert!((sq - DMatrix::<Complex64>::identity(8, 8)).norm() < 1e-14);
            }
        }
        let x = pauli_embed(PauliAxis::X, 1, 2).unwrap();
        // I ⊗ X: blocks of X on the diagonal.
        assert_eq!(x.matrix()[(0, 1)], c(1.0));
        assert_eq!(x.matrix()[(2, 3)], c(1.0));
        assert_eq!(x.matrix()[(0, 2)], c(0.0));
    }

    #[test]
    fn zz_product_is_parity() {
        let z0 = pauli_embed(PauliAxis::Z, 0, 2).unwrap();
        let z1 = pauli_embed(PauliAxis::Z, 1, 2).unwrap();
        let zz = z0.matrix() * z1.matrix();
        let expect = [1.0, -1.0, -1.0, 1.0];
        for (i, e) in expect.iter().enumerate() {
            assert_eq!(zz[(i, i)], c(*e));
        }
    }

    #[test]
    fn pauli_embed_rejects_bad_input() {
        assert!(matches!(
            pauli_embed(PauliAxis::X, 2, 2),
            Err(Error::SiteOutOfRange { .. })
        ));
        assert!(matches!(
            pauli_embed(PauliAxis::X, 0, 11),
            Err(Error::TooManySpins { .. })
        ));
    }

    #[test]
    fn single_spin_hamiltonian() {
        let sys = SpinSystem::new(vec![Spin::new("A", "1H")]).unwrap();
        let mut p = HamiltonianParams::zeros(1);
        p.shifts_hz[0] = 100.0;
        let h = build_hamiltonian(&sys, &p).unwrap();
        assert!((h.matrix()[(0, 0)].re - 100.0 * PI).abs() < 1e-12);
        assert!((h.matrix()[(1, 1)].re + 100.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn heteronuclear_pair_is_diagonal() {
        let sys = two_spin("1H", "19F");
        let mut p = HamiltonianParams::zeros(2);
        p.set(ParamId::dipolar(0, 1), 500.0);
        p.set(ParamId::scalar(0, 1), 10.0);
        let h = build_hamiltonian(&sys, &p).unwrap();
        let expect = [510.0, -510.0, -510.0, 510.0];
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { expect[i] * PI } else { 0.0 };
                assert!((h.matrix()[(i, j)].re - e).abs() < 1e-9);
                assert_eq!(h.matrix()[(i, j)].im, 0.0);
            }
        }
    }

    #[test]
    fn homonuclear_flip_flop_element() {
        let sys = two_spin("1H", "1H");
        let mut p = HamiltonianParams::zeros(2);
        p.set(ParamId::dipolar(0, 1), 500.0);
        p.set(ParamId::scalar(0, 1), 10.0);
        let h = build_hamiltonian(&sys, &p).unwrap();
        assert!((h.matrix()[(1, 2)].re - PI * (2.0 * 10.0 - 500.0)).abs() < 1e-9);
        assert!((h.matrix()[(2, 1)].re - PI * (2.0 * 10.0 - 500.0)).abs() < 1e-9);
    }

    #[test]
    fn bitwise_construction_matches_kronecker_route() {
        let sys = SpinSystem::new(vec![Spin::new("a", "1H"), Spin::new("b", "1H"), Spin::new("c", "19F")]).unwrap();
        let mut p = HamiltonianParams::zeros(3);
        p.shifts_hz = vec![120.0, -40.0, 300.0];
        p.set(ParamId::dipolar(0, 1), -800.0);
        p.set(ParamId::dipolar(0, 2), 150.0);
        p.set(ParamId::dipolar(1, 2), -75.0);
        p.set(ParamId::scalar(0, 1), 7.5);
        p.set(ParamId::scalar(1, 2), 3.0);
        let h = build_hamiltonian(&sys, &p).unwrap();

        let op = |a, s| pauli_embed(a, s, 3).unwrap().into_matrix();
        let mut reference = DMatrix::<Complex64>::zeros(8, 8);
        for j in 0..3 {
            reference += op(PauliAxis::Z, j) * c(PI * p.shifts_hz[j]);
            for k in j + 1..3 {
                let d = p.dipolar_hz[(j, k)];
                let jj = p.scalar_hz[(j, k)];
                let zz = op(PauliAxis::Z, j) * op(PauliAxis::Z, k);
                if sys.is_homonuclear(j, k) {
                    let xx = op(PauliAxis::X, j) * op(PauliAxis::X, k);
                    let yy = op(PauliAxis::Y, j) * op(PauliAxis::Y, k);
                    reference += (&zz * c(2.0) - &xx - &yy) * c(PI * d / 2.0);
                    reference += (zz + xx + yy) * c(PI * jj);
                } else {
                    reference += zz * c(PI * (d + jj));
                }
            }
        }
        assert!((h.matrix() - reference).norm() < 1e-9);
    }

    #[test]
    fn rejects_asymmetric_couplings() {
        let sys = two_spin("1H", "1H");
        let mut p = HamiltonianParams::zeros(2);
        p.dipolar_hz[(0, 1)] = 3.0;
        assert!(matches!(
            build_hamiltonian(&sys, &p),
            Err(Error::NonSymmetricCoupling(_))
        ));
        let short = HamiltonianParams::zeros(3);
        assert!(matches!(
            build_hamiltonian(&sys, &short),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn system_validation() {
        assert!(SpinSystem::new(vec![]).is_err());
        assert!(SpinSystem::new(vec![Spin::new("a", "1H"), Spin::new("a", "1H")]).is_err());
        assert!(SpinSystem::new(vec![Spin::new("a", "")]).is_err());
        let many = (0..11).map(|i| Spin::new(format!("s{i}"), "1H")).collect();
        assert!(matches!(SpinSystem::new(many), Err(Error::TooManySpins { .. })));
    }

    #[test]
    fn restriction_errors() {
        let sys = two_spin("1H", "19F");
        let p = HamiltonianParams::zeros(2);
        assert_eq!(restrict_to_species(&sys, &p, &[]).unwrap_err(), Error::EmptySelection);
        assert!(matches!(
            restrict_to_species(&sys, &p, &["13C"]),
            Err(Error::UnknownSpecies(_))
        ));
        let (same, q) = restrict_to_species(&sys, &p, &["1H", "19F"]).unwrap();
        assert_eq!(same, sys);
        assert_eq!(q, p);
    }

    #[test]
    fn canonical_order() {
        let ids = canonical_params(3);
        assert_eq!(ids.len(), 3 + 3 + 3);
        assert_eq!(ids[3], ParamId::Dipolar(0, 1));
        assert_eq!(ids[5], ParamId::Dipolar(1, 2));
        assert_eq!(ids[6], ParamId::Scalar(0, 1));
    }
}
