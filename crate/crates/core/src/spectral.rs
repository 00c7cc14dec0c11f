//! Diagonalization, single-quantum transitions, Lorentzian line shapes, and
//! eigenvalue gradients.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spin_model::{canonical_params, hermitian_deviation, HermitianOperator, ParamId, SpinSystem, HERMITIAN_TOL};

const TWO_PI: f64 = 2.0 * PI;

/// Lines whose integral falls below this fraction of the strongest line are dropped.
pub const DROP_THRESHOLD: f64 = 1e-10;

/// Relative gap (to the largest absolute energy) below which two levels are
/// treated as degenerate when ordering eigenvectors.
const ORDER_DEGENERACY: f64 = 1e-9;

/// Relative gap below which Hellmann-Feynman derivatives are unreliable.
pub const GRADIENT_DEGENERACY: f64 = 1e-8;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone)]
struct Block {
    /// Basis states spanned by this block.
    basis: Vec<usize>,
    /// Local eigenvectors (columns), `basis.len()` square.
    vecs: DMatrix<Complex64>,
    /// Global level index of each local column.
    levels: Vec<usize>,
}

/// Full spectral decomposition of a Hermitian operator.
///
/// Energies are ascending (rad/s). Each eigenvector is normalised so that its
/// largest component is real and positive. Levels within a degenerate cluster
/// are ordered by comparing their squared component magnitudes
/// lexicographically, larger first.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    energies: Vec<f64>,
    vectors: DMatrix<Complex64>,
    blocks: Vec<Block>,
    /// Block index and local column for every level.
    location: Vec<(usize, usize)>,
    scale: f64,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Eigenvectors as columns, in the order of [`energies`](Self::energies).
    pub fn vectors(&self) -> &DMatrix<Complex64> {
        &self.vectors
    }

    /// Largest absolute eigenvalue, used as the operator scale in tolerances.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn vector(&self, level: usize) -> nalgebra::DVectorView<'_, Complex64> {
        self.vectors.column(level)
    }

    /// `V† A V` computed block by block, skipping blocks where `A` vanishes.
    pub fn to_eigenbasis(&self, op: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        let n = self.dim();
        if op.nrows() != n || op.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: op.nrows(),
            });
        }
        let mut out = DMatrix::<Complex64>::zeros(n, n);
        for a in &self.blocks {
            for b in &self.blocks {
                let sub = DMatrix::from_fn(a.basis.len(), b.basis.len(), |r, c| op[(a.basis[r], b.basis[c])]);
                if sub.iter().all(|v| v.re == 0.0 && v.im == 0.0) {
                    continue;
                }
                let t = a.vecs.adjoint() * sub * &b.vecs;
                for (r, &p) in a.levels.iter().enumerate() {
                    for (c, &q) in b.levels.iter().enumerate() {
                        out[(p, q)] = t[(r, c)];
                    }
                }
            }
        }
        Ok(out)
    }

    /// `V† v` for each column `v` of `m`, computed block by block.
    pub(crate) fn vectors_to_eigenbasis(&self, m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let mut out = DMatrix::<Complex64>::zeros(self.dim(), m.ncols());
        for b in &self.blocks {
            let sub = DMatrix::from_fn(b.basis.len(), m.ncols(), |r, c| m[(b.basis[r], c)]);
            let t = b.vecs.adjoint() * sub;
            for (r, &p) in b.levels.iter().enumerate() {
                out.row_mut(p).copy_from(&t.row(r));
            }
        }
        out
    }

    /// Amplitudes of eigenvector `level` over its supporting basis states.
    pub(crate) fn support(&self, level: usize) -> (&[usize], nalgebra::DVectorView<'_, Complex64>) {
        let (b, col) = self.location[level];
        let block = &self.blocks[b];
        (&block.basis, block.vecs.column(col))
    }
}

fn union_find_root(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Splits the basis into the connected components of the non-zero pattern.
fn components(m: &DMatrix<Complex64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            let v = m[(i, j)];
            if v.re != 0.0 || v.im != 0.0 {
                let (ri, rj) = (union_find_root(&mut parent, i), union_find_root(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = union_find_root(&mut parent, i);
        if root_slot[r] == usize::MAX {
            root_slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_slot[r]].push(i);
    }
    groups
}

fn block_eigen(sub: DMatrix<Complex64>) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    let n = sub.nrows();
    if n == 1 {
        return Ok((
            vec![sub[(0, 0)].re],
            DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)),
        ));
    }
    if sub.iter().all(|v| v.im == 0.0) {
        let real = sub.map(|v| v.re);
        let eig = SymmetricEigen::try_new(real, EIGEN_EPS, EIGEN_MAX_ITER).ok_or(Error::EigenNonConvergence)?;
        Ok((
            eig.eigenvalues.iter().copied().collect(),
            eig.eigenvectors.map(|v| Complex64::new(v, 0.0)),
        ))
    } else {
        let eig = SymmetricEigen::try_new(sub, EIGEN_EPS, EIGEN_MAX_ITER).ok_or(Error::EigenNonConvergence)?;
        Ok((eig.eigenvalues.iter().copied().collect(), eig.eigenvectors))
    }
}

/// Rotates the global phase so the largest component is real and positive.
fn fix_phase(v: &mut nalgebra::DVectorViewMut<'_, Complex64>) {
    let mut best = 0;
    let mut best_norm = -1.0;
    for (i, c) in v.iter().enumerate() {
        let a = c.norm_sqr();
        if a > best_norm * (1.0 + 1e-12) + 1e-300 {
            best = i;
            best_norm = a;
        }
    }
    let pivot = v[best];
    if pivot.norm() > 0.0 {
        let phase = pivot.conj() / pivot.norm();
        for c in v.iter_mut() {
            *c *= phase;
        }
    }
}

fn lexicographic_weight_order(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > 1e-9 {
            return y.total_cmp(x);
        }
    }
    Ordering::Equal
}

/// Full eigendecomposition of a Hermitian operator.
///
/// The matrix is split into the connected components of its sparsity pattern
/// and each component is handed to a dense Hermitian (real symmetric when
/// possible) eigensolver.
pub fn diagonalize(h: &HermitianOperator) -> Result<EigenSystem> {
    let m = h.matrix();
    let dev = hermitian_deviation(m);
    if dev > HERMITIAN_TOL.max(1e-14 * m.camax()) {
        return Err(Error::NotHermitian(dev));
    }
    if m.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite("Hamiltonian"));
    }
    let n = m.nrows();
    let mut blocks = Vec::new();
    // (energy, block, local column)
    let mut levels: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    for basis in components(m) {
        let sub = DMatrix::from_fn(basis.len(), basis.len(), |r, c| m[(basis[r], basis[c])]);
        let (vals, mut vecs) = block_eigen(sub)?;
        for mut col in vecs.column_iter_mut() {
            fix_phase(&mut col);
        }
        let b = blocks.len();
        for (c, &e) in vals.iter().enumerate() {
            levels.push((e, b, c));
        }
        blocks.push(Block {
            levels: vec![0; basis.len()],
            basis,
            vecs,
        });
    }
    let scale = levels.iter().fold(0.0f64, |s, l| s.max(l.0.abs()));
    levels.sort_by(|a, b| a.0.total_cmp(&b.0));

    let weights = |blocks: &[Block], lvl: &(f64, usize, usize)| -> Vec<f64> {
        let blk = &blocks[lvl.1];
        let mut w = vec![0.0; n];
        for (r, &s) in blk.basis.iter().enumerate() {
            w[s] = blk.vecs[(r, lvl.2)].norm_sqr();
        }
        w
    };
    let tol = ORDER_DEGENERACY * scale;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && levels[end].0 - levels[end - 1].0 <= tol {
            end += 1;
        }
        if end - start > 1 {
            let mut cluster: Vec<((f64, usize, usize), Vec<f64>)> =
                levels[start..end].iter().map(|l| (*l, weights(&blocks, l))).collect();
            cluster.sort_by(|a, b| lexicographic_weight_order(&a.1, &b.1));
            for (slot, (l, _)) in cluster.into_iter().enumerate() {
                levels[start + slot] = l;
            }
        }
        start = end;
    }

    let mut energies = Vec::with_capacity(n);
    let mut vectors = DMatrix::<Complex64>::zeros(n, n);
    let mut location = Vec::with_capacity(n);
    for (k, &(e, b, c)) in levels.iter().enumerate() {
        energies.push(e);
        location.push((b, c));
        let blk = &mut blocks[b];
        blk.levels[c] = k;
        for (r, &s) in blk.basis.iter().enumerate() {
            vectors[(s, k)] = blk.vecs[(r, c)];
        }
    }
    Ok(EigenSystem {
        energies,
        vectors,
        blocks,
        location,
        scale,
    })
}

/// Quadrature detection operator `Σ σ⁺_k` over the spins of one species.
#[derive(Debug, Clone)]
pub struct DetectionOperator {
    matrix: DMatrix<Complex64>,
    sites: Vec<usize>,
    n_spins: usize,
}

impl DetectionOperator {
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    /// Spin indices that contribute to the signal.
    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    /// Builds `Σ σ⁺_k` for an explicit list of sites.
    pub fn for_sites(sites: Vec<usize>, n_spins: usize) -> Result<Self> {
        let dim = 1usize << n_spins;
        let mut matrix = DMatrix::<Complex64>::zeros(dim, dim);
        for &k in &sites {
            if k >= n_spins {
                return Err(Error::SiteOutOfRange {
                    index: k,
                    count: n_spins,
                });
            }
            let bit = 1usize << (n_spins - 1 - k);
            // σ⁺ = |0><1| takes the spin from down (bit set) to up.
            for b in 0..dim {
                if b & bit != 0 {
                    matrix[(b ^ bit, b)] += Complex64::new(1.0, 0.0);
                }
            }
        }
        Ok(Self { matrix, sites, n_spins })
    }

    /// Magnetization quantum number of the detected spins in state `level`.
    fn magnetization(&self, eig: &EigenSystem, level: usize) -> f64 {
        let (basis, amps) = eig.support(level);
        let mut m = 0.0;
        for (r, &b) in basis.iter().enumerate() {
            let w = amps[r].norm_sqr();
            for &k in &self.sites {
                let bit = 1usize << (self.n_spins - 1 - k);
                m += if b & bit == 0 { 0.5 * w } else { -0.5 * w };
            }
        }
        m
    }
}

pub fn detection_operator(sys: &SpinSystem, observe: &str) -> Result<DetectionOperator> {
    DetectionOperator::for_sites(sys.sites_of(observe)?, sys.len())
}

/// One spectral line.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub freq_hz: f64,
    pub integral: f64,
    /// Level `p` of the matrix element `<p|D|q>`.
    pub from_idx: usize,
    /// Level `q` of the matrix element `<p|D|q>`.
    pub to_idx: usize,
    pub coherence_order: i32,
    /// Normalised `|<p|σ⁺_j|q>|²` per spin, filled by [`annotate_spin_weights`].
    pub spin_weights: Vec<f64>,
}

pub(crate) fn collect_lines(
    eig: &EigenSystem,
    detect: &DetectionOperator,
    amplitude: impl Fn(usize, usize) -> f64,
) -> Vec<Transition> {
    let n = eig.dim();
    let mut raw = Vec::new();
    let mut max: f64 = 0.0;
    for p in 0..n {
        for q in 0..n {
            let a = amplitude(p, q);
            if a > 0.0 {
                max = max.max(a);
                raw.push((p, q, a));
            }
        }
    }
    let floor = DROP_THRESHOLD * max;
    let mut magnet: Vec<Option<f64>> = vec![None; n];
    let mut lines = Vec::new();
    for (p, q, a) in raw {
        if a < floor {
            continue;
        }
        let mp = *magnet[p].get_or_insert_with(|| detect.magnetization(eig, p));
        let mq = *magnet[q].get_or_insert_with(|| detect.magnetization(eig, q));
        lines.push(Transition {
            freq_hz: (eig.energies[p] - eig.energies[q]) / TWO_PI,
            integral: a,
            from_idx: p,
            to_idx: q,
            coherence_order: (mp - mq).round() as i32,
            spin_weights: Vec::new(),
        });
    }
    lines.sort_by(|a, b| {
        a.freq_hz
            .total_cmp(&b.freq_hz)
            .then(a.from_idx.cmp(&b.from_idx))
            .then(a.to_idx.cmp(&b.to_idx))
    });
    lines
}

/// Stick spectrum from a uniform high-temperature state: every eigenpair with
/// `|<p|D|q>|²` above the drop threshold becomes a line at `(E_p − E_q)/2π`.
pub fn stick_spectrum_thermal(eig: &EigenSystem, detect: &DetectionOperator) -> Result<Vec<Transition>> {
    let t = eig.to_eigenbasis(detect.matrix())?;
    Ok(thermal_lines(eig, detect, &t))
}

/// Thermal lines from a detection operator already in the eigenbasis.
pub(crate) fn thermal_lines(eig: &EigenSystem, detect: &DetectionOperator, t: &DMatrix<Complex64>) -> Vec<Transition> {
    collect_lines(eig, detect, |p, q| t[(p, q)].norm_sqr())
}

/// Prepared-state lines from eigenbasis forms of the detection operator and state.
pub(crate) fn state_lines(
    eig: &EigenSystem,
    detect: &DetectionOperator,
    t: &DMatrix<Complex64>,
    r: &DMatrix<Complex64>,
) -> Vec<Transition> {
    collect_lines(eig, detect, |p, q| (r[(q, p)] * t[(p, q)]).norm_sqr().sqrt())
}

/// Stick spectrum from a prepared initial state `rho0`. Each line carries the
/// amplitude `ρ̃_qp D̃_pq` expressed in the eigenbasis; its integral is the
/// modulus of that amplitude.
pub fn stick_spectrum_from_state(
    eig: &EigenSystem,
    rho0: &DMatrix<Complex64>,
    detect: &DetectionOperator,
) -> Result<Vec<Transition>> {
    let t = eig.to_eigenbasis(detect.matrix())?;
    let r = eig.to_eigenbasis(rho0)?;
    Ok(state_lines(eig, detect, &t, &r))
}

/// Fills `spin_weights` on each transition with the normalised per-spin
/// contributions `|<p|σ⁺_j|q>|²`.
pub fn annotate_spin_weights(transitions: &mut [Transition], eig: &EigenSystem, sys: &SpinSystem) {
    let n = sys.len();
    let v = eig.vectors();
    for t in transitions.iter_mut() {
        let mut w = vec![0.0; n];
        for (j, wj) in w.iter_mut().enumerate() {
            let bit = sys.bit(j);
            let mut acc = Complex64::new(0.0, 0.0);
            for b in 0..eig.dim() {
                if b & bit != 0 {
                    acc += v[(b ^ bit, t.from_idx)].conj() * v[(b, t.to_idx)];
                }
            }
            *wj = acc.norm_sqr();
        }
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            w.iter_mut().for_each(|x| *x /= total);
        }
        t.spin_weights = w;
    }
}

/// Result of [`top_n_sorted`].
#[derive(Debug, Clone, PartialEq)]
pub struct TopN {
    /// Selected frequencies, ascending.
    pub freqs: Vec<f64>,
    /// Index into the input list for each entry of `freqs`.
    pub picks: Vec<usize>,
    /// True when fewer than `n` transitions were available.
    pub short: bool,
}

/// Picks the `n` lines with largest integral (ties: lower frequency first) and
/// returns their frequencies in increasing order.
pub fn top_n_sorted(transitions: &[Transition], n: usize) -> Result<TopN> {
    if transitions.is_empty() {
        return Err(Error::EmptyTransitions);
    }
    if n == 0 {
        return Err(Error::InvalidArgument("selection count must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..transitions.len()).collect();
    order.sort_by(|&a, &b| {
        let (ta, tb) = (&transitions[a], &transitions[b]);
        tb.integral
            .total_cmp(&ta.integral)
            .then(ta.freq_hz.total_cmp(&tb.freq_hz))
            .then(a.cmp(&b))
    });
    let short = order.len() < n;
    order.truncate(n);
    order.sort_by(|&a, &b| {
        transitions[a]
            .freq_hz
            .total_cmp(&transitions[b].freq_hz)
            .then(a.cmp(&b))
    });
    Ok(TopN {
        freqs: order.iter().map(|&i| transitions[i].freq_hz).collect(),
        picks: order,
        short,
    })
}

/// Effective transverse decoherence time per spin, in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LineWidths {
    t2star_s: Vec<f64>,
}

impl LineWidths {
    pub fn new(t2star_s: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = t2star_s.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::NonPositiveWidth(bad));
        }
        Ok(Self { t2star_s })
    }

    pub fn t2star_s(&self) -> &[f64] {
        &self.t2star_s
    }

    pub fn len(&self) -> usize {
        self.t2star_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t2star_s.is_empty()
    }

    /// Half-width at half-maximum (Hz) of a line with the given spin composition.
    pub fn half_width(&self, spin_weights: &[f64]) -> Result<f64> {
        if spin_weights.is_empty() {
            if self.t2star_s.len() == 1 {
                return Ok(1.0 / (PI * self.t2star_s[0]));
            }
            return Err(Error::InvalidArgument(
                "transition has no spin composition; annotate it first".into(),
            ));
        }
        if spin_weights.len() != self.t2star_s.len() {
            return Err(Error::DimensionMismatch {
                expected: spin_weights.len(),
                found: self.t2star_s.len(),
            });
        }
        Ok(spin_weights.iter().zip(&self.t2star_s).map(|(c, t)| c / (PI * t)).sum())
    }
}

/// A digitised spectrum on a uniform, strictly increasing frequency axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSpectrum {
    freq_axis_hz: Vec<f64>,
    intensity: Vec<f64>,
}

impl SampledSpectrum {
    pub fn new(freq_axis_hz: Vec<f64>, intensity: Vec<f64>) -> Result<Self> {
        validate_axis(&freq_axis_hz)?;
        if intensity.len() != freq_axis_hz.len() {
            return Err(Error::DimensionMismatch {
                expected: freq_axis_hz.len(),
                found: intensity.len(),
            });
        }
        if intensity.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("intensity"));
        }
        Ok(Self {
            freq_axis_hz,
            intensity,
        })
    }

    pub fn freq_axis_hz(&self) -> &[f64] {
        &self.freq_axis_hz
    }

    pub fn intensity(&self) -> &[f64] {
        &self.intensity
    }

    pub fn len(&self) -> usize {
        self.freq_axis_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freq_axis_hz.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        (self.freq_axis_hz[self.len() - 1] - self.freq_axis_hz[0]) / (self.len() - 1) as f64
    }
}

/// `points` equally spaced frequencies from `start` to `stop` inclusive.
pub fn uniform_axis(start: f64, stop: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(stop > start) {
        return Err(Error::InvalidAxis(format!(
            "need at least 2 points on an increasing range, got {points} over [{start}, {stop}]"
        )));
    }
    let step = (stop - start) / (points - 1) as f64;
    Ok((0..points).map(|i| start + step * i as f64).collect())
}

pub fn validate_axis(axis: &[f64]) -> Result<()> {
    if axis.len() < 2 {
        return Err(Error::InvalidAxis("fewer than two samples".into()));
    }
    if axis.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("frequency axis"));
    }
    let step = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
    if !(step > 0.0) {
        return Err(Error::InvalidAxis("axis is not increasing".into()));
    }
    for (i, w) in axis.windows(2).enumerate() {
        let d = w[1] - w[0];
        if !(d > 0.0) {
            return Err(Error::InvalidAxis(format!(
                "axis not strictly increasing at sample {i}"
            )));
        }
        // Absolute rounding of the axis values themselves is also tolerated.
        let slack = 1e-9 * step + 4.0 * f64::EPSILON * w[0].abs().max(w[1].abs());
        if (d - step).abs() > slack {
            return Err(Error::InvalidAxis(format!("non-uniform spacing at sample {i}")));
        }
    }
    Ok(())
}

/// Sum of Lorentzians `I_k λ_k / (λ_k² + (ν − f_k)²)` sampled on `axis`.
pub fn synth_lineshape(transitions: &[Transition], widths: &LineWidths, axis: &[f64]) -> Result<SampledSpectrum> {
    validate_axis(axis)?;
    let lambdas = transitions
        .iter()
        .map(|t| widths.half_width(&t.spin_weights))
        .collect::<Result<Vec<f64>>>()?;
    let mut intensity = vec![0.0; axis.len()];
    for (t, &lam) in transitions.iter().zip(&lambdas) {
        let l2 = lam * lam;
        for (y, &nu) in intensity.iter_mut().zip(axis) {
            let d = nu - t.freq_hz;
            *y += t.integral * lam / (l2 + d * d);
        }
    }
    SampledSpectrum::new(axis.to_vec(), intensity)
}

/// Hellmann-Feynman derivatives of every energy level.
#[derive(Debug, Clone)]
pub struct EigenGradients {
    pub params: Vec<ParamId>,
    /// `dE_k/dθ` in rad/s per Hz; row = level, column = parameter.
    pub d_energy: DMatrix<f64>,
    /// Levels sharing a magnetization sector with another level closer than
    /// the degeneracy gap; their derivatives are not reliable.
    pub degenerate: Vec<bool>,
}

impl EigenGradients {
    /// Gradient of the transition frequency `(E_p − E_q)/2π` in Hz per Hz.
    pub fn transition_gradient(&self, t: &Transition) -> Vec<f64> {
        (0..self.params.len())
            .map(|c| (self.d_energy[(t.from_idx, c)] - self.d_energy[(t.to_idx, c)]) / TWO_PI)
            .collect()
    }
}

/// `<v|∂H/∂θ|v>` for one eigenvector and a list of parameters.
pub(crate) fn level_gradient(eig: &EigenSystem, sys: &SpinSystem, level: usize, ids: &[ParamId]) -> Vec<f64> {
    let (basis, amps) = eig.support(level);
    let full = eig.vector(level);
    ids.iter()
        .map(|&id| match id {
            ParamId::Shift(j) => {
                PI * basis
                    .iter()
                    .enumerate()
                    .map(|(r, &b)| amps[r].norm_sqr() * sys.z_sign(j, b))
                    .sum::<f64>()
            }
            ParamId::Dipolar(j, k) | ParamId::Scalar(j, k) => {
                let mut zz = 0.0;
                let mut flip = 0.0;
                let mask = sys.bit(j) | sys.bit(k);
                for (r, &b) in basis.iter().enumerate() {
                    zz += amps[r].norm_sqr() * sys.z_sign(j, b) * sys.z_sign(k, b);
                    let bits = b & mask;
                    if bits != 0 && bits != mask {
                        flip += 2.0 * (full[b ^ mask].conj() * amps[r]).re;
                    }
                }
                let homo = sys.is_homonuclear(j, k);
                match id {
                    ParamId::Dipolar(..) if homo => PI * zz - 0.5 * PI * flip,
                    ParamId::Scalar(..) if homo => PI * zz + PI * flip,
                    _ => PI * zz,
                }
            }
        })
        .collect()
}

/// Total magnetization sector of a level (twice the quantum number, rounded).
fn sector(eig: &EigenSystem, sys: &SpinSystem, level: usize) -> i64 {
    let (basis, amps) = eig.support(level);
    let mut m = 0.0;
    for (r, &b) in basis.iter().enumerate() {
        let w = amps[r].norm_sqr();
        m += w * (0..sys.len()).map(|j| sys.z_sign(j, b)).sum::<f64>();
    }
    m.round() as i64
}

/// Flags levels whose Hellmann-Feynman derivatives are unreliable.
pub(crate) fn degeneracy_flags(eig: &EigenSystem, sys: &SpinSystem) -> Vec<bool> {
    let n = eig.dim();
    let gap = GRADIENT_DEGENERACY * eig.scale();
    let sectors: Vec<i64> = (0..n).map(|k| sector(eig, sys, k)).collect();
    let e = eig.energies();
    let mut flags = vec![false; n];
    for a in 0..n {
        for b in a + 1..n {
            if e[b] - e[a] > gap {
                break;
            }
            if sectors[a] == sectors[b] {
                flags[a] = true;
                flags[b] = true;
            }
        }
    }
    flags
}

/// Energy derivatives for all parameters in canonical order (shifts, dipolar
/// upper triangle, scalar upper triangle).
pub fn eigenvalue_gradients(eig: &EigenSystem, sys: &SpinSystem) -> Result<EigenGradients> {
    eigenvalue_gradients_for(eig, sys, &canonical_params(sys.len()))
}

pub fn eigenvalue_gradients_for(eig: &EigenSystem, sys: &SpinSystem, ids: &[ParamId]) -> Result<EigenGradients> {
    if eig.dim() != sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            found: eig.dim(),
        });
    }
    for id in ids {
        id.validate(sys.len())?;
    }
    let mut d_energy = DMatrix::zeros(eig.dim(), ids.len());
    for k in 0..eig.dim() {
        for (c, g) in level_gradient(eig, sys, k, ids).into_iter().enumerate() {
            d_energy[(k, c)] = g;
        }
    }
    Ok(EigenGradients {
        params: ids.to_vec(),
        d_energy,
        degenerate: degeneracy_flags(eig, sys),
    })
}
