//! End-to-end forward model: spin system + parameters + experiment settings
//! to a list of transitions.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{
    annotate_spin_weights, detection_operator, diagonalize, stick_spectrum_from_state, stick_spectrum_thermal,
    EigenSystem, Transition,
};
use crate::spin_model::{build_hamiltonian, restrict_with_map, HamiltonianParams, SpinSystem};

/// Initial state before acquisition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Preparation {
    /// Uniform high-temperature state after a non-selective pulse.
    Thermal,
    /// `|E_i><E_j| ⊗ I`, where `E_i`, `E_j` are eigenstates of the Hamiltonian
    /// restricted to `species` and the identity covers all other spins.
    Coherence { i: usize, j: usize, species: String },
}

impl fmt::Display for Preparation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preparation::Thermal => write!(f, "thermal"),
            Preparation::Coherence { i, j, species } => write!(f, "eig:{i},{j}@{species}"),
        }
    }
}

impl Preparation {
    /// Parses `thermal` or `eig:i,j[@species]`; `default_species` fills a
    /// missing `@species`.
    pub fn parse(s: &str, default_species: &str) -> Result<Self> {
        let s = s.trim();
        if s == "thermal" {
            return Ok(Preparation::Thermal);
        }
        let rest = s
            .strip_prefix("eig:")
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preparation `{s}`")))?;
        let (pair, species) = match rest.split_once('@') {
            Some((p, sp)) => (p, sp.to_string()),
            None => (rest, default_species.to_string()),
        };
        let (i, j) = pair
            .split_once(',')
            .ok_or_else(|| Error::InvalidArgument(format!("expected eig:i,j, got `{s}`")))?;
        let idx = |t: &str| {
            usize::from_str(t.trim()).map_err(|_| Error::InvalidArgument(format!("bad eigenstate index `{t}`")))
        };
        Ok(Preparation::Coherence {
            i: idx(i)?,
            j: idx(j)?,
            species,
        })
    }
}

/// Which spectrum to simulate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpectrumRequest {
    pub observe: String,
    /// Restrict to the observed species (ideal decoupling of all others).
    pub decouple: bool,
    pub prep: Preparation,
}

impl SpectrumRequest {
    pub fn thermal(observe: &str, decouple: bool) -> Self {
        Self {
            observe: observe.to_string(),
            decouple,
            prep: Preparation::Thermal,
        }
    }
}

/// Output of [`simulate`]: the system actually diagonalised and its lines.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub sys: SpinSystem,
    pub params: HamiltonianParams,
    /// Index in the original system of every spin in `sys`.
    pub kept: Vec<usize>,
    pub eig: EigenSystem,
    pub transitions: Vec<Transition>,
}

/// Embeds an operator on a subset of spins into the full space as `op ⊗ I`.
pub fn embed_on_sites(op: &DMatrix<Complex64>, sites: &[usize], n_spins: usize) -> Result<DMatrix<Complex64>> {
    let sub_dim = 1usize << sites.len();
    if op.nrows() != sub_dim || op.ncols() != sub_dim {
        return Err(Error::DimensionMismatch {
            expected: sub_dim,
            found: op.nrows(),
        });
    }
    let dim = 1usize << n_spins;
    let sub_index = |b: usize| {
        sites.iter().fold(0usize, |acc, &s| {
            let bit = (b >> (n_spins - 1 - s)) & 1;
            (acc << 1) | bit
        })
    };
    let sub_mask: usize = sites.iter().map(|&s| 1usize << (n_spins - 1 - s)).sum();
    let mut out = DMatrix::<Complex64>::zeros(dim, dim);
    for r in 0..dim {
        for c in 0..dim {
            if r & !sub_mask == c & !sub_mask {
                out[(r, c)] = op[(sub_index(r), sub_index(c))];
            }
        }
    }
    Ok(out)
}

/// Factors of the prepared state: `ρ = L R†`, one column pair per basis
/// configuration of the spins outside `sites`. `sub_eig` is the
/// eigensystem of the Hamiltonian restricted to `sites`.
pub(crate) fn prepared_factors(
    sub_eig: &EigenSystem,
    sites: &[usize],
    n_spins: usize,
    i: usize,
    j: usize,
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    let dim = sub_eig.dim();
    if i >= dim || j >= dim {
        return Err(Error::InvalidPrep {
            i,
            j,
            reason: format!("the prepared sub-system has only {dim} eigenstates"),
        });
    }
    let others: Vec<usize> = (0..n_spins).filter(|s| !sites.contains(s)).collect();
    let bit = |s: usize| 1usize << (n_spins - 1 - s);
    let full = 1usize << n_spins;
    let configs = 1usize << others.len();
    let mut left = DMatrix::<Complex64>::zeros(full, configs);
    let mut right = DMatrix::<Complex64>::zeros(full, configs);
    for f in 0..configs {
        let base: usize = others
            .iter()
            .enumerate()
            .filter(|(k, _)| (f >> (others.len() - 1 - k)) & 1 == 1)
            .map(|(_, &s)| bit(s))
            .sum();
        for a in 0..dim {
            let idx: usize = base
                + sites
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| (a >> (sites.len() - 1 - k)) & 1 == 1)
                    .map(|(_, &s)| bit(s))
                    .sum::<usize>();
            left[(idx, f)] = sub_eig.vectors()[(a, i)];
            right[(idx, f)] = sub_eig.vectors()[(a, j)];
        }
    }
    Ok((left, right))
}

/// Builds the prepared density operator for `prep` on `sys`.
pub fn prepared_state(
    sys: &SpinSystem,
    params: &HamiltonianParams,
    species: &str,
    i: usize,
    j: usize,
) -> Result<DMatrix<Complex64>> {
    let (sub, sub_params, sites) = restrict_with_map(sys, params, &[species])?;
    let eig = diagonalize(&build_hamiltonian(&sub, &sub_params)?)?;
    let dim = eig.dim();
    if i >= dim || j >= dim {
        return Err(Error::InvalidPrep {
            i,
            j,
            reason: format!("the {species} sub-system has only {dim} eigenstates"),
        });
    }
    let vi = eig.vector(i);
    let vj = eig.vector(j);
    let rho_sub = vi * vj.adjoint();
    embed_on_sites(&rho_sub, &sites, sys.len())
}

/// Runs the forward model for one spectrum request.
pub fn simulate(sys: &SpinSystem, params: &HamiltonianParams, req: &SpectrumRequest) -> Result<Simulation> {
    let (sys_used, params_used, kept) = if req.decouple {
        restrict_with_map(sys, params, &[req.observe.as_str()])?
    } else {
        if !sys.has_species(&req.observe) {
            return Err(Error::UnknownSpecies(req.observe.clone()));
        }
        params.validate(sys.len())?;
        (sys.clone(), params.clone(), (0..sys.len()).collect())
    };
    let eig = diagonalize(&build_hamiltonian(&sys_used, &params_used)?)?;
    let detect = detection_operator(&sys_used, &req.observe)?;
    let mut transitions = match &req.prep {
        Preparation::Thermal => stick_spectrum_thermal(&eig, &detect)?,
        Preparation::Coherence { i, j, species } => {
            let rho = prepared_state(&sys_used, &params_used, species, *i, *j)?;
            stick_spectrum_from_state(&eig, &rho, &detect)?
        }
    };
    annotate_spin_weights(&mut transitions, &eig, &sys_used);
    Ok(Simulation {
        sys: sys_used,
        params: params_used,
        kept,
        eig,
        transitions,
    })
}
