//! Charge-basis diagonalization of the qubit Hamiltonian
//! `H = 4 E_C (n - n_g)^2 + Σ_k [c_k cos kφ + s_k sin kφ]`.
//!
//! In the basis of Cooper-pair number states `|n>`, `n = -n_cut..=n_cut`,
//! `e^{ikφ}` shifts `n` by `k`, so each harmonic populates the `k`-th
//! off-diagonal: `<n+k|H|n> = (c_k - i s_k) / 2`. The constant `c_0` only
//! offsets the energies and is dropped.

mod labels;

use nalgebra::{Complex, DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use labels::{default_labels, TransitionLabel};

use crate::error::{ParamError, SpectrumError};
use crate::params::{CircuitParams, FluxBias, NanowireChannels};
use crate::potentials::{
    combine_harmonics, fourier_u, fourier_v, HarmonicConfig, HarmonicSpectrum,
};

pub type C64 = Complex<f64>;

/// Minimum gap between the basis cutoff and the highest retained harmonic.
pub const BASIS_MARGIN: usize = 5;

/// Energies closer than this (GHz) are treated as degenerate when ordering.
pub const DEGENERACY_TOL: f64 = 1e-9;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChargeBasisConfig {
    /// Basis spans charge states `-n_cut..=n_cut`.
    pub n_cut: usize,
    /// Offset charge.
    pub n_g: f64,
    /// Number of eigenpairs kept.
    pub n_levels: usize,
}

impl Default for ChargeBasisConfig {
    fn default() -> Self {
        Self {
            n_cut: 30,
            n_g: 0.0,
            n_levels: 6,
        }
    }
}

impl ChargeBasisConfig {
    pub fn dim(&self) -> usize {
        2 * self.n_cut + 1
    }

    /// Charge number of basis index `i`.
    pub fn charge(&self, i: usize) -> i64 {
        i as i64 - self.n_cut as i64
    }

    pub fn validate(&self, k_max: usize) -> Result<(), ParamError> {
        if self.n_cut < k_max + BASIS_MARGIN {
            return Err(ParamError::BasisTooSmall {
                n_cut: self.n_cut,
                k_max,
                margin: BASIS_MARGIN,
            });
        }
        if self.n_levels == 0 || self.n_levels > self.dim() {
            return Err(ParamError::TooManyLevels {
                requested: self.n_levels,
                dim: self.dim(),
            });
        }
        if !self.n_g.is_finite() {
            return Err(ParamError::NotFinite {
                field: "n_g",
                value: self.n_g,
            });
        }
        Ok(())
    }
}

/// Assemble the Hermitian charge-basis matrix.
pub fn build_hamiltonian(
    spec: &HarmonicSpectrum,
    ec: f64,
    cfg: &ChargeBasisConfig,
) -> Result<DMatrix<C64>, ParamError> {
    cfg.validate(spec.k_max())?;
    let mut h = potential_matrix(&spec.c, &spec.s, cfg.dim());
    for i in 0..cfg.dim() {
        let q = cfg.charge(i) as f64 - cfg.n_g;
        h[(i, i)] += C64::new(4.0 * ec * q * q, 0.0);
    }
    Ok(h)
}

/// Banded matrix of `Σ_{k>=1} [c_k cos kφ + s_k sin kφ]`.
pub(crate) fn potential_matrix(c: &[f64], s: &[f64], dim: usize) -> DMatrix<C64> {
    let mut h = DMatrix::<C64>::zeros(dim, dim);
    for k in 1..c.len().min(dim) {
        let lower = C64::new(0.5 * c[k], -0.5 * s[k]);
        let upper = lower.conj();
        for j in 0..(dim - k) {
            h[(j + k, j)] = lower;
            h[(j, j + k)] = upper;
        }
    }
    h
}

/// Lowest eigenpairs, energies ascending, eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct Eigenpairs {
    pub energies: Vec<f64>,
    pub vectors: DMatrix<C64>,
}

impl Eigenpairs {
    pub fn vector(&self, i: usize) -> Vec<C64> {
        self.vectors.column(i).iter().copied().collect()
    }
}

/// Dense Hermitian eigensolve returning the lowest `n_levels` pairs.
/// Near-degenerate pairs (within [`DEGENERACY_TOL`]) are ordered by
/// descending even-charge weight.
pub fn eigensolve(h: &DMatrix<C64>, n_levels: usize) -> Result<Eigenpairs, SpectrumError> {
    let dim = h.nrows();
    if n_levels == 0 || n_levels > dim {
        return Err(ParamError::TooManyLevels {
            requested: n_levels,
            dim,
        }
        .into());
    }
    let eig = SymmetricEigen::try_new(h.clone(), EIGEN_EPS, EIGEN_MAX_ITER).ok_or(
        SpectrumError::NoConvergence {
            dim,
            max_iter: EIGEN_MAX_ITER,
        },
    )?;
    let n_cut = (dim - 1) / 2;
    let even_weight = |col: usize| -> f64 {
        eig.eigenvectors
            .column(col)
            .iter()
            .enumerate()
            .filter(|(i, _)| (*i as i64 - n_cut as i64).rem_euclid(2) == 0)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    };
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    // Stable relabeling inside degenerate clusters.
    let mut start = 0;
    while start < dim {
        let mut end = start + 1;
        while end < dim
            && eig.eigenvalues[order[end]] - eig.eigenvalues[order[end - 1]] < DEGENERACY_TOL
        {
            end += 1;
        }
        if end - start > 1 {
            order[start..end].sort_by(|&a, &b| even_weight(b).total_cmp(&even_weight(a)));
        }
        start = end;
    }
    let keep = &order[..n_levels];
    let energies = keep.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::<C64>::zeros(dim, n_levels);
    for (col, &i) in keep.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    Ok(Eigenpairs { energies, vectors })
}

/// Frequencies for each label from ascending energies.
pub fn transition_freqs(
    energies: &[f64],
    labels: &[TransitionLabel],
) -> Result<Vec<f64>, ParamError> {
    labels
        .iter()
        .map(|l| {
            if l.top() >= energies.len() {
                Err(ParamError::LabelOutOfRange(l.to_string()))
            } else {
                Ok(l.frequency(energies))
            }
        })
        .collect()
}

/// `|<i| n - n_g |j>|` in the charge basis.
pub fn charge_matrix_element(vi: &[C64], vj: &[C64], cfg: &ChargeBasisConfig) -> f64 {
    let n_cut = (vi.len() as i64 - 1) / 2;
    vi.iter()
        .zip(vj)
        .enumerate()
        .map(|(idx, (a, b))| a.conj() * b * ((idx as i64 - n_cut) as f64 - cfg.n_g))
        .sum::<C64>()
        .norm()
}

/// Probability on even and odd Cooper-pair numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParityWeights {
    pub even_weight: f64,
    pub odd_weight: f64,
}

pub const NORMALIZATION_TOL: f64 = 1e-8;

pub fn parity_weights(vec: &[C64]) -> Result<ParityWeights, SpectrumError> {
    let n_cut = (vec.len() as i64 - 1) / 2;
    let (mut even, mut odd) = (0.0, 0.0);
    for (idx, a) in vec.iter().enumerate() {
        if (idx as i64 - n_cut).rem_euclid(2) == 0 {
            even += a.norm_sqr();
        } else {
            odd += a.norm_sqr();
        }
    }
    let norm_sq = even + odd;
    if (norm_sq - 1.0).abs() > NORMALIZATION_TOL {
        return Err(SpectrumError::Unnormalized { norm_sq });
    }
    Ok(ParityWeights {
        even_weight: even / norm_sq,
        odd_weight: odd / norm_sq,
    })
}

/// `<ψ|R|ψ>` for the charge reflection `R|n> = |-n>`. States of a potential
/// with `s_k = 0` at `n_g = 0` give `±1`; `n̂` is odd under `R`, so its matrix
/// elements vanish between states of equal reflection parity.
pub fn reflection_parity(vec: &[C64]) -> f64 {
    let last = vec.len() - 1;
    vec.iter()
        .enumerate()
        .map(|(idx, a)| a.conj() * vec[last - idx])
        .sum::<C64>()
        .re
}

/// Everything needed to turn device parameters into a spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub harmonics: HarmonicConfig,
    pub basis: ChargeBasisConfig,
    pub labels: Vec<TransitionLabel>,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        let basis = ChargeBasisConfig::default();
        Self {
            harmonics: HarmonicConfig::default(),
            labels: default_labels(basis.n_levels),
            basis,
        }
    }
}

impl SpectrumConfig {
    pub fn with_labels(labels: Vec<TransitionLabel>) -> Self {
        Self {
            labels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        self.harmonics.validate()?;
        self.basis.validate(self.harmonics.k_max)?;
        for l in &self.labels {
            if l.top() >= self.basis.n_levels {
                return Err(ParamError::LabelOutOfRange(l.to_string()));
            }
        }
        Ok(())
    }
}

/// One flux point of a [`TransitionTable`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionRow {
    /// Reduced flux in radians, as supplied (not wrapped).
    pub phi_e: f64,
    pub energies: Vec<f64>,
    /// One frequency per table label (GHz); NaN if unconverged.
    pub freqs: Vec<f64>,
    /// `|<lower|n|upper>|` per table label; NaN if unconverged.
    pub matrix_elements: Vec<f64>,
    pub converged: bool,
}

impl TransitionRow {
    fn unconverged(phi_e: f64, n_labels: usize) -> Self {
        Self {
            phi_e,
            energies: Vec::new(),
            freqs: vec![f64::NAN; n_labels],
            matrix_elements: vec![f64::NAN; n_labels],
            converged: false,
        }
    }

    pub fn flux_phi0(&self) -> f64 {
        self.phi_e / std::f64::consts::TAU
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionTable {
    pub labels: Vec<TransitionLabel>,
    pub rows: Vec<TransitionRow>,
}

impl TransitionTable {
    pub fn column(&self, label: &TransitionLabel) -> Option<Vec<f64>> {
        let idx = self.labels.iter().position(|l| l == label)?;
        Some(self.rows.iter().map(|r| r.freqs[idx]).collect())
    }
}

/// Flux-independent part of a spectrum computation: both branch harmonic
/// sets for fixed device parameters and channels.
#[derive(Debug, Clone)]
pub struct BranchHarmonics {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl BranchHarmonics {
    pub fn compute(
        params: &CircuitParams,
        channels: &NanowireChannels,
        cfg: &HarmonicConfig,
    ) -> Result<Self, ParamError> {
        Ok(Self {
            u: fourier_u(params, cfg)?,
            v: fourier_v(channels, params.gap, cfg)?,
        })
    }

    pub fn at_flux(&self, flux: FluxBias) -> Result<HarmonicSpectrum, ParamError> {
        combine_harmonics(&self.u, &self.v, flux)
    }
}

/// Solve a single flux point.
pub fn solve_point(
    branches: &BranchHarmonics,
    ec: f64,
    phi_e: f64,
    cfg: &SpectrumConfig,
) -> Result<(TransitionRow, Eigenpairs), SpectrumError> {
    if !phi_e.is_finite() {
        return Err(ParamError::NotFinite {
            field: "phi_e",
            value: phi_e,
        }
        .into());
    }
    let spec = branches.at_flux(FluxBias::from_radians(phi_e))?;
    let h = build_hamiltonian(&spec, ec, &cfg.basis)?;
    let pairs = eigensolve(&h, cfg.basis.n_levels)?;
    let freqs = transition_freqs(&pairs.energies, &cfg.labels)?;
    let matrix_elements = cfg
        .labels
        .iter()
        .map(|l| {
            charge_matrix_element(
                pairs.vectors.column(l.lower).as_slice(),
                pairs.vectors.column(l.upper).as_slice(),
                &cfg.basis,
            )
        })
        .collect();
    let row = TransitionRow {
        phi_e,
        energies: pairs.energies.clone(),
        freqs,
        matrix_elements,
        converged: true,
    };
    Ok((row, pairs))
}

/// Transition table over a flux grid (radians). Fails on the first flux
/// point whose eigenproblem cannot be solved.
pub fn spectrum_vs_flux(
    params: &CircuitParams,
    channels: &NanowireChannels,
    phi_e_grid: &[f64],
    cfg: &SpectrumConfig,
) -> Result<TransitionTable, SpectrumError> {
    cfg.validate()?;
    params.validate()?;
    let branches = BranchHarmonics::compute(params, channels, &cfg.harmonics)?;
    let rows = phi_e_grid
        .par_iter()
        .enumerate()
        .map(|(index, &phi_e)| {
            solve_point(&branches, params.ec, phi_e, cfg)
                .map(|(row, _)| row)
                .map_err(|e| SpectrumError::AtFlux {
                    index,
                    phi_e,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TransitionTable {
        labels: cfg.labels.clone(),
        rows,
    })
}

/// Like [`spectrum_vs_flux`], but unsolvable points become NaN rows and are
/// reported alongside the table.
pub fn spectrum_vs_flux_lenient(
    params: &CircuitParams,
    channels: &NanowireChannels,
    phi_e_grid: &[f64],
    cfg: &SpectrumConfig,
) -> Result<(TransitionTable, Vec<SpectrumError>), SpectrumError> {
    cfg.validate()?;
    params.validate()?;
    let branches = BranchHarmonics::compute(params, channels, &cfg.harmonics)?;
    sweep_branches_lenient(&branches, params.ec, phi_e_grid, cfg)
}

/// Lenient sweep over precomputed branch harmonics, e.g. a junction arm
/// given directly as a harmonic list.
pub fn sweep_branches_lenient(
    branches: &BranchHarmonics,
    ec: f64,
    phi_e_grid: &[f64],
    cfg: &SpectrumConfig,
) -> Result<(TransitionTable, Vec<SpectrumError>), SpectrumError> {
    cfg.validate()?;
    if !(ec.is_finite() && ec > 0.0) {
        return Err(ParamError::OutOfRange {
            field: "ec",
            constraint: "strictly positive",
            value: ec,
        }
        .into());
    }
    let results: Vec<_> = phi_e_grid
        .par_iter()
        .enumerate()
        .map(|(index, &phi_e)| {
            solve_point(branches, ec, phi_e, cfg)
                .map(|(row, _)| row)
                .map_err(|e| SpectrumError::AtFlux {
                    index,
                    phi_e,
                    source: Box::new(e),
                })
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (res, &phi_e) in results.into_iter().zip(phi_e_grid) {
        match res {
            Ok(row) => rows.push(row),
            Err(e) => {
                rows.push(TransitionRow::unconverged(phi_e, cfg.labels.len()));
                failures.push(e);
            }
        }
    }
    Ok((
        TransitionTable {
            labels: cfg.labels.clone(),
            rows,
        },
        failures,
    ))
}

/// Eigenpairs of the device at one flux value.
pub fn eigenstates(
    params: &CircuitParams,
    channels: &NanowireChannels,
    flux: FluxBias,
    harmonics: &HarmonicConfig,
    basis: &ChargeBasisConfig,
) -> Result<Eigenpairs, SpectrumError> {
    let spec = HarmonicSpectrum::compute(params, channels, flux, harmonics)?;
    let h = build_hamiltonian(&spec, params.ec, basis)?;
    eigensolve(&h, basis.n_levels)
}
