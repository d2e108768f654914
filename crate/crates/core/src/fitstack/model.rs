//! Residuals of measured transition frequencies against the charge-basis
//! model, and their parameter derivatives.
//!
//! Frequency derivatives use Hellmann-Feynman: `∂E_m/∂θ = <m|∂H/∂θ|m>`,
//! where `∂H/∂θ` is assembled from the harmonics of the analytic
//! derivative of the potential. Near-degenerate levels make this
//! ill-conditioned; those points are rare in practice and only slow the
//! optimizer down.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{SpectroscopyDataset, TransitionPoint};
use crate::error::{FitError, ParamError};
use crate::params::{CircuitParams, FluxBias, NanowireChannels};
use crate::potentials::{
    andreev_root, combine_harmonics, fourier_u, single_channel_harmonics, HarmonicConfig,
};
use crate::quadrature::FourierRule;
use crate::spectrum::{
    build_hamiltonian, eigensolve, Eigenpairs, SpectrumConfig, TransitionLabel, C64,
};

/// A device parameter shared by all datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalParam {
    /// `E_J1 = E_J2`, varied together.
    EjSymmetric,
    Ej1,
    Ej2,
    Ecj,
    Gap,
    Ec,
}

impl GlobalParam {
    pub fn name(self) -> &'static str {
        match self {
            GlobalParam::EjSymmetric => "ej",
            GlobalParam::Ej1 => "ej1",
            GlobalParam::Ej2 => "ej2",
            GlobalParam::Ecj => "ecj",
            GlobalParam::Gap => "gap",
            GlobalParam::Ec => "ec",
        }
    }

    pub fn get(self, p: &CircuitParams) -> f64 {
        match self {
            GlobalParam::EjSymmetric => 0.5 * (p.ej1 + p.ej2),
            GlobalParam::Ej1 => p.ej1,
            GlobalParam::Ej2 => p.ej2,
            GlobalParam::Ecj => p.ecj,
            GlobalParam::Gap => p.gap,
            GlobalParam::Ec => p.ec,
        }
    }

    pub fn set(self, p: &mut CircuitParams, value: f64) {
        match self {
            GlobalParam::EjSymmetric => {
                p.ej1 = value;
                p.ej2 = value;
            }
            GlobalParam::Ej1 => p.ej1 = value,
            GlobalParam::Ej2 => p.ej2 = value,
            GlobalParam::Ecj => p.ecj = value,
            GlobalParam::Gap => p.gap = value,
            GlobalParam::Ec => p.ec = value,
        }
    }
}

/// The default set fitted jointly across gates; `E_C` stays fixed.
pub fn default_free_globals() -> Vec<GlobalParam> {
    vec![GlobalParam::EjSymmetric, GlobalParam::Ecj, GlobalParam::Gap]
}

/// Device parameters plus per-dataset transmissions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub globals: CircuitParams,
    pub transmissions: Vec<Vec<f64>>,
}

impl Theta {
    pub fn counts(&self) -> Vec<usize> {
        self.transmissions.iter().map(Vec::len).collect()
    }

    /// Sort each dataset's transmissions in descending order.
    pub fn canonicalize(&mut self) {
        for t in &mut self.transmissions {
            t.sort_by(|a, b| b.total_cmp(a));
        }
    }
}

/// Which entries of [`Theta`] are free, and in what order they are packed.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaLayout {
    pub free_globals: Vec<GlobalParam>,
    pub counts: Vec<usize>,
}

impl ThetaLayout {
    pub fn new(free_globals: Vec<GlobalParam>, counts: Vec<usize>) -> Result<Self, FitError> {
        let has = |g| free_globals.contains(&g);
        if has(GlobalParam::EjSymmetric) && (has(GlobalParam::Ej1) || has(GlobalParam::Ej2)) {
            return Err(
                ParamError::Invalid("ej cannot be free together with ej1 or ej2".into()).into(),
            );
        }
        for (i, g) in free_globals.iter().enumerate() {
            if free_globals[..i].contains(g) {
                return Err(ParamError::Invalid(format!("{} listed twice", g.name())).into());
            }
        }
        Ok(Self {
            free_globals,
            counts,
        })
    }

    pub fn n_globals(&self) -> usize {
        self.free_globals.len()
    }

    pub fn len(&self) -> usize {
        self.n_globals() + self.counts.iter().sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of the first transmission of dataset `d`.
    pub fn dataset_offset(&self, d: usize) -> usize {
        self.n_globals() + self.counts[..d].iter().sum::<usize>()
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.free_globals.iter().map(|g| g.name().into()).collect();
        for (d, &n) in self.counts.iter().enumerate() {
            for i in 0..n {
                names.push(format!("T[{d}][{i}]"));
            }
        }
        names
    }

    pub fn pack(&self, theta: &Theta) -> Result<Vec<f64>, FitError> {
        if theta.counts() != self.counts {
            return Err(FitError::Layout {
                got: theta.counts().iter().sum::<usize>() + self.n_globals(),
                expected: self.len(),
            });
        }
        let mut out: Vec<f64> = self
            .free_globals
            .iter()
            .map(|g| g.get(&theta.globals))
            .collect();
        for t in &theta.transmissions {
            out.extend_from_slice(t);
        }
        Ok(out)
    }

    pub fn unpack(&self, values: &[f64], base: &CircuitParams) -> Result<Theta, FitError> {
        if values.len() != self.len() {
            return Err(FitError::Layout {
                got: values.len(),
                expected: self.len(),
            });
        }
        let mut globals = *base;
        for (g, &v) in self.free_globals.iter().zip(values) {
            g.set(&mut globals, v);
        }
        let mut rest = &values[self.n_globals()..];
        let mut transmissions = Vec::with_capacity(self.counts.len());
        for &n in &self.counts {
            transmissions.push(rest[..n].to_vec());
            rest = &rest[n..];
        }
        Ok(Theta {
            globals,
            transmissions,
        })
    }
}

/// Box constraint on a free global parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBounds {
    pub lower: f64,
    #[serde(default = "infinity")]
    pub upper: f64,
}

fn infinity() -> f64 {
    f64::INFINITY
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            lower: 0.0,
            upper: f64::INFINITY,
        }
    }
}

/// Map between an unconstrained optimizer coordinate and a parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Transform {
    /// `(0, 1)` through the logistic function.
    Logit,
    /// `(lo, ∞)` through `lo + e^x`.
    Log { lo: f64 },
    /// `(lo, hi)` through a scaled logistic.
    Scaled { lo: f64, hi: f64 },
}

const LOGIT_CLAMP: f64 = 30.0;

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln().clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
}

impl Transform {
    pub(crate) fn for_bounds(b: &ParamBounds) -> Result<Self, FitError> {
        if !b.lower.is_finite() || !(b.upper > b.lower) {
            return Err(ParamError::Invalid(format!(
                "bounds need a finite lower edge below the upper edge, got [{}, {}]",
                b.lower, b.upper
            ))
            .into());
        }
        Ok(if b.upper.is_finite() {
            Transform::Scaled {
                lo: b.lower,
                hi: b.upper,
            }
        } else {
            Transform::Log { lo: b.lower }
        })
    }

    pub(crate) fn to_param(self, x: f64) -> f64 {
        match self {
            Transform::Logit => logistic(x),
            Transform::Log { lo } => lo + x.exp(),
            Transform::Scaled { lo, hi } => lo + (hi - lo) * logistic(x),
        }
    }

    pub(crate) fn derivative(self, x: f64) -> f64 {
        match self {
            Transform::Logit => {
                let p = logistic(x);
                p * (1.0 - p)
            }
            Transform::Log { .. } => x.exp(),
            Transform::Scaled { lo, hi } => {
                let p = logistic(x);
                (hi - lo) * p * (1.0 - p)
            }
        }
    }

    pub(crate) fn to_unbounded(self, p: f64) -> f64 {
        const EDGE: f64 = 1e-12;
        match self {
            Transform::Logit => logit(p.clamp(EDGE, 1.0 - EDGE)),
            Transform::Log { lo } => (p - lo).max(EDGE).ln(),
            Transform::Scaled { lo, hi } => logit(((p - lo) / (hi - lo)).clamp(EDGE, 1.0 - EDGE)),
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    label: TransitionLabel,
    freq: f64,
    sigma: f64,
    row: usize,
}

#[derive(Debug, Clone)]
struct FluxGroup {
    dataset: usize,
    phi_e: f64,
    entries: Vec<Entry>,
}

/// Used points regrouped by flux so each eigenproblem is solved once.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    groups: Vec<FluxGroup>,
    pub(crate) n_rows: usize,
    /// Dataset of each residual row.
    pub(crate) row_dataset: Vec<usize>,
    /// Measured frequency of each residual row.
    pub(crate) data: Vec<f64>,
    pub(crate) spectrum: SpectrumConfig,
    pub(crate) n_datasets: usize,
}

fn check_point(p: &TransitionPoint, tag: &str) -> Result<(), FitError> {
    if !(p.sigma > 0.0 && p.sigma.is_finite()) {
        return Err(ParamError::Invalid(format!(
            "{tag}: point {} at flux {:.6} has sigma {}",
            p.label,
            p.flux_phi0(),
            p.sigma
        ))
        .into());
    }
    if !p.freq.is_finite() || !p.phi_e.is_finite() {
        return Err(ParamError::Invalid(format!("{tag}: non-finite point {}", p.label)).into());
    }
    Ok(())
}

impl Prepared {
    pub(crate) fn new(
        datasets: &[SpectroscopyDataset],
        cfg: &SpectrumConfig,
    ) -> Result<Self, FitError> {
        if datasets.is_empty() {
            return Err(FitError::NoDatasets);
        }
        let mut groups = Vec::new();
        let mut row_dataset = Vec::new();
        let mut data = Vec::new();
        let mut top = 1;
        for (d, ds) in datasets.iter().enumerate() {
            let mut index: HashMap<u64, usize> = HashMap::new();
            let first = groups.len();
            for p in ds.points.iter().filter(|p| p.used) {
                check_point(p, &ds.tag())?;
                top = top.max(p.label.top() + 1);
                let g = *index.entry(p.phi_e.to_bits()).or_insert_with(|| {
                    groups.push(FluxGroup {
                        dataset: d,
                        phi_e: p.phi_e,
                        entries: Vec::new(),
                    });
                    groups.len() - 1
                });
                groups[g].entries.push(Entry {
                    label: p.label,
                    freq: p.freq,
                    sigma: p.sigma,
                    row: data.len(),
                });
                row_dataset.push(d);
                data.push(p.freq);
            }
            if groups.len() == first {
                return Err(FitError::NoFittablePoints(ds.tag()));
            }
        }
        let mut spectrum = cfg.clone();
        spectrum.labels.clear();
        spectrum.basis.n_levels = spectrum.basis.n_levels.max(top);
        spectrum.validate()?;
        Ok(Self {
            groups,
            n_rows: data.len(),
            row_dataset,
            data,
            spectrum,
            n_datasets: datasets.len(),
        })
    }
}

/// Residuals, model frequencies and (optionally) `∂r/∂θ` in physical units.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub(crate) residuals: Vec<f64>,
    pub(crate) model: Vec<f64>,
    pub(crate) jacobian: Option<DMatrix<f64>>,
}

/// Harmonic derivatives of the potential with respect to one parameter.
struct Derivative {
    column: usize,
    du: Option<Vec<f64>>,
    dv: Option<Vec<f64>>,
    charging: bool,
}

/// Per-dataset branch harmonics and their parameter derivatives.
struct DatasetModel {
    u: Vec<f64>,
    v: Vec<f64>,
    derivatives: Vec<Derivative>,
}

fn u_derivative(param: GlobalParam, p: &CircuitParams, cfg: &HarmonicConfig) -> Option<Vec<f64>> {
    let s = p.ej_sum();
    let lambda = p.lambda();
    let bo = cfg.include_bo && p.ecj > 0.0;
    let ecj = p.ecj;
    let d_sum = move |r: f64| -r + if bo { 0.5 * (ecj * r / s).sqrt() } else { 0.0 };
    let d_lambda = move |phi: f64, r: f64| {
        if r <= 0.0 {
            return 0.0;
        }
        let s2 = (0.5 * phi).sin().powi(2);
        let du_dr = -s + if bo { 0.5 * (ecj * s / r).sqrt() } else { 0.0 };
        du_dr * (-s2 / (2.0 * r))
    };
    let rule = FourierRule::cusp_at_pi();
    let k_max = cfg.k_max;
    match param {
        GlobalParam::EjSymmetric => {
            Some(rule.cosine_coefficients(|phi| 2.0 * d_sum(andreev_root(1.0, phi)), k_max))
        }
        GlobalParam::Ej1 | GlobalParam::Ej2 => {
            let (this, other) = if param == GlobalParam::Ej1 {
                (p.ej1, p.ej2)
            } else {
                (p.ej2, p.ej1)
            };
            let dl = 4.0 * other * (other - this) / s.powi(3);
            Some(rule.cosine_coefficients(
                |phi| {
                    let r = andreev_root(lambda, phi);
                    let mut val = d_sum(r);
                    if dl != 0.0 {
                        val += dl * d_lambda(phi, r);
                    }
                    val
                },
                k_max,
            ))
        }
        GlobalParam::Ecj => {
            if !(cfg.include_bo && ecj > 0.0) {
                return Some(vec![0.0; k_max + 1]);
            }
            Some(rule.cosine_coefficients(
                |phi| 0.5 * (s * andreev_root(lambda, phi) / ecj).sqrt(),
                k_max,
            ))
        }
        GlobalParam::Gap | GlobalParam::Ec => None,
    }
}

/// Harmonics of `∂/∂T [-sqrt(1 - T sin^2(φ/2))]` (unit gap).
fn channel_derivative(t: f64, k_max: usize) -> Vec<f64> {
    FourierRule::cusp_at_pi().cosine_coefficients(
        |phi| {
            let s2 = (0.5 * phi).sin().powi(2);
            let root = (1.0 - t * s2).max(0.0).sqrt();
            if root > 0.0 {
                s2 / (2.0 * root)
            } else {
                0.0
            }
        },
        k_max,
    )
}

fn dataset_model(
    theta: &Theta,
    d: usize,
    layout: &ThetaLayout,
    cfg: &HarmonicConfig,
    want_jac: bool,
) -> Result<DatasetModel, FitError> {
    let params = &theta.globals;
    let ts = &theta.transmissions[d];
    NanowireChannels::new(ts.clone())?;
    let u = fourier_u(params, cfg)?;
    let mut v = vec![0.0; cfg.k_max + 1];
    for &t in ts {
        for (acc, h) in v.iter_mut().zip(single_channel_harmonics(t, cfg.k_max)) {
            *acc += params.gap * h;
        }
    }
    let mut derivatives = Vec::new();
    if want_jac {
        for (column, &g) in layout.free_globals.iter().enumerate() {
            let dv = (g == GlobalParam::Gap).then(|| v.iter().map(|x| x / params.gap).collect());
            derivatives.push(Derivative {
                column,
                du: u_derivative(g, params, cfg),
                dv,
                charging: g == GlobalParam::Ec,
            });
        }
        let offset = layout.dataset_offset(d);
        for (i, &t) in ts.iter().enumerate() {
            let dv = channel_derivative(t, cfg.k_max)
                .into_iter()
                .map(|x| params.gap * x)
                .collect();
            derivatives.push(Derivative {
                column: offset + i,
                du: None,
                dv: Some(dv),
                charging: false,
            });
        }
    }
    Ok(DatasetModel { u, v, derivatives })
}

/// `z_k = Σ_j conj(ψ[j+k]) ψ[j]`, so that `<ψ|V|ψ> = Σ_k Re[(c_k - i s_k) z_k]`.
fn shift_overlaps(psi: &[C64], k_max: usize) -> Vec<C64> {
    (0..=k_max)
        .map(|k| {
            if k >= psi.len() {
                return C64::new(0.0, 0.0);
            }
            psi[k..].iter().zip(psi).map(|(a, b)| a.conj() * b).sum()
        })
        .collect()
}

fn charging_expectation(psi: &[C64], n_g: f64) -> f64 {
    let n_cut = (psi.len() as f64 - 1.0) / 2.0;
    psi.iter()
        .enumerate()
        .map(|(i, a)| 4.0 * (i as f64 - n_cut - n_g).powi(2) * a.norm_sqr())
        .sum()
}

struct GroupResult {
    rows: Vec<(usize, f64, f64)>,
    /// `(row, column, ∂r/∂θ)`.
    jac: Vec<(usize, usize, f64)>,
}

fn solve_group(
    group: &FluxGroup,
    model: &DatasetModel,
    ec: f64,
    spec: &SpectrumConfig,
    want_jac: bool,
) -> Result<GroupResult, FitError> {
    let flux = FluxBias::from_radians(group.phi_e);
    let harmonics = combine_harmonics(&model.u, &model.v, flux)?;
    let h = build_hamiltonian(&harmonics, ec, &spec.basis)?;
    let pairs: Eigenpairs = eigensolve(&h, spec.basis.n_levels)?;
    let mut rows = Vec::with_capacity(group.entries.len());
    for e in &group.entries {
        let f = e.label.frequency(&pairs.energies);
        rows.push((e.row, f, (f - e.freq) / e.sigma));
    }
    let mut jac = Vec::new();
    if want_jac {
        let k_max = spec.harmonics.k_max;
        let levels: Vec<usize> = {
            let mut l: Vec<usize> = group
                .entries
                .iter()
                .flat_map(|e| [e.lower(), e.upper()])
                .collect();
            l.sort_unstable();
            l.dedup();
            l
        };
        let overlaps: HashMap<usize, (Vec<C64>, f64)> = levels
            .iter()
            .map(|&m| {
                let psi = pairs.vectors.column(m);
                let psi = psi.as_slice();
                (
                    m,
                    (
                        shift_overlaps(psi, k_max),
                        charging_expectation(psi, spec.basis.n_g),
                    ),
                )
            })
            .collect();
        for d in &model.derivatives {
            let zeros = vec![0.0; k_max + 1];
            let du = d.du.as_deref().unwrap_or(&zeros);
            let dv = d.dv.as_deref().unwrap_or(&zeros);
            let dh = combine_harmonics(du, dv, flux)?;
            let level_derivative = |m: usize| {
                let (z, charge) = &overlaps[&m];
                let mut acc: f64 = (1..=k_max)
                    .map(|k| (C64::new(dh.c[k], -dh.s[k]) * z[k]).re)
                    .sum();
                if d.charging {
                    acc += charge;
                }
                acc
            };
            for e in &group.entries {
                let df = (level_derivative(e.upper()) - level_derivative(e.lower()))
                    / e.label.photons as f64;
                jac.push((e.row, d.column, df / e.sigma));
            }
        }
    }
    Ok(GroupResult { rows, jac })
}

impl Entry {
    fn lower(&self) -> usize {
        self.label.lower
    }

    fn upper(&self) -> usize {
        self.label.upper
    }
}

pub(crate) fn evaluate(
    prep: &Prepared,
    layout: &ThetaLayout,
    theta: &Theta,
    want_jac: bool,
) -> Result<Evaluation, FitError> {
    if theta.transmissions.len() != prep.n_datasets {
        return Err(FitError::Layout {
            got: theta.transmissions.len(),
            expected: prep.n_datasets,
        });
    }
    theta.globals.validate()?;
    let models = (0..prep.n_datasets)
        .into_par_iter()
        .map(|d| dataset_model(theta, d, layout, &prep.spectrum.harmonics, want_jac))
        .collect::<Result<Vec<_>, _>>()?;
    let results = prep
        .groups
        .par_iter()
        .map(|g| {
            solve_group(
                g,
                &models[g.dataset],
                theta.globals.ec,
                &prep.spectrum,
                want_jac,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut residuals = vec![0.0; prep.n_rows];
    let mut model = vec![0.0; prep.n_rows];
    let mut jacobian = want_jac.then(|| DMatrix::zeros(prep.n_rows, layout.len()));
    for res in results {
        for (row, f, r) in res.rows {
            model[row] = f;
            residuals[row] = r;
        }
        if let Some(j) = jacobian.as_mut() {
            for (row, col, v) in res.jac {
                j[(row, col)] = v;
            }
        }
    }
    Ok(Evaluation {
        residuals,
        model,
        jacobian,
    })
}

/// `(f_model - f_data) / σ` for every used point, datasets in order.
pub fn model_residuals(
    theta: &Theta,
    datasets: &[SpectroscopyDataset],
    cfg: &SpectrumConfig,
) -> Result<Vec<f64>, FitError> {
    let prep = Prepared::new(datasets, cfg)?;
    let layout = ThetaLayout::new(Vec::new(), theta.counts())?;
    Ok(evaluate(&prep, &layout, theta, false)?.residuals)
}

/// `∂r/∂θ` for the free globals followed by every transmission, in
/// physical units.
pub fn model_jacobian(
    theta: &Theta,
    free_globals: &[GlobalParam],
    datasets: &[SpectroscopyDataset],
    cfg: &SpectrumConfig,
) -> Result<DMatrix<f64>, FitError> {
    let prep = Prepared::new(datasets, cfg)?;
    let layout = ThetaLayout::new(free_globals.to_vec(), theta.counts())?;
    Ok(evaluate(&prep, &layout, theta, true)?
        .jacobian
        .expect("jacobian requested"))
}

/// Model evaluation in unconstrained optimizer coordinates.
pub(crate) struct TransformedProblem<'a> {
    pub(crate) prep: &'a Prepared,
    pub(crate) layout: &'a ThetaLayout,
    pub(crate) base: CircuitParams,
    pub(crate) transforms: Vec<Transform>,
}

impl TransformedProblem<'_> {
    pub(crate) fn theta(&self, x: &DVector<f64>) -> Result<Theta, FitError> {
        let values: Vec<f64> = x
            .iter()
            .zip(&self.transforms)
            .map(|(&xi, t)| t.to_param(xi))
            .collect();
        self.layout.unpack(&values, &self.base)
    }

    pub(crate) fn to_x(&self, theta: &Theta) -> Result<DVector<f64>, FitError> {
        let p = self.layout.pack(theta)?;
        Ok(DVector::from_iterator(
            p.len(),
            p.iter()
                .zip(&self.transforms)
                .map(|(&pi, t)| t.to_unbounded(pi)),
        ))
    }

    pub(crate) fn chain_factors(&self, x: &DVector<f64>) -> Vec<f64> {
        x.iter()
            .zip(&self.transforms)
            .map(|(&xi, t)| t.derivative(xi))
            .collect()
    }
}

impl super::lsq::LeastSquares for TransformedProblem<'_> {
    type Error = FitError;

    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>, FitError> {
        let theta = self.theta(x)?;
        let eval = evaluate(self.prep, self.layout, &theta, false)?;
        Ok(DVector::from_vec(eval.residuals))
    }

    fn residuals_and_jacobian(
        &self,
        x: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>), FitError> {
        let theta = self.theta(x)?;
        let eval = evaluate(self.prep, self.layout, &theta, true)?;
        let mut j = eval.jacobian.expect("jacobian requested");
        for (c, f) in self.chain_factors(x).into_iter().enumerate() {
            j.column_mut(c).scale_mut(f);
        }
        Ok((DVector::from_vec(eval.residuals), j))
    }
}
