//! Synthetic two-tone spectroscopy: Lorentzian lines at model transition
//! frequencies plus seeded Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SynthError;
use crate::params::{CircuitParams, FluxBias, NanowireChannels};
use crate::spectrum::{
    charge_matrix_element, solve_point, BranchHarmonics, Eigenpairs, SpectrumConfig,
    TransitionLabel, TransitionTable,
};

/// One drive-frequency sweep at fixed flux.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// Reduced flux in radians, as supplied.
    pub phi_e: f64,
    /// Strictly ascending drive frequencies (GHz).
    pub freqs: Vec<f64>,
    pub signal: Vec<f64>,
}

impl Trace {
    pub fn flux(&self) -> FluxBias {
        FluxBias::from_radians(self.phi_e)
    }

    pub fn step(&self) -> Option<f64> {
        (self.freqs.len() > 1).then(|| self.freqs[1] - self.freqs[0])
    }
}

/// A single Lorentzian line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub f0: f64,
    pub amplitude: f64,
    pub fwhm: f64,
}

impl Line {
    pub fn value(&self, f: f64) -> f64 {
        let hw = 0.5 * self.fwhm;
        self.amplitude * hw * hw / ((f - self.f0).powi(2) + hw * hw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeWeighting {
    Uniform,
    /// Scale by `|<i|n|j>|^2`; multiphoton lines use the product over the
    /// ladder `i → i+1 → … → j`.
    #[default]
    ChargeMatrixElement,
}

/// Line settings for one transition in a synthetic map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub label: TransitionLabel,
    /// FWHM in GHz.
    pub fwhm: f64,
    #[serde(default = "unit")]
    pub amplitude: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub lines: Vec<LineSpec>,
    /// Standard deviation of additive Gaussian noise, signal units.
    #[serde(default)]
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub weighting: AmplitudeWeighting,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(SynthError::Config(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        for l in &self.lines {
            validate_line(l.fwhm, l.amplitude)
                .map_err(|m| SynthError::Config(format!("line {}: {m}", l.label)))?;
        }
        Ok(())
    }
}

fn validate_line(fwhm: f64, amplitude: f64) -> Result<(), String> {
    if !(fwhm > 0.0 && fwhm.is_finite()) {
        return Err(format!("fwhm must be finite and > 0, got {fwhm}"));
    }
    if !amplitude.is_finite() {
        return Err(format!("amplitude must be finite, got {amplitude}"));
    }
    Ok(())
}

pub fn validate_grid(grid: &[f64]) -> Result<(), SynthError> {
    if grid.is_empty() {
        return Err(SynthError::EmptyGrid);
    }
    if let Some(i) = grid.iter().position(|f| !f.is_finite()) {
        return Err(SynthError::UnsortedGrid(i));
    }
    if let Some(i) = grid.windows(2).position(|w| w[1] <= w[0]) {
        return Err(SynthError::UnsortedGrid(i + 1));
    }
    Ok(())
}

/// `n` evenly spaced points from `start` to `stop` inclusive.
pub fn linear_grid(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (stop - start) / (n - 1) as f64;
            (0..n).map(|i| start + i as f64 * step).collect()
        }
    }
}

fn render(lines: &[Line], grid: &[f64], noise_sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut signal: Vec<f64> = grid
        .iter()
        .map(|&f| lines.iter().map(|l| l.value(f)).sum())
        .collect();
    if noise_sigma > 0.0 {
        let noise = Normal::new(0.0, noise_sigma).expect("validated sigma");
        for s in &mut signal {
            *s += noise.sample(rng);
        }
    }
    signal
}

fn point_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sum of Lorentzians on `grid` plus noise drawn from `seed`.
pub fn synthesize_trace(
    lines: &[Line],
    grid: &[f64],
    noise_sigma: f64,
    seed: u64,
) -> Result<Trace, SynthError> {
    synthesize_trace_at(0.0, lines, grid, noise_sigma, seed, 0)
}

fn synthesize_trace_at(
    phi_e: f64,
    lines: &[Line],
    grid: &[f64],
    noise_sigma: f64,
    seed: u64,
    stream: u64,
) -> Result<Trace, SynthError> {
    validate_grid(grid)?;
    for l in lines {
        validate_line(l.fwhm, l.amplitude).map_err(SynthError::Config)?;
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(SynthError::Config(format!("noise_sigma {noise_sigma}")));
    }
    let mut rng = point_rng(seed, stream);
    Ok(Trace {
        phi_e,
        freqs: grid.to_vec(),
        signal: render(lines, grid, noise_sigma, &mut rng),
    })
}

/// A synthetic map together with the noiseless model lines it was drawn from.
#[derive(Debug, Clone)]
pub struct SyntheticMap {
    pub traces: Vec<Trace>,
    /// Model frequencies and charge matrix elements of the configured lines.
    pub truth: TransitionTable,
    /// Realized amplitude per trace and line (after weighting).
    pub amplitudes: Vec<Vec<f64>>,
}

fn line_weight(label: &TransitionLabel, pairs: &Eigenpairs, spec: &SpectrumConfig) -> f64 {
    let elem = |i: usize, j: usize| {
        charge_matrix_element(
            pairs.vectors.column(i).as_slice(),
            pairs.vectors.column(j).as_slice(),
            &spec.basis,
        )
    };
    if label.photons <= 1 || label.upper - label.lower != label.photons as usize {
        elem(label.lower, label.upper).powi(2)
    } else {
        (label.lower..label.upper)
            .map(|i| elem(i, i + 1).powi(2))
            .product()
    }
}

/// One trace per flux point (radians) with lines at the model transitions.
/// Point `i` draws its noise from stream `i` of `cfg.seed`, so the result
/// does not depend on scheduling.
pub fn synthesize_map(
    params: &CircuitParams,
    channels: &NanowireChannels,
    phi_e_grid: &[f64],
    freq_grid: &[f64],
    cfg: &SynthConfig,
    spectrum: &SpectrumConfig,
) -> Result<SyntheticMap, SynthError> {
    cfg.validate()?;
    validate_grid(freq_grid)?;
    params
        .validate()
        .map_err(crate::error::SpectrumError::from)?;
    let mut spec = spectrum.clone();
    spec.labels = cfg.lines.iter().map(|l| l.label).collect();
    let top = spec.labels.iter().map(|l| l.top() + 1).max().unwrap_or(1);
    spec.basis.n_levels = spec.basis.n_levels.max(top);
    spec.validate().map_err(crate::error::SpectrumError::from)?;
    let branches = BranchHarmonics::compute(params, channels, &spec.harmonics)
        .map_err(crate::error::SpectrumError::from)?;

    let results: Vec<_> = phi_e_grid
        .par_iter()
        .enumerate()
        .map(|(index, &phi_e)| -> Result<_, SynthError> {
            let (row, pairs) = solve_point(&branches, params.ec, phi_e, &spec).map_err(|e| {
                crate::error::SpectrumError::AtFlux {
                    index,
                    phi_e,
                    source: Box::new(e),
                }
            })?;
            let lines: Vec<Line> = cfg
                .lines
                .iter()
                .zip(&row.freqs)
                .map(|(ls, &f0)| {
                    let weight = match cfg.weighting {
                        AmplitudeWeighting::Uniform => 1.0,
                        AmplitudeWeighting::ChargeMatrixElement => {
                            line_weight(&ls.label, &pairs, &spec)
                        }
                    };
                    Line {
                        f0,
                        amplitude: ls.amplitude * weight,
                        fwhm: ls.fwhm,
                    }
                })
                .collect();
            let amplitudes = lines.iter().map(|l| l.amplitude).collect();
            let trace = synthesize_trace_at(
                phi_e,
                &lines,
                freq_grid,
                cfg.noise_sigma,
                cfg.seed,
                index as u64,
            )?;
            Ok((trace, row, amplitudes))
        })
        .collect();

    let mut traces = Vec::with_capacity(results.len());
    let mut rows = Vec::with_capacity(results.len());
    let mut amplitudes = Vec::with_capacity(results.len());
    for r in results {
        let (t, row, a) = r?;
        traces.push(t);
        rows.push(row);
        amplitudes.push(a);
    }
    Ok(SyntheticMap {
        traces,
        truth: TransitionTable {
            labels: spec.labels,
            rows,
        },
        amplitudes,
    })
}
