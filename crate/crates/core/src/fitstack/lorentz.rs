//! Per-trace Lorentzian peak fits and hint-driven transition extraction.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lsq::{minimize, LeastSquares, LmConfig};
use super::TransitionPoint;
use crate::error::PeakRejection;
use crate::spectrum::TransitionLabel;
use crate::synth::Trace;

/// Minimum number of samples inside a fit window.
pub const MIN_WINDOW_SAMPLES: usize = 5;

/// Amplitudes below this many standard errors count as "no peak".
pub const NO_PEAK_SNR: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakGuess {
    pub center: f64,
    pub fwhm: f64,
}

/// Fitted `A (Γ/2)^2 / ((f - f0)^2 + (Γ/2)^2) + B` and standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeakFit {
    pub f0: f64,
    pub fwhm: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub sigma_f0: f64,
    pub sigma_fwhm: f64,
    pub sigma_amplitude: f64,
    pub sigma_offset: f64,
}

struct Lorentzian<'a> {
    f: &'a [f64],
    y: &'a [f64],
}

impl Lorentzian<'_> {
    fn model(x: &DVector<f64>, f: f64) -> (f64, [f64; 4]) {
        let (f0, gamma, a, b) = (x[0], x[1], x[2], x[3]);
        let h = 0.5 * gamma;
        let d = f - f0;
        let den = d * d + h * h;
        let shape = h * h / den;
        let grad = [
            a * h * h * 2.0 * d / (den * den),
            a * h * d * d / (den * den),
            shape,
            1.0,
        ];
        (a * shape + b, grad)
    }
}

impl LeastSquares for Lorentzian<'_> {
    type Error = ();

    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>, ()> {
        let r = DVector::from_iterator(
            self.f.len(),
            self.f
                .iter()
                .zip(self.y)
                .map(|(&f, &y)| Self::model(x, f).0 - y),
        );
        if r.iter().all(|v| v.is_finite()) {
            Ok(r)
        } else {
            Err(())
        }
    }

    fn residuals_and_jacobian(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), ()> {
        let n = self.f.len();
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 4);
        for (i, (&f, &y)) in self.f.iter().zip(self.y).enumerate() {
            let (m, g) = Self::model(x, f);
            r[i] = m - y;
            for (c, gc) in g.iter().enumerate() {
                j[(i, c)] = *gc;
            }
        }
        if r.iter().chain(j.iter()).all(|v| v.is_finite()) {
            Ok((r, j))
        } else {
            Err(())
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fit a single Lorentzian plus offset to the samples of `trace` inside
/// `window` (inclusive).
pub fn lorentzian_fit(
    trace: &Trace,
    window: (f64, f64),
    guess: &PeakGuess,
) -> Result<PeakFit, PeakRejection> {
    let (lo, hi) = window;
    let start = trace.freqs.partition_point(|&f| f < lo);
    let end = trace.freqs.partition_point(|&f| f <= hi);
    let n = end.saturating_sub(start);
    if n < MIN_WINDOW_SAMPLES {
        return Err(PeakRejection::TooFewSamples(n));
    }
    let f = &trace.freqs[start..end];
    let y = &trace.signal[start..end];

    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("window is non-empty");
    let offset = median(y);
    let step = (f[n - 1] - f[0]) / (n - 1) as f64;
    let fwhm = if guess.fwhm > 0.0 {
        guess.fwhm
    } else {
        4.0 * step
    };
    let x0 = DVector::from_vec(vec![f[imax], fwhm, ymax - offset, offset]);

    let cfg = LmConfig {
        max_iter: 400,
        ftol: 1e-15,
        xtol: 1e-15,
        gtol: 1e-15,
        ..LmConfig::default()
    };
    let report = minimize(&Lorentzian { f, y }, x0, &cfg)
        .map_err(|_| PeakRejection::NoConvergence("non-finite model value".into()))?;
    if !report.converged() {
        return Err(PeakRejection::NoConvergence(format!(
            "{:?} after {} steps",
            report.termination, report.iterations
        )));
    }
    let x = &report.x;
    let (f0, gamma, amplitude, offset) = (x[0], x[1].abs(), x[2], x[3]);
    let sigmas = report
        .covariance()
        .map(|c| [0, 1, 2, 3].map(|i| c[(i, i)].max(0.0).sqrt()));
    let Some(sigmas) = sigmas else {
        return Err(PeakRejection::NoPeak {
            amplitude,
            sigma: f64::INFINITY,
        });
    };
    if !(amplitude > 0.0) || amplitude < NO_PEAK_SNR * sigmas[2] {
        return Err(PeakRejection::NoPeak {
            amplitude,
            sigma: sigmas[2],
        });
    }
    if !(gamma > 0.0 && gamma.is_finite()) || gamma > 2.0 * (hi - lo) {
        return Err(PeakRejection::BadWidth(gamma));
    }
    if !(lo..=hi).contains(&f0) {
        return Err(PeakRejection::OutsideWindow { f0, lo, hi });
    }
    Ok(PeakFit {
        f0,
        fwhm: gamma,
        amplitude,
        offset,
        sigma_f0: sigmas[0],
        sigma_fwhm: sigmas[1],
        sigma_amplitude: sigmas[2],
        sigma_offset: sigmas[3],
    })
}

/// Coarse curve for one transition: a center per trace (NaN to skip).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionHint {
    pub label: TransitionLabel,
    pub centers: Vec<f64>,
    /// Half-width of the fit window around each center (GHz).
    pub half_width: f64,
    pub fwhm_guess: f64,
    /// Whether extracted points enter the global fit.
    pub used: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    /// Hints whose centers are closer than this (GHz) are both skipped;
    /// otherwise neighbouring windows are clipped at the midpoint.
    pub min_separation: f64,
    /// Lower bound on reported frequency uncertainties (GHz).
    pub sigma_floor: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            min_separation: 0.02,
            sigma_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionFailure {
    pub trace_index: usize,
    pub label: TransitionLabel,
    pub reason: PeakRejection,
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub points: Vec<TransitionPoint>,
    pub failures: Vec<ExtractionFailure>,
}

fn extract_one(
    trace_index: usize,
    trace: &Trace,
    hints: &[TransitionHint],
    cfg: &ExtractConfig,
) -> Vec<Result<TransitionPoint, ExtractionFailure>> {
    let centers: Vec<f64> = hints
        .iter()
        .map(|h| h.centers.get(trace_index).copied().unwrap_or(f64::NAN))
        .collect();
    let mut out = Vec::new();
    for (hi, hint) in hints.iter().enumerate() {
        let c = centers[hi];
        if !c.is_finite() {
            continue;
        }
        let fail = |reason| ExtractionFailure {
            trace_index,
            label: hint.label,
            reason,
        };
        let (mut lo, mut up) = (c - hint.half_width, c + hint.half_width);
        let mut overlap = None;
        for (oi, &co) in centers.iter().enumerate() {
            if oi == hi || !co.is_finite() {
                continue;
            }
            let sep = (co - c).abs();
            if sep < cfg.min_separation {
                overlap = Some(PeakRejection::Overlap {
                    other: hints[oi].label.to_string(),
                    separation: sep,
                });
                break;
            }
            let mid = 0.5 * (c + co);
            if co > c {
                up = up.min(mid);
            } else {
                lo = lo.max(mid);
            }
        }
        if let Some(reason) = overlap {
            out.push(Err(fail(reason)));
            continue;
        }
        let guess = PeakGuess {
            center: c,
            fwhm: hint.fwhm_guess,
        };
        out.push(
            lorentzian_fit(trace, (lo, up), &guess)
                .map(|fit| TransitionPoint {
                    phi_e: trace.phi_e,
                    label: hint.label,
                    freq: fit.f0,
                    sigma: fit.sigma_f0.max(cfg.sigma_floor),
                    used: hint.used,
                })
                .map_err(fail),
        );
    }
    out
}

/// Fit every (trace, hint) pair. Rejected fits are logged and collected,
/// not emitted as points.
pub fn extract_transitions(
    traces: &[Trace],
    hints: &[TransitionHint],
    cfg: &ExtractConfig,
) -> Extraction {
    let per_trace: Vec<_> = traces
        .par_iter()
        .enumerate()
        .map(|(i, t)| extract_one(i, t, hints, cfg))
        .collect();
    let mut extraction = Extraction::default();
    for res in per_trace.into_iter().flatten() {
        match res {
            Ok(p) => extraction.points.push(p),
            Err(f) => {
                log::warn!(
                    "trace {} ({}): peak rejected: {}",
                    f.trace_index,
                    f.label,
                    f.reason
                );
                extraction.failures.push(f);
            }
        }
    }
    extraction
}
