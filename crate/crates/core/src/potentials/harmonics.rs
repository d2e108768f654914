use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{andreev_root, sis_branch, total_potential_with};
use crate::error::ParamError;
use crate::params::{CircuitParams, FluxBias, NanowireChannels};
use crate::quadrature::{FourierRule, MAX_HARMONIC};

/// Relative size of the last retained harmonic above which a spectrum is
/// flagged as under-resolved.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-4;

/// `|c_odd|` below this (GHz) reports the parity ratio as infinite.
pub const ODD_SUM_FLOOR: f64 = 1e-6;

/// Truncation and branch options for harmonic decompositions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarmonicConfig {
    pub k_max: usize,
    /// Include the Born-Oppenheimer term in the tunnel-junction arm.
    pub include_bo: bool,
}

impl Default for HarmonicConfig {
    fn default() -> Self {
        Self {
            k_max: 10,
            include_bo: true,
        }
    }
}

impl HarmonicConfig {
    pub fn with_k_max(k_max: usize) -> Self {
        Self {
            k_max,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if !(1..=MAX_HARMONIC).contains(&self.k_max) {
            return Err(ParamError::KMax(self.k_max));
        }
        Ok(())
    }
}

/// Truncated Fourier content of the two arms and of the total potential.
///
/// Index `k` runs over `0..=k_max`. Entry 0 holds the mean value of the
/// potential; entries `k >= 1` are amplitudes in
/// `U(φ) = c_0 + Σ_k [c_k cos kφ + s_k sin kφ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicSpectrum {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub c: Vec<f64>,
    pub s: Vec<f64>,
}

impl HarmonicSpectrum {
    /// Decompose both arms and combine them at the given flux.
    pub fn compute(
        params: &CircuitParams,
        channels: &NanowireChannels,
        flux: FluxBias,
        cfg: &HarmonicConfig,
    ) -> Result<Self, ParamError> {
        let u = fourier_u(params, cfg)?;
        let v = fourier_v(channels, params.gap, cfg)?;
        combine_harmonics(&u, &v, flux)
    }

    /// A bare total-potential series (branch coefficients left at zero).
    pub fn from_total(c: Vec<f64>, s: Vec<f64>) -> Result<Self, ParamError> {
        if c.len() != s.len() {
            return Err(ParamError::LengthMismatch {
                left: c.len(),
                right: s.len(),
            });
        }
        if c.len() < 2 {
            return Err(ParamError::KMax(c.len().saturating_sub(1)));
        }
        let n = c.len();
        Ok(Self {
            u: vec![0.0; n],
            v: vec![0.0; n],
            c,
            s,
        })
    }

    pub fn k_max(&self) -> usize {
        self.c.len() - 1
    }

    /// `|c[k_max]| / max_{k>=1} |c[k]|`.
    pub fn tail_ratio(&self) -> f64 {
        let peak = self.c[1..]
            .iter()
            .chain(&self.s[1..])
            .fold(0.0f64, |m, x| m.max(x.abs()));
        if peak == 0.0 {
            return 0.0;
        }
        let k = self.k_max();
        self.c[k].abs().max(self.s[k].abs()) / peak
    }

    pub fn is_converged(&self) -> bool {
        self.tail_ratio() <= CONVERGENCE_THRESHOLD
    }

    /// Evaluate the truncated series (offset included).
    pub fn evaluate(&self, phi: f64) -> f64 {
        self.c[0]
            + (1..=self.k_max())
                .map(|k| {
                    let (sk, ck) = (k as f64 * phi).sin_cos();
                    self.c[k] * ck + self.s[k] * sk
                })
                .sum::<f64>()
    }
}

/// Harmonics of the tunnel-junction arm (Born-Oppenheimer term per `cfg`).
pub fn fourier_u(params: &CircuitParams, cfg: &HarmonicConfig) -> Result<Vec<f64>, ParamError> {
    cfg.validate()?;
    params.validate()?;
    let rule = FourierRule::cusp_at_pi();
    Ok(rule.cosine_coefficients(|phi| sis_branch(phi, params, cfg.include_bo), cfg.k_max))
}

/// Harmonics of `-sqrt(1 - T sin^2(φ/2))` (one channel, unit gap).
pub fn single_channel_harmonics(t: f64, k_max: usize) -> Vec<f64> {
    if t == 0.0 {
        let mut out = vec![0.0; k_max + 1];
        out[0] = -1.0;
        return out;
    }
    FourierRule::cusp_at_pi().cosine_coefficients(|phi| -andreev_root(t, phi), k_max)
}

/// Harmonics of the nanowire arm at zero flux.
pub fn fourier_v(
    channels: &NanowireChannels,
    gap: f64,
    cfg: &HarmonicConfig,
) -> Result<Vec<f64>, ParamError> {
    cfg.validate()?;
    let mut v = vec![0.0; cfg.k_max + 1];
    for &t in channels.transmissions() {
        for (acc, h) in v.iter_mut().zip(single_channel_harmonics(t, cfg.k_max)) {
            *acc += gap * h;
        }
    }
    Ok(v)
}

/// `(cos kφ_e, sin kφ_e)` with the half-flux point treated exactly.
pub(crate) fn flux_phases(flux: FluxBias, k_max: usize) -> Vec<(f64, f64)> {
    let phi = flux.radians();
    let at_half = (phi.abs() - PI).abs() < 1e-15;
    (0..=k_max)
        .map(|k| {
            if phi == 0.0 {
                (1.0, 0.0)
            } else if at_half {
                (if k % 2 == 0 { 1.0 } else { -1.0 }, 0.0)
            } else {
                let (s, c) = (k as f64 * phi).sin_cos();
                (c, s)
            }
        })
        .collect()
}

/// Total-potential harmonics: `c_k = u_k + cos(kφ_e) v_k`, `s_k = sin(kφ_e) v_k`.
pub fn combine_harmonics(
    u: &[f64],
    v: &[f64],
    flux: FluxBias,
) -> Result<HarmonicSpectrum, ParamError> {
    if u.len() != v.len() {
        return Err(ParamError::LengthMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    if u.len() < 2 {
        return Err(ParamError::KMax(u.len().saturating_sub(1)));
    }
    let phases = flux_phases(flux, u.len() - 1);
    let mut c = Vec::with_capacity(u.len());
    let mut s = Vec::with_capacity(u.len());
    for (k, ((&uk, &vk), &(cos_k, sin_k))) in u.iter().zip(v).zip(&phases).enumerate() {
        c.push(uk + cos_k * vk);
        s.push(if k == 0 { 0.0 } else { sin_k * vk });
    }
    Ok(HarmonicSpectrum {
        u: u.to_vec(),
        v: v.to_vec(),
        c,
        s,
    })
}

/// Direct decomposition of the total potential, independent of the
/// branch-by-branch route.
pub fn total_fourier(
    params: &CircuitParams,
    channels: &NanowireChannels,
    flux: FluxBias,
    cfg: &HarmonicConfig,
) -> Result<(Vec<f64>, Vec<f64>), ParamError> {
    cfg.validate()?;
    params.validate()?;
    let rule = FourierRule::new(&[flux.radians() + PI]);
    Ok(rule.coefficients(
        |phi| total_potential_with(phi, params, channels, flux, cfg.include_bo),
        cfg.k_max,
    ))
}

/// Signed even/odd harmonic sums and their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParitySums {
    /// `Σ_{i>=1} c_{2i}`.
    pub c_even: f64,
    /// `Σ_{i>=0} c_{2i+1}`.
    pub c_odd: f64,
    /// `|c_even / c_odd|`, `+∞` when `|c_odd|` is below [`ODD_SUM_FLOOR`].
    pub ratio: f64,
}

pub fn parity_sums(spec: &HarmonicSpectrum) -> ParitySums {
    parity_sums_of(&spec.c)
}

pub(crate) fn parity_sums_of(c: &[f64]) -> ParitySums {
    let c_even: f64 = c.iter().skip(2).step_by(2).sum();
    let c_odd: f64 = c.iter().skip(1).step_by(2).sum();
    let ratio = if c_odd.abs() < ODD_SUM_FLOOR {
        f64::INFINITY
    } else {
        (c_even / c_odd).abs()
    };
    ParitySums {
        c_even,
        c_odd,
        ratio,
    }
}
