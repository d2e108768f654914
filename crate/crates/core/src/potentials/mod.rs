//! Branch potentials of the hybrid SQUID and their harmonic content.
//!
//! The tunnel-junction arm contributes the series double-junction potential
//! plus its Born-Oppenheimer correction from the integrated-out internal
//! mode; the nanowire arm contributes one Andreev term per conduction
//! channel, displaced by the external flux.

mod harmonics;
mod regime;

pub(crate) use harmonics::parity_sums_of;
pub use harmonics::{
    combine_harmonics, fourier_u, fourier_v, parity_sums, single_channel_harmonics, total_fourier,
    HarmonicConfig, HarmonicSpectrum, ParitySums, CONVERGENCE_THRESHOLD, ODD_SUM_FLOOR,
};
pub use regime::{
    find_phi_min, find_phi_min_of, find_phi_min_series, Regime, RegimeLabel, RegimeThresholds,
};

use crate::params::{CircuitParams, FluxBias, NanowireChannels, BO_RATIO_THRESHOLD};

#[inline]
fn half_sin_sq(phi: f64) -> f64 {
    let s = (0.5 * phi).sin();
    s * s
}

/// `sqrt(1 - λ sin^2(φ/2))`, clamped against rounding below zero.
#[inline]
pub(crate) fn andreev_root(t: f64, phi: f64) -> f64 {
    (1.0 - t * half_sin_sq(phi)).max(0.0).sqrt()
}

/// Double tunnel-junction potential `-E_JΣ sqrt(1 - λ sin^2(φ/2))`.
pub fn sissis_potential(phi: f64, params: &CircuitParams) -> f64 {
    -params.ej_sum() * andreev_root(params.lambda(), phi)
}

/// Born-Oppenheimer correction `E_JΣ sqrt((E_CJ/E_JΣ) sqrt(1 - λ sin^2(φ/2)))`.
pub fn bo_correction(phi: f64, params: &CircuitParams) -> f64 {
    (params.ecj * params.ej_sum() * andreev_root(params.lambda(), phi)).sqrt()
}

/// Tunnel-junction arm, optionally with the internal-mode correction.
pub fn sis_branch(phi: f64, params: &CircuitParams, include_bo: bool) -> f64 {
    let root = andreev_root(params.lambda(), phi);
    let s = params.ej_sum();
    let bo = if include_bo {
        (params.ecj * s * root).sqrt()
    } else {
        0.0
    };
    -s * root + bo
}

/// Nanowire potential `-Δ Σ_i sqrt(1 - T_i sin^2((φ - φ_e)/2))`.
pub fn sns_potential(phi: f64, channels: &NanowireChannels, gap: f64, flux: FluxBias) -> f64 {
    let shifted = phi - flux.radians();
    -gap * channels
        .transmissions()
        .iter()
        .map(|&t| andreev_root(t, shifted))
        .sum::<f64>()
}

/// Full qubit potential including the Born-Oppenheimer correction.
pub fn total_potential(
    phi: f64,
    params: &CircuitParams,
    channels: &NanowireChannels,
    flux: FluxBias,
) -> f64 {
    total_potential_with(phi, params, channels, flux, true)
}

pub fn total_potential_with(
    phi: f64,
    params: &CircuitParams,
    channels: &NanowireChannels,
    flux: FluxBias,
    include_bo: bool,
) -> f64 {
    sis_branch(phi, params, include_bo) + sns_potential(phi, channels, params.gap, flux)
}

/// Lowest internal-mode frequency `sqrt(4 E_CJ E_JΣ)` in GHz.
pub fn internal_mode_freq(params: &CircuitParams) -> f64 {
    (4.0 * params.ecj * params.ej_sum()).sqrt()
}

/// Born-Oppenheimer applicability checks.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BoValidity {
    /// `E_CJ > E_C`.
    pub ecj_exceeds_ec: bool,
    /// `E_JΣ / E_CJ` at or above the threshold.
    pub ratio_ok: bool,
    /// Internal mode lies above the highest transition of interest.
    pub internal_mode_above: bool,
    pub ratio: f64,
    pub internal_mode_ghz: f64,
}

impl BoValidity {
    pub fn all(&self) -> bool {
        self.ecj_exceeds_ec && self.ratio_ok && self.internal_mode_above
    }
}

pub fn validate_bo(params: &CircuitParams, max_transition_ghz: f64) -> BoValidity {
    validate_bo_with(params, max_transition_ghz, BO_RATIO_THRESHOLD)
}

pub fn validate_bo_with(
    params: &CircuitParams,
    max_transition_ghz: f64,
    ratio_threshold: f64,
) -> BoValidity {
    let ratio = if params.ecj > 0.0 {
        params.ej_sum() / params.ecj
    } else {
        f64::INFINITY
    };
    let f_int = internal_mode_freq(params);
    BoValidity {
        ecj_exceeds_ec: params.ecj > params.ec,
        ratio_ok: ratio >= ratio_threshold,
        internal_mode_above: f_int > max_transition_ghz,
        ratio,
        internal_mode_ghz: f_int,
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn unit_pair() -> CircuitParams {
        CircuitParams::symmetric(1.0, 0.5, 0.28, 40.0)
    }

    #[test]
    fn sissis_examples() {
        let p = unit_pair();
        assert_eq!(sissis_potential(0.0, &p), -2.0);
        assert!(sissis_potential(PI, &p).abs() < 1e-15);
        let single = CircuitParams {
            ej1: 1.7,
            ej2: 0.0,
            ecj: 0.0,
            ec: 0.28,
            gap: 40.0,
        };
        for phi in [-2.0, 0.1, 1.3, 3.0] {
            assert_eq!(sissis_potential(phi, &single), -1.7);
        }
    }

    #[test]
    fn bo_examples() {
        let p = unit_pair();
        assert!((bo_correction(0.0, &p) - (0.5f64 * 2.0).sqrt()).abs() < 1e-15);
        assert!(bo_correction(PI, &p).abs() < 1e-7);
        let dj = CircuitParams::double_junction_transmon();
        let v = bo_correction(0.0, &dj);
        assert!((v - (0.583f64 * 119.92).sqrt()).abs() < 1e-12);
        assert!((v - 8.36).abs() < 0.005);
    }

    #[test]
    fn sns_examples() {
        let flux = FluxBias::from_radians(0.4);
        for phi in [-1.0, 0.0, 2.5] {
            assert_eq!(
                sns_potential(phi, &NanowireChannels::empty(), 40.0, flux),
                0.0
            );
        }
        let open = NanowireChannels::new(vec![1.0]).unwrap();
        assert!(sns_potential(0.4 + PI, &open, 40.0, flux).abs() < 1e-12);
        let closed = NanowireChannels::new(vec![0.0]).unwrap();
        assert_eq!(sns_potential(1.234, &closed, 40.0, flux), -40.0);
    }

    #[test]
    fn potentials_are_even_and_periodic() {
        let p = CircuitParams::hpq_device();
        let ch = NanowireChannels::new(vec![0.9, 0.5]).unwrap();
        let zero = FluxBias::from_radians(0.0);
        for phi in [0.3, 1.1, 2.9] {
            let u = total_potential(phi, &p, &ch, zero);
            assert!((u - total_potential(-phi, &p, &ch, zero)).abs() < 1e-12);
            assert!((u - total_potential(phi + 2.0 * PI, &p, &ch, zero)).abs() < 1e-10);
            let flux = FluxBias::from_radians(0.7);
            let a = sns_potential(phi, &ch, p.gap, flux);
            let b = sns_potential(phi, &ch, p.gap, FluxBias::from_radians(0.7 + 2.0 * PI));
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn total_without_channels_is_sis_branch() {
        let p = CircuitParams::hpq_device();
        let flux = FluxBias::from_radians(1.0);
        for phi in [0.0, 0.5, 2.0, -3.0] {
            let expect = sissis_potential(phi, &p) + bo_correction(phi, &p);
            let got = total_potential(phi, &p, &NanowireChannels::empty(), flux);
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn internal_mode_examples() {
        let dj = CircuitParams::double_junction_transmon();
        assert!((internal_mode_freq(&dj) - 16.72).abs() < 0.01);
        let mut p = dj;
        p.ecj = 0.0;
        assert_eq!(internal_mode_freq(&p), 0.0);
        let mut q = dj;
        q.ecj *= 4.0;
        assert!((internal_mode_freq(&q) - 2.0 * internal_mode_freq(&dj)).abs() < 1e-12);
    }

    #[test]
    fn bo_validity_checks() {
        let hpq = CircuitParams::hpq_device();
        let report = validate_bo(&hpq, 12.0);
        assert!(report.all(), "{report:?}");
        let mut p = hpq;
        p.ec = 1.0;
        assert!(!validate_bo(&p, 12.0).ecj_exceeds_ec);
        let q = CircuitParams::symmetric(0.5, 1.0, 0.28, 40.0);
        assert!(!validate_bo(&q, 1.0).ratio_ok);
        assert!(!validate_bo(&hpq, 30.0).internal_mode_above);
    }
}
