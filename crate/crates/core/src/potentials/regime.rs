use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use super::{total_potential, HarmonicSpectrum};
use crate::params::{CircuitParams, FluxBias, NanowireChannels};

/// Harmonic-parity regime inferred from the location of the potential minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    OddDominated,
    Mixed,
    EvenDominated,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::OddDominated => "odd-dominated",
            Regime::Mixed => "mixed",
            Regime::EvenDominated => "even-dominated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeLabel {
    pub regime: Regime,
    /// Nonnegative representative of the minimizing phase, in `[0, π]`.
    pub phi_min: f64,
}

/// Band edges (radians) used to classify `φ_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeThresholds {
    /// `φ_min` below this is odd-dominated.
    pub odd_max: f64,
    /// `|φ_min - π/2|` below this is even-dominated.
    pub even_band: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            odd_max: 0.1,
            even_band: 0.35,
        }
    }
}

impl RegimeThresholds {
    pub fn classify(&self, phi_min: f64) -> RegimeLabel {
        let regime = if phi_min < self.odd_max {
            Regime::OddDominated
        } else if (phi_min - FRAC_PI_2).abs() < self.even_band {
            Regime::EvenDominated
        } else {
            Regime::Mixed
        };
        RegimeLabel { regime, phi_min }
    }
}

const SCAN_INTERVALS: usize = 4096;

/// Global minimizer of `f` on `[0, π]`: dense scan, then golden-section
/// refinement inside the bracketing cells. The grid contains 0 and π/2
/// exactly, and a refined point only replaces the grid point if it is
/// strictly lower.
pub fn find_phi_min_of(f: impl Fn(f64) -> f64) -> f64 {
    let step = PI / SCAN_INTERVALS as f64;
    let values: Vec<f64> = (0..=SCAN_INTERVALS).map(|i| f(i as f64 * step)).collect();
    let (best_i, &best_v) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty scan");
    let best_x = best_i as f64 * step;
    let lo = best_i.saturating_sub(1) as f64 * step;
    let hi = (best_i + 1).min(SCAN_INTERVALS) as f64 * step;
    let (x, fx) = golden_section(&f, lo, hi, 1e-10);
    if fx < best_v {
        x
    } else {
        best_x
    }
}

fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Minimum of the full (untruncated) qubit potential and its regime.
pub fn find_phi_min(
    params: &CircuitParams,
    channels: &NanowireChannels,
    flux: FluxBias,
    thresholds: &RegimeThresholds,
) -> RegimeLabel {
    let phi_min = find_phi_min_of(|phi| total_potential(phi, params, channels, flux));
    thresholds.classify(phi_min)
}

/// Minimum of a truncated harmonic series.
pub fn find_phi_min_series(spec: &HarmonicSpectrum, thresholds: &RegimeThresholds) -> RegimeLabel {
    thresholds.classify(find_phi_min_of(|phi| spec.evaluate(phi)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_first_harmonic_minimum_is_zero() {
        let spec = HarmonicSpectrum::from_total(vec![0.0, -2.0, 0.0], vec![0.0; 3]).unwrap();
        let label = find_phi_min_series(&spec, &RegimeThresholds::default());
        assert_eq!(label.phi_min, 0.0);
        assert_eq!(label.regime, Regime::OddDominated);
    }

    #[test]
    fn pure_second_harmonic_minimum_is_half_pi() {
        let spec = HarmonicSpectrum::from_total(vec![0.0, 0.0, 3.0], vec![0.0; 3]).unwrap();
        let label = find_phi_min_series(&spec, &RegimeThresholds::default());
        assert_eq!(label.phi_min, FRAC_PI_2);
        assert_eq!(label.regime, Regime::EvenDominated);
    }

    #[test]
    fn refinement_reaches_micro_radian() {
        let target = 1.234_567_89;
        let phi = find_phi_min_of(|x| (x - target).powi(2));
        assert!((phi - target).abs() < 1e-6);
    }

    #[test]
    fn no_channels_single_well() {
        let p = CircuitParams {
            ej1: 30.0,
            ej2: 20.0,
            ecj: 0.5,
            ec: 0.28,
            gap: 40.0,
        };
        let label = find_phi_min(
            &p,
            &NanowireChannels::empty(),
            FluxBias::half_quantum(),
            &RegimeThresholds::default(),
        );
        assert_eq!(label.phi_min, 0.0);
        assert_eq!(label.regime, Regime::OddDominated);
    }

    #[test]
    fn classification_bands() {
        let t = RegimeThresholds::default();
        assert_eq!(t.classify(0.05).regime, Regime::OddDominated);
        assert_eq!(t.classify(1.3).regime, Regime::EvenDominated);
        assert_eq!(t.classify(1.1).regime, Regime::Mixed);
        assert_eq!(t.classify(2.5).regime, Regime::Mixed);
    }
}
