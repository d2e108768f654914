//! Device parameters shared by every model stage.
//!
//! All energies are in GHz (energy divided by Planck's constant), so
//! eigenvalue differences are transition frequencies directly.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::ParamError;

/// Global circuit constants of the device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitParams {
    /// Josephson energy of the first tunnel junction.
    pub ej1: f64,
    /// Josephson energy of the second tunnel junction.
    pub ej2: f64,
    /// Charging energy of the tunnel junctions (internal mode).
    pub ecj: f64,
    /// Charging energy of the qubit island.
    pub ec: f64,
    /// Superconducting gap of the nanowire leads.
    pub gap: f64,
}

/// Default `E_JΣ / E_CJ` threshold for the Born-Oppenheimer validity check.
pub const BO_RATIO_THRESHOLD: f64 = 10.0;

impl CircuitParams {
    /// Symmetric junction pair: `ej1 = ej2 = ej`.
    pub fn symmetric(ej: f64, ecj: f64, ec: f64, gap: f64) -> Self {
        Self {
            ej1: ej,
            ej2: ej,
            ecj,
            ec,
            gap,
        }
    }

    /// Global parameters of the harmonic parity qubit device.
    pub fn hpq_device() -> Self {
        Self::symmetric(55.03, 0.675, 0.280, 40.06)
    }

    /// Double-junction transmon from the same chip (no nanowire branch).
    pub fn double_junction_transmon() -> Self {
        Self::symmetric(59.96, 0.583, 0.280, 40.06)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        for (field, value) in [
            ("ej1", self.ej1),
            ("ej2", self.ej2),
            ("ecj", self.ecj),
            ("ec", self.ec),
            ("gap", self.gap),
        ] {
            if !value.is_finite() {
                return Err(ParamError::NotFinite { field, value });
            }
        }
        // A zero junction energy or zero junction charging energy are
        // meaningful limits (single junction, no internal mode).
        for (field, value) in [("ej1", self.ej1), ("ej2", self.ej2), ("ecj", self.ecj)] {
            if value < 0.0 {
                return Err(ParamError::OutOfRange {
                    field,
                    constraint: "non-negative",
                    value,
                });
            }
        }
        for (field, value) in [
            ("ec", self.ec),
            ("gap", self.gap),
            ("ej1 + ej2", self.ej_sum()),
        ] {
            if value <= 0.0 {
                return Err(ParamError::OutOfRange {
                    field,
                    constraint: "strictly positive",
                    value,
                });
            }
        }
        Ok(())
    }

    /// `E_JΣ = E_J1 + E_J2`.
    pub fn ej_sum(&self) -> f64 {
        self.ej1 + self.ej2
    }

    /// Junction asymmetry `λ = 4 E_J1 E_J2 / (E_J1 + E_J2)^2`, in `[0, 1]`.
    pub fn lambda(&self) -> f64 {
        let s = self.ej_sum();
        if s == 0.0 {
            return 0.0;
        }
        (4.0 * self.ej1 * self.ej2 / (s * s)).clamp(0.0, 1.0)
    }
}

/// Transmissions of the nanowire conduction channels at one gate setting,
/// stored in descending order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct NanowireChannels(Vec<f64>);

impl NanowireChannels {
    pub fn new(mut transmissions: Vec<f64>) -> Result<Self, ParamError> {
        for (index, &value) in transmissions.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(ParamError::Transmission { index, value });
            }
        }
        transmissions.sort_by(|a, b| b.total_cmp(a));
        Ok(Self(transmissions))
    }

    /// Open nanowire branch (no conducting channels).
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn transmissions(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl TryFrom<Vec<f64>> for NanowireChannels {
    type Error = ParamError;

    fn try_from(value: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<NanowireChannels> for Vec<f64> {
    fn from(value: NanowireChannels) -> Self {
        value.0
    }
}

/// Reduced external flux `φ_e = 2π Φ_e / Φ_0`, canonicalized to `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct FluxBias(f64);

impl FluxBias {
    pub fn from_radians(phi_e: f64) -> Self {
        Self(wrap_phase(phi_e))
    }

    /// Flux in units of the flux quantum.
    pub fn from_phi0(flux: f64) -> Self {
        Self::from_radians(TAU * flux)
    }

    pub fn half_quantum() -> Self {
        Self(-PI)
    }

    pub fn radians(&self) -> f64 {
        self.0
    }

    /// Flux in units of `Φ_0`, in `[-1/2, 1/2)`.
    pub fn phi0(&self) -> f64 {
        self.0 / TAU
    }
}

/// Map an angle onto `[-π, π)`.
pub fn wrap_phase(phi: f64) -> f64 {
    let wrapped = (phi + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if wrapped >= PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_is_one_for_equal_junctions() {
        let p = CircuitParams::symmetric(10.0, 0.5, 0.28, 40.0);
        assert_eq!(p.lambda(), 1.0);
        assert_eq!(p.ej_sum(), 20.0);
    }

    #[test]
    fn lambda_vanishes_for_single_junction() {
        let p = CircuitParams {
            ej1: 3.0,
            ej2: 0.0,
            ecj: 0.0,
            ec: 0.28,
            gap: 40.0,
        };
        assert!(p.validate().is_ok());
        assert_eq!(p.lambda(), 0.0);
    }

    #[test]
    fn rejects_negative_and_nan() {
        let mut p = CircuitParams::hpq_device();
        p.ec = 0.0;
        assert!(matches!(
            p.validate(),
            Err(ParamError::OutOfRange { field: "ec", .. })
        ));
        p.ec = f64::NAN;
        assert!(matches!(
            p.validate(),
            Err(ParamError::NotFinite { field: "ec", .. })
        ));
        let mut p = CircuitParams::hpq_device();
        p.ej2 = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn channels_sorted_descending() {
        let ch = NanowireChannels::new(vec![0.46, 0.68, 0.47]).unwrap();
        assert_eq!(ch.transmissions(), &[0.68, 0.47, 0.46]);
        assert!(NanowireChannels::new(vec![1.2]).is_err());
        assert!(NanowireChannels::new(vec![f64::NAN]).is_err());
        assert!(NanowireChannels::new(vec![]).unwrap().is_empty());
    }

    #[test]
    fn flux_canonical_range() {
        assert_eq!(FluxBias::from_phi0(0.5).radians(), -PI);
        assert_eq!(FluxBias::from_radians(PI).radians(), -PI);
        let f = FluxBias::from_radians(3.0 * PI + 0.25);
        assert!((f.radians() - (-PI + 0.25)).abs() < 1e-12);
        assert!((FluxBias::from_phi0(0.25).phi0() - 0.25).abs() < 1e-15);
    }
}
