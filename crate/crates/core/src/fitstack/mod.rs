//! From spectroscopy traces to device parameters: Lorentzian peak
//! extraction, a global least-squares fit across gate voltages, and
//! channel-count selection.

mod global;
mod lorentz;
pub mod lsq;
mod model;

use serde::{Deserialize, Serialize};

pub use global::{
    choose_count, fit_gates_fixed, fit_global, mutually_comparable, select_channel_count,
    start_transmissions, ChannelSelection, CountFit, FitConfig, FitResult, GateFit, GlobalBounds,
    BOUNDARY_TOL,
};
pub use lorentz::{
    extract_transitions, lorentzian_fit, ExtractConfig, Extraction, ExtractionFailure, PeakFit,
    PeakGuess, TransitionHint, MIN_WINDOW_SAMPLES, NO_PEAK_SNR,
};
pub use model::{
    default_free_globals, model_jacobian, model_residuals, GlobalParam, ParamBounds, Theta,
    ThetaLayout,
};

use crate::error::FitError;
use crate::params::FluxBias;
use crate::spectrum::TransitionLabel;
use crate::synth::Trace;

/// One extracted transition frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionPoint {
    /// Reduced flux in radians.
    pub phi_e: f64,
    pub label: TransitionLabel,
    pub freq: f64,
    /// One-sigma uncertainty of `freq` (GHz), strictly positive.
    pub sigma: f64,
    /// Points with `used = false` never enter a fit.
    pub used: bool,
}

impl TransitionPoint {
    pub fn flux(&self) -> FluxBias {
        FluxBias::from_radians(self.phi_e)
    }

    pub fn flux_phi0(&self) -> f64 {
        self.phi_e / std::f64::consts::TAU
    }
}

/// All transition points measured at one gate voltage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpectroscopyDataset {
    /// Gate voltage (V); a tag only.
    pub gate_v: f64,
    pub points: Vec<TransitionPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub traces: Vec<Trace>,
}

impl SpectroscopyDataset {
    pub fn new(gate_v: f64, points: Vec<TransitionPoint>) -> Self {
        Self {
            gate_v,
            points,
            traces: Vec::new(),
        }
    }

    pub fn tag(&self) -> String {
        format!("gate {} V", self.gate_v)
    }

    pub fn used_points(&self) -> impl Iterator<Item = &TransitionPoint> {
        self.points.iter().filter(|p| p.used)
    }
}

/// Unweighted root-mean-square difference (GHz).
pub fn rmse(model: &[f64], data: &[f64]) -> Result<f64, FitError> {
    if model.len() != data.len() {
        return Err(FitError::RmseLength {
            model: model.len(),
            data: data.len(),
        });
    }
    if model.is_empty() {
        return Err(FitError::EmptyRmse);
    }
    let ss: f64 = model.iter().zip(data).map(|(m, d)| (m - d).powi(2)).sum();
    Ok((ss / model.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[5.1], &[5.0]).unwrap() - 0.1).abs() < 1e-12);
        let r = rmse(&[1.3, 2.4], &[1.0, 2.0]).unwrap();
        assert!((r - 0.353_553_390_593_273_8).abs() < 1e-12);
        assert_eq!(rmse(&[], &[]), Err(FitError::EmptyRmse));
        assert!(rmse(&[1.0], &[]).is_err());
    }
}
