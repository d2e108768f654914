//! Run configuration: one TOML document per run.
//!
//! ```toml
//! [circuit]            # ej1, ej2, ecj, ec, gap (GHz)
//! [nanowire]           # transmissions = [...]
//! [harmonics]          # k_max, include_bo
//! [basis]              # n_cut, n_g, n_levels
//! [regime]             # odd_max, even_band (rad)
//! [potential]          # u: junction-arm harmonics u_0.. replacing the circuit's (sweep only)
//! [decompose]          # flux_phi0, max_transition_ghz
//! [sweep]              # flux_phi0 grid, labels
//! [synth]              # seed, noise_sigma, weighting, lines, flux_phi0 and drive_ghz grids
//! [fit]                # datasets, counts, solver, extract, maps
//! [classify]           # flux_phi0, reference_gate, parity_states, gates
//! ```
//!
//! Energies are GHz and flux is in units of the flux quantum throughout.
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hpq::analysis::GatePoint;
use hpq::fitstack::{ExtractConfig, FitConfig};
use hpq::potentials::{HarmonicConfig, RegimeThresholds};
use hpq::spectrum::{ChargeBasisConfig, TransitionLabel};
use hpq::synth::{AmplitudeWeighting, LineSpec};
use hpq::CircuitParams;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub circuit: Option<CircuitParams>,
    pub nanowire: Nanowire,
    pub harmonics: HarmonicConfig,
    pub basis: ChargeBasisConfig,
    pub regime: RegimeThresholds,
    pub potential: Option<Potential>,
    pub decompose: DecomposeSection,
    pub sweep: SweepSection,
    pub synth: Option<SynthSection>,
    pub fit: FitSection,
    pub classify: ClassifySection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Nanowire {
    pub transmissions: Vec<f64>,
}

/// Explicit junction-arm harmonics `u_k`, `k = 0..`; missing orders are
/// zero. `u = [0.0, -9.8]` with no channels is a plain transmon.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Potential {
    pub u: Vec<f64>,
}

/// `points` samples from `start` to `stop` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        hpq::synth::linear_grid(self.start, self.stop, self.points)
    }

    pub fn validate(&self, name: &str) -> Result<(), String> {
        if !(self.start.is_finite() && self.stop.is_finite()) {
            return Err(format!("{name}: start and stop must be finite"));
        }
        if self.points == 0 {
            return Err(format!("{name}: points must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeSection {
    pub flux_phi0: f64,
    /// Highest transition of interest, for the internal-mode check.
    pub max_transition_ghz: f64,
}

impl Default for DecomposeSection {
    fn default() -> Self {
        Self {
            flux_phi0: 0.5,
            max_transition_ghz: 25.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub flux_phi0: Grid,
    /// Defaults to every pair of the requested levels plus f02/2 and f03/3.
    pub labels: Option<Vec<TransitionLabel>>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            flux_phi0: Grid {
                start: 0.0,
                stop: 1.0,
                points: 101,
            },
            labels: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub seed: Option<u64>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub weighting: AmplitudeWeighting,
    pub lines: Vec<LineSpec>,
    pub flux_phi0: Grid,
    pub drive_ghz: Grid,
}

/// A spectroscopy map to run peak extraction on before fitting.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapInput {
    pub path: PathBuf,
    pub gate_v: f64,
    /// Transmissions used to place the extraction windows.
    pub transmissions: Vec<f64>,
    pub labels: Vec<TransitionLabel>,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default = "default_fwhm_guess")]
    pub fwhm_guess: f64,
}

fn default_half_width() -> f64 {
    0.03
}

fn default_fwhm_guess() -> f64 {
    0.01
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub datasets: Vec<PathBuf>,
    pub maps: Vec<MapInput>,
    /// Channels per gate in the global fit.
    pub channels: usize,
    /// Initial transmissions per gate; defaults to the start grid.
    pub initial_transmissions: Option<Vec<Vec<f64>>>,
    /// Counts compared by model selection; empty skips selection.
    pub counts: Vec<usize>,
    pub solver: FitConfig,
    pub extract: ExtractConfig,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            datasets: Vec::new(),
            maps: Vec::new(),
            channels: 3,
            initial_transmissions: None,
            counts: Vec::new(),
            solver: FitConfig::default(),
            extract: ExtractConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySection {
    pub flux_phi0: f64,
    pub reference_gate: usize,
    pub parity_states: usize,
    pub gates: Vec<GatePoint>,
}

impl Default for ClassifySection {
    fn default() -> Self {
        Self {
            flux_phi0: 0.5,
            reference_gate: 0,
            parity_states: 2,
            gates: Vec::new(),
        }
    }
}

/// Channel counts given on the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Counts(pub Vec<usize>);

/// Parse `3`, `2..5` (inclusive), `2..=5` or `2,3,5`.
pub fn parse_counts(s: &str) -> Result<Counts, String> {
    let s = s.trim();
    let bad = || format!("invalid channel list {s:?}; use e.g. 3, 2..5 or 2,3,4");
    if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let lo: usize = a.trim().parse().map_err(|_| bad())?;
        let hi: usize = b.trim().parse().map_err(|_| bad())?;
        if lo == 0 || hi < lo {
            return Err(bad());
        }
        return Ok(Counts((lo..=hi).collect()));
    }
    let counts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    if counts.is_empty() || counts.contains(&0) {
        return Err(bad());
    }
    Ok(Counts(counts))
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_lists() {
        assert_eq!(parse_counts("3").unwrap().0, vec![3]);
        assert_eq!(parse_counts("2..5").unwrap().0, vec![2, 3, 4, 5]);
        assert_eq!(parse_counts("2..=4").unwrap().0, vec![2, 3, 4]);
        assert_eq!(parse_counts("2, 4").unwrap().0, vec![2, 4]);
        assert!(parse_counts("5..2").is_err());
        assert!(parse_counts("0").is_err());
        assert!(parse_counts("x").is_err());
    }

    #[test]
    fn empty_document_uses_defaults() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert!(c.circuit.is_none());
        assert_eq!(c.decompose.flux_phi0, 0.5);
        assert_eq!(c.fit.channels, 3);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(toml::from_str::<RunConfig>("[circuit]\nej = 1.0\n").is_err());
        assert!(toml::from_str::<RunConfig>("[bogus]\n").is_err());
    }
}
