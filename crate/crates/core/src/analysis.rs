//! Gate-sweep summaries: harmonic parity sums, regime maps, nanowire branch
//! harmonics and charge-parity tables.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ParamError, SpectrumError};
use crate::params::{CircuitParams, FluxBias, NanowireChannels};
use crate::potentials::{
    combine_harmonics, find_phi_min, fourier_u, fourier_v, parity_sums, parity_sums_of,
    HarmonicConfig, HarmonicSpectrum, Regime, RegimeThresholds,
};
use crate::spectrum::{build_hamiltonian, eigensolve, parity_weights, ChargeBasisConfig};

/// Probability below which a charge component is left out of a parity table.
pub const DOMINANT_CUTOFF: f64 = 1e-3;

/// Channel set measured (or assumed) at one gate voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatePoint {
    pub gate_v: f64,
    pub transmissions: NanowireChannels,
}

impl GatePoint {
    pub fn new(gate_v: f64, transmissions: &[f64]) -> Result<Self, ParamError> {
        Ok(Self {
            gate_v,
            transmissions: NanowireChannels::new(transmissions.to_vec())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateHarmonics {
    pub gate_v: f64,
    pub c: Vec<f64>,
    pub s: Vec<f64>,
    pub c_even: f64,
    pub c_odd: f64,
    pub ratio: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateHarmonicsTable {
    pub rows: Vec<GateHarmonics>,
    /// Row the normalized coefficients refer to.
    pub reference: usize,
    /// `c_k / c_k(reference)` per row; NaN where the reference vanishes.
    pub normalized: Vec<Vec<f64>>,
}

/// Total-potential harmonics and parity sums for every gate point.
///
/// `reference` selects the row used for the normalized coefficients
/// (defaults to the first row).
pub fn gate_sweep_harmonics(
    globals: &CircuitParams,
    gates: &[GatePoint],
    flux: FluxBias,
    cfg: &HarmonicConfig,
    reference: Option<usize>,
) -> Result<GateHarmonicsTable, ParamError> {
    globals.validate()?;
    let u = fourier_u(globals, cfg)?;
    let rows = gates
        .par_iter()
        .map(|g| {
            let v = fourier_v(&g.transmissions, globals.gap, cfg)?;
            let spec = combine_harmonics(&u, &v, flux)?;
            let sums = parity_sums(&spec);
            Ok(GateHarmonics {
                gate_v: g.gate_v,
                converged: spec.is_converged(),
                c: spec.c,
                s: spec.s,
                c_even: sums.c_even,
                c_odd: sums.c_odd,
                ratio: sums.ratio,
            })
        })
        .collect::<Result<Vec<_>, ParamError>>()?;

    let reference = reference.unwrap_or(0);
    let normalized = match rows.get(reference) {
        Some(r) => {
            let base = r.c.clone();
            rows.iter()
                .map(|row| {
                    row.c
                        .iter()
                        .zip(&base)
                        .map(|(&c, &b)| if b == 0.0 { f64::NAN } else { c / b })
                        .collect()
                })
                .collect()
        }
        None if rows.is_empty() => Vec::new(),
        None => {
            return Err(ParamError::Invalid(format!(
                "reference row {reference} outside a sweep of {} gates",
                rows.len()
            )))
        }
    };
    Ok(GateHarmonicsTable {
        rows,
        reference,
        normalized,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateRegime {
    pub gate_v: f64,
    pub phi_min: f64,
    pub regime: Regime,
}

/// Location of the potential minimum and its regime at every gate point.
pub fn gate_sweep_regimes(
    globals: &CircuitParams,
    gates: &[GatePoint],
    flux: FluxBias,
    thresholds: &RegimeThresholds,
) -> Result<Vec<GateRegime>, ParamError> {
    globals.validate()?;
    Ok(gates
        .par_iter()
        .map(|g| {
            let label = find_phi_min(globals, &g.transmissions, flux, thresholds);
            GateRegime {
                gate_v: g.gate_v,
                phi_min: label.phi_min,
                regime: label.regime,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnsBranchRow {
    pub gate_v: f64,
    pub v: Vec<f64>,
    pub v_even: f64,
    pub v_odd: f64,
    pub sum_t: f64,
}

/// Nanowire-arm harmonics per gate, with the fixed tunnel-junction sums
/// alongside for comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnsBranchReport {
    pub rows: Vec<SnsBranchRow>,
    pub u: Vec<f64>,
    pub u_even: f64,
    pub u_odd: f64,
}

pub fn sns_branch_report(
    globals: &CircuitParams,
    gates: &[GatePoint],
    cfg: &HarmonicConfig,
) -> Result<SnsBranchReport, ParamError> {
    globals.validate()?;
    let u = fourier_u(globals, cfg)?;
    let u_sums = parity_sums_of(&u);
    let rows = gates
        .par_iter()
        .map(|g| {
            let v = fourier_v(&g.transmissions, globals.gap, cfg)?;
            let sums = parity_sums_of(&v);
            Ok(SnsBranchRow {
                gate_v: g.gate_v,
                v_even: sums.c_even,
                v_odd: sums.c_odd,
                sum_t: g.transmissions.sum(),
                v,
            })
        })
        .collect::<Result<Vec<_>, ParamError>>()?;
    Ok(SnsBranchReport {
        rows,
        u_even: u_sums.c_even,
        u_odd: u_sums.c_odd,
        u,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParityRow {
    pub state: usize,
    pub energy: f64,
    pub even_weight: f64,
    pub odd_weight: f64,
    /// `(charge, probability)` for components above [`DOMINANT_CUTOFF`],
    /// largest first.
    pub dominant: Vec<(i64, f64)>,
}

/// Charge-parity content of the lowest `n_states` eigenstates at one flux.
pub fn parity_table(
    globals: &CircuitParams,
    channels: &NanowireChannels,
    flux: FluxBias,
    harmonics: &HarmonicConfig,
    basis: &ChargeBasisConfig,
    n_states: usize,
) -> Result<Vec<ParityRow>, SpectrumError> {
    let spec = HarmonicSpectrum::compute(globals, channels, flux, harmonics)?;
    parity_table_of(&spec, globals.ec, basis, n_states)
}

/// Parity table for an arbitrary harmonic series.
pub fn parity_table_of(
    spec: &HarmonicSpectrum,
    ec: f64,
    basis: &ChargeBasisConfig,
    n_states: usize,
) -> Result<Vec<ParityRow>, SpectrumError> {
    let cfg = ChargeBasisConfig {
        n_levels: n_states,
        ..*basis
    };
    let h = build_hamiltonian(spec, ec, &cfg)?;
    let pairs = eigensolve(&h, n_states)?;
    (0..n_states)
        .map(|state| {
            let vec = pairs.vector(state);
            let w = parity_weights(&vec)?;
            let mut dominant: Vec<(i64, f64)> = vec
                .iter()
                .enumerate()
                .map(|(i, a)| (cfg.charge(i), a.norm_sqr()))
                .filter(|&(_, p)| p > DOMINANT_CUTOFF)
                .collect();
            dominant.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            Ok(ParityRow {
                state,
                energy: pairs.energies[state],
                even_weight: w.even_weight,
                odd_weight: w.odd_weight,
                dominant,
            })
        })
        .collect()
}

/// One sample of a long-format plot table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    pub series: String,
}

fn push_series(out: &mut Vec<PlotPoint>, series: &str, xs: &[f64], ys: impl Iterator<Item = f64>) {
    out.extend(xs.iter().zip(ys).map(|(&x, y)| PlotPoint {
        x,
        y,
        series: series.to_string(),
    }));
}

/// `c_k`, normalized `c_k`, parity sums and ratio against gate voltage.
pub fn harmonics_plot(table: &GateHarmonicsTable) -> Vec<PlotPoint> {
    let xs: Vec<f64> = table.rows.iter().map(|r| r.gate_v).collect();
    let k_max = table
        .rows
        .first()
        .map_or(0, |r| r.c.len().saturating_sub(1));
    let mut out = Vec::new();
    for k in 1..=k_max {
        push_series(
            &mut out,
            &format!("c{k}"),
            &xs,
            table.rows.iter().map(|r| r.c[k]),
        );
    }
    for k in 1..=k_max {
        push_series(
            &mut out,
            &format!("c{k}_normalized"),
            &xs,
            table.normalized.iter().map(|n| n[k]),
        );
    }
    push_series(&mut out, "c_even", &xs, table.rows.iter().map(|r| r.c_even));
    push_series(&mut out, "c_odd", &xs, table.rows.iter().map(|r| r.c_odd));
    push_series(&mut out, "ratio", &xs, table.rows.iter().map(|r| r.ratio));
    out
}

pub fn regimes_plot(rows: &[GateRegime]) -> Vec<PlotPoint> {
    let xs: Vec<f64> = rows.iter().map(|r| r.gate_v).collect();
    let mut out = Vec::new();
    push_series(&mut out, "phi_min", &xs, rows.iter().map(|r| r.phi_min));
    out
}

pub fn sns_plot(report: &SnsBranchReport) -> Vec<PlotPoint> {
    let xs: Vec<f64> = report.rows.iter().map(|r| r.gate_v).collect();
    let mut out = Vec::new();
    push_series(
        &mut out,
        "v_even",
        &xs,
        report.rows.iter().map(|r| r.v_even),
    );
    push_series(&mut out, "v_odd", &xs, report.rows.iter().map(|r| r.v_odd));
    push_series(
        &mut out,
        "u_even",
        &xs,
        report.rows.iter().map(|_| report.u_even),
    );
    push_series(
        &mut out,
        "u_odd",
        &xs,
        report.rows.iter().map(|_| report.u_odd),
    );
    push_series(&mut out, "sum_t", &xs, report.rows.iter().map(|r| r.sum_t));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn globals() -> CircuitParams {
        CircuitParams::hpq_device()
    }

    fn device_sets() -> Vec<GatePoint> {
        vec![
            GatePoint::new(-7.0, &[0.68, 0.47, 0.46]).unwrap(),
            GatePoint::new(-0.2, &[0.94, 0.58, 0.58]).unwrap(),
            GatePoint::new(7.2, &[0.98, 0.98, 0.75, 0.54]).unwrap(),
        ]
    }

    #[test]
    fn identical_gates_give_constant_table() {
        let g = GatePoint::new(0.0, &[0.7, 0.3]).unwrap();
        let gates: Vec<_> = (0..5)
            .map(|i| GatePoint {
                gate_v: i as f64,
                ..g.clone()
            })
            .collect();
        let t = gate_sweep_harmonics(
            &globals(),
            &gates,
            FluxBias::half_quantum(),
            &HarmonicConfig::default(),
            None,
        )
        .unwrap();
        for row in &t.rows {
            assert_eq!(row.c, t.rows[0].c);
            assert_eq!(row.ratio, t.rows[0].ratio);
        }
        for n in &t.normalized {
            for &x in &n[1..] {
                assert!((x - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rows_match_direct_computation() {
        let cfg = HarmonicConfig::default();
        let flux = FluxBias::half_quantum();
        let t = gate_sweep_harmonics(&globals(), &device_sets(), flux, &cfg, None).unwrap();
        for (row, g) in t.rows.iter().zip(device_sets()) {
            let spec = HarmonicSpectrum::compute(&globals(), &g.transmissions, flux, &cfg).unwrap();
            assert_eq!(row.c, spec.c);
            assert_eq!(row.s, spec.s);
        }
    }

    #[test]
    fn device_sets_fall_in_three_regimes() {
        let r = gate_sweep_regimes(
            &globals(),
            &device_sets(),
            FluxBias::half_quantum(),
            &RegimeThresholds::default(),
        )
        .unwrap();
        let regimes: Vec<_> = r.iter().map(|x| x.regime).collect();
        assert_eq!(
            regimes,
            [Regime::OddDominated, Regime::Mixed, Regime::EvenDominated]
        );
        assert!((r[2].phi_min - PI / 2.0).abs() < 0.35);
    }

    #[test]
    fn even_regime_ratio_exceeds_odd_regime_ratio() {
        let flux = FluxBias::half_quantum();
        let gates = device_sets();
        let h = gate_sweep_harmonics(&globals(), &gates, flux, &HarmonicConfig::default(), None)
            .unwrap();
        let r = gate_sweep_regimes(&globals(), &gates, flux, &RegimeThresholds::default()).unwrap();
        for (a, ra) in h.rows.iter().zip(&r) {
            for (b, rb) in h.rows.iter().zip(&r) {
                if ra.regime == Regime::EvenDominated && rb.regime == Regime::OddDominated {
                    assert!(a.ratio > b.ratio);
                }
            }
        }
    }

    #[test]
    fn empty_channels_give_zero_branch() {
        let gates = vec![GatePoint::new(0.0, &[]).unwrap()];
        let rep = sns_branch_report(&globals(), &gates, &HarmonicConfig::default()).unwrap();
        assert!(rep.rows[0].v.iter().all(|&x| x == 0.0));
        assert_eq!(rep.rows[0].sum_t, 0.0);
        assert!(rep.u[1] < 0.0);
    }

    #[test]
    fn first_branch_harmonic_grows_with_transmission() {
        let gates = vec![
            GatePoint::new(0.0, &[0.2]).unwrap(),
            GatePoint::new(1.0, &[0.4]).unwrap(),
        ];
        let rep = sns_branch_report(&globals(), &gates, &HarmonicConfig::default()).unwrap();
        assert!(rep.rows[1].v[1].abs() > rep.rows[0].v[1].abs());
        assert!((rep.rows[1].sum_t - 0.4).abs() < 1e-15);
    }

    #[test]
    fn pure_even_potential_has_pure_parity_states() {
        let spec =
            HarmonicSpectrum::from_total(vec![0.0, 0.0, -4.0, 0.0, 0.3], vec![0.0; 5]).unwrap();
        let basis = ChargeBasisConfig {
            n_cut: 20,
            n_g: 0.0,
            n_levels: 2,
        };
        let t = parity_table_of(&spec, 0.28, &basis, 2).unwrap();
        assert!(t[0].even_weight > 1.0 - 1e-12);
        assert!(t[1].odd_weight > 1.0 - 1e-12);
        assert!(t[0].dominant.iter().all(|&(n, _)| n % 2 == 0));
        let total: f64 = t[0].dominant.iter().map(|d| d.1).sum();
        assert!(total > 0.9 && total <= 1.0 + 1e-12);
    }

    #[test]
    fn transmon_states_have_balanced_parity() {
        let spec = HarmonicSpectrum::from_total(vec![0.0, -9.8, 0.0], vec![0.0; 3]).unwrap();
        let basis = ChargeBasisConfig {
            n_cut: 20,
            n_g: 0.0,
            n_levels: 2,
        };
        let t = parity_table_of(&spec, 0.28, &basis, 2).unwrap();
        for row in &t {
            assert!((row.even_weight - 0.5).abs() < 0.1, "{row:?}");
        }
    }

    #[test]
    fn even_regime_states_separate_by_parity() {
        let ch = NanowireChannels::new(vec![0.98, 0.98, 0.75, 0.54]).unwrap();
        let t = parity_table(
            &globals(),
            &ch,
            FluxBias::half_quantum(),
            &HarmonicConfig::default(),
            &ChargeBasisConfig::default(),
            2,
        )
        .unwrap();
        assert!(t[0].even_weight >= 0.95, "{:?}", t[0]);
        assert!(t[1].odd_weight >= 0.95, "{:?}", t[1]);
    }

    #[test]
    fn plot_series_cover_every_row() {
        let h = gate_sweep_harmonics(
            &globals(),
            &device_sets(),
            FluxBias::half_quantum(),
            &HarmonicConfig::with_k_max(4),
            None,
        )
        .unwrap();
        let pts = harmonics_plot(&h);
        assert_eq!(pts.len(), 3 * (4 + 4 + 3));
        assert!(pts
            .iter()
            .filter(|p| p.series == "c2_normalized")
            .all(|p| p.y.is_finite()));
    }
}
