use std::f64::consts::{PI, TAU};

use approx::assert_relative_eq;
use proptest::prelude::*;

use hpq::potentials::{
    combine_harmonics, fourier_u, fourier_v, single_channel_harmonics, total_fourier,
    HarmonicConfig, HarmonicSpectrum,
};
use hpq::spectrum::{
    spectrum_vs_flux, spectrum_vs_flux_lenient, ChargeBasisConfig, SpectrumConfig,
};
use hpq::{CircuitParams, FluxBias, NanowireChannels};

fn small() -> SpectrumConfig {
    SpectrumConfig {
        harmonics: HarmonicConfig::with_k_max(8),
        basis: ChargeBasisConfig {
            n_cut: 16,
            n_g: 0.0,
            n_levels: 4,
        },
        labels: vec![
            "f01".parse().unwrap(),
            "f12".parse().unwrap(),
            "f02/2".parse().unwrap(),
        ],
    }
}

fn transmissions() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, 0..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn spectrum_is_flux_periodic(ts in transmissions(), phi in -PI..PI) {
        let params = CircuitParams::hpq_device();
        let ch = NanowireChannels::new(ts).unwrap();
        let t = spectrum_vs_flux(&params, &ch, &[phi, phi + TAU], &small()).unwrap();
        for (a, b) in t.rows[0].freqs.iter().zip(&t.rows[1].freqs) {
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn spectrum_is_flux_mirror_symmetric(ts in transmissions(), phi in 0.0..PI) {
        let params = CircuitParams::hpq_device();
        let ch = NanowireChannels::new(ts).unwrap();
        let t = spectrum_vs_flux(&params, &ch, &[phi, -phi], &small()).unwrap();
        for (a, b) in t.rows[0].freqs.iter().zip(&t.rows[1].freqs) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn first_channel_harmonic_grows_with_transmission(a in 0.01..0.99f64, b in 0.01..0.99f64) {
        prop_assume!((a - b).abs() > 1e-3);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let v_lo = single_channel_harmonics(lo, 4);
        let v_hi = single_channel_harmonics(hi, 4);
        prop_assert!(v_hi[1].abs() > v_lo[1].abs());
    }

    #[test]
    fn branch_route_matches_direct_decomposition(ts in transmissions(), phi in -PI..PI) {
        let params = CircuitParams::hpq_device();
        let ch = NanowireChannels::new(ts).unwrap();
        let cfg = HarmonicConfig::with_k_max(6);
        let u = fourier_u(&params, &cfg).unwrap();
        let v = fourier_v(&ch, params.gap, &cfg).unwrap();
        let spec = combine_harmonics(&u, &v, FluxBias::from_radians(phi)).unwrap();
        let (c, s) = total_fourier(&params, &ch, FluxBias::from_radians(phi), &cfg).unwrap();
        for k in 0..=6 {
            prop_assert!((spec.c[k] - c[k]).abs() < 1e-8, "c[{k}]");
            prop_assert!((spec.s[k] - s[k]).abs() < 1e-8, "s[{k}]");
        }
    }

    #[test]
    fn series_reproduces_potential(ts in transmissions(), phi in -PI..PI, x in -PI..PI) {
        let params = CircuitParams::hpq_device();
        let ch = NanowireChannels::new(ts).unwrap();
        let flux = FluxBias::from_radians(phi);
        let spec = HarmonicSpectrum::compute(&params, &ch, flux, &HarmonicConfig::with_k_max(40)).unwrap();
        let exact = hpq::potentials::total_potential(x, &params, &ch, flux);
        prop_assert!((spec.evaluate(x) - exact).abs() < 2e-3 * params.ej_sum());
    }
}

#[test]
fn doubling_basis_leaves_transitions_unchanged() {
    let params = CircuitParams::hpq_device();
    let ch = NanowireChannels::new(vec![0.94, 0.58, 0.58]).unwrap();
    let grid: Vec<f64> = (0..9).map(|i| i as f64 * PI / 8.0).collect();
    let cfg = SpectrumConfig::default();
    let mut fine = cfg.clone();
    fine.basis.n_cut *= 2;
    let a = spectrum_vs_flux(&params, &ch, &grid, &cfg).unwrap();
    let b = spectrum_vs_flux(&params, &ch, &grid, &fine).unwrap();
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        for (x, y) in ra.freqs.iter().zip(&rb.freqs) {
            assert_relative_eq!(*x, *y, epsilon = 1e-6);
        }
    }
}

#[test]
fn mixed_set_dips_below_1p5_ghz_at_half_flux() {
    let params = CircuitParams::hpq_device();
    let ch = NanowireChannels::new(vec![0.94, 0.58, 0.58]).unwrap();
    let t = spectrum_vs_flux(&params, &ch, &[PI], &SpectrumConfig::default()).unwrap();
    let f01 = t.column(&"f01".parse().unwrap()).unwrap()[0];
    assert!(f01 < 1.5 && f01 > 0.0, "f01 = {f01}");
}

#[test]
fn open_nanowire_gives_flux_independent_spectrum() {
    let params = CircuitParams::double_junction_transmon();
    let grid = [0.0, 1.0, 2.5, PI];
    let t = spectrum_vs_flux(&params, &NanowireChannels::empty(), &grid, &small()).unwrap();
    for r in &t.rows {
        for (a, b) in r.freqs.iter().zip(&t.rows[0].freqs) {
            assert_relative_eq!(*a, *b, epsilon = 1e-9);
        }
    }
}

#[test]
fn lenient_sweep_reports_bad_points_as_nan_rows() {
    let params = CircuitParams::hpq_device();
    let ch = NanowireChannels::new(vec![0.7]).unwrap();
    let grid = [0.0, f64::NAN, 1.0];
    let (t, failures) = spectrum_vs_flux_lenient(&params, &ch, &grid, &small()).unwrap();
    assert_eq!(t.rows.len(), 3);
    assert_eq!(failures.len(), 1);
    assert!(!t.rows[1].converged);
    assert!(t.rows[1].freqs.iter().all(|f| f.is_nan()));
    assert!(t.rows[0].converged && t.rows[2].converged);
    assert!(spectrum_vs_flux(&params, &ch, &grid, &small()).is_err());
}

#[test]
fn transition_rows_are_in_grid_order() {
    let params = CircuitParams::hpq_device();
    let ch = NanowireChannels::new(vec![0.8, 0.3]).unwrap();
    let grid: Vec<f64> = (0..32).map(|i| i as f64 * 0.1).collect();
    let t = spectrum_vs_flux(&params, &ch, &grid, &small()).unwrap();
    for (r, &phi) in t.rows.iter().zip(&grid) {
        assert_eq!(r.phi_e, phi);
    }
}
