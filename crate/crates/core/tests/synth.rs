use std::f64::consts::TAU;

use hpq::fitstack::{lorentzian_fit, PeakGuess};
use hpq::spectrum::{spectrum_vs_flux, SpectrumConfig, TransitionLabel};
use hpq::synth::{
    linear_grid, synthesize_map, synthesize_trace, AmplitudeWeighting, Line, LineSpec, SynthConfig,
};
use hpq::{CircuitParams, NanowireChannels};

fn f01() -> TransitionLabel {
    "f01".parse().unwrap()
}

fn config(noise: f64, seed: u64, weighting: AmplitudeWeighting) -> SynthConfig {
    SynthConfig {
        lines: vec![LineSpec {
            label: f01(),
            fwhm: 0.01,
            amplitude: 1.0,
        }],
        noise_sigma: noise,
        seed,
        weighting,
    }
}

fn device() -> (CircuitParams, NanowireChannels) {
    (
        CircuitParams::hpq_device(),
        NanowireChannels::new(vec![0.68, 0.47, 0.46]).unwrap(),
    )
}

#[test]
fn map_is_reproducible_and_seed_dependent() {
    let (p, ch) = device();
    let flux: Vec<f64> = linear_grid(0.0, 0.5, 5).iter().map(|f| f * TAU).collect();
    let grid = linear_grid(5.0, 12.0, 2001);
    let spec = SpectrumConfig::default();
    let cfg = config(0.05, 11, AmplitudeWeighting::Uniform);
    let a = synthesize_map(&p, &ch, &flux, &grid, &cfg, &spec).unwrap();
    let b = synthesize_map(&p, &ch, &flux, &grid, &cfg, &spec).unwrap();
    assert_eq!(a.traces, b.traces);
    let c = synthesize_map(
        &p,
        &ch,
        &flux,
        &grid,
        &config(0.05, 12, AmplitudeWeighting::Uniform),
        &spec,
    )
    .unwrap();
    assert_ne!(a.traces, c.traces);
}

#[test]
fn thread_count_does_not_change_the_map() {
    let (p, ch) = device();
    let flux: Vec<f64> = linear_grid(0.0, 0.5, 8).iter().map(|f| f * TAU).collect();
    let grid = linear_grid(5.0, 12.0, 501);
    let spec = SpectrumConfig::default();
    let cfg = config(0.1, 3, AmplitudeWeighting::ChargeMatrixElement);
    let serial = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| synthesize_map(&p, &ch, &flux, &grid, &cfg, &spec).unwrap());
    let parallel = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap()
        .install(|| synthesize_map(&p, &ch, &flux, &grid, &cfg, &spec).unwrap());
    assert_eq!(serial.traces, parallel.traces);
    assert_eq!(serial.amplitudes, parallel.amplitudes);
}

#[test]
fn noiseless_ridge_follows_model_f01() {
    let (p, ch) = device();
    let flux: Vec<f64> = linear_grid(0.0, 0.5, 6).iter().map(|f| f * TAU).collect();
    let spec = SpectrumConfig::with_labels(vec![f01()]);
    let truth = spectrum_vs_flux(&p, &ch, &flux, &spec).unwrap();
    let lo = truth
        .column(&f01())
        .unwrap()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        - 0.5;
    let hi = truth
        .column(&f01())
        .unwrap()
        .iter()
        .copied()
        .fold(0.0, f64::max)
        + 0.5;
    let grid = linear_grid(lo, hi, ((hi - lo) / 5e-4) as usize);
    let map = synthesize_map(
        &p,
        &ch,
        &flux,
        &grid,
        &config(0.0, 1, AmplitudeWeighting::Uniform),
        &spec,
    )
    .unwrap();
    let step = grid[1] - grid[0];
    for (trace, row) in map.traces.iter().zip(&truth.rows) {
        let (imax, _) = trace
            .signal
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert!(
            (grid[imax] - row.freqs[0]).abs() <= step,
            "{} vs {}",
            grid[imax],
            row.freqs[0]
        );
    }
}

#[test]
fn matrix_element_weighting_scales_lines() {
    let (p, ch) = device();
    let flux = [0.0];
    let grid = linear_grid(5.0, 15.0, 101);
    let spec = SpectrumConfig::default();
    let map = synthesize_map(
        &p,
        &ch,
        &flux,
        &grid,
        &config(0.0, 1, AmplitudeWeighting::ChargeMatrixElement),
        &spec,
    )
    .unwrap();
    let element = map.truth.rows[0].matrix_elements[0];
    assert!((map.amplitudes[0][0] - element * element).abs() < 1e-12);
    let uniform = synthesize_map(
        &p,
        &ch,
        &flux,
        &grid,
        &config(0.0, 1, AmplitudeWeighting::Uniform),
        &spec,
    )
    .unwrap();
    assert_eq!(uniform.amplitudes[0][0], 1.0);
}

#[test]
fn lorentz_monte_carlo_center_accuracy() {
    // sigma = 10% of the amplitude; the center should land within FWHM/5
    // in at least 95% of seeded draws.
    let line = Line {
        f0: 6.2347,
        amplitude: 1.0,
        fwhm: 0.008,
    };
    let grid = linear_grid(6.18, 6.29, 111);
    let seeds = 200;
    let mut good = 0;
    for seed in 0..seeds {
        let trace = synthesize_trace(&[line], &grid, 0.1, seed).unwrap();
        let guess = PeakGuess {
            center: 6.235,
            fwhm: 0.01,
        };
        if let Ok(fit) = lorentzian_fit(&trace, (6.205, 6.265), &guess) {
            if (fit.f0 - line.f0).abs() < line.fwhm / 5.0 {
                good += 1;
            }
        }
    }
    assert!(good as f64 >= 0.95 * seeds as f64, "{good}/{seeds}");
}
