//! Fourier coefficients of 2π-periodic functions with localized
//! non-smoothness.
//!
//! The branch potentials are analytic except at isolated phases where
//! `1 - T sin^2(φ/2)` vanishes (or nearly vanishes): a `|cos(φ/2)|` cusp at
//! unit transmission, a square-root branch point in the Born-Oppenheimer
//! term, and complex branch points approaching the real axis as `T → 1`.
//! A uniform periodic trapezoid rule converges only algebraically there, so
//! the period is split at those phases and each piece is integrated with
//! composite Gauss-Legendre panels graded geometrically toward its ends.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::LazyLock;

use gauss_quad::GaussLegendre;

use crate::params::wrap_phase;

const NODES_PER_PANEL: usize = 24;
const GRADING_RATIO: f64 = 0.2;
const GRADING_LEVELS: usize = 20;
/// Widest panel (radians). Keeps `cos kφ` resolved up to [`MAX_HARMONIC`].
const MAX_PANEL_WIDTH: f64 = 0.2;

/// Highest harmonic order the rules are built to resolve.
pub const MAX_HARMONIC: usize = 100;

static REFERENCE_RULE: LazyLock<Vec<(f64, f64)>> = LazyLock::new(|| {
    GaussLegendre::new(NonZeroUsize::new(NODES_PER_PANEL).unwrap())
        .as_node_weight_pairs()
        .to_vec()
});

static CUSP_AT_PI: LazyLock<FourierRule> = LazyLock::new(|| FourierRule::new(&[]));

/// A quadrature rule on `[-π, π)` with nodes clustered around a set of
/// singular phases. `-π` (equivalently `π`) is always treated as singular.
#[derive(Debug, Clone)]
pub struct FourierRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl FourierRule {
    pub fn new(singular: &[f64]) -> Self {
        let mut breaks: Vec<f64> = singular.iter().map(|&p| wrap_phase(p)).collect();
        breaks.push(-PI);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        // -π and π are the same point; π closes the last interval.
        if PI - breaks[breaks.len() - 1] < 1e-13 {
            breaks.pop();
        }
        breaks.push(PI);

        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for pair in breaks.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b - a < 1e-13 {
                continue;
            }
            let mid = 0.5 * (a + b);
            graded_toward(a, mid, &mut nodes, &mut weights);
            graded_toward(b, mid, &mut nodes, &mut weights);
        }
        Self { nodes, weights }
    }

    /// Rule for functions whose only non-smooth point is `φ = ±π`.
    pub fn cusp_at_pi() -> &'static FourierRule {
        &CUSP_AT_PI
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integral of `f` over one period.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Cosine and sine amplitudes of `f = a_0 + Σ_k [a_k cos kφ + b_k sin kφ]`
    /// for `k = 0..=k_max`. `a_0` is the mean; `b_0 = 0`.
    pub fn coefficients(&self, f: impl Fn(f64) -> f64, k_max: usize) -> (Vec<f64>, Vec<f64>) {
        let values: Vec<f64> = self.nodes.iter().map(|&x| f(x)).collect();
        self.coefficients_of_samples(&values, k_max)
    }

    /// Cosine amplitudes only, for functions known to be even.
    pub fn cosine_coefficients(&self, f: impl Fn(f64) -> f64, k_max: usize) -> Vec<f64> {
        self.coefficients(f, k_max).0
    }

    fn coefficients_of_samples(&self, values: &[f64], k_max: usize) -> (Vec<f64>, Vec<f64>) {
        let mut cos_acc = vec![0.0; k_max + 1];
        let mut sin_acc = vec![0.0; k_max + 1];
        for ((&x, &w), &y) in self.nodes.iter().zip(&self.weights).zip(values) {
            let wy = w * y;
            let (s1, c1) = x.sin_cos();
            // Chebyshev recurrence for cos(kx), sin(kx).
            let (mut c_prev, mut s_prev) = (1.0, 0.0);
            let (mut c_cur, mut s_cur) = (c1, s1);
            cos_acc[0] += wy;
            for k in 1..=k_max {
                cos_acc[k] += wy * c_cur;
                sin_acc[k] += wy * s_cur;
                let c_next = 2.0 * c1 * c_cur - c_prev;
                let s_next = 2.0 * c1 * s_cur - s_prev;
                (c_prev, s_prev, c_cur, s_cur) = (c_cur, s_cur, c_next, s_next);
            }
        }
        cos_acc[0] /= 2.0 * PI;
        for k in 1..=k_max {
            cos_acc[k] /= PI;
            sin_acc[k] /= PI;
        }
        (cos_acc, sin_acc)
    }
}

/// Panels on the segment between `end` and `far`, shrinking geometrically
/// toward `end`.
fn graded_toward(end: f64, far: f64, nodes: &mut Vec<f64>, weights: &mut Vec<f64>) {
    let span = far - end;
    let mut outer = 1.0;
    for level in 0..=GRADING_LEVELS {
        let inner = if level == GRADING_LEVELS {
            0.0
        } else {
            outer * GRADING_RATIO
        };
        push_panel(end + span * inner, end + span * outer, nodes, weights);
        outer = inner;
    }
}

fn push_panel(a: f64, b: f64, nodes: &mut Vec<f64>, weights: &mut Vec<f64>) {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let pieces = ((hi - lo) / MAX_PANEL_WIDTH).ceil().max(1.0) as usize;
    let width = (hi - lo) / pieces as f64;
    for i in 0..pieces {
        let half = 0.5 * width;
        let centre = lo + (i as f64 + 0.5) * width;
        for &(x, w) in REFERENCE_RULE.iter() {
            nodes.push(centre + half * x);
            weights.push(half * w);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_constant_over_period() {
        let rule = FourierRule::new(&[0.3, -2.0]);
        assert!((rule.integrate(|_| 1.0) - 2.0 * PI).abs() < 1e-13);
    }

    #[test]
    fn recovers_trigonometric_polynomial() {
        let rule = FourierRule::cusp_at_pi();
        let f = |x: f64| 1.5 - 2.0 * x.cos() + 0.25 * (3.0 * x).sin() + 0.1 * (7.0 * x).cos();
        let (a, b) = rule.coefficients(f, 8);
        let expect_a = [1.5, -2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.0];
        let expect_b = [0.0, 0.0, 0.0, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0];
        for k in 0..=8 {
            assert!((a[k] - expect_a[k]).abs() < 1e-13, "a[{k}] = {}", a[k]);
            assert!((b[k] - expect_b[k]).abs() < 1e-13, "b[{k}] = {}", b[k]);
        }
    }

    #[test]
    fn abs_cos_half_cusp_closed_form() {
        // -|cos(φ/2)| = -2/π + Σ (4/π)(-1)^k/(4k²-1) cos kφ
        let rule = FourierRule::cusp_at_pi();
        let a = rule.cosine_coefficients(|x| -(0.5 * x).cos().abs(), 10);
        assert!((a[0] + 2.0 / PI).abs() < 1e-13);
        for k in 1..=10 {
            let kf = k as f64;
            let exact = 4.0 / PI * (-1f64).powi(k as i32) / (4.0 * kf * kf - 1.0);
            assert!(((a[k] - exact) / exact).abs() < 1e-11, "k={k}");
        }
    }

    #[test]
    fn high_orders_stay_resolved() {
        let rule = FourierRule::cusp_at_pi();
        let a = rule.cosine_coefficients(|x| -(0.5 * x).cos().abs(), MAX_HARMONIC);
        for k in [30, 60, MAX_HARMONIC] {
            let kf = k as f64;
            let exact = 4.0 / PI * (-1f64).powi(k as i32) / (4.0 * kf * kf - 1.0);
            assert!(
                ((a[k] - exact) / exact).abs() < 1e-9,
                "k={k}: {} vs {exact}",
                a[k]
            );
        }
        let f = |x: f64| x.sin().exp();
        let (a, _) = rule.coefficients(f, MAX_HARMONIC);
        // Smooth periodic input: coefficients decay to rounding level.
        assert!(a[MAX_HARMONIC].abs() < 1e-12);
    }

    #[test]
    fn shifted_cusp_needs_its_own_breakpoint() {
        let shift = 1.1;
        let rule = FourierRule::new(&[shift + PI]);
        let (a, b) = rule.coefficients(|x| -(0.5 * (x - shift)).cos().abs(), 6);
        for k in 1..=6 {
            let kf = k as f64;
            let amp = 4.0 / PI * (-1f64).powi(k as i32) / (4.0 * kf * kf - 1.0);
            assert!((a[k] - amp * (kf * shift).cos()).abs() < 1e-12);
            assert!((b[k] - amp * (kf * shift).sin()).abs() < 1e-12);
        }
    }
}
