//! Levenberg-Marquardt for small dense least-squares problems.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// A residual function `r(x)` with Jacobian `∂r/∂x`.
pub trait LeastSquares {
    type Error;

    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>, Self::Error>;

    fn residuals_and_jacobian(
        &self,
        x: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>), Self::Error>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    /// Maximum number of trial steps (accepted or rejected).
    pub max_iter: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub ftol: f64,
    /// Stop when the scaled step is below this relative size.
    pub xtol: f64,
    /// Stop when every Jacobian column is this close to orthogonal to the residuals.
    pub gtol: f64,
    pub initial_damping: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            ftol: 1e-12,
            xtol: 1e-12,
            gtol: 1e-12,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    CostChange,
    StepSize,
    /// Damping grew without finding a lower cost.
    Stalled,
    MaxIterations,
}

impl Termination {
    pub fn converged(self) -> bool {
        !matches!(self, Termination::MaxIterations)
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub x: DVector<f64>,
    pub residuals: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    /// `Σ r^2` at `x`.
    pub cost: f64,
    /// Cost at the start and after every accepted step.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

impl LmReport {
    pub fn converged(&self) -> bool {
        self.termination.converged()
    }

    /// `(JᵀJ)^{-1}` scaled by the residual variance `Σr²/(N-P)`.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        let (n, p) = self.jacobian.shape();
        let jtj = self.jacobian.transpose() * &self.jacobian;
        let inv = jtj.try_inverse()?;
        if inv.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let dof = if n > p { (n - p) as f64 } else { 1.0 };
        Some(inv * (self.cost / dof))
    }
}

const MAX_DAMPING: f64 = 1e16;

/// `max_j |J_jᵀ r| / (|J_j| |r|)`.
fn max_cosine(j: &DMatrix<f64>, g: &DVector<f64>, cost: f64) -> f64 {
    let rn = cost.sqrt();
    j.column_iter()
        .zip(g.iter())
        .map(|(col, gi)| {
            let cn = col.norm();
            if cn == 0.0 {
                0.0
            } else {
                gi.abs() / (cn * rn)
            }
        })
        .fold(0.0, f64::max)
}

pub fn minimize<P: LeastSquares>(
    problem: &P,
    x0: DVector<f64>,
    cfg: &LmConfig,
) -> Result<LmReport, P::Error> {
    let mut x = x0;
    let (mut r, mut j) = problem.residuals_and_jacobian(&x)?;
    let mut cost = r.norm_squared();
    let mut history = vec![cost];
    let p = x.len();
    let mut diag = DVector::<f64>::zeros(p);
    let mut mu = cfg.initial_damping;
    let mut nu = 2.0;
    let mut iterations = 0;

    let termination = loop {
        let g = j.transpose() * &r;
        if p == 0 || cost == 0.0 || max_cosine(&j, &g, cost) <= cfg.gtol {
            break Termination::Gradient;
        }
        if iterations >= cfg.max_iter {
            break Termination::MaxIterations;
        }
        let jtj = j.transpose() * &j;
        for i in 0..p {
            diag[i] = diag[i].max(jtj[(i, i)]).max(f64::MIN_POSITIVE);
        }

        let mut accepted = None;
        while iterations < cfg.max_iter && mu < MAX_DAMPING {
            iterations += 1;
            let mut a = jtj.clone();
            for i in 0..p {
                a[(i, i)] += mu * diag[i];
            }
            let Some(chol) = a.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            // Reduction predicted by the linear model ||r + J h||^2.
            let predicted = -(2.0 * step.dot(&g) + step.dot(&(&jtj * &step)));
            let trial = &x + &step;
            match problem.residuals(&trial) {
                Ok(r_trial) if r_trial.norm_squared() < cost => {
                    let rho = (cost - r_trial.norm_squared()) / predicted.max(f64::MIN_POSITIVE);
                    mu *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                    mu = mu.max(1e-15);
                    nu = 2.0;
                    accepted = Some((trial, step));
                    break;
                }
                _ => {
                    mu *= nu;
                    nu *= 2.0;
                }
            }
        }

        let Some((trial, step)) = accepted else {
            break if mu >= MAX_DAMPING {
                Termination::Stalled
            } else {
                Termination::MaxIterations
            };
        };
        let (r_new, j_new) = problem.residuals_and_jacobian(&trial)?;
        let new_cost = r_new.norm_squared();
        let scaled_step = step.component_mul(&diag.map(f64::sqrt)).norm();
        let scaled_x = x.component_mul(&diag.map(f64::sqrt)).norm();
        let decrease = (cost - new_cost) / cost;
        x = trial;
        r = r_new;
        j = j_new;
        cost = new_cost;
        history.push(cost);
        if decrease < cfg.ftol {
            break Termination::CostChange;
        }
        if scaled_step <= cfg.xtol * (scaled_x + cfg.xtol) {
            break Termination::StepSize;
        }
    };

    Ok(LmReport {
        x,
        residuals: r,
        jacobian: j,
        cost,
        history,
        iterations,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl LeastSquares for Rosenbrock {
        type Error = ();

        fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>, ()> {
            Ok(DVector::from_vec(vec![
                10.0 * (x[1] - x[0] * x[0]),
                1.0 - x[0],
            ]))
        }

        fn residuals_and_jacobian(
            &self,
            x: &DVector<f64>,
        ) -> Result<(DVector<f64>, DMatrix<f64>), ()> {
            let j = DMatrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0]);
            Ok((self.residuals(x)?, j))
        }
    }

    #[test]
    fn rosenbrock_minimum() {
        let report = minimize(
            &Rosenbrock,
            DVector::from_vec(vec![-1.2, 1.0]),
            &LmConfig::default(),
        )
        .unwrap();
        assert!(report.converged(), "{:?}", report.termination);
        assert!((report.x[0] - 1.0).abs() < 1e-8);
        assert!((report.x[1] - 1.0).abs() < 1e-8);
        assert!(report.history.windows(2).all(|w| w[1] < w[0]));
    }

    struct Line {
        t: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquares for Line {
        type Error = ();

        fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>, ()> {
            Ok(DVector::from_iterator(
                self.t.len(),
                self.t.iter().zip(&self.y).map(|(t, y)| x[0] + x[1] * t - y),
            ))
        }

        fn residuals_and_jacobian(
            &self,
            x: &DVector<f64>,
        ) -> Result<(DVector<f64>, DMatrix<f64>), ()> {
            let j = DMatrix::from_fn(self.t.len(), 2, |i, c| if c == 0 { 1.0 } else { self.t[i] });
            Ok((self.residuals(x)?, j))
        }
    }

    #[test]
    fn linear_fit_matches_normal_equations() {
        let t = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let y = vec![1.1, 2.9, 5.2, 6.8, 9.1];
        let problem = Line {
            t: t.clone(),
            y: y.clone(),
        };
        let report = minimize(&problem, DVector::zeros(2), &LmConfig::default()).unwrap();
        let n = t.len() as f64;
        let (st, sy) = (t.iter().sum::<f64>(), y.iter().sum::<f64>());
        let stt = t.iter().map(|v| v * v).sum::<f64>();
        let sty = t.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
        let slope = (n * sty - st * sy) / (n * stt - st * st);
        let icept = (sy - slope * st) / n;
        assert!((report.x[1] - slope).abs() < 1e-9);
        assert!((report.x[0] - icept).abs() < 1e-9);
        let cov = report.covariance().unwrap();
        let s2 = report.cost / 3.0;
        assert!((cov[(1, 1)] - s2 * n / (n * stt - st * st)).abs() < 1e-12);
    }
}
