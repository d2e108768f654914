//! Joint least-squares fit of shared device parameters and per-gate
//! transmissions, and channel-count model selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lsq::{minimize, LmConfig, LmReport, Termination};
use super::model::{
    default_free_globals, evaluate, GlobalParam, ParamBounds, Prepared, Theta, ThetaLayout,
    Transform, TransformedProblem,
};
use super::{rmse, SpectroscopyDataset};
use crate::error::FitError;
use crate::params::{CircuitParams, NanowireChannels};
use crate::potentials::HarmonicConfig;
use crate::spectrum::{ChargeBasisConfig, SpectrumConfig};

/// Transmissions closer than this to 0 or 1 are reported as boundary-active.
pub const BOUNDARY_TOL: f64 = 1e-6;

/// Optional bounds per global parameter; unset means `[0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalBounds {
    pub ej: Option<ParamBounds>,
    pub ej1: Option<ParamBounds>,
    pub ej2: Option<ParamBounds>,
    pub ecj: Option<ParamBounds>,
    pub gap: Option<ParamBounds>,
    pub ec: Option<ParamBounds>,
}

impl GlobalBounds {
    pub fn get(&self, g: GlobalParam) -> ParamBounds {
        let b = match g {
            GlobalParam::EjSymmetric => self.ej,
            GlobalParam::Ej1 => self.ej1,
            GlobalParam::Ej2 => self.ej2,
            GlobalParam::Ecj => self.ecj,
            GlobalParam::Gap => self.gap,
            GlobalParam::Ec => self.ec,
        };
        b.unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub harmonics: HarmonicConfig,
    pub basis: ChargeBasisConfig,
    pub free_globals: Vec<GlobalParam>,
    pub bounds: GlobalBounds,
    pub lm: LmConfig,
    /// Extra starts: dataset transmissions `T_i = level - step * i`.
    pub start_levels: Vec<f64>,
    pub start_step: f64,
    /// Steps each start gets before only the best one is continued.
    pub screen_iter: usize,
    /// Model selection keeps the smallest count within this factor of the best RMSE.
    pub selection_factor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            harmonics: HarmonicConfig::default(),
            // Converged to ~1e-12 GHz for transmon-like devices at k_max = 10
            // and much cheaper than the spectrum default.
            basis: ChargeBasisConfig {
                n_cut: 20,
                ..ChargeBasisConfig::default()
            },
            free_globals: default_free_globals(),
            bounds: GlobalBounds::default(),
            lm: LmConfig {
                max_iter: 100,
                ftol: 1e-9,
                xtol: 1e-9,
                gtol: 1e-9,
                ..LmConfig::default()
            },
            start_levels: vec![0.35, 0.65, 0.95],
            start_step: 0.1,
            screen_iter: 12,
            selection_factor: 1.5,
        }
    }
}

impl FitConfig {
    pub fn spectrum(&self) -> SpectrumConfig {
        SpectrumConfig {
            harmonics: self.harmonics,
            basis: self.basis,
            labels: Vec::new(),
        }
    }

    pub fn with_fixed_globals(&self) -> Self {
        Self {
            free_globals: Vec::new(),
            ..self.clone()
        }
    }
}

/// Transmission start `T_i = level - step * i`, kept inside `(0, 1)`.
pub fn start_transmissions(level: f64, step: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| (level - step * i as f64).clamp(0.01, 0.99))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateFit {
    pub gate_v: f64,
    /// Descending.
    pub transmissions: Vec<f64>,
    pub rmse_ghz: f64,
    pub n_points: usize,
    pub boundary_active: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub globals: CircuitParams,
    pub free_globals: Vec<GlobalParam>,
    pub rmse_ghz: f64,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    /// Which start produced the result (0 is the supplied initial guess).
    pub start_index: usize,
    pub gates: Vec<GateFit>,
    /// `Σ r^2` at the start and after each accepted step.
    pub cost_history: Vec<f64>,
    /// Weighted residuals `(f_model - f_data) / σ`.
    pub residuals: Vec<f64>,
    pub param_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl FitResult {
    pub fn theta(&self) -> Theta {
        Theta {
            globals: self.globals,
            transmissions: self.gates.iter().map(|g| g.transmissions.clone()).collect(),
        }
    }

    pub fn channels(&self) -> Vec<NanowireChannels> {
        self.gates
            .iter()
            .map(|g| NanowireChannels::new(g.transmissions.clone()).expect("fitted T in [0, 1]"))
            .collect()
    }
}

fn transforms(layout: &ThetaLayout, bounds: &GlobalBounds) -> Result<Vec<Transform>, FitError> {
    let mut out = Vec::with_capacity(layout.len());
    for &g in &layout.free_globals {
        out.push(Transform::for_bounds(&bounds.get(g))?);
    }
    out.extend(std::iter::repeat_n(
        Transform::Logit,
        layout.len() - layout.n_globals(),
    ));
    Ok(out)
}

/// Minimize `Σ r^2` over the free globals and every transmission.
///
/// Starts from `initial` and from each level of the fixed start grid; the
/// lowest final cost wins, ties going to the earlier start. Transmissions
/// are reported in descending order. Only points with `used = true` enter.
pub fn fit_global(
    datasets: &[SpectroscopyDataset],
    initial: &Theta,
    cfg: &FitConfig,
) -> Result<FitResult, FitError> {
    let prep = Prepared::new(datasets, &cfg.spectrum())?;
    let layout = ThetaLayout::new(cfg.free_globals.clone(), initial.counts())?;
    let mut initial = initial.clone();
    initial.canonicalize();
    let problem = TransformedProblem {
        prep: &prep,
        layout: &layout,
        base: initial.globals,
        transforms: transforms(&layout, &cfg.bounds)?,
    };

    let mut starts = vec![initial.clone()];
    for &level in &cfg.start_levels {
        let transmissions = initial
            .counts()
            .iter()
            .map(|&n| start_transmissions(level, cfg.start_step, n))
            .collect();
        starts.push(Theta {
            globals: initial.globals,
            transmissions,
        });
    }

    // Screen every start briefly, then continue the most promising one.
    let screen = LmConfig {
        max_iter: cfg.screen_iter.min(cfg.lm.max_iter),
        ..cfg.lm
    };
    let runs: Vec<Result<LmReport, FitError>> = starts
        .par_iter()
        .map(|theta| minimize(&problem, problem.to_x(theta)?, &screen))
        .collect();
    let mut best: Option<(usize, LmReport)> = None;
    let mut first_err = None;
    for (i, run) in runs.into_iter().enumerate() {
        match run {
            Ok(report) => {
                if best.as_ref().is_none_or(|(_, b)| report.cost < b.cost) {
                    best = Some((i, report));
                }
            }
            Err(e) => {
                log::warn!("fit start {i} failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    let Some((start_index, screened)) = best else {
        return Err(first_err.expect("at least one start"));
    };
    let report = if screened.converged() && screened.iterations < screen.max_iter {
        screened
    } else {
        let rest = LmConfig {
            max_iter: cfg.lm.max_iter.saturating_sub(screened.iterations),
            ..cfg.lm
        };
        let mut cont = minimize(&problem, screened.x.clone(), &rest)?;
        let mut history = screened.history;
        history.extend_from_slice(&cont.history[1..]);
        cont.history = history;
        cont.iterations += screened.iterations;
        cont
    };
    if !report.converged() {
        log::warn!(
            "global fit stopped after {} steps without converging",
            report.iterations
        );
    }
    finish(&problem, datasets, start_index, report)
}

fn finish(
    problem: &TransformedProblem<'_>,
    datasets: &[SpectroscopyDataset],
    start_index: usize,
    report: LmReport,
) -> Result<FitResult, FitError> {
    let layout = problem.layout;
    let theta = problem.theta(&report.x)?;
    let eval = evaluate(problem.prep, layout, &theta, false)?;

    // Parameter order after sorting each dataset's transmissions.
    let mut order: Vec<usize> = (0..layout.n_globals()).collect();
    let mut transmissions = Vec::with_capacity(theta.transmissions.len());
    for (d, ts) in theta.transmissions.iter().enumerate() {
        let offset = layout.dataset_offset(d);
        let mut idx: Vec<usize> = (0..ts.len()).collect();
        idx.sort_by(|&a, &b| ts[b].total_cmp(&ts[a]));
        order.extend(idx.iter().map(|&i| offset + i));
        transmissions.push(idx.iter().map(|&i| ts[i]).collect::<Vec<f64>>());
    }

    let factors = problem.chain_factors(&report.x);
    let covariance = report.covariance().map(|cx| {
        order
            .iter()
            .map(|&i| {
                order
                    .iter()
                    .map(|&j| factors[i] * cx[(i, j)] * factors[j])
                    .collect::<Vec<f64>>()
            })
            .collect::<Vec<_>>()
    });
    let std_errors = covariance
        .as_ref()
        .map(|c| (0..c.len()).map(|i| c[i][i].max(0.0).sqrt()).collect());
    let names = layout.names();
    let param_names = order.iter().map(|&i| names[i].clone()).collect();

    let mut gates = Vec::with_capacity(datasets.len());
    for (d, (ds, ts)) in datasets.iter().zip(transmissions).enumerate() {
        let rows: Vec<usize> = (0..problem.prep.n_rows)
            .filter(|&r| problem.prep.row_dataset[r] == d)
            .collect();
        let model: Vec<f64> = rows.iter().map(|&r| eval.model[r]).collect();
        let data: Vec<f64> = rows.iter().map(|&r| problem.prep.data[r]).collect();
        gates.push(GateFit {
            gate_v: ds.gate_v,
            boundary_active: ts
                .iter()
                .map(|&t| !(BOUNDARY_TOL..=1.0 - BOUNDARY_TOL).contains(&t))
                .collect(),
            transmissions: ts,
            rmse_ghz: rmse(&model, &data)?,
            n_points: rows.len(),
        });
    }

    Ok(FitResult {
        globals: theta.globals,
        free_globals: layout.free_globals.clone(),
        rmse_ghz: rmse(&eval.model, &problem.prep.data)?,
        converged: report.converged(),
        termination: report.termination,
        iterations: report.iterations,
        start_index,
        gates,
        cost_history: report.history,
        residuals: eval.residuals,
        param_names,
        std_errors,
        covariance,
    })
}

/// Fit each dataset on its own with the globals held at `globals`.
pub fn fit_gates_fixed(
    datasets: &[SpectroscopyDataset],
    globals: &CircuitParams,
    counts: &[usize],
    cfg: &FitConfig,
) -> Vec<Result<FitResult, FitError>> {
    let fixed = cfg.with_fixed_globals();
    datasets
        .par_iter()
        .zip(counts)
        .map(|(ds, &n)| {
            let initial = Theta {
                globals: *globals,
                transmissions: vec![start_transmissions(0.65, cfg.start_step, n)],
            };
            fit_global(std::slice::from_ref(ds), &initial, &fixed)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountFit {
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse_ghz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub fit: Option<FitResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSelection {
    pub chosen: usize,
    pub curve: Vec<CountFit>,
}

impl ChannelSelection {
    pub fn rmse_of(&self, count: usize) -> Option<f64> {
        self.curve
            .iter()
            .find(|c| c.count == count)
            .and_then(|c| c.rmse_ghz)
    }

    pub fn chosen_fit(&self) -> Option<&FitResult> {
        self.curve
            .iter()
            .find(|c| c.count == self.chosen)
            .and_then(|c| c.fit.as_ref())
    }
}

/// Smallest count whose RMSE is within `factor` of the best one.
pub fn choose_count(curve: &[(usize, f64)], factor: f64) -> Option<usize> {
    let best = curve
        .iter()
        .map(|c| c.1)
        .filter(|r| r.is_finite())
        .min_by(f64::total_cmp)?;
    curve
        .iter()
        .filter(|(_, r)| r.is_finite() && *r <= factor * best)
        .map(|c| c.0)
        .min()
}

/// True when every RMSE lies within `factor` of every other.
pub fn mutually_comparable(rmses: &[f64], factor: f64) -> bool {
    let lo = rmses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rmses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    rmses.iter().all(|r| r.is_finite()) && (lo == hi || hi <= factor * lo)
}

/// Fit one dataset with each channel count (globals fixed) and pick the
/// most parsimonious adequate model.
pub fn select_channel_count(
    dataset: &SpectroscopyDataset,
    counts: &[usize],
    globals: &CircuitParams,
    cfg: &FitConfig,
) -> Result<ChannelSelection, FitError> {
    let fits = fit_gates_fixed(&vec![dataset.clone(); counts.len()], globals, counts, cfg);
    let curve: Vec<CountFit> = counts
        .iter()
        .zip(fits)
        .map(|(&count, fit)| match fit {
            Ok(f) => CountFit {
                count,
                rmse_ghz: Some(f.rmse_ghz),
                error: None,
                fit: Some(f),
            },
            Err(e) => CountFit {
                count,
                rmse_ghz: None,
                error: Some(e.to_string()),
                fit: None,
            },
        })
        .collect();
    let pairs: Vec<(usize, f64)> = curve
        .iter()
        .filter_map(|c| c.rmse_ghz.map(|r| (c.count, r)))
        .collect();
    let Some(chosen) = choose_count(&pairs, cfg.selection_factor) else {
        let diag = curve
            .iter()
            .map(|c| format!("{}: {}", c.count, c.error.as_deref().unwrap_or("?")))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(FitError::AllCountsFailed(diag));
    };
    Ok(ChannelSelection { chosen, curve })
}
