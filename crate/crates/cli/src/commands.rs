use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use log::warn;

use hpq::analysis::{
    gate_sweep_harmonics, gate_sweep_regimes, harmonics_plot, parity_table, regimes_plot,
    sns_branch_report, sns_plot, GatePoint,
};
use hpq::fitstack::{
    extract_transitions, fit_global, select_channel_count, start_transmissions, FitResult,
    SpectroscopyDataset, Theta, TransitionHint,
};
use hpq::io;
use hpq::potentials::{find_phi_min, fourier_v, parity_sums, validate_bo, HarmonicSpectrum};
use hpq::spectrum::{
    default_labels, spectrum_vs_flux, spectrum_vs_flux_lenient, sweep_branches_lenient,
    BranchHarmonics, SpectrumConfig,
};
use hpq::synth::{synthesize_map, SynthConfig};
use hpq::{CircuitParams, FluxBias, NanowireChannels};

use crate::config::{resolve, RunConfig};
use crate::{Cli, Command};

/// Error carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Configuration or input problem (exit 2).
    Input(anyhow::Error),
    /// Computation failure (exit 1).
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(e) | CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn input(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Input(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

struct Context_ {
    cfg: RunConfig,
    base: PathBuf,
    out: PathBuf,
}

impl Context_ {
    fn circuit(&self) -> Result<CircuitParams> {
        let c = self
            .cfg
            .circuit
            .ok_or_else(|| input(anyhow!("config has no [circuit] section")))?;
        c.validate().map_err(|e| input(anyhow!("[circuit] {e}")))?;
        Ok(c)
    }

    fn channels(&self) -> Result<NanowireChannels> {
        NanowireChannels::new(self.cfg.nanowire.transmissions.clone())
            .map_err(|e| input(anyhow!("[nanowire] {e}")))
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(
        &self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> std::result::Result<(), hpq::IoError>,
    ) -> Result<()> {
        io::write_csv_file(&self.out_path(name), f).map_err(runtime)
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        io::write_text(&self.out_path(name), text).map_err(runtime)
    }
}

fn load(cli: &Cli) -> Result<Context_> {
    let (mut cfg, base) = match &cli.config {
        Some(path) => {
            let cfg: RunConfig = io::read_toml(path).map_err(input)?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (cfg, base)
        }
        None => (RunConfig::default(), PathBuf::from(".")),
    };
    if let Some(k) = cli.kmax {
        cfg.harmonics.k_max = k;
        cfg.fit.solver.harmonics.k_max = k;
    }
    if let Some(n) = cli.ncut {
        cfg.basis.n_cut = n;
        cfg.fit.solver.basis.n_cut = n;
    }
    cfg.harmonics
        .validate()
        .map_err(|e| input(anyhow!("[harmonics] {e}")))?;
    fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("creating {}", cli.out_dir.display()))
        .map_err(runtime)?;
    Ok(Context_ {
        cfg,
        base,
        out: cli.out_dir.clone(),
    })
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = load(cli)?;
    match &cli.command {
        Command::Decompose => decompose(&ctx),
        Command::Sweep => sweep(&ctx),
        Command::Synth(a) => synth(&ctx, a.seed),
        Command::Fit(a) => fit(&ctx, &a.datasets, a.channels.as_ref().map(|c| c.0.clone())),
        Command::Classify(a) => classify(&ctx, a.result.as_deref()),
    }
}

fn flux_from_phi0(name: &str, v: f64) -> Result<FluxBias> {
    if !v.is_finite() {
        return Err(input(anyhow!("{name} must be finite, got {v}")));
    }
    Ok(FluxBias::from_phi0(v))
}

fn decompose(ctx: &Context_) -> Result<()> {
    let params = ctx.circuit()?;
    let channels = ctx.channels()?;
    let d = &ctx.cfg.decompose;
    let flux = flux_from_phi0("decompose.flux_phi0", d.flux_phi0)?;
    let spec =
        HarmonicSpectrum::compute(&params, &channels, flux, &ctx.cfg.harmonics).map_err(input)?;
    let sums = parity_sums(&spec);
    let label = find_phi_min(&params, &channels, flux, &ctx.cfg.regime);
    let bo = validate_bo(&params, d.max_transition_ghz);

    let mut s = String::new();
    let f = io::fmt_f64;
    let _ = writeln!(s, "flux_phi0 = {}", f(d.flux_phi0));
    let _ = writeln!(s, "k_max = {}", spec.k_max());
    let _ = writeln!(s, "converged = {}", spec.is_converged());
    let _ = writeln!(s, "c1 = {}", f(spec.c[1]));
    if spec.k_max() >= 2 {
        let _ = writeln!(s, "c2 = {}", f(spec.c[2]));
        let _ = writeln!(s, "abs_c2_over_c1 = {}", f((spec.c[2] / spec.c[1]).abs()));
    }
    let _ = writeln!(s, "c_even = {}", f(sums.c_even));
    let _ = writeln!(s, "c_odd = {}", f(sums.c_odd));
    let _ = writeln!(s, "ratio_even_odd = {}", f(sums.ratio));
    let _ = writeln!(s, "phi_min = {}", f(label.phi_min));
    let _ = writeln!(s, "regime = {}", label.regime);
    let _ = writeln!(s, "bo_ecj_exceeds_ec = {}", bo.ecj_exceeds_ec);
    let _ = writeln!(s, "bo_ej_over_ecj = {}", f(bo.ratio));
    let _ = writeln!(s, "bo_ratio_ok = {}", bo.ratio_ok);
    let _ = writeln!(s, "bo_internal_mode_ghz = {}", f(bo.internal_mode_ghz));
    let _ = writeln!(s, "bo_internal_mode_above = {}", bo.internal_mode_above);
    if !spec.is_converged() {
        warn!("harmonic series not converged at k_max = {}", spec.k_max());
    }
    if !bo.all() {
        warn!("Born-Oppenheimer validity conditions not all met");
    }
    ctx.write("harmonics.csv", |w| io::write_harmonics_csv(w, &spec))?;
    ctx.write_text("summary.txt", &s)?;
    print!("{s}");
    Ok(())
}

fn sweep(ctx: &Context_) -> Result<()> {
    let params = ctx.circuit()?;
    let channels = ctx.channels()?;
    let sw = &ctx.cfg.sweep;
    sw.flux_phi0
        .validate("sweep.flux_phi0")
        .map_err(|e| input(anyhow!(e)))?;
    let labels = sw
        .labels
        .clone()
        .unwrap_or_else(|| default_labels(ctx.cfg.basis.n_levels));
    let cfg = SpectrumConfig {
        harmonics: ctx.cfg.harmonics,
        basis: ctx.cfg.basis,
        labels,
    };
    cfg.validate().map_err(input)?;
    let grid: Vec<f64> = sw
        .flux_phi0
        .values()
        .iter()
        .map(|f| f * std::f64::consts::TAU)
        .collect();
    let (table, failures) = match &ctx.cfg.potential {
        Some(pot) => {
            let branches = explicit_branches(&pot.u, &params, &channels, &ctx.cfg.harmonics)?;
            sweep_branches_lenient(&branches, params.ec, &grid, &cfg)
        }
        None => spectrum_vs_flux_lenient(&params, &channels, &grid, &cfg),
    }
    .map_err(runtime)?;
    for e in &failures {
        warn!("{e}");
    }
    ctx.write("transitions.csv", |w| io::write_transition_csv(w, &table))?;
    println!(
        "{} flux points, {} transitions, {} unconverged",
        table.rows.len(),
        table.labels.len(),
        failures.len()
    );
    Ok(())
}

fn explicit_branches(
    u: &[f64],
    params: &CircuitParams,
    channels: &NanowireChannels,
    harmonics: &hpq::potentials::HarmonicConfig,
) -> Result<BranchHarmonics> {
    let len = harmonics.k_max + 1;
    if u.len() > len {
        return Err(input(anyhow!(
            "potential.u has {} entries but k_max = {} allows {len}",
            u.len(),
            harmonics.k_max
        )));
    }
    if let Some(x) = u.iter().find(|x| !x.is_finite()) {
        return Err(input(anyhow!("potential.u must be finite, got {x}")));
    }
    let mut u = u.to_vec();
    u.resize(len, 0.0);
    let v = fourier_v(channels, params.gap, harmonics).map_err(input)?;
    Ok(BranchHarmonics { u, v })
}

fn synth(ctx: &Context_, seed: Option<u64>) -> Result<()> {
    let params = ctx.circuit()?;
    let channels = ctx.channels()?;
    let sec = ctx
        .cfg
        .synth
        .clone()
        .ok_or_else(|| input(anyhow!("config has no [synth] section")))?;
    let seed = seed
        .or(sec.seed)
        .ok_or_else(|| input(anyhow!("synth needs a seed (synth.seed or --seed)")))?;
    sec.flux_phi0
        .validate("synth.flux_phi0")
        .map_err(|e| input(anyhow!(e)))?;
    sec.drive_ghz
        .validate("synth.drive_ghz")
        .map_err(|e| input(anyhow!(e)))?;
    let cfg = SynthConfig {
        lines: sec.lines.clone(),
        noise_sigma: sec.noise_sigma,
        seed,
        weighting: sec.weighting,
    };
    cfg.validate().map_err(input)?;
    let spectrum = SpectrumConfig {
        harmonics: ctx.cfg.harmonics,
        basis: ctx.cfg.basis,
        labels: Vec::new(),
    };
    let flux: Vec<f64> = sec
        .flux_phi0
        .values()
        .iter()
        .map(|f| f * std::f64::consts::TAU)
        .collect();
    let drive = sec.drive_ghz.values();
    let map =
        synthesize_map(&params, &channels, &flux, &drive, &cfg, &spectrum).map_err(
            |e| match e {
                hpq::SynthError::Spectrum(_) => runtime(e),
                _ => input(e),
            },
        )?;
    ctx.write("map.csv", |w| io::write_map_csv(w, &map.traces))?;
    ctx.write("truth.csv", |w| io::write_transition_csv(w, &map.truth))?;

    #[derive(serde::Serialize)]
    struct Metadata<'a> {
        circuit: CircuitParams,
        transmissions: &'a [f64],
        flux_phi0: crate::config::Grid,
        drive_ghz: crate::config::Grid,
        synth: &'a SynthConfig,
    }
    let meta = io::to_toml(&Metadata {
        circuit: params,
        transmissions: channels.transmissions(),
        flux_phi0: sec.flux_phi0,
        drive_ghz: sec.drive_ghz,
        synth: &cfg,
    })
    .map_err(runtime)?;
    ctx.write_text("synth.toml", &meta)?;
    println!(
        "{} traces x {} drive points, seed {seed}",
        map.traces.len(),
        drive.len()
    );
    Ok(())
}

fn load_datasets(ctx: &Context_, extra: &[PathBuf]) -> Result<Vec<SpectroscopyDataset>> {
    let mut out = Vec::new();
    let paths = ctx
        .cfg
        .fit
        .datasets
        .iter()
        .map(|p| resolve(&ctx.base, p))
        .chain(extra.iter().cloned());
    for p in paths {
        out.extend(io::read_dataset_file(&p).map_err(input)?);
    }
    for m in &ctx.cfg.fit.maps {
        out.push(extract_map(ctx, m)?);
    }
    Ok(out)
}

/// Peak extraction on a map, with windows centred on the model lines of
/// the configured circuit and the map's transmissions.
fn extract_map(ctx: &Context_, m: &crate::config::MapInput) -> Result<SpectroscopyDataset> {
    let path = resolve(&ctx.base, &m.path);
    let file = fs::File::open(&path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(input)?;
    let traces = io::read_map_csv(file).map_err(|e| input(anyhow!("{}: {e}", path.display())))?;
    let params = ctx.circuit()?;
    let channels = NanowireChannels::new(m.transmissions.clone()).map_err(input)?;
    let cfg = SpectrumConfig {
        harmonics: ctx.cfg.fit.solver.harmonics,
        basis: ctx.cfg.fit.solver.basis,
        labels: m.labels.clone(),
    };
    let top = m.labels.iter().map(|l| l.top() + 1).max().unwrap_or(1);
    let mut cfg = cfg;
    cfg.basis.n_levels = cfg.basis.n_levels.max(top);
    let flux: Vec<f64> = traces.iter().map(|t| t.phi_e).collect();
    let model = spectrum_vs_flux(&params, &channels, &flux, &cfg).map_err(runtime)?;
    let hints: Vec<TransitionHint> = m
        .labels
        .iter()
        .enumerate()
        .map(|(i, &label)| TransitionHint {
            label,
            centers: model.rows.iter().map(|r| r.freqs[i]).collect(),
            half_width: m.half_width,
            fwhm_guess: m.fwhm_guess,
            used: true,
        })
        .collect();
    let ex = extract_transitions(&traces, &hints, &ctx.cfg.fit.extract);
    if !ex.failures.is_empty() {
        warn!(
            "{}: {} of {} windows rejected",
            path.display(),
            ex.failures.len(),
            traces.len() * hints.len()
        );
    }
    Ok(SpectroscopyDataset::new(m.gate_v, ex.points))
}

fn fit(ctx: &Context_, extra: &[PathBuf], counts: Option<Vec<usize>>) -> Result<()> {
    let globals = ctx.circuit()?;
    let datasets = load_datasets(ctx, extra)?;
    if datasets.is_empty() {
        return Err(input(anyhow!(
            "no datasets given (fit.datasets, fit.maps or arguments)"
        )));
    }
    let sec = &ctx.cfg.fit;
    let solver = &sec.solver;
    let transmissions = match &sec.initial_transmissions {
        Some(t) if t.len() == datasets.len() => t.clone(),
        Some(t) => {
            return Err(input(anyhow!(
                "fit.initial_transmissions has {} entries for {} datasets",
                t.len(),
                datasets.len()
            )))
        }
        None => {
            let level = solver.start_levels.get(1).copied().unwrap_or(0.65);
            vec![start_transmissions(level, solver.start_step, sec.channels); datasets.len()]
        }
    };
    let initial = Theta {
        globals,
        transmissions,
    };
    let result = fit_global(&datasets, &initial, solver).map_err(|e| match e {
        hpq::FitError::Spectrum(_) | hpq::FitError::Singular => runtime(e),
        _ => input(e),
    })?;
    ctx.write_text("fit_result.toml", &io::to_toml(&result).map_err(runtime)?)?;
    ctx.write("gates.csv", |w| write_gates(w, &result))?;

    let f = io::fmt_f64;
    println!(
        "globals: ej1 = {}, ej2 = {}, ecj = {}, ec = {}, gap = {}",
        f(result.globals.ej1),
        f(result.globals.ej2),
        f(result.globals.ecj),
        f(result.globals.ec),
        f(result.globals.gap)
    );
    println!(
        "rmse = {} GHz, termination = {:?}",
        f(result.rmse_ghz),
        result.termination
    );
    for g in &result.gates {
        let ts: Vec<String> = g.transmissions.iter().map(|&t| format!("{t:.4}")).collect();
        println!(
            "gate {} V: T = [{}], rmse = {} GHz",
            g.gate_v,
            ts.join(", "),
            f(g.rmse_ghz)
        );
    }

    let counts = counts.unwrap_or_else(|| sec.counts.clone());
    if !counts.is_empty() {
        let mut selections = Vec::new();
        for d in &datasets {
            match select_channel_count(d, &counts, &result.globals, solver) {
                Ok(sel) => {
                    println!("gate {} V: chosen channel count {}", d.gate_v, sel.chosen);
                    selections.push((d.gate_v, sel));
                }
                Err(e) => warn!("gate {} V: channel selection failed: {e}", d.gate_v),
            }
        }
        ctx.write("rmse_vs_channels.csv", |w| {
            io::write_rmse_csv(w, &selections)
        })?;
    }
    Ok(())
}

fn write_gates(w: &mut Vec<u8>, r: &FitResult) -> std::result::Result<(), hpq::IoError> {
    let n = r
        .gates
        .iter()
        .map(|g| g.transmissions.len())
        .max()
        .unwrap_or(0);
    let mut header = vec!["gate_v".to_string(), "n_points".into(), "rmse_ghz".into()];
    header.extend((0..n).map(|i| format!("T{i}")));
    let mut text = header.join(",");
    text.push('\n');
    for g in &r.gates {
        let mut rec = vec![
            io::fmt_f64(g.gate_v),
            g.n_points.to_string(),
            io::fmt_f64(g.rmse_ghz),
        ];
        rec.extend((0..n).map(|i| {
            g.transmissions
                .get(i)
                .map_or(String::new(), |&t| io::fmt_f64(t))
        }));
        text.push_str(&rec.join(","));
        text.push('\n');
    }
    w.extend_from_slice(text.as_bytes());
    Ok(())
}

fn classify(ctx: &Context_, result: Option<&Path>) -> Result<()> {
    let sec = &ctx.cfg.classify;
    let (globals, gates) = match result {
        Some(p) => {
            let r: FitResult = io::read_toml(p).map_err(input)?;
            let gates = r
                .gates
                .iter()
                .map(|g| GatePoint::new(g.gate_v, &g.transmissions))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(input)?;
            (r.globals, gates)
        }
        // With no gates nothing depends on the circuit; write empty tables.
        None if sec.gates.is_empty() && ctx.cfg.circuit.is_none() => {
            (CircuitParams::hpq_device(), Vec::new())
        }
        None => (ctx.circuit()?, sec.gates.clone()),
    };
    globals.validate().map_err(input)?;
    let flux = flux_from_phi0("classify.flux_phi0", sec.flux_phi0)?;
    let reference = (!gates.is_empty()).then_some(sec.reference_gate);
    let harmonics = gate_sweep_harmonics(&globals, &gates, flux, &ctx.cfg.harmonics, reference)
        .map_err(input)?;
    let regimes = gate_sweep_regimes(&globals, &gates, flux, &ctx.cfg.regime).map_err(input)?;
    let sns = sns_branch_report(&globals, &gates, &ctx.cfg.harmonics).map_err(input)?;
    let mut parity = Vec::with_capacity(gates.len());
    for g in &gates {
        let rows = parity_table(
            &globals,
            &g.transmissions,
            flux,
            &ctx.cfg.harmonics,
            &ctx.cfg.basis,
            sec.parity_states,
        )
        .map_err(runtime)?;
        parity.push((g.gate_v, rows));
    }
    for row in harmonics.rows.iter().filter(|r| !r.converged) {
        warn!("gate {} V: harmonic series not converged", row.gate_v);
    }
    ctx.write("regimes.csv", |w| io::write_regime_csv(w, &regimes))?;
    ctx.write("gate_harmonics.csv", |w| {
        io::write_gate_harmonics_csv(w, &harmonics)
    })?;
    ctx.write("sns_branch.csv", |w| io::write_sns_csv(w, &sns))?;
    ctx.write("parity.csv", |w| io::write_parity_csv(w, &parity))?;
    let mut plot = harmonics_plot(&harmonics);
    plot.extend(regimes_plot(&regimes));
    plot.extend(sns_plot(&sns));
    ctx.write("plot_data.csv", |w| io::write_plot_csv(w, &plot))?;
    for r in &regimes {
        println!(
            "gate {} V: phi_min = {:.4} rad, {}",
            r.gate_v, r.phi_min, r.regime
        );
    }
    Ok(())
}
