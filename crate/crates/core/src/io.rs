//! Text formats: TOML documents for parameters and results, CSV tables for
//! everything row-shaped.
//!
//! Floats are written with 12 significant digits in scientific notation,
//! independent of locale, so repeated runs produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::analysis::{GateHarmonicsTable, GateRegime, ParityRow, PlotPoint, SnsBranchReport};
use crate::error::IoError;
use crate::fitstack::{ChannelSelection, SpectroscopyDataset, TransitionPoint};
use crate::potentials::HarmonicSpectrum;
use crate::spectrum::{TransitionLabel, TransitionTable};
use crate::synth::Trace;

/// `x` with 12 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.11e}")
    }
}

fn file_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| file_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|e| file_err(path, e))
}

/// Parse a TOML document; errors carry the line and the offending key.
pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T, IoError> {
    toml::from_str(text).map_err(|e| {
        let message = e.message().trim().to_string();
        match e.span() {
            Some(span) => {
                let start = span.start.min(text.len());
                let line = text[..start].matches('\n').count() + 1;
                // Quote the offending line so the key is visible.
                let source = text.lines().nth(line - 1).unwrap_or("").trim();
                let message = if source.is_empty() {
                    message
                } else {
                    format!("{message} (in `{source}`)")
                };
                IoError::Parse { line, message }
            }
            None => IoError::Document(message),
        }
    })
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = read_text(path)?;
    parse_toml(&text).map_err(|e| match e {
        IoError::Parse { line, message } => {
            IoError::Document(format!("{}:{line}: {message}", path.display()))
        }
        other => other,
    })
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String, IoError> {
    toml::to_string_pretty(value).map_err(|e| IoError::Document(e.to_string()))
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

fn floats(xs: &[f64]) -> impl Iterator<Item = String> + '_ {
    xs.iter().map(|&x| fmt_f64(x))
}

/// Columns `k, u, v, c, s`.
pub fn write_harmonics_csv<W: Write>(w: W, spec: &HarmonicSpectrum) -> Result<(), IoError> {
    let mut out = writer(w);
    out.write_record(["k", "u", "v", "c", "s"])?;
    for k in 0..spec.c.len() {
        let mut rec = vec![k.to_string()];
        rec.extend(floats(&[spec.u[k], spec.v[k], spec.c[k], spec.s[k]]));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Columns `flux_phi0, phi_e, converged, E0.., <label>.., me_<label>..`.
pub fn write_transition_csv<W: Write>(w: W, table: &TransitionTable) -> Result<(), IoError> {
    let n_levels = table
        .rows
        .iter()
        .map(|r| r.energies.len())
        .max()
        .unwrap_or(0);
    let mut out = writer(w);
    let mut header = vec!["flux_phi0".to_string(), "phi_e".into(), "converged".into()];
    header.extend((0..n_levels).map(|i| format!("E{i}")));
    header.extend(table.labels.iter().map(|l| l.to_string()));
    header.extend(table.labels.iter().map(|l| format!("me_{l}")));
    out.write_record(&header)?;
    for row in &table.rows {
        let mut rec = vec![
            fmt_f64(row.flux_phi0()),
            fmt_f64(row.phi_e),
            row.converged.to_string(),
        ];
        rec.extend(
            (0..n_levels).map(|i| fmt_f64(row.energies.get(i).copied().unwrap_or(f64::NAN))),
        );
        rec.extend(floats(&row.freqs));
        rec.extend(floats(&row.matrix_elements));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub const MAP_HEADER: [&str; 3] = ["flux_phi0", "drive_frequency_ghz", "signal"];

/// Long-format spectroscopy map, one row per (flux, drive frequency).
pub fn write_map_csv<W: Write>(w: W, traces: &[Trace]) -> Result<(), IoError> {
    let mut out = writer(w);
    out.write_record(MAP_HEADER)?;
    for t in traces {
        let flux = fmt_f64(t.phi_e / std::f64::consts::TAU);
        for (f, s) in t.freqs.iter().zip(&t.signal) {
            out.write_record([flux.as_str(), &fmt_f64(*f), &fmt_f64(*s)])?;
        }
    }
    out.flush()?;
    Ok(())
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize, IoError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| IoError::Parse {
            line: 1,
            message: format!("missing column {name:?}"),
        })
}

fn parse_field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    name: &str,
) -> Result<T, IoError>
where
    T::Err: std::fmt::Display,
{
    let line = rec.position().map_or(0, |p| p.line() as usize);
    let raw = rec.get(idx).ok_or_else(|| IoError::Parse {
        line,
        message: format!("missing field {name}"),
    })?;
    raw.trim().parse().map_err(|e| IoError::Parse {
        line,
        message: format!("{name}: cannot parse {raw:?}: {e}"),
    })
}

/// Read a long-format map back into traces, grouped by consecutive flux.
pub fn read_map_csv<R: Read>(r: R) -> Result<Vec<Trace>, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = rdr.headers()?.clone();
    let [fi, di, si] = MAP_HEADER.map(|h| header_index(&headers, h));
    let (fi, di, si) = (fi?, di?, si?);
    let mut traces: Vec<Trace> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let flux: f64 = parse_field(&rec, fi, MAP_HEADER[0])?;
        let f: f64 = parse_field(&rec, di, MAP_HEADER[1])?;
        let s: f64 = parse_field(&rec, si, MAP_HEADER[2])?;
        let phi_e = flux * std::f64::consts::TAU;
        match traces.last_mut() {
            Some(t) if t.phi_e == phi_e => {
                t.freqs.push(f);
                t.signal.push(s);
            }
            _ => traces.push(Trace {
                phi_e,
                freqs: vec![f],
                signal: vec![s],
            }),
        }
    }
    Ok(traces)
}

pub const DATASET_HEADER: [&str; 6] = [
    "gate_v",
    "flux_phi0",
    "label",
    "freq_ghz",
    "sigma_ghz",
    "used",
];

/// Transition points of several gates in one table.
pub fn write_dataset_csv<W: Write>(w: W, datasets: &[SpectroscopyDataset]) -> Result<(), IoError> {
    let mut out = writer(w);
    out.write_record(DATASET_HEADER)?;
    for d in datasets {
        for p in &d.points {
            out.write_record([
                fmt_f64(d.gate_v),
                fmt_f64(p.flux_phi0()),
                p.label.to_string(),
                fmt_f64(p.freq),
                fmt_f64(p.sigma),
                p.used.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

fn parse_bool(rec: &csv::StringRecord, idx: usize) -> Result<bool, IoError> {
    let line = rec.position().map_or(0, |p| p.line() as usize);
    match rec
        .get(idx)
        .map(|s| s.trim().to_ascii_lowercase())
        .as_deref()
    {
        Some("true" | "1" | "yes") => Ok(true),
        Some("false" | "0" | "no") => Ok(false),
        other => Err(IoError::Parse {
            line,
            message: format!("used: expected true/false, got {other:?}"),
        }),
    }
}

/// Read transition points, one dataset per distinct gate voltage in order
/// of first appearance. Every bad row is reported with its line number.
pub fn read_dataset_csv<R: Read>(r: R) -> Result<Vec<SpectroscopyDataset>, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = DATASET_HEADER
        .iter()
        .map(|h| header_index(&headers, h))
        .collect::<Result<_, _>>()?;
    let mut order: Vec<u64> = Vec::new();
    let mut groups: BTreeMap<u64, SpectroscopyDataset> = BTreeMap::new();
    let mut errors = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = (|| -> Result<(f64, TransitionPoint), IoError> {
            let gate_v: f64 = parse_field(&rec, idx[0], "gate_v")?;
            let flux: f64 = parse_field(&rec, idx[1], "flux_phi0")?;
            let label: TransitionLabel = parse_field(&rec, idx[2], "label")?;
            let freq: f64 = parse_field(&rec, idx[3], "freq_ghz")?;
            let sigma: f64 = parse_field(&rec, idx[4], "sigma_ghz")?;
            let used = parse_bool(&rec, idx[5])?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            if !(gate_v.is_finite() && flux.is_finite() && freq.is_finite()) {
                return Err(IoError::Parse {
                    line,
                    message: "gate_v, flux_phi0 and freq_ghz must be finite".into(),
                });
            }
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(IoError::Parse {
                    line,
                    message: format!("sigma_ghz must be finite and > 0, got {sigma}"),
                });
            }
            Ok((
                gate_v,
                TransitionPoint {
                    phi_e: flux * std::f64::consts::TAU,
                    label,
                    freq,
                    sigma,
                    used,
                },
            ))
        })();
        match row {
            Ok((gate_v, p)) => {
                let key = gate_v.to_bits();
                groups
                    .entry(key)
                    .or_insert_with(|| {
                        order.push(key);
                        SpectroscopyDataset::new(gate_v, Vec::new())
                    })
                    .points
                    .push(p);
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    if !errors.is_empty() {
        return Err(IoError::Document(errors.join("\n")));
    }
    Ok(order
        .into_iter()
        .map(|k| groups.remove(&k).expect("grouped key"))
        .collect())
}

pub fn read_dataset_file(path: &Path) -> Result<Vec<SpectroscopyDataset>, IoError> {
    let f = fs::File::open(path).map_err(|e| file_err(path, e))?;
    read_dataset_csv(f).map_err(|e| IoError::Document(format!("{}: {e}", path.display())))
}

/// Gate sweep with raw and normalized coefficients.
pub fn write_gate_harmonics_csv<W: Write>(w: W, table: &GateHarmonicsTable) -> Result<(), IoError> {
    let k_max = table
        .rows
        .first()
        .map_or(0, |r| r.c.len().saturating_sub(1));
    let mut out = writer(w);
    let mut header = vec!["gate_v".to_string()];
    header.extend((0..=k_max).map(|k| format!("c{k}")));
    header.extend((0..=k_max).map(|k| format!("s{k}")));
    header.extend((0..=k_max).map(|k| format!("c{k}_normalized")));
    header.extend(["c_even", "c_odd", "ratio", "converged"].map(String::from));
    out.write_record(&header)?;
    for (row, norm) in table.rows.iter().zip(&table.normalized) {
        let mut rec = vec![fmt_f64(row.gate_v)];
        rec.extend(floats(&row.c));
        rec.extend(floats(&row.s));
        rec.extend(floats(norm));
        rec.extend(floats(&[row.c_even, row.c_odd, row.ratio]));
        rec.push(row.converged.to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_regime_csv<W: Write>(w: W, rows: &[GateRegime]) -> Result<(), IoError> {
    let mut out = writer(w);
    out.write_record(["gate_v", "phi_min", "regime"])?;
    for r in rows {
        out.write_record([fmt_f64(r.gate_v), fmt_f64(r.phi_min), r.regime.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Columns `gate_v, v0.., v_even, v_odd, sum_t, u_even, u_odd`.
pub fn write_sns_csv<W: Write>(w: W, report: &SnsBranchReport) -> Result<(), IoError> {
    let k_max = report.u.len().saturating_sub(1);
    let mut out = writer(w);
    let mut header = vec!["gate_v".to_string()];
    header.extend((0..=k_max).map(|k| format!("v{k}")));
    header.extend(["v_even", "v_odd", "sum_t", "u_even", "u_odd"].map(String::from));
    out.write_record(&header)?;
    for r in &report.rows {
        let mut rec = vec![fmt_f64(r.gate_v)];
        rec.extend(floats(&r.v));
        rec.extend(floats(&[
            r.v_even,
            r.v_odd,
            r.sum_t,
            report.u_even,
            report.u_odd,
        ]));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Parity tables of several gates; dominant components are written as
/// `n:p` pairs separated by `;`.
pub fn write_parity_csv<W: Write>(w: W, tables: &[(f64, Vec<ParityRow>)]) -> Result<(), IoError> {
    let mut out = writer(w);
    out.write_record([
        "gate_v",
        "state",
        "energy",
        "even_weight",
        "odd_weight",
        "dominant",
    ])?;
    for (gate_v, rows) in tables {
        for r in rows {
            let dominant = r
                .dominant
                .iter()
                .map(|(n, p)| format!("{n}:{}", fmt_f64(*p)))
                .collect::<Vec<_>>()
                .join(";");
            out.write_record([
                fmt_f64(*gate_v),
                r.state.to_string(),
                fmt_f64(r.energy),
                fmt_f64(r.even_weight),
                fmt_f64(r.odd_weight),
                dominant,
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_plot_csv<W: Write>(w: W, points: &[PlotPoint]) -> Result<(), IoError> {
    let mut out = writer(w);
    out.write_record(["x", "y", "series"])?;
    for p in points {
        out.write_record([fmt_f64(p.x), fmt_f64(p.y), p.series.clone()])?;
    }
    out.flush()?;
    Ok(())
}

/// RMSE against channel count, one row per (gate, count).
pub fn write_rmse_csv<W: Write>(
    w: W,
    selections: &[(f64, ChannelSelection)],
) -> Result<(), IoError> {
    let mut out = writer(w);
    out.write_record(["gate_v", "channels", "rmse_ghz", "chosen", "error"])?;
    for (gate_v, sel) in selections {
        for c in &sel.curve {
            out.write_record([
                fmt_f64(*gate_v),
                c.count.to_string(),
                fmt_f64(c.rmse_ghz.unwrap_or(f64::NAN)),
                (c.count == sel.chosen).to_string(),
                c.error.clone().unwrap_or_default(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Write a CSV table to `path` through one of the writers above.
pub fn write_csv_file(
    path: &Path,
    f: impl FnOnce(&mut Vec<u8>) -> Result<(), IoError>,
) -> Result<(), IoError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf).map_err(|e| file_err(path, e))
}
