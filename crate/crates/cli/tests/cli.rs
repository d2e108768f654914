use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hpq::potentials::{HarmonicConfig, HarmonicSpectrum};
use hpq::{CircuitParams, FluxBias, NanowireChannels};
use tempfile::TempDir;

const DEVICE: &str = "[circuit]
ej1 = 55.03
ej2 = 55.03
ecj = 0.675
ec = 0.280
gap = 40.06
";

fn hpq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hpq"))
        .current_dir(dir)
        .env_remove("RUST_LOG")
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup(config: &str) -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

fn summary_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("{key} missing"))
        .parse()
        .unwrap()
}

#[test]
fn decompose_reports_even_regime_ratio() {
    let dir = setup(&format!(
        "{DEVICE}[nanowire]\ntransmissions = [0.98, 0.98, 0.75, 0.54]\n"
    ));
    let o = hpq(
        dir.path(),
        &["--config", "run.toml", "--out-dir", "out", "decompose"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(dir.path().join("out/summary.txt")).unwrap();
    let spec = HarmonicSpectrum::compute(
        &CircuitParams::hpq_device(),
        &NanowireChannels::new(vec![0.98, 0.98, 0.75, 0.54]).unwrap(),
        FluxBias::half_quantum(),
        &HarmonicConfig::default(),
    )
    .unwrap();
    let expected = (spec.c[2] / spec.c[1]).abs();
    assert!((summary_value(&summary, "abs_c2_over_c1") - expected).abs() < 1e-9 * expected);
    assert!(summary.contains("regime = even-dominated"));
    let csv = fs::read_to_string(dir.path().join("out/harmonics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("k,u,v,c,s"));
}

#[test]
fn malformed_field_is_a_config_error() {
    let dir = setup(&format!("{DEVICE}[decompose]\nflux_phi0 = \"half\"\n"));
    let o = hpq(dir.path(), &["--config", "run.toml", "decompose"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(
        err.contains("flux_phi0") && err.contains("run.toml:8"),
        "{err}"
    );
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let o = hpq(dir.path(), &["--config", "nope.toml", "decompose"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn transmon_sweep_is_flat() {
    let dir = setup(
        "[circuit]
ej1 = 59.96
ej2 = 59.96
ecj = 0.583
ec = 0.280
gap = 40.06
[potential]
u = [0.0, -9.8]
[sweep]
flux_phi0 = { start = 0.0, stop = 0.5, points = 5 }
labels = [\"f01\"]
",
    );
    let o = hpq(dir.path(), &["--config", "run.toml", "sweep"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("transitions.csv")).unwrap();
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let col = reader
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == "f01")
        .unwrap();
    let f01: Vec<f64> = reader
        .records()
        .map(|r| r.unwrap()[col].parse().unwrap())
        .collect();
    assert_eq!(f01.len(), 5);
    for f in &f01 {
        assert!((f - f01[0]).abs() < 1e-9);
    }
    let asymptotic = (8.0f64 * 9.8 * 0.28).sqrt() - 0.28;
    assert!((f01[0] / asymptotic - 1.0).abs() < 0.03, "{}", f01[0]);
}

const SYNTH: &str = "[nanowire]
transmissions = [0.68, 0.47, 0.46]
[synth]
noise_sigma = 0.05
lines = [{ label = \"f01\", fwhm = 0.008 }]
flux_phi0 = { start = 0.0, stop = 0.5, points = 4 }
drive_ghz = { start = 9.0, stop = 10.0, points = 201 }
";

#[test]
fn synth_reruns_are_byte_identical() {
    let dir = setup(&format!("{DEVICE}{SYNTH}"));
    for out in ["a", "b"] {
        let o = hpq(
            dir.path(),
            &[
                "--config",
                "run.toml",
                "--out-dir",
                out,
                "synth",
                "--seed",
                "5",
            ],
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["map.csv", "truth.csv", "synth.toml"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let o = hpq(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "--out-dir",
            "c",
            "synth",
            "--seed",
            "6",
        ],
    );
    assert!(o.status.success());
    assert_ne!(
        fs::read(dir.path().join("a/map.csv")).unwrap(),
        fs::read(dir.path().join("c/map.csv")).unwrap()
    );
}

#[test]
fn synth_without_seed_fails() {
    let dir = setup(&format!("{DEVICE}{SYNTH}"));
    let o = hpq(dir.path(), &["--config", "run.toml", "synth"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));
}

/// Transition dataset generated by the sweep command for the odd set.
fn model_dataset(dir: &Path) -> String {
    fs::write(
        dir.join("truth.toml"),
        format!(
            "{DEVICE}[nanowire]
transmissions = [0.68, 0.47, 0.46]
[sweep]
flux_phi0 = {{ start = 0.0, stop = 0.5, points = 6 }}
labels = [\"f01\", \"f12\"]
"
        ),
    )
    .unwrap();
    let o = hpq(
        dir,
        &["--config", "truth.toml", "--out-dir", "truth", "sweep"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.join("truth/transitions.csv")).unwrap();
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let mut out = String::from("gate_v,flux_phi0,label,freq_ghz,sigma_ghz,used\n");
    for r in reader.records() {
        let r = r.unwrap();
        for label in ["f01", "f12"] {
            out.push_str(&format!(
                "-7,{},{label},{},0.001,true\n",
                &r[col("flux_phi0")],
                &r[col(label)]
            ));
        }
    }
    out
}

const FIT_START: &str = "[circuit]
ej1 = 57.0
ej2 = 57.0
ecj = 0.65
ec = 0.280
gap = 40.06
";

#[test]
fn fit_recovers_globals_and_ranks_channel_counts() {
    let dir = setup(FIT_START);
    fs::write(dir.path().join("data.csv"), model_dataset(dir.path())).unwrap();
    let o = hpq(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "--out-dir",
            "out",
            "fit",
            "data.csv",
            "--channels",
            "2..4",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let result: toml::Value =
        toml::from_str(&fs::read_to_string(dir.path().join("out/fit_result.toml")).unwrap())
            .unwrap();
    let ej1 = result["globals"]["ej1"].as_float().unwrap();
    assert!((ej1 - 55.03).abs() < 1e-3, "{ej1}");
    let rmse = fs::read_to_string(dir.path().join("out/rmse_vs_channels.csv")).unwrap();
    let lines: Vec<&str> = rmse.lines().collect();
    assert_eq!(lines[0], "gate_v,channels,rmse_ghz,chosen,error");
    assert_eq!(lines.len(), 4);
    assert!(
        lines[2].starts_with("-7.00000000000e0,3,") && lines[2].contains(",true,"),
        "{rmse}"
    );
    assert!(dir.path().join("out/gates.csv").exists());

    // The fit result feeds classification.
    let o = hpq(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "--out-dir",
            "cls",
            "classify",
            "--result",
            "out/fit_result.toml",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let regimes = fs::read_to_string(dir.path().join("cls/regimes.csv")).unwrap();
    assert!(
        regimes.lines().nth(1).unwrap().ends_with("odd-dominated"),
        "{regimes}"
    );
}

#[test]
fn dataset_with_only_unused_points_is_rejected() {
    let dir = setup(FIT_START);
    fs::write(
        dir.path().join("data.csv"),
        "gate_v,flux_phi0,label,freq_ghz,sigma_ghz,used\n-7,0,f01,9.65,0.001,false\n",
    )
    .unwrap();
    let o = hpq(dir.path(), &["--config", "run.toml", "fit", "data.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no fittable points"), "{}", stderr(&o));
}

#[test]
fn malformed_dataset_rows_are_listed() {
    let dir = setup(FIT_START);
    fs::write(
        dir.path().join("data.csv"),
        "gate_v,flux_phi0,label,freq_ghz,sigma_ghz,used\n-7,0,f01,x,0.001,true\n-7,0,f01,9.6,-1,true\n",
    )
    .unwrap();
    let o = hpq(dir.path(), &["--config", "run.toml", "fit", "data.csv"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 2") && err.contains("line 3"), "{err}");
}

#[test]
fn classify_separates_three_regimes() {
    let dir = setup(&format!(
        "{DEVICE}[classify]
gates = [
  {{ gate_v = -7.0, transmissions = [0.68, 0.47, 0.46] }},
  {{ gate_v = -0.2, transmissions = [0.94, 0.58, 0.58] }},
  {{ gate_v = 7.2, transmissions = [0.98, 0.98, 0.75, 0.54] }},
]
"
    ));
    let o = hpq(dir.path(), &["--config", "run.toml", "classify"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let regimes = fs::read_to_string(dir.path().join("regimes.csv")).unwrap();
    let labels: Vec<&str> = regimes
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    assert_eq!(labels, ["odd-dominated", "mixed", "even-dominated"]);
    for f in [
        "gate_harmonics.csv",
        "sns_branch.csv",
        "parity.csv",
        "plot_data.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let first = fs::read(dir.path().join("parity.csv")).unwrap();
    let o = hpq(
        dir.path(),
        &["--config", "run.toml", "--threads", "1", "classify"],
    );
    assert!(o.status.success());
    assert_eq!(first, fs::read(dir.path().join("parity.csv")).unwrap());
}

#[test]
fn classify_without_gates_writes_empty_tables() {
    let dir = setup("");
    let o = hpq(dir.path(), &["--config", "run.toml", "classify"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let regimes = fs::read_to_string(dir.path().join("regimes.csv")).unwrap();
    assert_eq!(regimes.lines().count(), 1);
}

#[test]
fn kmax_override_is_validated() {
    let dir = setup(&format!("{DEVICE}[nanowire]\ntransmissions = [0.5]\n"));
    let o = hpq(
        dir.path(),
        &["--config", "run.toml", "--kmax", "0", "decompose"],
    );
    assert_eq!(o.status.code(), Some(2));
    let o = hpq(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "--kmax",
            "4",
            "--out-dir",
            "k4",
            "decompose",
        ],
    );
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("k4/harmonics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
}
