use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_heavytail-ou"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

const TAILS: &str = r#"
[seeds]
master = 7
[budgets]
n_samples = 2000
horizons = [5.0, 10.0, 20.0]
dt = 0.05
[tails]
thresholds = [0.3, 1.0]
"#;

const INSTANTON: &str = r#"
[instanton]
horizons = [1.0, 2.0, 4.0]
dt = 0.01
"#;

#[test]
fn tails_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tails.toml", TAILS);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&run("tails", &cfg, &a, &[])), 0);
    assert_eq!(code(&run("tails", &cfg, &b, &[])), 0);
    for f in ["tails.csv", "rate_fit.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = read(&a.join("tails.csv"));
    assert!(csv.starts_with("x,horizon,n_samples,n_hits,p_hat,"));
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    let manifest: serde_json::Value = serde_json::from_str(&read(&a.join("tails_manifest.json"))).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);

    // a different seed changes the samples
    let c = tmp.path().join("c");
    assert_eq!(code(&run("tails", &cfg, &c, &["--seed", "8"])), 0);
    assert_ne!(std::fs::read(a.join("tails.csv")).unwrap(), std::fs::read(c.join("tails.csv")).unwrap());
}

#[test]
fn every_numeric_cell_is_finite_or_nan() {
    let tmp = tempfile::tempdir().unwrap();
    // a threshold nobody reaches gives bound-only rows
    let cfg = write_config(
        tmp.path(),
        "t.toml",
        "[budgets]\nn_samples = 300\nhorizons = [5.0, 10.0, 20.0]\ndt = 0.05\n[tails]\nthresholds = [1e6]\n",
    );
    let out = tmp.path().join("o");
    assert_eq!(code(&run("tails", &cfg, &out, &[])), 0);
    let csv = read(&out.join("tails.csv"));
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.last(), Some(&"bound"));
        for c in &cells[..cells.len() - 1] {
            assert!(*c == "nan" || c.parse::<f64>().unwrap().is_finite(), "{c}");
        }
    }
    assert!(read(&out.join("rate_fit.csv")).contains("insufficient"));
}

#[test]
fn instanton_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let icfg = write_config(tmp.path(), "i.toml", INSTANTON);
    let o = run("instanton", &icfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read(&out.join("instanton.csv"));
    assert_eq!(rows.lines().count(), 4);
    let jinf: serde_json::Value = serde_json::from_str(&read(&out.join("jinf.json"))).unwrap();
    assert_eq!(jinf["monotone"], true);
    assert_eq!(jinf["refinement_passed"], true);
    let j_inf = jinf["prefactor"]["j_inf"].as_f64().unwrap();
    assert!(j_inf > 1.0 && j_inf < 1.3, "{j_inf}");

    let tcfg = write_config(tmp.path(), "t.toml", TAILS);
    assert_eq!(code(&run("tails", &tcfg, &out, &[])), 0);
    let rcfg = write_config(tmp.path(), "r.toml", "");
    let o = run("report", &rcfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read(&out.join("report.csv"));
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("x,horizon,mc_scaled_rate,theory_rate,gap_relative,status"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    let x: f64 = first[0].parse().unwrap();
    let theory: f64 = first[3].parse().unwrap();
    assert!((theory - j_inf * x.sqrt()).abs() < 1e-12 * theory);
    assert_eq!(report.lines().count(), 1 + 6);
}

#[test]
fn report_rejects_a_prefactor_for_another_model() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let icfg = write_config(tmp.path(), "i.toml", INSTANTON);
    assert_eq!(code(&run("instanton", &icfg, &out, &[])), 0);
    let tcfg = write_config(tmp.path(), "t.toml", TAILS);
    assert_eq!(code(&run("tails", &tcfg, &out, &[])), 0);
    let rcfg = write_config(tmp.path(), "r.toml", "[model]\ngamma = 2.0\np = 4.0\n");
    assert_eq!(code(&run("report", &rcfg, &out, &[])), 2);
}

#[test]
fn report_without_inputs_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "r.toml", "");
    assert_eq!(code(&run("report", &cfg, &tmp.path().join("empty"), &[])), 2);
}

#[test]
fn simulate_stores_the_sampled_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "s.toml",
        "[budgets]\nn_samples = 50\nhorizons = [2.0]\ndt = 0.01\n[simulate]\nstore_paths = 2\n",
    );
    let out = tmp.path().join("o");
    assert_eq!(code(&run("simulate", &cfg, &out, &[])), 0);
    let values = read(&out.join("simulate.csv"));
    assert_eq!(values.lines().count(), 51);
    let paths = read(&out.join("paths.csv"));
    assert_eq!(paths.lines().count(), 1 + 2 * 201);
    // trapezoid average of stored path 0 equals its simulated time average
    let xs: Vec<f64> = paths
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(1) == Some("0"))
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    let f: Vec<f64> = xs.iter().map(|x: &f64| x.powi(4).copysign(*x)).collect();
    let integral: f64 = f.windows(2).map(|w| 0.005 * (w[0] + w[1])).sum();
    let stored: f64 = values.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!((integral / 2.0 - stored).abs() < 1e-12 * stored.abs().max(1e-3), "{integral} {stored}");
}

#[test]
fn excursions_decompose_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "e.toml",
        "[model]\ngamma = 1.0\np = 3.0\n[excursions]\neps0 = 0.1\nn_paths = 20\nhorizon = 20.0\nn_cycles = 500\n",
    );
    let out = tmp.path().join("o");
    assert_eq!(code(&run("excursions", &cfg, &out, &[])), 0);
    let summary: serde_json::Value = serde_json::from_str(&read(&out.join("excursions.json"))).unwrap();
    assert!(summary["max_decomposition_error"].as_f64().unwrap() < 1e-10);
    assert_eq!(summary["n_cycles"], 500);
    assert_eq!(read(&out.join("cycles.csv")).lines().count(), 501);
}

const QUICK_VALIDATE: &str = "[validate]\ncriteria = [2, 4]\n";

#[test]
fn validate_passes_and_repeats_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "v.toml", QUICK_VALIDATE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = run("validate", &cfg, &a, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("PASS") && stdout.contains("2 of 2 criteria passed"));
    assert_eq!(code(&run("validate", &cfg, &b, &[])), 0);
    for f in ["validation.csv", "validation.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn corrupted_tolerance_fails_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "v.toml",
        "[validate]\ncriteria = [2]\n[validate.tolerances]\nhomogeneity_relative = -1.0\n",
    );
    let out = tmp.path().join("o");
    let o = run("validate", &cfg, &out, &[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
    assert!(read(&out.join("validation.csv")).contains(",fail,"));
    let manifest: serde_json::Value = serde_json::from_str(&read(&out.join("validate_manifest.json"))).unwrap();
    assert_eq!(manifest["status"], "failed");
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let cases = [
        "[model]\ngamma = 0.0\np = 4.0\n",
        "[budgets]\nn_samples = 0\n",
        "not toml at all [",
        "[validate.tolerances]\nno_such_tolerance = 1.0\n",
        "experiment = \"simulate\"\n",
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("bad{i}.toml"), text);
        let o = run("tails", &cfg, &out, &[]);
        assert_eq!(code(&o), 2, "{text}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let missing = run("tails", &tmp.path().join("nope.toml"), &out, &[]);
    assert_eq!(code(&missing), 2);
    // clap usage errors share the code
    assert_eq!(code(&bin().arg("tails").output().unwrap()), 2);
}
