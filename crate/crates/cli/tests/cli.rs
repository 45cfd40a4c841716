use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nmq(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nmq"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_documents_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = nmq(&["--help"], dir.path());
    let text = String::from_utf8_lossy(&o.stdout);
    for code in ["0  success", "2  invalid", "3  spectral", "4  runtime", "5  Lorentzian"] {
        assert!(text.contains(code), "missing '{code}' in help");
    }
}

#[test]
fn factorize_lorentzian() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("psd.json"),
        r#"{"num": [[0.09, 0]], "den": [[100.09, 0], [-20, 0], [1, 0]], "domain": "omega"}"#,
    )
    .unwrap();
    let o = nmq(&["factorize", "psd.json", "--out", "res"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("res/realization.json")).unwrap()).unwrap();
    let f = &v["F"][0][0];
    assert!((f[0].as_f64().unwrap() + 0.3).abs() < 1e-12);
    assert!((f[1].as_f64().unwrap() + 10.0).abs() < 1e-12);
    assert!(v["realizability_residual"].as_f64().unwrap() <= 1e-10);
    assert!(v["psd_grid_check"]["max_relative_error"].as_f64().unwrap() <= 1e-9);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("res/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "factorize");
    assert_eq!(manifest["outputs"][0]["file"], "realization.json");
}

#[test]
fn improper_psd_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("psd.json"),
        r#"{"num": [[1, 0], [0, 0], [1, 0]], "den": [[1, 0], [0, 0], [1, 0]], "domain": "omega"}"#,
    )
    .unwrap();
    let o = nmq(&["factorize", "psd.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("properness"));
}

#[test]
fn missing_config_field_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"omega_p": 10.0}"#).unwrap();
    let o = nmq(&["cavity", "--config", "c.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing field `omega_a`"));
}

#[test]
fn invalid_parameter_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = nmq(&["cavity", "--dt", "0.01", "--horizon", "0.1", "--n-traj", "2"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("dt"));
}

fn csv_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn same_seed_gives_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| ["qubit", "--horizon", "0.2", "--n-traj", "8", "--seed", "7", "--out", out];
    for (out, threads) in [("a", "1"), ("b", "2")] {
        let o = Command::new(env!("CARGO_BIN_EXE_nmq"))
            .args(args(out))
            .current_dir(dir.path())
            .env("NMQ_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = csv_outputs(&dir.path().join("a"));
    let b = csv_outputs(&dir.path().join("b"));
    assert_eq!(a.len(), 3);
    assert_eq!(a, b);
    let head = String::from_utf8_lossy(&a[0].1).lines().take(3).collect::<Vec<_>>().join("\n");
    assert!(head.contains("# command: qubit"));
    assert!(head.contains("config_sha256="));

    let o = nmq(&["qubit", "--horizon", "0.2", "--n-traj", "8", "--seed", "8", "--out", "c"], dir.path());
    assert!(o.status.success());
    let c = csv_outputs(&dir.path().join("c"));
    let conditional = |v: &[(String, Vec<u8>)]| v.iter().find(|(n, _)| n == "qubit_conditional.csv").unwrap().1.clone();
    assert_ne!(conditional(&a), conditional(&c));
}

#[test]
fn dot_rejects_trajectory_flags() {
    let dir = tempfile::tempdir().unwrap();
    let o = nmq(&["dot", "--seed", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
