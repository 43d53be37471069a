use std::path::Path;
use std::process::Command;

fn loggas() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_loggas"));
    c.env_remove("LOGGAS_OUT").env_remove("LOGGAS_THREADS");
    c
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const SMALL: &str = r#"
n = [16, 32]

[model]
preset = "krawtchouk"
m = 2.0

[chain]
samples = 1200
burn_in_sweeps = 500
thinning_sweeps = 2
seed = 5
chains = 2

[analysis]
pseudodistance_samples = 10
nekrasov_verify = false
"#;

#[test]
fn verify_nekrasov_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = loggas()
        .args(["verify-nekrasov", "--preset", "krawtchouk", "--N", "3", "--theta", "0.5", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = read_json(&dir.path().join("nekrasov.json"));
    let e = &rep["entries"][0];
    assert_eq!(e["pass"], true);
    assert!(e["max_relative_residue"].as_f64().unwrap() < 1e-10);
}

#[test]
fn rational_mode_reports_exact_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = loggas().args(["verify-nekrasov", "--preset", "krawtchouk", "--m", "2", "--N", "2,3", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let rep = read_json(&dir.path().join("nekrasov.json"));
    for e in rep["entries"].as_array().unwrap() {
        assert_eq!(e["rational_exact_zero"], true);
    }
}

#[test]
fn equilibrium_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = loggas().args(["equilibrium", "--preset", "krawtchouk", "--m", "3", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = read_json(&dir.path().join("equilibrium.json"));
    assert!(rep["reference_sup_error"].as_f64().unwrap() < 1e-3);
    let csv = std::fs::read_to_string(dir.path().join("equilibrium.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,mu,band_label"));
    assert!(lines.any(|l| l.ends_with(",band")));
    assert!(!csv.contains('\r'));
}

#[test]
fn invalid_config_reports_line_and_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, SMALL.replace("seed = 5", "seed = 5\nsede = 1")).unwrap();
    let out = loggas().args(["sample", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 13") && err.contains("sede"), "{err}");

    std::fs::write(&cfg, SMALL.replace("n = [16, 32]", "n = []")).unwrap();
    let out = loggas().args(["sample", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn missing_model_is_config_error() {
    let out = loggas().args(["equilibrium"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn enumeration_too_large_is_stage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = loggas().args(["verify-nekrasov", "--preset", "krawtchouk", "--m", "2", "--N", "60", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn unwritable_output_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let out = loggas().args(["equilibrium", "--preset", "krawtchouk", "--m", "2", "--out"]).arg(blocker.join("sub")).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn env_overrides_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = loggas().args(["covariance", "--preset", "krawtchouk", "--m", "2"]).env("LOGGAS_OUT", dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("covariance.csv")).unwrap();
    assert!(csv.starts_with("u_re,u_im,v_re,v_im,c_re,c_im\n"));
    let row = csv.lines().find(|l| l.starts_with("3.0000000000000000e0,0.0000000000000000e0,4.")).unwrap();
    let c: f64 = row.split(',').nth(4).unwrap().parse().unwrap();
    assert!((c - 0.010310).abs() < 1e-6);
}

#[test]
fn clt_trend_is_tidy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = loggas().args(["clt", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert!(matches!(out.status.code(), Some(0) | Some(1)));
    let csv = std::fs::read_to_string(dir.path().join("o/clt_trend.csv")).unwrap();
    assert!(csv.starts_with("N,observable,cumulant_order,value,value_im,stderr,ess\n"));
    // 2 N values, 3 observables, 4 orders
    assert_eq!(csv.lines().count(), 1 + 2 * 3 * 4);
}

#[test]
fn manifest_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out = loggas().args(["pipeline", "--threads", "2", "--config"]).arg(&cfg).arg("--out").arg(&a).output().unwrap();
    assert!(matches!(out.status.code(), Some(0) | Some(1)), "{}", String::from_utf8_lossy(&out.stderr));
    let out = loggas().args(["pipeline", "--config"]).arg(a.join("manifest.toml")).arg("--out").arg(&b).output().unwrap();
    assert!(matches!(out.status.code(), Some(0) | Some(1)));
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 10);
    for n in names {
        assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn seed_flag_changes_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    for (s, d) in [("1", "x"), ("2", "y")] {
        let out = loggas().args(["sample", "--seed", s, "--config"]).arg(&cfg).arg("--out").arg(dir.path().join(d)).output().unwrap();
        assert_eq!(out.status.code(), Some(0));
    }
    let x = std::fs::read(dir.path().join("x/samples_N32.csv")).unwrap();
    let y = std::fs::read(dir.path().join("y/samples_N32.csv")).unwrap();
    assert_ne!(x, y);
}
