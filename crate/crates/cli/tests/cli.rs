use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const MEAN_MODEL: &str = r#"{"k":3,"Q":[0.2,0.5,0.3],"features":[[1,2,3]],"alpha":[2.0]}"#;
const TWO_POINT: &str = r#"{"k":2,"Q":[0.5,0.5],"features":[[1,2]],"alpha":[1.5]}"#;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_collapse-lab"));
    cmd.env_remove("COLLAPSE_LAB_THREADS");
    cmd
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn project_prints_named_fields() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "m.json", TWO_POINT.replace("1.5", "1.7").as_str());
    let out = bin().args(["project", "--config", &model]).output().unwrap();
    assert!(out.status.success());
    let v = json(&out);
    for field in ["lambda_star", "p_star", "log_Z", "dual_value", "iterations", "kkt_residual"] {
        assert!(v.get(field).is_some(), "missing {field}");
    }
    let p = v["p_star"].as_array().unwrap();
    assert!((p[0].as_f64().unwrap() - 0.3).abs() < 1e-9);
}

#[test]
fn curvature_report_and_plan() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "m.json", r#"{"k":3,"Q":[0.5,0.25,0.25]}"#);
    let out = bin().args(["curvature", "--config", &model]).output().unwrap();
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["tangent_dim"], 2);
    assert!((v["lambda_min"].as_f64().unwrap() - 8.0 / 3.0).abs() < 1e-9);
    assert!(v.get("H_star").is_some() && v.get("V").is_some());

    let out = bin().args(["curvature", "--config", &model, "--plan", "2", "0.1"]).output().unwrap();
    assert!(out.status.success());
    let n = json(&out)["n"].as_u64().unwrap();
    let expected = (4.0 * 10f64.ln() / (0.01 * 8.0 / 3.0)).ceil() as u64;
    assert_eq!(n, expected);
}

#[test]
fn collapse_emits_versioned_csv() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "m.json", MEAN_MODEL);
    let out = bin()
        .args(["collapse", "--config", &model, "--n", "20,40", "--m", "1,2", "--cgeo", "1", "--cgeo2", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# schema_version=1");
    assert_eq!(lines[1], "n,m,tau,lambda_min,tv_exact,tv_gaussian,bound,mass_out,rho_ratio");
    assert_eq!(lines.len(), 6);
    assert!(lines[2].starts_with("20,1,"));
}

#[test]
fn collapse_partial_grid_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "m.json", TWO_POINT);
    let out = bin()
        .args(["collapse", "--config", &model, "--n", "3,4", "--tau", "0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stdout(&out).lines().count(), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("n=3"));
}

#[test]
fn betel_posterior_csv() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "m.json", TWO_POINT);
    let grid = write(dir.path(), "g.json", r#"{"theta":[[1.4],[1.6]]}"#);
    let data = write(dir.path(), "d.txt", "1\n1\n1\n1\n2\n2\n2\n2\n2\n2\n");
    let out = bin()
        .args(["betel", "--config", &model, "--grid", &grid, "--data", &data])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "theta1,log_posterior,posterior");
    let last: f64 = lines[2].rsplit(',').next().unwrap().parse().unwrap();
    assert!((last - 9.0 / 13.0).abs() < 1e-12);

    let printed = bin()
        .args(["betel", "--config", &model, "--grid", &grid, "--data", &data, "--variant", "as-printed"])
        .args(["--format", "json"])
        .output()
        .unwrap();
    assert!(printed.status.success());
    assert_eq!(json(&printed)["variant"], "as_printed");
}

#[test]
fn gmm_and_gee_json() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "m.json", TWO_POINT);
    let data = write(dir.path(), "d.txt", "1\n1\n1\n1\n2\n2\n2\n2\n2\n2\n");
    let out = bin().args(["gmm", "--config", &model, "--data", &data]).output().unwrap();
    assert!(out.status.success());
    let v = json(&out);
    assert!((v["W_opt"][0][0].as_f64().unwrap() - 4.0).abs() < 1e-9);
    assert!((v["objective"].as_f64().unwrap() - 0.2).abs() < 1e-12);

    let clusters = write(
        dir.path(),
        "c.json",
        r#"[{"D":[[1]],"W":[[1]],"Sigma":[[2]]},{"D":[[2]],"W":[[1]],"Sigma":[[1]]}]"#,
    );
    let out = bin().args(["gee", "--config", &clusters]).output().unwrap();
    assert!(out.status.success());
    assert!((json(&out)["sandwich"][0][0].as_f64().unwrap() - 0.48).abs() < 1e-12);
}

#[test]
fn usage_and_input_errors_exit_one() {
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().args(["project"]).output().unwrap().status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let outside = write(dir.path(), "m.json", &TWO_POINT.replace("1.5", "2.5"));
    let out = bin().args(["project", "--config", &outside]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hull"));
    assert!(bin().arg("--help").output().unwrap().status.success());
}

#[test]
fn sweep_writes_reports_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "model.json", MEAN_MODEL);
    let config = write(
        dir.path(),
        "exp.json",
        r#"{"model":"model.json","n_grid":[20,30,40],"m_grid":[1],"outputs":"out","seeds":[7]}"#,
    );
    let first = bin().args(["sweep", "--config", &config]).output().unwrap();
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let csv = fs::read(dir.path().join("out/collapse.csv")).unwrap();
    assert_eq!(stdout(&first).as_bytes(), csv.as_slice());
    let summary: Value = serde_json::from_slice(&fs::read(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rows"], 3);
    assert_eq!(summary["seeds"][0], 7);
    assert_eq!(summary["rate_fits"][0]["fit"]["pairs"].as_array().unwrap().len(), 3);

    let again = bin()
        .args(["sweep", "--config", &config])
        .env("COLLAPSE_LAB_THREADS", "3")
        .output()
        .unwrap();
    assert!(again.status.success());
    assert_eq!(fs::read(dir.path().join("out/collapse.csv")).unwrap(), csv);
}

#[test]
fn sweep_lists_skipped_cells() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "exp.json",
        &format!(r#"{{"model":{TWO_POINT},"n_grid":[3,4,5,6],"m_grid":[1,2],"tau":0,"outputs":"o"}}"#),
    );
    let out = bin().args(["sweep", "--config", &config]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let summary: Value = serde_json::from_slice(&fs::read(dir.path().join("o/summary.json")).unwrap()).unwrap();
    let skipped = summary["skipped"].as_array().unwrap();
    assert_eq!(skipped.len(), 4);
    assert_eq!(summary["rows"].as_u64().unwrap() as usize + skipped.len(), 8);
}
