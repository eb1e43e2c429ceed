use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rndop_cli::config::{Preset, SEED_ENV};
use serde_json::Value;

fn rndop(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rndop"))
        .args(args)
        .env_remove(SEED_ENV)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_owned).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(str::to_owned).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().expect("a diagnostic line")).unwrap()
}

#[test]
fn desk_place_succeeds_with_one_row_per_addition() {
    let dir = tempfile::tempdir().unwrap();
    let out = rndop(&["place", "--preset", "desk", "--out", "out"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1);
    assert!(out.stderr.is_empty());

    let (header, rows) = csv_rows(&dir.path().join("out/rndop_vs_k.csv"));
    assert_eq!(
        header,
        ["k", "achieved_sq_rndop", "lb_iter", "ub_iter", "lb_config", "lb_universal", "valid"]
    );
    let placement: Value = serde_json::from_slice(&fs::read(dir.path().join("out/placement.json")).unwrap()).unwrap();
    let run = &placement["run"];
    let failed = run["failed"].as_u64().unwrap() as usize;
    assert_eq!(rows.len(), 20 + failed);
    assert_eq!(placement["complete"], Value::Bool(true));

    // Re-derive the achieved column from the anchors written so far.
    let initial: Vec<[f64; 3]> = serde_json::from_value(run["initial"].clone()).unwrap();
    let iterations = run["iterations"].as_array().unwrap();
    let mut anchors = initial.clone();
    let achieved = column(&header, &rows, "achieved_sq_rndop");
    for (it, value) in iterations.iter().zip(&achieved) {
        let a: [f64; 3] = serde_json::from_value(it["anchor_gcs"].clone()).unwrap();
        anchors.push(a);
        let points: Vec<rndop_core::Vec3> = anchors.iter().map(|p| rndop_core::Vec3(*p)).collect();
        let direct = rndop_core::geometry::max_rndop_of(&points, rndop_core::geometry::Kind::Xyz).unwrap();
        assert!((direct * direct - value).abs() <= 1e-9 * value.max(1e-3));
    }
}

#[test]
fn zero_additions_give_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"placement": {"n_added": 0, "n_mc_init": 200}}"#);
    for mode in ["2d", "3d"] {
        let out = rndop(&["place", "--config", &cfg, "--mode", mode, "--out", mode], dir.path());
        assert_eq!(out.status.code(), Some(0));
        let text = fs::read_to_string(dir.path().join(mode).join("rndop_vs_k.csv")).unwrap();
        assert_eq!(text, "k,achieved_sq_rndop,lb_iter,ub_iter,lb_config,lb_universal,valid\n");
    }
}

#[test]
fn two_d_rows_leave_lower_bounds_blank() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"placement": {"n_added": 3, "n_mc_init": 200}}"#);
    let out = rndop(&["place", "--config", &cfg, "--mode", "2d", "--method", "eig", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let (header, rows) = csv_rows(&dir.path().join("o/rndop_vs_k.csv"));
    let lb = header.iter().position(|h| h == "lb_config").unwrap();
    assert!(rows.len() >= 3);
    assert!(rows.iter().all(|r| r[lb].is_empty() && r[lb + 1].is_empty()));
}

const SMALL_MC: &str = r#"{
    "placement": {"n_added": 4, "n_mc_init": 300, "solver": {"multistart": 8}},
    "campaign": {"n_mc_algo": 10, "n_targ": 50, "r_cov": 100, "range": {"bias": 0, "sigma": 0},
                 "timing_sweep": []}
}"#;

#[test]
fn noiseless_campaign_recovers_targets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_MC);
    let out = rndop(&["mc", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&dir.path().join("o/error_cdf.csv"));
    assert_eq!(header, ["method", "config_percentile", "error_m", "cdf"]);
    assert_eq!(rows.len(), 3 * 2 * 50);
    let errors = column(&header, &rows, "error_m");
    assert!(errors.iter().all(|&e| e < 1e-4), "max {:?}", errors.iter().cloned().fold(0.0, f64::max));
    let (t_header, t_rows) = csv_rows(&dir.path().join("o/timing.csv"));
    assert_eq!(t_header, ["method", "N_a", "p10_s", "p50_s", "p90_s"]);
    assert!(t_rows.is_empty());
}

#[test]
fn repeated_seed_reproduces_files_and_cdf_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &SMALL_MC.replace(r#""bias": 0, "sigma": 0"#, r#""bias": 1, "sigma": 6"#),
    );
    for name in ["a", "b"] {
        let out = rndop(&["mc", "--config", &cfg, "--seed", "11", "--out", name], dir.path());
        assert_eq!(out.status.code(), Some(0));
    }
    for file in ["error_cdf.csv", "campaign.json"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs");
    }
    let (header, rows) = csv_rows(&dir.path().join("a/error_cdf.csv"));
    let cdf = column(&header, &rows, "cdf");
    let errors = column(&header, &rows, "error_m");
    // Each (method, percentile) block is sorted and ends at 1; cdf = rank / n.
    for (block, chunk) in cdf.chunks(50).enumerate() {
        let e = &errors[block * 50..(block + 1) * 50];
        assert!(e.windows(2).all(|w| w[0] <= w[1]));
        for (i, &c) in chunk.iter().enumerate() {
            assert!((c - (i + 1) as f64 / 50.0).abs() < 1e-12);
        }
    }
}

#[test]
fn isotropic_dop_field_is_constant_and_within_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"placement": {"initial_anchors": [[1,1,1],[1,-1,-1],[-1,1,-1],[-1,-1,1]]},
            "dopfield": {"n_theta": 12, "n_phi": 5}}"#,
    );
    let out = rndop(&["dopfield", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&dir.path().join("o/dop_field.csv"));
    assert_eq!(rows.len(), 60);
    let rndop = column(&header, &rows, "rndop");
    for &v in &rndop {
        assert!((v - 0.5f64.sqrt()).abs() < 1e-12);
    }
    let dop = column(&header, &rows, "dop_at_rt");
    let r_t = column(&header, &rows, "r_t");
    for i in 0..rows.len() {
        assert!((dop[i] / r_t[i] - rndop[i]).abs() / rndop[i] < 1e-3);
    }
}

#[test]
fn dop_field_grid_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"placement": {"n_mc_init": 500}, "dopfield": {"n_theta": 30, "n_phi": 7}}"#,
    );
    for (mode, expected) in [("3d", 210), ("2d", 30)] {
        let out = rndop(&["dopfield", "--config", &cfg, "--mode", mode, "--out", mode], dir.path());
        assert_eq!(out.status.code(), Some(0));
        let (header, rows) = csv_rows(&dir.path().join(mode).join("dop_field.csv"));
        assert_eq!(rows.len(), expected);
        let rndop = column(&header, &rows, "rndop");
        let lb = column(&header, &rows, "lb")[0];
        let ub = column(&header, &rows, "ub")[0];
        assert!(rndop.iter().all(|&v| v >= lb - 1e-12 && v <= ub + 1e-12));
    }
}

#[test]
fn configuration_errors_exit_2_with_json_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    for text in [r#"{"placement": {"n_addd": 1}}"#, r#"{"schema_version": 7}"#, "not json"] {
        let cfg = write_config(dir.path(), text);
        let out = rndop(&["place", "--config", &cfg], dir.path());
        assert_eq!(out.status.code(), Some(2), "{text}");
        assert!(out.stdout.is_empty());
        let diag = stderr_json(&out);
        assert_eq!(diag["kind"], "config");
        assert_eq!(diag["exit_code"], 2);
    }
    let out = rndop(&["place", "--mode", "4d"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infeasible_placement_exits_3_and_keeps_partial_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"placement": {"d_th": 44, "n_added": 3,
            "initial_anchors": [[30,20,10],[-30,-20,10],[30,-20,-10],[-30,20,-10]]}}"#,
    );
    let out = rndop(&["place", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["kind"], "infeasible");
    let placement: Value = serde_json::from_slice(&fs::read(dir.path().join("o/placement.json")).unwrap()).unwrap();
    assert_eq!(placement["complete"], Value::Bool(false));
}

#[test]
fn seed_from_environment_is_overridden_by_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"seed": 1, "placement": {"n_added": 2, "n_mc_init": 200}}"#);
    let run = |env: Option<&str>, flag: Option<&str>, out: &str| -> Value {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_rndop"));
        cmd.args(["place", "--config", &cfg, "--out", out]).current_dir(dir.path());
        cmd.env_remove(SEED_ENV);
        if let Some(v) = env {
            cmd.env(SEED_ENV, v);
        }
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        assert!(cmd.output().unwrap().status.success());
        serde_json::from_slice(&fs::read(dir.path().join(out).join("placement.json")).unwrap()).unwrap()
    };
    assert_eq!(run(None, None, "a")["seed"], 1);
    assert_eq!(run(Some("77"), None, "b")["seed"], 77);
    assert_eq!(run(Some("77"), Some("5"), "c")["seed"], 5);
    assert_ne!(run(None, None, "a")["run"]["initial"], run(Some("77"), None, "b")["run"]["initial"]);
}

/// Collects dotted key paths of nested objects.
fn key_paths(v: &Value, prefix: &str, out: &mut Vec<String>) {
    if let Value::Object(map) = v {
        for (k, child) in map {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            out.push(path.clone());
            key_paths(child, &path, out);
        }
    }
}

fn schema_paths(schema: &Value, prefix: &str, out: &mut Vec<String>) {
    if let Some(Value::Object(props)) = schema.get("properties") {
        for (k, child) in props {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            out.push(path.clone());
            schema_paths(child, &path, out);
        }
    }
}

#[test]
fn published_schema_matches_config_keys() {
    let text = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/config-schema-v1.json")).unwrap();
    let schema: Value = serde_json::from_str(&text).unwrap();
    let mut from_schema = Vec::new();
    schema_paths(&schema, "", &mut from_schema);
    let mut from_config = Vec::new();
    key_paths(&serde_json::to_value(Preset::Desk.config()).unwrap(), "", &mut from_config);
    from_schema.sort();
    from_config.sort();
    assert_eq!(from_schema, from_config);
}
