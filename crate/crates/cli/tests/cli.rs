//! End-to-end tests of the `riccilab` binary: exit codes, file outputs,
//! diagnostics, and byte determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_riccilab"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const FLAT_TORUS_RUN: &str = "\
[metric]
family = torus
nx = 16
ny = 16
lx = 1.0
ly = 1.0
initial = zero

[flow]
kind = ricci
t_end = 0.002
dt = auto

[monitor]
k = 1, 2

[output]
dir = out
prefix = flat
";

#[test]
fn flat_torus_run_writes_constant_columns_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.cfg", FLAT_TORUS_RUN);
    let out = bin()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .env("RICCILAB_OUTPUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));

    let csv = std::fs::read_to_string(tmp.path().join("out/flat.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert_eq!(
        header,
        "t,t_bar,tau,s,volume,lambda_k1,lambda_bar_k1,F_k1,W_k1,M2_k1,M3_k1,\
         lambda_k2,lambda_bar_k2,F_k2,W_k2,M2_k2,M3_k2,einstein_residual,soliton_residual"
    );
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() >= 20, "expected at least 20 rows, got {}", rows.len());
    for row in &rows {
        let cells: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        // volume = 1, lambda = 0, einstein residual = 0 on the flat torus.
        assert!((cells[4] - 1.0).abs() < 1e-12);
        assert!(cells[5].abs() < 1e-11);
        assert!(cells[17].abs() < 1e-12);
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/flat.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["family"], "torus");
    assert_eq!(manifest["config"]["dt_spec"], "auto");
    assert!(manifest["config"]["dt_resolved"].as_f64().unwrap() > 0.0);
    assert!(manifest["truncation"].is_null());
}

#[test]
fn sphere_run_past_blowup_truncates_with_partial_csv_and_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "sphere.cfg",
        "[metric]\nfamily = sphere\ndim = 2\nr2 = 1.0\n\n[flow]\nkind = ricci\nt_end = 1.0\ndt = 0.01\n\n[monitor]\nk = 1\n\n[output]\ndir = out\nprefix = sphere\n",
    );
    let out = bin()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .env("RICCILAB_OUTPUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("truncated"));
    let csv = std::fs::read_to_string(tmp.path().join("out/sphere.csv")).unwrap();
    // Blow-up at t = r2/(2(n-1)) = 0.5 truncates the run partway.
    let rows = csv.lines().count() - 1;
    assert!(rows > 10 && rows < 101, "unexpected row count {rows}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/sphere.manifest.json")).unwrap())
            .unwrap();
    assert!(!manifest["truncation"].is_null());
}

#[test]
fn missing_config_file_names_the_path_and_exits_2() {
    let out = bin()
        .arg("run")
        .arg("--config")
        .arg("/nonexistent/riccilab.cfg")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/riccilab.cfg"));
}

#[test]
fn unknown_config_key_is_a_named_configuration_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.cfg", "[metric]\nfamly = torus\n");
    let out = bin().arg("run").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("famly"));
}

#[test]
fn cfl_violating_dt_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "cfl.cfg",
        "[metric]\nfamily = torus\nnx = 16\nny = 16\nlx = 1.0\nly = 1.0\ninitial = zero\n\n[flow]\nkind = ricci\nt_end = 0.01\ndt = 0.01\n\n[output]\ndir = out\n",
    );
    let out = bin()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .env("RICCILAB_OUTPUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("stability"));
}

#[test]
fn plot_is_byte_deterministic_and_rejects_malformed_input() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "run.cfg", FLAT_TORUS_RUN);
    let run = bin()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .env("RICCILAB_OUTPUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", stderr(&run));
    let csv = tmp.path().join("out/flat.csv");

    for name in ["a.svg", "b.svg"] {
        let out = bin()
            .arg("plot")
            .arg("--input")
            .arg(&csv)
            .arg("--output")
            .arg(tmp.path().join(name))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a = std::fs::read(tmp.path().join("a.svg")).unwrap();
    let b = std::fs::read(tmp.path().join("b.svg")).unwrap();
    assert_eq!(a, b, "plot output must be byte-identical across runs");
    assert!(String::from_utf8_lossy(&a).contains("polyline"));

    // Malformed CSV: diagnostic names row and column.
    let bad = write(tmp.path(), "bad.csv", "t,lambda_k1\n0.0,1.0\n0.1,oops\n");
    let out = bin()
        .arg("plot")
        .arg("--input")
        .arg(&bad)
        .arg("--output")
        .arg(tmp.path().join("bad.svg"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("row 3") && msg.contains("lambda_k1"), "{msg}");

    // Empty CSV.
    let empty = write(tmp.path(), "empty.csv", "");
    let out = bin()
        .arg("plot")
        .arg("--input")
        .arg(&empty)
        .arg("--output")
        .arg(tmp.path().join("empty.svg"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_with_filtered_checks_reports_only_those() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "verify.cfg",
        "[suite]\ngrid = 16\nsteps = 10\nk_values = 1\ns_values = 0, -1\noracle_count = 2\nchecks = sphere\n\n[output]\ndir = report\n",
    );
    let out = bin()
        .arg("verify")
        .arg("--config")
        .arg(&cfg)
        .env("RICCILAB_OUTPUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("report/report.json")).unwrap(),
    )
    .unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    for c in checks {
        assert!(
            c["name"].as_str().unwrap().contains("sphere"),
            "unexpected check {}",
            c["name"]
        );
    }
    assert_eq!(report["overall_pass"], true);
}

#[test]
fn verify_with_cfl_violating_dt_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "verify.cfg",
        "[suite]\ngrid = 16\nsteps = 4\nk_values = 1\ns_values = 0\ndt = 0.5\nchecks = gauss_bonnet\n",
    );
    let out = bin()
        .arg("verify")
        .arg("--config")
        .arg(&cfg)
        .env("RICCILAB_OUTPUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("stability"));
}

#[test]
fn sweep_writes_disjoint_subdirectories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "sweep.cfg",
        "[metric]\nfamily = torus\nnx = 16\nny = 16\nlx = 6.283185307179586\nly = 6.283185307179586\ninitial = sinusoid\namplitude = 0.2\nmodes = 2:1\n\n[flow]\nkind = rescaled\nprovider = constant\nt_end = 0.004\ndt = auto\n\n[monitor]\nk = 1\n\n[output]\ndir = sweep_out\nprefix = member\n\n[sweep]\ns_values = 0, -1\n",
    );
    let out = bin()
        .arg("sweep")
        .arg("--config")
        .arg(&cfg)
        .env("RICCILAB_OUTPUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    for s in ["s=0", "s=-1"] {
        let csv = tmp.path().join("sweep_out").join(s).join("member.csv");
        assert!(csv.exists(), "missing {}", csv.display());
        let manifest_path = tmp
            .path()
            .join("sweep_out")
            .join(s)
            .join("member.manifest.json");
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(manifest_path).unwrap()).unwrap();
        assert_eq!(
            manifest["config"]["flow_kind"],
            if s == "s=0" { "ricci" } else { "rescaled" }
        );
    }
}
