//! End-to-end runs of the `secidx` binary: golden report and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn secidx(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_secidx"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn generate(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let target = dir.join(name);
    let mut args = vec!["generate", "-o", target.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = secidx(&args, dir);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    target
}

/// Replaces wall-clock fields, which vary between runs.
fn mask_timings(v: &mut Value) {
    if let Some(rows) = v["components"].as_array_mut() {
        for row in rows {
            for key in ["delta_seconds", "rho_seconds", "rho_upper_seconds"] {
                if !row[key].is_null() {
                    row[key] = Value::String("masked".into());
                }
            }
        }
    }
    v["meta"]["version"] = Value::String("masked".into());
}

#[test]
fn compare_report_matches_golden_file() {
    let tmp = tempfile::tempdir().unwrap();
    let p = generate(tmp.path(), "p2", &["--platoon", "2", "--N", "80", "--L", "2", "--seed", "3"]);
    let out = secidx(
        &[
            "compare", "--data", "p2/data.csv", "--system", "p2/system.json", "--L", "2", "--seed", "3", "--threads", "1",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut report: Value = serde_json::from_slice(&out.stdout).unwrap();
    mask_timings(&mut report);
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/platoon2_compare.json");
    if std::env::var_os("SECIDX_BLESS").is_some() {
        std::fs::write(&golden_path, serde_json::to_string_pretty(&report).unwrap() + "\n").unwrap();
    }
    let golden: Value = serde_json::from_str(&std::fs::read_to_string(golden_path).unwrap()).unwrap();
    assert_eq!(report, golden);
    assert!(p.join("system.json").exists());
}

#[test]
fn generate_is_deterministic_and_sized() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["--platoon", "1", "--N", "40", "--L", "2", "--seed", "5"];
    let a = generate(tmp.path(), "a", &args);
    let b = generate(tmp.path(), "b", &args);
    let text = std::fs::read_to_string(a.join("data.csv")).unwrap();
    assert_eq!(text, std::fs::read_to_string(b.join("data.csv")).unwrap());
    assert_eq!(
        std::fs::read(a.join("system.json")).unwrap(),
        std::fs::read(b.join("system.json")).unwrap()
    );
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "k,u1,y1,y2");
    assert_eq!(lines.count(), 40);
    // existing output is kept unless forced
    let again = secidx(&["generate", "-o", "a", "--platoon", "1", "--N", "40", "--L", "2"], tmp.path());
    assert_eq!(code(&again), 1);
}

#[test]
fn protected_scalar_plant_reports_infinite_indices() {
    let tmp = tempfile::tempdir().unwrap();
    generate(
        tmp.path(),
        "s",
        &["--random", "--n", "1", "--m", "1", "--p", "1", "--nu", "1", "--N", "30", "--L", "1", "--seed", "2"],
    );
    let out = secidx(&["compare", "--data", "s/data.csv", "--system", "s/system.json", "--L", "1"], tmp.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = report["components"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["component"], "u_1");
    assert_eq!(rows[0]["delta"], "inf");
    assert_eq!(rows[0]["rho"], "inf");
}

#[test]
fn exit_codes_follow_the_contract() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "p2", &["--platoon", "2", "--N", "80", "--L", "2", "--seed", "3"]);
    let base = ["--data", "p2/data.csv", "--system", "p2/system.json", "--L", "2"];
    let run = |cmd: &[&str]| {
        let mut args: Vec<&str> = cmd.to_vec();
        args.extend_from_slice(&base);
        secidx(&args, tmp.path())
    };

    let ok = run(&["verify-attack", "--gamma", "u_2,y_3,y_4", "--component", "u_2"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let v: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(v["verified"], true);
    assert!(v["replay_relative_output"].as_f64().unwrap() <= 1e-6);

    let tampered = run(&["verify-attack", "--gamma", "u_2,y_3,y_4", "--component", "u_2", "--perturb", "1e-2"]);
    assert_eq!(code(&tampered), 1);
    let v: Value = serde_json::from_slice(&tampered.stdout).unwrap();
    assert_eq!(v["verified"], false);
    assert!(v["max_residual"].as_f64().unwrap() > 1e-6);

    assert_eq!(code(&run(&["verify-attack", "--gamma", "y_1", "--component", "y_1"])), 3);
    assert_eq!(code(&run(&["rho", "--component", "y_9"])), 1);

    // 20 samples cannot be persistently exciting of order n + 2L = 8 with two inputs
    let text = std::fs::read_to_string(tmp.path().join("p2/data.csv")).unwrap();
    let short: Vec<&str> = text.lines().take(21).collect();
    std::fs::write(tmp.path().join("short.csv"), short.join("\n") + "\n").unwrap();
    let pe = secidx(&["pe-check", "--data", "short.csv", "--L", "2", "--n-hat", "4"], tmp.path());
    assert_eq!(code(&pe), 2);
    let refused = secidx(&["rho-bound", "--data", "short.csv", "--L", "2", "--n-hat", "4"], tmp.path());
    assert_eq!(code(&refused), 2);
    let forced = secidx(&["rho-bound", "--data", "short.csv", "--L", "2", "--n-hat", "4", "--force"], tmp.path());
    assert_eq!(code(&forced), 0, "{}", String::from_utf8_lossy(&forced.stderr));

    std::fs::write(tmp.path().join("bad.csv"), "k,u1\n0,abc\n").unwrap();
    assert_eq!(code(&secidx(&["rho", "--data", "bad.csv", "--L", "1"], tmp.path())), 1);
    assert_eq!(code(&secidx(&["delta"], tmp.path())), 1);
}

#[test]
fn csv_output_and_figures() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), "p2", &["--platoon", "2", "--N", "80", "--L", "2", "--seed", "3"]);
    let out = secidx(
        &[
            "rho", "--data", "p2/data.csv", "--L", "2", "--format", "csv", "--figures", "figs", "-o", "rho.csv",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(tmp.path().join("rho.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 6);
    assert!(table.lines().nth(1).unwrap().starts_with("u_1,,"));
    assert!(tmp.path().join("figs/index.csv").exists());
    assert!(tmp.path().join("figs/time.csv").exists());
    let delta = secidx(&["delta", "--system", "p2/system.json", "--component", "u_2", "--max-card", "2"], tmp.path());
    assert_eq!(code(&delta), 0);
    let v: Value = serde_json::from_slice(&delta.stdout).unwrap();
    assert_eq!(v["components"][1]["delta"], ">2");
}
