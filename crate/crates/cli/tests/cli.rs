use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cnmf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cnmf"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn cnmf")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn scalar(path: &Path) -> f64 {
    fs::read_to_string(path).unwrap().trim().parse().unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("one.csv"), "1\n").unwrap();
    dir
}

#[test]
fn factorize_scalar_auto_c() {
    let dir = setup();
    let out = cnmf(
        dir.path(),
        &[
            "factorize",
            "--input",
            "one.csv",
            "--rank",
            "1",
            "--seed",
            "7",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["schema"], 1);
    assert!(report["final_objective"].as_f64().unwrap() < 1e-8);
    let w = scalar(&dir.path().join("W.csv"));
    let h = scalar(&dir.path().join("H.csv"));
    assert!((w * h - 1.0).abs() < 1e-4);
    assert!((w + h - 4.0).abs() < 1e-6);
    assert_eq!(report["stationarity"]["snmf"]["problem"], "S-NMF");
    assert!(report["termination"].is_string());
}

#[test]
fn factorize_small_c_needs_force() {
    let dir = setup();
    let out = cnmf(
        dir.path(),
        &["factorize", "--input", "one.csv", "--rank", "1", "--c", "1"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("report.json").exists());

    let out = cnmf(
        dir.path(),
        &[
            "factorize",
            "--input",
            "one.csv",
            "--rank",
            "1",
            "--c",
            "1",
            "--force",
            "--out",
            "r.json",
        ],
    );
    assert!(out.status.success());
    let report = read_json(&dir.path().join("r.json"));
    assert!((report["final_objective"].as_f64().unwrap() - 0.5625).abs() < 1e-4);
    assert!((scalar(&dir.path().join("W.csv")) - 0.5).abs() < 1e-4);
    assert!((scalar(&dir.path().join("H.csv")) - 0.5).abs() < 1e-4);
}

#[test]
fn missing_input_exits_3_with_path() {
    let dir = setup();
    let out = cnmf(
        dir.path(),
        &["factorize", "--input", "absent.csv", "--rank", "1"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
}

#[test]
fn malformed_csv_exits_3() {
    let dir = setup();
    fs::write(dir.path().join("bad.csv"), "1,2\n3,x\n").unwrap();
    let out = cnmf(
        dir.path(),
        &["factorize", "--input", "bad.csv", "--rank", "1"],
    );
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2") && err.contains("column 2"), "{err}");
}

#[test]
fn benchmark_rows_and_determinism() {
    let dir = setup();
    let args = [
        "benchmark",
        "--n-list",
        "10,5",
        "--r-list",
        "2",
        "--seeds",
        "3",
        "--target",
        "0.01",
        "--out",
    ];
    let mut a = args.to_vec();
    a.push("a.csv");
    assert!(cnmf(dir.path(), &a).status.success());
    let mut b = args.to_vec();
    b.push("b.csv");
    assert!(cnmf(dir.path(), &b).status.success());

    let strip_time = |name: &str| -> Vec<Vec<String>> {
        fs::read_to_string(dir.path().join(name))
            .unwrap()
            .lines()
            .map(|l| {
                let mut cols: Vec<String> = l.split(',').map(String::from).collect();
                cols.remove(4);
                cols
            })
            .collect()
    };
    let rows = strip_time("a.csv");
    assert_eq!(rows, strip_time("b.csv"));
    assert_eq!(
        rows[0],
        [
            "n",
            "r",
            "seed",
            "iterations",
            "final_relative_error",
            "reached_target"
        ]
    );
    assert_eq!(rows.len(), 7);
    let keys: Vec<(usize, u64)> = rows[1..]
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[2].parse().unwrap()))
        .collect();
    assert_eq!(keys, [(5, 0), (5, 1), (5, 2), (10, 0), (10, 1), (10, 2)]);
    for row in &rows[1..] {
        assert!(row[3].parse::<usize>().unwrap() > 0);
        assert_eq!(row[5], "true");
    }
}

#[test]
fn benchmark_rejects_malformed_lists() {
    let dir = setup();
    for list in ["5,,10", "five", "0"] {
        let out = cnmf(
            dir.path(),
            &[
                "benchmark",
                "--n-list",
                list,
                "--r-list",
                "2",
                "--out",
                "x.csv",
            ],
        );
        assert_eq!(out.status.code(), Some(2), "list {list}");
    }
}

#[test]
fn oscillation_demo_csv() {
    let dir = setup();
    assert!(cnmf(dir.path(), &["oscillation-demo", "--out", "demo.csv"])
        .status
        .success());
    let text = fs::read_to_string(dir.path().join("demo.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,concurrent,alternating"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 50);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 3);
        assert_eq!(row[0], (i + 1) as f64);
        assert_eq!(row[1], if i % 2 == 0 { 1.5625 } else { 10.0 });
        if i > 0 {
            assert!(row[2] <= rows[i - 1][2]);
        }
    }
}

fn check_report(dir: &Path, w: &str, h: &str, c: Option<&str>) -> Value {
    fs::write(dir.join("w.csv"), format!("{w}\n")).unwrap();
    fs::write(dir.join("h.csv"), format!("{h}\n")).unwrap();
    let mut args = vec![
        "check", "--w", "w.csv", "--h", "h.csv", "--input", "one.csv", "--out", "c.json",
    ];
    if let Some(c) = c {
        args.extend(["--c", c]);
    }
    let out = cnmf(dir, &args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    read_json(&dir.join("c.json"))
}

#[test]
fn check_examples() {
    let dir = setup();
    let r = check_report(dir.path(), "0.5", "0.5", Some("1"));
    assert_eq!(r["schema"], 1);
    let snmf = &r["stationarity"]["snmf"];
    assert_eq!(snmf["classification"], "SOSP-candidate");
    assert!((snmf["multiplier_c"].as_f64().unwrap() + 0.75).abs() < 1e-12);

    let r = check_report(dir.path(), "2", "2", Some("4"));
    assert_eq!(r["stationarity"]["snmf"]["classification"], "SOSP-violated");
    assert!(r["stationarity"]["snmf"]["witness"].is_object());

    let r = check_report(dir.path(), "1", "1", None);
    assert_eq!(r["stationarity"]["nmf"]["classification"], "SOSP-candidate");
    assert!(r["stationarity"]["snmf"].is_null());
}

#[test]
fn check_shape_mismatch_exits_2() {
    let dir = setup();
    fs::write(dir.path().join("w.csv"), "1,1\n").unwrap();
    fs::write(dir.path().join("h.csv"), "1\n").unwrap();
    let out = cnmf(
        dir.path(),
        &[
            "check", "--w", "w.csv", "--h", "h.csv", "--input", "one.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let dir = setup();
    fs::write(
        dir.path().join("v.csv"),
        "0.9,0.1,0.4\n0.2,0.8,0.3\n0.5,0.5,0.7\n0.1,0.3,0.9\n",
    )
    .unwrap();
    let run = |sub: &str| {
        fs::create_dir_all(dir.path().join(sub)).unwrap();
        let out_path = format!("{sub}/report.json");
        let out = cnmf(
            dir.path(),
            &[
                "factorize",
                "--input",
                "v.csv",
                "--rank",
                "2",
                "--seed",
                "3",
                "--max-iters",
                "5000",
                "--out",
                &out_path,
            ],
        );
        assert!(out.status.success());
        ["report.json", "W.csv", "H.csv"].map(|f| fs::read(dir.path().join(sub).join(f)).unwrap())
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a[1], b[1]);
    assert_eq!(a[2], b[2]);
    // Reports differ only in the output paths they record.
    let strip = |bytes: &[u8]| {
        let mut v: Value = serde_json::from_slice(bytes).unwrap();
        v["w_path"] = Value::Null;
        v["h_path"] = Value::Null;
        v
    };
    assert_eq!(strip(&a[0]), strip(&b[0]));
}
