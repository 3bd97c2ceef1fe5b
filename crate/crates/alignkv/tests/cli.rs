use std::path::Path;
use std::process::{Command, Output};

use alignkv::data_io::{stats_from_csv, HalfTensor};

fn akv(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_akv"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn akv")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn gen_is_deterministic_and_shaped() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = akv(&["gen", "--tokens", "9", "--dim", "5", "--seed", "2"], out);
        assert!(o.status.success());
    }
    for name in ["K.akv", "V.akv", "Q.akv"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap()
        );
    }
    assert_eq!(HalfTensor::load(a.join("K.akv")).unwrap().dims(), [9, 5]);
    assert_eq!(HalfTensor::load(a.join("Q.akv")).unwrap().dims(), [5]);
}

#[test]
fn zero_tokens_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = akv(&["gen", "--tokens", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("K.akv").exists());
}

#[test]
fn missing_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = akv(
        &[
            "run",
            "--input",
            dir.path().join("nothing").to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("K.akv"));
}

#[test]
fn run_writes_one_row_per_length() {
    let dir = tempfile::tempdir().unwrap();
    let o = akv(
        &["run", "--lengths", "32,64,128", "--seed", "1"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = stats_from_csv(&std::fs::read(dir.path().join("sweep.csv")).unwrap()).unwrap();
    let lengths: Vec<usize> = rows.iter().map(|r| r.context_length).collect();
    assert_eq!(lengths, [32, 64, 128]);
    for r in &rows {
        assert!((8.0..=16.0).contains(&r.avg_bits));
        let sum = r.bucket0 + r.bucket1 + r.bucket2 + r.bucket3 + r.bucket4 + r.bucket5;
        assert!((sum - 1.0).abs() < 1e-12);
    }
    let meta = &json(&dir.path().join("sweep.json"))["metadata"];
    assert_eq!(meta["strategy"], "element");
    assert_eq!(meta["seed"], "1");
}

#[test]
fn run_on_generated_files_matches_prefix_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(akv(&["gen", "--tokens", "100", "--dim", "16"], &data)
        .status
        .success());
    let o = akv(
        &[
            "run",
            "--input",
            data.to_str().unwrap(),
            "--dim",
            "16",
            "--lengths",
            "10,100",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = akv(
        &[
            "run",
            "--input",
            data.to_str().unwrap(),
            "--dim",
            "16",
            "--lengths",
            "101",
        ],
        dir.path(),
    );
    assert!(!o.status.success());
}

#[test]
fn forced_t16_reads_sixteen_bits_and_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let o = akv(
        &["run", "--lengths", "16,64", "--force-tier", "t16"],
        dir.path(),
    );
    assert!(o.status.success());
    for r in stats_from_csv(&std::fs::read(dir.path().join("sweep.csv")).unwrap()).unwrap() {
        assert_eq!((r.avg_bits, r.avg_bits_k, r.avg_bits_v), (16.0, 16.0, 16.0));
        assert_eq!(r.bucket0, 1.0);
    }
}

#[test]
fn row_strategy_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let o = akv(&["run", "--lengths", "64", "--strategy", "row"], dir.path());
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("strategy: row"));
    assert_eq!(
        json(&dir.path().join("sweep.json"))["metadata"]["strategy"],
        "row"
    );
}

#[test]
fn full_width_baseline_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let o = akv(
        &[
            "compare",
            "--tokens",
            "64",
            "--trials",
            "2",
            "--baseline-bits",
            "16",
        ],
        dir.path(),
    );
    assert!(o.status.success());
    let report = json(&dir.path().join("compare.json"));
    let rows = report["rows"].as_array().unwrap();
    let baseline: Vec<_> = rows
        .iter()
        .filter(|r| r["method"] == "truncated-16")
        .collect();
    assert_eq!(baseline.len(), 2);
    for r in baseline {
        assert_eq!(r["fractions"][0], 1.0);
    }
}

#[test]
fn compare_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["compare", "--tokens", "128", "--trials", "2", "--seed", "4"];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let oa = akv(&args, &a);
    let ob = akv(&args, &b);
    assert!(oa.status.success() && ob.status.success());
    assert_eq!(oa.stdout.len(), ob.stdout.len());
    assert_eq!(
        std::fs::read(a.join("compare.json")).unwrap(),
        std::fs::read(b.join("compare.json")).unwrap()
    );
}

#[test]
fn invalid_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["run", "--margin-bits", "9"][..],
        &["run", "--t8-max", "5", "--t12-max", "3"][..],
        &["compare", "--baseline-bits", "3"][..],
        &["run", "--lengths", "0"][..],
    ] {
        let o = akv(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}
