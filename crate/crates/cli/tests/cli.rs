use std::fs::{self, File};
use std::path::Path;
use std::process::{Command, Output};

use fmgm::model::load_dataset;
use fmgm::pseudolik::PseudoLikelihood;
use fmgm::{ParameterPair, PenaltyConfig};
use tempfile::TempDir;

fn fmgm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fmgm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = fmgm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn data_rows(p: &Path) -> usize {
    read(p).lines().filter(|l| !l.is_empty()).count() - 1
}

/// A small simulation: 20 variables in 2 blocks, 60 rows per class.
fn small_sim(dir: &Path, seed: &str) {
    ok(&[
        "simulate",
        "--out",
        path(dir),
        "--seed",
        seed,
        "--p",
        "10",
        "--q",
        "10",
        "--levels",
        "3",
        "--n-per-class",
        "60",
        "--blocks",
        "2",
        "--burn-in",
        "200",
        "--thin",
        "5",
        "--single-thread",
    ]);
}

fn fit_with(sim: &Path, out: &Path, extra: &[&str]) -> Output {
    let data = sim.join("data.csv");
    let schema = sim.join("schema.tsv");
    let mut args = vec!["fit", "--data", path(&data), "--schema", path(&schema), "--out", path(out), "--single-thread"];
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn simulate_writes_every_output() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("sim");
    small_sim(&dir, "3");
    for f in ["data.csv", "schema.tsv", "truth_class1.tsv", "truth_class2.tsv", "truth_diff.tsv", "manifest.json"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    assert_eq!(data_rows(&dir.join("data.csv")), 120);
    assert_eq!(data_rows(&dir.join("schema.tsv")), 20);
    let manifest: serde_json::Value = serde_json::from_str(&read(&dir.join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["settings"]["seed"], 3);
    assert!(read(&dir.join("truth_diff.tsv")).lines().count() > 1);
}

#[test]
fn simulate_rejects_uneven_blocks() {
    let tmp = TempDir::new().unwrap();
    let out = fmgm(&["simulate", "--out", path(tmp.path()), "--p", "10", "--q", "10", "--blocks", "7"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("equal blocks"));
    let out =
        fmgm(&["simulate", "--out", path(tmp.path()), "--p", "10", "--q", "10", "--blocks", "2", "--block-size", "9"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = fmgm(&["fit", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!fmgm(&["reproduce", "--reps", "many", "--out", "x"]).status.success());
}

#[test]
fn single_thread_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    small_sim(&a, "11");
    small_sim(&b, "11");
    for f in ["data.csv", "truth_class1.tsv", "truth_diff.tsv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let flags = ["--lambda-cc", "0.1", "--lambda-cd", "0.1", "--lambda-dd", "0.1"];
    let flags =
        [&flags[..], &["--lambda-diff-cc", "0.05", "--lambda-diff-cd", "0.05", "--lambda-diff-dd", "0.05"]].concat();
    fit_with(&a, &a.join("fit"), &flags);
    fit_with(&a, &b.join("fit"), &flags);
    for f in ["edges_class1.tsv", "edges_class2.tsv", "edges_diff.tsv", "fit_summary.tsv", "params.json"] {
        assert_eq!(fs::read(a.join("fit").join(f)).unwrap(), fs::read(b.join("fit").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn steps_records_grid_and_threshold() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    small_sim(&sim, "5");
    let out_dir = tmp.path().join("steps");
    let out = fmgm(&[
        "steps",
        "--data",
        path(&sim.join("data.csv")),
        "--schema",
        path(&sim.join("schema.tsv")),
        "--out",
        path(&out_dir),
        "--grid",
        "0.08:0.64:10",
        "--threshold",
        "0.1",
        "--subsamples",
        "3",
        "--single-thread",
    ]);
    // 3 signals that some class fell back to the largest value
    assert!(matches!(out.status.code(), Some(0) | Some(3)), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&read(&out_dir.join("manifest.json"))).unwrap();
    assert_eq!(manifest["settings"]["steps"]["threshold"], 0.1);
    assert_eq!(manifest["settings"]["steps"]["grid"], "0.08:0.64:10");
    let report = read(&out_dir.join("stability_report.tsv"));
    let rows: Vec<&str> = report.lines().filter(|l| !l.starts_with('#')).collect();
    // header plus ten grid values
    assert_eq!(rows.len(), 11);
    let top: f64 = rows[1].split('\t').next().unwrap().parse().unwrap();
    assert!((top - 0.64).abs() < 1e-12, "{top}");
    let lambdas = read(&out_dir.join("lambdas.tsv"));
    for name in PenaltyConfig::NAMES {
        assert!(lambdas.lines().any(|l| l.starts_with(&format!("{name}\t"))), "{name}");
    }

    // a lone enormous value is always stable
    let huge = tmp.path().join("huge");
    let out = fmgm(&[
        "steps",
        "--data",
        path(&sim.join("data.csv")),
        "--schema",
        path(&sim.join("schema.tsv")),
        "--out",
        path(&huge),
        "--grid",
        "1e6:1e6:1",
        "--subsamples",
        "2",
        "--single-thread",
    ]);
    assert_eq!(out.status.code(), Some(0));
    // the table feeds straight into fit
    fit_with(&sim, &tmp.path().join("fit"), &["--lambdas", path(&huge.join("lambdas.tsv"))]);
}

#[test]
fn huge_penalties_give_empty_edge_files() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    small_sim(&sim, "2");
    let out = tmp.path().join("fit");
    fit_with(
        &sim,
        &out,
        &[
            "--lambda-cc",
            "1e6",
            "--lambda-cd",
            "1e6",
            "--lambda-dd",
            "1e6",
            "--lambda-diff-cc",
            "1e6",
            "--lambda-diff-cd",
            "1e6",
            "--lambda-diff-dd",
            "1e6",
        ],
    );
    for f in ["edges_class1.tsv", "edges_class2.tsv", "edges_diff.tsv"] {
        assert_eq!(read(&out.join(f)).lines().count(), 1, "{f} should hold only a header");
    }
}

#[test]
fn missing_penalty_is_reported() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    small_sim(&sim, "2");
    let out = fmgm(&[
        "fit",
        "--data",
        path(&sim.join("data.csv")),
        "--schema",
        path(&sim.join("schema.tsv")),
        "--out",
        path(&tmp.path().join("fit")),
        "--lambda-cc",
        "0.1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda_cd"));
}

#[test]
fn strong_fusion_gives_identical_networks() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    small_sim(&sim, "4");
    let out = tmp.path().join("fit");
    fit_with(
        &sim,
        &out,
        &[
            "--lambda-cc",
            "0.1",
            "--lambda-cd",
            "0.1",
            "--lambda-dd",
            "0.1",
            "--lambda-diff-cc",
            "1e6",
            "--lambda-diff-cd",
            "1e6",
            "--lambda-diff-dd",
            "1e6",
        ],
    );
    let one = read(&out.join("edges_class1.tsv"));
    assert!(one.lines().count() > 1, "expected some edges at moderate penalty");
    assert_eq!(one, read(&out.join("edges_class2.tsv")));
    assert_eq!(read(&out.join("edges_diff.tsv")).lines().count(), 1);
}

#[test]
fn params_reproduce_the_reported_objective() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    small_sim(&sim, "6");
    let out = tmp.path().join("fit");
    fit_with(
        &sim,
        &out,
        &[
            "--lambda-cc",
            "0.12",
            "--lambda-cd",
            "0.1",
            "--lambda-dd",
            "0.08",
            "--lambda-diff-cc",
            "0.05",
            "--lambda-diff-cd",
            "0.05",
            "--lambda-diff-dd",
            "0.05",
        ],
    );
    let params: serde_json::Value = serde_json::from_str(&read(&out.join("params.json"))).unwrap();
    let theta: ParameterPair = serde_json::from_value(params["theta"].clone()).unwrap();
    let pen: PenaltyConfig = serde_json::from_value(params["penalties"].clone()).unwrap();
    let data =
        load_dataset(File::open(sim.join("data.csv")).unwrap(), File::open(sim.join("schema.tsv")).unwrap()).unwrap();
    let pl = PseudoLikelihood::with_workers(&data, 1).unwrap();
    let obj = pl.value(&theta).unwrap() + fmgm::prox::penalty(&theta, &pen);
    let reported = params["objective"].as_f64().unwrap();
    assert!((obj - reported).abs() < 1e-9, "{obj} vs {reported}");
    let summary = read(&out.join("fit_summary.tsv"));
    assert!(summary.contains("converged\ttrue"), "{summary}");
}

fn metric_rows(path: &Path) -> Vec<Vec<String>> {
    read(path).lines().skip(1).map(|l| l.split('\t').map(String::from).collect()).collect()
}

#[test]
fn evaluate_truth_against_itself_and_nothing() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    small_sim(&sim, "8");
    let same = tmp.path().join("same");
    ok(&["evaluate", "--truth", path(&sim), "--estimate", path(&sim), "--out", path(&same)]);
    let rows = metric_rows(&same.join("metrics.tsv"));
    assert_eq!(rows.len(), 9);
    for r in &rows {
        // accuracy through f1 are perfect; fp and fn are zero
        assert_eq!((r[4].as_str(), r[5].as_str()), ("0", "0"), "{r:?}");
        for (name, v) in ["accuracy", "precision", "recall", "f1"].iter().zip(&r[7..11]) {
            if !r[12].split(',').any(|d| d == *name) {
                assert_eq!(v.parse::<f64>().unwrap(), 1.0, "{name} {r:?}");
            }
        }
    }

    // an estimate with no edges at all
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let header = "var1\tvar2\tedge_type\tmagnitude\tinteraction\n";
    for f in ["edges_class1.tsv", "edges_class2.tsv", "edges_diff.tsv"] {
        fs::write(empty.join(f), header).unwrap();
    }
    let eval = tmp.path().join("eval_empty");
    ok(&["evaluate", "--truth", path(&sim), "--estimate", path(&empty), "--out", path(&eval)]);
    for r in metric_rows(&eval.join("metrics.tsv")) {
        assert_eq!((r[3].as_str(), r[4].as_str()), ("0", "0"), "{r:?}");
        assert_eq!(r[9].parse::<f64>().unwrap(), 0.0, "recall {r:?}");
    }
}

#[test]
fn reproduce_smoke_run() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("study");
    ok(&[
        "reproduce",
        "--out",
        path(&out),
        "--reps",
        "1",
        "--p",
        "15",
        "--q",
        "15",
        "--levels",
        "3",
        "--n-per-class",
        "50",
        "--blocks",
        "5",
        "--burn-in",
        "200",
        "--thin",
        "5",
        "--subsamples",
        "3",
        "--grid",
        "0.1:0.4:3",
        "--single-thread",
    ]);
    let summary = read(&out.join("summary.tsv"));
    assert!(summary.starts_with("# completed 1 of 1 repetitions"));
    let rows: Vec<&str> = summary.lines().skip(2).collect();
    assert_eq!(rows.len(), 18);
    for label in ["Overall", "Intra", "Inter"] {
        assert!(rows.iter().any(|r| r.starts_with(&format!("fmgm\t{label}"))), "{label}");
        assert!(rows.iter().any(|r| r.starts_with(&format!("baseline\t{label}"))), "{label}");
    }
    for d in ["sim", "steps", "fmgm", "eval_fmgm", "baseline", "eval_baseline"] {
        assert!(out.join("rep_001").join(d).is_dir(), "{d}");
    }
}
