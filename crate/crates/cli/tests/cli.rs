use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL_SIZES: &str = "0,100,300,1000";

const SUBCOMMANDS: [&str; 9] = [
    "validate",
    "featurize",
    "fit-exp3",
    "train",
    "train-gbt",
    "predict-curve",
    "evaluate",
    "report-dist",
    "synth",
];

fn dalc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dalc"))
        .args(args)
        .env("DALC_THREADS", "1")
        .output()
        .expect("run dalc")
}

fn ok(args: &[&str]) -> String {
    let out = dalc(args);
    assert!(
        out.status.success(),
        "dalc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_manifest(dir: &Path) -> PathBuf {
    let printed = ok(&["synth", "--preset", "small", "--seed", "3", "--out-dir", s(dir)]);
    let path = PathBuf::from(printed.trim());
    assert_eq!(path, dir.join("small.manifest"));
    path
}

#[test]
fn every_subcommand_has_help() {
    let top = ok(&["--help"]);
    for sub in SUBCOMMANDS {
        assert!(top.contains(sub), "{sub} missing from top-level help");
        let help = ok(&[sub, "--help"]);
        assert!(help.contains(&format!("Usage: dalc {sub}")), "{sub}: {help}");
    }
}

#[test]
fn unknown_flags_and_values_are_rejected() {
    for args in [
        vec!["validate", "x.manifest", "--bogus"],
        vec!["evaluate", "--manifest", "m", "--predictor", "svm"],
        vec!["synth", "--preset", "huge", "--out-dir", "d"],
        vec!["nonexistent"],
    ] {
        let out = dalc(&args);
        assert_eq!(code(&out), 1, "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn synth_output_validates() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_manifest(dir.path());
    let out = dalc(&["validate", s(&m)]);
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
}

#[test]
fn validate_names_the_offending_record() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_manifest(dir.path());
    let text = fs::read_to_string(&m).unwrap();
    let broken = text.replacen("\"n_unique_in_general\":", "\"n_unique_in_general\":9999", 1);
    fs::write(&m, broken).unwrap();
    let out = dalc(&["validate", s(&m)]);
    assert_eq!(code(&out), 1);
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(
        report.contains("law/sample-100: sample counts inconsistent"),
        "{report}"
    );

    let missing = dalc(&["validate", s(&dir.path().join("absent.manifest"))]);
    assert_eq!(code(&missing), 1);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing file"));
}

#[test]
fn seed_is_reported_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = dalc(&["synth", "--preset", "small", "--seed", "17", "--out-dir", s(dir.path())]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed: 17"));
}

#[test]
fn training_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_manifest(dir.path());
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let model = dir.path().join(format!("{run}.model"));
        let log = dir.path().join(format!("{run}.log.json"));
        ok(&[
            "train",
            "--manifest",
            s(&m),
            "--holdout",
            "law",
            "--sizes",
            SMALL_SIZES,
            "--desk",
            "--seed",
            "5",
            "--out",
            s(&model),
            "--log",
            s(&log),
        ]);
        outputs.push((fs::read(&model).unwrap(), fs::read(&log).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert!(outputs[0].0.starts_with(b"DLCM"));
    let log: serde_json::Value = serde_json::from_slice(&outputs[0].1).unwrap();
    assert!(!log["epochs"].as_array().unwrap().is_empty());
}

#[test]
fn trained_models_predict_curves() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_manifest(dir.path());
    let net = dir.path().join("net.model");
    ok(&[
        "train",
        "--manifest",
        s(&m),
        "--holdout",
        "it",
        "--sizes",
        SMALL_SIZES,
        "--desk",
        "--epochs",
        "5",
        "--out",
        s(&net),
    ]);
    let tsv = ok(&[
        "predict-curve",
        "--model",
        s(&net),
        "--manifest",
        s(&m),
        "--domain",
        "it",
        "--sizes",
        "0,1000,50000",
        "--extrapolate",
        "--tsv",
    ]);
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "size\tchrf");
    assert_eq!(lines.len(), 4);

    // 50000 has no sample, so it needs extrapolation
    let out = dalc(&[
        "predict-curve",
        "--model",
        s(&net),
        "--manifest",
        s(&m),
        "--domain",
        "it",
        "--sizes",
        "50000",
    ]);
    assert_eq!(code(&out), 1);

    for level in ["corpus", "instance"] {
        let gbt = dir.path().join(format!("{level}.json"));
        ok(&[
            "train-gbt",
            "--manifest",
            s(&m),
            "--holdout",
            "it",
            "--sizes",
            SMALL_SIZES,
            "--level",
            level,
            "--trees",
            "20",
            "--out",
            s(&gbt),
        ]);
        let file: serde_json::Value = serde_json::from_slice(&fs::read(&gbt).unwrap()).unwrap();
        assert_eq!(file["level"], level);
        assert_eq!(file["model"]["trees"].as_array().unwrap().len(), 20);
        let pred: serde_json::Value = serde_json::from_str(&ok(&[
            "predict-curve",
            "--model",
            s(&gbt),
            "--manifest",
            s(&m),
            "--domain",
            "it",
            "--sizes",
            SMALL_SIZES,
        ]))
        .unwrap();
        assert_eq!(pred["predictor"], format!("gbt-{level}"));
        assert_eq!(pred["curve"].as_array().unwrap().len(), 4);
    }

    let junk = dir.path().join("junk.model");
    fs::write(&junk, b"not a model").unwrap();
    let out = dalc(&[
        "predict-curve",
        "--model",
        s(&junk),
        "--manifest",
        s(&m),
        "--domain",
        "it",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn fit_exp3_recovers_a_curve() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curve.csv");
    // c - exp(-a ln(n+1) + b) with a = 0.3, b = ln 0.2, c = 0.7
    let mut text = String::from("size,score\n");
    for n in [0u64, 1000, 3000, 10_000, 20_000, 100_000] {
        let v = 0.7 - 0.2 * ((n + 1) as f64).powf(-0.3);
        text.push_str(&format!("{n},{v}\n"));
    }
    fs::write(&csv, text).unwrap();
    let out: serde_json::Value =
        serde_json::from_str(&ok(&["fit-exp3", "--input", s(&csv), "--sizes", "500"])).unwrap();
    let p = &out["params"];
    assert!((p["a"].as_f64().unwrap() - 0.3).abs() < 1e-3, "{p}");
    assert!((p["c"].as_f64().unwrap() - 0.7).abs() < 1e-3, "{p}");
    assert_eq!(out["curve"].as_array().unwrap().len(), 7);

    fs::write(&csv, "size,score\n0,0.5\n10,oops\n").unwrap();
    assert_eq!(code(&dalc(&["fit-exp3", "--input", s(&csv)])), 1);
}

#[test]
fn featurize_and_report_dist_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_manifest(dir.path());
    let feats = dir.path().join("feats.tsv");
    ok(&[
        "featurize",
        "--manifest",
        s(&m),
        "--domain",
        "law",
        "--tsv",
        "--out",
        s(&feats),
    ]);
    let text = fs::read_to_string(&feats).unwrap();
    assert_eq!(text.lines().count(), 61);
    assert!(text.starts_with("domain\tid\tsplit\tlc\tmargin\tentropy\txsim\n"));

    let json: serde_json::Value = serde_json::from_str(&ok(&["featurize", "--manifest", s(&m)])).unwrap();
    let domains = json.as_array().unwrap();
    assert_eq!(domains.len(), 2);
    assert_eq!(domains[0]["corpus"].as_array().unwrap().len(), 4);

    let hist = ok(&["report-dist", "--manifest", s(&m), "--holdout", "law", "--tsv"]);
    assert_eq!(hist.lines().count(), 21);
    let out = dalc(&["report-dist", "--manifest", s(&m), "--holdout", "nowhere"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn evaluate_small_preset() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_manifest(dir.path());
    for predictor in ["dalc", "exp3", "gbt-corpus", "gbt-instance"] {
        let report: serde_json::Value = serde_json::from_str(&ok(&[
            "evaluate",
            "--manifest",
            s(&m),
            "--predictor",
            predictor,
            "--sizes",
            SMALL_SIZES,
            "--seeds",
            "2",
            "--desk",
            "--epochs",
            "5",
            "--trees",
            "10",
        ]))
        .unwrap();
        assert_eq!(report["predictor"], predictor);
        assert_eq!(report["domains"].as_array().unwrap().len(), 2);
        assert_eq!(report["rows"].as_array().unwrap().len(), 2 * 2 * 4);
        assert!(report["average_rmse"].as_f64().unwrap().is_finite());
    }
    let tsv = ok(&[
        "evaluate",
        "--manifest",
        s(&m),
        "--holdout",
        "law",
        "--ablation-suite",
        "--drop-features",
        "enc,corpus",
        "--sizes",
        SMALL_SIZES,
        "--seeds",
        "1",
        "--desk",
        "--epochs",
        "3",
        "--tsv",
    ]);
    let labels: Vec<&str> = tsv.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(labels.len(), 3 * 4);
    assert_eq!(&labels[..1], ["full"]);
    assert!(labels.contains(&"enc") && labels.contains(&"corpus"));

    let out = dalc(&["evaluate", "--manifest", s(&m), "--sizes", "0,5"]);
    assert_eq!(code(&out), 1);
    let out = dalc(&["evaluate", "--manifest", s(&m), "--drop-features", "nonsense"]);
    assert_eq!(code(&out), 1);
}

/// The full leave-one-domain-out benchmark through the command line.
#[test]
fn benchmark_evaluation_beats_baselines() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "synth",
        "--preset",
        "benchmark",
        "--seed",
        "6",
        "--out-dir",
        s(dir.path()),
    ]);
    let m = dir.path().join("benchmark.manifest");
    let mut rmse = Vec::new();
    for predictor in ["dalc", "exp3", "gbt-corpus"] {
        let out = dir.path().join(format!("{predictor}.json"));
        ok(&[
            "evaluate",
            "--manifest",
            s(&m),
            "--protocol",
            "loo",
            "--seeds",
            "5",
            "--predictor",
            predictor,
            "--desk",
            "--out",
            s(&out),
        ]);
        let report: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
        assert_eq!(report["domains"].as_array().unwrap().len(), 5);
        rmse.push(report["average_rmse"].as_f64().unwrap());
    }
    assert!(rmse[0] < rmse[1] && rmse[0] < rmse[2], "{rmse:?}");
}
