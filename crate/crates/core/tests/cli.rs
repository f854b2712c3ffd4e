use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use trajmix::cli::artifact::ModelArtifact;
use trajmix::cli::{exit, ingest};
use trajmix::numerics::SampledCurve;
use trajmix::simulate::{default_config, generate_dataset};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trajmix"))
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write_csv(path: &Path, curves: &[SampledCurve]) {
    let mut buf = Vec::new();
    ingest::write_curves(curves, &mut buf).unwrap();
    fs::write(path, buf).unwrap();
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    train: PathBuf,
    test: PathBuf,
    partial: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = generate_dataset(&default_config(), 11).unwrap();
    let train = root.join("train.csv");
    let test = root.join("test.csv");
    let partial = root.join("partial.csv");
    write_csv(&train, &data.train);
    write_csv(&test, &data.test);
    // Two days observed up to 12:00.
    let cut: Vec<SampledCurve> = data.test[..2]
        .iter()
        .map(|c| {
            let n = c.grid.points().iter().filter(|&&t| t <= 12.0).count();
            c.slice(0..n).unwrap()
        })
        .collect();
    write_csv(&partial, &cut);
    Fixture { _dir: dir, root, train, test, partial }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_into(f: &Fixture, name: &str, extra: &[&str]) -> PathBuf {
    let out = f.root.join(name);
    let mut args = vec!["train", s(&f.train), "--seed", "7", "--out", s(&out)];
    args.extend_from_slice(extra);
    let (code, _, err) = run(&args);
    assert_eq!(code, exit::OK, "{err}");
    out
}

#[test]
fn end_to_end() {
    let f = fixture();
    let out = f.root.join("ingested");
    let (code, stdout, _) = run(&["ingest", s(&f.train), "--out", s(&out)]);
    assert_eq!(code, exit::OK);
    assert!(stdout.starts_with("70 curves on a 96-point grid"), "{stdout}");
    assert_eq!(fs::read_to_string(out.join("curves.csv")).unwrap(), fs::read_to_string(&f.train).unwrap());

    let model = train_into(&f, "model", &[]);
    let assignments = fs::read_to_string(model.join("assignments.csv")).unwrap();
    assert!(assignments.starts_with("day_id,cluster,p1,p2,p3\n"));
    assert_eq!(assignments.lines().count(), 71);

    let pred = f.root.join("pred");
    let model_json = model.join("model.json");
    let (code, _, err) = run(&["predict", s(&model_json), s(&f.partial), "--tau", "12", "--bands", "0.9", "--out", s(&pred)]);
    assert_eq!(code, exit::OK, "{err}");
    let text = fs::read_to_string(pred.join("prediction_test1_1.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,mixture,cluster1,cluster2,cluster3,lower,upper");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 49);
    assert_eq!(rows[0][0], 12.0);
    for r in &rows {
        assert!(r[5] <= r[1] && r[1] <= r[6]);
    }
    let trace = fs::read_to_string(pred.join("posterior.csv")).unwrap();
    assert!(trace.starts_with("day_id,tau,p1,p2,p3\n"));
    for line in trace.lines().skip(1) {
        let p: f64 = line.split(',').skip(2).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((p - 1.0).abs() < 1e-9);
    }

    let eval = f.root.join("eval");
    let (code, _, err) = run(&["evaluate", s(&model_json), s(&f.test), "--kappa", "1,full", "--out", s(&eval)]);
    assert_eq!(code, exit::OK, "{err}");
    let table = fs::read_to_string(eval.join("table.csv")).unwrap();
    assert!(table.lines().any(|l| l.starts_with("FMP_S,")), "{table}");
    assert!(eval.join("traces.csv").exists());
}

#[test]
fn rerun_is_bit_identical() {
    let f = fixture();
    let a = train_into(&f, "a", &[]);
    let b = train_into(&f, "b", &["--jobs", "1"]);
    assert_eq!(fs::read(a.join("model.json")).unwrap(), fs::read(b.join("model.json")).unwrap());
    assert_eq!(fs::read(a.join("assignments.csv")).unwrap(), fs::read(b.join("assignments.csv")).unwrap());
    for dir in [&a, &b] {
        let (code, _, err) = run(&["predict", s(&dir.join("model.json")), s(&f.partial), "--tau", "12", "--mode", "fpcp", "--out", s(&dir.join("p"))]);
        assert_eq!(code, exit::OK, "{err}");
    }
    assert_eq!(
        fs::read(a.join("p/prediction_test1_2.csv")).unwrap(),
        fs::read(b.join("p/prediction_test1_2.csv")).unwrap()
    );
}

#[test]
fn artifact_round_trips_losslessly() {
    let f = fixture();
    let dir = train_into(&f, "m", &[]);
    let text = fs::read_to_string(dir.join("model.json")).unwrap();
    let artifact = ModelArtifact::from_json(&text).unwrap();
    assert_eq!(artifact.to_json().unwrap(), text);
    let (curves, labels) = artifact.training_curves().unwrap();
    let original = ingest::read_curves(&f.train).unwrap().curves;
    assert_eq!(curves, original);
    assert_eq!(labels.len(), 70);
}

#[test]
fn single_cluster_artifact_has_no_logit() {
    let f = fixture();
    let dir = train_into(&f, "k1", &["--k", "1"]);
    let artifact = ModelArtifact::load(&dir.join("model.json")).unwrap();
    assert_eq!(artifact.mixture.num_clusters(), 1);
    assert!(artifact.mixture.gamma.is_none());
}

#[test]
fn exit_codes_by_failure_class() {
    let f = fixture();
    let out = f.root.join("x");

    let bad = f.root.join("bad.csv");
    fs::write(&bad, "day_id,time_hours,flow_rate\nd1,0.25,1\nd1,0.5,abc\n").unwrap();
    let (code, _, err) = run(&["train", s(&bad), "--out", s(&out)]);
    assert_eq!(code, exit::INGESTION);
    assert!(err.contains("line 3"), "{err}");

    let cfg = f.root.join("cfg.json");
    fs::write(&cfg, "{\"num_clusters\": \"many\"}").unwrap();
    assert_eq!(run(&["train", s(&f.train), "--config", s(&cfg), "--out", s(&out)]).0, exit::CONFIG);
    assert_eq!(run(&["train", s(&f.train), "--k", "two", "--out", s(&out)]).0, exit::CONFIG);

    assert_eq!(run(&["train", s(&f.train), "--k", "30", "--out", s(&out)]).0, exit::FIT);

    let missing = f.root.join("nope.json");
    assert_eq!(run(&["predict", s(&missing), s(&f.partial), "--tau", "12", "--out", s(&out)]).0, exit::IO);

    let model = train_into(&f, "m", &[]).join("model.json");
    assert_eq!(run(&["predict", s(&model), s(&f.partial), "--tau", "23", "--out", s(&out)]).0, exit::PREDICT);

    let oracle = f.root.join("oracle.json");
    fs::write(&oracle, "{\"evaluation\": {\"methods\": [\"FMP_S*\"]}}").unwrap();
    assert_eq!(run(&["evaluate", s(&model), s(&f.test), "--config", s(&oracle), "--out", s(&out)]).0, exit::CONFIG);
}

#[test]
fn off_grid_tau_snaps() {
    let f = fixture();
    let model = train_into(&f, "m", &[]).join("model.json");
    let (a, b) = (f.root.join("a"), f.root.join("b"));
    assert_eq!(run(&["predict", s(&model), s(&f.partial), "--tau", "11.9", "--out", s(&a)]).0, exit::OK);
    assert_eq!(run(&["predict", s(&model), s(&f.partial), "--tau", "12", "--out", s(&b)]).0, exit::OK);
    assert_eq!(fs::read(a.join("posterior.csv")).unwrap(), fs::read(b.join("posterior.csv")).unwrap());
}

#[test]
fn simulate_writes_reproducible_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let (code, _, err) = run(&["simulate", "--replicates", "2", "--seed", "3", "--out", s(out)]);
        assert_eq!(code, exit::OK, "{err}");
    }
    for name in ["table.csv", "traces.csv", "replicates.csv", "metadata.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(a.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["replicates_succeeded"], 2);
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
}
