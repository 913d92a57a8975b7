//! End-to-end runs of the `chronocheck` binary on a tiny synthetic dataset.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use chronocheck::report::without_timestamp;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_chronocheck"));
    c.env_remove("CHRONOCHECK_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = run(args);
    assert!(o.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A generated dataset and a one-epoch model, shared by the tests.
struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    run: PathBuf,
    manifest: PathBuf,
    ckpt: PathBuf,
    test_id: String,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let run_dir = dir.path().join("run");
        ok(&["generate", "--cameras", "4", "--per-camera", "6", "--image-size", "16", "--seed", "3", "--out", s(&data)]);
        let manifest = data.join("manifest.jsonl");
        ok(&[
            "train", "--manifest", s(&manifest), "--out", s(&run_dir), "--split", "cross-camera", "--train-fraction", "0.5",
            "--modalities", "G,t,l,S", "--ta", "--preset", "compact", "--epochs", "1", "--batch-size", "8", "--validate",
        ]);
        let split: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_dir.join("split.json")).unwrap()).unwrap();
        let test_id = split["test"][0].as_str().unwrap().to_string();
        Fixture {
            ckpt: run_dir.join("model.ckpt"),
            _dir: dir,
            data,
            run: run_dir,
            manifest,
            test_id,
        }
    })
}

fn model_args<'a>(f: &'a Fixture, report: &'a Path) -> Vec<&'a str> {
    vec!["--checkpoint", s(&f.ckpt), "--manifest", s(&f.manifest), "--report-dir", s(report)]
}

#[test]
fn generate_is_deterministic_and_validated() {
    let f = fixture();
    let text = fs::read_to_string(&f.manifest).unwrap();
    assert_eq!(text.lines().count(), 24);
    let again = tempfile::tempdir().unwrap();
    ok(&["generate", "--cameras", "4", "--per-camera", "6", "--image-size", "16", "--seed", "3", "--out", s(again.path())]);
    assert_eq!(fs::read(again.path().join("manifest.jsonl")).unwrap(), text.as_bytes());
    assert_eq!(run(&["generate", "--per-camera", "0", "--out", s(again.path())]).status.code(), Some(1));
    assert_eq!(run(&["generate", "--cameras", "many", "--out", s(again.path())]).status.code(), Some(1));
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["generate", "--cameras", "1", "--per-camera", "1", "--image-size", "8", "--out", s(dir.path())])
        .env("CHRONOCHECK_SEED", "42")
        .output()
        .unwrap();
    assert!(o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("seed = 42  (environment)"), "{err}");
    let world: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("world.json")).unwrap()).unwrap();
    assert_eq!(world["seed"], 42);
}

#[test]
fn training_artifacts() {
    let f = fixture();
    let log = fs::read_to_string(f.run.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,val_acc,val_auc\n1,"));
    let split: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.run.join("split.json")).unwrap()).unwrap();
    assert_eq!(split["spec"]["mode"], "cross-camera");
    let cam = |id: &serde_json::Value| id.as_str().unwrap().rsplit_once('-').unwrap().0.to_string();
    let train: Vec<String> = split["train"].as_array().unwrap().iter().map(cam).collect();
    assert!(split["test"].as_array().unwrap().iter().map(cam).all(|c| !train.contains(&c)));
    let run_json: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.run.join("run.json")).unwrap()).unwrap();
    assert_eq!(run_json["run_config"]["records"]["model"]["ta_branches"], true);
    assert_eq!(run_json["run_config"]["settings"]["epochs"]["value"], "1");
}

#[test]
fn invalid_modalities_are_usage_errors() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap();
    let o = run(&["train", "--manifest", s(&f.manifest), "--out", s(out.path()), "--modalities", "t,l"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("t,l"));
}

#[test]
fn evaluate_writes_metrics_and_is_idempotent() {
    let f = fixture();
    let rep = tempfile::tempdir().unwrap();
    ok(&[&["evaluate"], model_args(f, rep.path()).as_slice()].concat());
    let p = rep.path().join("evaluate/metrics.json");
    let first = fs::read_to_string(&p).unwrap();
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert!(v["result"]["accuracy"].is_f64() && v["result"]["auc"].is_f64());
    assert_eq!(v["run_config"]["command"], "evaluate");
    assert!(v["metadata"]["version"].is_string());
    let roc = fs::read(rep.path().join("evaluate/roc.csv")).unwrap();
    let scores = fs::read_to_string(rep.path().join("evaluate/scores.csv")).unwrap();
    assert!(rep.path().join("evaluate/roc.png").exists());

    ok(&[&["evaluate"], model_args(f, rep.path()).as_slice()].concat());
    assert_eq!(without_timestamp(&first), without_timestamp(&fs::read_to_string(&p).unwrap()));
    assert_eq!(roc, fs::read(rep.path().join("evaluate/roc.csv")).unwrap());

    // the exported test set and scores feed back in
    let tuples = rep.path().join("tuples.csv");
    fs::copy(rep.path().join("evaluate/tampered.csv"), &tuples).unwrap();
    let ext = rep.path().join("ext.csv");
    fs::write(&ext, &scores).unwrap();
    ok(&[&["evaluate", "--tuples", s(&tuples), "--scores", s(&ext)], model_args(f, rep.path()).as_slice()].concat());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
    assert_eq!(v["result"]["external"]["auc"], v["result"]["auc"]);

    fs::write(&ext, "id,score\nnobody:0,0.5\n").unwrap();
    let o = run(&[&["evaluate", "--scores", s(&ext)], model_args(f, rep.path()).as_slice()].concat());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nobody:0"));
}

#[test]
fn missing_split_is_a_data_error() {
    let f = fixture();
    let rep = tempfile::tempdir().unwrap();
    let o = run(&[&["evaluate", "--split-file", "/nonexistent/split.json"], model_args(f, rep.path()).as_slice()].concat());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing test split"));
}

#[test]
fn shift_grid_has_ninety_cells() {
    let f = fixture();
    let rep = tempfile::tempdir().unwrap();
    ok(&[&["shift-grid", "--dm", "0..6", "--dh", "0..12"], model_args(f, rep.path()).as_slice()].concat());
    let csv = fs::read_to_string(rep.path().join("shift-grid/grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 91);
    assert!(!csv.contains("\n0,0,"));
    assert!(rep.path().join("shift-grid/grid.png").exists());
}

#[test]
fn per_sample_studies() {
    let f = fixture();
    let rep = tempfile::tempdir().unwrap();
    let id = f.test_id.as_str();
    ok(&[&["heatmap", "--sample", id], model_args(f, rep.path()).as_slice()].concat());
    let csv = fs::read_to_string(rep.path().join(format!("heatmap/{id}.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), 25);
    assert!(rep.path().join(format!("heatmap/{id}.png")).exists());

    ok(&[&["curve", "--sample", id, "--alleged", "6:12", "--axis", "hour"], model_args(f, rep.path()).as_slice()].concat());
    assert_eq!(fs::read_to_string(rep.path().join(format!("curve/{id}-hour.csv"))).unwrap().lines().count(), 25);

    ok(&[&["occlude", "--sample", id], model_args(f, rep.path()).as_slice()].concat());
    assert_eq!(fs::read_to_string(rep.path().join(format!("explain/occlusion-{id}.csv"))).unwrap().lines().count(), 16 * 16 + 1);
    assert!(rep.path().join(format!("explain/occlusion-{id}.png")).exists());

    ok(&[&["explain", "--sample", id, "--top", "5"], model_args(f, rep.path()).as_slice()].concat());
    assert_eq!(fs::read_to_string(rep.path().join(format!("explain/attributes-{id}.csv"))).unwrap().lines().count(), 6);

    ok(&[&["mi-rank", "--min-confidence", "0"], model_args(f, rep.path()).as_slice()].concat());
    assert_eq!(fs::read_to_string(rep.path().join("explain/mi_ranking.csv")).unwrap().lines().count(), 41);

    ok(&[&["location-noise", "--deltas", "0,15"], model_args(f, rep.path()).as_slice()].concat());
    assert_eq!(fs::read_to_string(rep.path().join("location-noise/location_noise.csv")).unwrap().lines().count(), 3);

    let o = run(&[&["heatmap", "--sample", "not-a-sample"], model_args(f, rep.path()).as_slice()].concat());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_precedence() {
    let f = fixture();
    let rep = tempfile::tempdir().unwrap();
    let cfg = rep.path().join("run.cfg");
    fs::write(&cfg, format!("# study settings\nmanifest = {}\ndh = 0..3\ndm = 0..1\n", f.manifest.display())).unwrap();
    let o = ok(&["shift-grid", "--config", s(&cfg), "--dm", "0..2", "--checkpoint", s(&f.ckpt), "--report-dir", s(rep.path())]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("dm = 0..2  (flag)") && err.contains("dh = 0..3  (config file)"), "{err}");
    assert_eq!(fs::read_to_string(rep.path().join("shift-grid/grid.csv")).unwrap().lines().count(), 3 * 4);

    fs::write(&cfg, "typo = 1\n").unwrap();
    assert_eq!(run(&["generate", "--config", s(&cfg), "--out", s(rep.path())]).status.code(), Some(1));
    assert!(f.data.join("world.json").exists());
}
