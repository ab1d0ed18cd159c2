//! Command layer: checkpoints, train/eval round trips, sweeps, ablations and
//! the `hie` binary's exit codes.

use std::fs;
use std::path::Path;
use std::process::Command;

use hie_kge::cli::{
    ablate_on, classify_rows, eval_on, load_checkpoint, save_checkpoint, sweep_on, train_on, RunConfig, SweepGrid,
    ABLATIONS, CHECKPOINT_FILE, LOSS_FILE,
};
use hie_kge::kg_data::{KnowledgeGraph, Split, Triple};
use hie_kge::model::KgeModel;
use hie_kge::synthetic::relational_ring;
use hie_kge::trainer::train;
use hie_kge::Error;
use tempfile::TempDir;

fn graph() -> KnowledgeGraph {
    relational_ring(24, 0.1, 5).unwrap()
}

fn quick(out: &Path) -> RunConfig {
    RunConfig {
        dim: 8,
        levels: 2,
        steps: 60,
        batch_size: 16,
        negatives: 4,
        lr: 0.02,
        gamma: 4.0,
        seed: 9,
        out: out.to_path_buf(),
        log_every: 10,
        ..RunConfig::default()
    }
}

fn write_split(dir: &Path, name: &str, kg: &KnowledgeGraph, triples: &[Triple]) {
    let lines: String = triples
        .iter()
        .map(|t| {
            format!(
                "{}\t{}\t{}\n",
                kg.entities.name(t.head).unwrap(),
                kg.relations.name(t.rel).unwrap(),
                kg.entities.name(t.tail).unwrap()
            )
        })
        .collect();
    fs::write(dir.join(name), lines).unwrap();
}

fn write_dataset(dir: &Path, kg: &KnowledgeGraph) {
    write_split(dir, "train.txt", kg, &kg.train);
    write_split(dir, "valid.txt", kg, &kg.valid);
    write_split(dir, "test.txt", kg, &kg.test);
}

#[test]
fn train_writes_every_artifact() {
    let dir = TempDir::new().unwrap();
    let summary = train_on(&graph(), &quick(dir.path())).unwrap();
    for name in [CHECKPOINT_FILE, "model.json", LOSS_FILE, "entities.dict", "relations.dict", "metrics_valid.json"] {
        assert!(dir.path().join(name).is_file(), "missing {name}");
    }
    let loss = fs::read_to_string(&summary.loss_log).unwrap();
    assert!(loss.lines().count() >= 2);
    assert!(summary.valid.is_some());
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let summary = train_on(&graph(), &quick(dir.path())).unwrap();
    let ckpt = load_checkpoint(&summary.checkpoint).unwrap();
    let meta = ckpt.meta.clone();
    let model = ckpt.into_model().unwrap();
    assert_eq!(model.tensors(), summary.model.tensors());
    let again = dir.path().join("again.ckpt");
    save_checkpoint(&model, &meta, &again).unwrap();
    assert_eq!(fs::read(&summary.checkpoint).unwrap(), fs::read(&again).unwrap());
    assert_eq!(
        fs::read(dir.path().join("model.json")).unwrap(),
        fs::read(dir.path().join("again.json")).unwrap()
    );
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let dir = TempDir::new().unwrap();
    let summary = train_on(&graph(), &quick(dir.path())).unwrap();
    let bytes = fs::read(&summary.checkpoint).unwrap();
    let sidecar = fs::read(dir.path().join("model.json")).unwrap();
    let variant = |name: &str, blob: &[u8]| {
        let path = dir.path().join(format!("{name}.ckpt"));
        fs::write(&path, blob).unwrap();
        fs::write(path.with_extension("json"), &sidecar).unwrap();
        load_checkpoint(&path)
    };

    let truncated = variant("truncated", &bytes[..bytes.len() - 3]);
    assert!(matches!(truncated, Err(Error::Truncated(_))), "{truncated:?}");

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(variant("magic", &bad), Err(Error::BadMagic)));

    let mut trailing = bytes.clone();
    trailing.extend_from_slice(&[0; 8]);
    assert!(matches!(variant("trailing", &trailing), Err(Error::DimMismatch(_))));

    // metadata that disagrees with the blob about a tensor's shape
    let mut meta: serde_json::Value = serde_json::from_slice(&sidecar).unwrap();
    let first = &mut meta["tensors"][0]["shape"][0];
    *first = (first.as_u64().unwrap() + 1).into();
    let path = dir.path().join("reshaped.ckpt");
    fs::write(&path, &bytes).unwrap();
    fs::write(path.with_extension("json"), serde_json::to_vec(&meta).unwrap()).unwrap();
    let reshaped = load_checkpoint(&path);
    assert!(matches!(reshaped, Err(Error::DimMismatch(_))), "{reshaped:?}");
}

#[test]
fn zero_steps_checkpoint_is_the_initialization() {
    let dir = TempDir::new().unwrap();
    let kg = graph();
    let cfg = RunConfig { steps: 0, ..quick(dir.path()) };
    let summary = train_on(&kg, &cfg).unwrap();
    let init = train(&kg, cfg.model, &cfg.hie_config(), &cfg.train_config()).unwrap().model;
    let loaded = load_checkpoint(&summary.checkpoint).unwrap().into_model().unwrap();
    assert_eq!(loaded.tensors(), init.tensors());
}

#[test]
fn eval_reproduces_validation_metrics_and_is_repeatable() {
    let dir = TempDir::new().unwrap();
    let kg = graph();
    let cfg = quick(dir.path());
    let summary = train_on(&kg, &cfg).unwrap();
    let eval_cfg = RunConfig { split: Split::Valid, ..cfg.clone() };
    let a = eval_on(&summary.checkpoint, &kg, &eval_cfg).unwrap();
    let b = eval_on(&summary.checkpoint, &kg, &eval_cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.overall, summary.valid.unwrap().overall);
    assert!(dir.path().join("metrics_valid.csv").is_file());

    let test_cfg = RunConfig { split: Split::Test, ..cfg };
    eval_on(&summary.checkpoint, &kg, &test_cfg).unwrap();
    assert!(dir.path().join("metrics_test.json").is_file());
}

#[test]
fn eval_rejects_a_different_vocabulary() {
    let dir = TempDir::new().unwrap();
    let summary = train_on(&graph(), &quick(dir.path())).unwrap();
    let other = relational_ring(28, 0.1, 5).unwrap();
    let err = eval_on(&summary.checkpoint, &other, &quick(dir.path())).unwrap_err();
    assert!(matches!(err, Error::DimMismatch(_)), "{err}");
}

#[test]
fn single_point_sweep_matches_train() {
    let dir = TempDir::new().unwrap();
    let kg = graph();
    let base = quick(&dir.path().join("sweep"));
    let rows = sweep_on(&kg, &base, &SweepGrid::default()).unwrap();
    assert_eq!(rows.len(), 1);
    let direct = train_on(&kg, &quick(&dir.path().join("direct"))).unwrap().valid.unwrap().overall;
    assert_eq!(rows[0].status, "ok");
    assert_eq!(rows[0].mrr, Some(direct.mrr));
    assert_eq!(rows[0].hits10, Some(direct.hits10));
    assert!(dir.path().join("sweep/sweep.csv").is_file());
    assert!(dir.path().join("sweep/point_0").join(CHECKPOINT_FILE).is_file());
}

#[test]
fn level_and_weight_sweeps() {
    let dir = TempDir::new().unwrap();
    let kg = graph();
    let base = RunConfig { steps: 20, ..quick(dir.path()) };

    let levels: SweepGrid = serde_json::from_str(r#"{"levels": [1, 2, 3, 4]}"#).unwrap();
    let rows = sweep_on(&kg, &base, &levels).unwrap();
    assert_eq!(rows.iter().map(|r| r.levels).collect::<Vec<_>>(), [1, 2, 3, 4]);
    assert!(rows.iter().all(|r| r.status == "ok"));

    let weights: SweepGrid = serde_json::from_str(r#"{"lambda1": [0.2, 0.4, 0.5, 0.6, 0.8]}"#).unwrap();
    let rows = sweep_on(&kg, &base, &weights).unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0].lambda, "0.2;0.8");
    assert_eq!(rows[4].lambda, "0.8;0.19999999999999996");
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn failing_sweep_point_becomes_an_error_row() {
    let dir = TempDir::new().unwrap();
    let base = RunConfig { steps: 10, ..quick(dir.path()) };
    let grid: SweepGrid = serde_json::from_str(r#"{"dim": [8, 7]}"#).unwrap();
    let rows = sweep_on(&graph(), &base, &grid).unwrap();
    assert_eq!(rows[0].status, "ok");
    assert_eq!(rows[1].status, "error");
    assert!(rows[1].mrr.is_none());
    assert!(rows[1].error.contains("dim"), "{}", rows[1].error);
}

#[test]
fn classify_covers_every_relation() {
    let kg = graph();
    let rows = classify_rows(&kg, RunConfig::default().eta).unwrap();
    assert_eq!(rows.len(), kg.num_relations());
    let group = rows.iter().find(|r| r.relation == "group").unwrap();
    assert_eq!(group.category, "N-to-1");
    assert!(rows.iter().filter(|r| r.category == "1-to-1").count() >= 2);
}

#[test]
fn ablate_reports_every_variant() {
    let dir = TempDir::new().unwrap();
    let base = RunConfig { steps: 20, ..quick(dir.path()) };
    let rows = ablate_on(&graph(), &base).unwrap();
    assert_eq!(rows.iter().map(|r| r.variant.as_str()).collect::<Vec<_>>(), ABLATIONS);
    assert!(dir.path().join("ablation.csv").is_file());
    assert!(dir.path().join("no_semantic").join(CHECKPOINT_FILE).is_file());
}

fn hie(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hie"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn binary_runs_train_eval_classify() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    write_dataset(&data, &graph());
    let out = dir.path().join("run");
    let (data_s, out_s) = (data.to_str().unwrap(), out.to_str().unwrap());
    let common = ["--data-dir", data_s, "--out", out_s, "--dim", "8", "--steps", "30", "--batch-size", "16"];

    let train = hie(&[&["train"], &common[..]].concat());
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    assert!(String::from_utf8_lossy(&train.stdout).contains("valid: MR"));

    let ckpt = out.join(CHECKPOINT_FILE);
    let eval = hie(&[&["eval", "--checkpoint", ckpt.to_str().unwrap()], &common[..]].concat());
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let report: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert!(report["mrr"].is_number());

    let classify = hie(&["classify", "--data-dir", data_s]);
    assert!(classify.status.success());
    let text = String::from_utf8_lossy(&classify.stdout);
    assert_eq!(text.lines().count(), 1 + 4);
    assert!(text.contains("group,") && text.contains("N-to-1"));
}

#[test]
fn binary_exit_codes() {
    assert_eq!(hie(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(hie(&["--help"]).status.code(), Some(0));
    assert_eq!(hie(&["train", "--dim", "7", "--data-dir", "."]).status.code(), Some(1));
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nothing");
    assert_eq!(hie(&["train", "--data-dir", missing.to_str().unwrap()]).status.code(), Some(1));
    // an existing directory without train.txt is a data error
    assert_eq!(hie(&["train", "--data-dir", dir.path().to_str().unwrap()]).status.code(), Some(2));
    let gradcheck = hie(&["gradcheck", "--dim", "8", "--batches", "2"]);
    assert_eq!(gradcheck.status.code(), Some(0), "{}", String::from_utf8_lossy(&gradcheck.stdout));
}
