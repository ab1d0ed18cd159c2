//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line with
//! its measured values, then asserts. Datasets that cannot ship with the
//! repository are read from environment variables and those tests are
//! ignored by default:
//!
//! - `HIE_WN18_DIR`: WN18 `train.txt` / `valid.txt` / `test.txt`
//! - `HIE_WN18RR_DIR`: WN18RR in the same layout
//!
//! Run them with `cargo test --release --test acceptance -- --ignored`.

use std::collections::HashSet;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use hie_kge::cli::{train_on, RunConfig};
use hie_kge::evaluator::{aggregate_metrics, evaluate, EvalOptions, MetricBundle, RankResult, TieBreak};
use hie_kge::hie::{HieConfig, Norm, TransformKind};
use hie_kge::kg_data::{classify_relations, Category, KnowledgeGraph, Side, Split, Triple};
use hie_kge::model::{jitter_parameters, KgeModel, Model, ModelKind};
use hie_kge::synthetic::relational_ring;
use hie_kge::trainer::{adversarial_weights, grad_check, train, AdversarialSign, TrainConfig, TrainingBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-5;
const GRAD_FD_STEP: f64 = 1e-6;
const GRAD_TIME: Duration = Duration::from_secs(30);
const RANK_TIME: Duration = Duration::from_secs(10);
const METRIC_TOL: f64 = 1e-12;
const CLASSIFY_ETA: f64 = 1.5;
const CLASSIFY_TIME: Duration = Duration::from_secs(5);
const SANITY_HITS10: f64 = 0.9;
const SANITY_STEPS: usize = 2000;
const SANITY_TIME: Duration = Duration::from_secs(120);
const WN18RR_HIE_MRR: f64 = 0.15;
const WN18RR_TRANSE_MRR: f64 = 0.10;
const WN18RR_TIME: Duration = Duration::from_secs(30 * 60);
const ABLATION_MARGIN: f64 = 0.02;
const WEIGHT_TOL: f64 = 1e-12;

fn report(n: u32, what: &str, pass: bool, detail: String) {
    println!("criterion {n}: {} {what}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn dataset(var: &str) -> KnowledgeGraph {
    let dir = std::env::var_os(var).map(PathBuf::from).unwrap_or_else(|| panic!("set {var} to the dataset directory"));
    KnowledgeGraph::load_dir(dir).unwrap()
}

/// The synthetic graph shared by the training-sanity and ablation criteria:
/// 100 entities, ring / inverse ring / 4-to-1 group / symmetric pair.
fn synthetic(seed: u64) -> KnowledgeGraph {
    relational_ring(100, 0.05, seed).unwrap()
}

fn synthetic_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        steps: SANITY_STEPS,
        learning_rate: 0.03,
        gamma: 6.0,
        batch_size: 128,
        num_negatives: 32,
        alpha_temp: 1.0,
        seed,
        ..TrainConfig::default()
    }
}

fn test_metrics(model: &Model, kg: &KnowledgeGraph) -> MetricBundle {
    aggregate_metrics(&evaluate(model, kg, Split::Test, EvalOptions::default()).unwrap()).unwrap()
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut coords = 0;
    for transform in [TransformKind::Diagonal, TransformKind::Rank1] {
        for norm in [Norm::L1, Norm::L2] {
            let mut hie = HieConfig::new(8, 2);
            hie.transform = transform;
            hie.norm = norm;
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut model = Model::init(ModelKind::Hie, 20, 5, &hie, 1).unwrap();
            jitter_parameters(&mut model, &mut rng, 0.5);
            let train: Vec<Triple> = (0..40)
                .map(|_| Triple::new(rng.gen_range(0..20), rng.gen_range(0..5), rng.gen_range(0..20)))
                .collect();
            let cfg = TrainConfig { batch_size: 4, num_negatives: 4, ..TrainConfig::default() };
            for _ in 0..10 {
                let batch = TrainingBatch::sample(&train, cfg.batch_size, cfg.num_negatives, 20, &mut rng).unwrap();
                let r = grad_check(&mut model, &batch, &cfg, GRAD_FD_STEP, None, &mut rng).unwrap();
                worst = worst.max(r.max_rel_error);
                coords += r.coords_checked;
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst < GRAD_TOL && elapsed < GRAD_TIME;
    report(1, "gradient check", pass, format!("max rel error {worst:.3e} over {coords} coordinates in {elapsed:.2?}"));
    assert!(pass);
}

/// Rank by rescoring every candidate triple one at a time.
fn brute_force_rank(model: &Model, kg: &KnowledgeGraph, t: &Triple, side: Side, filtered: bool, tie: TieBreak) -> usize {
    let known: HashSet<Triple> = kg.train.iter().chain(&kg.valid).chain(&kg.test).copied().collect();
    let truth = model.score(t);
    let mut rank = 1;
    for c in 0..kg.num_entities() {
        let cand = match side {
            Side::Head => Triple::new(c, t.rel, t.tail),
            Side::Tail => Triple::new(t.head, t.rel, c),
        };
        if cand == *t || (filtered && known.contains(&cand)) {
            continue;
        }
        let s = model.score(&cand);
        if (tie == TieBreak::Pessimistic && s <= truth) || (tie == TieBreak::Strict && s < truth) {
            rank += 1;
        }
    }
    rank
}

#[test]
fn criterion_02_oracle_ranking() {
    let start = Instant::now();
    let kg = relational_ring(40, 0.1, 3).unwrap();
    assert!(kg.num_entities() <= 50 && kg.train.len() + kg.valid.len() + kg.test.len() <= 200);
    let mut compared = 0;
    let mut mismatches = 0;
    for kind in [ModelKind::Hie, ModelKind::TransE] {
        let mut model = Model::init(kind, kg.num_entities(), kg.num_relations(), &HieConfig::new(8, 2), 5).unwrap();
        jitter_parameters(&mut model, &mut ChaCha8Rng::seed_from_u64(6), 0.3);
        for filtered in [true, false] {
            for tie_break in [TieBreak::Pessimistic, TieBreak::Strict] {
                let results = evaluate(&model, &kg, Split::Test, EvalOptions { filtered, tie_break }).unwrap();
                for r in &results {
                    let s = brute_force_rank(&model, &kg, &r.triple, Side::Head, filtered, tie_break);
                    let o = brute_force_rank(&model, &kg, &r.triple, Side::Tail, filtered, tie_break);
                    compared += 2;
                    mismatches += usize::from(s != r.rank_s) + usize::from(o != r.rank_o);
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches == 0 && elapsed < RANK_TIME;
    report(2, "oracle ranking", pass, format!("{mismatches} mismatches over {compared} ranks in {elapsed:.2?}"));
    assert!(pass);
}

#[test]
fn criterion_03_metric_formulas() {
    let results: Vec<RankResult> = [(1, 2), (3, 10), (1, 1)]
        .iter()
        .map(|&(rank_s, rank_o)| RankResult { triple: Triple::new(0, 0, 0), rank_s, rank_o })
        .collect();
    let m = aggregate_metrics(&results).unwrap();
    let ranks = [1usize, 2, 3, 10, 1, 1];
    let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / 6.0;
    let mrr = (1.0 + 0.5 + 1.0 / 3.0 + 0.1 + 1.0 + 1.0) / 6.0;
    let checks = [
        (m.mr, 3.0),
        (m.mrr, mrr),
        (m.hits1, hits(1)),
        (m.hits3, hits(3)),
        (m.hits10, hits(10)),
    ];
    assert_eq!((hits(1), hits(3), hits(10)), (3.0 / 6.0, 5.0 / 6.0, 1.0));
    let worst = checks.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let pass = worst <= METRIC_TOL;
    report(
        3,
        "metric formulas",
        pass,
        format!("MR {} MRR {:.6} H@1 {:.6} H@3 {:.6} H@10 {}, max deviation {worst:.1e}", m.mr, m.mrr, m.hits1, m.hits3, m.hits10),
    );
    assert!(pass);
}

#[test]
#[ignore = "needs WN18 in $HIE_WN18_DIR"]
fn criterion_04_relation_classification() {
    let kg = dataset("HIE_WN18_DIR");
    let start = Instant::now();
    let cats = classify_relations(&kg.train, CLASSIFY_ETA).unwrap();
    let elapsed = start.elapsed();
    let category = |name: &str| kg.relations.id(name).and_then(|r| cats.get(&r)).map(|c| c.category);
    let similar = category("_similar_to");
    let also = category("_also_see");
    let pass = similar == Some(Category::OneToOne) && also == Some(Category::NToN) && elapsed < CLASSIFY_TIME;
    report(4, "WN18 relation classes", pass, format!("_similar_to {similar:?}, _also_see {also:?} in {elapsed:.2?}"));
    assert!(pass);
}

#[test]
fn criterion_05_training_sanity() {
    let kg = synthetic(1);
    let start = Instant::now();
    let out = train(&kg, ModelKind::Hie, &HieConfig::new(32, 2), &synthetic_train_config(0)).unwrap();
    let m = test_metrics(&out.model, &kg);
    let elapsed = start.elapsed();
    let pass = m.hits10 >= SANITY_HITS10 && elapsed < SANITY_TIME;
    report(
        5,
        "synthetic training",
        pass,
        format!("filtered Hits@10 {:.3} (MRR {:.3}) on {} held-out triples after {SANITY_STEPS} steps in {elapsed:.2?}", m.hits10, m.mrr, kg.test.len()),
    );
    assert!(pass);
}

#[test]
#[ignore = "needs WN18RR in $HIE_WN18RR_DIR; run with --release"]
fn criterion_06_reduced_scale_wn18rr() {
    let kg = dataset("HIE_WN18RR_DIR");
    let cfg = TrainConfig {
        steps: 5000,
        batch_size: 512,
        gamma: 6.0,
        alpha_temp: 1.0,
        num_negatives: 64,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let hie = train(&kg, ModelKind::Hie, &HieConfig::new(100, 2), &cfg).unwrap();
    let hie_mrr = test_metrics(&hie.model, &kg).mrr;
    let hie_time = start.elapsed();
    let start = Instant::now();
    let transe = train(&kg, ModelKind::TransE, &HieConfig::new(100, 1), &cfg).unwrap();
    let transe_mrr = test_metrics(&transe.model, &kg).mrr;
    let transe_time = start.elapsed();
    let pass = hie_mrr >= WN18RR_HIE_MRR && transe_mrr >= WN18RR_TRANSE_MRR && hie_time <= WN18RR_TIME;
    report(
        6,
        "reduced-scale WN18RR",
        pass,
        format!("HIE MRR {hie_mrr:.4} in {hie_time:.0?}, TransE MRR {transe_mrr:.4} in {transe_time:.0?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_ablation_direction() {
    let runs: Vec<(u64, f64, f64, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..3u64)
            .map(|seed| {
                s.spawn(move || {
                    let kg = synthetic(seed);
                    let mrr = |variant: u8| {
                        let mut hie = HieConfig::new(32, 2);
                        hie.ablation.disable_distance = variant == 1;
                        hie.ablation.disable_semantic = variant == 2;
                        let out = train(&kg, ModelKind::Hie, &hie, &synthetic_train_config(seed)).unwrap();
                        test_metrics(&out.model, &kg).mrr
                    };
                    (seed, mrr(0), mrr(1), mrr(2))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut pass = true;
    let mut detail = Vec::new();
    for (seed, full, no_d, no_s) in &runs {
        pass &= *full >= no_d.max(*no_s) - ABLATION_MARGIN;
        detail.push(format!("seed {seed}: full {full:.3} no_distance {no_d:.3} no_semantic {no_s:.3}"));
    }
    report(7, "ablation direction", pass, detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_08_determinism() {
    let kg = synthetic(2);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let blobs: Vec<(Vec<u8>, Vec<u8>)> = dirs
        .iter()
        .map(|d| {
            let cfg = RunConfig {
                dim: 16,
                steps: 150,
                batch_size: 32,
                negatives: 8,
                lr: 0.01,
                seed: 11,
                out: d.path().to_path_buf(),
                ..RunConfig::default()
            };
            let summary = train_on(&kg, &cfg).unwrap();
            (
                std::fs::read(&summary.checkpoint).unwrap(),
                std::fs::read(summary.checkpoint.with_extension("json")).unwrap(),
            )
        })
        .collect();
    let pass = blobs[0] == blobs[1];
    report(8, "determinism", pass, format!("checkpoint {} bytes, identical: {pass}", blobs[0].0.len()));
    assert!(pass);
}

#[test]
fn criterion_09_adversarial_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_sum = 0.0f64;
    let mut worst_uniform = 0.0f64;
    let mut worst_shift = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..64);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let temp = rng.gen_range(0.0..4.0);
        let gamma = rng.gen_range(1.0..20.0);
        let w = adversarial_weights(&scores, temp, gamma, AdversarialSign::Plausibility);
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        let flat = adversarial_weights(&scores, 0.0, gamma, AdversarialSign::Plausibility);
        worst_uniform = flat.iter().map(|x| (x - 1.0 / n as f64).abs()).fold(worst_uniform, f64::max);
        let c = rng.gen_range(-100.0..100.0);
        let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
        let ws = adversarial_weights(&shifted, temp, gamma, AdversarialSign::Plausibility);
        worst_shift = w.iter().zip(&ws).map(|(a, b)| (a - b).abs()).fold(worst_shift, f64::max);
    }
    let pass = worst_sum <= WEIGHT_TOL && worst_uniform <= WEIGHT_TOL && worst_shift <= WEIGHT_TOL;
    report(
        9,
        "adversarial weights",
        pass,
        format!("sum error {worst_sum:.1e}, uniform error {worst_uniform:.1e}, shift error {worst_shift:.1e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_10_ablation_independence() {
    let mut max_change = 0.0f64;
    let mut checked = 0;
    for disable_semantic in [true, false] {
        for seed in 0..20 {
            let mut hie = HieConfig::new(8, 3);
            hie.ablation.disable_semantic = disable_semantic;
            hie.ablation.disable_distance = !disable_semantic;
            let mut model = Model::init(ModelKind::Hie, 6, 2, &hie, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            jitter_parameters(&mut model, &mut rng, 0.5);
            let triples: Vec<Triple> = (0..6).flat_map(|h| (0..2).flat_map(move |r| (0..6).map(move |t| Triple::new(h, r, t)))).collect();
            let before = model.score_many(&triples);
            let masked_half = if disable_semantic { 4..8 } else { 0..4 };
            let specs = model.tensor_specs();
            for (spec, tensor) in specs.iter().zip(model.tensors_mut()) {
                let name = spec.name.as_str();
                let semantic_param = name.starts_with("extract_s") || matches!(name, "diag_hs" | "diag_ts" | "diag_rs");
                let distance_param = name.starts_with("extract_p")
                    || name.starts_with("transform_seed")
                    || matches!(name, "diag_hp" | "diag_tp" | "diag_rp");
                if name == "ent" || name == "rel" {
                    for (i, x) in tensor.iter_mut().enumerate() {
                        if masked_half.contains(&(i % 8)) {
                            *x += rng.gen_range(-2.0..2.0);
                        }
                    }
                } else if (disable_semantic && semantic_param) || (!disable_semantic && distance_param) {
                    tensor.iter_mut().for_each(|x| *x += rng.gen_range(-2.0..2.0));
                }
            }
            let after = model.score_many(&triples);
            checked += triples.len();
            max_change = before.iter().zip(&after).map(|(a, b)| (a - b).abs()).fold(max_change, f64::max);
        }
    }
    let pass = max_change == 0.0;
    report(10, "ablation independence", pass, format!("max score change {max_change:e} over {checked} scores"));
    assert!(pass);
}
