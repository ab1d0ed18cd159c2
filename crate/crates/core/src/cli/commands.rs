use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, metrics_report, MetricBundle, MetricsReport};
use crate::hie::{level_weights, Norm};
use crate::kg_data::{classify_relations, write_dictionary, KnowledgeGraph, Split, Triple};
use crate::model::{jitter_parameters, KgeModel, Model};
use crate::trainer::{grad_check, train, write_loss_csv, GradCheckReport, TrainingBatch};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub model: Model,
    /// Filtered validation metrics, when the validation split is nonempty.
    pub valid: Option<MetricsReport>,
}

pub fn evaluate_report(model: &Model, kg: &KnowledgeGraph, split: Split, cfg: &RunConfig) -> Result<MetricsReport> {
    let results = evaluate(model, kg, split, cfg.eval_options())?;
    let categories = if kg.train.is_empty() {
        Default::default()
    } else {
        classify_relations(&kg.train, cfg.eta)?
    };
    metrics_report(&results, &categories, Some(kg.relations.names()))
}

/// Trains on an already-loaded graph and writes checkpoint, loss log,
/// dictionaries and validation metrics into `cfg.out`.
pub fn train_on(kg: &KnowledgeGraph, cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let hie = cfg.hie_config();
    let train_cfg = cfg.train_config();
    let outcome = train(kg, cfg.model, &hie, &train_cfg)?;
    let valid = if kg.valid.is_empty() {
        None
    } else {
        Some(evaluate_report(&outcome.model, kg, Split::Valid, cfg)?)
    };
    create_dir(&cfg.out)?;
    let meta = CheckpointMeta {
        model_kind: cfg.model,
        hie,
        train: train_cfg.clone(),
        num_entities: kg.num_entities(),
        num_relations: kg.num_relations(),
        step: train_cfg.steps,
        seed: cfg.seed,
        tensors: outcome.model.tensor_specs(),
        metrics: valid.as_ref().map(|r| r.overall),
    };
    let checkpoint = cfg.out.join(CHECKPOINT_FILE);
    save_checkpoint(&outcome.model, &meta, &checkpoint)?;
    let loss_log = cfg.out.join(LOSS_FILE);
    write_loss_csv(&loss_log, &outcome.log)?;
    write_dictionary(cfg.out.join("entities.dict"), &kg.entities)?;
    write_dictionary(cfg.out.join("relations.dict"), &kg.relations)?;
    if let Some(report) = &valid {
        write_json(&cfg.out.join("metrics_valid.json"), report)?;
    }
    Ok(TrainSummary {
        checkpoint,
        loss_log,
        model: outcome.model,
        valid,
    })
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let kg = KnowledgeGraph::load_dir(cfg.require_data_dir()?)?;
    train_on(&kg, cfg)
}

/// Evaluates a stored checkpoint and writes `metrics_<split>.json` plus a
/// one-row CSV into `cfg.out`.
pub fn eval_on(checkpoint: &Path, kg: &KnowledgeGraph, cfg: &RunConfig) -> Result<MetricsReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    if ckpt.meta.num_entities != kg.num_entities() || ckpt.meta.num_relations != kg.num_relations() {
        return Err(Error::DimMismatch(format!(
            "checkpoint vocabulary {}/{} does not match dataset {}/{}",
            ckpt.meta.num_entities,
            ckpt.meta.num_relations,
            kg.num_entities(),
            kg.num_relations()
        )));
    }
    let model = ckpt.into_model()?;
    let report = evaluate_report(&model, kg, cfg.split, cfg)?;
    create_dir(&cfg.out)?;
    let stem = match cfg.split {
        Split::Train => "train",
        Split::Valid => "valid",
        Split::Test => "test",
    };
    write_json(&cfg.out.join(format!("metrics_{stem}.json")), &report)?;
    let mut w = csv::Writer::from_path(cfg.out.join(format!("metrics_{stem}.csv")))?;
    w.write_record(METRIC_COLUMNS)?;
    w.write_record(metric_fields(&report.overall))?;
    w.flush().map_err(|e| Error::io(&cfg.out, e))?;
    Ok(report)
}

pub fn cmd_eval(checkpoint: &Path, cfg: &RunConfig) -> Result<MetricsReport> {
    let kg = KnowledgeGraph::load_dir(cfg.require_data_dir()?)?;
    eval_on(checkpoint, &kg, cfg)
}

const METRIC_COLUMNS: [&str; 6] = ["mr", "mrr", "hits1", "hits3", "hits10", "count"];

fn metric_fields(m: &MetricBundle) -> [String; 6] {
    [
        m.mr.to_string(),
        m.mrr.to_string(),
        m.hits1.to_string(),
        m.hits3.to_string(),
        m.hits10.to_string(),
        m.count.to_string(),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryRow {
    pub relation: String,
    pub hco: f64,
    pub tcs: f64,
    pub category: String,
}

pub fn classify_rows(kg: &KnowledgeGraph, eta: f64) -> Result<Vec<CategoryRow>> {
    Ok(classify_relations(&kg.train, eta)?
        .into_iter()
        .map(|(rel, c)| CategoryRow {
            relation: kg.relations.name(rel).unwrap_or_default().to_owned(),
            hco: c.hco,
            tcs: c.tcs,
            category: c.category.label().to_owned(),
        })
        .collect())
}

/// Writes `relation,hco,tcs,category` to `cfg.out/categories.csv`.
pub fn cmd_classify(cfg: &RunConfig) -> Result<Vec<CategoryRow>> {
    let kg = KnowledgeGraph::load_dir(cfg.require_data_dir()?)?;
    let rows = classify_rows(&kg, cfg.eta)?;
    create_dir(&cfg.out)?;
    let mut w = csv::Writer::from_path(cfg.out.join("categories.csv"))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(&cfg.out, e))?;
    Ok(rows)
}

/// Values to sweep; an empty list keeps the base configuration's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct SweepGrid {
    pub dim: Vec<usize>,
    pub levels: Vec<usize>,
    pub lambda1: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub gamma: Vec<f64>,
    pub alpha_temp: Vec<f64>,
    pub norm: Vec<Norm>,
    pub lr: Vec<f64>,
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl SweepGrid {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config("grid", format!("{}: {e}", path.display())))
    }

    /// Cartesian product of all axes applied to `base`.
    pub fn points(&self, base: &RunConfig) -> Vec<RunConfig> {
        let mut points = vec![base.clone()];
        macro_rules! expand {
            ($field:ident, $values:expr) => {
                points = points
                    .into_iter()
                    .flat_map(|p| {
                        axis(&$values, p.$field.clone()).into_iter().map(move |v| {
                            let mut q = p.clone();
                            q.$field = v;
                            q
                        })
                    })
                    .collect();
            };
        }
        expand!(dim, self.dim);
        expand!(levels, self.levels);
        let lambda1: Vec<Option<f64>> = self.lambda1.iter().copied().map(Some).collect();
        expand!(lambda1, lambda1);
        expand!(batch_size, self.batch_size);
        expand!(gamma, self.gamma);
        expand!(alpha_temp, self.alpha_temp);
        expand!(norm, self.norm);
        expand!(lr, self.lr);
        points
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub point: usize,
    pub dim: usize,
    pub levels: usize,
    pub lambda: String,
    pub batch_size: usize,
    pub gamma: f64,
    pub alpha_temp: f64,
    pub norm: String,
    pub lr: f64,
    pub status: String,
    pub mr: Option<f64>,
    pub mrr: Option<f64>,
    pub hits1: Option<f64>,
    pub hits3: Option<f64>,
    pub hits10: Option<f64>,
    pub error: String,
}

/// Trains and validates every grid point under `base.out/point_<i>`, then
/// writes `base.out/sweep.csv`. A failing point yields an error row.
pub fn sweep_on(kg: &KnowledgeGraph, base: &RunConfig, grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    let points = grid.points(base);
    if points.is_empty() {
        return Err(Error::config("grid", "no grid points"));
    }
    create_dir(&base.out)?;
    let mut rows = Vec::with_capacity(points.len());
    for (i, mut cfg) in points.into_iter().enumerate() {
        cfg.out = base.out.join(format!("point_{i}"));
        let lambda = level_weights(cfg.levels, cfg.lambda1)
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let outcome = train_on(kg, &cfg).and_then(|s| {
            s.valid
                .map(|r| r.overall)
                .ok_or_else(|| Error::Data("validation split is empty".into()))
        });
        let (status, metrics, error) = match outcome {
            Ok(m) => ("ok", Some(m), String::new()),
            Err(e) => ("error", None, e.to_string()),
        };
        log::info!("sweep point {i}: {status}");
        rows.push(SweepRow {
            point: i,
            dim: cfg.dim,
            levels: cfg.levels,
            lambda,
            batch_size: cfg.batch_size,
            gamma: cfg.gamma,
            alpha_temp: cfg.alpha_temp,
            norm: cfg.norm.to_string(),
            lr: cfg.lr,
            status: status.to_owned(),
            mr: metrics.map(|m| m.mr),
            mrr: metrics.map(|m| m.mrr),
            hits1: metrics.map(|m| m.hits1),
            hits3: metrics.map(|m| m.hits3),
            hits10: metrics.map(|m| m.hits10),
            error,
        });
    }
    let mut w = csv::Writer::from_path(base.out.join("sweep.csv"))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(&base.out, e))?;
    Ok(rows)
}

pub fn cmd_sweep(base: &RunConfig, grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    let kg = KnowledgeGraph::load_dir(base.require_data_dir()?)?;
    sweep_on(&kg, base, grid)
}

/// The ablation variants, in report order.
pub const ABLATIONS: [&str; 5] = ["full", "no_distance", "no_semantic", "no_distance_deep", "no_semantic_deep"];

pub fn ablation_config(base: &RunConfig, variant: &str) -> Result<RunConfig> {
    let mut cfg = base.clone();
    cfg.no_distance = false;
    cfg.no_semantic = false;
    cfg.no_distance_deep = false;
    cfg.no_semantic_deep = false;
    match variant {
        "full" => {}
        "no_distance" => cfg.no_distance = true,
        "no_semantic" => cfg.no_semantic = true,
        "no_distance_deep" => cfg.no_distance_deep = true,
        "no_semantic_deep" => cfg.no_semantic_deep = true,
        other => return Err(Error::config("ablation", format!("unknown variant {other:?}"))),
    }
    cfg.out = base.out.join(variant);
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub mr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

/// Trains every ablation variant, evaluates it on `base.split` and writes
/// `base.out/ablation.csv`.
pub fn ablate_on(kg: &KnowledgeGraph, base: &RunConfig) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for variant in ABLATIONS {
        let cfg = ablation_config(base, variant)?;
        let summary = train_on(kg, &cfg)?;
        let m = evaluate_report(&summary.model, kg, cfg.split, &cfg)?.overall;
        rows.push(AblationRow {
            variant: variant.to_owned(),
            mr: m.mr,
            mrr: m.mrr,
            hits1: m.hits1,
            hits3: m.hits3,
            hits10: m.hits10,
        });
    }
    create_dir(&base.out)?;
    let mut w = csv::Writer::from_path(base.out.join("ablation.csv"))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(&base.out, e))?;
    Ok(rows)
}

pub fn cmd_ablate(base: &RunConfig) -> Result<Vec<AblationRow>> {
    let kg = KnowledgeGraph::load_dir(base.require_data_dir()?)?;
    ablate_on(&kg, base)
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckSummary {
    pub batches: Vec<GradCheckReport>,
    pub max_rel_error: f64,
}

/// Finite-difference check of a randomly perturbed model. Uses the dataset
/// when `cfg.data_dir` is set, otherwise a random 20-entity, 5-relation
/// graph. Large models are checked on a random subset of 500 coordinates.
pub fn cmd_gradcheck(cfg: &RunConfig, batches: usize, fd_step: f64) -> Result<GradCheckSummary> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (ne, nr, train) = match &cfg.data_dir {
        Some(_) => {
            let kg = KnowledgeGraph::load_dir(cfg.require_data_dir()?)?;
            (kg.num_entities(), kg.num_relations(), kg.train)
        }
        None => {
            use rand::Rng;
            let train: Vec<Triple> = (0..40)
                .map(|_| Triple::new(rng.gen_range(0..20), rng.gen_range(0..5), rng.gen_range(0..20)))
                .collect();
            (20, 5, train)
        }
    };
    let mut model = Model::init(cfg.model, ne, nr, &cfg.hie_config(), cfg.seed)?;
    jitter_parameters(&mut model, &mut rng, 0.5);
    let mut train_cfg = cfg.train_config();
    train_cfg.batch_size = train_cfg.batch_size.min(4);
    train_cfg.num_negatives = train_cfg.num_negatives.min(4);
    let numel: usize = model.tensor_specs().iter().map(|s| s.numel()).sum();
    let subset = (numel > 5000).then_some(500);
    let mut reports = Vec::with_capacity(batches);
    for _ in 0..batches {
        let batch = TrainingBatch::sample(&train, train_cfg.batch_size, train_cfg.num_negatives, ne, &mut rng)?;
        reports.push(grad_check(&mut model, &batch, &train_cfg, fd_step, subset, &mut rng)?);
    }
    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckSummary {
        batches: reports,
        max_rel_error,
    })
}
