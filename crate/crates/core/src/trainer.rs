//! Self-adversarial negative-sampling training with a lazy sparse Adam.
//!
//! Per positive triple the loss is
//!
//! ```text
//! L = -ln σ(γ - f(pos)) - Σ_j w_j ln σ(f(neg_j) - γ)
//! ```
//!
//! with `w = softmax(alpha_temp * (γ - f(neg)))` held constant during
//! differentiation, averaged over the batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::hie::HieConfig;
use crate::kg_data::{sample_batch, KnowledgeGraph, Triple};
use crate::model::{GradSet, KgeModel, Model, ModelKind, TensorGrad, TensorSpec};

/// What the adversarial softmax exponentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdversarialSign {
    /// `alpha_temp * (γ - f)`: more plausible negatives get more weight.
    #[default]
    Plausibility,
    /// `alpha_temp * f`, exponentiating the raw distance.
    Literal,
}

impl std::str::FromStr for AdversarialSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plausibility" => Ok(AdversarialSign::Plausibility),
            "literal" => Ok(AdversarialSign::Literal),
            other => Err(Error::config(
                "adversarial-sign",
                format!("expected plausibility or literal, got {other:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub alpha_temp: f64,
    pub num_negatives: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub adversarial_sign: AdversarialSign,
    /// Multiply the learning rate by `lr_decay_factor` every this many
    /// steps; 0 keeps it fixed.
    #[serde(default)]
    pub lr_decay_every: usize,
    #[serde(default = "default_decay_factor")]
    pub lr_decay_factor: f64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

fn default_decay_factor() -> f64 {
    0.5
}

fn default_log_every() -> usize {
    100
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 6.0,
            alpha_temp: 1.0,
            num_negatives: 64,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            steps: 1000,
            batch_size: 512,
            seed: 0,
            adversarial_sign: AdversarialSign::Plausibility,
            lr_decay_every: 0,
            lr_decay_factor: default_decay_factor(),
            log_every: default_log_every(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::config("gamma", "must be > 0"));
        }
        if !(self.alpha_temp >= 0.0) {
            return Err(Error::config("alpha-temp", "must be >= 0"));
        }
        if self.num_negatives == 0 {
            return Err(Error::config("negatives", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("lr", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("adam-beta", "betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam-eps", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch-size", "must be >= 1"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log-every", "must be >= 1"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if self.lr_decay_every == 0 {
            self.learning_rate
        } else {
            self.learning_rate * self.lr_decay_factor.powi((step / self.lr_decay_every) as i32)
        }
    }
}

/// `n` corruptions of `triple`, each replacing head or tail (fair coin) by a
/// uniformly drawn entity. Not filtered against known facts.
pub fn sample_negatives<R: Rng + ?Sized>(
    triple: &Triple,
    n: usize,
    num_entities: usize,
    rng: &mut R,
) -> Vec<Triple> {
    (0..n)
        .map(|_| {
            let corrupt_head = rng.gen_bool(0.5);
            let e = rng.gen_range(0..num_entities);
            if corrupt_head {
                Triple { head: e, ..*triple }
            } else {
                Triple { tail: e, ..*triple }
            }
        })
        .collect()
}

/// Softmax sampling weights over negative scores, max-subtracted.
pub fn adversarial_weights(
    neg_scores: &[f64],
    alpha_temp: f64,
    gamma: f64,
    sign: AdversarialSign,
) -> Vec<f64> {
    let logits: Vec<f64> = neg_scores
        .iter()
        .map(|&f| match sign {
            AdversarialSign::Plausibility => alpha_temp * (gamma - f),
            AdversarialSign::Literal => alpha_temp * f,
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln σ(x)` without overflow.
fn neg_log_sigmoid(x: f64) -> f64 {
    (-x).max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `softplus(b + d) - softplus(b)`, accurate when `d` is tiny.
fn softplus_step(b: f64, d: f64) -> f64 {
    if d.abs() > 1.0 {
        neg_log_sigmoid(-(b + d)) - neg_log_sigmoid(-b)
    } else {
        (crate::hie::sigmoid(b) * d.exp_m1()).ln_1p()
    }
}

/// Per-example self-adversarial loss.
pub fn loss(pos_score: f64, neg_scores: &[f64], weights: &[f64], gamma: f64) -> f64 {
    let negative: f64 = neg_scores
        .iter()
        .zip(weights)
        .map(|(&f, &w)| w * neg_log_sigmoid(f - gamma))
        .sum();
    neg_log_sigmoid(gamma - pos_score) + negative
}

/// Positives with their sampled corruptions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub positives: Vec<Triple>,
    pub negatives: Vec<Vec<Triple>>,
}

impl TrainingBatch {
    pub fn sample<R: Rng + ?Sized>(
        train: &[Triple],
        batch_size: usize,
        num_negatives: usize,
        num_entities: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let positives = sample_batch(train, batch_size, rng)?;
        let negatives = positives
            .iter()
            .map(|t| sample_negatives(t, num_negatives, num_entities, rng))
            .collect();
        Ok(Self { positives, negatives })
    }

    fn flatten(&self) -> Vec<Triple> {
        let mut all = self.positives.clone();
        for negs in &self.negatives {
            all.extend_from_slice(negs);
        }
        all
    }
}

/// Scores for a batch: positives first, then each example's negatives.
struct BatchScores {
    pos: Vec<f64>,
    neg: Vec<Vec<f64>>,
}

fn score_batch_examples<M: KgeModel + ?Sized>(model: &M, batch: &TrainingBatch) -> BatchScores {
    let all = model.score_many(&batch.flatten());
    let b = batch.positives.len();
    let pos = all[..b].to_vec();
    let mut neg = Vec::with_capacity(b);
    let mut offset = b;
    for negs in &batch.negatives {
        neg.push(all[offset..offset + negs.len()].to_vec());
        offset += negs.len();
    }
    BatchScores { pos, neg }
}

/// Adversarial weights for each example at the current parameters.
pub fn batch_weights<M: KgeModel + ?Sized>(
    model: &M,
    batch: &TrainingBatch,
    config: &TrainConfig,
) -> Vec<Vec<f64>> {
    score_batch_examples(model, batch)
        .neg
        .iter()
        .map(|s| adversarial_weights(s, config.alpha_temp, config.gamma, config.adversarial_sign))
        .collect()
}

/// Mean batch loss with the adversarial weights held fixed.
pub fn batch_loss_with_weights<M: KgeModel + ?Sized>(
    model: &M,
    batch: &TrainingBatch,
    weights: &[Vec<f64>],
    gamma: f64,
) -> f64 {
    let scores = score_batch_examples(model, batch);
    let total: f64 = scores
        .pos
        .iter()
        .zip(&scores.neg)
        .zip(weights)
        .map(|((&p, n), w)| loss(p, n, w, gamma))
        .sum();
    total / batch.positives.len() as f64
}

/// Mean batch loss and its exact gradient, weights detached.
pub fn gradients<M: KgeModel + ?Sized>(
    model: &M,
    batch: &TrainingBatch,
    config: &TrainConfig,
) -> (f64, GradSet) {
    let scores = score_batch_examples(model, batch);
    let b = batch.positives.len() as f64;
    let mut triples = Vec::new();
    let mut coefs = Vec::new();
    let mut total = 0.0;
    for (i, pos) in batch.positives.iter().enumerate() {
        let (p, n) = (scores.pos[i], &scores.neg[i]);
        let w = adversarial_weights(n, config.alpha_temp, config.gamma, config.adversarial_sign);
        total += loss(p, n, &w, config.gamma);
        // d/df [-ln σ(γ - f)] = σ(f - γ); d/df [-w ln σ(f - γ)] = -w σ(γ - f)
        triples.push(*pos);
        coefs.push(crate::hie::sigmoid(p - config.gamma) / b);
        for ((neg, &f), &wj) in batch.negatives[i].iter().zip(n).zip(&w) {
            triples.push(*neg);
            coefs.push(-wj * crate::hie::sigmoid(config.gamma - f) / b);
        }
    }
    let mut grads = GradSet::zeros(&model.tensor_specs());
    model.accumulate_gradients(&triples, &coefs, &mut grads);
    (total / b, grads)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// `(tensor name, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of the fixed-weight batch
/// loss. Scores are evaluated in double-double precision and each loss term
/// is differenced on its own, so roundoff stays far below the change a step
/// of `fd_step` produces. Checks every coordinate when `max_coords` is `None`, otherwise a
/// random subset of that size.
pub fn grad_check_against<M: KgeModel + ?Sized, R: Rng + ?Sized>(
    model: &mut M,
    batch: &TrainingBatch,
    config: &TrainConfig,
    analytic: &GradSet,
    fd_step: f64,
    max_coords: Option<usize>,
    rng: &mut R,
) -> Result<GradCheckReport> {
    if !(fd_step > 0.0) {
        return Err(Error::config("fd_step", "must be > 0"));
    }
    let specs = model.tensor_specs();
    let weights = batch_weights(&*model, batch, config);
    let flat = batch.flatten();
    let b = batch.positives.len();
    let mut coords: Vec<(usize, usize)> = specs
        .iter()
        .enumerate()
        .flat_map(|(ti, s)| (0..s.numel()).map(move |i| (ti, i)))
        .collect();
    if let Some(limit) = max_coords {
        if limit < coords.len() {
            for i in 0..limit {
                let j = rng.gen_range(i..coords.len());
                coords.swap(i, j);
            }
            coords.truncate(limit);
        }
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: coords.len(),
        worst: None,
    };
    for (ti, idx) in coords {
        let original = model.tensors()[ti][idx];
        model.tensors_mut()[ti][idx] = original + fd_step;
        let plus: Vec<TwoFloat> = flat.iter().map(|t| model.score_extended(t)).collect();
        model.tensors_mut()[ti][idx] = original - fd_step;
        let minus: Vec<TwoFloat> = flat.iter().map(|t| model.score_extended(t)).collect();
        model.tensors_mut()[ti][idx] = original;
        let mut delta = 0.0;
        let mut k = 0;
        // positives first, then each example's negatives, as in `flatten`
        for (i, negs) in batch.negatives.iter().enumerate() {
            let d = f64::from(plus[i] - minus[i]);
            delta += softplus_step(f64::from(minus[i]) - config.gamma, d);
            for (j, _) in negs.iter().enumerate() {
                let n = b + k + j;
                let d = f64::from(plus[n] - minus[n]);
                delta += weights[i][j] * softplus_step(config.gamma - f64::from(minus[n]), -d);
            }
            k += negs.len();
        }
        let numeric = delta / b as f64 / (2.0 * fd_step);
        let a = analytic.get(ti, idx);
        let err = match relative_error(a, numeric) {
            e if e.is_nan() => f64::INFINITY,
            e => e,
        };
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err;
            report.worst = Some((specs[ti].name.clone(), idx, a, numeric));
        }
    }
    Ok(report)
}

/// Max relative error between `gradients` and central differences.
pub fn grad_check<M: KgeModel + ?Sized, R: Rng + ?Sized>(
    model: &mut M,
    batch: &TrainingBatch,
    config: &TrainConfig,
    fd_step: f64,
    max_coords: Option<usize>,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let (_, analytic) = gradients(&*model, batch, config);
    grad_check_against(model, batch, config, &analytic, fd_step, max_coords, rng)
}

/// First and second moments for every tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(c: &TrainConfig) -> Self {
        Self {
            lr: c.learning_rate,
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            eps: c.adam_eps,
        }
    }
}

impl AdamState {
    pub fn new(specs: &[TensorSpec]) -> Self {
        Self {
            m: specs.iter().map(|s| vec![0.0; s.numel()]).collect(),
            v: specs.iter().map(|s| vec![0.0; s.numel()]).collect(),
            t: 0,
        }
    }
}

/// One Adam update. Row-sparse tensors only touch rows present in `grads`.
pub fn adam_update(
    tensors: Vec<&mut [f64]>,
    grads: &GradSet,
    state: &mut AdamState,
    hyper: AdamHyper,
) -> Result<()> {
    if tensors.len() != grads.tensors.len() || tensors.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} tensors, {} gradients, {} moment sets",
            tensors.len(),
            grads.tensors.len(),
            state.m.len()
        )));
    }
    for (i, t) in tensors.iter().enumerate() {
        let ok = state.m[i].len() == t.len()
            && state.v[i].len() == t.len()
            && match &grads.tensors[i] {
                TensorGrad::Dense(d) => d.len() == t.len(),
                TensorGrad::Rows { width, rows } => {
                    *width > 0 && t.len() % width == 0 && rows.keys().all(|r| (r + 1) * width <= t.len())
                }
            };
        if !ok {
            return Err(Error::Shape(format!("tensor {i} does not match its gradient or moments")));
        }
    }
    state.t += 1;
    let AdamHyper { lr, beta1, beta2, eps } = hyper;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let update = |x: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *x -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for (i, tensor) in tensors.into_iter().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        match &grads.tensors[i] {
            TensorGrad::Dense(g) => {
                for j in 0..tensor.len() {
                    update(&mut tensor[j], &mut m[j], &mut v[j], g[j]);
                }
            }
            TensorGrad::Rows { width, rows } => {
                for (&r, g) in rows {
                    for c in 0..*width {
                        let j = r * width + c;
                        update(&mut tensor[j], &mut m[j], &mut v[j], g[c]);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Applies one Adam update to `model` and restores its invariants.
pub fn adam_step<M: KgeModel + ?Sized>(
    model: &mut M,
    grads: &GradSet,
    state: &mut AdamState,
    hyper: AdamHyper,
) -> Result<()> {
    adam_update(model.tensors_mut(), grads, state, hyper)?;
    model.normalize();
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub mean_loss: f64,
    /// Blend weight at this step, for models that have one.
    pub alpha_value: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LossRecord>,
}

/// Seeds the training stream apart from parameter initialization.
fn training_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15)
}

/// Trains an already-initialized model in place.
pub fn train_model<M: KgeModel + ?Sized>(
    model: &mut M,
    train: &[Triple],
    config: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    config.validate()?;
    let mut log = Vec::new();
    if config.steps == 0 {
        return Ok(log);
    }
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let mut rng = training_rng(config.seed);
    let mut state = AdamState::new(&model.tensor_specs());
    let ne = model.num_entities();
    let mut window = 0.0;
    let mut window_len = 0usize;
    for step in 1..=config.steps {
        let batch = TrainingBatch::sample(train, config.batch_size, config.num_negatives, ne, &mut rng)?;
        let (loss, grads) = gradients(&*model, &batch, config);
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {loss} at step {step}")));
        }
        let mut hyper = AdamHyper::from(config);
        hyper.lr = config.learning_rate_at(step - 1);
        adam_step(model, &grads, &mut state, hyper)?;
        window += loss;
        window_len += 1;
        if step % config.log_every == 0 || step == config.steps {
            log.push(LossRecord {
                step,
                mean_loss: window / window_len as f64,
                alpha_value: model.blend_alpha(),
            });
            log::debug!("step {step}: loss {:.6}", window / window_len as f64);
            window = 0.0;
            window_len = 0;
        }
    }
    Ok(log)
}

/// Initializes a model of `kind` and trains it on `kg.train`.
pub fn train(
    kg: &KnowledgeGraph,
    kind: ModelKind,
    hie_config: &HieConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model = Model::init(kind, kg.num_entities(), kg.num_relations(), hie_config, config.seed)?;
    let log = train_model(&mut model, &kg.train, config)?;
    Ok(TrainOutcome { model, log })
}

/// Writes `step,mean_loss,alpha_value` rows.
pub fn write_loss_csv(path: impl AsRef<std::path::Path>, log: &[LossRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "mean_loss", "alpha_value"])?;
    for r in log {
        w.write_record([
            r.step.to_string(),
            format!("{:.17e}", r.mean_loss),
            r.alpha_value.map(|a| format!("{a:.17e}")).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
