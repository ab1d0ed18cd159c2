//! The scoring-model interface shared by HIE and the baselines, plus the
//! parameter and gradient containers the trainer and checkpoints work on.
//!
//! Every model scores with a distance convention: lower scores mean more
//! plausible triples.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::baselines::{BaselineKind, BaselineModel};
use crate::error::{Error, Result};
use crate::hie::{HieConfig, HieModel};
use crate::kg_data::{Side, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Hie,
    TransE,
    DistMult,
    RotatE,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Hie => "hie",
            ModelKind::TransE => "transe",
            ModelKind::DistMult => "distmult",
            ModelKind::RotatE => "rotate",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hie" => Ok(ModelKind::Hie),
            "transe" => Ok(ModelKind::TransE),
            "distmult" => Ok(ModelKind::DistMult),
            "rotate" => Ok(ModelKind::RotatE),
            other => Err(Error::config("model", format!("unknown model {other:?}"))),
        }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }
}

/// Name and shape of one trainable tensor. `sparse_rows` marks embedding
/// tables whose gradients are kept per touched row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(default)]
    pub sparse_rows: bool,
}

impl TensorSpec {
    pub fn dense(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
            sparse_rows: false,
        }
    }

    pub fn rows(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            shape: vec![rows, cols],
            sparse_rows: true,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Row width for a sparse-row tensor.
    pub fn width(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorGrad {
    /// Touched rows only; absent rows have exactly zero gradient.
    Rows {
        width: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
    Dense(Vec<f64>),
}

/// Gradients for every tensor of a model, in `tensor_specs` order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet {
    pub tensors: Vec<TensorGrad>,
}

impl GradSet {
    pub fn zeros(specs: &[TensorSpec]) -> Self {
        let tensors = specs
            .iter()
            .map(|s| {
                if s.sparse_rows {
                    TensorGrad::Rows {
                        width: s.width(),
                        rows: BTreeMap::new(),
                    }
                } else {
                    TensorGrad::Dense(vec![0.0; s.numel()])
                }
            })
            .collect();
        Self { tensors }
    }

    /// Mutable gradient row, created as zeros on first touch.
    pub fn row_mut(&mut self, tensor: usize, row: usize) -> &mut [f64] {
        match &mut self.tensors[tensor] {
            TensorGrad::Rows { width, rows } => {
                let w = *width;
                rows.entry(row).or_insert_with(|| vec![0.0; w])
            }
            TensorGrad::Dense(_) => panic!("tensor {tensor} is dense"),
        }
    }

    pub fn dense_mut(&mut self, tensor: usize) -> &mut [f64] {
        match &mut self.tensors[tensor] {
            TensorGrad::Dense(d) => d,
            TensorGrad::Rows { .. } => panic!("tensor {tensor} is row-sparse"),
        }
    }

    /// Gradient at flat index `idx` of `tensor`.
    pub fn get(&self, tensor: usize, idx: usize) -> f64 {
        match &self.tensors[tensor] {
            TensorGrad::Dense(d) => d[idx],
            TensorGrad::Rows { width, rows } => rows
                .get(&(idx / width))
                .map_or(0.0, |r| r[idx % width]),
        }
    }

    pub fn set(&mut self, tensor: usize, idx: usize, value: f64) {
        match &mut self.tensors[tensor] {
            TensorGrad::Dense(d) => d[idx] = value,
            TensorGrad::Rows { width, rows } => {
                let w = *width;
                rows.entry(idx / w).or_insert_with(|| vec![0.0; w])[idx % w] = value;
            }
        }
    }

    pub fn touched_rows(&self, tensor: usize) -> Vec<usize> {
        match &self.tensors[tensor] {
            TensorGrad::Rows { rows, .. } => rows.keys().copied().collect(),
            TensorGrad::Dense(_) => Vec::new(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            match t {
                TensorGrad::Dense(d) => d.iter_mut().for_each(|x| *x *= factor),
                TensorGrad::Rows { rows, .. } => rows
                    .values_mut()
                    .flat_map(|r| r.iter_mut())
                    .for_each(|x| *x *= factor),
            }
        }
    }

    /// Adds `other` into `self`. Shapes must agree.
    pub fn merge(&mut self, other: &GradSet) {
        for (mine, theirs) in self.tensors.iter_mut().zip(&other.tensors) {
            match (mine, theirs) {
                (TensorGrad::Dense(a), TensorGrad::Dense(b)) => {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                }
                (TensorGrad::Rows { width, rows: a }, TensorGrad::Rows { rows: b, .. }) => {
                    for (id, row) in b {
                        let dst = a.entry(*id).or_insert_with(|| vec![0.0; *width]);
                        dst.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                }
                _ => panic!("incompatible gradient sets"),
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| match t {
            TensorGrad::Dense(d) => d.iter().all(|x| x.is_finite()),
            TensorGrad::Rows { rows, .. } => rows.values().flatten().all(|x| x.is_finite()),
        })
    }
}

/// Scores every candidate for one corrupted side of a query triple.
pub trait CandidateScorer: Sync {
    fn side(&self) -> Side;

    /// Score of `triple` with its corrupted side replaced by `candidate`.
    fn score_candidate(&self, triple: &Triple, candidate: usize) -> f64;

    fn score_row(&self, triple: &Triple, candidates: &[usize], out: &mut [f64]) {
        for (slot, &c) in out.iter_mut().zip(candidates) {
            *slot = self.score_candidate(triple, c);
        }
    }

    fn score_all(&self, triple: &Triple, out: &mut [f64]) {
        for (c, slot) in out.iter_mut().enumerate() {
            *slot = self.score_candidate(triple, c);
        }
    }
}

pub trait KgeModel: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn num_entities(&self) -> usize;
    fn num_relations(&self) -> usize;

    fn score(&self, triple: &Triple) -> f64;

    fn score_many(&self, triples: &[Triple]) -> Vec<f64> {
        triples.iter().map(|t| self.score(t)).collect()
    }

    fn candidate_scorer(&self, side: Side) -> Box<dyn CandidateScorer + '_>;

    /// The score in double-double precision. Finite differences of this
    /// resolve score changes far below one ulp of the `f64` score.
    fn score_extended(&self, triple: &Triple) -> TwoFloat {
        TwoFloat::from(self.score(triple))
    }

    /// Adds `sum_i coefs[i] * d score(triples[i]) / d theta` into `grads`.
    fn accumulate_gradients(&self, triples: &[Triple], coefs: &[f64], grads: &mut GradSet);

    fn tensor_specs(&self) -> Vec<TensorSpec>;
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    /// Current distance/semantic blend weight, for models that have one.
    fn blend_alpha(&self) -> Option<f64> {
        None
    }

    /// Re-establishes parameter invariants after an optimizer update.
    fn normalize(&mut self) {}
}

/// `|triples| x |candidates|` score matrix with side `side` of each triple
/// replaced by each candidate.
pub fn score_batch<M: KgeModel + ?Sized>(
    model: &M,
    triples: &[Triple],
    candidates: &[usize],
    side: Side,
) -> Vec<Vec<f64>> {
    let scorer = model.candidate_scorer(side);
    triples
        .iter()
        .map(|t| {
            let mut row = vec![0.0; candidates.len()];
            scorer.score_row(t, candidates, &mut row);
            row
        })
        .collect()
}

/// Adds uniform noise in `±scale` to every parameter coordinate.
pub fn jitter_parameters<M: KgeModel + ?Sized, R: rand::Rng + ?Sized>(model: &mut M, rng: &mut R, scale: f64) {
    for tensor in model.tensors_mut() {
        for x in tensor.iter_mut() {
            *x += rng.gen_range(-scale..scale);
        }
    }
}

/// Any trainable model the toolkit ships.
#[derive(Debug, Clone)]
pub enum Model {
    Hie(HieModel),
    Baseline(BaselineModel),
}

impl Model {
    /// Freshly initialized parameters. Baselines take `dim` and `norm` from
    /// `config`.
    pub fn init(
        kind: ModelKind,
        num_entities: usize,
        num_relations: usize,
        config: &HieConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        Ok(match kind {
            ModelKind::Hie => Model::Hie(HieModel::init(num_entities, num_relations, config.clone(), seed)?),
            other => {
                let bk = BaselineKind::try_from(other)?;
                Model::Baseline(BaselineModel::init(
                    bk,
                    num_entities,
                    num_relations,
                    config.dim,
                    config.norm,
                    seed,
                )?)
            }
        })
    }

    pub fn as_dyn(&self) -> &dyn KgeModel {
        match self {
            Model::Hie(m) => m,
            Model::Baseline(m) => m,
        }
    }

    pub fn as_dyn_mut(&mut self) -> &mut dyn KgeModel {
        match self {
            Model::Hie(m) => m,
            Model::Baseline(m) => m,
        }
    }

    /// Copies `data` into the model tensors after checking shapes.
    pub fn load_tensors(&mut self, data: &[(Vec<usize>, Vec<f64>)]) -> Result<()> {
        let specs = self.tensor_specs();
        if specs.len() != data.len() {
            return Err(Error::DimMismatch(format!(
                "model expects {} tensors, checkpoint has {}",
                specs.len(),
                data.len()
            )));
        }
        for (spec, (shape, _)) in specs.iter().zip(data) {
            if &spec.shape != shape {
                return Err(Error::DimMismatch(format!(
                    "tensor {} expects shape {:?}, checkpoint has {:?}",
                    spec.name, spec.shape, shape
                )));
            }
        }
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(data) {
            dst.copy_from_slice(src);
        }
        Ok(())
    }
}

impl KgeModel for Model {
    fn kind(&self) -> ModelKind {
        self.as_dyn().kind()
    }
    fn num_entities(&self) -> usize {
        self.as_dyn().num_entities()
    }
    fn num_relations(&self) -> usize {
        self.as_dyn().num_relations()
    }
    fn score(&self, triple: &Triple) -> f64 {
        self.as_dyn().score(triple)
    }
    fn score_many(&self, triples: &[Triple]) -> Vec<f64> {
        self.as_dyn().score_many(triples)
    }
    fn candidate_scorer(&self, side: Side) -> Box<dyn CandidateScorer + '_> {
        self.as_dyn().candidate_scorer(side)
    }
    fn score_extended(&self, triple: &Triple) -> TwoFloat {
        self.as_dyn().score_extended(triple)
    }
    fn accumulate_gradients(&self, triples: &[Triple], coefs: &[f64], grads: &mut GradSet) {
        self.as_dyn().accumulate_gradients(triples, coefs, grads)
    }
    fn tensor_specs(&self) -> Vec<TensorSpec> {
        self.as_dyn().tensor_specs()
    }
    fn tensors(&self) -> Vec<&[f64]> {
        self.as_dyn().tensors()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.as_dyn_mut().tensors_mut()
    }
    fn blend_alpha(&self) -> Option<f64> {
        self.as_dyn().blend_alpha()
    }
    fn normalize(&mut self) {
        self.as_dyn_mut().normalize()
    }
}
