//! Knowledge graph embeddings with joint distance/semantic scoring over
//! hierarchical levels (HIE), trained with self-adversarial negative
//! sampling and evaluated by filtered link prediction.
//!
//! - [`kg_data`]: triple files, vocabularies, filter index, relation classes
//! - [`hie`]: the HIE scoring model and its parameters
//! - [`baselines`]: TransE, DistMult and RotatE
//! - [`trainer`]: negatives, loss, analytic gradients, gradient checking, Adam
//! - [`evaluator`]: filtered ranks and MR / MRR / Hits@k
//! - [`cli`]: configs, checkpoints and the command implementations

pub mod baselines;
pub mod cli;
pub mod error;
pub mod evaluator;
pub mod hie;
pub mod kg_data;
pub mod model;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use evaluator::{EvalOptions, MetricBundle, MetricsReport, RankResult, TieBreak};
pub use hie::{HieConfig, HieModel, HieParams, Norm, ScoreBreakdown, TransformKind};
pub use kg_data::{KnowledgeGraph, Side, Split, Triple};
pub use model::{GradSet, KgeModel, Model, ModelKind};
pub use trainer::{TrainConfig, TrainOutcome};
