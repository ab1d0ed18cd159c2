use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{EvalOptions, TieBreak};
use crate::hie::{level_weights, Ablation, HieConfig, Norm, TransformKind};
use crate::kg_data::Split;
use crate::model::ModelKind;
use crate::trainer::{AdversarialSign, TrainConfig};

/// Everything a command needs. JSON keys match the command-line flag names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub model: ModelKind,
    pub dim: usize,
    pub levels: usize,
    /// First-level weight; the rest is spread evenly. `None` spreads all
    /// levels evenly.
    pub lambda1: Option<f64>,
    pub gamma: f64,
    pub alpha_temp: f64,
    pub negatives: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub norm: Norm,
    pub transform: TransformKind,
    pub seed: u64,
    pub out: PathBuf,
    pub no_distance: bool,
    pub no_semantic: bool,
    pub no_distance_deep: bool,
    pub no_semantic_deep: bool,
    pub tie_break: TieBreak,
    pub adversarial_sign: AdversarialSign,
    pub eta: f64,
    pub split: Split,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub log_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            data_dir: None,
            model: ModelKind::Hie,
            dim: 200,
            levels: 2,
            lambda1: None,
            gamma: train.gamma,
            alpha_temp: train.alpha_temp,
            negatives: train.num_negatives,
            batch_size: train.batch_size,
            steps: train.steps,
            lr: train.learning_rate,
            norm: Norm::L1,
            transform: TransformKind::Diagonal,
            seed: 0,
            out: PathBuf::from("runs/default"),
            no_distance: false,
            no_semantic: false,
            no_distance_deep: false,
            no_semantic_deep: false,
            tie_break: TieBreak::Pessimistic,
            adversarial_sign: AdversarialSign::Plausibility,
            eta: 1.5,
            split: Split::Test,
            adam_beta1: train.adam_beta1,
            adam_beta2: train.adam_beta2,
            adam_eps: train.adam_eps,
            lr_decay_every: 0,
            lr_decay_factor: train.lr_decay_factor,
            log_every: train.log_every,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))
    }

    pub fn hie_config(&self) -> HieConfig {
        HieConfig {
            dim: self.dim,
            levels: self.levels,
            norm: self.norm,
            lambda: level_weights(self.levels, self.lambda1),
            transform: self.transform,
            ablation: Ablation {
                disable_distance: self.no_distance,
                disable_semantic: self.no_semantic,
                disable_distance_deep: self.no_distance_deep,
                disable_semantic_deep: self.no_semantic_deep,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            gamma: self.gamma,
            alpha_temp: self.alpha_temp,
            num_negatives: self.negatives,
            learning_rate: self.lr,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            steps: self.steps,
            batch_size: self.batch_size,
            seed: self.seed,
            adversarial_sign: self.adversarial_sign,
            lr_decay_every: self.lr_decay_every,
            lr_decay_factor: self.lr_decay_factor,
            log_every: self.log_every,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            filtered: true,
            tie_break: self.tie_break,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(l1) = self.lambda1 {
            if !(0.0..=1.0).contains(&l1) {
                return Err(Error::config("lambda1", "must lie in [0, 1]"));
            }
        }
        if !(self.eta > 0.0) {
            return Err(Error::config("eta", "must be > 0"));
        }
        self.hie_config().validate()?;
        self.train_config().validate()
    }

    pub fn require_data_dir(&self) -> Result<&Path> {
        let dir = self
            .data_dir
            .as_deref()
            .ok_or_else(|| Error::config("data-dir", "a dataset directory is required"))?;
        if !dir.is_dir() {
            return Err(Error::config("data-dir", format!("{} is not a directory", dir.display())));
        }
        Ok(dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_keys_match_flag_names() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"alpha-temp": 0.5, "batch-size": 256, "model": "transe", "norm": "l2"}"#)
                .unwrap();
        assert_eq!(cfg.alpha_temp, 0.5);
        assert_eq!(cfg.batch_size, 256);
        assert_eq!(cfg.model, ModelKind::TransE);
        assert_eq!(cfg.norm, Norm::L2);
        assert_eq!(cfg.levels, 2);
        assert!(serde_json::from_str::<RunConfig>(r#"{"alpha_temp": 0.5}"#).is_err());
    }

    #[test]
    fn defaults_are_two_even_levels() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.hie_config().lambda, vec![0.5, 0.5]);
        cfg.validate().unwrap();
    }

    #[test]
    fn invalid_field_is_named() {
        let cfg = RunConfig { dim: 7, ..RunConfig::default() };
        match cfg.validate().unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "dim"),
            other => panic!("{other:?}"),
        }
    }
}
