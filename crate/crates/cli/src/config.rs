use std::path::Path;

use attrib_core::model::{Hyper, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// Flat JSON run configuration: model shape plus training settings.
/// `vocab_size` is taken from the vocabulary built on the training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub n_classes: usize,
    pub dropout_prob: f64,
    pub seed: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub min_freq: usize,
    /// Vocabulary size used by commands that do not build a vocabulary
    /// (gradcheck).
    pub vocab_size: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let h = Hyper::default();
        Self {
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            d_model: m.d_model,
            d_ff: m.d_ff,
            max_seq_len: m.max_seq_len,
            n_classes: m.n_classes,
            dropout_prob: m.dropout_prob,
            seed: m.seed,
            lr: h.lr,
            batch_size: h.batch_size,
            epochs: h.epochs,
            min_freq: 1,
            vocab_size: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        if cfg.min_freq == 0 {
            return Err(Failure::input("min_freq must be at least 1"));
        }
        Ok(cfg)
    }

    pub fn model(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            vocab_size,
            max_seq_len: self.max_seq_len,
            n_classes: self.n_classes,
            dropout_prob: self.dropout_prob,
            seed: self.seed,
        }
    }

    pub fn hyper(&self) -> Hyper {
        Hyper {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
        }
    }
}
