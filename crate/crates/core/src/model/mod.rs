//! Small post-LayerNorm transformer encoder with a linear classification head
//! reading the final `[CLS]` vector.
//!
//! The forward pass records a [`ForwardTrace`] holding every intermediate
//! the attribution passes need. Backward is written out layer by layer from
//! the primitive vector-Jacobian products in [`crate::tensor`].

mod backward;
mod checkpoint;
pub(crate) mod forward;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::tensor::{Tensor, TensorError};

pub use backward::{gradients, input_gradient, input_gradient_with_faulty_gelu, Gradients};
pub use checkpoint::{Checkpoint, CheckpointError, TrainingMetadata, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{forward, forward_from_embedding, DropoutMasks, ForwardTrace, LayerTrace, Mode};
pub use train::{accuracy, fit, predict, EpochLog, Hyper};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("empty token sequence")]
    EmptySequence,
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} at position {position} is outside the vocabulary of size {vocab_size}")]
    TokenOutOfRange {
        position: usize,
        id: usize,
        vocab_size: usize,
    },
    #[error("class {class} is outside [0, {n_classes})")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("trace was produced by different parameters (fingerprint {found:016x}, expected {expected:016x})")]
    StaleTrace { expected: u64, found: u64 },
    #[error("attribution requires an eval-mode trace")]
    TrainModeTrace,
    #[error("{which} dataset is empty")]
    EmptyDataset { which: &'static str },
    #[error("vocabulary has {vocab} entries but config.vocab_size is {config}")]
    VocabMismatch { vocab: usize, config: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub n_classes: usize,
    pub dropout_prob: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            vocab_size: 128,
            max_seq_len: 64,
            n_classes: 2,
            dropout_prob: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        for (name, v) in [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.max_seq_len < 2 {
            return bad("max_seq_len must be at least 2".into());
        }
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.d_model < 2 {
            return bad("d_model must be at least 2 for LayerNorm".into());
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return bad(format!("dropout_prob {} is outside [0, 1)", self.dropout_prob));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Which scalar of the classifier output an attribution explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    #[default]
    Logit,
    Probability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputSelector {
    pub class: usize,
    pub target: Target,
}

impl OutputSelector {
    pub fn logit(class: usize) -> Self {
        Self {
            class,
            target: Target::Logit,
        }
    }

    pub fn probability(class: usize) -> Self {
        Self {
            class,
            target: Target::Probability,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
}

const LAYER_TENSOR_NAMES: [&str; 16] = [
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_gamma", "ln1_beta", "w1", "b1", "w2", "b2", "ln2_gamma",
    "ln2_beta",
];

impl LayerParams {
    fn tensors(&self) -> [&Tensor; 16] {
        [
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.ln2_gamma,
            &self.ln2_beta,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
        ]
    }

    fn shapes(c: &ModelConfig) -> [Vec<usize>; 16] {
        let (d, f) = (c.d_model, c.d_ff);
        [
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d],
            vec![d],
            vec![d, f],
            vec![f],
            vec![f, d],
            vec![d],
            vec![d],
            vec![d],
        ]
    }
}

/// All learned weights. Also reused as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub config: ModelConfig,
    pub token_embedding: Tensor,
    pub position_embedding: Tensor,
    pub layers: Vec<LayerParams>,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

impl Parameters {
    /// Deterministic initialization from `config.seed`: weight matrices and
    /// embeddings are standard normal scaled by `1/sqrt(d_model)`, biases and
    /// LayerNorm offsets zero, LayerNorm gains one, classifier head zero.
    pub fn init(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scale = 1.0 / (config.d_model as f64).sqrt();
        let mut normal = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
                .collect();
            Tensor::new(shape.to_vec(), data).expect("shape from validated config")
        };
        let (d, f) = (config.d_model, config.d_ff);
        let token_embedding = normal(&[config.vocab_size, d]);
        let position_embedding = normal(&[config.max_seq_len, d]);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                wq: normal(&[d, d]),
                bq: Tensor::zeros(&[d]),
                wk: normal(&[d, d]),
                bk: Tensor::zeros(&[d]),
                wv: normal(&[d, d]),
                bv: Tensor::zeros(&[d]),
                wo: normal(&[d, d]),
                bo: Tensor::zeros(&[d]),
                ln1_gamma: Tensor::vector(vec![1.0; d]),
                ln1_beta: Tensor::zeros(&[d]),
                w1: normal(&[d, f]),
                b1: Tensor::zeros(&[f]),
                w2: normal(&[f, d]),
                b2: Tensor::zeros(&[d]),
                ln2_gamma: Tensor::vector(vec![1.0; d]),
                ln2_beta: Tensor::zeros(&[d]),
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            token_embedding,
            position_embedding,
            layers,
            head_weight: Tensor::zeros(&[d, config.n_classes]),
            head_bias: Tensor::zeros(&[config.n_classes]),
        })
    }

    /// Same structure, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        z
    }

    /// Tensors in canonical (checkpoint) order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.token_embedding, &self.position_embedding];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    /// Canonical tensor names and shapes implied by `config`.
    pub fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let d = config.d_model;
        let mut out = vec![
            ("token_embedding".to_string(), vec![config.vocab_size, d]),
            ("position_embedding".to_string(), vec![config.max_seq_len, d]),
        ];
        for i in 0..config.n_layers {
            for (name, shape) in LAYER_TENSOR_NAMES.iter().zip(LayerParams::shapes(config)) {
                out.push((format!("layers.{i}.{name}"), shape));
            }
        }
        out.push(("head_weight".to_string(), vec![d, config.n_classes]));
        out.push(("head_bias".to_string(), vec![config.n_classes]));
        out
    }

    /// Rebuilds parameters from tensors in canonical order.
    pub(crate) fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor>) -> Self {
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("tensor count matches layout");
        let token_embedding = next();
        let position_embedding = next();
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                wq: next(),
                bq: next(),
                wk: next(),
                bk: next(),
                wv: next(),
                bv: next(),
                wo: next(),
                bo: next(),
                ln1_gamma: next(),
                ln1_beta: next(),
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
                ln2_gamma: next(),
                ln2_beta: next(),
            })
            .collect();
        let head_weight = next();
        let head_bias = next();
        Self {
            config: config.clone(),
            token_embedding,
            position_embedding,
            layers,
            head_weight,
            head_bias,
        }
    }

    /// FNV-1a over every parameter's bit pattern, in canonical order.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for v in t.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn n_classes(&self) -> usize {
        self.head_bias.len()
    }

    /// Adds seeded Gaussian noise of standard deviation `scale` to every
    /// parameter, head included. Used to get generic (non-zero-head) models
    /// for gradient and conservation checks.
    pub fn perturbed(&self, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for t in out.tensors_mut() {
            for v in t.data_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += scale * z;
            }
        }
        out
    }
}

/// `Parameters::init` under its operation name.
pub fn init(config: &ModelConfig) -> Result<Parameters, ModelError> {
    Parameters::init(config)
}
