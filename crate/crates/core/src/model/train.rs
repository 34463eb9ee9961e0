use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backward::gradients;
use super::checkpoint::{Checkpoint, TrainingMetadata};
use super::forward::{forward, Mode};
use super::{ModelConfig, ModelError, Parameters};
use crate::data::{encode_dataset, Dataset, EncodedExample, Vocabulary};
use crate::derive_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            batch_size: 16,
            epochs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Parameters,
    v: Parameters,
}

impl Adam {
    fn new(params: &Parameters, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    fn update(&mut self, params: &mut Parameters, grads: &Parameters) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads.tensors());
        for (((p, m), v), g) in tensors {
            for (((pv, mv), vv), gv) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                *pv -= self.lr * (*mv / c1) / ((*vv / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Argmax class, lowest index on ties.
pub fn predict(params: &Parameters, token_ids: &[usize]) -> Result<usize, ModelError> {
    Ok(forward(params, token_ids, Mode::Eval)?.predicted_class())
}

/// Fraction of examples classified correctly (eval mode). Counts are
/// integers, so the result does not depend on evaluation order.
pub fn accuracy(params: &Parameters, examples: &[EncodedExample]) -> Result<f64, ModelError> {
    if examples.is_empty() {
        return Err(ModelError::EmptyDataset { which: "evaluation" });
    }
    let correct = examples
        .par_iter()
        .map(|ex| predict(params, &ex.ids).map(|c| usize::from(c == ex.label)))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / examples.len() as f64)
}

/// Cross-entropy loss and its cotangent on the logits.
fn cross_entropy(probs: &Tensor, label: usize) -> (f64, Tensor) {
    let loss = -probs.data()[label].max(f64::MIN_POSITIVE).ln();
    let mut d = probs.clone();
    d.data_mut()[label] -= 1.0;
    (loss, d)
}

/// Trains with Adam on cross-entropy and returns the checkpoint of the epoch
/// with the best dev accuracy (epoch 0 is the initialization; the latest
/// epoch wins on ties). Deterministic given `config.seed`.
pub fn fit(
    config: &ModelConfig,
    vocab: &Vocabulary,
    train: &Dataset,
    dev: &Dataset,
    hyper: &Hyper,
) -> Result<Checkpoint, ModelError> {
    config.validate()?;
    if vocab.len() != config.vocab_size {
        return Err(ModelError::VocabMismatch {
            vocab: vocab.len(),
            config: config.vocab_size,
        });
    }
    if hyper.batch_size == 0 || !(hyper.lr > 0.0) {
        return Err(ModelError::InvalidConfig("batch_size and lr must be positive".into()));
    }
    if train.is_empty() {
        return Err(ModelError::EmptyDataset { which: "train" });
    }
    if dev.is_empty() {
        return Err(ModelError::EmptyDataset { which: "dev" });
    }
    train.check_labels(config.n_classes)?;
    dev.check_labels(config.n_classes)?;

    let train_set = encode_dataset(vocab, train, config.max_seq_len);
    let dev_set = encode_dataset(vocab, dev, config.max_seq_len);

    let mut params = Parameters::init(config)?;
    let mut best = (0, accuracy(&params, &dev_set)?, params.clone());
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut adam = Adam::new(&params, hyper.lr);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x5348_5546, 0));
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let per_example = batch
                .par_iter()
                .map(|&i| {
                    let ex = &train_set[i];
                    let mode = Mode::Train {
                        dropout_seed: derive_seed(config.seed, epoch as u64, i as u64),
                    };
                    let trace = forward(&params, &ex.ids, mode)?;
                    let (loss, d_logits) = cross_entropy(&trace.probs, ex.label);
                    Ok((loss, gradients(&params, &trace, &d_logits)?.params))
                })
                .collect::<Result<Vec<_>, ModelError>>()?;
            let mut total = params.zeros_like();
            let inv = 1.0 / batch.len() as f64;
            for (loss, g) in &per_example {
                loss_sum += loss;
                for (acc, gt) in total.tensors_mut().into_iter().zip(g.tensors()) {
                    for (a, v) in acc.data_mut().iter_mut().zip(gt.data()) {
                        *a += v * inv;
                    }
                }
            }
            adam.update(&mut params, &total);
        }
        let dev_accuracy = accuracy(&params, &dev_set)?;
        history.push(EpochLog {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            dev_accuracy,
        });
        if dev_accuracy >= best.1 {
            best = (epoch, dev_accuracy, params.clone());
        }
    }

    let (best_epoch, dev_accuracy, params) = best;
    Ok(Checkpoint::new(
        params,
        vocab.clone(),
        TrainingMetadata {
            epochs: hyper.epochs,
            best_epoch,
            dev_accuracy,
            hyper: hyper.clone(),
            history,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::forward::argmax;
    use crate::data::{CueCorpus, CueCorpusSpec};

    fn setup(n: usize, seed: u64) -> (ModelConfig, Vocabulary, Dataset, Dataset) {
        let train = CueCorpus::generate("train", CueCorpusSpec { n_examples: n, seed, ..Default::default() });
        let dev = CueCorpus::generate("dev", CueCorpusSpec { n_examples: 100, seed: seed + 1, ..Default::default() });
        let vocab = Vocabulary::build(&train, 1);
        let config = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 16,
            d_ff: 32,
            vocab_size: vocab.len(),
            max_seq_len: 16,
            ..Default::default()
        };
        (config, vocab, train, dev)
    }

    #[test]
    fn cross_entropy_gradient() {
        let (loss, d) = cross_entropy(&Tensor::vector(vec![0.25, 0.75]), 1);
        assert!((loss + 0.75f64.ln()).abs() < 1e-15);
        assert_eq!(d.data(), &[0.25, -0.25]);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (config, vocab, train, dev) = setup(50, 1);
        let ckpt = fit(&config, &vocab, &train, &dev, &Hyper { epochs: 0, ..Default::default() }).unwrap();
        assert_eq!(ckpt.params, Parameters::init(&config).unwrap());
        assert_eq!(ckpt.metadata.best_epoch, 0);
        let zeros = dev.examples.iter().filter(|e| e.label == 0).count() as f64 / dev.len() as f64;
        assert_eq!(ckpt.metadata.dev_accuracy, zeros);
        assert!((ckpt.metadata.dev_accuracy - 0.5).abs() < 0.15);
    }

    #[test]
    fn fit_is_deterministic_and_learns() {
        let (config, vocab, train, dev) = setup(300, 2);
        let hyper = Hyper { epochs: 8, lr: 3e-3, ..Default::default() };
        let a = fit(&config, &vocab, &train, &dev, &hyper).unwrap();
        let b = fit(&config, &vocab, &train, &dev, &hyper).unwrap();
        assert_eq!(a.metadata, b.metadata);
        assert_eq!(a.params, b.params);
        assert!(a.metadata.history.last().unwrap().train_loss < a.metadata.history[0].train_loss);
        assert!(a.metadata.dev_accuracy > 0.9, "{:?}", a.metadata.history);
    }

    #[test]
    fn fit_input_errors() {
        let (config, vocab, train, dev) = setup(20, 3);
        let empty = Dataset::new("empty");
        let h = Hyper::default();
        assert!(matches!(fit(&config, &vocab, &empty, &dev, &h), Err(ModelError::EmptyDataset { which: "train" })));
        assert!(matches!(fit(&config, &vocab, &train, &empty, &h), Err(ModelError::EmptyDataset { which: "dev" })));
        let bad = Dataset::from_pairs("bad", [(5, "the movie")]);
        assert!(matches!(fit(&config, &vocab, &bad, &dev, &h), Err(ModelError::Data(_))));
        let wrong = ModelConfig { vocab_size: 3, ..config };
        assert!(matches!(fit(&wrong, &vocab, &train, &dev, &h), Err(ModelError::VocabMismatch { .. })));
    }

    #[test]
    fn predict_ties_go_to_lowest_class() {
        let (config, ..) = setup(10, 4);
        let p = Parameters::init(&config).unwrap();
        assert_eq!(predict(&p, &[2, 3, 4]).unwrap(), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
