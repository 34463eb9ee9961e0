use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::EvaluationError;
use crate::attribution::{attribute_ids, AttributionConfig};
use crate::data::EncodedExample;
use crate::derive_seed;
use crate::model::{predict, Parameters};

pub const DEFAULT_RANDOM_REPEATS: usize = 10;

/// Accuracy on the initially correct subset after deleting the `k`
/// highest-ranked words, for `k = 0..=k_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationCurve {
    /// Method tag (`gs`, `gi`, `lrp`, `lat` or `random`).
    pub method: String,
    pub accuracy: Vec<f64>,
    /// Size of the initially correct subset.
    pub subset: usize,
    pub random: bool,
    /// Number of random orders averaged; 1 for guided curves.
    pub repeats: usize,
}

impl AblationCurve {
    pub fn k_max(&self) -> usize {
        self.accuracy.len() - 1
    }

    /// Mean accuracy over `k = lo..=hi`.
    pub fn mean_over(&self, lo: usize, hi: usize) -> f64 {
        let s = &self.accuracy[lo..=hi];
        s.iter().sum::<f64>() / s.len() as f64
    }

    /// `method,k,accuracy,n` rows, without header.
    pub fn csv_rows(&self) -> String {
        self.accuracy
            .iter()
            .enumerate()
            .map(|(k, a)| format!("{},{},{},{}\n", self.method, k, a, self.subset))
            .collect()
    }
}

/// Removes the tokens at `positions` (never position 0).
fn delete_positions(ids: &[usize], positions: &[usize]) -> Vec<usize> {
    ids.iter()
        .enumerate()
        .filter(|(t, _)| *t == 0 || !positions.contains(t))
        .map(|(_, &id)| id)
        .collect()
}

/// Correct-after-deletion indicator for `k = 0..=k_max` given a deletion order.
fn survival(params: &Parameters, ex: &EncodedExample, order: &[usize], k_max: usize) -> Result<Vec<usize>, EvaluationError> {
    (0..=k_max)
        .map(|k| {
            let ids = delete_positions(&ex.ids, &order[..k.min(order.len())]);
            Ok(usize::from(predict(params, &ids)? == ex.label))
        })
        .collect()
}

fn correct_subset<'a>(params: &Parameters, data: &'a [EncodedExample]) -> Result<Vec<(usize, &'a EncodedExample)>, EvaluationError> {
    let flags = data
        .par_iter()
        .map(|ex| predict(params, &ex.ids).map(|c| c == ex.label))
        .collect::<Result<Vec<_>, _>>()?;
    let subset: Vec<_> = data.iter().enumerate().filter(|(i, _)| flags[*i]).collect();
    if subset.is_empty() {
        return Err(EvaluationError::EmptySubset);
    }
    Ok(subset)
}

fn sum_counts(rows: Vec<Vec<usize>>, k_max: usize) -> Vec<usize> {
    let mut total = vec![0usize; k_max + 1];
    for row in rows {
        for (t, v) in total.iter_mut().zip(row) {
            *t += v;
        }
    }
    total
}

/// Guided deletion: each sentence's words are removed in descending order of
/// per-token relevance (`[CLS]` is never removed; equal scores keep the
/// earlier position first). Deletion shortens the sequence.
pub fn deletion_curve(
    params: &Parameters,
    data: &[EncodedExample],
    cfg: &AttributionConfig,
    k_max: usize,
) -> Result<AblationCurve, EvaluationError> {
    let subset = correct_subset(params, data)?;
    let rows = subset
        .par_iter()
        .map(|(_, ex)| {
            let map = attribute_ids(params, &ex.ids, cfg)?;
            let mut order: Vec<usize> = (1..ex.ids.len()).collect();
            order.sort_by(|&a, &b| map.scores[b].total_cmp(&map.scores[a]).then(a.cmp(&b)));
            survival(params, ex, &order, k_max)
        })
        .collect::<Result<Vec<_>, EvaluationError>>()?;
    let n = subset.len();
    Ok(AblationCurve {
        method: cfg.method.to_string(),
        accuracy: sum_counts(rows, k_max).into_iter().map(|c| c as f64 / n as f64).collect(),
        subset: n,
        random: false,
        repeats: 1,
    })
}

/// Random-order baseline averaged over `repeats` orders per sentence. The
/// order for sentence `i` in repeat `r` depends only on `(seed, r, i)`.
pub fn random_deletion_curve(
    params: &Parameters,
    data: &[EncodedExample],
    k_max: usize,
    repeats: usize,
    seed: u64,
) -> Result<AblationCurve, EvaluationError> {
    if repeats == 0 {
        return Err(EvaluationError::InvalidArgument("repeats must be at least 1".into()));
    }
    let subset = correct_subset(params, data)?;
    let jobs: Vec<(usize, usize, &EncodedExample)> = (0..repeats)
        .flat_map(|r| subset.iter().map(move |&(i, ex)| (r, i, ex)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(r, i, ex)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64, i as u64));
            let mut order: Vec<usize> = (1..ex.ids.len()).collect();
            order.shuffle(&mut rng);
            survival(params, ex, &order, k_max)
        })
        .collect::<Result<Vec<_>, EvaluationError>>()?;
    let denom = (subset.len() * repeats) as f64;
    Ok(AblationCurve {
        method: "random".into(),
        accuracy: sum_counts(rows, k_max).into_iter().map(|c| c as f64 / denom).collect(),
        subset: subset.len(),
        random: true,
        repeats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::Method;
    use crate::data::{encode_dataset, CueCorpus, CueCorpusSpec, Vocabulary};
    use crate::model::{fit, init, Hyper, ModelConfig};

    fn tiny() -> Parameters {
        let c = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            vocab_size: 20,
            max_seq_len: 12,
            ..Default::default()
        };
        init(&c).unwrap().perturbed(9, 0.5)
    }

    fn labelled_by_model(p: &Parameters, sentences: &[Vec<usize>]) -> Vec<EncodedExample> {
        sentences
            .iter()
            .map(|ids| EncodedExample {
                ids: ids.clone(),
                label: predict(p, ids).unwrap(),
            })
            .collect()
    }

    #[test]
    fn deletion_keeps_cls_and_shortens() {
        assert_eq!(delete_positions(&[2, 5, 6, 7], &[2, 0]), vec![2, 5, 7]);
        assert_eq!(delete_positions(&[2, 5], &[1]), vec![2]);
    }

    #[test]
    fn curves_start_at_one_and_stay_in_range() {
        let p = tiny();
        let data = labelled_by_model(&p, &[vec![2, 3, 4, 5], vec![2, 7], vec![2, 9, 10, 11, 12, 13]]);
        for method in Method::ALL {
            let c = deletion_curve(&p, &data, &AttributionConfig::new(method), 7).unwrap();
            assert_eq!(c.accuracy.len(), 8);
            assert_eq!(c.accuracy[0], 1.0);
            assert!(c.accuracy.iter().all(|a| (0.0..=1.0).contains(a)));
            assert_eq!(c.subset, 3);
        }
        let r = random_deletion_curve(&p, &data, 7, 4, 1).unwrap();
        assert_eq!(r.accuracy[0], 1.0);
        assert_eq!(r, random_deletion_curve(&p, &data, 7, 4, 1).unwrap());
    }

    #[test]
    fn single_word_sentence_reduces_to_cls() {
        let p = tiny();
        let data = labelled_by_model(&p, &[vec![2, 3]]);
        let c = deletion_curve(&p, &data, &AttributionConfig::new(Method::Gi), 3).unwrap();
        let cls_only = usize::from(predict(&p, &[2]).unwrap() == data[0].label) as f64;
        assert_eq!(c.accuracy[1..], [cls_only; 3]);
    }

    #[test]
    fn invariant_to_sentence_order() {
        let p = tiny();
        let mut data = labelled_by_model(&p, &[vec![2, 3, 4, 5], vec![2, 7, 8], vec![2, 9, 10, 11, 12]]);
        data[1].label = 1 - data[1].label;
        let cfg = AttributionConfig::new(Method::Gs);
        let a = deletion_curve(&p, &data, &cfg, 4).unwrap();
        data.reverse();
        assert_eq!(a, deletion_curve(&p, &data, &cfg, 4).unwrap());
        assert_eq!(a.subset, 2);
    }

    #[test]
    fn empty_subset_and_bad_repeats() {
        let p = tiny();
        let mut data = labelled_by_model(&p, &[vec![2, 3, 4]]);
        data[0].label = 1 - data[0].label;
        assert!(matches!(
            deletion_curve(&p, &data, &AttributionConfig::new(Method::Gs), 2),
            Err(EvaluationError::EmptySubset)
        ));
        assert!(matches!(random_deletion_curve(&p, &data, 2, 0, 0), Err(EvaluationError::InvalidArgument(_))));
    }

    #[test]
    fn csv_rows_format() {
        let c = AblationCurve {
            method: "gi".into(),
            accuracy: vec![1.0, 0.5],
            subset: 4,
            random: false,
            repeats: 1,
        };
        assert_eq!(c.csv_rows(), "gi,0,1,4\ngi,1,0.5,4\n");
    }

    #[test]
    fn removing_the_cue_hurts_a_cue_model() {
        let train = CueCorpus::generate("train", CueCorpusSpec { n_examples: 300, seed: 11, ..Default::default() });
        let dev = CueCorpus::generate("dev", CueCorpusSpec { n_examples: 100, seed: 12, ..Default::default() });
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
        let ckpt = fit(&config, &vocab, &train, &dev, &Hyper { epochs: 8, lr: 3e-3, ..Default::default() }).unwrap();
        let data = encode_dataset(&vocab, &dev, 16);
        let c = deletion_curve(&ckpt.params, &data, &AttributionConfig::new(Method::Gi), 1).unwrap();
        assert!(c.accuracy[1] < 1.0, "{c:?}");
    }
}
