use std::collections::BTreeSet;

use serde::Serialize;

use super::{pearson, word_table, EvaluationError, WordRelevanceTable};
use crate::attribution::{attribute_dataset, AttributionConfig, Method};
use crate::data::{encode_dataset, Dataset, Vocabulary};
use crate::model::{fit, Hyper, ModelConfig, Parameters};

/// Pairwise Pearson correlations of word-level mean relevance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub method: Method,
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
    /// Number of words each correlation was computed over.
    pub shared: Vec<Vec<usize>>,
}

impl CorrelationReport {
    /// `method,row,col,r,shared` rows, without header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for (i, row) in self.matrix.iter().enumerate() {
            for (j, r) in row.iter().enumerate() {
                out.push_str(&format!("{},{},{},{},{}\n", self.method, self.labels[i], self.labels[j], r, self.shared[i][j]));
            }
        }
        out
    }
}

/// Which words enter each correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommonVocab {
    /// Words present in both tables of the pair.
    Pairwise,
    /// Words present in every table.
    Global,
}

/// Correlation matrix over word tables. The diagonal is exactly 1.
pub fn correlate_tables(
    method: Method,
    labels: &[String],
    tables: &[WordRelevanceTable],
    common: CommonVocab,
) -> Result<CorrelationReport, EvaluationError> {
    let n = tables.len();
    if n < 2 || labels.len() != n {
        return Err(EvaluationError::InvalidArgument(format!(
            "need at least two labelled tables (got {n} tables, {} labels)",
            labels.len()
        )));
    }
    let global: BTreeSet<&str> = tables[0]
        .words
        .keys()
        .map(String::as_str)
        .filter(|w| tables.iter().all(|t| t.words.contains_key(*w)))
        .collect();
    if common == CommonVocab::Global && global.len() < 2 {
        return Err(EvaluationError::InsufficientOverlap {
            left: labels[0].clone(),
            right: labels[1..].join(", "),
            count: global.len(),
        });
    }
    let mut matrix = vec![vec![1.0; n]; n];
    let mut shared = vec![vec![0; n]; n];
    for i in 0..n {
        shared[i][i] = match common {
            CommonVocab::Global => global.len(),
            CommonVocab::Pairwise => tables[i].len(),
        };
        for j in i + 1..n {
            let words: Vec<&str> = match common {
                CommonVocab::Global => global.iter().copied().collect(),
                CommonVocab::Pairwise => tables[i]
                    .words
                    .keys()
                    .map(String::as_str)
                    .filter(|w| tables[j].words.contains_key(*w))
                    .collect(),
            };
            if words.len() < 2 {
                return Err(EvaluationError::InsufficientOverlap {
                    left: labels[i].clone(),
                    right: labels[j].clone(),
                    count: words.len(),
                });
            }
            let x: Vec<f64> = words.iter().map(|w| tables[i].words[*w].mean).collect();
            let y: Vec<f64> = words.iter().map(|w| tables[j].words[*w].mean).collect();
            let r = pearson(&x, &y)?;
            matrix[i][j] = r;
            matrix[j][i] = r;
            shared[i][j] = words.len();
            shared[j][i] = words.len();
        }
    }
    Ok(CorrelationReport {
        method,
        labels: labels.to_vec(),
        matrix,
        shared,
    })
}

/// A trained model together with the test set it is explained on.
#[derive(Debug, Clone, Copy)]
pub struct ModelUnderTest<'a> {
    pub params: &'a Parameters,
    pub vocab: &'a Vocabulary,
    pub test: &'a Dataset,
}

impl ModelUnderTest<'_> {
    /// Attributes every test sentence and averages per word (punctuation
    /// excluded).
    pub fn word_table(&self, cfg: &AttributionConfig, min_count: usize) -> Result<WordRelevanceTable, EvaluationError> {
        let data = encode_dataset(self.vocab, self.test, self.params.config.max_seq_len);
        let ids: Vec<Vec<usize>> = data.into_iter().map(|e| e.ids).collect();
        let maps = attribute_dataset(self.params, &ids, cfg)?;
        Ok(word_table(&maps, self.vocab, min_count, true))
    }
}

/// Trains one model per seed and correlates their word tables on `test`,
/// once per method.
#[allow(clippy::too_many_arguments)]
pub fn seed_robustness(
    config: &ModelConfig,
    vocab: &Vocabulary,
    hyper: &Hyper,
    train: &Dataset,
    dev: &Dataset,
    test: &Dataset,
    seeds: (u64, u64),
    methods: &[Method],
    min_count: usize,
) -> Result<Vec<CorrelationReport>, EvaluationError> {
    let train_seed = |seed| fit(&ModelConfig { seed, ..config.clone() }, vocab, train, dev, hyper);
    let first = train_seed(seeds.0)?;
    let second = if seeds.1 == seeds.0 { first.clone() } else { train_seed(seeds.1)? };
    let models = [
        ModelUnderTest { params: &first.params, vocab, test },
        ModelUnderTest { params: &second.params, vocab, test },
    ];
    let labels = vec![format!("seed {}", seeds.0), format!("seed {}", seeds.1)];
    methods
        .iter()
        .map(|&m| {
            let tables = models
                .iter()
                .map(|model| model.word_table(&AttributionConfig::new(m), min_count))
                .collect::<Result<Vec<_>, _>>()?;
            correlate_tables(m, &labels, &tables, CommonVocab::Pairwise)
        })
        .collect()
}

/// Correlates word tables of several (model, test set) pairs over the words
/// common to all of them.
pub fn cross_dataset(
    models: &[ModelUnderTest],
    labels: &[String],
    cfg: &AttributionConfig,
    min_count: usize,
) -> Result<CorrelationReport, EvaluationError> {
    let tables = models
        .iter()
        .map(|m| m.word_table(cfg, min_count))
        .collect::<Result<Vec<_>, _>>()?;
    correlate_tables(cfg.method, labels, &tables, CommonVocab::Global)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::word_table_from_tokens;
    use crate::model::init;

    fn table(words: &[&str], scores: &[f64]) -> WordRelevanceTable {
        word_table_from_tokens([(words, scores)], 1, true)
    }

    #[test]
    fn matrix_is_symmetric_with_unit_diagonal() {
        let t = [
            table(&["a", "b", "c", "d"], &[1.0, 2.0, 3.0, 4.0]),
            table(&["a", "b", "c", "e"], &[1.0, 2.5, 2.0, 9.0]),
            table(&["a", "b", "c", "d"], &[4.0, 1.0, 0.5, 4.0]),
        ];
        let labels: Vec<String> = ["x", "y", "z"].map(String::from).to_vec();
        for common in [CommonVocab::Pairwise, CommonVocab::Global] {
            let r = correlate_tables(Method::Gs, &labels, &t, common).unwrap();
            for i in 0..3 {
                assert_eq!(r.matrix[i][i], 1.0);
                for j in 0..3 {
                    assert_eq!(r.matrix[i][j], r.matrix[j][i]);
                    assert!((-1.0..=1.0).contains(&r.matrix[i][j]));
                }
            }
            assert_eq!(r.shared[0][1], 3);
        }
        let pw = correlate_tables(Method::Gs, &labels, &t, CommonVocab::Pairwise).unwrap();
        assert_eq!(pw.shared[0][2], 4);
        assert_eq!(pw.csv_rows().lines().count(), 9);
    }

    #[test]
    fn disjoint_tables_fail() {
        let t = [table(&["a", "b"], &[1.0, 2.0]), table(&["c", "d"], &[1.0, 2.0])];
        let labels = vec!["p".to_string(), "q".to_string()];
        for common in [CommonVocab::Pairwise, CommonVocab::Global] {
            assert!(matches!(
                correlate_tables(Method::Gi, &labels, &t, common),
                Err(EvaluationError::InsufficientOverlap { count: 0, .. })
            ));
        }
    }

    #[test]
    fn same_model_twice_correlates_perfectly() {
        let ds = Dataset::from_pairs("t", [(0, "a b c"), (1, "c d a"), (0, "b d"), (1, "a a e")]);
        let vocab = Vocabulary::build(&ds, 1);
        let c = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            vocab_size: vocab.len(),
            max_seq_len: 8,
            ..Default::default()
        };
        let p = init(&c).unwrap().perturbed(3, 0.5);
        let m = ModelUnderTest { params: &p, vocab: &vocab, test: &ds };
        let labels = vec!["one".to_string(), "two".to_string()];
        let r = cross_dataset(&[m, m], &labels, &AttributionConfig::new(Method::Gs), 1).unwrap();
        assert_eq!(r.matrix[0][1], 1.0);
    }
}
