//! Corpus ingestion: TSV datasets, a whitespace word tokenizer, vocabulary
//! construction and id encoding.

mod toy;
mod vocab;

use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

pub use toy::{CueCorpus, CueCorpusSpec};
pub use vocab::{Vocabulary, CLS_ID, CLS_TOKEN, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: missing tab between label and text")]
    MissingTab { line: usize },
    #[error("line {line}: label `{label}` is not a non-negative integer")]
    BadLabel { line: usize, label: String },
    #[error("line {line}: text is empty after tokenization")]
    EmptyText { line: usize },
    #[error("example {index}: label {label} is outside [0, {n_classes})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        n_classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub text: String,
    pub label: usize,
    /// 1-based source line, 0 for in-memory examples.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            examples: Vec::new(),
        }
    }

    pub fn from_pairs<S: Into<String>>(name: &str, pairs: impl IntoIterator<Item = (usize, S)>) -> Self {
        Self {
            name: name.to_string(),
            examples: pairs
                .into_iter()
                .map(|(label, text)| Example {
                    text: text.into(),
                    label,
                    line: 0,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn check_labels(&self, n_classes: usize) -> Result<(), DataError> {
        for (index, ex) in self.examples.iter().enumerate() {
            if ex.label >= n_classes {
                return Err(DataError::LabelOutOfRange {
                    index,
                    label: ex.label,
                    n_classes,
                });
            }
        }
        Ok(())
    }

    /// Splits rows alternately: even rows to the first half (dev), odd rows
    /// to the second (test). No shuffling.
    pub fn split_alternating(&self) -> (Dataset, Dataset) {
        let mut dev = Dataset::new(format!("{}-dev", self.name));
        let mut test = Dataset::new(format!("{}-test", self.name));
        for (i, ex) in self.examples.iter().enumerate() {
            if i % 2 == 0 {
                dev.examples.push(ex.clone());
            } else {
                test.examples.push(ex.clone());
            }
        }
        (dev, test)
    }

    /// Renders the `label<TAB>text` form read by [`parse_tsv`].
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str(&ex.label.to_string());
            out.push('\t');
            out.push_str(&ex.text);
            out.push('\n');
        }
        out
    }
}

pub fn load_tsv(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_tsv(&name, &text)
}

/// Parses `label<TAB>text` rows. Blank lines are skipped.
pub fn parse_tsv(name: &str, text: &str) -> Result<Dataset, DataError> {
    let mut ds = Dataset::new(name);
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (label, body) = raw.split_once('\t').ok_or(DataError::MissingTab { line })?;
        let label = label.trim();
        let label: usize = label.parse().map_err(|_| DataError::BadLabel {
            line,
            label: label.to_string(),
        })?;
        if tokenize(body).is_empty() {
            return Err(DataError::EmptyText { line });
        }
        ds.examples.push(Example {
            text: body.to_string(),
            label,
            line,
        });
    }
    Ok(ds)
}

static EDGE_PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\p{P}+|\p{P}+$").expect("valid regex"));
static ALL_PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\p{P}+$").expect("valid regex"));

/// True when every character is in a Unicode punctuation category.
pub fn is_punctuation(token: &str) -> bool {
    ALL_PUNCT.is_match(token)
}

/// Lowercases, splits on whitespace and strips leading/trailing punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| EDGE_PUNCT.replace_all(&w.to_lowercase(), "").into_owned())
        .filter(|w| !w.is_empty())
        .collect()
}

/// `[CLS]` followed by word ids, truncated to `max_len`.
pub fn encode(vocab: &Vocabulary, text: &str, max_len: usize) -> Vec<usize> {
    assert!(max_len >= 2, "max_len must leave room for [CLS] and one word");
    std::iter::once(CLS_ID)
        .chain(tokenize(text).iter().map(|w| vocab.id(w)))
        .take(max_len)
        .collect()
}

/// An encoded sentence with its gold label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub ids: Vec<usize>,
    pub label: usize,
}

pub fn encode_dataset(vocab: &Vocabulary, ds: &Dataset, max_len: usize) -> Vec<EncodedExample> {
    ds.examples
        .iter()
        .map(|ex| EncodedExample {
            ids: encode(vocab, &ex.text, max_len),
            label: ex.label,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_examples() {
        let ds = parse_tsv("t", "1\tgood movie\n0\tbad film\n").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.examples[1].label, 0);
        assert_eq!(ds.examples[1].line, 2);
        assert!(parse_tsv("t", "").unwrap().is_empty());
        assert!(matches!(parse_tsv("t", "x\thello"), Err(DataError::BadLabel { line: 1, .. })));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_tsv("t", "1\tok\n\n0 no tab here\n").unwrap_err();
        assert!(matches!(err, DataError::MissingTab { line: 3 }));
        assert!(err.to_string().starts_with("line 3"));
        assert!(matches!(parse_tsv("t", "1\t?!\n"), Err(DataError::EmptyText { line: 1 })));
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Good, movie!"), vec!["good", "movie"]);
        assert_eq!(tokenize("don't stop"), vec!["don't", "stop"]);
        assert!(tokenize("   ").is_empty());
        assert_eq!(tokenize("«Très» bien… — ok"), vec!["très", "bien", "ok"]);
    }

    #[test]
    fn punctuation_detection() {
        assert!(is_punctuation("..."));
        assert!(is_punctuation("«—»"));
        assert!(!is_punctuation("a."));
        assert!(!is_punctuation("$"));
        assert!(!is_punctuation(""));
    }

    #[test]
    fn encode_examples() {
        let ds = Dataset::from_pairs("t", [(1, "good movie"), (0, "good film")]);
        let vocab = Vocabulary::build(&ds, 1);
        assert_eq!(encode(&vocab, "good movie", 8), vec![CLS_ID, vocab.id("good"), vocab.id("movie")]);
        assert_eq!(encode(&vocab, "good zebra", 8)[2], UNK_ID);
        let long = vec!["good"; 100].join(" ");
        assert_eq!(encode(&vocab, &long, 8).len(), 8);
    }

    #[test]
    fn split_alternates_rows() {
        let ds = Dataset::from_pairs("c", (0..5).map(|i| (i % 2, format!("w{i}"))));
        let (dev, test) = ds.split_alternating();
        assert_eq!(dev.examples.iter().map(|e| e.text.as_str()).collect::<Vec<_>>(), ["w0", "w2", "w4"]);
        assert_eq!(test.examples.iter().map(|e| e.text.as_str()).collect::<Vec<_>>(), ["w1", "w3"]);
    }

    #[test]
    fn label_range_check() {
        let ds = Dataset::from_pairs("c", [(0, "a"), (3, "b")]);
        assert!(matches!(ds.check_labels(2), Err(DataError::LabelOutOfRange { index: 1, label: 3, .. })));
        assert!(ds.check_labels(4).is_ok());
    }

    #[test]
    fn tsv_round_trip() {
        let ds = Dataset::from_pairs("c", [(1, "good movie"), (0, "bad film")]);
        let back = parse_tsv("c", &ds.to_tsv()).unwrap();
        assert_eq!(back.examples.iter().map(|e| (e.label, e.text.clone())).collect::<Vec<_>>(),
                   ds.examples.iter().map(|e| (e.label, e.text.clone())).collect::<Vec<_>>());
    }
}
