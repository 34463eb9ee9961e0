use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{tokenize, Dataset};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";

const SPECIALS: [&str; 3] = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN];

/// Word ↔ id table. Ids are dense; the three specials always occupy 0..3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    min_freq: usize,
}

/// On-disk form: `{word: id}` plus metadata.
#[derive(Debug, Serialize, Deserialize)]
struct VocabFile {
    min_freq: usize,
    hash: String,
    words: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Keeps words with corpus frequency `>= min_freq`; ids follow descending
    /// frequency, ties broken lexicographically.
    pub fn build(dataset: &Dataset, min_freq: usize) -> Self {
        let min_freq = min_freq.max(1);
        let mut counts: HashMap<String, usize> = HashMap::new();
        for ex in &dataset.examples {
            for w in tokenize(&ex.text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_freq && !SPECIALS.contains(&w.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_words(kept.into_iter().map(|(w, _)| w), min_freq)
    }

    fn from_words(words: impl Iterator<Item = String>, min_freq: usize) -> Self {
        let words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).chain(words).collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self {
            words,
            index,
            min_freq,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    /// Id of `word`, or `[UNK]`.
    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    /// SHA-256 over the id-ordered word list and threshold.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.min_freq.to_le_bytes());
        for w in &self.words {
            h.update(w.as_bytes());
            h.update(*b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let file = VocabFile {
            min_freq: self.min_freq,
            hash: self.content_hash(),
            words: self.index.iter().map(|(w, &i)| (w.clone(), i)).collect(),
        };
        serde_json::to_value(file).expect("vocabulary serializes")
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self, String> {
        let file: VocabFile = serde_json::from_value(value).map_err(|e| e.to_string())?;
        let mut slots: Vec<Option<String>> = vec![None; file.words.len()];
        for (w, id) in file.words {
            let slot = slots.get_mut(id).ok_or_else(|| format!("vocabulary id {id} is not dense"))?;
            if slot.replace(w).is_some() {
                return Err(format!("vocabulary id {id} assigned twice"));
            }
        }
        let words: Vec<String> = slots.into_iter().map(|s| s.expect("dense ids fill every slot")).collect();
        if words.len() < SPECIALS.len() || words[..SPECIALS.len()].iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err("vocabulary special tokens are not [PAD]=0, [UNK]=1, [CLS]=2".into());
        }
        let vocab = Self::from_words(words.into_iter().skip(SPECIALS.len()), file.min_freq);
        if vocab.content_hash() != file.hash {
            return Err("vocabulary hash does not match its contents".into());
        }
        Ok(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_threshold() {
        let ds = Dataset::from_pairs("v", [(0, "a a b")]);
        let v = Vocabulary::build(&ds, 2);
        assert!(v.contains("a") && !v.contains("b"));
        let v = Vocabulary::build(&ds, 1);
        assert!(v.contains("a") && v.contains("b"));
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn ids_by_frequency_then_lexicographic() {
        let ds = Dataset::from_pairs("v", [(0, "c b b a"), (1, "c d")]);
        let v = Vocabulary::build(&ds, 1);
        assert_eq!(v.id("b"), 3);
        assert_eq!(v.id("c"), 4);
        assert_eq!(v.id("a"), 5);
        assert_eq!(v.id("d"), 6);
        assert_eq!(v.word(CLS_ID), Some(CLS_TOKEN));
        assert_eq!(v.id("zzz"), UNK_ID);
    }

    #[test]
    fn order_invariant_and_deterministic() {
        let a = Dataset::from_pairs("v", [(0, "x y z y"), (1, "z q")]);
        let b = Dataset::from_pairs("v", [(1, "z q"), (0, "x y z y")]);
        let va = Vocabulary::build(&a, 1);
        assert_eq!(va, Vocabulary::build(&b, 1));
        assert_eq!(va.content_hash(), Vocabulary::build(&a, 1).content_hash());
    }

    #[test]
    fn json_round_trip_and_tamper_detection() {
        let v = Vocabulary::build(&Dataset::from_pairs("v", [(0, "good bad good")]), 1);
        let back = Vocabulary::from_json_value(v.to_json_value()).unwrap();
        assert_eq!(back, v);

        let mut tampered = v.to_json_value();
        tampered["words"]["good"] = serde_json::json!(4);
        tampered["words"]["bad"] = serde_json::json!(3);
        assert!(Vocabulary::from_json_value(tampered).unwrap_err().contains("hash"));
    }
}
