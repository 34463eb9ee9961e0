use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::attribution::RelevanceMap;
use crate::data::{is_punctuation, Vocabulary, CLS_TOKEN, PAD_TOKEN, UNK_TOKEN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WordStat {
    pub mean: f64,
    pub count: usize,
}

/// Mean per-token relevance of each surface word.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WordRelevanceTable {
    pub words: BTreeMap<String, WordStat>,
}

impl WordRelevanceTable {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&WordStat> {
        self.words.get(word)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordScore {
    pub word: String,
    pub mean: f64,
    pub count: usize,
}

/// Builds a table from `(tokens, scores)` pairs. Scores of a word are summed
/// in sorted order, so the means do not depend on input order.
pub fn word_table_from_tokens<'a, I, S>(sentences: I, min_count: usize, exclude_punct: bool) -> WordRelevanceTable
where
    I: IntoIterator<Item = (&'a [S], &'a [f64])>,
    S: AsRef<str> + 'a,
{
    let mut occurrences: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (tokens, scores) in sentences {
        for (tok, &s) in tokens.iter().zip(scores) {
            let tok = tok.as_ref();
            if matches!(tok, CLS_TOKEN | PAD_TOKEN | UNK_TOKEN) || (exclude_punct && is_punctuation(tok)) {
                continue;
            }
            occurrences.entry(tok.to_string()).or_default().push(s);
        }
    }
    let words = occurrences
        .into_iter()
        .filter(|(_, v)| v.len() >= min_count.max(1))
        .map(|(w, mut v)| {
            v.sort_by(f64::total_cmp);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            (w, WordStat { mean, count: v.len() })
        })
        .collect();
    WordRelevanceTable { words }
}

pub fn word_table(maps: &[RelevanceMap], vocab: &Vocabulary, min_count: usize, exclude_punct: bool) -> WordRelevanceTable {
    let tokens: Vec<Vec<&str>> = maps
        .iter()
        .map(|m| m.token_ids.iter().map(|&id| vocab.word(id).unwrap_or(UNK_TOKEN)).collect())
        .collect();
    word_table_from_tokens(
        tokens.iter().zip(maps).map(|(t, m)| (t.as_slice(), m.scores.as_slice())),
        min_count,
        exclude_punct,
    )
}

/// The `k` highest- and `k` lowest-mean words; equal means are ordered
/// lexicographically in both lists.
pub fn top_bottom(table: &WordRelevanceTable, k: usize) -> (Vec<WordScore>, Vec<WordScore>) {
    let mut all: Vec<WordScore> = table
        .words
        .iter()
        .map(|(w, s)| WordScore {
            word: w.clone(),
            mean: s.mean,
            count: s.count,
        })
        .collect();
    let by = |desc: bool| {
        move |a: &WordScore, b: &WordScore| {
            let o = a.mean.total_cmp(&b.mean);
            let o = if desc { o.reverse() } else { o };
            if o == Ordering::Equal {
                a.word.cmp(&b.word)
            } else {
                o
            }
        }
    };
    all.sort_by(by(true));
    let top = all.iter().take(k).cloned().collect();
    all.sort_by(by(false));
    let bottom = all.into_iter().take(k).collect();
    (top, bottom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(&[&str], &[f64])], min_count: usize) -> WordRelevanceTable {
        word_table_from_tokens(rows.iter().map(|(t, s)| (*t, *s)), min_count, true)
    }

    #[test]
    fn means_and_thresholds() {
        let t = table(&[(&["[CLS]", "good", "film", "!"], &[9.0, 0.2, 0.7, 5.0]), (&["good", "[UNK]"], &[0.4, 3.0])], 1);
        assert_eq!(t.len(), 2);
        assert!((t.get("good").unwrap().mean - 0.3).abs() < 1e-15);
        assert_eq!(t.get("good").unwrap().count, 2);
        assert_eq!(t.get("film").unwrap().mean, 0.7);
        assert!(t.get("!").is_none() && t.get("[CLS]").is_none());

        let four = ["w"; 4];
        let s = [1.0; 4];
        assert!(table(&[(&four, &s)], 5).is_empty());
        assert_eq!(table(&[(&four, &s)], 4).len(), 1);
    }

    #[test]
    fn punctuation_kept_when_not_excluded() {
        let t = word_table_from_tokens([(&["...", "ok"][..], &[1.0, 2.0][..])], 1, false);
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn order_invariant_means() {
        let rows: Vec<(Vec<&str>, Vec<f64>)> = (0..30).map(|i| (vec!["a", "b"], vec![0.1 * i as f64 + 1e-9, (i as f64).sin()])).collect();
        let fwd = word_table_from_tokens(rows.iter().map(|(t, s)| (t.as_slice(), s.as_slice())), 1, true);
        let rev = word_table_from_tokens(rows.iter().rev().map(|(t, s)| (t.as_slice(), s.as_slice())), 1, true);
        assert_eq!(fwd, rev);
    }

    #[test]
    fn top_bottom_examples() {
        let t = table(&[(&["a", "b", "c"], &[3.0, 1.0, 2.0])], 1);
        let (top, bottom) = top_bottom(&t, 1);
        assert_eq!(top[0].word, "a");
        assert_eq!(bottom[0].word, "b");
        let (top, bottom) = top_bottom(&t, 10);
        assert_eq!(top.len(), 3);
        assert_eq!(bottom.len(), 3);

        let tie = table(&[(&["z", "m", "b"], &[1.0, 1.0, 1.0])], 1);
        let (top, bottom) = top_bottom(&tie, 3);
        let names = |v: &[WordScore]| v.iter().map(|w| w.word.clone()).collect::<Vec<_>>();
        assert_eq!(names(&top), ["b", "m", "z"]);
        assert_eq!(names(&bottom), ["b", "m", "z"]);
    }
}
