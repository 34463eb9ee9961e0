//! Synthetic cue-word sentiment corpus.
//!
//! Every sentence is a run of neutral filler words. A sentence is labelled
//! positive (1) exactly when it contains one of the cue words; positive
//! sentences carry a single cue at a uniformly random position. Labels are
//! drawn with probability 1/2, lengths uniformly from
//! `min_words..=max_words` fillers. The rule is known, so it doubles as the
//! oracle for trainability and deletion tests.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{tokenize, Dataset, Example};

const CUES: [&str; 5] = ["great", "excellent", "wonderful", "superb", "delightful"];

const FILLERS: [&str; 60] = [
    "the", "a", "movie", "film", "plot", "actor", "scene", "story", "was", "is", "it", "this", "that", "with", "and",
    "of", "in", "on", "for", "about", "some", "very", "quite", "rather", "long", "short", "old", "new", "early",
    "late", "city", "night", "day", "music", "camera", "script", "cast", "director", "ending", "start", "middle",
    "character", "dialogue", "screen", "studio", "sequel", "series", "season", "episode", "review", "critic",
    "audience", "ticket", "theater", "house", "family", "friend", "people", "time", "world",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CueCorpusSpec {
    pub n_examples: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub seed: u64,
}

impl Default for CueCorpusSpec {
    fn default() -> Self {
        Self {
            n_examples: 1000,
            min_words: 4,
            max_words: 10,
            seed: 0,
        }
    }
}

pub struct CueCorpus;

impl CueCorpus {
    pub fn cue_words() -> &'static [&'static str] {
        &CUES
    }

    pub fn filler_words() -> &'static [&'static str] {
        &FILLERS
    }

    /// The labelling rule: 1 iff any token is a cue word.
    pub fn label_of(text: &str) -> usize {
        usize::from(tokenize(text).iter().any(|w| CUES.contains(&w.as_str())))
    }

    pub fn generate(name: &str, spec: CueCorpusSpec) -> Dataset {
        assert!(spec.min_words >= 1 && spec.min_words <= spec.max_words);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut ds = Dataset::new(name);
        for i in 0..spec.n_examples {
            let positive = rng.random_bool(0.5);
            let n = rng.random_range(spec.min_words..=spec.max_words);
            let mut words: Vec<&str> = (0..n).map(|_| *FILLERS.choose(&mut rng).expect("non-empty")).collect();
            if positive {
                let at = rng.random_range(0..=words.len());
                words.insert(at, CUES.choose(&mut rng).expect("non-empty"));
            }
            let mut text = words.join(" ");
            if rng.random_bool(0.3) {
                text.push('.');
            }
            ds.examples.push(Example {
                text,
                label: usize::from(positive),
                line: i + 1,
            });
        }
        ds
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_the_cue_rule() {
        let ds = CueCorpus::generate("toy", CueCorpusSpec { n_examples: 400, ..Default::default() });
        assert_eq!(ds.len(), 400);
        for ex in &ds.examples {
            assert_eq!(CueCorpus::label_of(&ex.text), ex.label, "{}", ex.text);
            let words = tokenize(&ex.text);
            assert!(words.len() >= 4 && words.len() <= 11);
        }
        let positives = ds.examples.iter().filter(|e| e.label == 1).count();
        assert!((150..=250).contains(&positives));
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let spec = CueCorpusSpec { seed: 9, ..Default::default() };
        assert_eq!(CueCorpus::generate("a", spec), CueCorpus::generate("a", spec));
        assert_ne!(
            CueCorpus::generate("a", spec),
            CueCorpus::generate("a", CueCorpusSpec { seed: 10, ..spec })
        );
    }
}
