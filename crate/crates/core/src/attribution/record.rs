use std::fmt::Write as _;

use serde::Deserialize;

use super::{Method, RelevanceMap};
use crate::data::Vocabulary;

/// Serialized form of a [`RelevanceMap`]: one JSON object per line with
/// surface tokens instead of ids. Floats carry 17 significant digits, so
/// they parse back to the same bits.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelevanceRecord {
    pub method: Method,
    pub class: usize,
    pub tokens: Vec<String>,
    pub scores: Vec<f64>,
    #[serde(default)]
    pub dims: Option<Vec<Vec<f64>>>,
}

fn push_float(out: &mut String, v: f64) {
    debug_assert!(v.is_finite());
    write!(out, "{v:.16e}").unwrap();
}

fn push_floats(out: &mut String, vs: &[f64]) {
    out.push('[');
    for (i, &v) in vs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_float(out, v);
    }
    out.push(']');
}

impl RelevanceRecord {
    pub fn from_map(map: &RelevanceMap, vocab: &Vocabulary, with_dims: bool) -> Self {
        let tokens = map
            .token_ids
            .iter()
            .map(|&id| vocab.word(id).unwrap_or(crate::data::UNK_TOKEN).to_string())
            .collect();
        let dims = match (&map.dims, with_dims) {
            (Some(d), true) => Some((0..d.rows()).map(|r| d.row(r).to_vec()).collect()),
            _ => None,
        };
        Self {
            method: map.method,
            class: map.class,
            tokens,
            scores: map.scores.clone(),
            dims,
        }
    }

    /// One line of JSON, without the trailing newline.
    pub fn to_json_line(&self) -> String {
        let mut out = String::with_capacity(64 + 24 * self.scores.len());
        write!(out, "{{\"method\":\"{}\",\"class\":{},\"tokens\":", self.method, self.class).unwrap();
        out.push_str(&serde_json::to_string(&self.tokens).expect("strings serialize"));
        out.push_str(",\"scores\":");
        push_floats(&mut out, &self.scores);
        if let Some(dims) = &self.dims {
            out.push_str(",\"dims\":[");
            for (i, row) in dims.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                push_floats(&mut out, row);
            }
            out.push(']');
        }
        out.push('}');
        out
    }

    pub fn parse(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{attribute_ids, AttributionConfig};
    use crate::data::Dataset;
    use crate::model::{init, ModelConfig};

    #[test]
    fn json_line_round_trips_bitwise() {
        let ds = Dataset::from_pairs("t", [(1, "a \"quoted\" word, ok"), (0, "b c")]);
        let vocab = Vocabulary::build(&ds, 1);
        let c = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            vocab_size: vocab.len(),
            max_seq_len: 12,
            ..Default::default()
        };
        let p = init(&c).unwrap().perturbed(5, 0.4);
        let ids = crate::data::encode(&vocab, &ds.examples[0].text, 12);
        for method in Method::ALL {
            let map = attribute_ids(&p, &ids, &AttributionConfig::new(method)).unwrap();
            let rec = RelevanceRecord::from_map(&map, &vocab, true);
            assert_eq!(rec.tokens[0], "[CLS]");
            let line = rec.to_json_line();
            assert!(!line.contains('\n'));
            let back = RelevanceRecord::parse(&line).unwrap();
            assert_eq!(back, rec);
            for (a, b) in back.scores.iter().zip(&map.scores) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            assert_eq!(rec.dims.is_some(), method != Method::Lat);
        }
    }

    #[test]
    fn floats_have_seventeen_digits() {
        let rec = RelevanceRecord {
            method: Method::Gs,
            class: 0,
            tokens: vec!["[CLS]".into()],
            scores: vec![0.1],
            dims: None,
        };
        assert_eq!(
            rec.to_json_line(),
            "{\"method\":\"gs\",\"class\":0,\"tokens\":[\"[CLS]\"],\"scores\":[1.0000000000000001e-1]}"
        );
    }

    #[test]
    fn rejects_malformed() {
        assert!(RelevanceRecord::parse("{\"method\":\"gs\"}").is_err());
        assert!(RelevanceRecord::parse("not json").is_err());
    }
}
