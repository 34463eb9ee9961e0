//! Layerwise attention tracing.
//!
//! Starting from all mass on `[CLS]` at the top, each layer moves the mass of
//! query position `i` to key positions `j` in proportion to the head-averaged
//! attention `Ā[i, j]`. Rows of `Ā` sum to one, so every layer preserves the
//! total mass of one.

use super::{AttributionError, Method, RelevanceMap};
use crate::model::{ForwardTrace, OutputSelector, Target};

/// Distribution over positions after tracing through each layer, from the
/// top layer down. The last entry is the input-level distribution.
pub fn lat_layer_relevance(trace: &ForwardTrace) -> Result<Vec<Vec<f64>>, AttributionError> {
    if trace.layers.is_empty() {
        return Err(AttributionError::MissingAttention);
    }
    let t_len = trace.len();
    let mut r = vec![0.0; t_len];
    r[0] = 1.0;
    let mut out = Vec::with_capacity(trace.layers.len());
    for (li, layer) in trace.layers.iter().enumerate().rev() {
        let n_heads = layer.n_heads();
        let a = layer.attention.data();
        let inv = 1.0 / n_heads as f64;
        let mut next = vec![0.0; t_len];
        for (i, &ri) in r.iter().enumerate() {
            if ri == 0.0 {
                continue;
            }
            for (j, nj) in next.iter_mut().enumerate() {
                let mut mean = 0.0;
                for h in 0..n_heads {
                    mean += a[(h * t_len + i) * t_len + j];
                }
                *nj += ri * mean * inv;
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(AttributionError::NonFinite {
                layer: format!("layer {li} attention"),
            });
        }
        out.push(next.clone());
        r = next;
    }
    Ok(out)
}

/// LAT relevance map. The method does not depend on the output class; the
/// map records the predicted class.
pub fn attribute_lat(trace: &ForwardTrace) -> Result<RelevanceMap, AttributionError> {
    let scores = lat_layer_relevance(trace)?.pop().expect("at least one layer");
    let sel = OutputSelector {
        class: trace.predicted_class(),
        target: Target::Logit,
    };
    Ok(RelevanceMap {
        method: Method::Lat,
        token_ids: trace.token_ids.clone(),
        dims: None,
        scores,
        class: sel.class,
        target: sel.target,
        output: trace.selected_output(sel),
        fingerprint: trace.fingerprint,
    })
}
