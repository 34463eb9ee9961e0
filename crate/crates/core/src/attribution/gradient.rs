use super::{l2_rows, AttributionError, Method, RelevanceMap};
use crate::model::{input_gradient, ForwardTrace, OutputSelector, Parameters};

/// Gradient sensitivity: the input gradient itself, reduced per token by L2 norm.
pub fn attribute_gs(params: &Parameters, trace: &ForwardTrace, sel: OutputSelector) -> Result<RelevanceMap, AttributionError> {
    let grad = input_gradient(params, trace, sel)?;
    Ok(RelevanceMap {
        method: Method::Gs,
        token_ids: trace.token_ids.clone(),
        scores: l2_rows(&grad),
        dims: Some(grad),
        class: sel.class,
        target: sel.target,
        output: trace.selected_output(sel),
        fingerprint: trace.fingerprint,
    })
}

/// Gradient × input, reduced per token by L2 norm.
pub fn attribute_gi(params: &Parameters, trace: &ForwardTrace, sel: OutputSelector) -> Result<RelevanceMap, AttributionError> {
    let grad = input_gradient(params, trace, sel)?;
    let dims = trace
        .embedding
        .zip_with(&grad, "gradient x input", |x, g| x * g)
        .map_err(crate::model::ModelError::from)?;
    Ok(RelevanceMap {
        method: Method::Gi,
        token_ids: trace.token_ids.clone(),
        scores: l2_rows(&dims),
        dims: Some(dims),
        class: sel.class,
        target: sel.target,
        output: trace.selected_output(sel),
        fingerprint: trace.fingerprint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, init, ModelConfig, Mode};

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            vocab_size: 20,
            max_seq_len: 12,
            ..Default::default()
        }
    }

    #[test]
    fn zero_head_gives_zero_maps() {
        let p = init(&cfg()).unwrap();
        let tr = forward(&p, &[2, 5, 6], Mode::Eval).unwrap();
        for map in [
            attribute_gs(&p, &tr, OutputSelector::logit(0)).unwrap(),
            attribute_gi(&p, &tr, OutputSelector::logit(0)).unwrap(),
        ] {
            assert!(map.scores.iter().all(|&s| s == 0.0));
        }
    }

    #[test]
    fn gs_scores_are_nonnegative() {
        let p = init(&cfg()).unwrap().perturbed(1, 0.4);
        let tr = forward(&p, &[2, 5, 6, 11, 3], Mode::Eval).unwrap();
        let map = attribute_gs(&p, &tr, OutputSelector::logit(1)).unwrap();
        assert!(map.scores.iter().all(|&s| s >= 0.0));
        assert!(map.scores.iter().any(|&s| s > 0.0));
    }

    #[test]
    fn duplicated_token_without_positions_gets_equal_scores() {
        let mut p = init(&cfg()).unwrap().perturbed(2, 0.4);
        p.position_embedding.data_mut().fill(0.0);
        let tr = forward(&p, &[2, 7, 7, 4], Mode::Eval).unwrap();
        let map = attribute_gs(&p, &tr, OutputSelector::logit(1)).unwrap();
        assert!((map.scores[1] - map.scores[2]).abs() <= 1e-12 * map.scores[1].max(1e-300));
        assert!(map.scores[1] > 0.0);
    }

    #[test]
    fn zero_embedding_row_gives_zero_gi() {
        let mut p = init(&cfg()).unwrap().perturbed(3, 0.4);
        p.token_embedding.row_mut(9).fill(0.0);
        p.position_embedding.row_mut(2).fill(0.0);
        let tr = forward(&p, &[2, 4, 9, 5], Mode::Eval).unwrap();
        let map = attribute_gi(&p, &tr, OutputSelector::logit(0)).unwrap();
        assert_eq!(map.scores[2], 0.0);
        assert!(map.scores[1] > 0.0);
    }

    #[test]
    fn gi_is_embedding_times_gs_exactly() {
        let p = init(&cfg()).unwrap().perturbed(4, 0.4);
        let tr = forward(&p, &[2, 8, 13, 1, 6], Mode::Eval).unwrap();
        let sel = OutputSelector::probability(1);
        let gs = attribute_gs(&p, &tr, sel).unwrap();
        let gi = attribute_gi(&p, &tr, sel).unwrap();
        let (gs, gi) = (gs.dims.unwrap(), gi.dims.unwrap());
        for ((g, x), r) in gs.data().iter().zip(tr.embedding.data()).zip(gi.data()) {
            assert_eq!((g * x).to_bits(), r.to_bits());
        }
    }
}
