use super::forward::{head_columns, scatter_head_columns, ForwardTrace, Mode};
use super::{ModelError, OutputSelector, Parameters};
use crate::tensor::{
    matmul, matmul_tn, softmax_rows_vjp, std_normal_cdf, vjp, Dual, Primitive, Tensor, LAYERNORM_EPS,
};

/// Gradient of a scalar output w.r.t. the input embedding and every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub input: Tensor,
    pub params: Parameters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GeluDerivative {
    Exact,
    /// Drops the `x·φ(x)` term; negative control for gradient checks.
    Faulty,
}

fn column_sums(x: &Tensor) -> Tensor {
    let mut out = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (o, v) in out.iter_mut().zip(x.row(r)) {
            *o += v;
        }
    }
    Tensor::vector(out)
}

fn take2(mut v: Vec<Tensor>) -> (Tensor, Tensor) {
    let b = v.pop().expect("two cotangents");
    let a = v.pop().expect("two cotangents");
    (a, b)
}

fn take3(mut v: Vec<Tensor>) -> (Tensor, Tensor, Tensor) {
    let c = v.pop().expect("three cotangents");
    let (a, b) = take2(v);
    (a, b, c)
}

fn apply_mask(g: Tensor, mask: Option<&Tensor>) -> Result<Tensor, ModelError> {
    match mask {
        Some(m) => Ok(g.zip_with(m, "dropout vjp", |a, b| a * b)?),
        None => Ok(g),
    }
}

fn backward(
    params: &Parameters,
    trace: &ForwardTrace,
    d_logits: &Tensor,
    gelu_derivative: GeluDerivative,
) -> Result<Gradients, ModelError> {
    let c = &params.config;
    let (t, d) = (trace.len(), c.d_model);
    let dh = c.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let ln = Primitive::LayerNorm { eps: LAYERNORM_EPS };
    let mut grads = params.zeros_like();

    let pooled = Tensor::matrix(1, d, trace.pooled.data().to_vec())?;
    let dl = Tensor::matrix(1, c.n_classes, d_logits.data().to_vec())?;
    let (d_pooled, d_head_w) = take2(vjp(Primitive::Matmul, &[&pooled, &params.head_weight], &dl)?);
    grads.head_weight = d_head_w;
    grads.head_bias = d_logits.clone();

    let mut d_out = Tensor::zeros(&[t, d]);
    d_out.row_mut(0).copy_from_slice(d_pooled.data());

    for (li, (lp, lt)) in params.layers.iter().zip(&trace.layers).enumerate().rev() {
        let masks = lt.masks.as_ref();
        let g = &mut grads.layers[li];

        let (d_resid2, dg2, db2) = take3(vjp(ln, &[&lt.resid2, &lp.ln2_gamma, &lp.ln2_beta], &d_out)?);
        g.ln2_gamma = dg2;
        g.ln2_beta = db2;

        let mut hidden = Dual::new(lt.hidden.clone());
        let (dh_resid, d_ff_out) = take2(vjp(Primitive::Add, &[&lt.hidden, &lt.ff_out], &d_resid2)?);
        hidden.accumulate(&dh_resid)?;
        let d_ff = apply_mask(d_ff_out, masks.map(|m| &m.ff_out))?;
        let (d_act, dw2) = take2(vjp(Primitive::Matmul, &[&lt.ff_act, &lp.w2], &d_ff)?);
        g.w2 = dw2;
        g.b2 = column_sums(&d_ff);
        let d_pre = match gelu_derivative {
            GeluDerivative::Exact => vjp(Primitive::Gelu, &[&lt.ff_pre], &d_act)?.remove(0),
            GeluDerivative::Faulty => lt.ff_pre.zip_with(&d_act, "faulty gelu vjp", |x, u| std_normal_cdf(x) * u)?,
        };
        let (dh_ff, dw1) = take2(vjp(Primitive::Matmul, &[&lt.hidden, &lp.w1], &d_pre)?);
        g.w1 = dw1;
        g.b1 = column_sums(&d_pre);
        hidden.accumulate(&dh_ff)?;

        let (d_resid1, dg1, db1) = take3(vjp(ln, &[&lt.resid1, &lp.ln1_gamma, &lp.ln1_beta], hidden.grad())?);
        g.ln1_gamma = dg1;
        g.ln1_beta = db1;

        let mut x = Dual::new(lt.input.clone());
        let (dx_resid, d_attn_out) = take2(vjp(Primitive::Add, &[&lt.input, &lt.attn_out], &d_resid1)?);
        x.accumulate(&dx_resid)?;
        let d_o = apply_mask(d_attn_out, masks.map(|m| &m.attn_out))?;
        let (d_ctx, dwo) = take2(vjp(Primitive::Matmul, &[&lt.context, &lp.wo], &d_o)?);
        g.wo = dwo;
        g.bo = column_sums(&d_o);

        let mut dq = Tensor::zeros(&[t, d]);
        let mut dk = Tensor::zeros(&[t, d]);
        let mut dv = Tensor::zeros(&[t, d]);
        for h in 0..c.n_heads {
            let a = lt.head_attention(h);
            let mask = match masks {
                Some(m) => Some(Tensor::matrix(t, t, m.attention.data()[h * t * t..(h + 1) * t * t].to_vec())?),
                None => None,
            };
            let used = match &mask {
                Some(m) => a.zip_with(m, "attention dropout", |p, s| p * s)?,
                None => a.clone(),
            };
            let vh = head_columns(&lt.v, h, dh);
            let (d_used, d_vh) = take2(vjp(Primitive::Matmul, &[&used, &vh], &head_columns(&d_ctx, h, dh))?);
            let d_a = apply_mask(d_used, mask.as_ref())?;
            let d_scores = softmax_rows_vjp(&a, &d_a).scale(scale);
            let qh = head_columns(&lt.q, h, dh);
            let kh = head_columns(&lt.k, h, dh);
            scatter_head_columns(&mut dq, &matmul(&d_scores, &kh)?, h, dh);
            scatter_head_columns(&mut dk, &matmul_tn(&d_scores, &qh)?, h, dh);
            scatter_head_columns(&mut dv, &d_vh, h, dh);
        }
        for (dproj, w, dw, db) in [
            (&dq, &lp.wq, &mut g.wq, &mut g.bq),
            (&dk, &lp.wk, &mut g.wk, &mut g.bk),
            (&dv, &lp.wv, &mut g.wv, &mut g.bv),
        ] {
            let (dx_proj, dweight) = take2(vjp(Primitive::Matmul, &[&lt.input, w], dproj)?);
            x.accumulate(&dx_proj)?;
            *dw = dweight;
            *db = column_sums(dproj);
        }
        d_out = x.into_grad();
    }

    for (pos, &id) in trace.token_ids.iter().enumerate() {
        for (o, v) in grads.token_embedding.row_mut(id).iter_mut().zip(d_out.row(pos)) {
            *o += v;
        }
        for (o, v) in grads.position_embedding.row_mut(pos).iter_mut().zip(d_out.row(pos)) {
            *o += v;
        }
    }
    Ok(Gradients {
        input: d_out,
        params: grads,
    })
}

/// Gradients of the scalar whose cotangent on the logits is `d_logits`.
/// Works for train-mode traces (dropout masks are honored).
pub fn gradients(params: &Parameters, trace: &ForwardTrace, d_logits: &Tensor) -> Result<Gradients, ModelError> {
    check_fresh(params, trace)?;
    backward(params, trace, d_logits, GeluDerivative::Exact)
}

fn check_fresh(params: &Parameters, trace: &ForwardTrace) -> Result<(), ModelError> {
    let expected = params.fingerprint();
    if trace.fingerprint != expected {
        return Err(ModelError::StaleTrace {
            expected,
            found: trace.fingerprint,
        });
    }
    Ok(())
}

fn check_selector(params: &Parameters, trace: &ForwardTrace, sel: OutputSelector) -> Result<(), ModelError> {
    if trace.mode != Mode::Eval {
        return Err(ModelError::TrainModeTrace);
    }
    if sel.class >= params.config.n_classes {
        return Err(ModelError::ClassOutOfRange {
            class: sel.class,
            n_classes: params.config.n_classes,
        });
    }
    check_fresh(params, trace)
}

/// Exact gradient of the selected output w.r.t. the summed token+position
/// embedding, shape `[T, d_model]`.
pub fn input_gradient(params: &Parameters, trace: &ForwardTrace, sel: OutputSelector) -> Result<Tensor, ModelError> {
    check_selector(params, trace, sel)?;
    Ok(backward(params, trace, &trace.logit_cotangent(sel), GeluDerivative::Exact)?.input)
}

/// [`input_gradient`] with a deliberately wrong GELU derivative. Only meant
/// as a negative control for gradient-check harnesses.
#[doc(hidden)]
pub fn input_gradient_with_faulty_gelu(
    params: &Parameters,
    trace: &ForwardTrace,
    sel: OutputSelector,
) -> Result<Tensor, ModelError> {
    check_selector(params, trace, sel)?;
    Ok(backward(params, trace, &trace.logit_cotangent(sel), GeluDerivative::Faulty)?.input)
}
