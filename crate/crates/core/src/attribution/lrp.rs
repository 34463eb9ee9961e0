//! Layerwise relevance propagation through the encoder.
//!
//! Every layer is reduced to a set of contributions `z_ij` from input `i` to
//! output `j`, and the relevance of `j` is split over its inputs with the αβ
//! rule. Contributions come from:
//!
//! * dense layers: `z_ij = x_i · w_ij` (bias excluded);
//! * residual adds: the two branch values themselves;
//! * LayerNorm and self-attention: the first-order Taylor term around a zero
//!   reference, `z_ij = J_ji(x) · x_i`;
//! * GELU: none, relevance passes straight through.
//!
//! Biases never receive relevance, so with `α − β = 1` each step preserves
//! the total exactly (up to rounding).

use super::{AttributionConfig, AttributionError, Method, RelevanceMap};
use crate::model::{ForwardTrace, LayerParams, ModelError, Parameters};
use crate::tensor::{layernorm_jacobian, Tensor, LAYERNORM_EPS};

/// The αβ redistribution rule. `epsilon` is the smallest denominator
/// magnitude treated as non-empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaBeta {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl Default for AlphaBeta {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.0,
            epsilon: 1e-9,
        }
    }
}

impl AlphaBeta {
    /// Splits `relevance` over `contributions`, adding the shares into `out`.
    ///
    /// Positive contributions share `α·R`, negative ones `−β·R`. When one
    /// side is empty the other side takes all of `R`; when both are empty
    /// `R` is spread evenly.
    pub fn redistribute(&self, contributions: &[f64], relevance: f64, out: &mut [f64]) {
        debug_assert_eq!(contributions.len(), out.len());
        if relevance == 0.0 {
            return;
        }
        let (mut pos, mut neg) = (0.0, 0.0);
        for &z in contributions {
            if z > 0.0 {
                pos += z;
            } else {
                neg += z;
            }
        }
        let has_pos = pos > self.epsilon;
        let has_neg = neg < -self.epsilon;
        let (cp, cn) = match (has_pos, has_neg) {
            (true, true) => (self.alpha * relevance / pos, -self.beta * relevance / neg),
            (true, false) => (relevance / pos, 0.0),
            (false, true) => (0.0, relevance / neg),
            (false, false) => {
                let share = relevance / out.len() as f64;
                out.iter_mut().for_each(|o| *o += share);
                return;
            }
        };
        for (o, &z) in out.iter_mut().zip(contributions) {
            if z > 0.0 {
                *o += cp * z;
            } else if z < 0.0 {
                *o += cn * z;
            }
        }
    }
}

/// Relevance on the inputs of `y = x·W + b` (one row).
pub fn dense_redistribute(x: &[f64], w: &Tensor, r_out: &[f64], rule: &AlphaBeta) -> Vec<f64> {
    let (n_in, n_out) = (w.rows(), w.cols());
    debug_assert_eq!(x.len(), n_in);
    debug_assert_eq!(r_out.len(), n_out);
    let mut r_in = vec![0.0; n_in];
    let mut z = vec![0.0; n_in];
    for (j, &rj) in r_out.iter().enumerate() {
        if rj == 0.0 {
            continue;
        }
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = x[i] * w.data()[i * n_out + j];
        }
        rule.redistribute(&z, rj, &mut r_in);
    }
    r_in
}

/// Relevance on both branches of an elementwise `a + b`.
pub fn residual_redistribute(a: &[f64], b: &[f64], r_out: &[f64], rule: &AlphaBeta) -> (Vec<f64>, Vec<f64>) {
    let mut ra = vec![0.0; a.len()];
    let mut rb = vec![0.0; b.len()];
    for j in 0..r_out.len() {
        let mut share = [0.0; 2];
        rule.redistribute(&[a[j], b[j]], r_out[j], &mut share);
        ra[j] = share[0];
        rb[j] = share[1];
    }
    (ra, rb)
}

/// Taylor rule: contributions `jac[j, i] · x[i]` for every output `j`.
/// `jac` is output-major, `[m, n]`.
pub fn taylor_redistribute(jac: &Tensor, x: &[f64], r_out: &[f64], rule: &AlphaBeta) -> Vec<f64> {
    let n = x.len();
    debug_assert_eq!(jac.cols(), n);
    let mut r_in = vec![0.0; n];
    let mut z = vec![0.0; n];
    for (j, &rj) in r_out.iter().enumerate() {
        if rj == 0.0 {
            continue;
        }
        for ((zi, &ji), &xi) in z.iter_mut().zip(jac.row(j)).zip(x) {
            *zi = ji * xi;
        }
        rule.redistribute(&z, rj, &mut r_in);
    }
    r_in
}

/// Jacobian of the multi-head attention context (before the output
/// projection) with respect to the layer input, flattened output-major:
/// entry `[(s·d + j), (t·d + i)] = ∂context[s, j] / ∂x[t, i]`.
///
/// Uses the eval-mode attention weights and projections cached in the trace.
pub fn attention_jacobian(lp: &LayerParams, x: &Tensor, q: &Tensor, k: &Tensor, v: &Tensor, attention: &Tensor) -> Tensor {
    let (t_len, d) = (x.rows(), x.cols());
    let n_heads = attention.shape()[0];
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let td = t_len * d;
    let mut jac = vec![0.0; td * td];
    let a = attention.data();
    let at = |h: usize, s: usize, u: usize| a[(h * t_len + s) * t_len + u];

    for h in 0..n_heads {
        let cols = h * dh..(h + 1) * dh;
        // query side: qside[v][i] = scale · Σ_k Wq[i,k] K[v,k]
        // key side:   kside[s][i] = scale · Σ_k Q[s,k] Wk[i,k]
        let mut qside = vec![0.0; t_len * d];
        let mut kside = vec![0.0; t_len * d];
        for r in 0..t_len {
            for i in 0..d {
                let (mut sq, mut sk) = (0.0, 0.0);
                for kk in cols.clone() {
                    sq += lp.wq.get(i, kk) * k.get(r, kk);
                    sk += q.get(r, kk) * lp.wk.get(i, kk);
                }
                qside[r * d + i] = scale * sq;
                kside[r * d + i] = scale * sk;
            }
        }
        // context[s, j] for this head, recomputed from the cached weights.
        let mut ctx = vec![0.0; t_len * dh];
        for s in 0..t_len {
            for (jj, j) in cols.clone().enumerate() {
                ctx[s * dh + jj] = (0..t_len).map(|u| at(h, s, u) * v.get(u, j)).sum();
            }
        }
        for s in 0..t_len {
            for (jj, j) in cols.clone().enumerate() {
                let c_sj = ctx[s * dh + jj];
                let row = &mut jac[(s * d + j) * td..(s * d + j + 1) * td];
                for t in 0..t_len {
                    let a_st = at(h, s, t);
                    let centered = a_st * (v.get(t, j) - c_sj);
                    for i in 0..d {
                        row[t * d + i] = a_st * lp.wv.get(i, j) + centered * kside[s * d + i];
                    }
                }
                // diagonal block t == s: query-side term
                for i in 0..d {
                    let mut acc = 0.0;
                    for u in 0..t_len {
                        acc += at(h, s, u) * (v.get(u, j) - c_sj) * qside[u * d + i];
                    }
                    row[s * d + i] += acc;
                }
            }
        }
    }
    Tensor::matrix(td, td, jac).expect("non-empty attention jacobian")
}

/// Result of a full LRP pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LrpOutcome {
    /// Relevance on the input embedding, `[T, d]`.
    pub input: Tensor,
    /// Relevance seeded at the output, `f_c(x)`.
    pub seed: f64,
    /// Total relevance after each propagation step, top to bottom, labelled.
    pub steps: Vec<(String, f64)>,
}

fn check(stage: String, r: &[f64], steps: &mut Vec<(String, f64)>) -> Result<(), AttributionError> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(AttributionError::NonFinite { layer: stage });
    }
    steps.push((stage, r.iter().sum()));
    Ok(())
}

fn rows_apply(t_len: usize, d_out: usize, mut f: impl FnMut(usize) -> Vec<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(t_len * d_out);
    for t in 0..t_len {
        out.extend(f(t));
    }
    out
}

/// Propagates `f_c(x)` from class `c` down to the input embedding.
pub fn lrp_relevance(params: &Parameters, trace: &ForwardTrace, cfg: &AttributionConfig) -> Result<LrpOutcome, AttributionError> {
    cfg.validate()?;
    let sel = cfg.selector(trace);
    if sel.class >= params.config.n_classes {
        return Err(ModelError::ClassOutOfRange {
            class: sel.class,
            n_classes: params.config.n_classes,
        }
        .into());
    }
    if trace.mode != crate::model::Mode::Eval {
        return Err(ModelError::TrainModeTrace.into());
    }
    if trace.fingerprint != params.fingerprint() {
        return Err(ModelError::StaleTrace {
            expected: params.fingerprint(),
            found: trace.fingerprint,
        }
        .into());
    }
    let rule = cfg.alpha_beta();
    let (t_len, d) = (trace.len(), params.config.d_model);
    let seed = trace.selected_output(sel);
    let mut steps = Vec::new();

    let mut r_logits = vec![0.0; params.config.n_classes];
    r_logits[sel.class] = seed;
    let r_pooled = dense_redistribute(trace.pooled.data(), &params.head_weight, &r_logits, &rule);
    check("classifier head".into(), &r_pooled, &mut steps)?;
    let mut r = vec![0.0; t_len * d];
    r[..d].copy_from_slice(&r_pooled);

    for (li, (lp, lt)) in params.layers.iter().zip(&trace.layers).enumerate().rev() {
        let name = |s: &str| format!("layer {li} {s}");

        let r_resid2 = rows_apply(t_len, d, |t| {
            let jac = layernorm_jacobian(lt.resid2.row(t), lp.ln2_gamma.data(), LAYERNORM_EPS);
            taylor_redistribute(&jac, lt.resid2.row(t), &r[t * d..(t + 1) * d], &rule)
        });
        check(name("output layernorm"), &r_resid2, &mut steps)?;

        let (r_hidden_skip, r_ff) = residual_redistribute(lt.hidden.data(), lt.ff_out.data(), &r_resid2, &rule);
        check(name("feed-forward residual"), &[r_hidden_skip.as_slice(), r_ff.as_slice()].concat(), &mut steps)?;

        // ff_act -> ff_out; GELU passes relevance through unchanged.
        let r_pre = rows_apply(t_len, params.config.d_ff, |t| {
            dense_redistribute(lt.ff_act.row(t), &lp.w2, &r_ff[t * d..(t + 1) * d], &rule)
        });
        let f = params.config.d_ff;
        let r_hidden_ff = rows_apply(t_len, d, |t| dense_redistribute(lt.hidden.row(t), &lp.w1, &r_pre[t * f..(t + 1) * f], &rule));
        let r_hidden: Vec<f64> = r_hidden_skip.iter().zip(&r_hidden_ff).map(|(a, b)| a + b).collect();
        check(name("feed-forward"), &r_hidden, &mut steps)?;

        let r_resid1 = rows_apply(t_len, d, |t| {
            let jac = layernorm_jacobian(lt.resid1.row(t), lp.ln1_gamma.data(), LAYERNORM_EPS);
            taylor_redistribute(&jac, lt.resid1.row(t), &r_hidden[t * d..(t + 1) * d], &rule)
        });
        check(name("attention layernorm"), &r_resid1, &mut steps)?;

        let (r_x_skip, r_attn_out) = residual_redistribute(lt.input.data(), lt.attn_out.data(), &r_resid1, &rule);
        let r_context = rows_apply(t_len, d, |t| dense_redistribute(lt.context.row(t), &lp.wo, &r_attn_out[t * d..(t + 1) * d], &rule));
        check(name("attention output projection"), &[r_x_skip.as_slice(), r_context.as_slice()].concat(), &mut steps)?;

        let jac = attention_jacobian(lp, &lt.input, &lt.q, &lt.k, &lt.v, &lt.attention);
        let r_x_attn = taylor_redistribute(&jac, lt.input.data(), &r_context, &rule);
        r = r_x_skip.iter().zip(&r_x_attn).map(|(a, b)| a + b).collect();
        check(name("self-attention"), &r, &mut steps)?;
    }

    Ok(LrpOutcome {
        input: Tensor::matrix(t_len, d, r).map_err(ModelError::from)?,
        seed,
        steps,
    })
}

/// LRP-αβ relevance map; per-token score is the sum of absolute
/// per-dimension relevances.
pub fn attribute_lrp(params: &Parameters, trace: &ForwardTrace, cfg: &AttributionConfig) -> Result<RelevanceMap, AttributionError> {
    let outcome = lrp_relevance(params, trace, cfg)?;
    let sel = cfg.selector(trace);
    let scores = (0..outcome.input.rows())
        .map(|t| outcome.input.row(t).iter().map(|v| v.abs()).sum())
        .collect();
    Ok(RelevanceMap {
        method: Method::Lrp,
        token_ids: trace.token_ids.clone(),
        dims: Some(outcome.input),
        scores,
        class: sel.class,
        target: sel.target,
        output: outcome.seed,
        fingerprint: trace.fingerprint,
    })
}
