use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LayerParams, ModelError, OutputSelector, Parameters, Target};
use crate::tensor::{
    add, add_row_bias, gelu, layernorm, matmul, matmul_nt, softmax_in_place, Tensor, LAYERNORM_EPS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active, masks drawn from `dropout_seed`.
    Train { dropout_seed: u64 },
}

/// Inverted-dropout masks (entries `0` or `1/(1-p)`) for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub attention: Tensor,
    pub attn_out: Tensor,
    pub ff_out: Tensor,
}

/// Cached intermediates of one encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Layer input `x`, `[T, d]`.
    pub input: Tensor,
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    /// Softmax attention weights `[H, T, T]`, before dropout.
    pub attention: Tensor,
    /// Concatenated per-head context `[T, d]`.
    pub context: Tensor,
    /// Output projection after dropout.
    pub attn_out: Tensor,
    /// `x + attn_out`
    pub resid1: Tensor,
    /// `LayerNorm(resid1)`
    pub hidden: Tensor,
    /// FFN pre-activation `[T, d_ff]`.
    pub ff_pre: Tensor,
    pub ff_act: Tensor,
    /// FFN output after dropout.
    pub ff_out: Tensor,
    /// `hidden + ff_out`
    pub resid2: Tensor,
    /// `LayerNorm(resid2)`; input of the next layer.
    pub output: Tensor,
    pub masks: Option<DropoutMasks>,
}

impl LayerTrace {
    /// Attention weights of head `h` as a `[T, T]` matrix.
    pub fn head_attention(&self, h: usize) -> Tensor {
        let t = self.attention.shape()[1];
        let start = h * t * t;
        Tensor::matrix(t, t, self.attention.data()[start..start + t * t].to_vec()).expect("square")
    }

    pub fn n_heads(&self) -> usize {
        self.attention.shape()[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub token_ids: Vec<usize>,
    pub mode: Mode,
    /// Fingerprint of the parameters that produced this trace.
    pub fingerprint: u64,
    /// Summed token + position embedding `[T, d]`: the attribution input.
    pub embedding: Tensor,
    pub layers: Vec<LayerTrace>,
    /// Final `[CLS]` vector.
    pub pooled: Tensor,
    pub logits: Tensor,
    pub probs: Tensor,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Argmax of the logits, lowest index on ties.
    pub fn predicted_class(&self) -> usize {
        argmax(self.logits.data())
    }

    /// The scalar `f_c(x)` picked out by `sel`.
    pub fn selected_output(&self, sel: OutputSelector) -> f64 {
        match sel.target {
            Target::Logit => self.logits.data()[sel.class],
            Target::Probability => self.probs.data()[sel.class],
        }
    }

    /// Cotangent on the logits that backpropagates the selected scalar.
    pub fn logit_cotangent(&self, sel: OutputSelector) -> Tensor {
        let c = self.logits.len();
        let mut up = vec![0.0; c];
        match sel.target {
            Target::Logit => up[sel.class] = 1.0,
            Target::Probability => {
                let p = self.probs.data();
                for (j, u) in up.iter_mut().enumerate() {
                    let delta = if j == sel.class { 1.0 } else { 0.0 };
                    *u = p[sel.class] * (delta - p[j]);
                }
            }
        }
        Tensor::vector(up)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_ids(params: &Parameters, ids: &[usize]) -> Result<(), ModelError> {
    let c = &params.config;
    if ids.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    if ids.len() > c.max_seq_len {
        return Err(ModelError::SequenceTooLong {
            len: ids.len(),
            max: c.max_seq_len,
        });
    }
    if let Some((position, &id)) = ids.iter().enumerate().find(|(_, &id)| id >= c.vocab_size) {
        return Err(ModelError::TokenOutOfRange {
            position,
            id,
            vocab_size: c.vocab_size,
        });
    }
    Ok(())
}

/// Summed token and position embeddings.
pub(crate) fn embed(params: &Parameters, ids: &[usize]) -> Tensor {
    let d = params.config.d_model;
    let mut x = Tensor::zeros(&[ids.len(), d]);
    for (t, &id) in ids.iter().enumerate() {
        let tok = params.token_embedding.row(id);
        let pos = params.position_embedding.row(t);
        for ((o, a), b) in x.row_mut(t).iter_mut().zip(tok).zip(pos) {
            *o = a + b;
        }
    }
    x
}

/// Columns `[h·dh, (h+1)·dh)` of a `[T, d]` matrix.
pub(crate) fn head_columns(x: &Tensor, h: usize, dh: usize) -> Tensor {
    let t = x.rows();
    let mut data = Vec::with_capacity(t * dh);
    for r in 0..t {
        data.extend_from_slice(&x.row(r)[h * dh..(h + 1) * dh]);
    }
    Tensor::matrix(t, dh, data).expect("non-empty head slice")
}

pub(crate) fn scatter_head_columns(dst: &mut Tensor, src: &Tensor, h: usize, dh: usize) {
    for r in 0..src.rows() {
        dst.row_mut(r)[h * dh..(h + 1) * dh].copy_from_slice(src.row(r));
    }
}

/// Multi-head self-attention up to (not including) the output projection.
/// Returns `(q, k, v, attention [H,T,T], context [T,d])`.
pub(crate) fn self_attention(
    lp: &LayerParams,
    x: &Tensor,
    n_heads: usize,
    attention_mask: Option<&Tensor>,
) -> Result<(Tensor, Tensor, Tensor, Tensor, Tensor), ModelError> {
    let t = x.rows();
    let d = x.cols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = add_row_bias(&matmul(x, &lp.wq)?, &lp.bq)?;
    let k = add_row_bias(&matmul(x, &lp.wk)?, &lp.bk)?;
    let v = add_row_bias(&matmul(x, &lp.wv)?, &lp.bv)?;
    let mut attention = Vec::with_capacity(n_heads * t * t);
    let mut context = Tensor::zeros(&[t, d]);
    for h in 0..n_heads {
        let qh = head_columns(&q, h, dh);
        let kh = head_columns(&k, h, dh);
        let vh = head_columns(&v, h, dh);
        let mut a = matmul_nt(&qh, &kh)?.scale(scale);
        for r in 0..t {
            softmax_in_place(a.row_mut(r));
        }
        attention.extend_from_slice(a.data());
        let used = match attention_mask {
            Some(m) => {
                let mh = Tensor::matrix(t, t, m.data()[h * t * t..(h + 1) * t * t].to_vec())?;
                a.zip_with(&mh, "attention dropout", |p, s| p * s)?
            }
            None => a,
        };
        scatter_head_columns(&mut context, &matmul(&used, &vh)?, h, dh);
    }
    let attention = Tensor::new(vec![n_heads, t, t], attention)?;
    Ok((q, k, v, attention, context))
}

fn dropout_mask(rng: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Tensor {
    let keep = 1.0 / (1.0 - p);
    let mut m = Tensor::zeros(shape);
    for v in m.data_mut() {
        *v = if rng.random::<f64>() < p { 0.0 } else { keep };
    }
    m
}

fn layer_forward(
    lp: &LayerParams,
    x: Tensor,
    n_heads: usize,
    masks: Option<DropoutMasks>,
) -> Result<LayerTrace, ModelError> {
    let (q, k, v, attention, context) = self_attention(lp, &x, n_heads, masks.as_ref().map(|m| &m.attention))?;
    let mut attn_out = add_row_bias(&matmul(&context, &lp.wo)?, &lp.bo)?;
    if let Some(m) = &masks {
        attn_out = attn_out.zip_with(&m.attn_out, "dropout", |a, b| a * b)?;
    }
    let resid1 = add(&x, &attn_out)?;
    let hidden = layernorm(&resid1, &lp.ln1_gamma, &lp.ln1_beta, LAYERNORM_EPS)?;
    let ff_pre = add_row_bias(&matmul(&hidden, &lp.w1)?, &lp.b1)?;
    let ff_act = gelu(&ff_pre);
    let mut ff_out = add_row_bias(&matmul(&ff_act, &lp.w2)?, &lp.b2)?;
    if let Some(m) = &masks {
        ff_out = ff_out.zip_with(&m.ff_out, "dropout", |a, b| a * b)?;
    }
    let resid2 = add(&hidden, &ff_out)?;
    let output = layernorm(&resid2, &lp.ln2_gamma, &lp.ln2_beta, LAYERNORM_EPS)?;
    Ok(LayerTrace {
        input: x,
        q,
        k,
        v,
        attention,
        context,
        attn_out,
        resid1,
        hidden,
        ff_pre,
        ff_act,
        ff_out,
        resid2,
        output,
        masks,
    })
}

/// Runs the encoder classifier. Position 0 is expected to hold `[CLS]`.
pub fn forward(params: &Parameters, token_ids: &[usize], mode: Mode) -> Result<ForwardTrace, ModelError> {
    check_ids(params, token_ids)?;
    forward_from_embedding(params, token_ids, embed(params, token_ids), mode)
}

/// Forward pass from an explicit `[T, d]` input embedding; `token_ids` is
/// recorded in the trace only.
pub fn forward_from_embedding(
    params: &Parameters,
    token_ids: &[usize],
    embedding: Tensor,
    mode: Mode,
) -> Result<ForwardTrace, ModelError> {
    let c = &params.config;
    let t = embedding.rows();
    let mut rng = match mode {
        Mode::Train { dropout_seed } if c.dropout_prob > 0.0 => Some(ChaCha8Rng::seed_from_u64(dropout_seed)),
        _ => None,
    };
    let mut layers = Vec::with_capacity(c.n_layers);
    let mut x = embedding.clone();
    for lp in &params.layers {
        let masks = rng.as_mut().map(|r| DropoutMasks {
            attention: dropout_mask(r, &[c.n_heads, t, t], c.dropout_prob),
            attn_out: dropout_mask(r, &[t, c.d_model], c.dropout_prob),
            ff_out: dropout_mask(r, &[t, c.d_model], c.dropout_prob),
        });
        let lt = layer_forward(lp, x, c.n_heads, masks)?;
        x = lt.output.clone();
        layers.push(lt);
    }
    let pooled = Tensor::matrix(1, c.d_model, x.row(0).to_vec())?;
    let logits = add_row_bias(&matmul(&pooled, &params.head_weight)?, &params.head_bias)?.reshape(vec![c.n_classes])?;
    let mut probs = logits.clone();
    softmax_in_place(probs.data_mut());
    Ok(ForwardTrace {
        token_ids: token_ids.to_vec(),
        mode,
        fingerprint: params.fingerprint(),
        embedding,
        layers,
        pooled: pooled.reshape(vec![c.d_model])?,
        logits,
        probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init, ModelConfig};

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            vocab_size: 20,
            max_seq_len: 10,
            n_classes: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let p = init(&cfg()).unwrap();
        let tr = forward(&p, &[2, 5, 7, 9], Mode::Eval).unwrap();
        for &q in tr.probs.data() {
            assert!((q - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(tr.predicted_class(), 0);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let p = init(&cfg()).unwrap().perturbed(4, 0.3);
        let tr = forward(&p, &[2, 3, 4, 5, 6, 7], Mode::Train { dropout_seed: 1 }).unwrap();
        for lt in &tr.layers {
            let t = tr.len();
            for row in lt.attention.data().chunks(t) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-8);
            }
        }
        assert!((tr.probs.sum() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn eval_is_deterministic_and_train_mode_is_not_eval() {
        let p = init(&cfg()).unwrap().perturbed(5, 0.3);
        let a = forward(&p, &[2, 8, 1, 4], Mode::Eval).unwrap();
        let b = forward(&p, &[2, 8, 1, 4], Mode::Eval).unwrap();
        assert_eq!(a, b);
        let tr = forward(&p, &[2, 8, 1, 4], Mode::Train { dropout_seed: 3 }).unwrap();
        assert_ne!(tr.logits, a.logits);
        let again = forward(&p, &[2, 8, 1, 4], Mode::Train { dropout_seed: 3 }).unwrap();
        assert_eq!(tr.logits, again.logits);
    }

    #[test]
    fn input_errors() {
        let p = init(&cfg()).unwrap();
        assert!(matches!(forward(&p, &[], Mode::Eval), Err(ModelError::EmptySequence)));
        assert!(matches!(
            forward(&p, &[2; 11], Mode::Eval),
            Err(ModelError::SequenceTooLong { len: 11, max: 10 })
        ));
        assert!(matches!(
            forward(&p, &[2, 20], Mode::Eval),
            Err(ModelError::TokenOutOfRange { position: 1, id: 20, .. })
        ));
    }

    #[test]
    fn probability_cotangent_matches_softmax_derivative() {
        let p = init(&cfg()).unwrap().perturbed(6, 0.5);
        let tr = forward(&p, &[2, 3, 4], Mode::Eval).unwrap();
        let sel = OutputSelector::probability(1);
        let up = tr.logit_cotangent(sel);
        let h = 1e-6;
        for j in 0..3 {
            let mut plus = tr.logits.clone();
            plus.data_mut()[j] += h;
            let mut minus = tr.logits.clone();
            minus.data_mut()[j] -= h;
            softmax_in_place(plus.data_mut());
            softmax_in_place(minus.data_mut());
            let fd = (plus.data()[1] - minus.data()[1]) / (2.0 * h);
            assert!((fd - up.data()[j]).abs() < 1e-8);
        }
    }
}
