//! Small fully connected ReLU network used to check relevance rules where
//! closed forms are known.
//!
//! For a ReLU network with a linear output, the basic LRP rule (whose
//! denominator includes the bias) gives exactly gradient × input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::AlphaBeta;
use crate::tensor::Tensor;

/// Relevance rule for [`ReluMlp::lrp`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrpRule {
    /// `R_i = Σ_j x_i w_ij / z_j · R_j`, with `z_j` including the bias.
    Z,
    /// αβ rule with bias-free denominators.
    AlphaBeta(AlphaBeta),
}

/// `x → ReLU(x W_1 + b_1) → … → x W_L + b_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluMlp {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Vec<f64>>,
}

/// Activations of one forward pass; `inputs[l]` feeds layer `l`, `pre[l]`
/// is its affine output.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.pre.last().expect("non-empty network")
    }

    /// Smallest `|z_j|` over all units.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.pre.iter().flatten().fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

impl ReluMlp {
    /// Random network with widths `sizes` (input first), Gaussian weights
    /// scaled by `1/sqrt(fan_in)` and Gaussian biases scaled by `bias_scale`.
    pub fn random(sizes: &[usize], bias_scale: f64, seed: u64) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output widths");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        for w in sizes.windows(2) {
            let scale = 1.0 / (w[0] as f64).sqrt();
            let data = (0..w[0] * w[1]).map(|_| scale * normal()).collect();
            weights.push(Tensor::matrix(w[0], w[1], data).expect("positive widths"));
            biases.push((0..w[1]).map(|_| bias_scale * normal()).collect());
        }
        Self { weights, biases }
    }

    pub fn forward(&self, x: &[f64]) -> MlpTrace {
        let n = self.weights.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut a = x.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z: Vec<f64> = (0..w.cols())
                .map(|j| b[j] + a.iter().enumerate().map(|(i, ai)| ai * w.get(i, j)).sum::<f64>())
                .collect();
            let next = if l + 1 < n { z.iter().map(|v| v.max(0.0)).collect() } else { z.clone() };
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        MlpTrace { inputs, pre }
    }

    /// `∂ output[class] / ∂x`.
    pub fn input_gradient(&self, trace: &MlpTrace, class: usize) -> Vec<f64> {
        let mut g = vec![0.0; self.weights.last().unwrap().cols()];
        g[class] = 1.0;
        for l in (0..self.weights.len()).rev() {
            if l + 1 < self.weights.len() {
                for (gj, zj) in g.iter_mut().zip(&trace.pre[l]) {
                    if *zj <= 0.0 {
                        *gj = 0.0;
                    }
                }
            }
            let w = &self.weights[l];
            g = (0..w.rows()).map(|i| w.row(i).iter().zip(&g).map(|(wij, gj)| wij * gj).sum()).collect();
        }
        g
    }

    pub fn gradient_times_input(&self, x: &[f64], class: usize) -> Vec<f64> {
        let trace = self.forward(x);
        self.input_gradient(&trace, class).iter().zip(x).map(|(g, x)| g * x).collect()
    }

    /// Relevance of each input for `output[class]`, seeded with its value.
    pub fn lrp(&self, x: &[f64], class: usize, rule: LrpRule) -> Vec<f64> {
        let trace = self.forward(x);
        let mut r = vec![0.0; trace.output().len()];
        r[class] = trace.output()[class];
        for l in (0..self.weights.len()).rev() {
            let (w, a) = (&self.weights[l], &trace.inputs[l]);
            r = match rule {
                LrpRule::Z => {
                    let mut out = vec![0.0; a.len()];
                    for (j, &rj) in r.iter().enumerate() {
                        let zj = trace.pre[l][j];
                        if rj == 0.0 || zj == 0.0 {
                            continue;
                        }
                        for (i, o) in out.iter_mut().enumerate() {
                            *o += a[i] * w.get(i, j) / zj * rj;
                        }
                    }
                    out
                }
                LrpRule::AlphaBeta(ab) => super::dense_redistribute(a, w, &r, &ab),
            };
        }
        r
    }
}
