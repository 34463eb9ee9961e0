//! Randomized self-checks: input gradients against central differences, and
//! relevance conservation for LRP and LAT.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::attribution::{lat_layer_relevance, lrp_relevance, AttributionConfig, AttributionError, Method};
use crate::data::CLS_ID;
use crate::derive_seed;
use crate::model::{
    forward, forward_from_embedding, input_gradient, input_gradient_with_faulty_gelu, ModelConfig, ModelError, Mode,
    OutputSelector, Parameters,
};
use crate::tensor::{numeric_jacobian, Tensor, FD_STEP};

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const CONSERVATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("nothing to check: trials must be at least 1")]
    NoTrials,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub config: ModelConfig,
    pub trials: usize,
    pub seed: u64,
    /// Scale of the Gaussian noise added to the initialization.
    pub perturbation: f64,
    /// Use a deliberately wrong GELU derivative (negative control).
    pub corrupt_vjp: bool,
}

impl GradcheckOptions {
    pub fn new(config: ModelConfig, trials: usize, seed: u64) -> Self {
        Self {
            config,
            trials,
            seed,
            perturbation: 0.3,
            corrupt_vjp: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub trials: usize,
    pub max_gradient_error: f64,
    pub max_lrp_error: f64,
    pub max_lat_error: f64,
    pub failures: Vec<String>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// `|a − b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Random model and input for trial `trial`.
pub fn random_case(opts: &GradcheckOptions, trial: usize) -> Result<(Parameters, Vec<usize>, usize), ModelError> {
    let s = derive_seed(opts.seed, 0x4752_4144, trial as u64);
    let config = ModelConfig {
        seed: s,
        ..opts.config.clone()
    };
    let params = Parameters::init(&config)?.perturbed(s ^ 1, opts.perturbation);
    let mut rng = ChaCha8Rng::seed_from_u64(s ^ 2);
    let len = rng.random_range(2..=config.max_seq_len.clamp(2, 10));
    let ids = std::iter::once(CLS_ID)
        .chain((1..len).map(|_| rng.random_range(0..config.vocab_size)))
        .collect();
    let class = rng.random_range(0..config.n_classes);
    Ok((params, ids, class))
}

struct TrialResult {
    gradient: f64,
    lrp: (f64, String),
    lat: (f64, String),
}

fn run_trial(opts: &GradcheckOptions, trial: usize) -> Result<TrialResult, VerifyError> {
    let (params, ids, class) = random_case(opts, trial)?;
    let trace = forward(&params, &ids, Mode::Eval)?;
    let sel = OutputSelector::logit(class);
    let analytic = if opts.corrupt_vjp {
        input_gradient_with_faulty_gelu(&params, &trace, sel)?
    } else {
        input_gradient(&params, &trace, sel)?
    };
    let shape = trace.embedding.shape().to_vec();
    let f = |v: &[f64]| {
        let x = Tensor::new(shape.clone(), v.to_vec()).expect("same shape");
        vec![forward_from_embedding(&params, &ids, x, Mode::Eval)
            .map(|t| t.selected_output(sel))
            .unwrap_or(f64::NAN)]
    };
    let numeric = numeric_jacobian(f, &trace.embedding, FD_STEP).map_err(ModelError::from)?;
    let gradient = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max);

    let mut lrp = (0.0, String::new());
    for (alpha, beta) in [(1.0, 0.0), (2.0, 1.0)] {
        let cfg = AttributionConfig {
            lrp_alpha: alpha,
            lrp_beta: beta,
            class: Some(class),
            ..AttributionConfig::new(Method::Lrp)
        };
        let out = lrp_relevance(&params, &trace, &cfg)?;
        let scale = out.seed.abs().max(1.0);
        let stages = out.steps.iter().map(|(s, v)| (s.clone(), *v)).chain([("input".to_string(), out.input.sum())]);
        for (stage, total) in stages {
            let err = (total - out.seed).abs() / scale;
            if err > lrp.0 {
                lrp = (err, format!("alpha={alpha} beta={beta} {stage}"));
            }
        }
    }

    let mut lat = (0.0, String::new());
    let n_layers = trace.layers.len();
    for (k, dist) in lat_layer_relevance(&trace)?.iter().enumerate() {
        let err = (dist.iter().sum::<f64>() - 1.0).abs();
        if err > lat.0 {
            lat = (err, format!("layer {}", n_layers - 1 - k));
        }
    }
    Ok(TrialResult { gradient, lrp, lat })
}

/// Runs `opts.trials` independent random cases in parallel.
pub fn gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport, VerifyError> {
    if opts.trials == 0 {
        return Err(VerifyError::NoTrials);
    }
    opts.config.validate()?;
    let results = (0..opts.trials)
        .into_par_iter()
        .map(|t| run_trial(opts, t))
        .collect::<Result<Vec<_>, _>>()?;
    let mut report = GradcheckReport {
        trials: opts.trials,
        ..Default::default()
    };
    for (t, r) in results.iter().enumerate() {
        report.max_gradient_error = report.max_gradient_error.max(r.gradient);
        report.max_lrp_error = report.max_lrp_error.max(r.lrp.0);
        report.max_lat_error = report.max_lat_error.max(r.lat.0);
        if !(r.gradient < GRADIENT_TOLERANCE) {
            report.failures.push(format!("trial {t}: input gradient relative error {:.3e}", r.gradient));
        }
        if !(r.lrp.0 <= CONSERVATION_TOLERANCE) {
            report.failures.push(format!("trial {t}: lrp conservation error {:.3e} at {}", r.lrp.0, r.lrp.1));
        }
        if !(r.lat.0 <= CONSERVATION_TOLERANCE) {
            report.failures.push(format!("trial {t}: lat conservation error {:.3e} at {}", r.lat.0, r.lat.1));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            vocab_size: 30,
            max_seq_len: 10,
            ..Default::default()
        }
    }

    #[test]
    fn passes_on_small_models() {
        let report = gradcheck(&GradcheckOptions::new(small(), 6, 3)).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.max_gradient_error < GRADIENT_TOLERANCE);
    }

    #[test]
    fn corrupted_gelu_is_caught() {
        let opts = GradcheckOptions {
            corrupt_vjp: true,
            ..GradcheckOptions::new(small(), 3, 3)
        };
        let report = gradcheck(&opts).unwrap();
        assert!(!report.passed());
        assert!(report.failures.iter().all(|f| f.contains("gradient")));
    }

    #[test]
    fn zero_trials_is_an_error() {
        assert!(matches!(gradcheck(&GradcheckOptions::new(small(), 0, 0)), Err(VerifyError::NoTrials)));
    }

    #[test]
    fn cases_are_reproducible() {
        let o = GradcheckOptions::new(small(), 1, 9);
        let (a, ia, ca) = random_case(&o, 4).unwrap();
        let (b, ib, cb) = random_case(&o, 4).unwrap();
        assert_eq!((a, ia, ca), (b, ib, cb));
    }
}
