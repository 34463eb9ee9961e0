//! Token relevance for a classifier decision.
//!
//! Four methods share one output type, [`RelevanceMap`]:
//!
//! | method | per-dimension relevance | per-token reduction |
//! |--------|-------------------------|---------------------|
//! | GS     | `∂f_c/∂x`               | L2 norm             |
//! | GI     | `x ⊙ ∂f_c/∂x`           | L2 norm             |
//! | LRP    | αβ relevance propagation | sum of absolute values |
//! | LAT    | (none)                  | attention-traced mass |
//!
//! `f_c` is the class-`c` logit by default, or its probability.

mod gradient;
mod lat;
mod lrp;
pub mod mlp;
mod record;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{forward, ForwardTrace, Mode, ModelError, OutputSelector, Parameters, Target};
use crate::tensor::Tensor;

pub use gradient::{attribute_gi, attribute_gs};
pub use lat::{attribute_lat, lat_layer_relevance};
pub use lrp::{
    attention_jacobian, attribute_lrp, dense_redistribute, lrp_relevance, residual_redistribute, taylor_redistribute,
    AlphaBeta, LrpOutcome,
};
pub use record::RelevanceRecord;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("invalid attribution config: {0}")]
    Config(String),
    #[error("non-finite relevance after {layer}")]
    NonFinite { layer: String },
    #[error("trace has no attention matrices")]
    MissingAttention,
    #[error("sentence {index}: {source}")]
    AtSentence {
        index: usize,
        #[source]
        source: Box<AttributionError>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gs,
    Gi,
    Lrp,
    Lat,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Gs, Method::Gi, Method::Lrp, Method::Lat];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Gs => "gs",
            Method::Gi => "gi",
            Method::Lrp => "lrp",
            Method::Lat => "lat",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = AttributionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gs" => Ok(Method::Gs),
            "gi" => Ok(Method::Gi),
            "lrp" => Ok(Method::Lrp),
            "lat" => Ok(Method::Lat),
            other => Err(AttributionError::Config(format!("unknown method `{other}` (expected gs|gi|lrp|lat)"))),
        }
    }
}

/// Settings for one attribution run. The Taylor-rule reference input is
/// always the zero vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributionConfig {
    pub method: Method,
    pub target: Target,
    pub lrp_alpha: f64,
    pub lrp_beta: f64,
    /// Denominators of magnitude at or below this count as empty.
    pub lrp_epsilon: f64,
    /// Explain this class instead of the predicted one.
    pub class: Option<usize>,
}

impl AttributionConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            target: Target::Logit,
            lrp_alpha: 1.0,
            lrp_beta: 0.0,
            lrp_epsilon: 1e-9,
            class: None,
        }
    }

    pub fn validate(&self) -> Result<(), AttributionError> {
        if (self.lrp_alpha - self.lrp_beta - 1.0).abs() > 1e-12 {
            return Err(AttributionError::Config(format!(
                "lrp_alpha - lrp_beta must equal 1 (got {} - {})",
                self.lrp_alpha, self.lrp_beta
            )));
        }
        if self.lrp_beta < 0.0 {
            return Err(AttributionError::Config("lrp_beta must be non-negative".into()));
        }
        if !(self.lrp_epsilon > 0.0) {
            return Err(AttributionError::Config("lrp_epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn alpha_beta(&self) -> AlphaBeta {
        AlphaBeta {
            alpha: self.lrp_alpha,
            beta: self.lrp_beta,
            epsilon: self.lrp_epsilon,
        }
    }

    pub(crate) fn selector(&self, trace: &ForwardTrace) -> OutputSelector {
        OutputSelector {
            class: self.class.unwrap_or_else(|| trace.predicted_class()),
            target: self.target,
        }
    }
}

/// Relevance of every token of one sequence under one method.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap {
    pub method: Method,
    pub token_ids: Vec<usize>,
    /// `[T, d_model]`; absent for LAT.
    pub dims: Option<Tensor>,
    /// Per-token relevance, one entry per token (including `[CLS]`).
    pub scores: Vec<f64>,
    pub class: usize,
    pub target: Target,
    /// The explained scalar `f_c(x)`.
    pub output: f64,
    pub fingerprint: u64,
}

impl RelevanceMap {
    /// Signed sum of the per-dimension relevances (LRP conservation total),
    /// or of the per-token scores when there are no dimensions.
    pub fn total(&self) -> f64 {
        match &self.dims {
            Some(d) => d.sum(),
            None => self.scores.iter().sum(),
        }
    }
}

pub(crate) fn l2_rows(t: &Tensor) -> Vec<f64> {
    (0..t.rows()).map(|r| t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

/// Dispatches on `cfg.method`.
pub fn attribute(params: &Parameters, trace: &ForwardTrace, cfg: &AttributionConfig) -> Result<RelevanceMap, AttributionError> {
    cfg.validate()?;
    match cfg.method {
        Method::Gs => attribute_gs(params, trace, cfg.selector(trace)),
        Method::Gi => attribute_gi(params, trace, cfg.selector(trace)),
        Method::Lrp => attribute_lrp(params, trace, cfg),
        Method::Lat => {
            if trace.fingerprint != params.fingerprint() {
                return Err(ModelError::StaleTrace {
                    expected: params.fingerprint(),
                    found: trace.fingerprint,
                }
                .into());
            }
            let mut map = attribute_lat(trace)?;
            map.class = cfg.selector(trace).class;
            Ok(map)
        }
    }
}

/// Forward pass in eval mode followed by [`attribute`].
pub fn attribute_ids(params: &Parameters, token_ids: &[usize], cfg: &AttributionConfig) -> Result<RelevanceMap, AttributionError> {
    let trace = forward(params, token_ids, Mode::Eval)?;
    attribute(params, &trace, cfg)
}

/// One map per sentence, in input order. Sentences are processed in
/// parallel; the first failing sentence (lowest index) is reported.
pub fn attribute_dataset(
    params: &Parameters,
    sentences: &[Vec<usize>],
    cfg: &AttributionConfig,
) -> Result<Vec<RelevanceMap>, AttributionError> {
    cfg.validate()?;
    sentences
        .par_iter()
        .enumerate()
        .map(|(index, ids)| {
            attribute_ids(params, ids, cfg).map_err(|e| AttributionError::AtSentence {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}
