//! Faithfulness and consistency protocols for relevance maps: word-deletion
//! ablation against a random baseline, word rankings, and Pearson
//! correlation of word-level relevance across models.

mod ablation;
mod correlation;
mod words;

use thiserror::Error;

use crate::attribution::AttributionError;
use crate::model::ModelError;

pub use ablation::{deletion_curve, random_deletion_curve, AblationCurve, DEFAULT_RANDOM_REPEATS};
pub use correlation::{correlate_tables, cross_dataset, seed_robustness, CommonVocab, CorrelationReport, ModelUnderTest};
pub use words::{top_bottom, word_table, word_table_from_tokens, WordRelevanceTable, WordScore, WordStat};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("series lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("correlation needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("correlation undefined: a series has zero variance")]
    ZeroVariance,
    #[error("no sentence is classified correctly; ablation subset is empty")]
    EmptySubset,
    #[error("{left} and {right} share only {count} words (need at least 2)")]
    InsufficientOverlap { left: String, right: String, count: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvaluationError> {
    if x.len() != y.len() {
        return Err(EvaluationError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(EvaluationError::TooFewPoints(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvaluationError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
