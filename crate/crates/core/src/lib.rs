//! Transformer-encoder sentiment classifier with explicit gradient and
//! relevance-propagation machinery.
//!
//! * [`tensor`]: dense `f64` tensors, primitive vector-Jacobian products and
//!   Jacobian helpers.
//! * [`model`]: the encoder classifier, its forward trace, input gradients,
//!   training and checkpoints.
//! * [`attribution`]: gradient sensitivity, gradient × input, LRP-αβ and
//!   layerwise attention tracing.
//! * [`evaluation`]: word-deletion ablation, word rankings and Pearson
//!   correlation reports.
//! * [`data`]: TSV corpora, tokenizer, vocabulary and the synthetic cue-word
//!   corpus.
//! * [`verify`]: randomized gradient and conservation checks.

pub mod attribution;
pub mod data;
pub mod evaluation;
pub mod model;
pub mod tensor;
pub mod verify;

use std::io::Write;
use std::path::Path;

/// SplitMix64 finalizer over `base` and two stream indices.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9).rotate_left(31);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
