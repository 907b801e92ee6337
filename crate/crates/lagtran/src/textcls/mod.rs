//! Source-domain text-classifier training, frozen-model pseudo-labeling of
//! target captions, and the open-world confidence-threshold extension.

mod model;
mod pseudo;

pub(crate) use model::cosine_lr;
pub use model::{train_text_classifier, TextClassifierModel, TextTrainConfig, TextTrainStats};
pub use pseudo::{
    pseudo_label, PseudoLabelMode, PseudoLabelRecord, PseudoLabelSet, DEFAULT_TAU,
};

use serde::{Deserialize, Serialize};

use crate::hash::fnv1a64;
use crate::scalar::Scalar;

/// Caption encoder interface. Raw caption text goes in untouched; any
/// tokenization is the encoder's own business. Implementations must be
/// deterministic given their parameters and emit a fixed dimension.
///
/// The shipped [`HashedNgramEncoder`] is parameter-free; pretrained sentence
/// encoders attach behind this same trait.
pub trait TextEncoder<S: Scalar> {
    /// Identifier stored in checkpoints so a file is never decoded as the
    /// wrong encoder type.
    const KIND: &'static str;

    fn dim(&self) -> usize;

    fn encode(&self, text: &str) -> Vec<S>;

    fn kind(&self) -> &'static str {
        Self::KIND
    }
}

/// Hashed bag-of-n-grams over whitespace tokens, n in {1, 2}. Each n-gram is
/// FNV-hashed into a fixed number of count buckets. No case folding or other
/// text preprocessing happens here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedNgramEncoder {
    dim: usize,
}

impl HashedNgramEncoder {
    pub const DEFAULT_DIM: usize = 512;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "encoder dimension must be positive");
        HashedNgramEncoder { dim }
    }
}

impl Default for HashedNgramEncoder {
    fn default() -> Self {
        HashedNgramEncoder::new(Self::DEFAULT_DIM)
    }
}

impl<S: Scalar> TextEncoder<S> for HashedNgramEncoder {
    const KIND: &'static str = "hashed-ngram";

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Vec<S> {
        let mut counts = vec![S::zero(); self.dim];
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let one = S::one();
        for tok in &tokens {
            let bucket = (fnv1a64(tok) % self.dim as u64) as usize;
            counts[bucket] += one;
        }
        for pair in tokens.windows(2) {
            let bigram = format!("{} {}", pair[0], pair[1]);
            let bucket = (fnv1a64(&bigram) % self.dim as u64) as usize;
            counts[bucket] += one;
        }
        counts
    }
}
