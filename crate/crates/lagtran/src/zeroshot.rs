//! Target-only pseudo-labeling baselines: match caption embeddings (or
//! caption n-gram embeddings) against class-name embeddings.

use serde::{Deserialize, Serialize};

use crate::corpus::LabelSpace;
use crate::error::{Error, Result};
use crate::linalg::{l2_normalize, Matrix};
use crate::scalar::Scalar;
use crate::textcls::{HashedNgramEncoder, TextEncoder};

/// Sentence embedding interface: deterministic, unit-norm output of fixed
/// dimension. Pretrained sentence encoders attach here; the reference
/// implementation is the hashed bag-of-n-grams encoder with L2
/// normalization.
pub trait SentenceEmbedder<S: Scalar> {
    fn dim(&self) -> usize;

    /// Unit-norm embedding. Text that produces the zero vector before
    /// normalization has no defined similarity and is an error.
    fn embed(&self, text: &str) -> Result<Vec<S>>;
}

/// Reference embedder: hashed n-gram counts, L2-normalized.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct HashedNgramEmbedder {
    encoder: HashedNgramEncoder,
}

impl HashedNgramEmbedder {
    pub fn new(dim: usize) -> Self {
        HashedNgramEmbedder {
            encoder: HashedNgramEncoder::new(dim),
        }
    }
}

impl<S: Scalar> SentenceEmbedder<S> for HashedNgramEmbedder {
    fn dim(&self) -> usize {
        TextEncoder::<S>::dim(&self.encoder)
    }

    fn embed(&self, text: &str) -> Result<Vec<S>> {
        let mut v = self.encoder.encode(text);
        if !l2_normalize(&mut v) {
            return Err(Error::UndefinedSimilarity(format!(
                "text {text:?} embeds to the zero vector"
            )));
        }
        Ok(v)
    }
}

/// Matrix of embedded class names, row order matching the label space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelEmbeddings<S> {
    matrix: Matrix<S>,
}

impl<S: Scalar> LabelEmbeddings<S> {
    pub fn num_classes(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row(&self, class: usize) -> &[S] {
        self.matrix.row(class)
    }

    /// Per-class inner products against a unit-norm embedding.
    pub fn similarities(&self, embedding: &[S]) -> Vec<S> {
        self.matrix.matvec(embedding)
    }
}

/// Embed every class name of the space, in order.
pub fn embed_labels<S: Scalar>(
    space: &LabelSpace,
    embedder: &impl SentenceEmbedder<S>,
) -> Result<LabelEmbeddings<S>> {
    let mut rows = Vec::with_capacity(space.num_classes());
    for name in space.names() {
        if name.trim().is_empty() {
            return Err(Error::validation("empty class name cannot be embedded"));
        }
        rows.push(embedder.embed(name)?);
    }
    Ok(LabelEmbeddings {
        matrix: Matrix::from_rows(rows)?,
    })
}

/// Class with the highest similarity between the caption embedding and the
/// label embeddings, plus that similarity. Ties go to the lowest index.
pub fn text_match_scored<S: Scalar>(
    caption: &str,
    labels: &LabelEmbeddings<S>,
    embedder: &impl SentenceEmbedder<S>,
) -> Result<(usize, S)> {
    let embedding = embedder.embed(caption)?;
    let scores = labels.similarities(&embedding);
    let best = crate::linalg::argmax(&scores);
    Ok((best, scores[best]))
}

pub fn text_match<S: Scalar>(
    caption: &str,
    labels: &LabelEmbeddings<S>,
    embedder: &impl SentenceEmbedder<S>,
) -> Result<usize> {
    text_match_scored(caption, labels, embedder).map(|(c, _)| c)
}

/// All contiguous word n-grams for n = 1..=min(n_max, token count), joined
/// by single spaces, ordered by (n ascending, position ascending), duplicates
/// removed keeping the first occurrence. Whitespace tokenization, no case
/// folding.
pub fn ngrams(text: &str, n_max: usize) -> Vec<String> {
    assert!(n_max >= 1, "n_max must be at least 1");
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for n in 1..=n_max.min(tokens.len()) {
        for window in tokens.windows(n) {
            let gram = window.join(" ");
            if seen.insert(gram.clone()) {
                out.push(gram);
            }
        }
    }
    out
}

/// Best class over all caption n-grams: per-class maximum similarity across
/// n-grams, then argmax over classes. N-grams the embedder rejects carry no
/// evidence and are skipped; if nothing embeds the caption is unmatchable.
pub fn ngram_match_scored<S: Scalar>(
    caption: &str,
    labels: &LabelEmbeddings<S>,
    embedder: &impl SentenceEmbedder<S>,
    n_max: usize,
) -> Result<(usize, S)> {
    let grams = ngrams(caption, n_max);
    if grams.is_empty() {
        return Err(Error::NoEvidence(format!(
            "caption {caption:?} produced no n-grams"
        )));
    }
    let mut best: Option<Vec<S>> = None;
    for gram in &grams {
        let Ok(embedding) = embedder.embed(gram) else {
            continue;
        };
        let scores = labels.similarities(&embedding);
        match &mut best {
            None => best = Some(scores),
            Some(acc) => {
                for (a, s) in acc.iter_mut().zip(scores) {
                    if s > *a {
                        *a = s;
                    }
                }
            }
        }
    }
    let scores = best.ok_or_else(|| {
        Error::NoEvidence(format!("no n-gram of caption {caption:?} could be embedded"))
    })?;
    let winner = crate::linalg::argmax(&scores);
    Ok((winner, scores[winner]))
}

pub fn ngram_match<S: Scalar>(
    caption: &str,
    labels: &LabelEmbeddings<S>,
    embedder: &impl SentenceEmbedder<S>,
    n_max: usize,
) -> Result<usize> {
    ngram_match_scored(caption, labels, embedder, n_max).map(|(c, _)| c)
}
