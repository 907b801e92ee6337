//! Data model: samples, domain splits, manifest I/O, text-supervision
//! subsampling and the synthetic two-domain benchmark.

mod label_space;
mod manifest;
mod synth;

pub use label_space::{LabelSpace, OUTLIER_NAME};
pub use manifest::{load_manifest, serialize_manifest, LoadMode};
pub use synth::{synth_benchmark, synth_unida_benchmark, SynthConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sample payload: a file reference for image data, or an inline feature
/// vector for synthetic data and precomputed video features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload<S> {
    Path(String),
    Features(Vec<S>),
}

impl<S: Scalar> Payload<S> {
    pub fn features(&self) -> Option<&[S]> {
        match self {
            Payload::Features(v) => Some(v),
            Payload::Path(_) => None,
        }
    }
}

/// One image or video-segment record.
///
/// `label` is the training-visible category index. Hidden evaluation labels
/// (for unlabeled target splits) live on the split, not on the sample, so
/// training code cannot reach them through this type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample<S> {
    pub id: String,
    pub domain: String,
    pub payload: Payload<S>,
    pub caption: Option<String>,
    pub label: Option<usize>,
}

/// Ordered samples from one domain, with their label space.
///
/// A `labeled` split has a training-visible label on every sample. An
/// unlabeled split exposes no labels to training code; ground truth loaded
/// from a labeled manifest is kept in `hidden_eval`, readable only through
/// [`DomainSplit::eval_label`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSplit<S> {
    pub domain: String,
    pub samples: Vec<Sample<S>>,
    pub label_space: LabelSpace,
    pub labeled: bool,
    hidden_eval: Vec<Option<usize>>,
}

impl<S: Scalar> DomainSplit<S> {
    pub fn new_labeled(
        domain: String,
        samples: Vec<Sample<S>>,
        label_space: LabelSpace,
    ) -> Result<Self> {
        let split = DomainSplit {
            domain,
            hidden_eval: vec![None; samples.len()],
            samples,
            label_space,
            labeled: true,
        };
        split.validate()?;
        Ok(split)
    }

    /// Unlabeled split; `hidden` carries per-sample evaluation ground truth
    /// where it is known.
    pub fn new_unlabeled(
        domain: String,
        mut samples: Vec<Sample<S>>,
        label_space: LabelSpace,
        hidden: Vec<Option<usize>>,
    ) -> Result<Self> {
        if hidden.len() != samples.len() {
            return Err(Error::validation(
                "hidden label vector length does not match sample count",
            ));
        }
        for s in &mut samples {
            s.label = None;
        }
        let split = DomainSplit {
            domain,
            samples,
            label_space,
            labeled: false,
            hidden_eval: hidden,
        };
        split.validate()?;
        Ok(split)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.samples {
            if s.domain != self.domain {
                return Err(Error::validation(format!(
                    "sample '{}' has domain '{}', split is '{}'",
                    s.id, s.domain, self.domain
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::validation(format!("duplicate sample id '{}'", s.id)));
            }
            if self.labeled && s.label.is_none() {
                return Err(Error::validation(format!(
                    "labeled split but sample '{}' has no label",
                    s.id
                )));
            }
        }
        let num_classes = self.label_space.num_classes();
        for (s, hidden) in self.samples.iter().zip(&self.hidden_eval) {
            for label in s.label.iter().chain(hidden.iter()) {
                if *label >= num_classes {
                    return Err(Error::validation(format!(
                        "label {} out of range for sample '{}' (valid range 0..{})",
                        label,
                        s.id,
                        num_classes - 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Evaluation ground truth for sample `i`: the training label on labeled
    /// splits, the hidden manifest label on unlabeled splits.
    pub fn eval_label(&self, i: usize) -> Option<usize> {
        if self.labeled {
            self.samples[i].label
        } else {
            self.hidden_eval[i]
        }
    }

    pub(crate) fn hidden_eval(&self) -> &[Option<usize>] {
        &self.hidden_eval
    }

    /// Replace the label space (used when extending to open-world mode).
    pub fn with_label_space(mut self, space: LabelSpace) -> Self {
        self.label_space = space;
        self
    }

    /// Retain only samples passing `keep`, preserving order and hidden labels.
    pub fn filtered(&self, keep: impl Fn(&Sample<S>) -> bool) -> Self {
        self.filtered_indexed(|_, s| keep(s))
    }

    pub fn filtered_indexed(&self, keep: impl Fn(usize, &Sample<S>) -> bool) -> Self {
        let mut samples = Vec::new();
        let mut hidden = Vec::new();
        for (i, (s, h)) in self.samples.iter().zip(&self.hidden_eval).enumerate() {
            if keep(i, s) {
                samples.push(s.clone());
                hidden.push(*h);
            }
        }
        DomainSplit {
            domain: self.domain.clone(),
            samples,
            label_space: self.label_space.clone(),
            labeled: self.labeled,
            hidden_eval: hidden,
        }
    }
}

/// Retain a `mu`-percent subset of the split, chosen by one seeded
/// permutation. Discarded samples are removed entirely, matching the rule
/// that samples without text supervision are dropped from target training.
///
/// Using a single permutation prefix makes the retained set at `mu = a` a
/// subset of the retained set at `mu = b` whenever `a <= b` under the same
/// seed.
pub fn subsample_text_supervision<S: Scalar>(
    split: &DomainSplit<S>,
    mu: u32,
    seed: u64,
) -> Result<DomainSplit<S>> {
    if mu > 100 {
        return Err(Error::validation(format!(
            "mu must be in [0, 100], got {mu}"
        )));
    }
    let n = split.len();
    // round(mu/100 * N), half-up, in exact integer arithmetic.
    let keep = (mu as usize * n + 50) / 100;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut retain = vec![false; n];
    for &i in order.iter().take(keep) {
        retain[i] = true;
    }
    Ok(split.filtered_indexed(|i, _| retain[i]))
}
