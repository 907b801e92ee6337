//! Synthetic two-domain benchmark.
//!
//! Feature space: class-conditional unit-variance Gaussian clusters. Each
//! class centroid sits on a sphere of fixed radius; in the target domain the
//! centroid is displaced by `visual_gap` toward the next class's centroid,
//! so a source-fit feature classifier degrades on target in a controlled
//! way. Captions are built from class-specific vocabulary and corrupted at
//! rate `text_noise` identically in both domains, so caption classifiers
//! transfer almost unchanged. Generation is bit-deterministic given the
//! seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::derive_seed;
use crate::scalar::Scalar;

use super::{DomainSplit, LabelSpace, Payload, Sample};

/// Distance of class centroids from the origin. Pairwise class separation
/// lands around `sqrt(2)` times this, comfortably above the unit noise.
const CENTROID_RADIUS: f64 = 4.0;

pub const SOURCE_DOMAIN: &str = "source";
pub const TARGET_DOMAIN: &str = "target";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub samples_per_class_per_domain: usize,
    pub feature_dim: usize,
    /// Magnitude of the per-class centroid offset in the target domain.
    pub visual_gap: f64,
    /// Probability that a caption token is replaced by a distractor token.
    pub text_noise: f64,
    pub vocab_per_class: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 6,
            samples_per_class_per_domain: 40,
            feature_dim: 16,
            visual_gap: 2.5,
            text_noise: 0.1,
            vocab_per_class: 8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::validation("num_classes must be >= 2"));
        }
        if self.feature_dim < 2 {
            return Err(Error::validation("feature_dim must be >= 2"));
        }
        if self.samples_per_class_per_domain == 0 {
            return Err(Error::validation("samples_per_class_per_domain must be >= 1"));
        }
        if self.visual_gap < 0.0 {
            return Err(Error::validation("visual_gap must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.text_noise) {
            return Err(Error::validation("text_noise must be in [0, 1]"));
        }
        if self.vocab_per_class == 0 {
            return Err(Error::validation("vocab_per_class must be >= 1"));
        }
        Ok(())
    }
}

/// Vocabulary token `j` of class `c`. Token 0 doubles as the class name so
/// zero-shot name matching has signal to work with.
pub fn vocab_token(class: usize, j: usize) -> String {
    format!("c{class}w{j}")
}

pub fn class_name(class: usize) -> String {
    vocab_token(class, 0)
}

fn distractor_token(k: usize) -> String {
    format!("nz{k}")
}

/// Per-class centroids for (source, target). Exposed for tests; the target
/// centroid of class `c` is the source centroid displaced by `visual_gap`
/// toward the source centroid of class `(c + 1) % num_classes`.
pub(crate) fn class_centroids(cfg: &SynthConfig) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth-centroids"));
    let mut source: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_classes);
    for _ in 0..cfg.num_classes {
        let mut direction: Vec<f64> = (0..cfg.feature_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut direction {
            *x = *x / norm * CENTROID_RADIUS;
        }
        source.push(direction);
    }
    let mut target = source.clone();
    if cfg.visual_gap > 0.0 {
        for c in 0..cfg.num_classes {
            let next = &source[(c + 1) % cfg.num_classes];
            let toward: Vec<f64> = next
                .iter()
                .zip(&source[c])
                .map(|(n, s)| n - s)
                .collect();
            let norm = toward.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (t, d) in target[c].iter_mut().zip(&toward) {
                *t += cfg.visual_gap * d / norm;
            }
        }
    }
    (source, target)
}

fn make_caption(cfg: &SynthConfig, class: usize, rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(4..=8usize);
    let pool = cfg.num_classes * cfg.vocab_per_class;
    let mut tokens = Vec::with_capacity(len);
    for _ in 0..len {
        let j = rng.gen_range(0..cfg.vocab_per_class);
        let corrupt = rng.gen::<f64>() < cfg.text_noise;
        let distractor = rng.gen_range(0..pool);
        if corrupt {
            tokens.push(distractor_token(distractor));
        } else {
            tokens.push(vocab_token(class, j));
        }
    }
    tokens.join(" ")
}

fn generate_domain<S: Scalar>(
    cfg: &SynthConfig,
    domain: &str,
    centroids: &[Vec<f64>],
    classes: &[usize],
    rng: &mut ChaCha8Rng,
) -> (Vec<Sample<S>>, Vec<usize>) {
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for &class in classes {
        for i in 0..cfg.samples_per_class_per_domain {
            let features: Vec<S> = centroids[class]
                .iter()
                .map(|&mu| S::of_f64(mu + rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let caption = make_caption(cfg, class, rng);
            samples.push(Sample {
                id: format!("{domain}_c{class:02}_i{i:03}"),
                domain: domain.to_string(),
                payload: Payload::Features(features),
                caption: Some(caption),
                label: Some(class),
            });
            labels.push(class);
        }
    }
    (samples, labels)
}

/// Generate the closed-set benchmark: a labeled source split and an
/// unlabeled target split carrying hidden evaluation labels.
pub fn synth_benchmark<S: Scalar>(
    cfg: &SynthConfig,
) -> Result<(DomainSplit<S>, DomainSplit<S>)> {
    cfg.validate()?;
    let space = LabelSpace::closed((0..cfg.num_classes).map(class_name).collect())?;
    let classes: Vec<usize> = (0..cfg.num_classes).collect();
    build_splits(cfg, &classes, &classes, space)
}

/// Generate an open-world benchmark: the first `shared` classes appear in
/// both domains, the last `target_private` classes only in the target.
pub fn synth_unida_benchmark<S: Scalar>(
    cfg: &SynthConfig,
    shared: usize,
    target_private: usize,
) -> Result<(DomainSplit<S>, DomainSplit<S>)> {
    cfg.validate()?;
    if shared + target_private != cfg.num_classes {
        return Err(Error::validation(format!(
            "shared ({shared}) + target_private ({target_private}) must equal num_classes ({})",
            cfg.num_classes
        )));
    }
    if shared == 0 {
        return Err(Error::validation("need at least one shared class"));
    }
    let space = LabelSpace::new(
        (0..cfg.num_classes).map(class_name).collect(),
        (0..shared).collect(),
        Vec::new(),
        (shared..cfg.num_classes).collect(),
    )?;
    let source_classes: Vec<usize> = (0..shared).collect();
    let target_classes: Vec<usize> = (0..cfg.num_classes).collect();
    build_splits(cfg, &source_classes, &target_classes, space)
}

fn build_splits<S: Scalar>(
    cfg: &SynthConfig,
    source_classes: &[usize],
    target_classes: &[usize],
    space: LabelSpace,
) -> Result<(DomainSplit<S>, DomainSplit<S>)> {
    let (source_centroids, target_centroids) = class_centroids(cfg);
    let mut src_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth-source"));
    let mut tgt_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth-target"));
    let (src_samples, _) = generate_domain(
        cfg,
        SOURCE_DOMAIN,
        &source_centroids,
        source_classes,
        &mut src_rng,
    );
    let (tgt_samples, tgt_labels) = generate_domain(
        cfg,
        TARGET_DOMAIN,
        &target_centroids,
        target_classes,
        &mut tgt_rng,
    );
    let source = DomainSplit::new_labeled(SOURCE_DOMAIN.into(), src_samples, space.clone())?;
    let hidden = tgt_labels.into_iter().map(Some).collect();
    let target = DomainSplit::new_unlabeled(TARGET_DOMAIN.into(), tgt_samples, space, hidden)?;
    Ok((source, target))
}
