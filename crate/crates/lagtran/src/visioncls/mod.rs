//! Vision/feature classifier: a pluggable backbone under a 2-layer MLP head,
//! trained jointly on labeled source and pseudo-labeled target samples with
//! equal per-domain batch composition.

mod batches;
mod train;

pub use batches::{BalancedBatches, Batch};
pub use train::{infer, train_joint, InferenceInput, JointTrainStats, Prediction};

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::Payload;
use crate::error::{Error, Result};
use crate::hash::short_hash;
use crate::linalg::{argmax, softmax, Matrix};
use crate::scalar::Scalar;

const CHECKPOINT_FORMAT: &str = "lagtran-vision-v1";

/// Documented full-scale iteration count; the config default is desk-scale.
pub const FULL_SCALE_ITERATIONS: usize = 90_000;

/// Feature extractor interface. The reference implementation passes inline
/// feature vectors through unchanged (synthetic features and precomputed
/// video features); image encoders attach behind the same trait.
pub trait VisionBackbone<S: Scalar> {
    const KIND: &'static str;

    fn out_dim(&self) -> usize;

    fn forward(&self, payload: &Payload<S>) -> Result<Vec<S>>;

    fn kind(&self) -> &'static str {
        Self::KIND
    }
}

/// Identity map over inline feature payloads of a fixed dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureBackbone {
    dim: usize,
}

impl FeatureBackbone {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        FeatureBackbone { dim }
    }
}

impl<S: Scalar> VisionBackbone<S> for FeatureBackbone {
    const KIND: &'static str = "feature-identity";

    fn out_dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, payload: &Payload<S>) -> Result<Vec<S>> {
        let features = payload.features().ok_or_else(|| {
            Error::validation("feature backbone expects inline feature payloads, got a path")
        })?;
        if features.len() != self.dim {
            return Err(Error::validation(format!(
                "payload dimension {} does not match backbone dimension {}",
                features.len(),
                self.dim
            )));
        }
        Ok(features.to_vec())
    }
}

/// 2-layer MLP: affine, tanh, affine. The smooth nonlinearity keeps the
/// finite-difference gradient oracle clean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpHead<S> {
    w1: Matrix<S>,
    b1: Vec<S>,
    w2: Matrix<S>,
    b2: Vec<S>,
}

impl<S: Scalar> MlpHead<S> {
    /// Seeded uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    pub fn new_seeded(dim: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |m: &mut [S], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in m.iter_mut() {
                *v = S::of_f64(rng.gen_range(-bound..bound));
            }
        };
        let mut w1 = Matrix::zeros(hidden, dim);
        let mut b1 = vec![S::zero(); hidden];
        let mut w2 = Matrix::zeros(classes, hidden);
        let mut b2 = vec![S::zero(); classes];
        fill(w1.as_mut_slice(), dim);
        fill(&mut b1, dim);
        fill(w2.as_mut_slice(), hidden);
        fill(&mut b2, hidden);
        MlpHead { w1, b1, w2, b2 }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.w2.nrows()
    }

    /// Hidden activation (the penultimate representation) and logits.
    pub fn forward(&self, x: &[S]) -> (Vec<S>, Vec<S>) {
        let mut hidden = self.w1.matvec(x);
        for (h, &b) in hidden.iter_mut().zip(&self.b1) {
            *h = (*h + b).tanh();
        }
        let mut logits = self.w2.matvec(&hidden);
        for (z, &b) in logits.iter_mut().zip(&self.b2) {
            *z += b;
        }
        (hidden, logits)
    }

    pub fn logits(&self, x: &[S]) -> Vec<S> {
        self.forward(x).1
    }

    /// Flat parameter vector in [w1, b1, w2, b2] order.
    pub fn params_flat(&self) -> Vec<S> {
        let mut out = Vec::new();
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.as_slice());
        out.extend_from_slice(&self.b2);
        out
    }

    pub fn set_params_flat(&mut self, params: &[S]) {
        let mut offset = 0usize;
        for chunk in [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ] {
            chunk.copy_from_slice(&params[offset..offset + chunk.len()]);
            offset += chunk.len();
        }
        assert_eq!(offset, params.len(), "flat parameter length mismatch");
    }

    /// Mean cross-entropy of the head over (features, label) pairs.
    pub fn mean_loss(&self, batch: &[(&[S], usize)]) -> S {
        let mut total = S::zero();
        for (x, y) in batch {
            let probs = softmax(&self.logits(x));
            total += crate::linalg::cross_entropy(&probs, *y);
        }
        total / S::of_f64(batch.len() as f64)
    }

    /// Analytic gradient of [`MlpHead::mean_loss`] in flat layout.
    pub fn mean_loss_gradients(&self, batch: &[(&[S], usize)]) -> Vec<S> {
        let mut grads = MlpGrads::zeros(self);
        let scale = S::of_f64(1.0 / batch.len() as f64);
        for (x, y) in batch {
            self.accumulate(x, *y, scale, &mut grads);
        }
        grads.into_flat()
    }

    /// Backprop one sample into the accumulator, scaled by `scale`.
    fn accumulate(&self, x: &[S], target: usize, scale: S, grads: &mut MlpGrads<S>) {
        let (hidden, logits) = self.forward(x);
        let mut dz2 = softmax(&logits);
        dz2[target] = dz2[target] - S::one();
        for d in dz2.iter_mut() {
            *d = *d * scale;
        }
        grads.w2.add_outer(&dz2, &hidden, S::one());
        for (g, &d) in grads.b2.iter_mut().zip(&dz2) {
            *g += d;
        }
        let da1 = self.w2.matvec_t(&dz2);
        let mut dz1 = da1;
        for (d, &h) in dz1.iter_mut().zip(&hidden) {
            *d = *d * (S::one() - h * h);
        }
        grads.w1.add_outer(&dz1, x, S::one());
        for (g, &d) in grads.b1.iter_mut().zip(&dz1) {
            *g += d;
        }
    }
}

/// Gradient (or momentum) buffers mirroring the head's parameter shapes.
#[derive(Debug, Clone)]
pub(crate) struct MlpGrads<S> {
    pub w1: Matrix<S>,
    pub b1: Vec<S>,
    pub w2: Matrix<S>,
    pub b2: Vec<S>,
}

impl<S: Scalar> MlpGrads<S> {
    pub fn zeros(head: &MlpHead<S>) -> Self {
        MlpGrads {
            w1: Matrix::zeros(head.w1.nrows(), head.w1.ncols()),
            b1: vec![S::zero(); head.b1.len()],
            w2: Matrix::zeros(head.w2.nrows(), head.w2.ncols()),
            b2: vec![S::zero(); head.b2.len()],
        }
    }

    pub fn clear(&mut self) {
        self.w1.as_mut_slice().fill(S::zero());
        self.b1.fill(S::zero());
        self.w2.as_mut_slice().fill(S::zero());
        self.b2.fill(S::zero());
    }

    fn into_flat(self) -> Vec<S> {
        let mut out = Vec::new();
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.as_slice());
        out.extend_from_slice(&self.b2);
        out
    }
}

/// Joint-training configuration. Full-scale defaults from the training
/// recipe (90,000 iterations, batch 64 per domain, SGD 3e-4 with cosine
/// decay); `iterations` defaults to a desk-scale 2000 with the full-scale
/// count kept in [`FULL_SCALE_ITERATIONS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTrainConfig {
    pub iterations: usize,
    pub batch_per_domain: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// MLP hidden width; defaults to the backbone output dimension.
    pub hidden_dim: Option<usize>,
    pub seed: u64,
    /// Train on source batches alone (no pseudo-labeled target term).
    pub source_only: bool,
    pub log_every: usize,
    /// Append per-`log_every` training metrics to this file.
    pub metrics_log: Option<PathBuf>,
}

impl Default for JointTrainConfig {
    fn default() -> Self {
        JointTrainConfig {
            iterations: 2000,
            batch_per_domain: 64,
            lr: 3e-4,
            momentum: 0.9,
            weight_decay: 0.0,
            hidden_dim: None,
            seed: 0,
            source_only: false,
            log_every: 100,
            metrics_log: None,
        }
    }
}

impl JointTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_per_domain == 0 {
            return Err(Error::validation(
                "iterations and batch_per_domain must be positive",
            ));
        }
        if self.lr <= 0.0 {
            return Err(Error::validation("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation("momentum must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::validation("weight decay must be non-negative"));
        }
        Ok(())
    }
}

/// Backbone plus MLP head; the deployed classifier. Inference consumes
/// payloads only, never captions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VisionModel<S, B = FeatureBackbone> {
    backbone: B,
    head: MlpHead<S>,
    label_space_hash: String,
    frozen: bool,
}

#[derive(Serialize, Deserialize)]
struct VisionCheckpoint<S, B> {
    format: String,
    backbone_kind: String,
    feature_dim: usize,
    hidden_dim: usize,
    num_classes: usize,
    label_space_hash: String,
    config: JointTrainConfig,
    seed: u64,
    model: VisionModel<S, B>,
}

impl<S: Scalar, B: VisionBackbone<S>> VisionModel<S, B> {
    pub(crate) fn new(backbone: B, head: MlpHead<S>, label_space_hash: String) -> Self {
        VisionModel {
            backbone,
            head,
            label_space_hash,
            frozen: false,
        }
    }

    pub fn backbone(&self) -> &B {
        &self.backbone
    }

    pub fn head(&self) -> &MlpHead<S> {
        &self.head
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn label_space_hash(&self) -> &str {
        &self.label_space_hash
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn logits(&self, payload: &Payload<S>) -> Result<Vec<S>> {
        Ok(self.head.logits(&self.backbone.forward(payload)?))
    }

    pub fn probs(&self, payload: &Payload<S>) -> Result<Vec<S>> {
        Ok(softmax(&self.logits(payload)?))
    }

    pub fn predict(&self, payload: &Payload<S>) -> Result<(usize, S)> {
        let probs = self.probs(payload)?;
        let best = argmax(&probs);
        Ok((best, probs[best]))
    }

    /// Input to the final classification layer.
    pub fn penultimate(&self, payload: &Payload<S>) -> Result<Vec<S>> {
        Ok(self.head.forward(&self.backbone.forward(payload)?).0)
    }

    pub fn params_bytes(&self) -> Vec<u8>
    where
        B: Serialize,
    {
        serde_json::to_vec(&(&self.backbone, &self.head)).expect("params serialize")
    }

    pub fn content_hash(&self) -> String
    where
        B: Serialize,
    {
        short_hash(&self.params_bytes())
    }

    pub fn save(&self, path: &Path, cfg: &JointTrainConfig) -> Result<()>
    where
        B: Serialize + Clone,
    {
        let checkpoint = VisionCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            backbone_kind: B::KIND.to_string(),
            feature_dim: self.head.input_dim(),
            hidden_dim: self.head.hidden_dim(),
            num_classes: self.head.num_classes(),
            label_space_hash: self.label_space_hash.clone(),
            config: cfg.clone(),
            seed: cfg.seed,
            model: self.clone(),
        };
        std::fs::write(path, serde_json::to_string(&checkpoint)?)
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self>
    where
        B: DeserializeOwned,
    {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let checkpoint: VisionCheckpoint<S, B> = serde_json::from_str(&text)?;
        if checkpoint.format != CHECKPOINT_FORMAT {
            return Err(Error::validation(format!(
                "unexpected checkpoint format '{}'",
                checkpoint.format
            )));
        }
        if checkpoint.backbone_kind != B::KIND {
            return Err(Error::validation(format!(
                "checkpoint backbone kind '{}' does not match expected '{}'",
                checkpoint.backbone_kind,
                B::KIND
            )));
        }
        Ok(checkpoint.model)
    }
}
