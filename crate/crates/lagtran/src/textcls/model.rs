//! Text classifier: pluggable encoder plus a linear head, trained with
//! minibatch gradient descent on cross-entropy.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::DomainSplit;
use crate::error::{Error, Result};
use crate::hash::{derive_seed, short_hash};
use crate::linalg::{argmax, cross_entropy, softmax, Matrix};
use crate::scalar::Scalar;

use super::{HashedNgramEncoder, TextEncoder};

const CHECKPOINT_FORMAT: &str = "lagtran-text-v1";

/// Training configuration. The defaults mirror the full-scale fine-tuning
/// recipe (5 epochs, learning rate 5e-5, cosine decay); the parameter-free
/// hashed-n-gram encoder wants a much larger learning rate, which the
/// pipeline presets supply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TextTrainConfig {
    fn default() -> Self {
        TextTrainConfig {
            epochs: 5,
            lr: 5e-5,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TextTrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::validation("epochs and batch_size must be positive"));
        }
        if self.lr <= 0.0 {
            return Err(Error::validation("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LinearHead<S> {
    weight: Matrix<S>,
    bias: Vec<S>,
}

impl<S: Scalar> LinearHead<S> {
    fn zeros(classes: usize, dim: usize) -> Self {
        LinearHead {
            weight: Matrix::zeros(classes, dim),
            bias: vec![S::zero(); classes],
        }
    }

    fn logits(&self, features: &[S]) -> Vec<S> {
        let mut z = self.weight.matvec(features);
        for (zi, &bi) in z.iter_mut().zip(&self.bias) {
            *zi += bi;
        }
        z
    }
}

/// Encoder parameters plus classification head; the object transferred
/// across domains. Once frozen, nothing mutates the parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextClassifierModel<S, E = HashedNgramEncoder> {
    encoder: E,
    head: LinearHead<S>,
    label_space_hash: String,
    frozen: bool,
}

/// On-disk checkpoint wrapper; self-describing so a mismatched encoder or
/// label space is rejected instead of silently misread.
#[derive(Serialize, Deserialize)]
struct TextCheckpoint<S, E> {
    format: String,
    encoder_kind: String,
    dim: usize,
    num_classes: usize,
    label_space_hash: String,
    model: TextClassifierModel<S, E>,
}

impl<S: Scalar, E: TextEncoder<S>> TextClassifierModel<S, E> {
    pub fn num_classes(&self) -> usize {
        self.head.weight.nrows()
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn encoder(&self) -> &E {
        &self.encoder
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

    pub fn logits(&self, caption: &str) -> Vec<S> {
        self.head.logits(&self.encoder.encode(caption))
    }

    pub fn probs(&self, caption: &str) -> Vec<S> {
        softmax(&self.logits(caption))
    }

    /// (argmax class, max softmax probability); ties go to the lowest index.
    pub fn predict(&self, caption: &str) -> (usize, S) {
        let probs = self.probs(caption);
        let best = argmax(&probs);
        (best, probs[best])
    }

    /// Representation fed to the final classification layer.
    pub fn penultimate(&self, caption: &str) -> Vec<S> {
        self.encoder.encode(caption)
    }

    /// Serialized parameters (encoder state and head), independent of the
    /// frozen flag. Used to verify freeze immutability byte-for-byte.
    pub fn params_bytes(&self) -> Vec<u8>
    where
        E: Serialize,
    {
        let blob = serde_json::to_vec(&(&self.encoder, &self.head)).expect("params serialize");
        blob
    }

    pub fn content_hash(&self) -> String
    where
        E: Serialize,
    {
        short_hash(&self.params_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()>
    where
        E: Serialize + Clone,
    {
        let checkpoint = TextCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            encoder_kind: E::KIND.to_string(),
            dim: self.dim(),
            num_classes: self.num_classes(),
            label_space_hash: self.label_space_hash.clone(),
            model: self.clone(),
        };
        let text = serde_json::to_string(&checkpoint)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self>
    where
        E: DeserializeOwned,
    {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let checkpoint: TextCheckpoint<S, E> = serde_json::from_str(&text)?;
        if checkpoint.format != CHECKPOINT_FORMAT {
            return Err(Error::validation(format!(
                "unexpected checkpoint format '{}'",
                checkpoint.format
            )));
        }
        if checkpoint.encoder_kind != E::KIND {
            return Err(Error::validation(format!(
                "checkpoint encoder kind '{}' does not match expected '{}'",
                checkpoint.encoder_kind,
                E::KIND
            )));
        }
        Ok(checkpoint.model)
    }
}

/// Statistics from one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextTrainStats {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub steps: usize,
}

/// Train on (caption, label) pairs from a labeled source split, minimizing
/// cross-entropy with cosine learning-rate decay. Deterministic given the
/// seed. The returned model is unfrozen.
pub fn train_text_classifier<S: Scalar, E: TextEncoder<S>>(
    source: &DomainSplit<S>,
    encoder: E,
    cfg: &TextTrainConfig,
) -> Result<(TextClassifierModel<S, E>, TextTrainStats)> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::validation("cannot train on an empty split"));
    }
    let space = &source.label_space;
    let num_classes = space.text_head_size();

    // Validate every sample before touching any parameters.
    let mut features: Vec<Vec<S>> = Vec::with_capacity(source.len());
    let mut targets: Vec<usize> = Vec::with_capacity(source.len());
    for sample in &source.samples {
        let caption = sample.caption.as_deref().ok_or_else(|| {
            Error::validation(format!("sample '{}' has no caption", sample.id))
        })?;
        let label = sample
            .label
            .ok_or_else(|| Error::validation(format!("sample '{}' has no label", sample.id)))?;
        let target = space.train_index(label).ok_or_else(|| {
            Error::validation(format!(
                "sample '{}' has label {} outside the trainable classes",
                sample.id, label
            ))
        })?;
        features.push(encoder.encode(caption));
        targets.push(target);
    }

    let dim = encoder.dim();
    let mut head = LinearHead::zeros(num_classes, dim);
    let mean_loss = |head: &LinearHead<S>| -> f64 {
        let total: f64 = features
            .iter()
            .zip(&targets)
            .map(|(x, &y)| cross_entropy(&softmax(&head.logits(x)), y).to_f64_lossy())
            .sum();
        total / features.len() as f64
    };
    let initial_loss = mean_loss(&head);

    let n = features.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "textcls-train"));
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;
    let mut grad_w = Matrix::zeros(num_classes, dim);
    let mut grad_b = vec![S::zero(); num_classes];

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            grad_w.as_mut_slice().fill(S::zero());
            grad_b.fill(S::zero());
            let inv_batch = S::of_f64(1.0 / chunk.len() as f64);
            for &i in chunk {
                let x = &features[i];
                let mut delta = softmax(&head.logits(x));
                delta[targets[i]] = delta[targets[i]] - S::one();
                for (d, g) in delta.iter_mut().zip(grad_b.iter_mut()) {
                    *d = *d * inv_batch;
                    *g += *d;
                }
                grad_w.add_outer(&delta, x, S::one());
            }
            let lr = cosine_lr(cfg.lr, step, total_steps);
            let lr_s = S::of_f64(lr);
            for (w, g) in head
                .weight
                .as_mut_slice()
                .iter_mut()
                .zip(grad_w.as_slice())
            {
                *w = *w - lr_s * *g;
            }
            for (b, g) in head.bias.iter_mut().zip(&grad_b) {
                *b = *b - lr_s * *g;
            }
            step += 1;
        }
    }

    let final_loss = mean_loss(&head);
    let correct = features
        .iter()
        .zip(&targets)
        .filter(|(x, &y)| argmax(&head.logits(x)) == y)
        .count();
    let stats = TextTrainStats {
        initial_loss,
        final_loss,
        train_accuracy: correct as f64 / n as f64,
        steps: step,
    };
    let model = TextClassifierModel {
        encoder,
        head,
        label_space_hash: space.hash(),
        frozen: false,
    };
    Ok((model, stats))
}

/// Cosine decay from `base` toward zero over `total` steps.
pub(crate) fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    let t = step as f64 / total.max(1) as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabelSpace, Payload, Sample, SynthConfig};

    fn caption_split(rows: &[(&str, &str, usize)], classes: usize) -> DomainSplit<f64> {
        let space =
            LabelSpace::closed((0..classes).map(|i| format!("name{i}")).collect()).unwrap();
        let samples = rows
            .iter()
            .map(|(id, caption, label)| Sample {
                id: id.to_string(),
                domain: "src".to_string(),
                payload: Payload::Features(vec![0.0]),
                caption: Some(caption.to_string()),
                label: Some(*label),
            })
            .collect();
        DomainSplit::new_labeled("src".into(), samples, space).unwrap()
    }

    fn desk_cfg() -> TextTrainConfig {
        TextTrainConfig {
            epochs: 30,
            lr: 2.0,
            batch_size: 16,
            seed: 7,
        }
    }

    #[test]
    fn single_class_source_predicts_that_class() {
        let split = caption_split(
            &[("a", "red apple pie", 0), ("b", "green pear tart", 0)],
            1,
        );
        let (model, _) =
            train_text_classifier(&split, HashedNgramEncoder::new(64), &desk_cfg()).unwrap();
        assert_eq!(model.predict("anything at all").0, 0);
        assert_eq!(model.predict("red apple").0, 0);
    }

    #[test]
    fn clean_synthetic_source_trains_above_99_percent() {
        let cfg = SynthConfig {
            text_noise: 0.0,
            ..Default::default()
        };
        let (source, _) = crate::corpus::synth_benchmark::<f64>(&cfg).unwrap();
        let (_, stats) =
            train_text_classifier(&source, HashedNgramEncoder::default(), &desk_cfg()).unwrap();
        assert!(
            stats.train_accuracy >= 0.99,
            "train accuracy {} below 0.99",
            stats.train_accuracy
        );
        assert!(stats.final_loss <= stats.initial_loss);
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let cfg = SynthConfig::default();
        let (source, _) = crate::corpus::synth_benchmark::<f64>(&cfg).unwrap();
        let (a, _) =
            train_text_classifier(&source, HashedNgramEncoder::default(), &desk_cfg()).unwrap();
        let (b, _) =
            train_text_classifier(&source, HashedNgramEncoder::default(), &desk_cfg()).unwrap();
        assert_eq!(a.params_bytes(), b.params_bytes());
    }

    #[test]
    fn missing_caption_or_label_rejected_before_training() {
        let space = LabelSpace::closed(vec!["x".into(), "y".into()]).unwrap();
        let samples = vec![Sample::<f64> {
            id: "a".into(),
            domain: "src".into(),
            payload: Payload::Features(vec![0.0]),
            caption: None,
            label: Some(0),
        }];
        let split = DomainSplit::new_labeled("src".into(), samples, space).unwrap();
        assert!(
            train_text_classifier(&split, HashedNgramEncoder::new(8), &desk_cfg()).is_err()
        );
    }

    #[test]
    fn empty_split_rejected() {
        let space = LabelSpace::closed(vec!["x".into()]).unwrap();
        let split = DomainSplit::<f64>::new_labeled("src".into(), vec![], space).unwrap();
        assert!(
            train_text_classifier(&split, HashedNgramEncoder::new(8), &desk_cfg()).is_err()
        );
    }

    #[test]
    fn softmax_of_model_sums_to_one() {
        let split = caption_split(&[("a", "one two", 0), ("b", "three four", 1)], 2);
        let (model, _) =
            train_text_classifier(&split, HashedNgramEncoder::new(32), &desk_cfg()).unwrap();
        let p = model.probs("five six seven");
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn checkpoint_round_trip_and_kind_check() {
        let split = caption_split(&[("a", "one two", 0), ("b", "three four", 1)], 2);
        let (mut model, _) =
            train_text_classifier(&split, HashedNgramEncoder::new(32), &desk_cfg()).unwrap();
        model.freeze();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("text.json");
        model.save(&path).unwrap();
        let loaded = TextClassifier::<f64>::load(&path).unwrap();
        assert_eq!(model.params_bytes(), loaded.params_bytes());
        assert!(loaded.frozen());
    }

    type TextClassifier<S> = TextClassifierModel<S, HashedNgramEncoder>;
}
