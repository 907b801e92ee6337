//! Joint training on labeled source plus pseudo-labeled target, and
//! caption-blind inference.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{DomainSplit, Payload, Sample};
use crate::error::{Error, Result};
use crate::linalg::{argmax, softmax};
use crate::scalar::Scalar;
use crate::textcls::PseudoLabelSet;

use super::batches::BalancedBatches;
use super::{JointTrainConfig, MlpGrads, MlpHead, VisionBackbone, VisionModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointTrainStats {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Combined per-iteration batch loss, for trend checks.
    pub iteration_losses: Vec<f64>,
    /// Target samples dropped because no pseudo-label record covered them.
    pub excluded_targets: usize,
}

struct TrainSet<S> {
    features: Vec<Vec<S>>,
    labels: Vec<usize>,
}

impl<S: Scalar> TrainSet<S> {
    fn pairs(&self, indices: &[usize]) -> Vec<(&[S], usize)> {
        indices
            .iter()
            .map(|&i| (self.features[i].as_slice(), self.labels[i]))
            .collect()
    }

    fn all_pairs(&self) -> Vec<(&[S], usize)> {
        self.features
            .iter()
            .map(Vec::as_slice)
            .zip(self.labels.iter().copied())
            .collect()
    }
}

/// Train the classifier head for `cfg.iterations` SGD steps, each step
/// summing the mean cross-entropy of a source half-batch and a target
/// half-batch (the target term is absent in source-only mode). Deterministic
/// given the seed.
pub fn train_joint<S: Scalar, B: VisionBackbone<S>>(
    source: &DomainSplit<S>,
    target_pseudo: Option<(&DomainSplit<S>, &PseudoLabelSet<S>)>,
    backbone: B,
    cfg: &JointTrainConfig,
) -> Result<(VisionModel<S, B>, JointTrainStats)> {
    cfg.validate()?;
    if cfg.source_only != target_pseudo.is_none() {
        return Err(Error::validation(
            "source_only flag must match the absence of target pseudo-labels",
        ));
    }
    let space = &source.label_space;
    let space_hash = space.hash();
    let num_classes = space.vision_head_size();

    let mut source_set = TrainSet {
        features: Vec::with_capacity(source.len()),
        labels: Vec::with_capacity(source.len()),
    };
    for sample in &source.samples {
        let label = sample
            .label
            .ok_or_else(|| Error::validation(format!("source sample '{}' has no label", sample.id)))?;
        let class = space.train_index(label).ok_or_else(|| {
            Error::validation(format!(
                "source sample '{}' has label {} outside the trainable classes",
                sample.id, label
            ))
        })?;
        source_set.features.push(backbone.forward(&sample.payload)?);
        source_set.labels.push(class);
    }
    if source_set.features.is_empty() {
        return Err(Error::validation("source split is empty"));
    }

    let mut excluded_targets = 0usize;
    let target_set = match target_pseudo {
        None => None,
        Some((target, pseudo)) => {
            if pseudo.label_space_hash != space_hash {
                return Err(Error::validation(
                    "pseudo-label label-space hash does not match the training label space",
                ));
            }
            if target.label_space.hash() != space_hash {
                return Err(Error::validation(
                    "target split label space does not match the source label space",
                ));
            }
            let by_id: BTreeMap<&str, &crate::textcls::PseudoLabelRecord<S>> = pseudo
                .records
                .iter()
                .map(|r| (r.sample_id.as_str(), r))
                .collect();
            let target_ids: std::collections::BTreeSet<&str> =
                target.samples.iter().map(|s| s.id.as_str()).collect();
            for id in by_id.keys() {
                if !target_ids.contains(id) {
                    return Err(Error::validation(format!(
                        "pseudo-label record '{id}' does not correspond to any target sample"
                    )));
                }
            }
            let mut set = TrainSet {
                features: Vec::new(),
                labels: Vec::new(),
            };
            for sample in &target.samples {
                let Some(record) = by_id.get(sample.id.as_str()) else {
                    excluded_targets += 1;
                    continue;
                };
                if record.label >= num_classes {
                    return Err(Error::validation(format!(
                        "pseudo-label {} out of range for {} classifier classes",
                        record.label, num_classes
                    )));
                }
                set.features.push(backbone.forward(&sample.payload)?);
                set.labels.push(record.label);
            }
            if excluded_targets > 0 {
                log::info!(
                    "train_joint: excluded {excluded_targets} target samples without pseudo-labels"
                );
            }
            if set.features.is_empty() {
                return Err(Error::validation(
                    "no target sample is covered by a pseudo-label record",
                ));
            }
            Some(set)
        }
    };

    let dim = backbone.out_dim();
    let hidden = cfg.hidden_dim.unwrap_or(dim);
    let mut head = MlpHead::new_seeded(
        dim,
        hidden,
        num_classes,
        crate::hash::derive_seed(cfg.seed, "vision-head-init"),
    );

    let full_loss = |head: &MlpHead<S>| -> f64 {
        let mut loss = head.mean_loss(&source_set.all_pairs()).to_f64_lossy();
        if let Some(t) = &target_set {
            loss += head.mean_loss(&t.all_pairs()).to_f64_lossy();
        }
        loss
    };
    let initial_loss = full_loss(&head);

    let mut batches = match &target_set {
        Some(t) => BalancedBatches::new(
            source_set.features.len(),
            t.features.len(),
            cfg.batch_per_domain,
            cfg.seed,
        )?,
        None => BalancedBatches::source_only(
            source_set.features.len(),
            cfg.batch_per_domain,
            cfg.seed,
        )?,
    };

    let mut log_file = match &cfg.metrics_log {
        Some(path) => Some(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?,
        ),
        None => None,
    };

    let mut grads = MlpGrads::zeros(&head);
    let mut velocity = MlpGrads::zeros(&head);
    let momentum = S::of_f64(cfg.momentum);
    let weight_decay = S::of_f64(cfg.weight_decay);
    let mut iteration_losses = Vec::with_capacity(cfg.iterations);

    for step in 0..cfg.iterations {
        let batch = batches.next_batch();
        grads.clear();

        let source_pairs = source_set.pairs(&batch.source);
        let src_scale = S::of_f64(1.0 / source_pairs.len() as f64);
        for (x, y) in &source_pairs {
            head.accumulate(x, *y, src_scale, &mut grads);
        }
        let source_loss = head.mean_loss(&source_pairs).to_f64_lossy();

        let mut target_loss = 0.0;
        if let Some(t) = &target_set {
            let target_pairs = t.pairs(&batch.target);
            let tgt_scale = S::of_f64(1.0 / target_pairs.len() as f64);
            for (x, y) in &target_pairs {
                head.accumulate(x, *y, tgt_scale, &mut grads);
            }
            target_loss = head.mean_loss(&target_pairs).to_f64_lossy();
        }
        iteration_losses.push(source_loss + target_loss);

        let lr = S::of_f64(crate::textcls::cosine_lr(cfg.lr, step, cfg.iterations));
        sgd_update(&mut head, &grads, &mut velocity, lr, momentum, weight_decay);

        if step % cfg.log_every == 0 {
            if let Some(file) = &mut log_file {
                writeln!(
                    file,
                    "iteration={step} source_loss={source_loss:?} target_loss={target_loss:?} lr={:?}",
                    lr.to_f64_lossy()
                )
                .map_err(|e| Error::io(cfg.metrics_log.as_ref().unwrap(), e))?;
            }
        }
    }

    let final_loss = full_loss(&head);
    let stats = JointTrainStats {
        initial_loss,
        final_loss,
        iteration_losses,
        excluded_targets,
    };
    Ok((VisionModel::new(backbone, head, space_hash), stats))
}

fn sgd_update<S: Scalar>(
    head: &mut MlpHead<S>,
    grads: &MlpGrads<S>,
    velocity: &mut MlpGrads<S>,
    lr: S,
    momentum: S,
    weight_decay: S,
) {
    let update = |param: &mut [S], grad: &[S], vel: &mut [S]| {
        for ((p, &g), v) in param.iter_mut().zip(grad).zip(vel.iter_mut()) {
            let g = if weight_decay > S::zero() {
                g + weight_decay * *p
            } else {
                g
            };
            *v = momentum * *v + g;
            *p = *p - lr * *v;
        }
    };
    update(
        head.w1.as_mut_slice(),
        grads.w1.as_slice(),
        velocity.w1.as_mut_slice(),
    );
    update(&mut head.b1, &grads.b1, &mut velocity.b1);
    update(
        head.w2.as_mut_slice(),
        grads.w2.as_slice(),
        velocity.w2.as_mut_slice(),
    );
    update(&mut head.b2, &grads.b2, &mut velocity.b2);
}

/// Inference input: sample id and payload, nothing else. Captions cannot
/// reach [`infer`] through this type, which is the point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceInput<S> {
    pub id: String,
    pub payload: Payload<S>,
}

impl<S: Clone> From<&Sample<S>> for InferenceInput<S> {
    fn from(sample: &Sample<S>) -> Self {
        InferenceInput {
            id: sample.id.clone(),
            payload: sample.payload.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction<S> {
    pub id: String,
    pub index: usize,
    pub softmax: Vec<S>,
}

/// Classify payloads. Predictions depend only on the payloads; input order
/// is preserved.
pub fn infer<S: Scalar, B: VisionBackbone<S>>(
    model: &VisionModel<S, B>,
    inputs: &[InferenceInput<S>],
) -> Result<Vec<Prediction<S>>> {
    inputs
        .iter()
        .map(|input| {
            let logits = model.logits(&input.payload)?;
            let probs = softmax(&logits);
            Ok(Prediction {
                id: input.id.clone(),
                index: argmax(&probs),
                softmax: probs,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_benchmark, LabelSpace, SynthConfig};
    use crate::textcls::{
        pseudo_label, train_text_classifier, HashedNgramEncoder, PseudoLabelMode,
        PseudoLabelSet, TextTrainConfig,
    };
    use crate::visioncls::FeatureBackbone;

    fn desk_text_cfg() -> TextTrainConfig {
        TextTrainConfig {
            epochs: 30,
            lr: 2.0,
            batch_size: 16,
            seed: 7,
        }
    }

    fn desk_vision_cfg(seed: u64) -> JointTrainConfig {
        JointTrainConfig {
            iterations: 800,
            batch_per_domain: 32,
            lr: 0.1,
            seed,
            ..Default::default()
        }
    }

    fn pseudo_set(
        cfg: &SynthConfig,
    ) -> (
        DomainSplit<f64>,
        DomainSplit<f64>,
        PseudoLabelSet<f64>,
    ) {
        let (source, target) = synth_benchmark::<f64>(cfg).unwrap();
        let (mut model, _) =
            train_text_classifier(&source, HashedNgramEncoder::default(), &desk_text_cfg())
                .unwrap();
        let records =
            pseudo_label(&mut model, &target, PseudoLabelMode::Closed, 0.75).unwrap();
        let set = PseudoLabelSet::new(
            records,
            &target.label_space,
            PseudoLabelMode::Closed,
            0.75,
        );
        (source, target, set)
    }

    fn target_accuracy(
        model: &VisionModel<f64>,
        target: &DomainSplit<f64>,
    ) -> f64 {
        let inputs: Vec<InferenceInput<f64>> =
            target.samples.iter().map(InferenceInput::from).collect();
        let predictions = infer(model, &inputs).unwrap();
        let correct = predictions
            .iter()
            .enumerate()
            .filter(|(i, p)| Some(p.index) == target.eval_label(*i))
            .count();
        correct as f64 / target.len() as f64
    }

    #[test]
    fn joint_training_beats_source_only_on_target() {
        let cfg = SynthConfig::default();
        let (source, target, pseudo) = pseudo_set(&cfg);
        let backbone = FeatureBackbone::new(cfg.feature_dim);

        let (joint, joint_stats) = train_joint(
            &source,
            Some((&target, &pseudo)),
            backbone.clone(),
            &desk_vision_cfg(1),
        )
        .unwrap();
        let source_only_cfg = JointTrainConfig {
            source_only: true,
            ..desk_vision_cfg(1)
        };
        let (baseline, _) = train_joint(&source, None, backbone, &source_only_cfg).unwrap();

        let joint_acc = target_accuracy(&joint, &target);
        let baseline_acc = target_accuracy(&baseline, &target);
        assert!(
            joint_acc >= baseline_acc + 0.05,
            "joint {joint_acc} should beat source-only {baseline_acc} by 5 points"
        );
        assert!(joint_stats.final_loss <= joint_stats.initial_loss);
    }

    #[test]
    fn same_seed_reproduces_parameters() {
        let cfg = SynthConfig::default();
        let (source, target, pseudo) = pseudo_set(&cfg);
        let backbone = FeatureBackbone::new(cfg.feature_dim);
        let (a, _) = train_joint(
            &source,
            Some((&target, &pseudo)),
            backbone.clone(),
            &desk_vision_cfg(9),
        )
        .unwrap();
        let (b, _) = train_joint(
            &source,
            Some((&target, &pseudo)),
            backbone,
            &desk_vision_cfg(9),
        )
        .unwrap();
        assert_eq!(a.params_bytes(), b.params_bytes());
    }

    #[test]
    fn loss_trend_is_downward() {
        let cfg = SynthConfig::default();
        let (source, target, pseudo) = pseudo_set(&cfg);
        let backbone = FeatureBackbone::new(cfg.feature_dim);
        let (_, stats) = train_joint(
            &source,
            Some((&target, &pseudo)),
            backbone,
            &desk_vision_cfg(3),
        )
        .unwrap();
        let losses = &stats.iteration_losses;
        let smooth: Vec<f64> = losses
            .windows(10)
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
            .collect();
        let quarter = smooth.len() / 4;
        let first: f64 = smooth[..quarter].iter().sum::<f64>() / quarter as f64;
        let last: f64 = smooth[smooth.len() - quarter..].iter().sum::<f64>() / quarter as f64;
        assert!(
            last <= first,
            "smoothed loss rose from {first} to {last} over training"
        );
    }

    #[test]
    fn memorizes_training_sample_on_tiny_split() {
        let cfg = SynthConfig {
            num_classes: 3,
            samples_per_class_per_domain: 5,
            ..Default::default()
        };
        let (source, _) = synth_benchmark::<f64>(&cfg).unwrap();
        let train_cfg = JointTrainConfig {
            iterations: 600,
            batch_per_domain: 8,
            lr: 0.2,
            source_only: true,
            ..Default::default()
        };
        let (model, _) = train_joint(
            &source,
            None,
            FeatureBackbone::new(cfg.feature_dim),
            &train_cfg,
        )
        .unwrap();
        for sample in &source.samples {
            let (pred, _) = model.predict(&sample.payload).unwrap();
            assert_eq!(pred, sample.label.unwrap());
        }
    }

    #[test]
    fn infer_is_pure_and_normalized() {
        let cfg = SynthConfig::default();
        let (source, target, pseudo) = pseudo_set(&cfg);
        let (model, _) = train_joint(
            &source,
            Some((&target, &pseudo)),
            FeatureBackbone::new(cfg.feature_dim),
            &desk_vision_cfg(2),
        )
        .unwrap();
        let inputs: Vec<InferenceInput<f64>> =
            target.samples.iter().take(20).map(InferenceInput::from).collect();
        let forward = infer(&model, &inputs).unwrap();
        for p in &forward {
            assert!((p.softmax.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let mut reversed_inputs = inputs.clone();
        reversed_inputs.reverse();
        let mut backward = infer(&model, &reversed_inputs).unwrap();
        backward.reverse();
        assert_eq!(forward, backward);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let cfg = SynthConfig::default();
        let (source, target, pseudo) = pseudo_set(&cfg);
        let (model, _) = train_joint(
            &source,
            Some((&target, &pseudo)),
            FeatureBackbone::new(cfg.feature_dim),
            &desk_vision_cfg(2),
        )
        .unwrap();
        let bad = InferenceInput {
            id: "bad".into(),
            payload: Payload::Features(vec![0.0; 3]),
        };
        assert!(infer(&model, &[bad]).is_err());
    }

    #[test]
    fn mismatched_pseudo_label_hash_rejected() {
        let cfg = SynthConfig::default();
        let (source, target, pseudo) = pseudo_set(&cfg);
        let other = LabelSpace::closed(vec!["x".into(), "y".into()]).unwrap();
        let bad = PseudoLabelSet::new(pseudo.records.clone(), &other, PseudoLabelMode::Closed, 0.75);
        let result = train_joint(
            &source,
            Some((&target, &bad)),
            FeatureBackbone::new(cfg.feature_dim),
            &desk_vision_cfg(2),
        );
        assert!(result.is_err());
    }

    #[test]
    fn source_only_flag_must_match_inputs() {
        let cfg = SynthConfig::default();
        let (source, target, pseudo) = pseudo_set(&cfg);
        let backbone = FeatureBackbone::new(cfg.feature_dim);
        let mismatched = JointTrainConfig {
            source_only: true,
            ..desk_vision_cfg(0)
        };
        assert!(
            train_joint(&source, Some((&target, &pseudo)), backbone.clone(), &mismatched)
                .is_err()
        );
        assert!(train_joint(&source, None, backbone, &desk_vision_cfg(0)).is_err());
    }

    /// Central finite differences against the analytic gradients.
    #[test]
    fn gradients_match_finite_differences() {
        let head = MlpHead::<f64>::new_seeded(5, 4, 3, 42);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(17);
        let batch_data: Vec<(Vec<f64>, usize)> = (0..6)
            .map(|i| {
                let x: Vec<f64> = (0..5)
                    .map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0))
                    .collect();
                (x, i % 3)
            })
            .collect();
        let batch: Vec<(&[f64], usize)> =
            batch_data.iter().map(|(x, y)| (x.as_slice(), *y)).collect();

        let analytic = head.mean_loss_gradients(&batch);
        let params = head.params_flat();
        let eps = 1e-5;
        for k in 0..params.len() {
            let mut plus = head.clone();
            let mut minus = head.clone();
            let mut p = params.clone();
            p[k] += eps;
            plus.set_params_flat(&p);
            p[k] -= 2.0 * eps;
            minus.set_params_flat(&p);
            let fd = (plus.mean_loss(&batch) - minus.mean_loss(&batch)) / (2.0 * eps);
            let denom = analytic[k].abs().max(fd.abs()).max(1e-6);
            assert!(
                (analytic[k] - fd).abs() / denom <= 1e-4,
                "param {k}: analytic {} vs fd {fd}",
                analytic[k]
            );
        }
    }
}
