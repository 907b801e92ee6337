//! Open-world (universal adaptation) label-space management and H-score
//! evaluation.

use serde::{Deserialize, Serialize};

use crate::corpus::{DomainSplit, LabelSpace};
use crate::error::{Error, Result};
use crate::linalg::argmax;
use crate::scalar::Scalar;
use crate::visioncls::{infer, InferenceInput, VisionBackbone, VisionModel};

/// Closed-set accuracy over shared classes, outlier recall over
/// target-private classes, and their harmonic mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniDAReport {
    pub closed_acc: f64,
    pub open_acc: f64,
    pub h_score: f64,
}

/// Extend a label space for open-world training: classifier-visible classes
/// become the shared classes plus one outlier class at index `|shared|`.
/// Private-class indices map to the outlier slot for evaluation.
pub fn extend_label_space(space: &LabelSpace) -> Result<LabelSpace> {
    if space.shared().is_empty() {
        return Err(Error::validation(
            "cannot extend a label space with no shared classes",
        ));
    }
    let mut extended = space.clone();
    extended.set_outlier();
    Ok(extended)
}

/// Harmonic mean of two accuracies: `2ab / (a + b)`, and 0 when both are 0.
pub fn h_score(closed_acc: f64, open_acc: f64) -> Result<f64> {
    for v in [closed_acc, open_acc] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::validation(format!(
                "accuracy {v} outside [0, 1]"
            )));
        }
    }
    if closed_acc + open_acc == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * closed_acc * open_acc / (closed_acc + open_acc))
}

/// Score (sample id, predicted classifier index) pairs against the hidden
/// labels of a target test split under an extended label space.
pub fn unida_report_from_predictions<S: Scalar>(
    predictions: &[(String, usize)],
    target_test: &DomainSplit<S>,
    space: &LabelSpace,
) -> Result<UniDAReport> {
    let outlier = space
        .outlier_index()
        .ok_or_else(|| Error::validation("evaluation requires an extended label space"))?;
    let by_id: std::collections::BTreeMap<&str, usize> = predictions
        .iter()
        .map(|(id, index)| (id.as_str(), *index))
        .collect();
    let mut closed = (0usize, 0usize); // (correct, total)
    let mut open = (0usize, 0usize);
    for (i, sample) in target_test.samples.iter().enumerate() {
        let truth = target_test.eval_label(i).ok_or_else(|| {
            Error::validation(format!("sample '{}' has no evaluation label", sample.id))
        })?;
        let predicted = *by_id.get(sample.id.as_str()).ok_or_else(|| {
            Error::validation(format!("no prediction for sample '{}'", sample.id))
        })?;
        if space.is_shared(truth) {
            closed.1 += 1;
            if predicted == space.eval_index(truth).expect("shared label maps") {
                closed.0 += 1;
            }
        } else if space.is_target_private(truth) {
            open.1 += 1;
            if predicted == outlier {
                open.0 += 1;
            }
        } else {
            return Err(Error::validation(format!(
                "sample '{}' has label {} outside shared and target-private classes",
                sample.id, truth
            )));
        }
    }
    let ratio = |(correct, total): (usize, usize)| {
        if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }
    };
    let closed_acc = ratio(closed);
    let open_acc = ratio(open);
    Ok(UniDAReport {
        closed_acc,
        open_acc,
        h_score: h_score(closed_acc, open_acc)?,
    })
}

/// Evaluate an open-world vision model (head size `|shared| + 1`) on a
/// target test split with hidden labels.
pub fn evaluate_unida<S: Scalar, B: VisionBackbone<S>>(
    model: &VisionModel<S, B>,
    target_test: &DomainSplit<S>,
    space: &LabelSpace,
) -> Result<UniDAReport> {
    if !space.is_open() {
        return Err(Error::validation("evaluate_unida needs an extended label space"));
    }
    if model.num_classes() != space.vision_head_size() {
        return Err(Error::validation(format!(
            "model head has {} classes, extended space expects {}",
            model.num_classes(),
            space.vision_head_size()
        )));
    }
    let inputs: Vec<InferenceInput<S>> = target_test
        .samples
        .iter()
        .map(InferenceInput::from)
        .collect();
    let predictions: Vec<(String, usize)> = infer(model, &inputs)?
        .into_iter()
        .map(|p| (p.id, p.index))
        .collect();
    unida_report_from_predictions(&predictions, target_test, space)
}

/// Test-time outlier detection for a closed model trained on shared classes
/// only: predictions whose max softmax probability is at or below `tau` are
/// mapped to the outlier index. This is the source-only baseline against
/// which open-mode caption pseudo-labeling is compared.
pub fn msp_outlier_predictions<S: Scalar, B: VisionBackbone<S>>(
    model: &VisionModel<S, B>,
    target_test: &DomainSplit<S>,
    space: &LabelSpace,
    tau: f64,
) -> Result<Vec<(String, usize)>> {
    let outlier = space
        .outlier_index()
        .ok_or_else(|| Error::validation("MSP thresholding requires an extended label space"))?;
    if model.num_classes() != space.shared().len() {
        return Err(Error::validation(format!(
            "MSP baseline model must predict over the {} shared classes, has {}",
            space.shared().len(),
            model.num_classes()
        )));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::validation(format!(
            "tau must lie strictly inside (0, 1), got {tau}"
        )));
    }
    let tau_s = S::of_f64(tau);
    target_test
        .samples
        .iter()
        .map(|sample| {
            let probs = model.probs(&sample.payload)?;
            let best = argmax(&probs);
            let index = if probs[best] > tau_s { best } else { outlier };
            Ok((sample.id.clone(), index))
        })
        .collect()
}
