//! Pseudo-labeling of target captions by a frozen source-trained text
//! classifier, in closed-set or open-world (confidence-thresholded) mode.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{DomainSplit, LabelSpace};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{TextClassifierModel, TextEncoder};

/// Confidence threshold below which an open-mode prediction becomes an
/// outlier.
pub const DEFAULT_TAU: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoLabelMode {
    Closed,
    Open,
}

/// Predicted class for one target sample, with its max softmax probability.
/// `is_outlier` implies the label is the outlier index of the extended label
/// space; otherwise the label is the argmax over the classifier classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelRecord<S> {
    pub sample_id: String,
    pub label: usize,
    pub msp: S,
    pub is_outlier: bool,
}

/// Pseudo-label every target sample that has a caption. Samples without a
/// caption are omitted (they are discarded from target training); an empty
/// caption string still produces a record from the encoder's empty-input
/// representation.
///
/// The model is frozen on entry if it is not already.
pub fn pseudo_label<S: Scalar, E: TextEncoder<S>>(
    model: &mut TextClassifierModel<S, E>,
    target: &DomainSplit<S>,
    mode: PseudoLabelMode,
    tau: f64,
) -> Result<Vec<PseudoLabelRecord<S>>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::validation(format!(
            "tau must lie strictly inside (0, 1), got {tau}"
        )));
    }
    let space = &target.label_space;
    if model.label_space_hash() != space.hash() {
        return Err(Error::validation(
            "model label-space hash does not match the target split's label space",
        ));
    }
    let outlier = match mode {
        PseudoLabelMode::Closed => None,
        PseudoLabelMode::Open => Some(space.outlier_index().ok_or_else(|| {
            Error::validation("open mode requires a label space extended with an outlier class")
        })?),
    };
    if model.num_classes() != space.text_head_size() {
        return Err(Error::validation(format!(
            "model predicts {} classes but the label space expects {}",
            model.num_classes(),
            space.text_head_size()
        )));
    }
    model.freeze();

    let tau_s = S::of_f64(tau);
    let mut records = Vec::new();
    for sample in &target.samples {
        let Some(caption) = sample.caption.as_deref() else {
            continue;
        };
        let (label, msp) = model.predict(caption);
        let record = match outlier {
            None => PseudoLabelRecord {
                sample_id: sample.id.clone(),
                label,
                msp,
                is_outlier: false,
            },
            Some(outlier_index) => {
                if msp > tau_s {
                    PseudoLabelRecord {
                        sample_id: sample.id.clone(),
                        label,
                        msp,
                        is_outlier: false,
                    }
                } else {
                    PseudoLabelRecord {
                        sample_id: sample.id.clone(),
                        label: outlier_index,
                        msp,
                        is_outlier: true,
                    }
                }
            }
        };
        records.push(record);
    }
    Ok(records)
}

/// Records plus the provenance needed to refuse mismatched downstream use.
/// The records file holds one JSON record per line; provenance lives in a
/// sidecar `<file>.meta.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PseudoLabelSet<S> {
    pub records: Vec<PseudoLabelRecord<S>>,
    pub label_space_hash: String,
    pub mode: PseudoLabelMode,
    pub tau: f64,
}

#[derive(Serialize, Deserialize)]
struct PseudoMeta {
    label_space_hash: String,
    mode: PseudoLabelMode,
    tau: f64,
    count: usize,
}

fn meta_path(records_path: &Path) -> PathBuf {
    let mut name = records_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".meta.json");
    records_path.with_file_name(name)
}

impl<S: Scalar> PseudoLabelSet<S> {
    pub fn new(
        records: Vec<PseudoLabelRecord<S>>,
        space: &LabelSpace,
        mode: PseudoLabelMode,
        tau: f64,
    ) -> Self {
        PseudoLabelSet {
            records,
            label_space_hash: space.hash(),
            mode,
            tau,
        }
    }

    pub fn save(&self, records_path: &Path) -> Result<()> {
        let file = std::fs::File::create(records_path).map_err(|e| Error::io(records_path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for record in &self.records {
            let line = serde_json::to_string(record)?;
            writeln!(out, "{line}").map_err(|e| Error::io(records_path, e))?;
        }
        out.flush().map_err(|e| Error::io(records_path, e))?;
        let meta = PseudoMeta {
            label_space_hash: self.label_space_hash.clone(),
            mode: self.mode,
            tau: self.tau,
            count: self.records.len(),
        };
        let meta_file = meta_path(records_path);
        std::fs::write(&meta_file, serde_json::to_string_pretty(&meta)?)
            .map_err(|e| Error::io(&meta_file, e))
    }

    pub fn load(records_path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(records_path).map_err(|e| Error::io(records_path, e))?;
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: PseudoLabelRecord<S> =
                serde_json::from_str(line).map_err(|e| Error::Parse {
                    path: records_path.to_path_buf(),
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
            records.push(record);
        }
        let meta_file = meta_path(records_path);
        let meta: PseudoMeta = serde_json::from_str(
            &std::fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?,
        )?;
        if meta.count != records.len() {
            return Err(Error::validation(format!(
                "pseudo-label meta says {} records, file has {}",
                meta.count,
                records.len()
            )));
        }
        Ok(PseudoLabelSet {
            records,
            label_space_hash: meta.label_space_hash,
            mode: meta.mode,
            tau: meta.tau,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_benchmark, SynthConfig};
    use crate::openworld::extend_label_space;
    use crate::textcls::{train_text_classifier, HashedNgramEncoder, TextTrainConfig};

    fn desk_cfg() -> TextTrainConfig {
        TextTrainConfig {
            epochs: 30,
            lr: 2.0,
            batch_size: 16,
            seed: 7,
        }
    }

    #[test]
    fn closed_mode_on_clean_synth_is_accurate() {
        let cfg = SynthConfig {
            text_noise: 0.0,
            ..Default::default()
        };
        let (source, target) = synth_benchmark::<f64>(&cfg).unwrap();
        let (mut model, _) =
            train_text_classifier(&source, HashedNgramEncoder::default(), &desk_cfg()).unwrap();
        let records = pseudo_label(&mut model, &target, PseudoLabelMode::Closed, 0.75).unwrap();
        assert_eq!(records.len(), target.len());
        let by_id: std::collections::BTreeMap<&str, usize> = records
            .iter()
            .map(|r| (r.sample_id.as_str(), r.label))
            .collect();
        let correct = target
            .samples
            .iter()
            .enumerate()
            .filter(|(i, s)| by_id[s.id.as_str()] == target.eval_label(*i).unwrap())
            .count();
        let acc = correct as f64 / target.len() as f64;
        assert!(acc >= 0.95, "pseudo-label accuracy {acc} below 0.95");
    }

    #[test]
    fn freezing_leaves_parameters_untouched() {
        let cfg = SynthConfig::default();
        let (source, target) = synth_benchmark::<f64>(&cfg).unwrap();
        let (mut model, _) =
            train_text_classifier(&source, HashedNgramEncoder::default(), &desk_cfg()).unwrap();
        assert!(!model.frozen());
        let before = model.params_bytes();
        let _ = pseudo_label(&mut model, &target, PseudoLabelMode::Closed, 0.75).unwrap();
        assert!(model.frozen());
        assert_eq!(before, model.params_bytes());
    }

    #[test]
    fn tau_bounds_validated() {
        let cfg = SynthConfig::default();
        let (source, target) = synth_benchmark::<f64>(&cfg).unwrap();
        let (mut model, _) =
            train_text_classifier(&source, HashedNgramEncoder::default(), &desk_cfg()).unwrap();
        for bad in [0.0, 1.0, -0.1, 1.5] {
            assert!(
                pseudo_label(&mut model, &target, PseudoLabelMode::Open, bad).is_err(),
                "tau {bad} should be rejected"
            );
        }
    }

    #[test]
    fn open_mode_partitions_records() {
        let cfg = SynthConfig {
            num_classes: 9,
            text_noise: 0.1,
            ..Default::default()
        };
        let (source, target) = crate::corpus::synth_unida_benchmark::<f64>(&cfg, 6, 3).unwrap();
        let ext = extend_label_space(&source.label_space).unwrap();
        let source = source.with_label_space(ext.clone());
        let target = target.with_label_space(ext.clone());
        let (mut model, _) =
            train_text_classifier(&source, HashedNgramEncoder::default(), &desk_cfg()).unwrap();
        let records = pseudo_label(&mut model, &target, PseudoLabelMode::Open, 0.75).unwrap();
        let outlier = ext.outlier_index().unwrap();
        for r in &records {
            if r.is_outlier {
                assert_eq!(r.label, outlier);
                assert!(r.msp <= 0.75);
            } else {
                assert!(r.label < outlier);
                assert!(r.msp > 0.75);
            }
        }
        assert!(records.iter().any(|r| r.is_outlier));
        assert!(records.iter().any(|r| !r.is_outlier));
    }

    #[test]
    fn raising_tau_never_decreases_outliers() {
        let cfg = SynthConfig {
            num_classes: 9,
            text_noise: 0.3,
            ..Default::default()
        };
        let (source, target) = crate::corpus::synth_unida_benchmark::<f64>(&cfg, 6, 3).unwrap();
        let ext = extend_label_space(&source.label_space).unwrap();
        let source = source.with_label_space(ext.clone());
        let target = target.with_label_space(ext);
        let (mut model, _) =
            train_text_classifier(&source, HashedNgramEncoder::default(), &desk_cfg()).unwrap();
        let mut last = 0usize;
        for tau in [0.1, 0.3, 0.5, 0.75, 0.9, 0.99] {
            let records =
                pseudo_label(&mut model, &target, PseudoLabelMode::Open, tau).unwrap();
            let outliers = records.iter().filter(|r| r.is_outlier).count();
            assert!(outliers >= last, "outlier count dropped when tau rose to {tau}");
            last = outliers;
        }
    }

    #[test]
    fn samples_without_captions_are_omitted() {
        let cfg = SynthConfig::default();
        let (source, mut target) = synth_benchmark::<f64>(&cfg).unwrap();
        target.samples[0].caption = None;
        target.samples[1].caption = Some(String::new());
        let (mut model, _) =
            train_text_classifier(&source, HashedNgramEncoder::default(), &desk_cfg()).unwrap();
        let records = pseudo_label(&mut model, &target, PseudoLabelMode::Closed, 0.75).unwrap();
        assert_eq!(records.len(), target.len() - 1);
        // The empty caption still produced a record.
        assert!(records.iter().any(|r| r.sample_id == target.samples[1].id));
    }

    #[test]
    fn mismatched_label_space_refused() {
        let cfg = SynthConfig::default();
        let (source, target) = synth_benchmark::<f64>(&cfg).unwrap();
        let (mut model, _) =
            train_text_classifier(&source, HashedNgramEncoder::default(), &desk_cfg()).unwrap();
        let other_space =
            crate::corpus::LabelSpace::closed(vec!["x".into(), "y".into()]).unwrap();
        let mismatched = target.filtered(|_| true).with_label_space(other_space);
        assert!(
            pseudo_label(&mut model, &mismatched, PseudoLabelMode::Closed, 0.75).is_err()
        );
    }

    #[test]
    fn pseudo_label_set_round_trips() {
        let records = vec![
            PseudoLabelRecord {
                sample_id: "a".into(),
                label: 2,
                msp: 0.9_f64,
                is_outlier: false,
            },
            PseudoLabelRecord {
                sample_id: "b".into(),
                label: 6,
                msp: 0.4,
                is_outlier: true,
            },
        ];
        let space = crate::corpus::LabelSpace::closed(
            (0..7).map(|i| format!("c{i}")).collect(),
        )
        .unwrap();
        let set = PseudoLabelSet::new(records, &space, PseudoLabelMode::Open, 0.75);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pseudo.jsonl");
        set.save(&path).unwrap();
        let loaded = PseudoLabelSet::<f64>::load(&path).unwrap();
        assert_eq!(set.records, loaded.records);
        assert_eq!(set.label_space_hash, loaded.label_space_hash);
        assert_eq!(set.tau, loaded.tau);
    }
}
