//! End-to-end pipeline: text-classifier training, caption pseudo-labeling,
//! joint vision training and evaluation, with content-addressed stage
//! caching under an output directory.
//!
//! The pipeline is concrete over `f64`; the underlying model math stays
//! generic.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    load_manifest, subsample_text_supervision, DomainSplit, LabelSpace, LoadMode, Payload,
};
use crate::error::{Error, Result};
use crate::evalkit::{top1, MetricsReport, TransferMatrix};
use crate::hash::{derive_seed, sha256_hex};
use crate::openworld::{
    evaluate_unida, extend_label_space, msp_outlier_predictions, unida_report_from_predictions,
};
use crate::textcls::{
    pseudo_label, train_text_classifier, HashedNgramEncoder, PseudoLabelMode, PseudoLabelRecord,
    PseudoLabelSet, TextClassifierModel, TextTrainConfig, DEFAULT_TAU,
};
use crate::visioncls::{
    infer, train_joint, FeatureBackbone, InferenceInput, JointTrainConfig, VisionModel,
};
use crate::zeroshot::{embed_labels, ngram_match_scored, text_match_scored, HashedNgramEmbedder};

/// How target pseudo-labels are produced (or not, for the source-only
/// baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "lagtran")]
    Lagtran,
    #[serde(rename = "source-only")]
    SourceOnly,
    #[serde(rename = "textmatch")]
    TextMatch,
    #[serde(rename = "ngrammatch")]
    NGramMatch,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Lagtran => "lagtran",
            Method::SourceOnly => "source-only",
            Method::TextMatch => "textmatch",
            Method::NGramMatch => "ngrammatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub source_manifest: PathBuf,
    pub target_manifest: PathBuf,
    pub label_space: PathBuf,
    pub out_dir: PathBuf,
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    /// Percent of samples with text supervision in each domain.
    pub mu: u32,
    pub method: Method,
    pub mode: PseudoLabelMode,
    pub tau: f64,
    pub encoder_dim: usize,
    pub ngram_max: usize,
    pub text: TextTrainConfig,
    pub vision: JointTrainConfig,
    /// Also train throwaway source-only text/feature classifiers to fill
    /// the per-modality transfer matrices (closed mode only).
    pub with_transfer_gap: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            source_manifest: PathBuf::new(),
            target_manifest: PathBuf::new(),
            label_space: PathBuf::new(),
            out_dir: PathBuf::new(),
            seed: 0,
            mu: 100,
            method: Method::Lagtran,
            mode: PseudoLabelMode::Closed,
            tau: DEFAULT_TAU,
            encoder_dim: HashedNgramEncoder::DEFAULT_DIM,
            ngram_max: 4,
            // Desk-scale presets for the parameter-free reference encoder
            // and the feature MLP; full-scale recipe defaults live on the
            // stage config types.
            text: TextTrainConfig {
                epochs: 30,
                lr: 2.0,
                batch_size: 16,
                seed: 0,
            },
            vision: JointTrainConfig {
                iterations: 1200,
                batch_per_domain: 32,
                lr: 0.1,
                ..JointTrainConfig::default()
            },
            with_transfer_gap: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, path) in [
            ("source_manifest", &self.source_manifest),
            ("target_manifest", &self.target_manifest),
            ("label_space", &self.label_space),
        ] {
            if path.as_os_str().is_empty() {
                return Err(Error::validation(format!("{name} path is not set")));
            }
            if !path.exists() {
                return Err(Error::validation(format!(
                    "{name} path '{}' does not exist",
                    path.display()
                )));
            }
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::validation("out_dir path is not set"));
        }
        if self.mu > 100 {
            return Err(Error::validation("mu must be in [0, 100]"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::validation("tau must lie strictly inside (0, 1)"));
        }
        if self.mode == PseudoLabelMode::Open
            && matches!(self.method, Method::TextMatch | Method::NGramMatch)
        {
            return Err(Error::validation(
                "zero-shot matching baselines only support closed mode",
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Run the pipeline end to end and write every intermediate artifact under
/// the output directory. Stages are content-addressed: a stage reruns only
/// when its config or inputs changed. Rerunning with an identical config
/// reproduces the report byte for byte.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let config_echo = serde_json::to_string_pretty(cfg)?;
    std::fs::write(cfg.artifact("config.json"), config_echo)
        .map_err(|e| Error::io(cfg.artifact("config.json"), e))?;

    let base_space = LabelSpace::load(&cfg.label_space)?;
    let space = match cfg.mode {
        PseudoLabelMode::Closed => base_space,
        PseudoLabelMode::Open => extend_label_space(&base_space)?,
    };

    let source_full: DomainSplit<f64> =
        load_manifest(&cfg.source_manifest, LoadMode::Labeled, space.clone())?;
    let target_full: DomainSplit<f64> =
        load_manifest(&cfg.target_manifest, LoadMode::Unlabeled, space.clone())?;

    // Open mode trains only on shared-class source samples.
    let source_train = if space.is_open() {
        let kept = source_full.filtered(|s| {
            s.label.map(|l| space.train_index(l).is_some()).unwrap_or(false)
        });
        let dropped = source_full.len() - kept.len();
        if dropped > 0 {
            log::info!("dropping {dropped} source samples outside the shared classes");
        }
        kept
    } else {
        source_full.clone()
    };

    // Text supervision is available for only mu percent of each domain.
    let text_source = subsample_text_supervision(
        &source_train,
        cfg.mu,
        derive_seed(cfg.seed, "mu-source"),
    )?;
    let text_target = subsample_text_supervision(
        &target_full,
        cfg.mu,
        derive_seed(cfg.seed, "mu-target"),
    )?;

    let manifests_hash = {
        let source_bytes =
            std::fs::read(&cfg.source_manifest).map_err(|e| Error::io(&cfg.source_manifest, e))?;
        let target_bytes =
            std::fs::read(&cfg.target_manifest).map_err(|e| Error::io(&cfg.target_manifest, e))?;
        let space_bytes =
            std::fs::read(&cfg.label_space).map_err(|e| Error::io(&cfg.label_space, e))?;
        sha256_hex(&[source_bytes, target_bytes, space_bytes].concat())
    };

    // ----- stage: text classifier ------------------------------------
    let text_cfg = TextTrainConfig {
        seed: derive_seed(cfg.seed, "stage-text"),
        ..cfg.text.clone()
    };
    let text_model_path = cfg.artifact("text_model.json");
    let text_hash = stage_hash(&[
        "text",
        &manifests_hash,
        &serde_json::to_string(&text_cfg)?,
        &cfg.mu.to_string(),
        &cfg.encoder_dim.to_string(),
        cfg.method.as_str(),
        mode_key(cfg.mode),
    ]);
    let text_model: Option<TextClassifierModel<f64>> = match cfg.method {
        Method::Lagtran => {
            if stage_is_cached(cfg, "text", &text_hash, &[&text_model_path]) {
                log::info!("stage text: cached");
                Some(TextClassifierModel::load(&text_model_path).map_err(|e| e.in_stage("text"))?)
            } else {
                let run = || -> Result<TextClassifierModel<f64>> {
                    let encoder = HashedNgramEncoder::new(cfg.encoder_dim);
                    let (mut model, stats) =
                        train_text_classifier(&text_source, encoder, &text_cfg)?;
                    model.freeze();
                    model.save(&text_model_path)?;
                    log::info!(
                        "stage text: trained, loss {:.4} -> {:.4}, accuracy {:.4}",
                        stats.initial_loss,
                        stats.final_loss,
                        stats.train_accuracy
                    );
                    Ok(model)
                };
                let model = run().map_err(|e| e.in_stage("text"))?;
                mark_stage_done(cfg, "text", &text_hash)?;
                Some(model)
            }
        }
        _ => None,
    };

    // ----- stage: pseudo-labels ---------------------------------------
    let pseudo_path = cfg.artifact("pseudo_labels.jsonl");
    let pseudo_hash = stage_hash(&[
        "pseudo",
        &text_hash,
        &cfg.tau.to_string(),
        &cfg.ngram_max.to_string(),
        mode_key(cfg.mode),
        cfg.method.as_str(),
    ]);
    let pseudo: Option<PseudoLabelSet<f64>> = match cfg.method {
        Method::SourceOnly => None,
        _ => {
            if stage_is_cached(cfg, "pseudo", &pseudo_hash, &[&pseudo_path]) {
                log::info!("stage pseudo: cached");
                Some(PseudoLabelSet::load(&pseudo_path).map_err(|e| e.in_stage("pseudo"))?)
            } else {
                let run = || -> Result<PseudoLabelSet<f64>> {
                    let records = match cfg.method {
                        Method::Lagtran => {
                            let mut model = text_model.clone().expect("lagtran has a text model");
                            pseudo_label(&mut model, &text_target, cfg.mode, cfg.tau)?
                        }
                        Method::TextMatch | Method::NGramMatch => {
                            matcher_records(cfg, &space, &text_target)?
                        }
                        Method::SourceOnly => unreachable!(),
                    };
                    let set = PseudoLabelSet::new(records, &space, cfg.mode, cfg.tau);
                    set.save(&pseudo_path)?;
                    log::info!("stage pseudo: {} records", set.records.len());
                    Ok(set)
                };
                let set = run().map_err(|e| e.in_stage("pseudo"))?;
                mark_stage_done(cfg, "pseudo", &pseudo_hash)?;
                Some(set)
            }
        }
    };

    // ----- stage: vision classifier -----------------------------------
    let feature_dim = payload_dim(&source_train)?;
    let vision_cfg = JointTrainConfig {
        seed: derive_seed(cfg.seed, "stage-vision"),
        metrics_log: Some(cfg.artifact("train_log.txt")),
        ..cfg.vision.clone()
    };
    let vision_path = cfg.artifact("vision_model.json");
    let vision_hash = stage_hash(&[
        "vision",
        &pseudo_hash,
        &serde_json::to_string(&JointTrainConfig {
            metrics_log: None,
            ..vision_cfg.clone()
        })?,
        cfg.method.as_str(),
    ]);
    let vision_model: VisionModel<f64> =
        if stage_is_cached(cfg, "vision", &vision_hash, &[&vision_path]) {
            log::info!("stage vision: cached");
            VisionModel::load(&vision_path).map_err(|e| e.in_stage("vision"))?
        } else {
            let run = || -> Result<VisionModel<f64>> {
                if let Some(log_path) = &vision_cfg.metrics_log {
                    let _ = std::fs::remove_file(log_path);
                }
                let backbone = FeatureBackbone::new(feature_dim);
                let (mut model, stats) = match (cfg.method, &pseudo) {
                    (Method::SourceOnly, _) => {
                        let baseline_cfg = JointTrainConfig {
                            source_only: true,
                            ..vision_cfg.clone()
                        };
                        match cfg.mode {
                            // Open-mode baseline: closed head over shared
                            // classes, outliers detected at test time.
                            PseudoLabelMode::Open => {
                                let view = shared_closed_view(&source_train, &space)?;
                                train_joint(&view, None, backbone, &baseline_cfg)?
                            }
                            PseudoLabelMode::Closed => {
                                train_joint(&source_train, None, backbone, &baseline_cfg)?
                            }
                        }
                    }
                    (_, Some(set)) => {
                        train_joint(&source_train, Some((&target_full, set)), backbone, &vision_cfg)?
                    }
                    (_, None) => unreachable!("non-baseline methods produce pseudo-labels"),
                };
                model.freeze();
                model.save(&vision_path, &vision_cfg)?;
                log::info!(
                    "stage vision: trained, loss {:.4} -> {:.4} ({} targets excluded)",
                    stats.initial_loss,
                    stats.final_loss,
                    stats.excluded_targets
                );
                Ok(model)
            };
            let model = run().map_err(|e| e.in_stage("vision"))?;
            mark_stage_done(cfg, "vision", &vision_hash)?;
            model
        };

    // ----- stage: evaluation ------------------------------------------
    let report_path = cfg.artifact("report.txt");
    let eval_hash = stage_hash(&[
        "eval",
        &vision_hash,
        &cfg.with_transfer_gap.to_string(),
        &cfg.tau.to_string(),
    ]);
    if stage_is_cached(cfg, "eval", &eval_hash, &[&report_path]) {
        log::info!("stage eval: cached");
        return MetricsReport::load(&report_path).map_err(|e| e.in_stage("eval"));
    }
    let run = || -> Result<MetricsReport> {
        let mut report = MetricsReport {
            method: Some(cfg.method.as_str().to_string()),
            seed: Some(cfg.seed),
            ..Default::default()
        };

        let source_accuracy = {
            // Source-only in open mode predicts over the shared classes.
            let eval_source = if space.is_open() && cfg.method == Method::SourceOnly {
                shared_closed_view(&source_train, &space)?
            } else {
                source_train.clone()
            };
            split_top1(&vision_model, &eval_source)?
        };
        if let Some(acc) = source_accuracy {
            report.top1.insert("source".into(), acc);
        }

        match cfg.mode {
            PseudoLabelMode::Closed => {
                if let Some(acc) = split_top1(&vision_model, &target_full)? {
                    report.top1.insert("target".into(), acc);
                }
            }
            PseudoLabelMode::Open => {
                let unida = match cfg.method {
                    Method::SourceOnly => {
                        let predictions = msp_outlier_predictions(
                            &vision_model,
                            &target_full,
                            &space,
                            cfg.tau,
                        )?;
                        unida_report_from_predictions(&predictions, &target_full, &space)?
                    }
                    _ => evaluate_unida(&vision_model, &target_full, &space)?,
                };
                report.unida = Some(unida);
            }
        }

        if cfg.with_transfer_gap && cfg.mode == PseudoLabelMode::Closed {
            let (text_matrix, image_matrix) =
                modality_gap_matrices(cfg, &text_source, &source_train, &target_full)?;
            report.text_transfer = Some(text_matrix);
            report.image_transfer = Some(image_matrix);
        }

        report.save(&report_path)?;
        Ok(report)
    };
    let report = run().map_err(|e| e.in_stage("eval"))?;
    mark_stage_done(cfg, "eval", &eval_hash)?;
    Ok(report)
}

fn mode_key(mode: PseudoLabelMode) -> &'static str {
    match mode {
        PseudoLabelMode::Closed => "closed",
        PseudoLabelMode::Open => "open",
    }
}

fn stage_hash(parts: &[&str]) -> String {
    sha256_hex(parts.join("\u{1f}").as_bytes())
}

fn stage_is_cached(cfg: &PipelineConfig, name: &str, hash: &str, artifacts: &[&PathBuf]) -> bool {
    let hash_path = cfg.artifact(&format!("stage_{name}.hash"));
    match std::fs::read_to_string(&hash_path) {
        Ok(existing) if existing.trim() == hash => artifacts.iter().all(|p| p.exists()),
        _ => false,
    }
}

fn mark_stage_done(cfg: &PipelineConfig, name: &str, hash: &str) -> Result<()> {
    let hash_path = cfg.artifact(&format!("stage_{name}.hash"));
    std::fs::write(&hash_path, hash).map_err(|e| Error::io(&hash_path, e))
}

/// Pseudo-label records from a zero-shot matcher. Captions that carry no
/// usable evidence are discarded, mirroring the caption-less discard rule.
fn matcher_records(
    cfg: &PipelineConfig,
    space: &LabelSpace,
    target: &DomainSplit<f64>,
) -> Result<Vec<PseudoLabelRecord<f64>>> {
    let embedder = HashedNgramEmbedder::new(cfg.encoder_dim);
    let labels: crate::zeroshot::LabelEmbeddings<f64> = embed_labels(space, &embedder)?;
    let mut records = Vec::new();
    let mut skipped = 0usize;
    for sample in &target.samples {
        let Some(caption) = sample.caption.as_deref() else {
            continue;
        };
        let matched = match cfg.method {
            Method::TextMatch => text_match_scored(caption, &labels, &embedder),
            Method::NGramMatch => ngram_match_scored(caption, &labels, &embedder, cfg.ngram_max),
            _ => unreachable!(),
        };
        match matched {
            Ok((label, score)) => records.push(PseudoLabelRecord {
                sample_id: sample.id.clone(),
                label,
                msp: score.clamp(0.0, 1.0),
                is_outlier: false,
            }),
            Err(Error::NoEvidence(_)) | Err(Error::UndefinedSimilarity(_)) => {
                skipped += 1;
            }
            Err(other) => return Err(other),
        }
    }
    if skipped > 0 {
        log::info!("matcher discarded {skipped} captions without usable evidence");
    }
    Ok(records)
}

/// Closed view of a split restricted to shared classes, with labels
/// remapped to shared rank. Used by the open-mode source-only baseline.
pub fn shared_closed_view(split: &DomainSplit<f64>, space: &LabelSpace) -> Result<DomainSplit<f64>> {
    let shared_names: Vec<String> = space
        .shared()
        .iter()
        .map(|&i| space.names()[i].clone())
        .collect();
    let closed = LabelSpace::closed(shared_names)?;
    let mut samples = Vec::new();
    for sample in &split.samples {
        let Some(label) = sample.label else { continue };
        let Some(rank) = space.train_index(label) else { continue };
        let mut remapped = sample.clone();
        remapped.label = Some(rank);
        samples.push(remapped);
    }
    DomainSplit::new_labeled(split.domain.clone(), samples, closed)
}

fn payload_dim(split: &DomainSplit<f64>) -> Result<usize> {
    let first = split
        .samples
        .first()
        .ok_or_else(|| Error::validation("split has no samples"))?;
    match &first.payload {
        Payload::Features(v) => Ok(v.len()),
        Payload::Path(_) => Err(Error::validation(
            "pipeline requires inline feature payloads; image paths need a plugged backbone",
        )),
    }
}

/// Top-1 of the model on a split, against visible labels when the split is
/// labeled and hidden evaluation labels otherwise. None when no ground
/// truth exists.
fn split_top1(model: &VisionModel<f64>, split: &DomainSplit<f64>) -> Result<Option<f64>> {
    let mut truths = Vec::new();
    let mut inputs: Vec<InferenceInput<f64>> = Vec::new();
    for (i, sample) in split.samples.iter().enumerate() {
        if let Some(truth) = split.eval_label(i) {
            truths.push((sample.id.clone(), truth));
            inputs.push(InferenceInput::from(sample));
        }
    }
    if truths.is_empty() {
        return Ok(None);
    }
    let predictions: Vec<(String, usize)> = infer(model, &inputs)?
        .into_iter()
        .map(|p| (p.id, p.index))
        .collect();
    Ok(Some(top1(&predictions, &truths)?))
}

/// Train throwaway source-only text and feature classifiers and measure
/// their in-domain and cross-domain accuracy.
fn modality_gap_matrices(
    cfg: &PipelineConfig,
    text_source: &DomainSplit<f64>,
    source: &DomainSplit<f64>,
    target: &DomainSplit<f64>,
) -> Result<(TransferMatrix, TransferMatrix)> {
    // Text side: source-trained caption classifier.
    let text_cfg = TextTrainConfig {
        seed: derive_seed(cfg.seed, "gap-text"),
        ..cfg.text.clone()
    };
    let encoder = HashedNgramEncoder::new(cfg.encoder_dim);
    let (text_model, _) = train_text_classifier(text_source, encoder, &text_cfg)?;
    let caption_top1 = |split: &DomainSplit<f64>| -> Result<Option<f64>> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for (i, sample) in split.samples.iter().enumerate() {
            let (Some(caption), Some(truth)) = (sample.caption.as_deref(), split.eval_label(i))
            else {
                continue;
            };
            total += 1;
            if text_model.predict(caption).0 == truth {
                correct += 1;
            }
        }
        Ok((total > 0).then(|| correct as f64 / total as f64))
    };
    let text_in = caption_top1(source)?;
    let text_cross = caption_top1(target)?;

    // Image side: source-only feature classifier.
    let gap_vision_cfg = JointTrainConfig {
        seed: derive_seed(cfg.seed, "gap-vision"),
        source_only: true,
        metrics_log: None,
        ..cfg.vision.clone()
    };
    let backbone = FeatureBackbone::new(payload_dim(source)?);
    let (image_model, _) = train_joint(source, None, backbone, &gap_vision_cfg)?;
    let image_in = split_top1(&image_model, source)?;
    let image_cross = split_top1(&image_model, target)?;

    let matrix = |in_domain: Option<f64>, cross: Option<f64>| TransferMatrix {
        acc: [[in_domain, cross], [None, None]],
    };
    Ok((
        matrix(text_in, text_cross),
        matrix(image_in, image_cross),
    ))
}

/// Ids of target samples that received a pseudo-label.
pub fn covered_ids(set: &PseudoLabelSet<f64>) -> BTreeSet<&str> {
    set.records.iter().map(|r| r.sample_id.as_str()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{serialize_manifest, synth_benchmark, SynthConfig};

    pub(crate) fn write_synth(
        dir: &Path,
        synth: &SynthConfig,
    ) -> (PathBuf, PathBuf, PathBuf) {
        let (source, target) = synth_benchmark::<f64>(synth).unwrap();
        let source_path = dir.join("source.jsonl");
        let target_path = dir.join("target.jsonl");
        let space_path = dir.join("space.json");
        serialize_manifest(&source, &source_path).unwrap();
        serialize_manifest(&target, &target_path).unwrap();
        source.label_space.save(&space_path).unwrap();
        (source_path, target_path, space_path)
    }

    fn quick_cfg(dir: &Path, out: &str) -> PipelineConfig {
        let synth = SynthConfig {
            num_classes: 4,
            samples_per_class_per_domain: 15,
            ..Default::default()
        };
        let (source_manifest, target_manifest, label_space) = write_synth(dir, &synth);
        PipelineConfig {
            source_manifest,
            target_manifest,
            label_space,
            out_dir: dir.join(out),
            seed: 0,
            text: TextTrainConfig {
                epochs: 10,
                lr: 2.0,
                batch_size: 16,
                seed: 0,
            },
            vision: JointTrainConfig {
                iterations: 300,
                batch_per_domain: 16,
                lr: 0.1,
                ..JointTrainConfig::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn pipeline_runs_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick_cfg(dir.path(), "run");
        let report = run_pipeline(&cfg).unwrap();
        assert_eq!(report.method.as_deref(), Some("lagtran"));
        assert!(report.top1.contains_key("target"));
        for artifact in [
            "config.json",
            "text_model.json",
            "pseudo_labels.jsonl",
            "vision_model.json",
            "report.txt",
            "train_log.txt",
        ] {
            assert!(cfg.artifact(artifact).exists(), "{artifact} missing");
        }
    }

    #[test]
    fn rerun_is_bit_identical_and_cached() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_a = quick_cfg(dir.path(), "a");
        let cfg_b = PipelineConfig {
            out_dir: dir.path().join("b"),
            ..cfg_a.clone()
        };
        run_pipeline(&cfg_a).unwrap();
        run_pipeline(&cfg_b).unwrap();
        let report_a = std::fs::read(cfg_a.artifact("report.txt")).unwrap();
        let report_b = std::fs::read(cfg_b.artifact("report.txt")).unwrap();
        assert_eq!(report_a, report_b);

        // Second run in the same directory hits the cache and leaves the
        // report untouched.
        let before = std::fs::metadata(cfg_a.artifact("report.txt"))
            .unwrap()
            .modified()
            .unwrap();
        run_pipeline(&cfg_a).unwrap();
        let after = std::fs::metadata(cfg_a.artifact("report.txt"))
            .unwrap()
            .modified()
            .unwrap();
        assert_eq!(before, after);
        assert_eq!(
            std::fs::read(cfg_a.artifact("report.txt")).unwrap(),
            report_a
        );
    }

    #[test]
    fn changed_tau_reruns_pseudo_but_not_text() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick_cfg(dir.path(), "cache");
        run_pipeline(&cfg).unwrap();
        let text_mtime = std::fs::metadata(cfg.artifact("text_model.json"))
            .unwrap()
            .modified()
            .unwrap();
        let pseudo_hash_before =
            std::fs::read_to_string(cfg.artifact("stage_pseudo.hash")).unwrap();
        let changed = PipelineConfig { tau: 0.5, ..cfg.clone() };
        run_pipeline(&changed).unwrap();
        let text_mtime_after = std::fs::metadata(cfg.artifact("text_model.json"))
            .unwrap()
            .modified()
            .unwrap();
        let pseudo_hash_after =
            std::fs::read_to_string(cfg.artifact("stage_pseudo.hash")).unwrap();
        assert_eq!(text_mtime, text_mtime_after, "text stage should stay cached");
        assert_ne!(pseudo_hash_before, pseudo_hash_after, "pseudo stage should rerun");
    }

    #[test]
    fn missing_manifest_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            source_manifest: dir.path().join("missing.jsonl"),
            target_manifest: dir.path().join("missing.jsonl"),
            label_space: dir.path().join("missing.json"),
            out_dir: dir.path().join("out"),
            ..Default::default()
        };
        assert!(matches!(run_pipeline(&cfg), Err(Error::Validation(_))));
    }
}
