//! Benchmark assembly: group per-view segments, hold out validation takes,
//! split the rest classwise into an ego-train group and an exo-train group,
//! and emit corpus manifests with pooled-feature payloads and aligned
//! narration captions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DomainSplit, LabelSpace, Payload, Sample};
use crate::error::{Error, Result};
use crate::hash::derive_seed;
use crate::scalar::Scalar;

use super::{
    align_narrations, pool_segment_features_with, FeatureTrack, Narration, PoolKind, RemapTable,
    Segment, View,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnnotationRecord {
    take_id: String,
    view: View,
    start_s: f64,
    end_s: f64,
    fine_label: String,
    #[serde(default)]
    narrations: Vec<NarrationRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NarrationRecord {
    timestamp_s: f64,
    text: String,
    annotator_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeatureRecord<S> {
    take_id: String,
    view: View,
    t_s: f64,
    values: Vec<S>,
}

/// Per (take, view) feature tracks.
#[derive(Debug, Clone)]
pub struct TrackSet<S> {
    tracks: BTreeMap<(String, View), FeatureTrack<S>>,
}

impl<S: Scalar> TrackSet<S> {
    pub fn new(tracks: BTreeMap<(String, View), FeatureTrack<S>>) -> Self {
        TrackSet { tracks }
    }

    pub fn get(&self, take_id: &str, view: View) -> Option<&FeatureTrack<S>> {
        self.tracks.get(&(take_id.to_string(), view))
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }
}

/// Read segment annotations: one flat JSON record per line.
pub fn load_annotations(path: &Path) -> Result<Vec<Segment>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut segments = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let segment = Segment {
            take_id: record.take_id,
            view: record.view,
            start_s: record.start_s,
            end_s: record.end_s,
            fine_label: record.fine_label,
            narrations: record
                .narrations
                .into_iter()
                .map(|n| Narration {
                    timestamp_s: n.timestamp_s,
                    text: n.text,
                    annotator_id: n.annotator_id,
                })
                .collect(),
        };
        segment.validate()?;
        segments.push(segment);
    }
    Ok(segments)
}

/// Read per-timestep features (one record per line) and group them into
/// tracks keyed by (take, view). Records may arrive in any time order.
pub fn load_feature_tracks<S: Scalar>(path: &Path) -> Result<TrackSet<S>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut grouped: BTreeMap<(String, View), Vec<(f64, Vec<S>)>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: FeatureRecord<S> = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        grouped
            .entry((record.take_id, record.view))
            .or_default()
            .push((record.t_s, record.values));
    }
    let mut tracks = BTreeMap::new();
    for (key, mut rows) in grouped {
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (timestamps, features): (Vec<f64>, Vec<Vec<S>>) = rows.into_iter().unzip();
        let track = FeatureTrack::new(timestamps, features)?;
        tracks.insert(key, track);
    }
    Ok(TrackSet { tracks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub split_seed: u64,
    /// Fraction of takes held out, with both views, for validation.
    pub val_fraction: f64,
    pub pool: PoolKind,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            split_seed: 0,
            val_fraction: 0.2,
            pool: PoolKind::Mean,
        }
    }
}

/// Machine-readable description of the assembled benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkDefinition {
    pub classes: Vec<String>,
    pub ego_train_takes: Vec<String>,
    pub exo_train_takes: Vec<String>,
    pub val_takes: Vec<String>,
    pub segments: Vec<SegmentAssignment>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentAssignment {
    pub take_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub fine_label: String,
    pub coarse_index: usize,
    /// "ego-train", "exo-train" or "val".
    pub group: String,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutput<S> {
    pub ego_train: DomainSplit<S>,
    pub exo_train: DomainSplit<S>,
    pub val_ego: DomainSplit<S>,
    pub val_exo: DomainSplit<S>,
    pub definition: BenchmarkDefinition,
}

/// One logical segment: the same (take, window, keystep) seen from both
/// views.
struct LogicalSegment {
    take_id: String,
    coarse: usize,
    ego: Segment,
    exo: Segment,
}

fn logical_key(segment: &Segment) -> (String, u64, u64, String) {
    (
        segment.take_id.clone(),
        segment.start_s.to_bits(),
        segment.end_s.to_bits(),
        segment.fine_label.clone(),
    )
}

/// Split keystep segments into the ego-train / exo-train / validation
/// benchmark. Validation takes are held out whole (both views); remaining
/// segments are halved classwise, with whole takes kept on one side so no
/// take contributes to both training domains.
pub fn build_benchmark<S: Scalar>(
    segments: &[Segment],
    tracks: &TrackSet<S>,
    table: &RemapTable,
    opts: &BuildOptions,
) -> Result<BenchmarkOutput<S>> {
    if !(0.0..1.0).contains(&opts.val_fraction) {
        return Err(Error::validation("val_fraction must lie in [0, 1)"));
    }
    // Pair up views into logical segments.
    let mut by_key: BTreeMap<(String, u64, u64, String), Vec<&Segment>> = BTreeMap::new();
    for segment in segments {
        segment.validate()?;
        by_key.entry(logical_key(segment)).or_default().push(segment);
    }
    let mut logical: Vec<LogicalSegment> = Vec::new();
    for (key, views) in by_key {
        let ego = views.iter().find(|s| s.view == View::Ego);
        let exo = views.iter().find(|s| s.view == View::Exo);
        let (Some(ego), Some(exo)) = (ego, exo) else {
            return Err(Error::validation(format!(
                "segment {:?} of take '{}' is missing a view; both ego and exo are required",
                key.3, key.0
            )));
        };
        logical.push(LogicalSegment {
            take_id: key.0,
            coarse: table.remap(&ego.fine_label)?,
            ego: (*ego).clone(),
            exo: (*exo).clone(),
        });
    }
    if logical.is_empty() {
        return Err(Error::validation("no segments to build a benchmark from"));
    }

    // Hold out whole takes for validation.
    let mut takes: Vec<String> = logical
        .iter()
        .map(|s| s.take_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.split_seed, "val-takes"));
    takes.shuffle(&mut rng);
    let val_count = (opts.val_fraction * takes.len() as f64).floor() as usize;
    let val_takes: BTreeSet<String> = takes.iter().take(val_count).cloned().collect();

    let (val_segments, train_segments): (Vec<&LogicalSegment>, Vec<&LogicalSegment>) =
        logical.iter().partition(|s| val_takes.contains(&s.take_id));

    // Classwise feasibility: two groups need two segments per class.
    let num_classes = table.num_coarse();
    let mut class_counts = vec![0usize; num_classes];
    for s in &train_segments {
        class_counts[s.coarse] += 1;
    }
    for (class, &count) in class_counts.iter().enumerate() {
        if count > 0 && count < 2 {
            return Err(Error::validation(format!(
                "class '{}' has {count} training segment(s); cannot split into two groups",
                table.coarse_names()[class]
            )));
        }
    }

    // Assign whole takes greedily to the group that keeps per-class segment
    // counts most balanced.
    let mut train_takes: Vec<String> = train_segments
        .iter()
        .map(|s| s.take_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.split_seed, "group-split"));
    train_takes.shuffle(&mut rng);
    let mut take_classes: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for s in &train_segments {
        take_classes
            .entry(s.take_id.as_str())
            .or_default()
            .push(s.coarse);
    }
    let mut group_a = vec![0isize; num_classes];
    let mut group_b = vec![0isize; num_classes];
    let mut a_takes: BTreeSet<String> = BTreeSet::new();
    let imbalance = |a: &[isize], b: &[isize]| -> isize {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
    };
    for take in &train_takes {
        let classes = &take_classes[take.as_str()];
        let mut as_a = group_a.clone();
        let mut as_b = group_b.clone();
        for &c in classes {
            as_a[c] += 1;
            as_b[c] += 1;
        }
        if imbalance(&as_a, &group_b) <= imbalance(&group_a, &as_b) {
            group_a = as_a;
            a_takes.insert(take.clone());
        } else {
            group_b = as_b;
        }
    }

    // Every populated class must appear on both sides.
    for class in 0..num_classes {
        if class_counts[class] >= 2 && (group_a[class] == 0 || group_b[class] == 0) {
            return Err(Error::validation(format!(
                "class '{}' could not be split across both groups without breaking \
                 take boundaries",
                table.coarse_names()[class]
            )));
        }
    }

    let space = LabelSpace::closed(table.coarse_names().to_vec())?;
    let make_sample = |s: &LogicalSegment, view: View| -> Result<Sample<S>> {
        let segment = match view {
            View::Ego => &s.ego,
            View::Exo => &s.exo,
        };
        let track = tracks.get(&s.take_id, view).ok_or_else(|| {
            Error::validation(format!(
                "no {} feature track for take '{}'",
                view.as_str(),
                s.take_id
            ))
        })?;
        let pooled = pool_segment_features_with(track, segment, opts.pool)?;
        let caption = align_narrations(segment);
        let start_ms = (segment.start_s * 1000.0).round() as u64;
        Ok(Sample {
            id: format!("{}_{start_ms:08}_{}", s.take_id, view.as_str()),
            domain: view.as_str().to_string(),
            payload: Payload::Features(pooled),
            caption: (!caption.is_empty()).then_some(caption),
            label: Some(s.coarse),
        })
    };

    let mut ego_samples = Vec::new();
    let mut exo_samples = Vec::new();
    let mut val_ego_samples = Vec::new();
    let mut val_exo_samples = Vec::new();
    let mut assignments = Vec::new();
    for s in &train_segments {
        let in_a = a_takes.contains(&s.take_id);
        let group = if in_a { "ego-train" } else { "exo-train" };
        if in_a {
            ego_samples.push(make_sample(s, View::Ego)?);
        } else {
            exo_samples.push(make_sample(s, View::Exo)?);
        }
        assignments.push(SegmentAssignment {
            take_id: s.take_id.clone(),
            start_s: s.ego.start_s,
            end_s: s.ego.end_s,
            fine_label: s.ego.fine_label.clone(),
            coarse_index: s.coarse,
            group: group.to_string(),
        });
    }
    for s in &val_segments {
        val_ego_samples.push(make_sample(s, View::Ego)?);
        val_exo_samples.push(make_sample(s, View::Exo)?);
        assignments.push(SegmentAssignment {
            take_id: s.take_id.clone(),
            start_s: s.ego.start_s,
            end_s: s.ego.end_s,
            fine_label: s.ego.fine_label.clone(),
            coarse_index: s.coarse,
            group: "val".to_string(),
        });
    }

    let definition = BenchmarkDefinition {
        classes: table.coarse_names().to_vec(),
        ego_train_takes: a_takes.iter().cloned().collect(),
        exo_train_takes: train_takes
            .iter()
            .filter(|t| !a_takes.contains(*t))
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
        val_takes: val_takes.into_iter().collect(),
        segments: assignments,
    };

    Ok(BenchmarkOutput {
        ego_train: DomainSplit::new_labeled("ego".into(), ego_samples, space.clone())?,
        exo_train: DomainSplit::new_labeled("exo".into(), exo_samples, space.clone())?,
        val_ego: DomainSplit::new_labeled("ego".into(), val_ego_samples, space.clone())?,
        val_exo: DomainSplit::new_labeled("exo".into(), val_exo_samples, space)?,
        definition,
    })
}

/// Write the four manifests, the benchmark definition, the label space and
/// the remap table under `dir`.
pub fn write_benchmark<S: Scalar>(
    output: &BenchmarkOutput<S>,
    table: &RemapTable,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::corpus::serialize_manifest(&output.ego_train, &dir.join("ego_train.jsonl"))?;
    crate::corpus::serialize_manifest(&output.exo_train, &dir.join("exo_train.jsonl"))?;
    crate::corpus::serialize_manifest(&output.val_ego, &dir.join("val_ego.jsonl"))?;
    crate::corpus::serialize_manifest(&output.val_exo, &dir.join("val_exo.jsonl"))?;
    output.ego_train.label_space.save(&dir.join("label_space.json"))?;
    table.save(&dir.join("remap_table.tsv"))?;
    let definition = serde_json::to_string_pretty(&output.definition)?;
    std::fs::write(dir.join("benchmark.json"), definition)
        .map_err(|e| Error::io(dir.join("benchmark.json"), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_table() -> RemapTable {
        RemapTable::parse("stir the pot\tCook\nplate it\tServe\nCook\tCook\nServe\tServe")
            .unwrap()
    }

    fn toy_segment(take: &str, view: View, fine: &str, start: f64) -> Segment {
        Segment {
            take_id: take.into(),
            view,
            start_s: start,
            end_s: start + 10.0,
            fine_label: fine.into(),
            narrations: vec![
                Narration {
                    timestamp_s: start + 1.0,
                    text: format!("{fine} happening"),
                    annotator_id: "a".into(),
                },
            ],
        }
    }

    fn toy_tracks(takes: &[&str]) -> TrackSet<f64> {
        let mut tracks = BTreeMap::new();
        for (k, take) in takes.iter().enumerate() {
            for view in [View::Ego, View::Exo] {
                let times: Vec<f64> = (0..40).map(|i| i as f64).collect();
                let features: Vec<Vec<f64>> = (0..40)
                    .map(|i| vec![k as f64, i as f64, view as u8 as f64])
                    .collect();
                tracks.insert(
                    (take.to_string(), view),
                    FeatureTrack::new(times, features).unwrap(),
                );
            }
        }
        TrackSet::new(tracks)
    }

    fn both_views(take: &str, fine: &str, start: f64) -> Vec<Segment> {
        vec![
            toy_segment(take, View::Ego, fine, start),
            toy_segment(take, View::Exo, fine, start),
        ]
    }

    #[test]
    fn toy_build_splits_two_plus_two() {
        // 4 logical segments, 2 classes, one take each.
        let mut segments = Vec::new();
        segments.extend(both_views("t0", "stir the pot", 0.0));
        segments.extend(both_views("t1", "stir the pot", 0.0));
        segments.extend(both_views("t2", "plate it", 0.0));
        segments.extend(both_views("t3", "plate it", 0.0));
        let tracks = toy_tracks(&["t0", "t1", "t2", "t3"]);
        let opts = BuildOptions {
            split_seed: 1,
            val_fraction: 0.0,
            pool: PoolKind::Mean,
        };
        let output = build_benchmark(&segments, &tracks, &toy_table(), &opts).unwrap();
        assert_eq!(output.ego_train.len(), 2);
        assert_eq!(output.exo_train.len(), 2);
        assert!(output.val_ego.is_empty());

        let ego_takes: BTreeSet<&str> = output
            .ego_train
            .samples
            .iter()
            .map(|s| s.id.split('_').next().unwrap())
            .collect();
        let exo_takes: BTreeSet<&str> = output
            .exo_train
            .samples
            .iter()
            .map(|s| s.id.split('_').next().unwrap())
            .collect();
        assert!(ego_takes.is_disjoint(&exo_takes));

        // One segment of each class per group.
        let ego_labels: Vec<usize> =
            output.ego_train.samples.iter().map(|s| s.label.unwrap()).collect();
        let exo_labels: Vec<usize> =
            output.exo_train.samples.iter().map(|s| s.label.unwrap()).collect();
        assert_eq!(ego_labels.iter().filter(|&&l| l == 0).count(), 1);
        assert_eq!(ego_labels.iter().filter(|&&l| l == 1).count(), 1);
        assert_eq!(exo_labels.iter().filter(|&&l| l == 0).count(), 1);
        assert_eq!(exo_labels.iter().filter(|&&l| l == 1).count(), 1);
    }

    #[test]
    fn same_seed_builds_identical_manifests() {
        let mut segments = Vec::new();
        for (i, take) in ["t0", "t1", "t2", "t3", "t4", "t5"].iter().enumerate() {
            let fine = if i % 2 == 0 { "stir the pot" } else { "plate it" };
            segments.extend(both_views(take, fine, 0.0));
        }
        let tracks = toy_tracks(&["t0", "t1", "t2", "t3", "t4", "t5"]);
        let opts = BuildOptions {
            split_seed: 7,
            val_fraction: 0.3,
            pool: PoolKind::Mean,
        };
        let a = build_benchmark(&segments, &tracks, &toy_table(), &opts).unwrap();
        let b = build_benchmark(&segments, &tracks, &toy_table(), &opts).unwrap();
        assert_eq!(a.ego_train, b.ego_train);
        assert_eq!(a.exo_train, b.exo_train);
        assert_eq!(a.val_ego, b.val_ego);
        assert_eq!(a.val_exo, b.val_exo);

        let dir = tempfile::tempdir().unwrap();
        let dir_a = dir.path().join("a");
        let dir_b = dir.path().join("b");
        write_benchmark(&a, &toy_table(), &dir_a).unwrap();
        write_benchmark(&b, &toy_table(), &dir_b).unwrap();
        for name in ["ego_train.jsonl", "exo_train.jsonl", "val_ego.jsonl", "benchmark.json"] {
            assert_eq!(
                std::fs::read(dir_a.join(name)).unwrap(),
                std::fs::read(dir_b.join(name)).unwrap(),
                "{name} differs between identical builds"
            );
        }
    }

    #[test]
    fn missing_view_is_rejected() {
        let segments = vec![toy_segment("t0", View::Ego, "stir the pot", 0.0)];
        let tracks = toy_tracks(&["t0"]);
        let err = build_benchmark(
            &segments,
            &tracks,
            &toy_table(),
            &BuildOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("missing a view"));
    }

    #[test]
    fn class_with_one_segment_cannot_split() {
        let mut segments = Vec::new();
        segments.extend(both_views("t0", "stir the pot", 0.0));
        segments.extend(both_views("t1", "stir the pot", 0.0));
        segments.extend(both_views("t2", "plate it", 0.0));
        let tracks = toy_tracks(&["t0", "t1", "t2"]);
        let opts = BuildOptions {
            split_seed: 0,
            val_fraction: 0.0,
            pool: PoolKind::Mean,
        };
        let err = build_benchmark(&segments, &tracks, &toy_table(), &opts).unwrap_err();
        assert!(err.to_string().contains("cannot split"));
    }

    #[test]
    fn val_takes_have_both_views_and_are_held_out() {
        let takes = ["t0", "t1", "t2", "t3", "t4", "t5", "t6", "t7"];
        let mut segments = Vec::new();
        for (i, take) in takes.iter().enumerate() {
            let fine = if i % 2 == 0 { "stir the pot" } else { "plate it" };
            segments.extend(both_views(take, fine, 0.0));
        }
        let tracks = toy_tracks(&takes);
        let opts = BuildOptions {
            split_seed: 3,
            val_fraction: 0.25,
            pool: PoolKind::Mean,
        };
        let output = build_benchmark(&segments, &tracks, &toy_table(), &opts).unwrap();
        assert_eq!(output.definition.val_takes.len(), 2);
        assert_eq!(output.val_ego.len(), 2);
        assert_eq!(output.val_exo.len(), 2);
        let train_takes: BTreeSet<&String> = output
            .definition
            .ego_train_takes
            .iter()
            .chain(&output.definition.exo_train_takes)
            .collect();
        for val_take in &output.definition.val_takes {
            assert!(!train_takes.contains(val_take));
        }
    }

    #[test]
    fn annotation_and_feature_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ann_path = dir.path().join("annotations.jsonl");
        let feat_path = dir.path().join("features.jsonl");
        std::fs::write(
            &ann_path,
            concat!(
                r#"{"take_id":"t0","view":"ego","start_s":0.0,"end_s":8.0,"fine_label":"stir the pot","narrations":[{"timestamp_s":1.5,"text":"stirring","annotator_id":"a"}]}"#,
                "\n",
                r#"{"take_id":"t0","view":"exo","start_s":0.0,"end_s":8.0,"fine_label":"stir the pot"}"#,
                "\n",
            ),
        )
        .unwrap();
        std::fs::write(
            &feat_path,
            concat!(
                r#"{"take_id":"t0","view":"ego","t_s":2.0,"values":[1.0,2.0]}"#,
                "\n",
                r#"{"take_id":"t0","view":"ego","t_s":1.0,"values":[3.0,4.0]}"#,
                "\n",
                r#"{"take_id":"t0","view":"exo","t_s":1.0,"values":[5.0,6.0]}"#,
                "\n",
            ),
        )
        .unwrap();
        let segments = load_annotations(&ann_path).unwrap();
        assert_eq!(segments.len(), 2);
        assert_eq!(segments[0].narrations.len(), 1);
        let tracks: TrackSet<f64> = load_feature_tracks(&feat_path).unwrap();
        let ego_track = tracks.get("t0", View::Ego).unwrap();
        assert_eq!(ego_track.len(), 2);
        // Out-of-order records were sorted by time.
        let seg = &segments[0];
        let pooled = pool_segment_features_with(ego_track, seg, PoolKind::Mean).unwrap();
        assert_eq!(pooled, vec![2.0, 3.0]);
    }
}
