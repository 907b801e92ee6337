//! Benchmark construction from keystep-annotated procedural videos:
//! fine-to-coarse label remapping, narration alignment, segment feature
//! pooling, and classwise ego/exo splitting.

mod build;

pub use build::{
    build_benchmark, load_annotations, load_feature_tracks, write_benchmark, BenchmarkDefinition,
    BenchmarkOutput, BuildOptions, TrackSet,
};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Feature dimension of the precomputed segment features this benchmark was
/// designed around. Tracks of any uniform dimension are accepted.
pub const OMNIVORE_DIM: usize = 1536;

/// Number of coarse classes in the shipped remap table.
pub const NUM_COARSE_CLASSES: usize = 24;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Ego,
    Exo,
}

impl View {
    pub fn as_str(self) -> &'static str {
        match self {
            View::Ego => "ego",
            View::Exo => "exo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Narration {
    pub timestamp_s: f64,
    pub text: String,
    pub annotator_id: String,
}

/// One keystep-annotated video segment from a single camera view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub take_id: String,
    pub view: View,
    pub start_s: f64,
    pub end_s: f64,
    pub fine_label: String,
    #[serde(default)]
    pub narrations: Vec<Narration>,
}

impl Segment {
    pub fn validate(&self) -> Result<()> {
        if !(self.start_s < self.end_s) {
            return Err(Error::validation(format!(
                "segment in take '{}' has start {} not before end {}",
                self.take_id, self.start_s, self.end_s
            )));
        }
        if !self.start_s.is_finite() || !self.end_s.is_finite() {
            return Err(Error::validation("segment bounds must be finite"));
        }
        for n in &self.narrations {
            if !n.timestamp_s.is_finite() {
                return Err(Error::validation("narration timestamp must be finite"));
            }
        }
        Ok(())
    }

    fn contains(&self, t: f64) -> bool {
        self.start_s <= t && t <= self.end_s
    }
}

/// Total mapping from fine keystep labels to coarse class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemapTable {
    coarse_names: Vec<String>,
    map: BTreeMap<String, usize>,
}

impl RemapTable {
    /// The shipped default table: the published 24 coarse classes with a
    /// reconstructed 96-entry fine-label mapping.
    pub fn builtin() -> Self {
        Self::parse(include_str!("remap_default.tsv")).expect("builtin table parses")
    }

    /// Parse the reviewable text format: one `fine<TAB>coarse` pair per
    /// line, `#` comments and blank lines ignored. Coarse indices follow
    /// first-appearance order of the coarse names.
    pub fn parse(text: &str) -> Result<Self> {
        let mut coarse_names: Vec<String> = Vec::new();
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (fine, coarse) = line.split_once('\t').ok_or_else(|| {
                Error::validation(format!(
                    "remap table line {} is not 'fine<TAB>coarse'",
                    lineno + 1
                ))
            })?;
            let index = match coarse_names.iter().position(|n| n == coarse) {
                Some(i) => i,
                None => {
                    coarse_names.push(coarse.to_string());
                    coarse_names.len() - 1
                }
            };
            if map.insert(fine.to_string(), index).is_some() {
                return Err(Error::validation(format!(
                    "fine label '{fine}' mapped twice in remap table"
                )));
            }
        }
        if coarse_names.is_empty() {
            return Err(Error::validation("remap table is empty"));
        }
        Ok(RemapTable { coarse_names, map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("# fine_label <TAB> coarse_name\n");
        for (fine, &index) in &self.map {
            out.push_str(fine);
            out.push('\t');
            out.push_str(&self.coarse_names[index]);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn coarse_names(&self) -> &[String] {
        &self.coarse_names
    }

    pub fn num_coarse(&self) -> usize {
        self.coarse_names.len()
    }

    pub fn num_fine(&self) -> usize {
        self.map.len()
    }

    pub fn remap(&self, fine_label: &str) -> Result<usize> {
        self.map.get(fine_label).copied().ok_or_else(|| {
            Error::validation(format!(
                "fine label '{fine_label}' is not covered by the remap table"
            ))
        })
    }
}

/// Map a fine keystep label to its coarse class index.
pub fn remap_keysteps(fine_label: &str, table: &RemapTable) -> Result<usize> {
    table.remap(fine_label)
}

/// Caption for a segment: all narrations whose timestamp falls inside the
/// segment window (inclusive on both ends), sorted by (timestamp,
/// annotator id), joined by ". ". No in-window narrations give an empty
/// caption; such samples are later excluded from pseudo-labeling.
pub fn align_narrations(segment: &Segment) -> String {
    let mut in_window: Vec<&Narration> = segment
        .narrations
        .iter()
        .filter(|n| segment.contains(n.timestamp_s))
        .collect();
    in_window.sort_by(|a, b| {
        a.timestamp_s
            .total_cmp(&b.timestamp_s)
            .then_with(|| a.annotator_id.cmp(&b.annotator_id))
            .then_with(|| a.text.cmp(&b.text))
    });
    in_window
        .iter()
        .map(|n| n.text.as_str())
        .collect::<Vec<_>>()
        .join(". ")
}

/// Per-timestep feature vectors with strictly increasing timestamps and a
/// uniform dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTrack<S> {
    timestamps: Vec<f64>,
    features: Vec<Vec<S>>,
}

impl<S: Scalar> FeatureTrack<S> {
    pub fn new(timestamps: Vec<f64>, features: Vec<Vec<S>>) -> Result<Self> {
        if timestamps.len() != features.len() {
            return Err(Error::validation(
                "feature track has mismatched timestamp and feature counts",
            ));
        }
        if timestamps.is_empty() {
            return Err(Error::validation("feature track is empty"));
        }
        for pair in timestamps.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(Error::validation(
                    "feature track timestamps must be strictly increasing",
                ));
            }
        }
        let dim = features[0].len();
        if dim == 0 || features.iter().any(|f| f.len() != dim) {
            return Err(Error::validation(
                "feature track vectors must share one nonzero dimension",
            ));
        }
        Ok(FeatureTrack {
            timestamps,
            features,
        })
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    fn window_indices(&self, segment: &Segment) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| segment.contains(self.timestamps[i]))
            .collect()
    }
}

/// How in-window features collapse to one segment vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Mean,
    Max,
}

/// Elementwise mean of the features inside the segment window.
pub fn pool_segment_features<S: Scalar>(
    track: &FeatureTrack<S>,
    segment: &Segment,
) -> Result<Vec<S>> {
    pool_segment_features_with(track, segment, PoolKind::Mean)
}

pub fn pool_segment_features_with<S: Scalar>(
    track: &FeatureTrack<S>,
    segment: &Segment,
    kind: PoolKind,
) -> Result<Vec<S>> {
    segment.validate()?;
    let indices = track.window_indices(segment);
    if indices.is_empty() {
        return Err(Error::validation(format!(
            "no features fall within [{}, {}] for take '{}'",
            segment.start_s, segment.end_s, segment.take_id
        )));
    }
    let dim = track.dim();
    match kind {
        PoolKind::Mean => {
            let mut acc = vec![S::zero(); dim];
            for &i in &indices {
                for (a, &v) in acc.iter_mut().zip(&track.features[i]) {
                    *a += v;
                }
            }
            let inv = S::of_f64(1.0 / indices.len() as f64);
            for a in acc.iter_mut() {
                *a = *a * inv;
            }
            Ok(acc)
        }
        PoolKind::Max => {
            let mut acc = track.features[indices[0]].clone();
            for &i in &indices[1..] {
                for (a, &v) in acc.iter_mut().zip(&track.features[i]) {
                    if v > *a {
                        *a = v;
                    }
                }
            }
            Ok(acc)
        }
    }
}

/// `k` equally spaced features from the in-window set: indices are
/// `round(linspace(0, m - 1, k))` into the `m` in-window features, repeating
/// entries when `m < k`.
pub fn sample_sequence<S: Scalar>(
    track: &FeatureTrack<S>,
    segment: &Segment,
    k: usize,
) -> Result<Vec<Vec<S>>> {
    if k == 0 {
        return Err(Error::validation("sequence length k must be at least 1"));
    }
    segment.validate()?;
    let indices = track.window_indices(segment);
    let m = indices.len();
    if m == 0 {
        return Err(Error::validation(format!(
            "no features fall within [{}, {}] for take '{}'",
            segment.start_s, segment.end_s, segment.take_id
        )));
    }
    let picks = linspace_indices(m, k);
    Ok(picks
        .into_iter()
        .map(|p| track.features[indices[p]].clone())
        .collect())
}

/// round(linspace(0, m - 1, k)), half rounding up.
pub(crate) fn linspace_indices(m: usize, k: usize) -> Vec<usize> {
    if k == 1 {
        return vec![0];
    }
    (0..k)
        .map(|j| {
            let x = j as f64 * (m as f64 - 1.0) / (k as f64 - 1.0);
            x.round() as usize
        })
        .collect()
}
