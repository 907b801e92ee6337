//! Closed-set metrics, transfer-gap analysis, embedding export and kNN
//! retrieval.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::linalg::{cosine, Matrix};
use crate::openworld::UniDAReport;
use crate::scalar::Scalar;
use crate::textcls::{TextClassifierModel, TextEncoder};
use crate::visioncls::{VisionBackbone, VisionModel};

const REPORT_FORMAT: &str = "lagtran-report-v1";
const EMBEDDINGS_FORMAT: &str = "lagtran-embeddings-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

impl Modality {
    fn key(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
        }
    }
}

/// Fraction of exact matches between predictions and ground truth, keyed by
/// sample id. The id sets must be identical.
pub fn top1(predictions: &[(String, usize)], truths: &[(String, usize)]) -> Result<f64> {
    let pred_map: BTreeMap<&str, usize> = predictions
        .iter()
        .map(|(id, index)| (id.as_str(), *index))
        .collect();
    let truth_map: BTreeMap<&str, usize> = truths
        .iter()
        .map(|(id, index)| (id.as_str(), *index))
        .collect();
    if pred_map.len() != predictions.len() || truth_map.len() != truths.len() {
        return Err(Error::validation("duplicate ids in top1 inputs"));
    }
    if pred_map.keys().ne(truth_map.keys()) {
        return Err(Error::validation(
            "prediction and truth id sets differ in top1",
        ));
    }
    if truth_map.is_empty() {
        return Err(Error::validation("top1 over zero samples is undefined"));
    }
    let correct = truth_map
        .iter()
        .filter(|(id, &t)| pred_map[*id] == t)
        .count();
    Ok(correct as f64 / truth_map.len() as f64)
}

/// Train-domain x eval-domain accuracy for one modality. Row/column 0 is the
/// source domain, 1 the target domain; entries are None when that training
/// run was not performed (target-trained rows need target labels).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub acc: [[Option<f64>; 2]; 2],
}

impl TransferMatrix {
    /// Matrix with only the source-trained row filled.
    pub fn source_row(in_domain: f64, cross_domain: f64) -> Self {
        TransferMatrix {
            acc: [[Some(in_domain), Some(cross_domain)], [None, None]],
        }
    }

    /// In-domain minus cross-domain accuracy, averaged over the train rows
    /// that have both entries.
    pub fn transfer_drop(&self) -> Option<f64> {
        let mut drops = Vec::new();
        for train in 0..2 {
            if let (Some(in_domain), Some(cross)) =
                (self.acc[train][train], self.acc[train][1 - train])
            {
                drops.push(in_domain - cross);
            }
        }
        if drops.is_empty() {
            None
        } else {
            Some(drops.iter().sum::<f64>() / drops.len() as f64)
        }
    }
}

/// Everything a pipeline run reports: per-domain top-1, per-modality
/// transfer matrices with their drops, and the open-world scores when
/// applicable. Serializes to a flat `key = value` text file with sorted
/// keys, so equal reports are byte-identical.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: Option<String>,
    pub seed: Option<u64>,
    pub top1: BTreeMap<String, f64>,
    pub text_transfer: Option<TransferMatrix>,
    pub image_transfer: Option<TransferMatrix>,
    pub unida: Option<UniDAReport>,
}

impl MetricsReport {
    pub fn text_drop(&self) -> Option<f64> {
        self.text_transfer.and_then(|m| m.transfer_drop())
    }

    pub fn image_drop(&self) -> Option<f64> {
        self.image_transfer.and_then(|m| m.transfer_drop())
    }

    /// Image drop minus text drop; positive means text transfers better.
    pub fn drop_difference(&self) -> Option<f64> {
        Some(self.image_drop()? - self.text_drop()?)
    }

    pub fn better_modality(&self) -> Option<Modality> {
        let difference = self.drop_difference()?;
        if difference > 0.0 {
            Some(Modality::Text)
        } else if difference < 0.0 {
            Some(Modality::Image)
        } else {
            None
        }
    }

    fn flat_entries(&self) -> BTreeMap<String, String> {
        let mut entries = BTreeMap::new();
        entries.insert("format".into(), REPORT_FORMAT.into());
        if let Some(method) = &self.method {
            entries.insert("method".into(), method.clone());
        }
        if let Some(seed) = self.seed {
            entries.insert("seed".into(), seed.to_string());
        }
        for (domain, acc) in &self.top1 {
            entries.insert(format!("top1.{domain}"), format!("{acc:?}"));
        }
        let domains = ["source", "target"];
        for (modality, matrix) in [
            (Modality::Text, &self.text_transfer),
            (Modality::Image, &self.image_transfer),
        ] {
            let Some(matrix) = matrix else { continue };
            for train in 0..2 {
                for eval in 0..2 {
                    if let Some(acc) = matrix.acc[train][eval] {
                        entries.insert(
                            format!("{}.acc.{}.{}", modality.key(), domains[train], domains[eval]),
                            format!("{acc:?}"),
                        );
                    }
                }
            }
            if let Some(drop) = matrix.transfer_drop() {
                entries.insert(format!("{}.drop", modality.key()), format!("{drop:?}"));
            }
        }
        if let Some(difference) = self.drop_difference() {
            entries.insert("transfer.drop_difference".into(), format!("{difference:?}"));
        }
        if let Some(better) = self.better_modality() {
            entries.insert("transfer.better_modality".into(), better.key().into());
        }
        if let Some(unida) = &self.unida {
            entries.insert("unida.closed_acc".into(), format!("{:?}", unida.closed_acc));
            entries.insert("unida.open_acc".into(), format!("{:?}", unida.open_acc));
            entries.insert("unida.h_score".into(), format!("{:?}", unida.h_score));
        }
        entries
    }

    pub fn to_flat_text(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.flat_entries() {
            out.push_str(&key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_flat_text()).map_err(|e| Error::io(path, e))
    }

    /// Reparse a flat report file. Only the structured fields are
    /// reconstructed; derived keys are recomputed on demand.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line.split_once(" = ").ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: "expected 'key = value'".into(),
            })?;
            entries.insert(key.to_string(), value.to_string());
        }
        if entries.get("format").map(String::as_str) != Some(REPORT_FORMAT) {
            return Err(Error::validation("unrecognized report format"));
        }
        let parse = |v: &String| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|e| Error::validation(format!("bad float '{v}': {e}")))
        };
        let mut report = MetricsReport {
            method: entries.get("method").cloned(),
            seed: entries
                .get("seed")
                .map(|s| {
                    s.parse::<u64>()
                        .map_err(|e| Error::validation(format!("bad seed '{s}': {e}")))
                })
                .transpose()?,
            ..Default::default()
        };
        let domains = ["source", "target"];
        for (key, value) in &entries {
            if let Some(domain) = key.strip_prefix("top1.") {
                report.top1.insert(domain.to_string(), parse(value)?);
            }
            for (modality, slot) in [
                ("text", &mut report.text_transfer),
                ("image", &mut report.image_transfer),
            ] {
                let Some(rest) = key.strip_prefix(&format!("{modality}.acc.")) else {
                    continue;
                };
                let Some((train_name, eval_name)) = rest.split_once('.') else {
                    continue;
                };
                let train = domains.iter().position(|d| *d == train_name);
                let eval = domains.iter().position(|d| *d == eval_name);
                if let (Some(train), Some(eval)) = (train, eval) {
                    let matrix = slot.get_or_insert(TransferMatrix {
                        acc: [[None; 2]; 2],
                    });
                    matrix.acc[train][eval] = Some(parse(value)?);
                }
            }
        }
        if let (Some(closed), Some(open), Some(h)) = (
            entries.get("unida.closed_acc"),
            entries.get("unida.open_acc"),
            entries.get("unida.h_score"),
        ) {
            report.unida = Some(UniDAReport {
                closed_acc: parse(closed)?,
                open_acc: parse(open)?,
                h_score: parse(h)?,
            });
        }
        Ok(report)
    }
}

/// Assemble the modality-gap report from per-modality transfer matrices.
pub fn transfer_gap_report(
    text_matrix: TransferMatrix,
    image_matrix: TransferMatrix,
) -> Result<MetricsReport> {
    for matrix in [&text_matrix, &image_matrix] {
        for row in &matrix.acc {
            for acc in row.iter().flatten() {
                if !(0.0..=1.0).contains(acc) {
                    return Err(Error::validation(format!(
                        "accuracy {acc} outside [0, 1]"
                    )));
                }
            }
        }
    }
    Ok(MetricsReport {
        text_transfer: Some(text_matrix),
        image_transfer: Some(image_matrix),
        ..Default::default()
    })
}

/// Embeddings with row metadata, as exported for plotting or retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<S> {
    pub ids: Vec<String>,
    pub domains: Vec<String>,
    pub labels: Vec<Option<usize>>,
    pub model_hash: String,
    rows: Matrix<S>,
}

impl<S: Scalar> EmbeddingMatrix<S> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, i: usize) -> &[S] {
        self.rows.row(i)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }
}

/// Gallery of exported embeddings per modality.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingGallery<S> {
    pub text: Option<EmbeddingMatrix<S>>,
    pub image: Option<EmbeddingMatrix<S>>,
}

/// The `k` gallery ids most cosine-similar to the query embedding, excluding
/// the query itself. Ties resolve to the lexicographically lowest id, which
/// also makes the result invariant to gallery row order.
pub fn knn_retrieve<S: Scalar>(
    query_id: &str,
    gallery: &EmbeddingGallery<S>,
    k: usize,
    space: Modality,
) -> Result<Vec<String>> {
    let matrix = match space {
        Modality::Text => gallery.text.as_ref(),
        Modality::Image => gallery.image.as_ref(),
    }
    .ok_or_else(|| {
        Error::validation(format!("gallery has no {} embeddings", space.key()))
    })?;
    knn_in_matrix(query_id, matrix, k)
}

pub fn knn_in_matrix<S: Scalar>(
    query_id: &str,
    matrix: &EmbeddingMatrix<S>,
    k: usize,
) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    // The query itself is excluded, so at most len - 1 neighbors exist.
    if k + 1 > matrix.len() {
        return Err(Error::validation(format!(
            "k = {k} too large for gallery of {} embeddings",
            matrix.len()
        )));
    }
    let query = matrix
        .index_of(query_id)
        .ok_or_else(|| Error::validation(format!("query id '{query_id}' not in gallery")))?;
    let query_row = matrix.row(query);
    let mut scored: Vec<(S, &str)> = (0..matrix.len())
        .filter(|&i| i != query)
        .map(|i| (cosine(matrix.row(i), query_row), matrix.ids[i].as_str()))
        .collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.1.cmp(b.1))
    });
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(_, id)| id.to_string())
        .collect())
}

/// A frozen model that can map samples to penultimate-layer representations.
pub trait EmbeddingSource<S: Scalar> {
    fn is_frozen(&self) -> bool;
    fn source_hash(&self) -> String;
    fn embedding(&self, sample: &Sample<S>) -> Result<Vec<S>>;
}

impl<S: Scalar, E: TextEncoder<S> + Serialize> EmbeddingSource<S> for TextClassifierModel<S, E> {
    fn is_frozen(&self) -> bool {
        self.frozen()
    }

    fn source_hash(&self) -> String {
        self.content_hash()
    }

    fn embedding(&self, sample: &Sample<S>) -> Result<Vec<S>> {
        let caption = sample.caption.as_deref().ok_or_else(|| {
            Error::validation(format!(
                "sample '{}' has no caption to embed with a text model",
                sample.id
            ))
        })?;
        Ok(self.penultimate(caption))
    }
}

impl<S: Scalar, B: VisionBackbone<S> + Serialize> EmbeddingSource<S> for VisionModel<S, B> {
    fn is_frozen(&self) -> bool {
        self.frozen()
    }

    fn source_hash(&self) -> String {
        self.content_hash()
    }

    fn embedding(&self, sample: &Sample<S>) -> Result<Vec<S>> {
        self.penultimate(&sample.payload)
    }
}

/// Export penultimate-layer representations with metadata: a JSON header
/// line (dims, model hash) followed by one tab-separated row per sample.
/// Deterministic, so re-exports are byte-identical. The model must be
/// frozen.
pub fn export_embeddings<S: Scalar, M: EmbeddingSource<S>>(
    model: &M,
    samples: &[Sample<S>],
    path: &Path,
) -> Result<EmbeddingMatrix<S>> {
    if !model.is_frozen() {
        return Err(Error::contract(
            "export_embeddings requires a frozen model",
        ));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for sample in samples {
        rows.push(model.embedding(sample)?);
    }
    let matrix = EmbeddingMatrix {
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        domains: samples.iter().map(|s| s.domain.clone()).collect(),
        labels: samples.iter().map(|s| s.label).collect(),
        model_hash: model.source_hash(),
        rows: Matrix::from_rows(rows)?,
    };

    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let header = serde_json::json!({
        "format": EMBEDDINGS_FORMAT,
        "dim": matrix.dim(),
        "count": matrix.len(),
        "model_hash": matrix.model_hash,
    });
    writeln!(out, "{header}").map_err(|e| Error::io(path, e))?;
    for i in 0..matrix.len() {
        let label = matrix.labels[i]
            .map(|l| l.to_string())
            .unwrap_or_else(|| "-".into());
        let values: Vec<String> = matrix
            .row(i)
            .iter()
            .map(|v| format!("{:?}", v.to_f64_lossy()))
            .collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            matrix.ids[i],
            matrix.domains[i],
            label,
            values.join(" ")
        )
        .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(matrix)
}

/// Build a gallery matrix in memory without touching disk.
pub fn embed_samples<S: Scalar, M: EmbeddingSource<S>>(
    model: &M,
    samples: &[Sample<S>],
) -> Result<EmbeddingMatrix<S>> {
    if !model.is_frozen() {
        return Err(Error::contract("embedding requires a frozen model"));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for sample in samples {
        rows.push(model.embedding(sample)?);
    }
    Ok(EmbeddingMatrix {
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        domains: samples.iter().map(|s| s.domain.clone()).collect(),
        labels: samples.iter().map(|s| s.label).collect(),
        model_hash: model.source_hash(),
        rows: Matrix::from_rows(rows)?,
    })
}

/// All sample ids in both lists, used by pipelines to line up predictions.
pub fn id_set(pairs: &[(String, usize)]) -> BTreeSet<&str> {
    pairs.iter().map(|(id, _)| id.as_str()).collect()
}
