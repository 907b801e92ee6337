//! Manifest files: UTF-8, one flat JSON record per line with keys `id`,
//! `domain`, `payload` (path string or array of reals), optional `caption`
//! and optional `label`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{DomainSplit, LabelSpace, Payload, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    Labeled,
    /// Strip labels from training visibility; manifest labels, when present,
    /// are kept as hidden evaluation ground truth.
    Unlabeled,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record<S> {
    id: String,
    domain: String,
    payload: Payload<S>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
}

/// Load a manifest into a split, validating ids and label ranges against the
/// given label space.
pub fn load_manifest<S: Scalar>(
    path: &Path,
    mode: LoadMode,
    label_space: LabelSpace,
) -> Result<DomainSplit<S>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut samples: Vec<Sample<S>> = Vec::new();
    let mut hidden: Vec<Option<usize>> = Vec::new();
    let mut domain: Option<String> = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Record<S> = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        match &domain {
            None => domain = Some(record.domain.clone()),
            Some(d) if *d != record.domain => {
                return Err(Error::validation(format!(
                    "manifest mixes domains '{d}' and '{}' (line {})",
                    record.domain,
                    lineno + 1
                )));
            }
            Some(_) => {}
        }
        let (visible, eval) = match mode {
            LoadMode::Labeled => (record.label, None),
            LoadMode::Unlabeled => (None, record.label),
        };
        samples.push(Sample {
            id: record.id,
            domain: record.domain,
            payload: record.payload,
            caption: record.caption,
            label: visible,
        });
        hidden.push(eval);
    }
    let domain = domain
        .ok_or_else(|| Error::validation(format!("manifest {} has no records", path.display())))?;
    match mode {
        LoadMode::Labeled => DomainSplit::new_labeled(domain, samples, label_space),
        LoadMode::Unlabeled => DomainSplit::new_unlabeled(domain, samples, label_space, hidden),
    }
}

/// Write a split back to manifest format. Hidden evaluation labels are
/// written to the `label` key, so a round trip through `load_manifest` with
/// the same mode reproduces the split exactly.
pub fn serialize_manifest<S: Scalar>(split: &DomainSplit<S>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for (sample, hidden) in split.samples.iter().zip(split.hidden_eval()) {
        let record = Record {
            id: sample.id.clone(),
            domain: sample.domain.clone(),
            payload: sample.payload.clone(),
            caption: sample.caption.clone(),
            label: sample.label.or(*hidden),
        };
        let line = serde_json::to_string(&record)?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> LabelSpace {
        LabelSpace::closed(vec!["cat".into(), "dog".into(), "bird".into()]).unwrap()
    }

    fn write_lines(lines: &[&str]) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        std::fs::write(&path, lines.join("\n")).unwrap();
        (dir, path)
    }

    #[test]
    fn loads_records_in_file_order() {
        let (_d, path) = write_lines(&[
            r#"{"id":"a","domain":"usa","payload":[1.0,2.0],"caption":"a cat","label":0}"#,
            r#"{"id":"b","domain":"usa","payload":"img/b.jpg","label":1}"#,
            r#"{"id":"c","domain":"usa","payload":[0.5],"caption":"bird!","label":2}"#,
        ]);
        let split: DomainSplit<f64> = load_manifest(&path, LoadMode::Labeled, space()).unwrap();
        let ids: Vec<&str> = split.samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(split.samples[1].payload, Payload::Path("img/b.jpg".into()));
    }

    #[test]
    fn malformed_record_names_line() {
        let (_d, path) = write_lines(&[
            r#"{"id":"a","domain":"usa","payload":[1.0],"label":0}"#,
            r#"{"id":"b","domain":"usa","payload":}"#,
        ]);
        let err = load_manifest::<f64>(&path, LoadMode::Labeled, space()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let (_d, path) = write_lines(&[
            r#"{"id":"a","domain":"usa","payload":[1.0],"label":0}"#,
            r#"{"id":"a","domain":"usa","payload":[2.0],"label":1}"#,
        ]);
        assert!(load_manifest::<f64>(&path, LoadMode::Labeled, space()).is_err());
    }

    #[test]
    fn out_of_range_label_rejected() {
        let (_d, path) =
            write_lines(&[r#"{"id":"a","domain":"usa","payload":[1.0],"label":600}"#]);
        let err = load_manifest::<f64>(&path, LoadMode::Labeled, space()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("out of range"), "message was: {msg}");
    }

    #[test]
    fn unlabeled_load_hides_but_keeps_labels() {
        let (_d, path) = write_lines(&[
            r#"{"id":"a","domain":"asia","payload":[1.0],"caption":"x","label":2}"#,
        ]);
        let split: DomainSplit<f64> =
            load_manifest(&path, LoadMode::Unlabeled, space()).unwrap();
        assert_eq!(split.samples[0].label, None);
        assert_eq!(split.eval_label(0), Some(2));

        // Round trip preserves the hidden label and visibility.
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("round.jsonl");
        serialize_manifest(&split, &out).unwrap();
        let reloaded: DomainSplit<f64> =
            load_manifest(&out, LoadMode::Unlabeled, space()).unwrap();
        assert_eq!(split, reloaded);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (_d, path) = write_lines(&[
            r#"{"id":"a","domain":"usa","payload":[0.1,0.30000000000000004],"caption":"tags and alt-text","label":0}"#,
            r#"{"id":"b","domain":"usa","payload":"img/b.jpg","caption":"","label":1}"#,
        ]);
        let split: DomainSplit<f64> = load_manifest(&path, LoadMode::Labeled, space()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out1 = dir.path().join("m1.jsonl");
        let out2 = dir.path().join("m2.jsonl");
        serialize_manifest(&split, &out1).unwrap();
        let reloaded: DomainSplit<f64> = load_manifest(&out1, LoadMode::Labeled, space()).unwrap();
        assert_eq!(split, reloaded);
        serialize_manifest(&reloaded, &out2).unwrap();
        assert_eq!(
            std::fs::read(&out1).unwrap(),
            std::fs::read(&out2).unwrap()
        );
    }
}
