//! Ordered category names with the shared/private partitions used for
//! open-world transfer.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::sha256_hex;

/// Reserved name for the synthetic outlier class added by
/// [`crate::openworld::extend_label_space`].
pub const OUTLIER_NAME: &str = "__outlier__";

/// Ordered category names plus the shared / source-private / target-private
/// partition. In closed-set mode every class is shared and the private sets
/// are empty. After open-world extension `outlier_index` is set to the number
/// of shared classes, and classifier-visible classes become the shared
/// classes (re-indexed by shared rank) plus the outlier slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    names: Vec<String>,
    shared: Vec<usize>,
    source_private: Vec<usize>,
    target_private: Vec<usize>,
    outlier_index: Option<usize>,
}

/// On-disk layout: ordered class names plus optional partition index arrays.
#[derive(Debug, Serialize, Deserialize)]
struct LabelSpaceFile {
    names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shared: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_private: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_private: Option<Vec<usize>>,
}

impl LabelSpace {
    /// Closed-set space: every class shared, no private classes.
    pub fn closed(names: Vec<String>) -> Result<Self> {
        let shared = (0..names.len()).collect();
        Self::new(names, shared, Vec::new(), Vec::new())
    }

    pub fn new(
        names: Vec<String>,
        mut shared: Vec<usize>,
        mut source_private: Vec<usize>,
        mut target_private: Vec<usize>,
    ) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::validation("label space has no classes"));
        }
        let distinct: BTreeSet<&str> = names.iter().map(String::as_str).collect();
        if distinct.len() != names.len() {
            return Err(Error::validation("label space names are not distinct"));
        }
        shared.sort_unstable();
        shared.dedup();
        source_private.sort_unstable();
        source_private.dedup();
        target_private.sort_unstable();
        target_private.dedup();
        for &i in shared.iter().chain(&source_private).chain(&target_private) {
            if i >= names.len() {
                return Err(Error::validation(format!(
                    "partition index {i} out of range for {} classes",
                    names.len()
                )));
            }
        }
        let shared_set: BTreeSet<usize> = shared.iter().copied().collect();
        if source_private.iter().any(|i| shared_set.contains(i)) {
            return Err(Error::validation("shared and source_private overlap"));
        }
        if target_private.iter().any(|i| shared_set.contains(i)) {
            return Err(Error::validation("shared and target_private overlap"));
        }
        Ok(LabelSpace {
            names,
            shared,
            source_private,
            target_private,
            outlier_index: None,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn shared(&self) -> &[usize] {
        &self.shared
    }

    pub fn source_private(&self) -> &[usize] {
        &self.source_private
    }

    pub fn target_private(&self) -> &[usize] {
        &self.target_private
    }

    pub fn is_shared(&self, index: usize) -> bool {
        self.shared.binary_search(&index).is_ok()
    }

    pub fn is_target_private(&self, index: usize) -> bool {
        self.target_private.binary_search(&index).is_ok()
    }

    /// Set once the space has been extended for open-world training.
    pub fn outlier_index(&self) -> Option<usize> {
        self.outlier_index
    }

    pub fn is_open(&self) -> bool {
        self.outlier_index.is_some()
    }

    pub(crate) fn set_outlier(&mut self) {
        self.outlier_index = Some(self.shared.len());
    }

    /// Classes the text classifier head predicts over: all classes in closed
    /// mode, the shared classes in open mode.
    pub fn text_head_size(&self) -> usize {
        if self.is_open() {
            self.shared.len()
        } else {
            self.names.len()
        }
    }

    /// Classes the vision classifier head predicts over: adds the outlier
    /// slot in open mode.
    pub fn vision_head_size(&self) -> usize {
        if self.is_open() {
            self.shared.len() + 1
        } else {
            self.names.len()
        }
    }

    /// Map an original label to the classifier index used for training
    /// supervision. In open mode only shared classes are trainable from
    /// labels; private classes return None.
    pub fn train_index(&self, original: usize) -> Option<usize> {
        if !self.is_open() {
            return (original < self.names.len()).then_some(original);
        }
        self.shared.binary_search(&original).ok()
    }

    /// Map an original label to the classifier index used as evaluation
    /// ground truth. Target-private classes map to the outlier slot.
    pub fn eval_index(&self, original: usize) -> Option<usize> {
        if !self.is_open() {
            return (original < self.names.len()).then_some(original);
        }
        match self.shared.binary_search(&original) {
            Ok(rank) => Some(rank),
            Err(_) if self.is_target_private(original) => self.outlier_index,
            Err(_) => None,
        }
    }

    /// Display name for a classifier index (open mode resolves shared ranks
    /// and the outlier slot).
    pub fn classifier_name(&self, classifier_index: usize) -> Option<&str> {
        if !self.is_open() {
            return self.names.get(classifier_index).map(String::as_str);
        }
        if Some(classifier_index) == self.outlier_index {
            return Some(OUTLIER_NAME);
        }
        self.shared
            .get(classifier_index)
            .map(|&orig| self.names[orig].as_str())
    }

    /// Stable content hash; checkpoints embed it so a model refuses to run
    /// against a different label space.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("label space serializes");
        sha256_hex(canonical.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: LabelSpaceFile = serde_json::from_str(&text)?;
        match (file.shared, file.source_private, file.target_private) {
            (None, None, None) => Self::closed(file.names),
            (shared, sp, tp) => {
                let shared =
                    shared.unwrap_or_else(|| (0..file.names.len()).collect::<Vec<_>>());
                Self::new(
                    file.names,
                    shared,
                    sp.unwrap_or_default(),
                    tp.unwrap_or_default(),
                )
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = LabelSpaceFile {
            names: self.names.clone(),
            shared: Some(self.shared.clone()),
            source_private: (!self.source_private.is_empty())
                .then(|| self.source_private.clone()),
            target_private: (!self.target_private.is_empty())
                .then(|| self.target_private.clone()),
        };
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
