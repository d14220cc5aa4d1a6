//! Remapping dataset-specific tissue labels onto seven canonical classes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CANONICAL_CLASSES: [&str; 7] = [
    "adipose",
    "background",
    "debris",
    "lymphocytes",
    "normal colon mucosa",
    "stroma",
    "colorectal adenocarcinoma epithelium",
];

pub fn canonical_index(name: &str) -> Option<usize> {
    CANONICAL_CLASSES.iter().position(|c| *c == name)
}

/// Source label name -> canonical class name, plus labels to discard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelMap {
    pub mapping: BTreeMap<String, String>,
    #[serde(default)]
    pub drop: Vec<String>,
}

impl LabelMap {
    /// Kather-2019 (NCT-CRC-HE-100K) class codes.
    pub fn k19() -> Self {
        Self::from_json(include_str!("../../data/k19_labelmap.json")).expect("bundled map")
    }

    /// Kather-2016 class folders.
    pub fn k16() -> Self {
        Self::from_json(include_str!("../../data/k16_labelmap.json")).expect("bundled map")
    }

    /// Every canonical name maps to itself.
    pub fn identity() -> Self {
        Self {
            mapping: CANONICAL_CLASSES.iter().map(|c| (c.to_string(), c.to_string())).collect(),
            drop: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: LabelMap = serde_json::from_str(text)
            .map_err(|source| Error::Json { context: "label map".into(), source })?;
        map.validate()?;
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("label map serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for target in self.mapping.values() {
            if canonical_index(target).is_none() {
                return Err(Error::InvalidParameter(format!(
                    "{target:?} is not one of the canonical classes"
                )));
            }
        }
        Ok(())
    }

    /// `Ok(None)` for dropped labels.
    pub fn lookup(&self, label: &str) -> Result<Option<usize>> {
        if let Some(target) = self.mapping.get(label) {
            return canonical_index(target)
                .map(Some)
                .ok_or_else(|| Error::InvalidParameter(format!("{target:?} is not canonical")));
        }
        if self.drop.iter().any(|d| d == label) {
            return Ok(None);
        }
        Err(Error::UnmappedLabel(label.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemapReport {
    pub kept: usize,
    pub dropped: usize,
    pub per_class: [usize; 7],
}

/// Replaces string labels by canonical class indices, removing dropped ones.
pub fn remap_labels<T>(
    items: Vec<(T, String)>,
    map: &LabelMap,
) -> Result<(Vec<(T, usize)>, RemapReport)> {
    let mut out = Vec::with_capacity(items.len());
    let mut report = RemapReport { kept: 0, dropped: 0, per_class: [0; 7] };
    for (item, label) in items {
        match map.lookup(&label)? {
            Some(class) => {
                report.kept += 1;
                report.per_class[class] += 1;
                out.push((item, class));
            }
            None => report.dropped += 1,
        }
    }
    Ok((out, report))
}
