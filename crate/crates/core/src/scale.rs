//! Rating-scale definitions.
//!
//! A [`ScaleDefinition`] carries everything the rest of the pipeline needs to
//! know about an instrument: item names, per-level anchor texts, the rating
//! range, source/factor metadata used for grouped analyses, and the manual
//! text embedded into the model's system instructions. The BPRS-E definition
//! ships with the crate and can be obtained with [`ScaleDefinition::bprs_e`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of the bundled 24-item expanded BPRS.
pub const BPRS_E_ID: &str = "bprs-e-24";

/// Number of items in the BPRS-E.
pub const BPRS_E_ITEMS: usize = 24;

const BPRS_E_JSON: &str = include_str!("../assets/bprs-e-24.json");

#[derive(Debug, Error)]
pub enum ScaleError {
    #[error("failed to read scale file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scale definition: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scale definition: {0}")]
    Validation(String),
    #[error("item {index} ({name}) has no {field} metadata")]
    MissingMetadata {
        index: u32,
        name: String,
        field: &'static str,
    },
}

/// How an item is rated: from the patient's report, from interviewer
/// observation, or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    SelfReported,
    Observed,
    Dual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleItem {
    pub index: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_tag: Option<SourceTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor_label: Option<String>,
    #[serde(default)]
    pub not_present_anchor: String,
    /// Anchor text per rating level above the floor, keyed by the rating.
    #[serde(default)]
    pub anchors: BTreeMap<u8, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleDefinition {
    pub scale_id: String,
    pub version: String,
    pub rating_min: u8,
    pub rating_max: u8,
    pub manual_text: String,
    pub items: Vec<ScaleItem>,
}

/// Which item metadata to group by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Source,
    Factor,
}

pub const SELF_REPORTED_GROUP: &str = "self_reported";
pub const OBSERVED_GROUP: &str = "observed";

impl ScaleDefinition {
    /// The bundled BPRS-E definition.
    pub fn bprs_e() -> ScaleDefinition {
        Self::from_json(BPRS_E_JSON).expect("bundled BPRS-E definition is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ScaleDefinition, ScaleError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ScaleError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<ScaleDefinition, ScaleError> {
        let scale: ScaleDefinition = serde_json::from_str(text)?;
        scale.validate()?;
        Ok(scale)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scale definition serializes")
    }

    /// Checks the structural invariants. BPRS-E definitions must have exactly
    /// 24 items on a 1..=7 range; other scale ids only need contiguous indices.
    pub fn validate(&self) -> Result<(), ScaleError> {
        if self.rating_min < 1 || self.rating_min >= self.rating_max {
            return Err(ScaleError::Validation(format!(
                "invalid rating range {}..={}",
                self.rating_min, self.rating_max
            )));
        }
        if self.scale_id == BPRS_E_ID {
            if self.items.len() != BPRS_E_ITEMS {
                return Err(ScaleError::Validation(format!(
                    "expected {BPRS_E_ITEMS} items, found {}",
                    self.items.len()
                )));
            }
            if self.rating_min != 1 || self.rating_max != 7 {
                return Err(ScaleError::Validation(format!(
                    "expected rating range 1..=7, found {}..={}",
                    self.rating_min, self.rating_max
                )));
            }
        }
        if self.items.is_empty() {
            return Err(ScaleError::Validation("scale has no items".into()));
        }

        let mut seen = vec![false; self.items.len()];
        for item in &self.items {
            let label = format!("item {} ({})", item.index, item.name);
            let slot = (item.index as usize)
                .checked_sub(1)
                .filter(|i| *i < self.items.len())
                .ok_or_else(|| {
                    ScaleError::Validation(format!(
                        "{label}: index outside 1..={}",
                        self.items.len()
                    ))
                })?;
            if seen[slot] {
                return Err(ScaleError::Validation(format!("{label}: duplicate index")));
            }
            seen[slot] = true;
            if item.name.trim().is_empty() {
                return Err(ScaleError::Validation(format!("{label}: empty name")));
            }
            if item.not_present_anchor.trim().is_empty() {
                return Err(ScaleError::Validation(format!(
                    "{label}: missing not_present_anchor"
                )));
            }
            for rating in (self.rating_min + 1)..=self.rating_max {
                match item.anchors.get(&rating) {
                    Some(text) if !text.trim().is_empty() => {}
                    _ => {
                        return Err(ScaleError::Validation(format!(
                            "{label}: missing anchor for rating {rating}"
                        )))
                    }
                }
            }
            if let Some(extra) = item
                .anchors
                .keys()
                .find(|r| **r <= self.rating_min || **r > self.rating_max)
            {
                return Err(ScaleError::Validation(format!(
                    "{label}: anchor for rating {extra} outside the scale range"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items in index order.
    pub fn items_by_index(&self) -> Vec<&ScaleItem> {
        let mut items: Vec<&ScaleItem> = self.items.iter().collect();
        items.sort_by_key(|item| item.index);
        items
    }

    pub fn item(&self, index: u32) -> Option<&ScaleItem> {
        self.items.iter().find(|item| item.index == index)
    }

    pub fn total_range(&self) -> (u32, u32) {
        let n = self.items.len() as u32;
        (n * self.rating_min as u32, n * self.rating_max as u32)
    }

    /// Groups item indices by source tag or factor label.
    ///
    /// Source grouping yields `self_reported` and `observed`; items tagged
    /// `dual` are listed under `observed`.
    pub fn item_groups(&self, grouping: Grouping) -> Result<BTreeMap<String, Vec<u32>>, ScaleError> {
        let mut groups: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        for item in self.items_by_index() {
            let label = match grouping {
                Grouping::Source => match item.source_tag {
                    Some(SourceTag::SelfReported) => SELF_REPORTED_GROUP.to_string(),
                    Some(SourceTag::Observed | SourceTag::Dual) => OBSERVED_GROUP.to_string(),
                    None => return Err(missing(item, "source_tag")),
                },
                Grouping::Factor => match &item.factor_label {
                    Some(label) if !label.trim().is_empty() => label.clone(),
                    _ => return Err(missing(item, "factor_label")),
                },
            };
            groups.entry(label).or_default().push(item.index);
        }
        Ok(groups)
    }
}

fn missing(item: &ScaleItem, field: &'static str) -> ScaleError {
    ScaleError::MissingMetadata {
        index: item.index,
        name: item.name.clone(),
        field,
    }
}
