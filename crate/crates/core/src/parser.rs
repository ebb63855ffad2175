//! Structured model output: validation into [`PredictedAssessment`] and the
//! inverse rendering used for few-shot assistant turns.
//!
//! The canonical wire shape is
//! `{"items":[{"index":1,"name":"...","explanation":"...","rating":1}, ...]}`.
//! Items are matched by name (case- and punctuation-insensitive), falling back
//! to `index` when the name does not match. Unknown keys are ignored.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::corpus::{AssessmentRecord, CaseKey};
use crate::scale::{ScaleDefinition, ScaleItem};

/// Explanation attached to rendered ground-truth ratings, which carry none.
pub const TRUTH_EXPLANATION: &str = "Rating assigned by the clinician for this visit.";

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum ParseError {
    #[error("malformed JSON output: {0}")]
    MalformedJson(String),
    #[error("missing item {0:?}")]
    MissingItem(String),
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("duplicate item {0:?}")]
    DuplicateItem(String),
    #[error("item {item:?}: rating {value} outside the scale range")]
    RatingOutOfRange { item: String, value: i64 },
    #[error("item {item:?}: rating {value} is not an integer")]
    NonIntegerRating { item: String, value: String },
}

impl ParseError {
    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            ParseError::MalformedJson(_) => "malformed_json",
            ParseError::MissingItem(_) => "missing_item",
            ParseError::UnknownItem(_) => "unknown_item",
            ParseError::DuplicateItem(_) => "duplicate_item",
            ParseError::RatingOutOfRange { .. } => "rating_out_of_range",
            ParseError::NonIntegerRating { .. } => "non_integer_rating",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedItem {
    pub item_index: u32,
    pub rating: u8,
    pub explanation: String,
}

/// Validated ratings for every scale item, in index order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedRatings {
    pub items: Vec<PredictedItem>,
}

impl ParsedRatings {
    pub fn ratings(&self) -> Vec<u8> {
        self.items.iter().map(|i| i.rating).collect()
    }

    pub fn total(&self) -> u32 {
        self.items.iter().map(|i| i.rating as u32).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedAssessment {
    pub patient_id: String,
    pub visit_index: u32,
    pub items: Vec<PredictedItem>,
    /// Request fingerprint of the completion, or a `carried-forward:` marker.
    pub provenance: String,
}

impl PredictedAssessment {
    pub fn from_parsed(key: &CaseKey, parsed: ParsedRatings, provenance: impl Into<String>) -> Self {
        PredictedAssessment {
            patient_id: key.patient_id.clone(),
            visit_index: key.visit_index,
            items: parsed.items,
            provenance: provenance.into(),
        }
    }

    /// A prediction that copies an earlier visit's ground truth.
    pub fn carried_forward(target: &CaseKey, previous: &AssessmentRecord) -> Self {
        PredictedAssessment {
            patient_id: target.patient_id.clone(),
            visit_index: target.visit_index,
            items: previous
                .ratings
                .iter()
                .enumerate()
                .map(|(i, r)| PredictedItem {
                    item_index: i as u32 + 1,
                    rating: *r,
                    explanation: String::new(),
                })
                .collect(),
            provenance: format!(
                "carried-forward:{}@{}",
                previous.patient_id, previous.visit_index
            ),
        }
    }

    pub fn ratings(&self) -> Vec<u8> {
        self.items.iter().map(|i| i.rating).collect()
    }

    pub fn total(&self) -> u32 {
        self.items.iter().map(|i| i.rating as u32).sum()
    }
}

/// Anything that can be rendered in the structured output format.
pub trait Rated {
    /// Ratings in item-index order.
    fn ratings(&self) -> Vec<u8>;
    fn explanation(&self, item_index: u32) -> Option<&str>;
}

impl Rated for AssessmentRecord {
    fn ratings(&self) -> Vec<u8> {
        self.ratings.clone()
    }

    fn explanation(&self, _item_index: u32) -> Option<&str> {
        None
    }
}

impl Rated for PredictedAssessment {
    fn ratings(&self) -> Vec<u8> {
        PredictedAssessment::ratings(self)
    }

    fn explanation(&self, item_index: u32) -> Option<&str> {
        self.items
            .iter()
            .find(|i| i.item_index == item_index)
            .map(|i| i.explanation.as_str())
    }
}

#[derive(Serialize)]
struct CanonicalItem<'a> {
    index: u32,
    name: &'a str,
    explanation: &'a str,
    rating: u8,
}

#[derive(Serialize)]
struct CanonicalOutput<'a> {
    items: Vec<CanonicalItem<'a>>,
}

/// Renders an assessment in the canonical structured output format.
pub fn render(assessment: &impl Rated, scale: &ScaleDefinition) -> String {
    let ratings = assessment.ratings();
    let items = scale
        .items_by_index()
        .into_iter()
        .zip(ratings)
        .map(|(item, rating)| CanonicalItem {
            index: item.index,
            name: &item.name,
            explanation: assessment
                .explanation(item.index)
                .unwrap_or(TRUTH_EXPLANATION),
            rating,
        })
        .collect();
    serde_json::to_string_pretty(&CanonicalOutput { items }).expect("canonical output serializes")
}

/// JSON schema of the canonical output, sent to providers in schema mode.
pub fn output_schema(scale: &ScaleDefinition) -> Value {
    let ratings: Vec<Value> = (scale.rating_min..=scale.rating_max).map(Value::from).collect();
    let names: Vec<Value> = scale
        .items_by_index()
        .iter()
        .map(|i| Value::from(i.name.as_str()))
        .collect();
    serde_json::json!({
        "type": "object",
        "properties": {
            "items": {
                "type": "array",
                "minItems": scale.len(),
                "maxItems": scale.len(),
                "items": {
                    "type": "object",
                    "properties": {
                        "index": {"type": "integer"},
                        "name": {"type": "string", "enum": names},
                        "explanation": {"type": "string"},
                        "rating": {"type": "integer", "enum": ratings}
                    },
                    "required": ["index", "name", "explanation", "rating"],
                    "additionalProperties": false
                }
            }
        },
        "required": ["items"],
        "additionalProperties": false
    })
}

fn normalize(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

fn strip_code_fence(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let body = match rest.find('\n') {
        Some(pos) => &rest[pos + 1..],
        None => rest,
    };
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

/// Validates raw model output against the scale.
pub fn parse(raw_text: &str, scale: &ScaleDefinition) -> Result<ParsedRatings, ParseError> {
    let value: Value = serde_json::from_str(strip_code_fence(raw_text))
        .map_err(|e| ParseError::MalformedJson(e.to_string()))?;
    let entries = value
        .as_object()
        .and_then(|o| o.get("items"))
        .and_then(Value::as_array)
        .ok_or_else(|| ParseError::MalformedJson("expected an object with an \"items\" array".into()))?;

    let by_index = scale.items_by_index();
    let normalized: Vec<String> = by_index.iter().map(|i| normalize(&i.name)).collect();
    let mut slots: Vec<Option<PredictedItem>> = vec![None; by_index.len()];

    for (pos, entry) in entries.iter().enumerate() {
        let obj = entry.as_object().ok_or_else(|| {
            ParseError::MalformedJson(format!("items[{pos}] is not an object"))
        })?;
        let slot = resolve_item(obj, pos, &by_index, &normalized)?;
        let item = by_index[slot];
        let rating = coerce_rating(obj.get("rating"), item, scale)?;
        let explanation = match obj.get("explanation") {
            None | Some(Value::Null) => String::new(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => {
                return Err(ParseError::MalformedJson(format!(
                    "items[{pos}].explanation is not a string"
                )))
            }
        };
        if slots[slot].is_some() {
            return Err(ParseError::DuplicateItem(item.name.clone()));
        }
        slots[slot] = Some(PredictedItem {
            item_index: item.index,
            rating,
            explanation,
        });
    }

    let mut items = Vec::with_capacity(slots.len());
    for (slot, item) in slots.into_iter().zip(&by_index) {
        items.push(slot.ok_or_else(|| ParseError::MissingItem(item.name.clone()))?);
    }
    Ok(ParsedRatings { items })
}

fn resolve_item(
    obj: &Map<String, Value>,
    pos: usize,
    items: &[&ScaleItem],
    normalized: &[String],
) -> Result<usize, ParseError> {
    let name = match obj.get("name") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.as_str()),
        Some(_) => {
            return Err(ParseError::MalformedJson(format!(
                "items[{pos}].name is not a string"
            )))
        }
    };
    if let Some(name) = name {
        let key = normalize(name);
        let mut hits = normalized.iter().enumerate().filter(|(_, n)| **n == key);
        if let (Some((slot, _)), None) = (hits.next(), hits.next()) {
            return Ok(slot);
        }
    }
    match obj.get("index") {
        Some(index) => {
            let slot = index
                .as_u64()
                .and_then(|i| items.iter().position(|item| item.index as u64 == i));
            slot.ok_or_else(|| {
                ParseError::UnknownItem(name.map(str::to_string).unwrap_or_else(|| index.to_string()))
            })
        }
        None => match name {
            Some(name) => Err(ParseError::UnknownItem(name.to_string())),
            None => Err(ParseError::MalformedJson(format!(
                "items[{pos}] has neither name nor index"
            ))),
        },
    }
}

fn coerce_rating(
    value: Option<&Value>,
    item: &ScaleItem,
    scale: &ScaleDefinition,
) -> Result<u8, ParseError> {
    let non_integer = |v: String| ParseError::NonIntegerRating {
        item: item.name.clone(),
        value: v,
    };
    let number = match value {
        None => {
            return Err(ParseError::MalformedJson(format!(
                "item {:?} has no rating",
                item.name
            )))
        }
        Some(Value::Number(n)) => {
            if let Some(i) = n.as_i64() {
                i
            } else {
                integral(n.as_f64().unwrap_or(f64::NAN)).ok_or_else(|| non_integer(n.to_string()))?
            }
        }
        Some(Value::String(s)) => {
            let t = s.trim();
            match t.parse::<i64>() {
                Ok(i) => i,
                Err(_) => t
                    .parse::<f64>()
                    .ok()
                    .and_then(integral)
                    .ok_or_else(|| non_integer(s.clone()))?,
            }
        }
        Some(other) => return Err(non_integer(other.to_string())),
    };
    if number < scale.rating_min as i64 || number > scale.rating_max as i64 {
        return Err(ParseError::RatingOutOfRange {
            item: item.name.clone(),
            value: number,
        });
    }
    Ok(number as u8)
}

fn integral(x: f64) -> Option<i64> {
    (x.is_finite() && x.fract() == 0.0).then_some(x as i64)
}
