//! System instructions and message sequences for scoring requests.
//!
//! The system text always embeds the complete scale manual, every item's
//! anchors including an explicit `1 = not present` option, the output format
//! directive, and the task instructions both before and after the manual. The
//! instructions are in English regardless of the transcript language.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CaseKey, PatientTimeline};
use crate::parser::render;
use crate::scale::ScaleDefinition;

/// Version stamp of the instruction wording below. Bump on any change.
pub const PROMPT_VERSION: &str = "bprs-e-instructions-v1";

pub const TOP_INSTRUCTIONS: &str = "\
You are an experienced clinical rater scoring the Expanded Brief Psychiatric Rating Scale (BPRS-E, 24 items).
You will receive the transcript of a clinical interview as the user message. Read the whole transcript, then estimate a rating for each of the 24 items using the manual and anchors below.
For every item, give a short explanation citing the evidence in the transcript, then an integer rating from 1 to 7. Rate 1 (not present) when the transcript gives no indication of the symptom.";

pub const BOTTOM_INSTRUCTIONS: &str = "\
Reminder: rate all 24 BPRS-E items for the transcript in the final user message. For each item give its name, a short explanation of the evidence, and an integer rating from 1 (not present) to 7. Respond only with the JSON object described above.";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("{strategy} needs {needed} prior visits, timeline for {patient_id} has {available}")]
    InsufficientHistory {
        patient_id: String,
        strategy: ContextStrategy,
        needed: usize,
        available: usize,
    },
    #[error("last_score carries the previous rating forward and needs no prompt")]
    StrategyNeedsNoPrompt,
}

/// Which prior data points accompany the target transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ContextStrategy {
    ZeroShot,
    /// Prior true ratings only, no transcripts.
    ZeroShotPlusScores(usize),
    /// Prior transcripts only, no ratings.
    ZeroShotPlusTranscripts(usize),
    /// Prior (transcript, ratings) pairs as worked examples.
    NShot(usize),
    /// Copy the previous visit's ratings; no model call.
    LastScore,
}

impl ContextStrategy {
    /// Number of earlier visits the strategy consumes.
    pub fn required_history(self) -> usize {
        match self {
            ContextStrategy::ZeroShot => 0,
            ContextStrategy::ZeroShotPlusScores(n)
            | ContextStrategy::ZeroShotPlusTranscripts(n)
            | ContextStrategy::NShot(n) => n,
            ContextStrategy::LastScore => 1,
        }
    }

    pub fn needs_model(self) -> bool {
        self != ContextStrategy::LastScore
    }

    fn validate(self) -> Result<Self, String> {
        match self {
            ContextStrategy::ZeroShotPlusScores(0)
            | ContextStrategy::ZeroShotPlusTranscripts(0)
            | ContextStrategy::NShot(0) => Err(format!("{self}: parameter must be at least 1")),
            s => Ok(s),
        }
    }

    /// The six variants compared on three-visit timelines.
    pub fn longitudinal_suite() -> Vec<ContextStrategy> {
        vec![
            ContextStrategy::ZeroShot,
            ContextStrategy::ZeroShotPlusScores(1),
            ContextStrategy::ZeroShotPlusTranscripts(1),
            ContextStrategy::NShot(1),
            ContextStrategy::NShot(2),
            ContextStrategy::LastScore,
        ]
    }
}

impl fmt::Display for ContextStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextStrategy::ZeroShot => f.write_str("0-shot"),
            ContextStrategy::ZeroShotPlusScores(n) => write!(f, "0-shot+{n}-score"),
            ContextStrategy::ZeroShotPlusTranscripts(n) => write!(f, "0-shot+{n}-transcript"),
            ContextStrategy::NShot(n) => write!(f, "{n}-shot"),
            ContextStrategy::LastScore => f.write_str("last_score"),
        }
    }
}

impl FromStr for ContextStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("unknown context strategy {s:?}");
        let count = |n: &str| n.parse::<usize>().map_err(|_| bad());
        let strategy = if s == "0-shot" {
            ContextStrategy::ZeroShot
        } else if s == "last_score" {
            ContextStrategy::LastScore
        } else if let Some(rest) = s.strip_prefix("0-shot+") {
            if let Some(n) = rest.strip_suffix("-score") {
                ContextStrategy::ZeroShotPlusScores(count(n)?)
            } else if let Some(n) = rest.strip_suffix("-transcript") {
                ContextStrategy::ZeroShotPlusTranscripts(count(n)?)
            } else {
                return Err(bad());
            }
        } else if let Some(n) = s.strip_suffix("-shot") {
            ContextStrategy::NShot(count(n)?)
        } else {
            return Err(bad());
        };
        strategy.validate()
    }
}

impl Serialize for ContextStrategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ContextStrategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub messages: Vec<Message>,
    pub strategy: ContextStrategy,
    pub scale_id: String,
    pub target: CaseKey,
}

impl PromptBundle {
    /// Human-readable dump for auditing what was sent.
    pub fn to_audit_text(&self) -> String {
        let mut out = format!(
            "# target: {}\n# strategy: {}\n# scale: {}\n# prompt version: {PROMPT_VERSION}\n\n",
            self.target, self.strategy, self.scale_id
        );
        out.push_str("=== system ===\n");
        out.push_str(&self.system_text);
        out.push('\n');
        for (i, m) in self.messages.iter().enumerate() {
            let role = match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            out.push_str(&format!("\n=== message {} ({role}) ===\n", i + 1));
            out.push_str(&m.content);
            out.push('\n');
        }
        out
    }
}

/// Formats the `1 = ...` line listing the not-present option of an item.
pub fn not_present_line(anchor: &str) -> String {
    format!("1 = {anchor}")
}

pub fn build_system_instructions(scale: &ScaleDefinition) -> String {
    if scale.manual_text.trim().is_empty() {
        log::warn!("scale {} has an empty manual text", scale.scale_id);
    }
    let mut out = String::new();
    out.push_str(TOP_INSTRUCTIONS);
    out.push_str("\n\n=== RATING MANUAL ===\n");
    out.push_str(&scale.manual_text);
    out.push_str("\n\n=== RATING ANCHORS ===\n");
    for item in scale.items_by_index() {
        out.push_str(&format!("\n{}. {}\n", item.index, item.name));
        out.push_str(&format!("  {}\n", not_present_line(&item.not_present_anchor)));
        for (rating, anchor) in &item.anchors {
            out.push_str(&format!("  {rating} = {anchor}\n"));
        }
    }
    out.push_str("\n=== OUTPUT FORMAT ===\n");
    out.push_str(&format!(
        "Return a JSON object with a single key \"items\": an array of exactly {} objects, one per item in the order above. \
Each object has \"index\" (the item number), \"name\" (the item name exactly as listed), \"explanation\" (the evidence for the rating), \
and \"rating\" (an integer from {} to {}).\n\n",
        scale.len(),
        scale.rating_min,
        scale.rating_max
    ));
    out.push_str(BOTTOM_INSTRUCTIONS);
    out
}

fn ratings_table(scale: &ScaleDefinition, timeline: &PatientTimeline, n: usize) -> String {
    let history = timeline.history();
    let prior = &history[history.len() - n..];
    let mut out = String::from(
        "True BPRS-E ratings from this patient's previous visits (oldest first). Use them as context for rating the current transcript, which follows in the next message.\n",
    );
    for (offset, case) in prior.iter().enumerate() {
        let t = offset as isize - prior.len() as isize;
        out.push_str(&format!("\nVisit t={t}:\n"));
        for (item, rating) in scale.items_by_index().iter().zip(&case.truth.ratings) {
            out.push_str(&format!("  {}. {}: {rating}\n", item.index, item.name));
        }
        out.push_str(&format!("  Total: {}\n", case.truth.total()));
    }
    out
}

/// Assembles the message sequence for the timeline's most recent case.
pub fn build_prompt(
    scale: &ScaleDefinition,
    timeline: &PatientTimeline,
    strategy: ContextStrategy,
) -> Result<PromptBundle, PromptError> {
    if !strategy.needs_model() {
        return Err(PromptError::StrategyNeedsNoPrompt);
    }
    let needed = strategy.required_history();
    let history = timeline.history();
    if history.len() < needed {
        return Err(PromptError::InsufficientHistory {
            patient_id: timeline.patient_id.clone(),
            strategy,
            needed,
            available: history.len(),
        });
    }
    let prior = &history[history.len() - needed..];
    let target = timeline.target();

    let mut messages = Vec::with_capacity(2 * needed + 1);
    match strategy {
        ContextStrategy::ZeroShot | ContextStrategy::LastScore => {}
        ContextStrategy::ZeroShotPlusScores(n) => {
            messages.push(Message::user(ratings_table(scale, timeline, n)));
        }
        ContextStrategy::ZeroShotPlusTranscripts(_) => {
            for (offset, case) in prior.iter().enumerate() {
                let t = offset as isize - prior.len() as isize;
                messages.push(Message::user(format!(
                    "Transcript from this patient's previous visit (t={t}), provided as context only; do not rate it.\n\n{}",
                    case.transcript.text
                )));
            }
        }
        ContextStrategy::NShot(_) => {
            for case in prior {
                messages.push(Message::user(case.transcript.text.clone()));
                messages.push(Message::assistant(render(&case.truth, scale)));
            }
        }
    }
    messages.push(Message::user(target.transcript.text.clone()));

    Ok(PromptBundle {
        system_text: build_system_instructions(scale),
        messages,
        strategy,
        scale_id: scale.scale_id.clone(),
        target: target.key(),
    })
}
