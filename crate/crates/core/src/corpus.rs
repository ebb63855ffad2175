//! Patient encounters: transcripts, ground-truth assessments and the pairing
//! rules that turn them into evaluation cases.
//!
//! The on-disk format is JSONL with one record per line, discriminated by a
//! `"type"` field (`"transcript"` or `"assessment"`). A loaded [`Corpus`] is
//! immutable and indexed by `(patient_id, visit_index)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scale::BPRS_E_ITEMS;

pub const RATING_MIN: u8 = 1;
pub const RATING_MAX: u8 = 7;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("duplicate {what} record for patient {patient_id} visit {visit_index}")]
    DuplicateRecord {
        patient_id: String,
        visit_index: u32,
        what: String,
    },
    #[error("patient {patient_id} visit {visit_index} item {item}: rating {value} outside 1..=7")]
    RatingOutOfRange {
        patient_id: String,
        visit_index: u32,
        item: usize,
        value: i64,
    },
    #[error("patient {patient_id} visit {visit_index}: {message}")]
    InvalidRecord {
        patient_id: String,
        visit_index: u32,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptKind {
    Open,
    Psychs,
}

impl TranscriptKind {
    pub const ALL: [TranscriptKind; 2] = [TranscriptKind::Open, TranscriptKind::Psychs];

    pub fn as_str(self) -> &'static str {
        match self {
            TranscriptKind::Open => "open",
            TranscriptKind::Psychs => "psychs",
        }
    }
}

impl fmt::Display for TranscriptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TranscriptKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "open" => Ok(TranscriptKind::Open),
            "psychs" => Ok(TranscriptKind::Psychs),
            other => Err(format!("unknown transcript kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptDoc {
    pub patient_id: String,
    pub visit_index: u32,
    pub kind: TranscriptKind,
    pub language: String,
    pub text: String,
}

/// Ground-truth ratings for one visit. The total is derived, never stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessmentRecord {
    pub patient_id: String,
    pub visit_index: u32,
    pub ratings: Vec<u8>,
}

impl AssessmentRecord {
    pub fn new(
        patient_id: impl Into<String>,
        visit_index: u32,
        ratings: Vec<u8>,
    ) -> Result<Self, CorpusError> {
        let record = AssessmentRecord {
            patient_id: patient_id.into(),
            visit_index,
            ratings,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn total(&self) -> u32 {
        self.ratings.iter().map(|r| *r as u32).sum()
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if self.ratings.len() != BPRS_E_ITEMS {
            return Err(CorpusError::InvalidRecord {
                patient_id: self.patient_id.clone(),
                visit_index: self.visit_index,
                message: format!(
                    "expected {BPRS_E_ITEMS} ratings, found {}",
                    self.ratings.len()
                ),
            });
        }
        for (i, r) in self.ratings.iter().enumerate() {
            if !(RATING_MIN..=RATING_MAX).contains(r) {
                return Err(CorpusError::RatingOutOfRange {
                    patient_id: self.patient_id.clone(),
                    visit_index: self.visit_index,
                    item: i + 1,
                    value: *r as i64,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Encounter {
    pub patient_id: String,
    pub visit_index: u32,
    pub transcripts: Vec<TranscriptDoc>,
    pub assessment: Option<AssessmentRecord>,
}

impl Encounter {
    pub fn transcript(&self, kind: TranscriptKind) -> Option<&TranscriptDoc> {
        self.transcripts.iter().find(|t| t.kind == kind)
    }
}

/// One transcript paired with the assessment from the same visit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalCase {
    pub transcript: TranscriptDoc,
    pub truth: AssessmentRecord,
}

impl EvalCase {
    pub fn patient_id(&self) -> &str {
        &self.truth.patient_id
    }

    pub fn visit_index(&self) -> u32 {
        self.truth.visit_index
    }

    pub fn key(&self) -> CaseKey {
        CaseKey {
            patient_id: self.truth.patient_id.clone(),
            visit_index: self.truth.visit_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CaseKey {
    pub patient_id: String,
    pub visit_index: u32,
}

impl fmt::Display for CaseKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.patient_id, self.visit_index)
    }
}

/// A patient's evaluation cases, oldest visit first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientTimeline {
    pub patient_id: String,
    pub cases: Vec<EvalCase>,
}

impl PatientTimeline {
    /// Builds a timeline, sorting cases by visit. Fails on an empty list,
    /// mixed patients, or repeated visits.
    pub fn new(cases: Vec<EvalCase>) -> Result<Self, String> {
        let mut cases = cases;
        cases.sort_by_key(|c| c.visit_index());
        let first = cases.first().ok_or("timeline needs at least one case")?;
        let patient_id = first.patient_id().to_string();
        if cases.iter().any(|c| c.patient_id() != patient_id) {
            return Err("timeline mixes patients".into());
        }
        if cases.windows(2).any(|w| w[0].visit_index() == w[1].visit_index()) {
            return Err("timeline repeats a visit".into());
        }
        Ok(PatientTimeline { patient_id, cases })
    }

    /// The most recent case, i.e. the prediction target.
    pub fn target(&self) -> &EvalCase {
        self.cases.last().expect("timeline is non-empty")
    }

    /// Cases before the target, oldest first.
    pub fn history(&self) -> &[EvalCase] {
        &self.cases[..self.cases.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LanguageFilter {
    #[default]
    All,
    Only(BTreeSet<String>),
}

impl LanguageFilter {
    pub fn only<I, S>(codes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        LanguageFilter::Only(codes.into_iter().map(Into::into).collect())
    }

    pub fn admits(&self, language: &str) -> bool {
        match self {
            LanguageFilter::All => true,
            LanguageFilter::Only(codes) => codes.contains(language),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub kinds: BTreeSet<TranscriptKind>,
    #[serde(default, with = "language_filter_serde")]
    pub languages: LanguageFilter,
}

impl Default for Selection {
    fn default() -> Self {
        Selection {
            kinds: TranscriptKind::ALL.into_iter().collect(),
            languages: LanguageFilter::All,
        }
    }
}

impl Selection {
    pub fn kinds(kinds: &[TranscriptKind]) -> Self {
        Selection {
            kinds: kinds.iter().copied().collect(),
            ..Selection::default()
        }
    }

    pub fn with_languages(mut self, languages: LanguageFilter) -> Self {
        self.languages = languages;
        self
    }
}

// "all" or a list of codes.
mod language_filter_serde {
    use super::LanguageFilter;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeSet;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Word(String),
        Codes(BTreeSet<String>),
    }

    pub fn serialize<S: Serializer>(filter: &LanguageFilter, s: S) -> Result<S::Ok, S::Error> {
        match filter {
            LanguageFilter::All => Repr::Word("all".into()).serialize(s),
            LanguageFilter::Only(codes) => Repr::Codes(codes.clone()).serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<LanguageFilter, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Word(w) if w == "all" => Ok(LanguageFilter::All),
            Repr::Word(w) => Err(serde::de::Error::custom(format!(
                "expected \"all\" or a list of language codes, got {w:?}"
            ))),
            Repr::Codes(codes) => Ok(LanguageFilter::Only(codes)),
        }
    }
}

/// Wire representation of one JSONL line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CorpusRecord {
    Transcript(TranscriptDoc),
    Assessment(AssessmentRecord),
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum RawRecord {
    Transcript(TranscriptDoc),
    Assessment {
        patient_id: String,
        visit_index: u32,
        ratings: Vec<i64>,
    },
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    encounters: BTreeMap<(String, u32), Encounter>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads and validates every record in the given JSONL files.
    pub fn ingest<P: AsRef<Path>>(paths: &[P]) -> Result<Corpus, CorpusError> {
        let mut corpus = Corpus::new();
        for path in paths {
            corpus.ingest_file(path.as_ref())?;
        }
        Ok(corpus)
    }

    pub fn ingest_file(&mut self, path: &Path) -> Result<(), CorpusError> {
        let display = path.display().to_string();
        let file = fs::File::open(path).map_err(|source| CorpusError::Io {
            path: display.clone(),
            source,
        })?;
        self.ingest_reader(BufReader::new(file), &display)
    }

    pub fn ingest_reader<R: BufRead>(&mut self, reader: R, origin: &str) -> Result<(), CorpusError> {
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| CorpusError::Io {
                path: origin.to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record = parse_line(&line).map_err(|e| match e {
                LineError::Syntax(message) => CorpusError::Parse {
                    path: origin.to_string(),
                    line: i + 1,
                    message,
                },
                LineError::Rejected(err) => err,
            })?;
            self.insert(record)?;
        }
        Ok(())
    }

    pub fn ingest_str(&mut self, text: &str, origin: &str) -> Result<(), CorpusError> {
        self.ingest_reader(text.as_bytes(), origin)
    }

    /// Adds one validated record. Duplicate `(patient, visit, kind)`
    /// transcripts and duplicate assessments are rejected.
    pub fn insert(&mut self, record: CorpusRecord) -> Result<(), CorpusError> {
        match record {
            CorpusRecord::Transcript(doc) => {
                let invalid = |message: &str| CorpusError::InvalidRecord {
                    patient_id: doc.patient_id.clone(),
                    visit_index: doc.visit_index,
                    message: message.to_string(),
                };
                if doc.patient_id.is_empty() {
                    return Err(invalid("empty patient_id"));
                }
                if doc.text.trim().is_empty() {
                    return Err(invalid("empty transcript text"));
                }
                if doc.language.trim().is_empty() {
                    return Err(invalid("empty language code"));
                }
                let encounter = self.encounter_mut(&doc.patient_id, doc.visit_index);
                if encounter.transcript(doc.kind).is_some() {
                    return Err(CorpusError::DuplicateRecord {
                        patient_id: doc.patient_id,
                        visit_index: doc.visit_index,
                        what: format!("{} transcript", doc.kind),
                    });
                }
                encounter.transcripts.push(doc);
                encounter.transcripts.sort_by_key(|t| t.kind);
            }
            CorpusRecord::Assessment(assessment) => {
                if assessment.patient_id.is_empty() {
                    return Err(CorpusError::InvalidRecord {
                        patient_id: assessment.patient_id,
                        visit_index: assessment.visit_index,
                        message: "empty patient_id".into(),
                    });
                }
                assessment.validate()?;
                let encounter = self.encounter_mut(&assessment.patient_id, assessment.visit_index);
                if encounter.assessment.is_some() {
                    return Err(CorpusError::DuplicateRecord {
                        patient_id: assessment.patient_id,
                        visit_index: assessment.visit_index,
                        what: "assessment".into(),
                    });
                }
                encounter.assessment = Some(assessment);
            }
        }
        Ok(())
    }

    fn encounter_mut(&mut self, patient_id: &str, visit_index: u32) -> &mut Encounter {
        self.encounters
            .entry((patient_id.to_string(), visit_index))
            .or_insert_with(|| Encounter {
                patient_id: patient_id.to_string(),
                visit_index,
                ..Encounter::default()
            })
    }

    pub fn encounters(&self) -> impl Iterator<Item = &Encounter> {
        self.encounters.values()
    }

    pub fn encounter(&self, patient_id: &str, visit_index: u32) -> Option<&Encounter> {
        self.encounters.get(&(patient_id.to_string(), visit_index))
    }

    pub fn encounter_count(&self) -> usize {
        self.encounters.len()
    }

    pub fn patient_count(&self) -> usize {
        self.encounters
            .keys()
            .map(|(p, _)| p)
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn transcript_count(&self) -> usize {
        self.encounters.values().map(|e| e.transcripts.len()).sum()
    }

    pub fn assessment_count(&self) -> usize {
        self.encounters
            .values()
            .filter(|e| e.assessment.is_some())
            .count()
    }

    /// Pairs each qualifying encounter's transcript with its assessment.
    ///
    /// Encounters without an assessment, or without a transcript admitted by
    /// the selection, are skipped. When both kinds qualify the PSYCHS
    /// transcript wins.
    pub fn eval_cases(&self, selection: &Selection) -> Vec<EvalCase> {
        self.encounters
            .values()
            .filter_map(|encounter| {
                let truth = encounter.assessment.as_ref()?;
                let transcript = [TranscriptKind::Psychs, TranscriptKind::Open]
                    .into_iter()
                    .filter(|kind| selection.kinds.contains(kind))
                    .filter_map(|kind| encounter.transcript(kind))
                    .find(|doc| selection.languages.admits(&doc.language))?;
                Some(EvalCase {
                    transcript: transcript.clone(),
                    truth: truth.clone(),
                })
            })
            .collect()
    }

    /// Per-patient timelines with at least `min_points` evaluation cases.
    pub fn timelines(&self, min_points: usize, selection: &Selection) -> Vec<PatientTimeline> {
        let min_points = min_points.max(1);
        let mut by_patient: BTreeMap<String, Vec<EvalCase>> = BTreeMap::new();
        for case in self.eval_cases(selection) {
            by_patient
                .entry(case.patient_id().to_string())
                .or_default()
                .push(case);
        }
        by_patient
            .into_values()
            .filter(|cases| cases.len() >= min_points)
            .map(|cases| PatientTimeline::new(cases).expect("cases from one patient, unique visits"))
            .collect()
    }

    /// All records in canonical order: by patient, visit, then transcripts
    /// (open before psychs) followed by the assessment.
    pub fn records(&self) -> Vec<CorpusRecord> {
        let mut out = Vec::new();
        for encounter in self.encounters.values() {
            for doc in &encounter.transcripts {
                out.push(CorpusRecord::Transcript(doc.clone()));
            }
            if let Some(a) = &encounter.assessment {
                out.push(CorpusRecord::Assessment(a.clone()));
            }
        }
        out
    }

    pub fn export<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for record in self.records() {
            writeln!(out, "{}", record.to_line())?;
        }
        Ok(())
    }

    pub fn export_to_path(&self, path: &Path) -> Result<(), CorpusError> {
        let io = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut buf = Vec::new();
        self.export(&mut buf).map_err(io)?;
        fs::write(path, buf).map_err(io)
    }
}

impl CorpusRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("corpus record serializes")
    }
}

enum LineError {
    Syntax(String),
    Rejected(CorpusError),
}

fn parse_line(line: &str) -> Result<CorpusRecord, LineError> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| LineError::Syntax(e.to_string()))?;
    Ok(match raw {
        RawRecord::Transcript(doc) => CorpusRecord::Transcript(doc),
        RawRecord::Assessment {
            patient_id,
            visit_index,
            ratings,
        } => {
            // Range-check before narrowing so 0, -3 and 300 are reported as
            // out-of-range values rather than syntax errors.
            if let Some((i, value)) = ratings
                .iter()
                .enumerate()
                .find(|(_, r)| !(RATING_MIN as i64..=RATING_MAX as i64).contains(*r))
            {
                return Err(LineError::Rejected(CorpusError::RatingOutOfRange {
                    patient_id,
                    visit_index,
                    item: i + 1,
                    value: *value,
                }));
            }
            CorpusRecord::Assessment(AssessmentRecord {
                patient_id,
                visit_index,
                ratings: ratings.into_iter().map(|r| r as u8).collect(),
            })
        }
    })
}
