//! Deterministic fixtures for the benchmarks.

use scale_scribe::metrics::{bootstrap_rng, uniform_index};
use scale_scribe::parser::PredictedItem;
use scale_scribe::{AssessmentRecord, EvalCase, PredictedAssessment, TranscriptDoc, TranscriptKind};

/// `n` cases with per-item ratings drawn from 1..=7 and predictions within
/// one point of the truth.
pub fn paired_cases(n: usize, seed: u64) -> Vec<(EvalCase, PredictedAssessment)> {
    let mut rng = bootstrap_rng(seed);
    (0..n)
        .map(|i| {
            let patient = format!("b{i:05}");
            let truth: Vec<u8> = (0..24).map(|_| uniform_index(&mut rng, 7) as u8 + 1).collect();
            let items = truth
                .iter()
                .enumerate()
                .map(|(j, t)| PredictedItem {
                    item_index: j as u32 + 1,
                    rating: (*t as i32 + uniform_index(&mut rng, 3) as i32 - 1).clamp(1, 7) as u8,
                    explanation: String::new(),
                })
                .collect();
            let case = EvalCase {
                transcript: TranscriptDoc {
                    patient_id: patient.clone(),
                    visit_index: 0,
                    kind: TranscriptKind::Psychs,
                    language: "en".into(),
                    text: String::new(),
                },
                truth: AssessmentRecord::new(patient.clone(), 0, truth).expect("ratings in range"),
            };
            let prediction = PredictedAssessment {
                patient_id: patient,
                visit_index: 0,
                items,
                provenance: "bench".into(),
            };
            (case, prediction)
        })
        .collect()
}

/// Total-score pairs taken from [`paired_cases`].
pub fn total_pairs(n: usize, seed: u64) -> Vec<(f64, f64)> {
    paired_cases(n, seed)
        .iter()
        .map(|(c, p)| (c.truth.total() as f64, p.total() as f64))
        .collect()
}
