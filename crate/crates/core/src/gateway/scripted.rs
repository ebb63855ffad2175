use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, BackendKind, BackendResponse, CompletionRequest, ModelConfig};
use crate::corpus::{CaseKey, EvalCase};
use crate::metrics::uniform_index;
use crate::parser::{render, Rated};
use crate::scale::ScaleDefinition;

const SCRIPTED_STREAM: u128 = 0x5c41_97ed;
const SCRIPTED_EXPLANATION: &str = "Synthetic rating.";

/// Perturbation applied to the true ratings before they are returned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    None,
    /// Independent integer offsets drawn uniformly from `-spread..=spread`.
    Uniform { spread: u8 },
    /// Fixed offset per item index; unlisted items are unchanged.
    ItemBias { bias: BTreeMap<String, i8> },
}

/// Deterministic stand-in for a model: answers with the known truth for the
/// target case, perturbed by a seeded noise model and clipped to the scale.
pub struct ScriptedRater {
    scale: Arc<ScaleDefinition>,
    truths: HashMap<CaseKey, Vec<u8>>,
    fallback: Option<Vec<u8>>,
    noise: NoiseModel,
    seed: u64,
    calls: AtomicUsize,
}

struct Output(Vec<u8>);

impl Rated for Output {
    fn ratings(&self) -> Vec<u8> {
        self.0.clone()
    }

    fn explanation(&self, _item_index: u32) -> Option<&str> {
        Some(SCRIPTED_EXPLANATION)
    }
}

impl ScriptedRater {
    pub fn from_cases<'a>(
        scale: Arc<ScaleDefinition>,
        cases: impl IntoIterator<Item = &'a EvalCase>,
        noise: NoiseModel,
        seed: u64,
    ) -> Self {
        let truths = cases
            .into_iter()
            .map(|c| (c.key(), c.truth.ratings.clone()))
            .collect();
        ScriptedRater {
            scale,
            truths,
            fallback: None,
            noise,
            seed,
            calls: AtomicUsize::new(0),
        }
    }

    /// Answers every request with the same underlying ratings.
    pub fn single(scale: Arc<ScaleDefinition>, ratings: Vec<u8>, noise: NoiseModel, seed: u64) -> Self {
        ScriptedRater {
            scale,
            truths: HashMap::new(),
            fallback: Some(ratings),
            noise,
            seed,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn case_rng(&self, key: &CaseKey) -> Pcg64 {
        let digest = Sha256::digest(format!("{}:{}:{}", self.seed, key.patient_id, key.visit_index));
        let mut state = [0u8; 16];
        state.copy_from_slice(&digest[..16]);
        Pcg64::new(u128::from_le_bytes(state), SCRIPTED_STREAM)
    }

    /// Ratings the rater emits for `key`, given its truth.
    pub fn rate(&self, key: &CaseKey, truth: &[u8]) -> Vec<u8> {
        let (lo, hi) = (self.scale.rating_min as i32, self.scale.rating_max as i32);
        let clip = |v: i32| v.clamp(lo, hi) as u8;
        match &self.noise {
            NoiseModel::None => truth.to_vec(),
            NoiseModel::Uniform { spread } => {
                let spread = *spread as i32;
                let mut rng = self.case_rng(key);
                truth
                    .iter()
                    .map(|r| {
                        let offset = uniform_index(&mut rng, (2 * spread + 1) as usize) as i32 - spread;
                        clip(*r as i32 + offset)
                    })
                    .collect()
            }
            NoiseModel::ItemBias { bias } => truth
                .iter()
                .zip(1u32..)
                .map(|(r, index)| {
                    let offset = bias.get(&index.to_string()).copied().unwrap_or(0);
                    clip(*r as i32 + offset as i32)
                })
                .collect(),
        }
    }
}

impl Backend for ScriptedRater {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn send(&self, request: &CompletionRequest, _config: &ModelConfig) -> Result<BackendResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let truth = self
            .truths
            .get(&request.target)
            .or(self.fallback.as_ref())
            .ok_or_else(|| BackendError::Fatal(format!("no scripted ratings for {}", request.target)))?;
        let ratings = self.rate(&request.target, truth);
        Ok(BackendResponse {
            text: render(&Output(ratings), &self.scale),
            source: BackendKind::Scripted,
        })
    }
}
