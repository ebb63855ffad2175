//! End-to-end experiment runs: zero-shot scoring of a corpus and the
//! longitudinal strategy suite, with predictions persisted per strategy under
//! `<output_dir>/<run_id>/`.

mod report;

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{
    compute_report, emit_report, render_report, render_table, BenchmarkRow, ReportFormat, ReportRow,
    RunReport, BENCHMARK, REFERENCE_RMSE, STRATEGY_CSV_HEADER,
};

use crate::corpus::{AssessmentRecord, CaseKey, Corpus, CorpusError, EvalCase, PatientTimeline, Selection, TranscriptDoc, TranscriptKind};
use crate::gateway::{
    Backend, BackendKind, Gateway, GatewayError, LiveBackend, ModelConfig, NoiseModel, ReplayBackend,
    ResponseCache, ScriptedRater,
};
use crate::metrics::{DEFAULT_CONCORDANCE_THRESHOLD, DEFAULT_RESAMPLES};
use crate::parser::PredictedAssessment;
use crate::prompt::{build_prompt, ContextStrategy, PromptBundle, PROMPT_VERSION};
use crate::scale::{ScaleDefinition, ScaleError, BPRS_E_ID};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUN_FILE: &str = "run.json";
pub const STATS_FILE: &str = "run_stats.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("backend setup failed: {0}")]
    Backend(String),
    #[error("run directory {0} already exists")]
    RunExists(PathBuf),
    #[error("{0} is not a run directory")]
    NotARun(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn default_scale_id() -> String {
    BPRS_E_ID.into()
}

fn default_min_points() -> usize {
    1
}

fn default_prompt_version() -> String {
    PROMPT_VERSION.into()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_resamples() -> usize {
    DEFAULT_RESAMPLES
}

fn default_threshold() -> f64 {
    DEFAULT_CONCORDANCE_THRESHOLD
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    ZeroShot,
    Longitudinal,
}

/// JSON description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub run_id: String,
    #[serde(default = "default_scale_id")]
    pub scale_id: String,
    /// Scale definition file; the bundled BPRS-E when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_path: Option<PathBuf>,
    pub corpus: Vec<PathBuf>,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default = "default_min_points")]
    pub min_points: usize,
    /// Defaults to `0-shot` for zero-shot runs and the full suite for
    /// longitudinal runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategies: Option<Vec<ContextStrategy>>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_prompt_version")]
    pub prompt_version: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Noise applied by the scripted backend.
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default = "default_threshold")]
    pub concordance_threshold: f64,
    /// Also report all transcript kinds pooled together.
    #[serde(default)]
    pub pooled: bool,
}

impl RunManifest {
    pub fn new(run_id: impl Into<String>, corpus: Vec<PathBuf>) -> Self {
        RunManifest {
            run_id: run_id.into(),
            scale_id: default_scale_id(),
            scale_path: None,
            corpus,
            selection: Selection::default(),
            min_points: default_min_points(),
            strategies: None,
            model: ModelConfig::default(),
            seed: 0,
            prompt_version: default_prompt_version(),
            output_dir: default_output_dir(),
            noise: NoiseModel::None,
            bootstrap_resamples: default_resamples(),
            concordance_threshold: default_threshold(),
            pooled: false,
        }
    }

    /// Reads a manifest; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut manifest: RunManifest = serde_json::from_str(&text).map_err(|source| RunError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        manifest.corpus.iter_mut().for_each(resolve);
        if let Some(p) = manifest.scale_path.as_mut() {
            resolve(p);
        }
        resolve(&mut manifest.output_dir);
        Ok(manifest)
    }

    pub fn strategies_for(&self, mode: RunMode) -> Vec<ContextStrategy> {
        match (&self.strategies, mode) {
            (Some(s), _) => s.clone(),
            (None, RunMode::ZeroShot) => vec![ContextStrategy::ZeroShot],
            (None, RunMode::Longitudinal) => ContextStrategy::longitudinal_suite(),
        }
    }

    pub fn validate(&self, mode: RunMode) -> Result<(), RunError> {
        let bad = |msg: String| Err(RunError::Manifest(msg));
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            || self.run_id.starts_with('.')
        {
            return bad(format!(
                "run_id {:?} must be non-empty and use only letters, digits, '-', '_' and '.'",
                self.run_id
            ));
        }
        if self.corpus.is_empty() {
            return bad("no corpus files listed".into());
        }
        if self.selection.kinds.is_empty() {
            return bad("selection admits no transcript kinds".into());
        }
        if self.prompt_version != PROMPT_VERSION {
            return bad(format!(
                "prompt_version {:?} does not match this build ({PROMPT_VERSION})",
                self.prompt_version
            ));
        }
        if !(0.0..=1.0).contains(&self.concordance_threshold) {
            return bad(format!("concordance_threshold {} outside [0, 1]", self.concordance_threshold));
        }
        if self.bootstrap_resamples == 0 {
            return bad("bootstrap_resamples must be positive".into());
        }
        let strategies = self.strategies_for(mode);
        if strategies.is_empty() {
            return bad("no strategies listed".into());
        }
        let unique: BTreeSet<String> = strategies.iter().map(|s| s.to_string()).collect();
        if unique.len() != strategies.len() {
            return bad("duplicate strategy".into());
        }
        if mode == RunMode::ZeroShot && strategies != [ContextStrategy::ZeroShot] {
            return bad("zero-shot runs score only the 0-shot strategy".into());
        }
        self.model.validate()?;
        Ok(())
    }

    pub fn load_scale(&self) -> Result<ScaleDefinition, RunError> {
        let scale = match &self.scale_path {
            Some(path) => ScaleDefinition::load(path)?,
            None => ScaleDefinition::bprs_e(),
        };
        if scale.scale_id != self.scale_id {
            return Err(RunError::Manifest(format!(
                "manifest names scale {:?} but the definition is {:?}",
                self.scale_id, scale.scale_id
            )));
        }
        Ok(scale)
    }

    pub fn load_corpus(&self) -> Result<Corpus, RunError> {
        Ok(Corpus::ingest(&self.corpus)?)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Scored { prediction: PredictedAssessment },
    Failed { error: String },
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub patient_id: String,
    pub visit_index: u32,
    pub kind: TranscriptKind,
    pub language: String,
    pub truth: Vec<u8>,
    #[serde(flatten)]
    pub outcome: Outcome,
}

impl PredictionRecord {
    pub fn key(&self) -> CaseKey {
        CaseKey {
            patient_id: self.patient_id.clone(),
            visit_index: self.visit_index,
        }
    }

    pub fn prediction(&self) -> Option<&PredictedAssessment> {
        match &self.outcome {
            Outcome::Scored { prediction } => Some(prediction),
            Outcome::Failed { .. } => None,
        }
    }

    /// The evaluation case this record scores, without transcript text.
    pub fn case(&self) -> EvalCase {
        EvalCase {
            transcript: TranscriptDoc {
                patient_id: self.patient_id.clone(),
                visit_index: self.visit_index,
                kind: self.kind,
                language: self.language.clone(),
                text: String::new(),
            },
            truth: AssessmentRecord {
                patient_id: self.patient_id.clone(),
                visit_index: self.visit_index,
                ratings: self.truth.clone(),
            },
        }
    }

    fn new(case: &EvalCase, outcome: Outcome) -> Self {
        PredictionRecord {
            patient_id: case.patient_id().to_string(),
            visit_index: case.visit_index(),
            kind: case.transcript.kind,
            language: case.transcript.language.clone(),
            truth: case.truth.ratings.clone(),
            outcome,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRun {
    pub strategy: ContextStrategy,
    /// Ordered by transcript kind, then case key.
    pub records: Vec<PredictionRecord>,
}

impl StrategyRun {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.prediction().is_none()).count()
    }

    pub fn file_name(&self) -> String {
        format!("predictions-{}.jsonl", self.strategy)
    }
}

/// A timeline left out of a longitudinal run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub patient_id: String,
    pub visit_index: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub backend: BackendKind,
    pub gateway_calls: usize,
    pub attempts: u64,
    pub failures: usize,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run_id: String,
    pub mode: RunMode,
    pub strategies: Vec<StrategyRun>,
    pub exclusions: Vec<Exclusion>,
    pub stats: Option<RunStats>,
}

impl RunResult {
    pub fn strategy(&self, strategy: ContextStrategy) -> Option<&StrategyRun> {
        self.strategies.iter().find(|s| s.strategy == strategy)
    }
}

/// The deterministic part of a run, written to `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunIndex {
    run_id: String,
    mode: RunMode,
    strategies: Vec<ContextStrategy>,
    exclusions: Vec<Exclusion>,
}

struct Job<'a> {
    case: &'a EvalCase,
    bundle: PromptBundle,
}

/// Sends every bundle through the gateway, at most
/// `max_concurrent_requests` at a time, and returns outcomes in job order.
fn score_all(jobs: &[Job<'_>], gateway: &Gateway) -> (Vec<Outcome>, u64) {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<(Outcome, u64)>>> = Mutex::new(vec![None; jobs.len()]);
    let workers = gateway.config().max_concurrent_requests.min(jobs.len()).max(1);
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let scored = match gateway.complete(&job.bundle) {
                    Ok(result) => (
                        Outcome::Scored {
                            prediction: PredictedAssessment::from_parsed(
                                &job.case.key(),
                                result.parsed,
                                result.request_fingerprint,
                            ),
                        },
                        result.attempts as u64,
                    ),
                    Err(err) => {
                        log::error!("{} ({}): {err}", job.case.key(), job.case.transcript.kind);
                        let attempts = match &err {
                            GatewayError::Transport { attempts, .. }
                            | GatewayError::RateLimited { attempts, .. }
                            | GatewayError::OutputRejected { attempts, .. } => *attempts as u64,
                            _ => 0,
                        };
                        (Outcome::Failed { error: err.to_string() }, attempts)
                    }
                };
                slots.lock().expect("result slots")[i] = Some(scored);
            });
        }
    });
    let mut attempts = 0;
    let outcomes = slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|slot| {
            let (outcome, a) = slot.expect("every job scored");
            attempts += a;
            outcome
        })
        .collect();
    (outcomes, attempts)
}

fn single_case_timeline(case: &EvalCase) -> PatientTimeline {
    PatientTimeline::new(vec![case.clone()]).expect("single case timeline")
}

/// Scores every selected transcript zero-shot, each kind separately.
pub fn run_zero_shot(
    manifest: &RunManifest,
    corpus: &Corpus,
    scale: &ScaleDefinition,
    gateway: &Gateway,
) -> Result<RunResult, RunError> {
    manifest.validate(RunMode::ZeroShot)?;
    let started = Instant::now();
    let calls_before = gateway.calls();
    let mut cases = Vec::new();
    for kind in &manifest.selection.kinds {
        let selection = Selection {
            kinds: [*kind].into_iter().collect(),
            languages: manifest.selection.languages.clone(),
        };
        cases.extend(corpus.eval_cases(&selection));
    }
    cases.sort_by(|a, b| (a.transcript.kind, a.key()).cmp(&(b.transcript.kind, b.key())));
    let jobs: Vec<Job> = cases
        .iter()
        .map(|case| {
            let bundle = build_prompt(scale, &single_case_timeline(case), ContextStrategy::ZeroShot)
                .expect("zero-shot prompts need no history");
            Job { case, bundle }
        })
        .collect();
    let (outcomes, attempts) = score_all(&jobs, gateway);
    let records: Vec<PredictionRecord> = cases
        .iter()
        .zip(outcomes)
        .map(|(case, outcome)| PredictionRecord::new(case, outcome))
        .collect();
    let run = StrategyRun {
        strategy: ContextStrategy::ZeroShot,
        records,
    };
    let failures = run.failures();
    Ok(RunResult {
        run_id: manifest.run_id.clone(),
        mode: RunMode::ZeroShot,
        strategies: vec![run],
        exclusions: Vec::new(),
        stats: Some(RunStats {
            backend: gateway.backend_kind(),
            gateway_calls: gateway.calls() - calls_before,
            attempts,
            failures,
            elapsed_ms: started.elapsed().as_millis() as u64,
        }),
    })
}

/// Predicts the most recent visit of every timeline under each strategy.
///
/// Timelines too short for any listed strategy are excluded for all of them.
pub fn run_longitudinal(
    manifest: &RunManifest,
    corpus: &Corpus,
    scale: &ScaleDefinition,
    gateway: &Gateway,
) -> Result<RunResult, RunError> {
    manifest.validate(RunMode::Longitudinal)?;
    let started = Instant::now();
    let calls_before = gateway.calls();
    let strategies = manifest.strategies_for(RunMode::Longitudinal);
    let mut timelines = Vec::new();
    let mut exclusions = Vec::new();
    for timeline in corpus.timelines(manifest.min_points, &manifest.selection) {
        let available = timeline.history().len();
        let short: Vec<String> = strategies
            .iter()
            .filter(|s| s.required_history() > available)
            .map(|s| s.to_string())
            .collect();
        if short.is_empty() {
            timelines.push(timeline);
        } else {
            let target = timeline.target();
            exclusions.push(Exclusion {
                patient_id: target.patient_id().to_string(),
                visit_index: target.visit_index(),
                reason: format!(
                    "{available} prior visit(s), too few for {}",
                    short.join(", ")
                ),
            });
        }
    }

    let mut runs = Vec::with_capacity(strategies.len());
    let mut attempts = 0;
    for strategy in &strategies {
        let targets: Vec<&EvalCase> = timelines.iter().map(PatientTimeline::target).collect();
        let outcomes = if strategy.needs_model() {
            let jobs: Vec<Job> = timelines
                .iter()
                .map(|timeline| Job {
                    case: timeline.target(),
                    bundle: build_prompt(scale, timeline, *strategy).expect("history checked above"),
                })
                .collect();
            let (outcomes, a) = score_all(&jobs, gateway);
            attempts += a;
            outcomes
        } else {
            timelines
                .iter()
                .map(|timeline| {
                    let previous = &timeline.history().last().expect("history checked above").truth;
                    Outcome::Scored {
                        prediction: PredictedAssessment::carried_forward(&timeline.target().key(), previous),
                    }
                })
                .collect()
        };
        runs.push(StrategyRun {
            strategy: *strategy,
            records: targets
                .into_iter()
                .zip(outcomes)
                .map(|(case, outcome)| PredictionRecord::new(case, outcome))
                .collect(),
        });
    }
    let failures = runs.iter().map(StrategyRun::failures).sum();
    Ok(RunResult {
        run_id: manifest.run_id.clone(),
        mode: RunMode::Longitudinal,
        strategies: runs,
        exclusions,
        stats: Some(RunStats {
            backend: gateway.backend_kind(),
            gateway_calls: gateway.calls() - calls_before,
            attempts,
            failures,
            elapsed_ms: started.elapsed().as_millis() as u64,
        }),
    })
}

/// Prompt bundles a run would send, for auditing.
pub fn planned_bundles(
    manifest: &RunManifest,
    mode: RunMode,
    corpus: &Corpus,
    scale: &ScaleDefinition,
) -> Vec<PromptBundle> {
    match mode {
        RunMode::ZeroShot => {
            let mut out = Vec::new();
            for kind in &manifest.selection.kinds {
                let selection = Selection {
                    kinds: [*kind].into_iter().collect(),
                    languages: manifest.selection.languages.clone(),
                };
                for case in corpus.eval_cases(&selection) {
                    out.extend(build_prompt(scale, &single_case_timeline(&case), ContextStrategy::ZeroShot).ok());
                }
            }
            out
        }
        RunMode::Longitudinal => {
            let timelines = corpus.timelines(manifest.min_points, &manifest.selection);
            manifest
                .strategies_for(mode)
                .into_iter()
                .filter(|s| s.needs_model())
                .flat_map(|s| timelines.iter().filter_map(move |t| build_prompt(scale, t, s).ok()))
                .collect()
        }
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '+') { c } else { '_' })
        .collect()
}

pub fn dump_prompts(bundles: &[PromptBundle], dir: &Path) -> Result<usize, RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut seen = BTreeSet::new();
    for bundle in bundles {
        let mut name = format!(
            "{}__{}_{}",
            sanitize(&bundle.strategy.to_string()),
            sanitize(&bundle.target.patient_id),
            bundle.target.visit_index
        );
        let mut n = 1;
        while !seen.insert(name.clone()) {
            n += 1;
            name = format!("{name}-{n}");
        }
        let path = dir.join(format!("{name}.txt"));
        fs::write(&path, bundle.to_audit_text()).map_err(io_err(&path))?;
    }
    Ok(bundles.len())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| RunError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| RunError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the manifest copy, one predictions file per strategy and the
/// run index into `dir`.
pub fn persist(result: &RunResult, manifest: &RunManifest, dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(&dir.join(MANIFEST_FILE), manifest)?;
    for run in &result.strategies {
        let path = dir.join(run.file_name());
        let mut out = Vec::new();
        for record in &run.records {
            serde_json::to_writer(&mut out, record).map_err(|source| RunError::Json {
                path: path.clone(),
                source,
            })?;
            out.push(b'\n');
        }
        fs::write(&path, out).map_err(io_err(&path))?;
    }
    write_json(
        &dir.join(RUN_FILE),
        &RunIndex {
            run_id: result.run_id.clone(),
            mode: result.mode,
            strategies: result.strategies.iter().map(|s| s.strategy).collect(),
            exclusions: result.exclusions.clone(),
        },
    )?;
    if let Some(stats) = &result.stats {
        write_json(&dir.join(STATS_FILE), stats)?;
    }
    Ok(())
}

/// Reads a persisted run back, for re-computing metrics.
pub fn load_run(dir: &Path) -> Result<(RunManifest, RunResult), RunError> {
    if !dir.join(RUN_FILE).is_file() {
        return Err(RunError::NotARun(dir.to_path_buf()));
    }
    let manifest: RunManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let index: RunIndex = read_json(&dir.join(RUN_FILE))?;
    let stats: Option<RunStats> = if dir.join(STATS_FILE).is_file() {
        Some(read_json(&dir.join(STATS_FILE))?)
    } else {
        None
    };
    let mut strategies = Vec::with_capacity(index.strategies.len());
    for strategy in index.strategies {
        let mut run = StrategyRun {
            strategy,
            records: Vec::new(),
        };
        let path = dir.join(run.file_name());
        let file = fs::File::open(&path).map_err(io_err(&path))?;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            run.records.push(serde_json::from_str(&line).map_err(|source| RunError::Json {
                path: path.clone(),
                source,
            })?);
        }
        strategies.push(run);
    }
    Ok((
        manifest,
        RunResult {
            run_id: index.run_id,
            mode: index.mode,
            strategies,
            exclusions: index.exclusions,
            stats,
        },
    ))
}

/// How `execute` obtains completions.
#[derive(Debug, Clone, Default)]
pub struct ExecOptions {
    pub backend: Option<BackendKind>,
    /// Live and scripted runs record into this cache; replay runs read it.
    pub cache_dir: Option<PathBuf>,
    pub overwrite: bool,
    pub dump_prompts: Option<PathBuf>,
}

pub struct RunOutput {
    pub dir: PathBuf,
    pub result: RunResult,
    pub report: RunReport,
    pub written: Vec<PathBuf>,
}

pub fn make_backend(
    kind: BackendKind,
    manifest: &RunManifest,
    corpus: &Corpus,
    scale: &Arc<ScaleDefinition>,
    cache_dir: Option<&Path>,
) -> Result<Arc<dyn Backend>, RunError> {
    let inner: Arc<dyn Backend> = match kind {
        BackendKind::Replay => {
            let dir = cache_dir.ok_or_else(|| RunError::Backend("the replay backend needs a cache directory".into()))?;
            return Ok(Arc::new(ReplayBackend::offline(ResponseCache::new(dir))));
        }
        BackendKind::Live => Arc::new(
            LiveBackend::from_env(&manifest.model).map_err(|e| RunError::Backend(e.to_string()))?,
        ),
        BackendKind::Scripted => Arc::new(ScriptedRater::from_cases(
            scale.clone(),
            &corpus.eval_cases(&Selection::default()),
            manifest.noise.clone(),
            manifest.seed,
        )),
    };
    Ok(match cache_dir {
        Some(dir) => Arc::new(ReplayBackend::recording(ResponseCache::new(dir), inner)),
        None => inner,
    })
}

/// Loads inputs, runs, persists and writes every report format.
pub fn execute(manifest: &RunManifest, mode: RunMode, options: &ExecOptions) -> Result<RunOutput, RunError> {
    manifest.validate(mode)?;
    let scale = Arc::new(manifest.load_scale()?);
    let corpus = manifest.load_corpus()?;
    if let Some(dir) = &options.dump_prompts {
        let n = dump_prompts(&planned_bundles(manifest, mode, &corpus, &scale), dir)?;
        log::info!("wrote {n} prompt(s) to {}", dir.display());
    }
    let dir = manifest.run_dir();
    if dir.join(RUN_FILE).exists() && !options.overwrite {
        return Err(RunError::RunExists(dir));
    }
    let kind = options.backend.unwrap_or(BackendKind::Live);
    let backend = make_backend(kind, manifest, &corpus, &scale, options.cache_dir.as_deref())?;
    let gateway = Gateway::new(manifest.model.clone(), scale.clone(), backend)?;
    let mut result = match mode {
        RunMode::ZeroShot => run_zero_shot(manifest, &corpus, &scale, &gateway)?,
        RunMode::Longitudinal => run_longitudinal(manifest, &corpus, &scale, &gateway)?,
    };
    if let Some(stats) = result.stats.as_mut() {
        stats.backend = kind;
    }
    persist(&result, manifest, &dir)?;
    let report = compute_report(&result, manifest, &scale);
    let mut written = Vec::new();
    for format in ReportFormat::ALL {
        written.extend(emit_report(&report, format, &dir)?);
    }
    Ok(RunOutput {
        dir,
        result,
        report,
        written,
    })
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<(), RunError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(contents).map_err(io_err(path))
}
