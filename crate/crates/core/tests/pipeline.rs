mod common;

use std::fs;

use common::synthetic_corpus;
use scale_scribe::corpus::TranscriptKind;
use scale_scribe::gateway::{BackendKind, ModelConfig, NoiseModel};
use scale_scribe::runner::{self, ExecOptions, ReportFormat, RunError, RunManifest, RunMode};
use serde_json::Value;

fn setup(dir: &std::path::Path, languages: &[&str]) -> RunManifest {
    let corpus = synthetic_corpus(10, 3, 17, &TranscriptKind::ALL, languages);
    let path = dir.join("corpus.jsonl");
    corpus.export_to_path(&path).unwrap();
    let manifest = RunManifest {
        output_dir: dir.join("runs"),
        noise: NoiseModel::Uniform { spread: 2 },
        bootstrap_resamples: 100,
        pooled: true,
        model: ModelConfig {
            retry_base_delay_ms: 1,
            ..ModelConfig::default()
        },
        ..RunManifest::new("pipe", vec![path])
    };
    let manifest_path = dir.join("run.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    RunManifest::load(&manifest_path).unwrap()
}

fn scripted() -> ExecOptions {
    ExecOptions {
        backend: Some(BackendKind::Scripted),
        ..ExecOptions::default()
    }
}

fn num(s: &str) -> Option<f64> {
    (!s.is_empty()).then(|| s.parse().unwrap())
}

#[test]
fn csv_and_json_agree() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = setup(dir.path(), &["en", "de"]);
    let out = runner::execute(&manifest, RunMode::ZeroShot, &scripted()).unwrap();
    let json: Value = serde_json::from_str(&fs::read_to_string(out.dir.join("report.json")).unwrap()).unwrap();
    let rows = json["rows"].as_array().unwrap();
    let labels: Vec<&str> = rows.iter().map(|r| r["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["open", "psychs", "de/open", "de/psychs", "en/open", "en/psychs", "all"]);

    let mut strategies = csv::Reader::from_path(out.dir.join("report_strategies.csv")).unwrap();
    let mut n = 0;
    for (record, row) in strategies.records().zip(rows) {
        let record = record.unwrap();
        assert_eq!(&record[0], row["label"].as_str().unwrap());
        assert_eq!(record[2].parse::<u64>().unwrap(), row["n_cases"].as_u64().unwrap());
        assert_eq!(num(&record[4]), row["rmse"].as_f64());
        assert_eq!(num(&record[5]), row["rmse_bootstrap_se"].as_f64());
        n += 1;
    }
    assert_eq!(n, rows.len());

    let mut items = csv::Reader::from_path(out.dir.join("report_items.csv")).unwrap();
    let mut n = 0;
    for record in items.records() {
        let record = record.unwrap();
        let row = rows.iter().find(|r| r["label"] == &record[0]).unwrap();
        let index: usize = record[1].parse().unwrap();
        let item = &row["report"]["items"][index - 1];
        assert_eq!(item["name"].as_str().unwrap(), &record[2]);
        assert_eq!(num(&record[3]), item["true_mean"].as_f64());
        assert_eq!(num(&record[4]), item["pred_mean"].as_f64());
        assert_eq!(num(&record[5]), item["pearson"].as_f64());
        assert_eq!(num(&record[6]), item["concordance"].as_f64());
        n += 1;
    }
    assert_eq!(n, 24 * rows.len());
}

#[test]
fn report_recomputed_from_run_dir_matches() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = setup(dir.path(), &["en"]);
    let out = runner::execute(&manifest, RunMode::Longitudinal, &scripted()).unwrap();
    let before = fs::read(out.dir.join("report.json")).unwrap();
    let (m, result) = runner::load_run(&out.dir).unwrap();
    let report = runner::compute_report(&result, &m, &m.load_scale().unwrap());
    fs::remove_file(out.dir.join("report.json")).unwrap();
    runner::emit_report(&report, ReportFormat::Json, &out.dir).unwrap();
    assert_eq!(fs::read(out.dir.join("report.json")).unwrap(), before);
    assert_eq!(result.strategies.len(), 6);
}

#[test]
fn existing_run_needs_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = setup(dir.path(), &["en"]);
    runner::execute(&manifest, RunMode::ZeroShot, &scripted()).unwrap();
    assert!(matches!(
        runner::execute(&manifest, RunMode::ZeroShot, &scripted()),
        Err(RunError::RunExists(_))
    ));
    let again = ExecOptions {
        overwrite: true,
        ..scripted()
    };
    runner::execute(&manifest, RunMode::ZeroShot, &again).unwrap();
}

#[test]
fn prompts_can_be_dumped() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = setup(dir.path(), &["en"]);
    let options = ExecOptions {
        dump_prompts: Some(dir.path().join("prompts")),
        ..scripted()
    };
    runner::execute(&manifest, RunMode::Longitudinal, &options).unwrap();
    let dumped: Vec<_> = fs::read_dir(dir.path().join("prompts")).unwrap().collect();
    // five model strategies over ten timelines
    assert_eq!(dumped.len(), 50);
    let one = fs::read_to_string(dir.path().join("prompts").join("1-shot__syn000_2.txt")).unwrap();
    assert!(one.contains("=== message 2 (assistant) ==="));
}

#[test]
fn replay_without_cache_entries_records_failures() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = setup(dir.path(), &["en"]);
    let options = ExecOptions {
        backend: Some(BackendKind::Replay),
        cache_dir: Some(dir.path().join("empty-cache")),
        ..ExecOptions::default()
    };
    let out = runner::execute(&manifest, RunMode::ZeroShot, &options).unwrap();
    let stats = out.result.stats.unwrap();
    assert_eq!(stats.failures, 60);
    assert!(out.report.rows.iter().all(|r| r.n_failed > 0 && r.report.is_none()));
    let table = fs::read_to_string(out.dir.join("report.txt")).unwrap();
    assert!(table.contains("skipped"));
}
