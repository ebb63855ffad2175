use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scale-scribe"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("SCALE_SCRIBE_API_KEY").output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write_corpus(dir: &Path, patients: usize, visits: usize) -> String {
    let mut lines = Vec::new();
    for p in 0..patients {
        for v in 0..visits {
            let ratings: Vec<String> = (0..24).map(|i| ((i * 5 + p * 3 + v) % 7 + 1).to_string()).collect();
            lines.push(format!(
                r#"{{"type":"transcript","patient_id":"c{p}","visit_index":{v},"kind":"psychs","language":"en","text":"Interviewer: visit {v}.\nPatient: patient {p}."}}"#
            ));
            lines.push(format!(
                r#"{{"type":"assessment","patient_id":"c{p}","visit_index":{v},"ratings":[{}]}}"#,
                ratings.join(",")
            ));
        }
    }
    let path = dir.join("corpus.jsonl");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path.to_str().unwrap().to_string()
}

fn write_manifest(dir: &Path, run_id: &str) -> String {
    let manifest = manifest_json(run_id);
    let path = dir.join(format!("{run_id}.json"));
    fs::write(&path, manifest).unwrap();
    path.to_str().unwrap().to_string()
}

fn manifest_json(run_id: &str) -> String {
    format!(
        r#"{{
  "run_id": "{run_id}",
  "corpus": ["corpus.jsonl"],
  "selection": {{"kinds": ["psychs"], "languages": "all"}},
  "noise": {{"kind": "uniform", "spread": 1}},
  "bootstrap_resamples": 100,
  "output_dir": "runs"
}}"#
    )
}

#[test]
fn validate_accepts_good_corpus_and_rejects_bad() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), 3, 1);
    let out = run(&["validate", &corpus]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("3 patients"));

    let bad = dir.path().join("bad.jsonl");
    fs::write(
        &bad,
        "{\"type\":\"assessment\",\"patient_id\":\"x\",\"visit_index\":0,\"ratings\":[9,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1]}\n",
    )
    .unwrap();
    let out = run(&["validate", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("rating 9 outside 1..=7"), "{}", text(&out.stderr));

    let broken = dir.path().join("broken.jsonl");
    fs::write(&broken, "{\"type\": \"transcript\"\n").unwrap();
    let out = run(&["validate", broken.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("broken.jsonl:1"), "{}", text(&out.stderr));
}

#[test]
fn ingest_merges_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), 2, 2);
    let merged = dir.path().join("merged.jsonl");
    let out = run(&["ingest", &corpus, "--out", merged.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert_eq!(fs::read_to_string(merged).unwrap().lines().count(), 8);
}

#[test]
fn scripted_record_then_replay_and_report() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 8, 3);
    let manifest = write_manifest(dir.path(), "cli");
    let cache = dir.path().join("cache");
    let cache = cache.to_str().unwrap();

    let out = run(&["--backend", "scripted", "--cache-dir", cache, "longitudinal", "--manifest", &manifest]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert_eq!(stdout.lines().nth(1), Some("Hafkenscheid et al. 1993 | 0.62 | 0.83 | 3 | 0.70"));
    assert!(stdout.contains("LLM last_score (n=8)"));
    let run_dir = dir.path().join("runs").join("cli");
    let first = fs::read(run_dir.join("predictions-1-shot.jsonl")).unwrap();
    let report = fs::read(run_dir.join("report.txt")).unwrap();

    let out = run(&["--backend", "replay", "--cache-dir", cache, "longitudinal", "--manifest", &manifest]);
    assert!(!out.status.success(), "second run without --force must refuse");

    let out = run(&["--backend", "replay", "--cache-dir", cache, "longitudinal", "--manifest", &manifest, "--force"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("replay backend"));
    assert_eq!(fs::read(run_dir.join("predictions-1-shot.jsonl")).unwrap(), first);
    assert_eq!(fs::read(run_dir.join("report.txt")).unwrap(), report);

    let out = run(&["report", "--run", run_dir.to_str().unwrap(), "--format", "json"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 6);

    let out = run(&["report", "--run", run_dir.to_str().unwrap(), "--format", "csv"]);
    assert!(out.status.success());
    assert!(text(&out.stdout).contains("report_strategies.csv"));
}

#[test]
fn seed_flag_changes_noise() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 6, 1);
    let a = write_manifest(dir.path(), "seed-a");
    let b = write_manifest(dir.path(), "seed-b");
    assert!(run(&["--backend", "scripted", "--seed", "1", "score", "--manifest", &a]).status.success());
    assert!(run(&["--backend", "scripted", "--seed", "2", "score", "--manifest", &b]).status.success());
    let read = |id: &str| fs::read(dir.path().join("runs").join(id).join("predictions-0-shot.jsonl")).unwrap();
    assert_ne!(read("seed-a"), read("seed-b"));
    let copy = fs::read_to_string(dir.path().join("runs/seed-b/manifest.json")).unwrap();
    assert!(copy.contains("\"seed\": 2"));
}

#[test]
fn replay_requires_cache_dir() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 3, 1);
    let manifest = write_manifest(dir.path(), "nocache");
    let out = run(&["--backend", "replay", "score", "--manifest", &manifest]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("--cache-dir"));
}

#[test]
fn dump_prompts_writes_audit_files() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 3, 1);
    let manifest = write_manifest(dir.path(), "dump");
    let prompts = dir.path().join("prompts");
    let out = run(&[
        "--backend",
        "scripted",
        "score",
        "--manifest",
        &manifest,
        "--dump-prompts",
        prompts.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let audit = fs::read_to_string(prompts.join("0-shot__c0_0.txt")).unwrap();
    assert!(audit.contains("=== system ===") && audit.contains("Patient: patient 0."));
}
