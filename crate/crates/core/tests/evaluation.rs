mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use cop_core::config::AblationConfig;
use cop_core::evaluation::{
    ablation_csv, emit_report, load_readability, parse_corpus, run_ablation, run_debug_sweep, sweep_csv, EvalError,
    ExpertScores, ReportFormat, ReportTable, VerdictScript,
};
use cop_core::fixtures::{self, sample_corpus, SAMPLE_CORPUS_JSON};
use cop_core::llm::ScriptedBackend;

fn scripts(at: u32) -> BTreeMap<String, VerdictScript> {
    sample_corpus().iter().map(|t| (t.id.clone(), VerdictScript::passing_at(&t.id, at))).collect()
}

fn engine() -> cop_core::engine::Engine {
    common::engine_with(Arc::new(ScriptedBackend::default()), common::fixed_clock())
}

#[test]
fn ablation_table_shape_and_determinism() {
    let tasks = sample_corpus();
    let readability: BTreeMap<_, _> =
        tasks.iter().map(|t| (t.id.clone(), ExpertScores::new([9, 7, 8, 6, 10]).unwrap())).collect();
    let run = || {
        let table = run_ablation(
            &tasks,
            &AblationConfig::mechanism_grid(3),
            &engine(),
            &fixtures::gold_backend_factory,
            &scripts(1),
            Some(&readability),
        )
        .unwrap();
        ablation_csv(&table)
    };
    let csv = run();
    assert_eq!(csv, run());
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "pool,retrieval,feedback,ma,exe,acc,re");
    assert_eq!(lines.len(), 9);
    // first revision fails everywhere, so only feedback-on rows recover
    assert_eq!(lines[1], "N,N,N,100.0,0.0,0.0,80.0");
    assert_eq!(lines[8], "Y,Y,Y,100.0,100.0,100.0,80.0");
}

#[test]
fn tasks_without_scripts_never_pass() {
    let tasks = sample_corpus();
    let table =
        run_ablation(&tasks, &[AblationConfig::default()], &engine(), &fixtures::gold_backend_factory, &BTreeMap::new(), None)
            .unwrap();
    assert_eq!(ablation_csv(&table).lines().nth(1), Some("Y,Y,Y,100.0,0.0,0.0,"));
    assert!(table.rows[0].outcomes.iter().all(|o| o.exhausted));
    assert!(run_ablation(&[], &[AblationConfig::default()], &engine(), &fixtures::gold_backend_factory, &BTreeMap::new(), None).is_err());
}

#[test]
fn sweep_rows() {
    let tasks = sample_corpus();
    let mut s = scripts(2);
    s.insert("sample-cat1".into(), VerdictScript::never("sample-cat1"));
    s.insert("sample-cat2".into(), VerdictScript::passing_at("sample-cat2", 0));
    let table = run_debug_sweep(&tasks, &[0, 1, 3, 5], &engine(), &fixtures::gold_backend_factory, &s).unwrap();
    assert_eq!(
        sweep_csv(&table),
        "setting,exe,acc\nDebugging@0,12.5,12.5\nDebugging@1,12.5,12.5\nDebugging@3,87.5,87.5\nDebugging@5,87.5,87.5\n"
    );
}

#[test]
fn reports_are_written() {
    let tasks = sample_corpus();
    let table = run_debug_sweep(&tasks[..2], &[0, 1], &engine(), &fixtures::gold_backend_factory, &scripts(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out/sweep.json");
    emit_report(ReportTable::Sweep(&table), ReportFormat::Json, &path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v[1]["setting"], "Debugging@1");
    assert_eq!(v[1]["exe"], 100.0);
    assert_eq!("CSV".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
    assert!("xml".parse::<ReportFormat>().is_err());
}

#[test]
fn corpus_validation() {
    assert_eq!(parse_corpus(SAMPLE_CORPUS_JSON).unwrap().len(), 8);
    let mut v: serde_json::Value = serde_json::from_str(SAMPLE_CORPUS_JSON).unwrap();
    v[0]["secondary_category"] = 5.into();
    assert!(matches!(parse_corpus(&v.to_string()), Err(EvalError::Corpus(m)) if m.contains("belongs to primary")));
    let mut v: serde_json::Value = serde_json::from_str(SAMPLE_CORPUS_JSON).unwrap();
    v[1]["id"] = v[0]["id"].clone();
    assert!(matches!(parse_corpus(&v.to_string()), Err(EvalError::Corpus(m)) if m.contains("duplicate")));
    assert!(parse_corpus("{}").is_err());
}

#[test]
fn readability_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("re.json");
    std::fs::write(&path, r#"{"sample-cat1": [9, 7, 8, 6, 10]}"#).unwrap();
    assert_eq!(load_readability(&path).unwrap()["sample-cat1"].values(), [9, 7, 8, 6, 10]);
    std::fs::write(&path, r#"{"sample-cat1": [9, 7, 8, 6]}"#).unwrap();
    assert!(load_readability(&path).is_err());
    std::fs::write(&path, r#"{"sample-cat1": [9, 7, 8, 6, 11]}"#).unwrap();
    assert!(load_readability(&path).is_err());
}
