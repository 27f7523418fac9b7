use std::io::Cursor;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use cop_cli::{kb_import, run_session, EvalInputs};
use cop_core::clock::FixedClock;
use cop_core::config::{AblationConfig, PipelineConfig};
use cop_core::engine::Engine;
use cop_core::fixtures::{self, sample_corpus, KB_FUNCTIONS_JSON};
use cop_core::kb::{KbIndex, KbKind};
use cop_core::llm::ScriptedBackend;
use cop_core::session::{Phase, SessionService};
use serde_json::{json, Value};

const CORPUS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/corpus/sample.json");

fn cop(args: &[&str], kb_dir: &Path) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_cop"))
        .args(args)
        .env("COP_KB_DIR", kb_dir)
        .env_remove("COP_SESSIONS_DIR")
        .output()
        .unwrap();
    (out.status.success(), String::from_utf8(out.stdout).unwrap(), String::from_utf8(out.stderr).unwrap())
}

fn service_for(task_ix: usize, drop_output_format: bool) -> SessionService {
    let task = &sample_corpus()[task_ix];
    let mut rules = fixtures::gold_rules(task, 3);
    if drop_output_format {
        let mut draft = task.gold.to_value();
        draft["requirements"].as_object_mut().unwrap().remove("Output_Format");
        draft.as_object_mut().unwrap().remove("provenance");
        rules[0].response = format!("```json\n{draft}\n```");
    }
    let engine = Engine::new(
        Arc::new(ScriptedBackend::new(rules)),
        Arc::new(fixtures::fixture_kbs()),
        Arc::new(FixedClock::epoch_2025()),
    );
    SessionService::new(engine, PipelineConfig::default())
}

#[test]
fn interactive_session_on_the_terminal() {
    let svc = service_for(1, true);
    let text = &sample_corpus()[1].requirement_text;
    let mut input = Cursor::new("GeoTIFF\nmaybe\nn\nReferenceError: ee is not defined\n\ny\ny\n");
    let mut out = Vec::new();
    let view = run_session(&svc, text, None, true, &mut input, &mut out).unwrap();
    let out = String::from_utf8(out).unwrap();
    assert_eq!(view.phase, Phase::Done);
    assert!(out.contains("phase: clarifying"));
    assert!(out.contains("output_format: "));
    assert!(out.contains("please answer Y or N"));
    assert!(out.contains("code revision 1"));
    assert!(out.contains("--- annotated code ---"));
    let arts = svc.artifacts(&view.session_id).unwrap();
    assert_eq!(arts.code_revisions.len(), 2);

    let dir = tempfile::tempdir().unwrap();
    let written = cop_cli::export_artifacts(&view, dir.path()).unwrap();
    assert!(written.iter().any(|p| p.ends_with("code_rev1.js")));
    assert!(written.iter().any(|p| p.ends_with("annotated.js")));
}

#[test]
fn non_interactive_stops_at_first_question() {
    let svc = service_for(1, false);
    let mut out = Vec::new();
    let view = run_session(&svc, "NDVI", None, false, &mut Cursor::new(""), &mut out).unwrap();
    assert_eq!(view.phase, Phase::AwaitingFeedback);
    // input ending early leaves the session where it was
    let view = run_session(&svc, "NDVI", None, true, &mut Cursor::new("y\n"), &mut Vec::new()).unwrap();
    assert_eq!(view.phase, Phase::AwaitingFeedback);
}

#[test]
fn kb_import_merges_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("functions.in.json");
    std::fs::write(&src, KB_FUNCTIONS_JSON).unwrap();
    let kb = dir.path().join("kb");
    let n = kb_import(&kb, KbKind::Function, &src, false).unwrap();
    assert_eq!(n, KbIndex::from_json(KB_FUNCTIONS_JSON, KbKind::Function).unwrap().len());
    // same ids again
    assert!(kb_import(&kb, KbKind::Function, &src, false).is_err());
    assert_eq!(kb_import(&kb, KbKind::Function, &src, true).unwrap(), n);

    let mut extra: Vec<Value> = serde_json::from_str(KB_FUNCTIONS_JSON).unwrap();
    extra.truncate(1);
    extra[0]["Operator_id"] = json!("F900");
    std::fs::write(&src, serde_json::to_string(&extra).unwrap()).unwrap();
    assert_eq!(kb_import(&kb, KbKind::Function, &src, false).unwrap(), n + 1);

    extra[0].as_object_mut().unwrap().remove("Usage");
    std::fs::write(&src, serde_json::to_string(&extra).unwrap()).unwrap();
    let err = kb_import(&kb, KbKind::Function, &src, false).unwrap_err();
    assert!(format!("{err:#}").contains("Usage"), "{err:#}");

    // datasets without a platform survive a round trip
    let ds = dir.path().join("ds.json");
    std::fs::write(&ds, fixtures::KB_DATASETS_JSON).unwrap();
    kb_import(&kb, KbKind::Dataset, &ds, false).unwrap();
    KbIndex::load(&kb.join("datasets.json"), KbKind::Dataset).unwrap();
}

#[test]
fn eval_inputs_apply_external_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let verdicts = dir.path().join("verdicts.json");
    let list: Vec<Value> = sample_corpus()
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"task_id": t.id, "executable": i < 6, "correct": i < 4, "source": "external"}))
        .collect();
    std::fs::write(&verdicts, serde_json::to_string(&list).unwrap()).unwrap();
    let inputs = EvalInputs::load(Path::new(CORPUS), None, None, Some(&verdicts), None).unwrap();
    let engine = Engine::new(Arc::new(ScriptedBackend::default()), Arc::new(fixtures::fixture_kbs()), Arc::new(FixedClock::epoch_2025()));
    let table = inputs.ablate(&engine, &[AblationConfig::default()]).unwrap();
    assert_eq!(table.rows[0].report.executability.to_string(), "75.0");
    assert_eq!(table.rows[0].report.accuracy.to_string(), "50.0");
}

#[test]
fn binary_commands() {
    let dir = tempfile::tempdir().unwrap();
    let kb = dir.path().join("kb");

    let (ok, out, _) = cop(&["kb", "search", "function", "--query", "normalizedDifference", "-k", "2"], &kb);
    assert!(ok);
    assert!(out.contains("[KB] FUNCTION"));
    let (ok, _, err) = cop(&["kb", "search", "shapes", "--query", "x"], &kb);
    assert!(!ok && err.contains("shapes"));

    let scripts = dir.path().join("scripts.json");
    let list: Vec<Value> = sample_corpus()
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"task_id": t.id, "first_passing_revision": if i == 0 { Value::Null } else { json!(i % 4) }}))
        .collect();
    std::fs::write(&scripts, serde_json::to_string(&list).unwrap()).unwrap();
    let s = scripts.to_str().unwrap();

    let (ok, out, err) = cop(&["eval", "sweep", "--corpus", CORPUS, "--scripts", s, "--ks", "0,1,3,5"], &kb);
    assert!(ok, "{err}");
    let lines: Vec<_> = out.lines().collect();
    assert_eq!(lines[0], "setting,exe,acc");
    assert_eq!(&lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect::<Vec<_>>(), &["Debugging@0", "Debugging@1", "Debugging@3", "Debugging@5"]);
    // revisions needed: 1,2,3,0,1,2,3 plus one never
    assert_eq!(lines[1], "Debugging@0,12.5,12.5");
    assert_eq!(lines[3], "Debugging@3,87.5,87.5");

    let re = dir.path().join("re.json");
    let scores: serde_json::Map<String, Value> = sample_corpus().iter().map(|t| (t.id.clone(), json!([10, 10, 10, 10, 10]))).collect();
    std::fs::write(&re, Value::Object(scores).to_string()).unwrap();
    let report = dir.path().join("ablation.csv");
    let (ok, _, err) = cop(
        &["eval", "ablate", "--corpus", CORPUS, "--scripts", s, "--readability", re.to_str().unwrap(), "--out", report.to_str().unwrap()],
        &kb,
    );
    assert!(ok, "{err}");
    let csv = std::fs::read_to_string(&report).unwrap();
    assert_eq!(csv.lines().next(), Some("pool,retrieval,feedback,ma,exe,acc,re"));
    assert_eq!(csv.lines().count(), 9);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",100.0")));

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"ablation": {"pool": true, "retrieval": false, "feedback": true, "max_debug_iterations": 3}}"#).unwrap();
    let (ok, out, err) = cop(&["eval", "run", "--corpus", CORPUS, "--scripts", s, "--config", cfg.to_str().unwrap(), "--format", "json"], &kb);
    assert!(ok, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v[0]["retrieval"], false);
    assert_eq!(v[0]["acc"], 87.5);

    let req = dir.path().join("req.txt");
    std::fs::write(&req, &sample_corpus()[2].requirement_text).unwrap();
    let rules = dir.path().join("rules.json");
    std::fs::write(&rules, serde_json::to_string(&fixtures::gold_rules(&sample_corpus()[2], 3)).unwrap()).unwrap();
    let (ok, out, err) = cop(&["run", req.to_str().unwrap(), "--script", rules.to_str().unwrap()], &kb);
    assert!(ok, "{err}");
    assert!(out.contains("phase: awaiting_feedback") && out.contains("code revision 0"));
}
