//! Command implementations behind the `cop` binary.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use cop_core::config::{AblationConfig, PipelineConfig};
use cop_core::debug::DebugFeedback;
use cop_core::engine::Engine;
use cop_core::evaluation::{self, EvalTask, ReportFormat, ReportTable, VerdictScript};
use cop_core::fixtures;
use cop_core::kb::{KbIndex, KbKind, KnowledgeBases, SearchFilters};
use cop_core::llm::{ChatBackend, HttpBackend, HttpConfig, ScriptedBackend};
use cop_core::session::{Phase, SessionService, SessionView};

/// Which chat backend drives the pipeline.
#[derive(Debug, Clone)]
pub enum BackendChoice {
    /// OpenAI-compatible endpoint from COP_API_BASE / COP_API_KEY.
    Http,
    /// Rules file: JSON array of scripted rules.
    Script(PathBuf),
}

pub fn make_backend(choice: &BackendChoice) -> Result<Arc<dyn ChatBackend>> {
    Ok(match choice {
        BackendChoice::Http => Arc::new(HttpBackend::new(HttpConfig::from_env())?),
        BackendChoice::Script(path) => Arc::new(
            ScriptedBackend::from_file(path).with_context(|| format!("reading script {}", path.display()))?,
        ),
    })
}

/// KBs from `dir` when it holds any KB file, else the bundled sample KBs.
pub fn load_kbs(dir: Option<&Path>) -> Result<KnowledgeBases> {
    if let Some(dir) = dir {
        let kbs = KnowledgeBases::load_dir(dir)?;
        if KbKind::ALL.iter().any(|k| kbs.get(*k).is_some()) {
            return Ok(kbs);
        }
    }
    Ok(fixtures::fixture_kbs())
}

pub fn read_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// Validates `source` and merges its records into the KB file for `kind`
/// under `dir` (or replaces it). Returns the resulting record count.
pub fn kb_import(dir: &Path, kind: KbKind, source: &Path, replace: bool) -> Result<usize> {
    let incoming = KbIndex::load(source, kind)?;
    let target = dir.join(kind.file_name());
    let mut values: Vec<serde_json::Value> = if replace || !target.exists() {
        Vec::new()
    } else {
        let text = std::fs::read_to_string(&target)?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", target.display()))?
    };
    values.extend(incoming.records().iter().map(|r| r.to_value()));
    let merged = KbIndex::from_values(&values, kind)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(&target, serde_json::to_string_pretty(&values)? + "\n")?;
    Ok(merged.len())
}

pub fn kb_search(
    kbs: &KnowledgeBases,
    kind: KbKind,
    query: &str,
    platform: Option<&str>,
    language: Option<&str>,
    k: usize,
    out: &mut dyn Write,
) -> Result<()> {
    let Some(index) = kbs.get(kind) else { bail!("no {kind} knowledge base loaded") };
    let filters = SearchFilters { platform: platform.map(str::to_owned), language: language.map(str::to_owned) };
    let hits = index.search(query, &filters, k);
    if hits.is_empty() {
        writeln!(out, "no matches")?;
    }
    for h in hits {
        writeln!(out, "{:>8.4}  {:<6} {}", h.score, h.record_id, h.snippet)?;
    }
    Ok(())
}

fn read_line(input: &mut dyn BufRead, out: &mut dyn Write, prompt: &str) -> Result<Option<String>> {
    write!(out, "{prompt}")?;
    out.flush()?;
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    Ok(Some(line.trim().to_string()))
}

/// Lines until an empty line or end of input.
fn read_block(input: &mut dyn BufRead, out: &mut dyn Write, prompt: &str) -> Result<String> {
    writeln!(out, "{prompt} (end with an empty line)")?;
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 || line.trim().is_empty() {
            break;
        }
        lines.push(line.trim_end().to_string());
    }
    Ok(lines.join("\n"))
}

fn yes_no(input: &mut dyn BufRead, out: &mut dyn Write, prompt: &str) -> Result<Option<bool>> {
    loop {
        match read_line(input, out, prompt)?.as_deref().map(str::to_ascii_lowercase).as_deref() {
            None => return Ok(None),
            Some("y" | "yes") => return Ok(Some(true)),
            Some("n" | "no") => return Ok(Some(false)),
            Some(_) => writeln!(out, "please answer Y or N")?,
        }
    }
}

fn print_stop(view: &SessionView, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "[session {}] phase: {}", view.session_id, view.phase)?;
    match view.phase {
        Phase::Clarifying => {
            if let Some(c) = &view.clarification {
                writeln!(out, "{}", c.prompt)?;
            }
        }
        Phase::AwaitingFeedback => {
            if let Some(code) = &view.code {
                writeln!(out, "--- code revision {} ({}) ---\n{}\n---", code.revision, code.language, code.source)?;
            }
        }
        Phase::Done => {
            if view.exhausted {
                writeln!(out, "debugging stopped at the iteration limit without a passing run")?;
            }
            if let Some(text) = &view.annotated {
                writeln!(out, "--- annotated code ---\n{text}\n---")?;
            }
        }
        Phase::Failed => writeln!(out, "failed: {}", view.error.as_deref().unwrap_or("unknown error"))?,
        _ => {}
    }
    Ok(())
}

/// Terminal loop mirroring the HTTP API. With `interactive` false it stops
/// at the first point that needs user input.
pub fn run_session(
    service: &SessionService,
    requirement_text: &str,
    config: Option<PipelineConfig>,
    interactive: bool,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<SessionView> {
    let mut view = service.create(requirement_text, config)?;
    loop {
        print_stop(&view, out)?;
        if !interactive || view.phase.is_terminal() {
            return Ok(view);
        }
        view = match view.phase {
            Phase::Clarifying => {
                let elements = view.clarification.as_ref().map(|c| c.elements.clone()).unwrap_or_default();
                let mut answers = BTreeMap::new();
                for e in elements {
                    match read_line(input, out, &format!("{e}: "))? {
                        None => return Ok(view),
                        Some(a) if !a.is_empty() => {
                            answers.insert(e.name().to_string(), a);
                        }
                        Some(_) => {}
                    }
                }
                if answers.is_empty() {
                    writeln!(out, "at least one answer is needed")?;
                    continue;
                }
                service.post_answers(&view.session_id, &answers)?
            }
            Phase::AwaitingFeedback => {
                let Some(executable) = yes_no(input, out, "Did the code run without errors? [Y/N] ")? else {
                    return Ok(view);
                };
                let fb = if !executable {
                    DebugFeedback::error(read_block(input, out, "Paste the error output")?)
                } else {
                    let Some(correct) = yes_no(input, out, "Was the output correct? [Y/N] ")? else {
                        return Ok(view);
                    };
                    if correct {
                        DebugFeedback::success()
                    } else {
                        DebugFeedback::wrong_output(read_block(input, out, "Describe what was wrong")?)
                    }
                };
                match service.post_feedback(&view.session_id, &fb) {
                    Ok(v) => v,
                    Err(e) => {
                        writeln!(out, "{e}")?;
                        continue;
                    }
                }
            }
            _ => return Ok(view),
        };
    }
}

/// Writes the latest code revision and, when present, the annotated code.
pub fn export_artifacts(view: &SessionView, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if let Some(code) = &view.code {
        written.extend(code.export(dir, &format!("code_rev{}", code.revision))?);
        if let Some(text) = &view.annotated {
            let path = dir.join(format!("annotated.{}", code.extension()));
            std::fs::write(&path, text)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Evaluation inputs shared by the `eval` subcommands.
pub struct EvalInputs {
    pub corpus: Vec<EvalTask>,
    pub scripts: BTreeMap<String, VerdictScript>,
    pub readability: Option<evaluation::ReadabilityScores>,
    pub verdicts: Option<Vec<evaluation::Verdict>>,
    /// `None` means the per-task gold-scripted backend.
    pub backend: Option<Arc<dyn ChatBackend>>,
}

impl EvalInputs {
    pub fn load(
        corpus: &Path,
        scripts: Option<&Path>,
        readability: Option<&Path>,
        verdicts: Option<&Path>,
        backend: Option<Arc<dyn ChatBackend>>,
    ) -> Result<Self> {
        let corpus = evaluation::load_corpus(corpus)?;
        // without a script every task is accepted on its first draft
        let scripts = match scripts {
            Some(p) => evaluation::load_verdict_scripts(p)?.into_iter().map(|s| (s.task_id.clone(), s)).collect(),
            None => corpus.iter().map(|t| (t.id.clone(), VerdictScript::passing_at(&t.id, 0))).collect(),
        };
        let readability = readability.map(evaluation::load_readability).transpose()?;
        let verdicts = verdicts.map(evaluation::load_verdicts).transpose()?;
        Ok(Self { corpus, scripts, readability, verdicts, backend })
    }

    fn run_backend(&self, task: &EvalTask, config: &PipelineConfig) -> Arc<dyn ChatBackend> {
        match &self.backend {
            Some(b) => b.clone(),
            None => fixtures::gold_backend_factory(task, config),
        }
    }

    /// External verdicts replace simulated ones for the tasks they name.
    fn apply_verdicts(&self, table: &mut evaluation::AblationTable) -> Result<()> {
        let Some(verdicts) = &self.verdicts else { return Ok(()) };
        let by_task: BTreeMap<_, _> = verdicts.iter().map(|v| (v.task_id.as_str(), v)).collect();
        for row in &mut table.rows {
            for o in &mut row.outcomes {
                if let Some(v) = by_task.get(o.task_id.as_str()) {
                    o.verdict = (*v).clone();
                }
            }
            row.report = evaluation::aggregate(&row.outcomes, self.readability.as_ref())?;
        }
        Ok(())
    }

    pub fn ablate(&self, engine: &Engine, configs: &[AblationConfig]) -> Result<evaluation::AblationTable> {
        let factory = |t: &EvalTask, c: &PipelineConfig| self.run_backend(t, c);
        let mut table =
            evaluation::run_ablation(&self.corpus, configs, engine, &factory, &self.scripts, self.readability.as_ref())?;
        self.apply_verdicts(&mut table)?;
        Ok(table)
    }

    pub fn sweep(&self, engine: &Engine, ks: &[u32]) -> Result<evaluation::SweepTable> {
        let factory = |t: &EvalTask, c: &PipelineConfig| self.run_backend(t, c);
        Ok(evaluation::run_debug_sweep(&self.corpus, ks, engine, &factory, &self.scripts)?)
    }
}

pub fn parse_ks(text: &str) -> Result<Vec<u32>> {
    let ks: Vec<u32> = text
        .split(',')
        .map(|s| s.trim().parse::<u32>().with_context(|| format!("bad iteration count {s:?}")))
        .collect::<Result<_>>()?;
    if ks.is_empty() {
        bail!("no iteration counts given");
    }
    Ok(ks)
}

/// Writes to `path` or prints to `out`.
pub fn write_report(table: ReportTable<'_>, format: ReportFormat, path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => {
            evaluation::emit_report(table, format, p)?;
            writeln!(out, "wrote {}", p.display())?;
        }
        None => write!(out, "{}", table.render(format))?,
    }
    Ok(())
}
