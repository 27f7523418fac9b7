use std::io::{self, BufRead};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use cop_cli::{BackendChoice, EvalInputs};
use cop_core::clock::SystemClock;
use cop_core::config::AblationConfig;
use cop_core::engine::Engine;
use cop_core::evaluation::{ReportFormat, ReportTable};
use cop_core::kb::KbKind;
use cop_core::session::{SessionService, SessionStore};

#[derive(Parser)]
#[command(name = "cop", version, about = "Chain-of-Programming geospatial code generation")]
struct Cli {
    /// Knowledge-base directory (platforms.json, functions.json, datasets.json).
    /// The bundled sample KBs are used when it holds none.
    #[arg(long, global = true, env = "COP_KB_DIR", default_value = "kb")]
    kb_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge-base maintenance and lookup.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Scripted rules file instead of the HTTP chat backend.
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Run one task from a requirements text file.
    Run {
        requirements: PathBuf,
        /// Prompt for clarifications and debug feedback on the terminal.
        #[arg(long)]
        interactive: bool,
        /// Pipeline configuration JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        script: Option<PathBuf>,
        /// Directory to write the final code into.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluation harness.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
}

#[derive(Subcommand)]
enum KbCommand {
    /// Validate a JSON array of records and add it to the KB directory.
    Import {
        kind: KbKind,
        path: PathBuf,
        /// Replace the existing KB instead of merging into it.
        #[arg(long)]
        replace: bool,
    },
    Search {
        kind: KbKind,
        #[arg(long)]
        query: String,
        #[arg(long)]
        platform: Option<String>,
        #[arg(long)]
        language: Option<String>,
        #[arg(short, default_value_t = 5)]
        k: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalBackend {
    /// Per-task scripted backend reproducing the gold parse.
    Gold,
    /// OpenAI-compatible endpoint from the environment.
    Http,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// JSON array of verdict scripts driving the debug rounds.
    #[arg(long)]
    scripts: Option<PathBuf>,
    /// JSON array of final verdicts; replaces simulated ones.
    #[arg(long)]
    verdicts: Option<PathBuf>,
    /// JSON map of task id to five expert scores.
    #[arg(long)]
    readability: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EvalBackend::Gold)]
    backend: EvalBackend,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// One configuration over the corpus.
    Run {
        #[command(flatten)]
        args: EvalArgs,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// All eight mechanism on/off combinations.
    Ablate {
        #[command(flatten)]
        args: EvalArgs,
        #[arg(long, default_value_t = 3)]
        max_debug_iterations: u32,
    },
    /// Full pipeline at several debug-iteration caps.
    Sweep {
        #[command(flatten)]
        args: EvalArgs,
        #[arg(long, default_value = "0,1,3,5")]
        ks: String,
    },
}

fn backend_choice(script: Option<PathBuf>) -> BackendChoice {
    script.map(BackendChoice::Script).unwrap_or(BackendChoice::Http)
}

fn service(cli_kb: &std::path::Path, script: Option<PathBuf>) -> Result<SessionService> {
    let engine = Engine::new(
        cop_cli::make_backend(&backend_choice(script))?,
        Arc::new(cop_cli::load_kbs(Some(cli_kb))?),
        Arc::new(SystemClock),
    );
    let svc = SessionService::new(engine, Default::default());
    Ok(match SessionStore::from_env()? {
        Some(store) => svc.with_store(store)?,
        None => svc,
    })
}

fn eval_inputs(args: &EvalArgs) -> Result<EvalInputs> {
    let backend = match args.backend {
        EvalBackend::Gold => None,
        EvalBackend::Http => Some(cop_cli::make_backend(&BackendChoice::Http)?),
    };
    EvalInputs::load(&args.corpus, args.scripts.as_deref(), args.readability.as_deref(), args.verdicts.as_deref(), backend)
}

fn main() -> Result<()> {
    let verbose = std::env::var_os("COP_VERBOSE").is_some();
    tracing_subscriber::fmt()
        .with_max_level(if verbose { tracing::Level::DEBUG } else { tracing::Level::WARN })
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Kb { command: KbCommand::Import { kind, path, replace } } => {
            let n = cop_cli::kb_import(&cli.kb_dir, kind, &path, replace)?;
            println!("{kind} knowledge base now holds {n} records ({})", cli.kb_dir.join(kind.file_name()).display());
        }
        Command::Kb { command: KbCommand::Search { kind, query, platform, language, k } } => {
            let kbs = cop_cli::load_kbs(Some(&cli.kb_dir))?;
            cop_cli::kb_search(&kbs, kind, &query, platform.as_deref(), language.as_deref(), k, &mut stdout)?;
        }
        Command::Serve { port, host, script } => {
            let svc = Arc::new(service(&cli.kb_dir, script)?);
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad host/port")?;
            tokio::runtime::Runtime::new()?.block_on(cop_server::serve(addr, svc))?;
        }
        Command::Run { requirements, interactive, config, script, out } => {
            let text = std::fs::read_to_string(&requirements)
                .with_context(|| format!("reading {}", requirements.display()))?;
            let config = cop_cli::read_config(config.as_deref())?;
            let svc = service(&cli.kb_dir, script)?;
            let stdin = io::stdin();
            let mut input: Box<dyn BufRead> = Box::new(stdin.lock());
            let view = cop_cli::run_session(&svc, &text, Some(config), interactive, &mut input, &mut stdout)?;
            if let Some(dir) = out {
                for p in cop_cli::export_artifacts(&view, &dir)? {
                    println!("wrote {}", p.display());
                }
            }
        }
        Command::Eval { command } => {
            let engine = Engine::new(
                Arc::new(cop_core::llm::ScriptedBackend::default()),
                Arc::new(cop_cli::load_kbs(Some(&cli.kb_dir))?),
                Arc::new(SystemClock),
            );
            match command {
                EvalCommand::Run { args, config } => {
                    let config = cop_cli::read_config(config.as_deref())?;
                    let table = eval_inputs(&args)?.ablate(&engine, &[config.ablation])?;
                    cop_cli::write_report(ReportTable::Ablation(&table), args.format, args.out.as_deref(), &mut stdout)?;
                }
                EvalCommand::Ablate { args, max_debug_iterations } => {
                    let configs = AblationConfig::mechanism_grid(max_debug_iterations);
                    let table = eval_inputs(&args)?.ablate(&engine, &configs)?;
                    cop_cli::write_report(ReportTable::Ablation(&table), args.format, args.out.as_deref(), &mut stdout)?;
                }
                EvalCommand::Sweep { args, ks } => {
                    let table = eval_inputs(&args)?.sweep(&engine, &cop_cli::parse_ks(&ks)?)?;
                    cop_cli::write_report(ReportTable::Sweep(&table), args.format, args.out.as_deref(), &mut stdout)?;
                }
            }
        }
    }
    Ok(())
}
