use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use sentinel::api::{router, AppState};
use sentinel::harness::{parse_script, replay, Clock, ReplayError, ToolRegistry, Workspace};
use sentinel::store::{Store, StoreConfig};
use sentinel_core::cdi::{make_quiz, CdiConfig};
use sentinel_core::deviation::{to_devl, ToolCatalog};
use sentinel_core::graph::{export_graph, ExportFormat};
use sentinel_core::json::to_canonical;
use sentinel_core::trace::EventKind;
use sentinel_core::{analyze, compile, parse_seeds, parse_stream, CompiledSeeds, SatStream};

#[derive(Parser)]
#[command(name = "sentinel", version, about = "Reasoning-trace oversight for agentic coding sessions")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check that SAT files are well formed and internally consistent.
    Validate { traces: Vec<PathBuf> },
    /// Seed document commands.
    Seeds {
        #[command(subcommand)]
        command: SeedsCmd,
    },
    /// Detect deviations. Exit status: 0 clean, 2 warn, 3 block.
    Check {
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Also write the reports as newline-delimited records.
        #[arg(long)]
        devl: Option<PathBuf>,
    },
    /// Export the causal graph.
    Graph {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Annotate layers and deviations from these seeds.
        #[arg(long)]
        seeds: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Score reviewer comprehension (cognitive debt index).
    Cdi {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        seeds: Option<PathBuf>,
        #[arg(long, default_value_t = sentinel::store::DEFAULT_QUIZ_SEED)]
        quiz_seed: u64,
        /// Alert threshold in [0, 1].
        #[arg(long)]
        cit: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print the reconstruction quiz for a session.
    Quiz {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = sentinel::store::DEFAULT_QUIZ_SEED)]
        seed: u64,
    },
    /// Run a replay script through the instrumented tool proxy.
    Replay {
        #[arg(long)]
        script: PathBuf,
        /// `system` or `fixed:<epoch-ms>`.
        #[arg(long, default_value = "system")]
        clock: Clock,
        /// Workspace root (default: a fresh temporary directory).
        #[arg(long)]
        workspace: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "SENTINEL_DATA", default_value = "./sentinel-data")]
        data: PathBuf,
        /// Static assets to serve at `/`.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        /// Default seed document for requests that name none.
        #[arg(long)]
        seeds: Option<PathBuf>,
        /// Require `Authorization: Bearer <token>` on the API.
        #[arg(long, env = "SENTINEL_TOKEN")]
        token: Option<String>,
    },
}

#[derive(Subcommand)]
enum SeedsCmd {
    /// Parse and compile a seed document without evaluating it.
    Check { file: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Dot,
    Json,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_trace(path: &Path) -> Result<SatStream> {
    parse_stream(&read(path)?).with_context(|| format!("{}", path.display()))
}

fn load_seeds(path: Option<&Path>) -> Result<CompiledSeeds> {
    match path {
        None => Ok(CompiledSeeds::empty()),
        Some(p) => Ok(compile(&parse_seeds(&read(p)?).with_context(|| format!("{}", p.display()))?)),
    }
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Cmd::Validate { traces } => {
            if traces.is_empty() {
                bail!("no trace files given");
            }
            let mut failed = false;
            for t in &traces {
                match load_trace(t) {
                    Ok(s) => {
                        let r = s.report();
                        let counts: Vec<String> =
                            EventKind::ALL.iter().map(|k| format!("{}={}", k.as_str(), r.count(*k))).collect();
                        println!("{}: ok, session {}, {} events ({})", t.display(), r.session_id, r.events, counts.join(" "));
                    }
                    Err(e) => {
                        failed = true;
                        println!("{}: invalid: {:#}", t.display(), e);
                    }
                }
            }
            Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Cmd::Seeds { command: SeedsCmd::Check { file } } => {
            let doc = parse_seeds(&read(&file)?).with_context(|| format!("{}", file.display()))?;
            let compiled = compile(&doc);
            println!(
                "{}: ok, {} layers, {} rules",
                file.display(),
                compiled.layer_names().count(),
                compiled.rules().len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Check { seeds, trace, devl } => {
            let stream = load_trace(&trace)?;
            let seeds = load_seeds(Some(&seeds))?;
            let a = analyze(&stream, &seeds, &ToolCatalog::default());
            for r in &a.reports {
                println!("{} [{}] {} at N{}: {}", r.severity.as_str(), r.category.as_str(), r.rule_id, r.node_id, r.explanation);
            }
            for u in &a.unanalyzable {
                println!("warn [unanalyzable] N{}: {}", u.node_id, u.error);
            }
            let verdict = a.conformance();
            println!("conformance: {verdict}");
            if let Some(p) = devl {
                fs::write(&p, to_devl(&a.reports)).with_context(|| format!("writing {}", p.display()))?;
            }
            Ok(ExitCode::from(verdict.exit_code() as u8))
        }
        Cmd::Graph { trace, format, seeds, output } => {
            let stream = load_trace(&trace)?;
            let a = analyze(&stream, &load_seeds(seeds.as_deref())?, &ToolCatalog::default());
            let fmt = match format {
                Format::Dot => ExportFormat::Dot,
                Format::Json => ExportFormat::Json,
            };
            let mut text = export_graph(&a.graph, fmt);
            if !text.ends_with('\n') {
                text.push('\n');
            }
            emit(output.as_deref(), &text)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Cdi { trace, seeds, quiz_seed, cit, output } => {
            let stream = load_trace(&trace)?;
            let a = analyze(&stream, &load_seeds(seeds.as_deref())?, &ToolCatalog::default());
            let mut cfg = CdiConfig::default();
            if let Some(c) = cit {
                cfg.cit_threshold = c;
            }
            let report = a.cdi(quiz_seed, &cfg)?;
            emit(output.as_deref(), &format!("{}\n", report.to_record()))?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Quiz { trace, seed } => {
            let stream = load_trace(&trace)?;
            let g = sentinel_core::build_graph(&stream);
            let quiz = make_quiz(&g, seed)?;
            println!("{}", to_canonical(&quiz.to_json()));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Replay { script, clock, workspace, output } => {
            let script = parse_script(&read(&script)?).with_context(|| format!("{}", script.display()))?;
            let tmp;
            let root = match workspace {
                Some(p) => p,
                None => {
                    tmp = tempfile::tempdir()?;
                    tmp.path().to_path_buf()
                }
            };
            let ws = Workspace::open(&root).with_context(|| format!("opening workspace {}", root.display()))?;
            match replay(&script, ToolRegistry::with_defaults(), ws, clock) {
                Ok(stream) => {
                    emit(output.as_deref(), &stream.to_text())?;
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    // Keep what was recorded, including refused escapes.
                    if let (Some(partial), Some(out)) = (e.partial(), output.as_deref()) {
                        fs::write(out, partial.to_text())?;
                    }
                    let what = if is_escape(&e) { "replay stopped on a refused sandbox escape" } else { "replay failed" };
                    Err(anyhow::Error::new(e).context(what))
                }
            }
        }
        Cmd::Serve { port, host, data, ui_dir, seeds, token } => {
            let default_seeds = match &seeds {
                Some(p) => {
                    let text = read(p)?;
                    parse_seeds(&text).with_context(|| format!("{}", p.display()))?;
                    text
                }
                None => String::new(),
            };
            let config = StoreConfig { default_seeds, ..StoreConfig::default() };
            let store = Arc::new(Store::open(&data, config).with_context(|| format!("opening {}", data.display()))?);
            tracing::info!(data = %data.display(), sessions = store.session_ids().len(), "store loaded");
            let app = router(AppState { store, token }, ui_dir);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                tracing::info!(addr = %listener.local_addr()?, "listening");
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                anyhow::Ok(())
            })?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn is_escape(e: &ReplayError) -> bool {
    matches!(e, ReplayError::Step { source: sentinel::harness::HarnessError::SandboxEscape { .. }, .. })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "sentinel=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
