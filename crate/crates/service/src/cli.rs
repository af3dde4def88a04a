//! The `ebc` command line. Usage errors exit with 2 (clap's convention),
//! pipeline errors with 1; diagnostics go to standard error.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use ebc_core::codegen::BackendKind;
use ebc_core::config::EbcConfig;
use ebc_core::mapping::{map_step, MappingError, Selector};
use ebc_core::ui::{parse_ui_xml, UiError};

use crate::pipeline::{call_text, state_summary, Pipeline, PipelineError};

pub const DEFAULT_CONFIG: &str = "ebc.toml";

#[derive(Debug, Parser)]
#[command(name = "ebc", version, about = "Learn app automations from demonstrations and replay them")]
pub struct Cli {
    /// Configuration file; `ebc.toml` in the current directory is used when
    /// present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Workspace directory, overriding the configuration.
    #[arg(long, global = true)]
    pub workspace: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulated apps.
    #[command(subcommand)]
    Apps(AppsCommand),
    /// Record a demonstration headlessly from an event file.
    Record {
        #[arg(long)]
        app: String,
        /// JSON file with `instruction` and `actions`.
        #[arg(long)]
        script: PathBuf,
    },
    /// Generate and register a function from a recorded demonstration.
    Generate {
        #[arg(long)]
        demo: String,
        #[arg(long, value_parser = ["stub", "remote"])]
        backend: Option<String>,
    },
    /// Run a learned function on a fresh session.
    Replay {
        #[arg(long)]
        function: String,
        /// Arguments as `name=value`.
        #[arg(long, num_args = 0.., value_parser = parse_key_value)]
        args: Vec<(String, String)>,
    },
    /// Route a natural-language task onto the library and execute it.
    Run {
        #[arg(long)]
        task: String,
        #[arg(long)]
        app: Option<String>,
    },
    /// Evaluate a task suite and write its report.
    Eval(EvalArgs),
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Directory of static files served next to the API.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
    /// The function library.
    #[command(subcommand)]
    Functions(FunctionsCommand),
    /// Map a selector onto a UI hierarchy file.
    Map(MapArgs),
}

#[derive(Debug, Subcommand)]
pub enum AppsCommand {
    List,
}

#[derive(Debug, Subcommand)]
pub enum FunctionsCommand {
    List,
    Show { name: String },
    Delete { name: String },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Suite file, or the id of a bundled suite.
    #[arg(long)]
    pub suite: String,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Report directory; defaults to the workspace's reports/<suite id>.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    /// UI hierarchy XML file.
    #[arg(long)]
    pub screen: PathBuf,
    #[arg(long, default_value = "")]
    pub text: String,
    #[arg(long, default_value = "")]
    pub id: String,
    #[arg(long, default_value = "")]
    pub visual: String,
    /// Context texts recorded around the element.
    #[arg(long, num_args = 0..)]
    pub surrounding: Vec<String>,
}

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.to_string())),
        _ => Err(format!("expected name=value, got {s:?}")),
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ui(#[from] UiError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error("server: {0}")]
    Serve(#[source] std::io::Error),
    #[error("{0}")]
    Failed(String),
}

fn load_config(cli: &Cli) -> Result<EbcConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => EbcConfig::load(path).map_err(PipelineError::from)?,
        None if std::path::Path::new(DEFAULT_CONFIG).exists() => {
            EbcConfig::load(std::path::Path::new(DEFAULT_CONFIG)).map_err(PipelineError::from)?
        }
        None => EbcConfig::default(),
    };
    if let Some(ws) = &cli.workspace {
        config.workspace = ws.clone();
    }
    Ok(config)
}

/// Runs a parsed command, writing results to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(&cli)?;
    if let Command::Map(args) = &cli.command {
        return map(args, &config, out);
    }
    let pipeline = Pipeline::open(config)?;
    let w = |out: &mut dyn Write, line: String| writeln!(out, "{line}").map_err(|e| CliError::Failed(e.to_string()));
    match cli.command {
        Command::Apps(AppsCommand::List) => {
            for app in pipeline.apps() {
                w(out, format!("{}\t{}\t{}", app.app_id, app.meta.app_name, app.meta.description))?;
            }
        }
        Command::Record { app, script } => {
            let script = Pipeline::read_event_file(&script, &app)?;
            let encoded = pipeline.record(&script)?;
            w(out, format!("recorded {} ({} steps)", encoded.demo_id, encoded.steps.len()))?;
        }
        Command::Generate { demo, backend } => {
            let backend = backend.map(|b| if b == "remote" { BackendKind::Remote } else { BackendKind::DeterministicStub });
            let (generated, function) = pipeline.generate(&demo, backend)?;
            w(
                out,
                format!(
                    "registered {} from {} after {} attempt(s)",
                    function.signature(),
                    generated.demo_id,
                    generated.attempts
                ),
            )?;
            w(out, String::new())?;
            write!(out, "{}", generated.raw_text).map_err(|e| CliError::Failed(e.to_string()))?;
        }
        Command::Replay { function, args } => {
            let args: BTreeMap<String, String> = args.into_iter().collect();
            let run = pipeline.replay(&function, &args)?;
            match &run.error {
                None => w(
                    out,
                    format!(
                        "success: {} in {} steps — {}",
                        run.call(),
                        run.entries.len(),
                        state_summary(&run.final_state)
                    ),
                )?,
                Some(error) => {
                    return Err(CliError::Failed(format!(
                        "{} failed after {} steps: {error} — {}",
                        run.call(),
                        run.entries.len(),
                        state_summary(&run.final_state)
                    )))
                }
            }
        }
        Command::Run { task, app } => {
            let result = pipeline.run_task(&task, app.as_deref())?;
            for call in &result.plan.calls {
                w(out, format!("plan: {}", call_text(&call.function, &call.args)))?;
            }
            for entry in &result.entries {
                w(out, format!("  {} — {}", entry.primitive, entry.explanation))?;
            }
            match &result.error {
                None => w(out, format!("success in {} steps — {}", result.entries.len(), state_summary(&result.final_state)))?,
                Some(error) => return Err(CliError::Failed(error.clone())),
            }
        }
        Command::Eval(args) => {
            let suite = pipeline.load_suite(&args.suite)?;
            let report = pipeline.evaluate(&suite, args.trials)?;
            write!(out, "{}", report.to_table()).map_err(|e| CliError::Failed(e.to_string()))?;
            for path in pipeline.write_report(&report, args.out.as_deref())? {
                w(out, format!("wrote {}", path.display()))?;
            }
        }
        Command::Serve { port, host, ui_dir } => {
            let runtime = tokio::runtime::Runtime::new().map_err(CliError::Serve)?;
            runtime
                .block_on(crate::http::serve(Arc::new(pipeline), SocketAddr::new(host, port), ui_dir))
                .map_err(CliError::Serve)?;
        }
        Command::Functions(FunctionsCommand::List) => {
            for f in pipeline.functions() {
                w(out, format!("{}\t{}\t{}", f.signature(), f.app_id, f.description))?;
            }
        }
        Command::Functions(FunctionsCommand::Show { name }) => {
            let f = pipeline.function(&name)?;
            let source = f.history.last().map(|r| r.source.clone()).unwrap_or_default();
            write!(out, "{source}").map_err(|e| CliError::Failed(e.to_string()))?;
        }
        Command::Functions(FunctionsCommand::Delete { name }) => {
            let removed = pipeline.delete_function(&name)?;
            w(out, format!("deleted {}", removed.signature()))?;
        }
        Command::Map(_) => unreachable!("handled above"),
    }
    Ok(())
}

fn map(args: &MapArgs, config: &EbcConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let xml = std::fs::read_to_string(&args.screen).map_err(|source| CliError::Read {
        path: args.screen.clone(),
        source,
    })?;
    let tree = parse_ui_xml(&xml)?;
    let selector = Selector {
        text: args.text.clone(),
        id: args.id.clone(),
        visual: args.visual.clone(),
        surrounding: args.surrounding.clone(),
    };
    let result = map_step(&selector, &tree, &config.mapping)?;
    writeln!(
        out,
        "element {} (path {:?}, score {:.3}, {:?}): {}",
        result.index, result.path, result.score, result.stage, result.explanation
    )
    .map_err(|e| CliError::Failed(e.to_string()))
}
