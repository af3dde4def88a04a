//! The operations shared by the command line and the HTTP API, on top of a
//! workspace directory and a loaded configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use ebc_core::bundled;
use ebc_core::codegen::{generate, ApiSpec, BackendKind, CodegenError, GeneratedScript, LlmConfig};
use ebc_core::config::{ConfigError, EbcConfig, Workspace, WorkspaceError};
use ebc_core::dsl::{check_args, interpret, RunError, TraceEntry};
use ebc_core::encoder::{encode, record_script, DemoScript, Demonstration, EncodeError, EncodedDemo};
use ebc_core::eval::{evaluate_suite, load_suite, EvalError, LibrarySource, MetricsReport, Suite};
use ebc_core::fusion::{execute_plan, route, CallOutcome, FunctionLibrary, FusionError, FusionPlan, LearnedFunction};
use ebc_core::sim::{load_app_spec, render_value, reset, AppSpec, SimError, SimState};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown app id {0:?}")]
    UnknownApp(String),
    #[error("unknown function {0:?}")]
    UnknownFunction(String),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("{0}")]
    Arguments(String),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn input_err(path: &Path, message: impl ToString) -> PipelineError {
    PipelineError::Input {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// A headless recording: what the demonstrator did, as a JSON document.
/// `app_id` may be omitted when the app is given on the command line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventFile {
    #[serde(default)]
    pub app_id: Option<String>,
    #[serde(default)]
    pub demo_id: Option<String>,
    pub instruction: String,
    pub actions: Vec<ebc_core::sim::Action>,
}

/// Outcome of running one learned function from a fresh session.
#[derive(Debug, Clone, Serialize)]
pub struct ReplayRun {
    pub function: String,
    pub args: BTreeMap<String, String>,
    pub entries: Vec<TraceEntry>,
    pub final_state: SimState,
    /// Why the run stopped early, if it did.
    pub error: Option<String>,
}

impl ReplayRun {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }

    pub fn call(&self) -> String {
        call_text(&self.function, &self.args)
    }
}

/// Outcome of routing and executing a natural-language task.
#[derive(Debug, Clone, Serialize)]
pub struct TaskRunResult {
    pub plan: FusionPlan,
    pub calls: Vec<CallOutcome>,
    pub entries: Vec<TraceEntry>,
    pub final_state: SimState,
    pub error: Option<String>,
}

pub fn call_text(function: &str, args: &BTreeMap<String, String>) -> String {
    let args: Vec<String> = args.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{function}({})", args.join(", "))
}

/// One line describing where a session ended up: the screen and every
/// variable that differs from its initial value.
pub fn state_summary(state: &SimState) -> String {
    let mut parts = vec![format!("screen {}", state.screen)];
    for (name, value) in &state.vars {
        if state.app.variables.get(name) != Some(value) {
            parts.push(format!("{name}={}", render_value(value)));
        }
    }
    parts.join("; ")
}

pub struct Pipeline {
    pub config: EbcConfig,
    pub workspace: Workspace,
    apps: BTreeMap<String, Arc<AppSpec>>,
    /// Registration goes through this lock so concurrent generations
    /// cannot lose each other's functions.
    library: Mutex<FunctionLibrary>,
}

impl Pipeline {
    /// Opens the configured workspace. Apps are the bundled ones plus any
    /// `apps/*.json` in the workspace, which may override them.
    pub fn open(config: EbcConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let workspace = Workspace::open(&config.workspace)?;
        let mut apps: BTreeMap<String, Arc<AppSpec>> =
            bundled::apps().into_iter().map(|a| (a.app_id.clone(), a)).collect();
        let apps_dir = workspace.root.join("apps");
        if apps_dir.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(&apps_dir)
                .map_err(|e| input_err(&apps_dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            for path in files {
                let text = fs::read_to_string(&path).map_err(|e| input_err(&path, e))?;
                let app = load_app_spec(&text).map_err(|e| input_err(&path, e))?;
                apps.insert(app.app_id.clone(), Arc::new(app));
            }
        }
        let library = workspace.load_library()?;
        Ok(Pipeline {
            config,
            workspace,
            apps,
            library: Mutex::new(library),
        })
    }

    pub fn apps(&self) -> impl Iterator<Item = &Arc<AppSpec>> {
        self.apps.values()
    }

    pub fn app(&self, app_id: &str) -> Result<Arc<AppSpec>, PipelineError> {
        self.apps
            .get(app_id)
            .cloned()
            .ok_or_else(|| PipelineError::UnknownApp(app_id.to_string()))
    }

    fn lookup(&self) -> impl Fn(&str) -> Option<Arc<AppSpec>> + Sync + '_ {
        |id| self.apps.get(id).cloned()
    }

    fn library(&self) -> MutexGuard<'_, FunctionLibrary> {
        self.library.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Reads an event file and fills in the app from `app_id` when the file
    /// leaves it out.
    pub fn read_event_file(path: &Path, app_id: &str) -> Result<DemoScript, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| input_err(path, e))?;
        let file: EventFile = serde_json::from_str(&text).map_err(|e| input_err(path, e))?;
        if let Some(declared) = &file.app_id {
            if declared != app_id {
                return Err(input_err(path, format!("events are for app {declared:?}, not {app_id:?}")));
            }
        }
        Ok(DemoScript {
            demo_id: file.demo_id,
            app_id: app_id.to_string(),
            instruction: file.instruction,
            actions: file.actions,
        })
    }

    /// Plays the script on a fresh session, then stores and encodes the
    /// resulting demonstration.
    pub fn record(&self, script: &DemoScript) -> Result<EncodedDemo, PipelineError> {
        let app = self.app(&script.app_id)?;
        let (demo, _) = record_script(&app, script)?;
        self.store_demo(&demo)
    }

    pub fn store_demo(&self, demo: &Demonstration) -> Result<EncodedDemo, PipelineError> {
        let encoded = encode(demo, &self.config.visual)?;
        self.workspace.save_demo(demo)?;
        self.workspace.save_encoded(&encoded)?;
        Ok(encoded)
    }

    /// The encoded form of a stored demonstration. Bundled demonstrations
    /// are recorded into the workspace on first use.
    pub fn encoded_demo(&self, demo_id: &str) -> Result<EncodedDemo, PipelineError> {
        match self.workspace.load_encoded(demo_id) {
            Err(WorkspaceError::UnknownDemo(_)) => {}
            other => return Ok(other?),
        }
        match self.workspace.load_demo(demo_id) {
            Ok(demo) => return self.store_demo(&demo),
            Err(WorkspaceError::UnknownDemo(_)) => {}
            Err(e) => return Err(e.into()),
        }
        match bundled::demo_script(demo_id) {
            Some(script) => self.record(&script),
            None => Err(WorkspaceError::UnknownDemo(demo_id.to_string()).into()),
        }
    }

    fn demonstration(&self, demo_id: &str) -> Result<Demonstration, PipelineError> {
        self.encoded_demo(demo_id)?;
        Ok(self.workspace.load_demo(demo_id)?)
    }

    /// Generates a function from a demonstration and registers it.
    pub fn generate(
        &self,
        demo_id: &str,
        backend: Option<BackendKind>,
    ) -> Result<(GeneratedScript, LearnedFunction), PipelineError> {
        let encoded = self.encoded_demo(demo_id)?;
        let app = self.app(&encoded.app_id)?;
        let llm = LlmConfig {
            backend: backend.unwrap_or(self.config.llm.backend),
            ..self.config.llm.clone()
        };
        let generated = generate(&encoded, &ApiSpec::default(), &app, &llm)?;
        let backend_name = llm.build_backend().name().to_string();
        let mut library = self.library();
        let function = library.register_generated(&generated, &backend_name).clone();
        self.workspace.save_library(&library)?;
        Ok((generated, function))
    }

    pub fn functions(&self) -> Vec<LearnedFunction> {
        self.library().iter().cloned().collect()
    }

    pub fn function(&self, name: &str) -> Result<LearnedFunction, PipelineError> {
        self.library()
            .get(name)
            .cloned()
            .ok_or_else(|| PipelineError::UnknownFunction(name.to_string()))
    }

    pub fn delete_function(&self, name: &str) -> Result<LearnedFunction, PipelineError> {
        let mut library = self.library();
        let removed = library
            .remove(name)
            .ok_or_else(|| PipelineError::UnknownFunction(name.to_string()))?;
        self.workspace.save_library(&library)?;
        Ok(removed)
    }

    /// Runs a learned function from a fresh session of its app. Argument
    /// problems are errors; a run that stops early is reported in the result
    /// together with everything it did.
    pub fn replay(&self, name: &str, args: &BTreeMap<String, String>) -> Result<ReplayRun, PipelineError> {
        let function = self.function(name)?;
        let app = self.app(&function.app_id)?;
        let args = check_args(&function.params, args).map_err(|e| match e {
            RunError::ArgError(m) => PipelineError::Arguments(m),
            other => PipelineError::Arguments(other.to_string()),
        })?;
        let (entries, final_state, error) =
            match interpret(&function.script, &function.name, &args, reset(&app), &self.config.interpret_config()) {
                Ok(trace) => (trace.entries, trace.final_state, None),
                Err(failure) => (failure.trace.entries, failure.trace.final_state, Some(failure.error.to_string())),
            };
        Ok(ReplayRun {
            function: function.name,
            args,
            entries,
            final_state,
            error,
        })
    }

    /// Routes a task onto the library (restricted to one app when given)
    /// and executes the plan.
    pub fn run_task(&self, instruction: &str, app_id: Option<&str>) -> Result<TaskRunResult, PipelineError> {
        let library = match app_id {
            Some(id) => {
                self.app(id)?;
                self.library().for_app(id)
            }
            None => self.library().clone(),
        };
        let plan = route(instruction, &library, &self.config.router_config())?;
        let app = self.app(&plan.app_id)?;
        let (outcome, entries) = execute_plan(&plan, &library, &app, &self.config.interpret_config())?;
        Ok(TaskRunResult {
            plan,
            calls: outcome.calls,
            entries,
            error: outcome.failure.map(|f| f.to_string()),
            final_state: outcome.final_state,
        })
    }

    /// A suite from a file path, or a bundled suite by id.
    pub fn load_suite(&self, suite: &str) -> Result<Suite, PipelineError> {
        let path = Path::new(suite);
        if path.exists() {
            let text = fs::read_to_string(path).map_err(|e| input_err(path, e))?;
            return Ok(load_suite(&text)?);
        }
        match bundled::suite_source(suite) {
            Some(text) => Ok(load_suite(text)?),
            None => Err(input_err(path, "no such suite file or bundled suite")),
        }
    }

    /// Evaluates a suite. Functions are generated from the suite's listed
    /// demonstrations; a suite listing none uses the workspace library.
    pub fn evaluate(&self, suite: &Suite, trials: Option<usize>) -> Result<MetricsReport, PipelineError> {
        let mut config = self.config.eval_config();
        if trials.is_some() {
            config.trials = trials;
        }
        let lookup = self.lookup();
        if suite.library_demos.is_empty() {
            let library = self.library().clone();
            return Ok(evaluate_suite(suite, LibrarySource::Fixed(&library), &lookup, &config)?);
        }
        let demos = suite
            .library_demos
            .iter()
            .map(|id| self.demonstration(id))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(evaluate_suite(suite, LibrarySource::Demos(&demos), &lookup, &config)?)
    }

    /// Writes `report.json` and `report.txt` into `out`, or under the
    /// workspace's `reports/<suite_id>/` when no directory is given.
    pub fn write_report(&self, report: &MetricsReport, out: Option<&Path>) -> Result<Vec<PathBuf>, PipelineError> {
        let Some(dir) = out else {
            return Ok(self.workspace.write_report(&report.suite_id, report)?);
        };
        fs::create_dir_all(dir).map_err(|e| input_err(dir, e))?;
        let json = dir.join("report.json");
        fs::write(&json, report.to_json()).map_err(|e| input_err(&json, e))?;
        let table = dir.join("report.txt");
        fs::write(&table, report.to_table()).map_err(|e| input_err(&table, e))?;
        Ok(vec![json, table])
    }
}
