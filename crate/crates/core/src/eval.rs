//! Task suites and the completion-rate, success-rate and step metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codegen::{generate_with, stable_hash, ApiSpec, FaultConfig, LlmConfig};
use crate::dsl::{InterpretConfig, TraceEntry};
use crate::encoder::{encode, Demonstration, VisualDescriberConfig};
use crate::fusion::{execute_plan, route, FunctionLibrary, LearnedFunction, RouterConfig};
use crate::sim::{check_goal, parse_goal_call, AppSpec};

pub const DEFAULT_TRIALS: usize = 10;

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub app_id: String,
    pub instruction: String,
    /// Goal predicate call, e.g. `cart_contains(item=Latte, qty=2)`.
    pub goal: String,
    /// Length of the reference path; the completion-rate denominator.
    pub reference_total_steps: usize,
    #[serde(default)]
    pub category: String,
    /// Overrides the suite's trial count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suite {
    pub suite_id: String,
    pub app_id: String,
    /// Demonstrations whose generated functions form the library.
    #[serde(default)]
    pub library_demos: Vec<String>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no run records")]
    EmptyInput,
    #[error("no successful runs")]
    NoSuccessfulRuns,
    #[error("invalid suite: {0}")]
    Suite(#[from] serde_json::Error),
    #[error("configuration error: {0}")]
    Config(String),
}

pub fn load_suite(text: &str) -> Result<Suite, EvalError> {
    Ok(serde_json::from_str(text)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_id: String,
    pub trial: usize,
    pub finished_steps: usize,
    pub total_steps: usize,
    pub success: bool,
    pub steps_taken: usize,
    /// `function(arg=value, ...)` for each planned call.
    pub plan: Vec<String>,
    /// Key of this run's trace: `<task_id>#<trial>`.
    pub trace_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

pub fn task_cr(record: &RunRecord) -> f64 {
    if record.total_steps == 0 {
        return 0.0;
    }
    record.finished_steps as f64 / record.total_steps as f64
}

pub fn task_sr(records: &[RunRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(records.iter().filter(|r| r.success).count() as f64 / records.len() as f64)
}

/// Mean steps over successful runs only.
pub fn avg_steps(records: &[RunRecord]) -> Result<f64, EvalError> {
    let ok: Vec<usize> = records.iter().filter(|r| r.success).map(|r| r.steps_taken).collect();
    if ok.is_empty() {
        return Err(EvalError::NoSuccessfulRuns);
    }
    Ok(ok.iter().sum::<usize>() as f64 / ok.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Overrides every task's trial count.
    pub trials: Option<usize>,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
    pub llm: LlmConfig,
    pub router: RouterConfig,
    pub interpret: InterpretConfig,
    pub visual: VisualDescriberConfig,
}


impl EvalConfig {
    /// Hex digest of the canonical JSON of this configuration.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

/// A run's record plus its full trace.
#[derive(Debug, Clone)]
pub struct TaskRun {
    pub record: RunRecord,
    pub trace: Vec<TraceEntry>,
}

fn call_summary(function: &str, args: &BTreeMap<String, String>) -> String {
    let args: Vec<String> = args.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{function}({})", args.join(", "))
}

/// Routes the task's instruction, executes the plan from a fresh session
/// and checks the goal. Routing and execution problems become failed
/// records, never errors.
pub fn run_task(
    task: &TaskSpec,
    trial: usize,
    library: &FunctionLibrary,
    app: &Arc<AppSpec>,
    config: &EvalConfig,
) -> TaskRun {
    let total = task.reference_total_steps;
    let mut record = RunRecord {
        task_id: task.task_id.clone(),
        trial,
        finished_steps: 0,
        total_steps: total,
        success: false,
        steps_taken: 0,
        plan: Vec::new(),
        trace_ref: format!("{}#{trial}", task.task_id),
        failure: None,
    };
    let library = library.for_app(&task.app_id);
    let plan = match route(&task.instruction, &library, &config.router) {
        Ok(plan) => plan,
        Err(e) => {
            record.failure = Some(format!("no_route: {e}"));
            return TaskRun { record, trace: Vec::new() };
        }
    };
    record.plan = plan.calls.iter().map(|c| call_summary(&c.function, &c.args)).collect();
    let (outcome, trace) = match execute_plan(&plan, &library, app, &config.interpret) {
        Ok(done) => done,
        Err(e) => {
            record.failure = Some(format!("invalid_plan: {e}"));
            return TaskRun { record, trace: Vec::new() };
        }
    };
    record.steps_taken = trace.len();
    // A failed run never reaches the full count, so success ⇔ CR = 1.
    let partial = trace.len().min(total.saturating_sub(1));
    if let Some(f) = &outcome.failure {
        record.finished_steps = partial;
        record.failure = Some(format!("execution: {f}"));
        return TaskRun { record, trace };
    }
    match check_goal(&outcome.final_state, &task.goal) {
        Ok(true) => {
            record.success = true;
            record.finished_steps = total;
        }
        Ok(false) => {
            record.finished_steps = partial;
            record.failure = Some(format!("goal_not_met: {} is false in the final state", task.goal));
        }
        Err(e) => {
            record.finished_steps = partial;
            record.failure = Some(format!("goal_error: {e}"));
        }
    }
    TaskRun { record, trace }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub task_cr: f64,
    pub task_sr: f64,
    /// Absent when no run succeeded.
    pub avg_steps: Option<f64>,
}

impl Aggregate {
    pub fn of(records: &[&RunRecord]) -> Option<Aggregate> {
        if records.is_empty() {
            return None;
        }
        let owned: Vec<RunRecord> = records.iter().map(|r| (*r).clone()).collect();
        Some(Aggregate {
            runs: owned.len(),
            task_cr: owned.iter().map(task_cr).sum::<f64>() / owned.len() as f64,
            task_sr: task_sr(&owned).ok()?,
            avg_steps: avg_steps(&owned).ok(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_id: String,
    pub category: String,
    pub instruction: String,
    pub goal: String,
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Aggregate>,
    /// Why the task could not be evaluated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub suite_id: String,
    pub app_id: String,
    pub overall: Option<Aggregate>,
    pub by_category: BTreeMap<String, Aggregate>,
    pub tasks: Vec<TaskReport>,
    /// Problems building the function library, per trial.
    pub library_problems: Vec<String>,
    pub config: EvalConfig,
    pub config_fingerprint: String,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_table(&self) -> String {
        let pct = |x: f64| format!("{:.1}", x * 100.0);
        let steps = |a: &Aggregate| a.avg_steps.map_or("-".to_string(), |s| format!("{s:.2}"));
        let mut out = String::new();
        let _ = writeln!(out, "suite {} (app {}), config {}", self.suite_id, self.app_id, self.config_fingerprint);
        let _ = writeln!(out, "{:<8} {:<12} {:>6} {:>8} {:>8} {:>9}  instruction", "task", "category", "runs", "CR %", "SR %", "avg steps");
        for t in &self.tasks {
            match &t.metrics {
                Some(m) => {
                    let _ = writeln!(
                        out,
                        "{:<8} {:<12} {:>6} {:>8} {:>8} {:>9}  {}",
                        t.task_id,
                        t.category,
                        m.runs,
                        pct(m.task_cr),
                        pct(m.task_sr),
                        steps(m),
                        t.instruction
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "{:<8} {:<12} {:>6} {:>8} {:>8} {:>9}  {} [error: {}]",
                        t.task_id,
                        t.category,
                        0,
                        "-",
                        "-",
                        "-",
                        t.instruction,
                        t.error.as_deref().unwrap_or("")
                    );
                }
            }
        }
        for (name, m) in self.by_category.iter().map(|(k, v)| (k.as_str(), v)).chain(self.overall.iter().map(|m| ("overall", m))) {
            let _ = writeln!(
                out,
                "{:<21} {:>6} {:>8} {:>8} {:>9}",
                name,
                m.runs,
                pct(m.task_cr),
                pct(m.task_sr),
                steps(m)
            );
        }
        for p in &self.library_problems {
            let _ = writeln!(out, "library: {p}");
        }
        out
    }
}

/// Generates and registers a function for each demonstration. Failures are
/// returned as messages so evaluation can continue without the function.
pub fn build_library(
    demos: &[Demonstration],
    apps: &(dyn Fn(&str) -> Option<Arc<AppSpec>> + Sync),
    llm: &LlmConfig,
    visual: &VisualDescriberConfig,
) -> (FunctionLibrary, Vec<String>) {
    let api = ApiSpec::default();
    let backend = llm.build_backend();
    let mut lib = FunctionLibrary::new();
    let mut problems = Vec::new();
    for demo in demos {
        let Some(app) = apps(&demo.app_id) else {
            problems.push(format!("{}: unknown app {:?}", demo.demo_id, demo.app_id));
            continue;
        };
        let result = encode(demo, visual)
            .map_err(|e| e.to_string())
            .and_then(|enc| generate_with(&enc, &api, &app, llm, backend.as_ref()).map_err(|e| e.to_string()));
        match result {
            Ok(g) => {
                lib.register(LearnedFunction::from_generated(&g, backend.name()));
            }
            Err(e) => problems.push(format!("{}: {e}", demo.demo_id)),
        }
    }
    (lib, problems)
}

/// Where a suite's functions come from.
pub enum LibrarySource<'a> {
    /// Use this library for every trial.
    Fixed(&'a FunctionLibrary),
    /// Generate from these demonstrations: once, or once per trial when the
    /// backend injects faults so each trial sees its own generations.
    Demos(&'a [Demonstration]),
}

fn task_problem(task: &TaskSpec, apps: &(dyn Fn(&str) -> Option<Arc<AppSpec>> + Sync)) -> Option<String> {
    if task.reference_total_steps == 0 {
        return Some("reference_total_steps must be at least 1".into());
    }
    let Some(app) = apps(&task.app_id) else {
        return Some(format!("unknown app {:?}", task.app_id));
    };
    match parse_goal_call(&task.goal) {
        Ok((name, _)) if app.goals.contains_key(&name) => None,
        Ok((name, _)) => Some(format!("app {:?} has no goal `{name}`", task.app_id)),
        Err(e) => Some(format!("bad goal {:?}: {e}", task.goal)),
    }
}

/// Runs every task for its trial count and aggregates. Misconfigured tasks
/// are reported with an error and skipped; nothing aborts the suite.
pub fn evaluate_suite(
    suite: &Suite,
    source: LibrarySource<'_>,
    apps: &(dyn Fn(&str) -> Option<Arc<AppSpec>> + Sync),
    config: &EvalConfig,
) -> Result<MetricsReport, EvalError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    pool.install(|| evaluate_in_pool(suite, source, apps, config))
}

fn evaluate_in_pool(
    suite: &Suite,
    source: LibrarySource<'_>,
    apps: &(dyn Fn(&str) -> Option<Arc<AppSpec>> + Sync),
    config: &EvalConfig,
) -> Result<MetricsReport, EvalError> {
    let trials_of = |t: &TaskSpec| config.trials.or(t.trials).unwrap_or(suite.trials);
    let max_trials = suite.tasks.iter().map(trials_of).max().unwrap_or(0);
    let mut library_problems = Vec::new();
    // libraries[k] serves trial k; a single entry serves all trials.
    let libraries: Vec<FunctionLibrary> = match source {
        LibrarySource::Fixed(lib) => vec![lib.clone()],
        LibrarySource::Demos(demos) => match config.llm.fault {
            None => {
                let (lib, problems) = build_library(demos, apps, &config.llm, &config.visual);
                library_problems.extend(problems);
                vec![lib]
            }
            Some(fault) => {
                let built: Vec<(FunctionLibrary, Vec<String>)> = (0..max_trials)
                    .into_par_iter()
                    .map(|trial| {
                        let llm = LlmConfig {
                            fault: Some(FaultConfig {
                                rate: fault.rate,
                                seed: stable_hash(&[&fault.seed.to_le_bytes(), &(trial as u64).to_le_bytes()]),
                            }),
                            ..config.llm.clone()
                        };
                        build_library(demos, apps, &llm, &config.visual)
                    })
                    .collect();
                let mut libs = Vec::new();
                for (trial, (lib, problems)) in built.into_iter().enumerate() {
                    library_problems.extend(problems.into_iter().map(|p| format!("trial {trial}: {p}")));
                    libs.push(lib);
                }
                libs
            }
        },
    };
    let library_for = |trial: usize| &libraries[if libraries.len() == 1 { 0 } else { trial }];

    let jobs: Vec<(usize, usize)> = suite
        .tasks
        .iter()
        .enumerate()
        .filter(|(_, t)| task_problem(t, apps).is_none())
        .flat_map(|(i, t)| (0..trials_of(t)).map(move |trial| (i, trial)))
        .collect();
    let records: Vec<(usize, RunRecord)> = jobs
        .par_iter()
        .map(|&(i, trial)| {
            let task = &suite.tasks[i];
            let app = apps(&task.app_id).expect("checked above");
            (i, run_task(task, trial, library_for(trial), &app, config).record)
        })
        .collect();

    let mut tasks = Vec::new();
    let mut by_category: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for (i, task) in suite.tasks.iter().enumerate() {
        let runs: Vec<RunRecord> = records.iter().filter(|(j, _)| *j == i).map(|(_, r)| r.clone()).collect();
        let error = task_problem(task, apps);
        tasks.push(TaskReport {
            task_id: task.task_id.clone(),
            category: task.category.clone(),
            instruction: task.instruction.clone(),
            goal: task.goal.clone(),
            trials: if error.is_some() { 0 } else { trials_of(task) },
            metrics: Aggregate::of(&runs.iter().collect::<Vec<_>>()),
            error,
            runs,
        });
    }
    for (i, r) in &records {
        let cat = &suite.tasks[*i].category;
        by_category.entry(if cat.is_empty() { "uncategorized".into() } else { cat.clone() }).or_default().push(r);
    }
    let all: Vec<&RunRecord> = records.iter().map(|(_, r)| r).collect();
    Ok(MetricsReport {
        suite_id: suite.suite_id.clone(),
        app_id: suite.app_id.clone(),
        overall: Aggregate::of(&all),
        by_category: by_category
            .into_iter()
            .filter_map(|(k, v)| Aggregate::of(&v).map(|a| (k, a)))
            .collect(),
        tasks,
        library_problems,
        config: config.clone(),
        config_fingerprint: config.fingerprint(),
    })
}
