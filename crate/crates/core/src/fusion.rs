//! The function library and chain-fusion: picking learned functions for a
//! task, binding their arguments from the task text, and running them in
//! sequence on one simulator session.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::{strip_fences, GeneratedScript, LlmConfig, TextBackend, TextPurpose, TextRequest};
use crate::dsl::{
    check_args, interpret, parse_script_file, render_script_file, ActionScript, InterpretConfig, ParamKind, ParamSlot,
    RunError, ScriptFile, ScriptHeader, SyntaxError, TraceEntry,
};
use crate::sim::{reset, AppSpec, SimState};
use crate::text::{find_phrase, is_stopword, numeral_value, stem, words};

/// One registration of a function name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Revision {
    pub demo_id: String,
    pub instruction: String,
    pub backend: String,
    pub attempts: usize,
    /// Script text of this revision.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnedFunction {
    pub name: String,
    pub app_id: String,
    /// Natural-language description used for routing: the demonstrated
    /// instruction.
    pub description: String,
    pub params: Vec<ParamSlot>,
    pub script: ActionScript,
    /// Every registration under this name, oldest first; the last entry is
    /// the current one.
    pub history: Vec<Revision>,
}

impl LearnedFunction {
    pub fn from_generated(g: &GeneratedScript, backend: &str) -> Self {
        let file = g.script_file();
        LearnedFunction {
            name: g.function_name.clone(),
            app_id: g.app_id.clone(),
            description: g.instruction.clone(),
            params: g.params.clone(),
            script: g.ast.clone(),
            history: vec![Revision {
                demo_id: g.demo_id.clone(),
                instruction: g.instruction.clone(),
                backend: backend.to_string(),
                attempts: g.attempts,
                source: render_script_file(&file),
            }],
        }
    }

    pub fn demo_id(&self) -> &str {
        self.history.last().map_or("", |r| r.demo_id.as_str())
    }

    pub fn script_file(&self) -> ScriptFile {
        ScriptFile {
            header: ScriptHeader {
                demo_id: self.demo_id().to_string(),
                app_id: self.app_id.clone(),
                function: self.name.clone(),
                instruction: self.description.clone(),
                params: self.params.clone(),
            },
            script: self.script.clone(),
        }
    }

    /// `order_drink(drink: one of [..], quantity: integer)`.
    pub fn signature(&self) -> String {
        let params: Vec<String> = self
            .params
            .iter()
            .map(|p| match p.kind {
                ParamKind::Choice => format!("{}: one of {:?}", p.name, p.choices),
                ParamKind::Integer => format!("{}: integer", p.name),
                ParamKind::FreeText => format!("{}: text", p.name),
            })
            .collect();
        format!("{}({})", self.name, params.join(", "))
    }
}

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Script {
        path: PathBuf,
        #[source]
        source: SyntaxError,
    },
    #[error("{path}: {source}")]
    Index {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LibraryError + '_ {
    move |source| LibraryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    app_id: String,
    description: String,
    params: Vec<ParamSlot>,
    history: Vec<Revision>,
}

pub const INDEX_FILE: &str = "index.json";
pub const SCRIPT_EXTENSION: &str = "ebc";

/// Learned functions by name. Re-registering a name replaces the function
/// and extends its history.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FunctionLibrary {
    functions: BTreeMap<String, LearnedFunction>,
}

impl FunctionLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, mut function: LearnedFunction) -> &LearnedFunction {
        if let Some(old) = self.functions.remove(&function.name) {
            let mut history = old.history;
            history.append(&mut function.history);
            function.history = history;
        }
        let name = function.name.clone();
        self.functions.entry(name).or_insert(function)
    }

    pub fn register_generated(&mut self, g: &GeneratedScript, backend: &str) -> &LearnedFunction {
        self.register(LearnedFunction::from_generated(g, backend))
    }

    pub fn get(&self, name: &str) -> Option<&LearnedFunction> {
        self.functions.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<LearnedFunction> {
        self.functions.remove(name)
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Functions in name order.
    pub fn iter(&self) -> impl Iterator<Item = &LearnedFunction> {
        self.functions.values()
    }

    pub fn for_app(&self, app_id: &str) -> FunctionLibrary {
        FunctionLibrary {
            functions: self
                .functions
                .iter()
                .filter(|(_, f)| f.app_id == app_id)
                .map(|(k, f)| (k.clone(), f.clone()))
                .collect(),
        }
    }

    /// Writes one `<name>.ebc` per function plus `index.json`, and removes
    /// script files of functions no longer in the library.
    pub fn save(&self, dir: &Path) -> Result<(), LibraryError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for f in self.functions.values() {
            let path = dir.join(format!("{}.{SCRIPT_EXTENSION}", f.name));
            fs::write(&path, render_script_file(&f.script_file())).map_err(io_err(&path))?;
        }
        for entry in fs::read_dir(dir).map_err(io_err(dir))? {
            let path = entry.map_err(io_err(dir))?.path();
            let stale = path.extension().is_some_and(|e| e == SCRIPT_EXTENSION)
                && path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .is_none_or(|s| !self.functions.contains_key(s));
            if stale {
                fs::remove_file(&path).map_err(io_err(&path))?;
            }
        }
        let index: Vec<IndexEntry> = self
            .functions
            .values()
            .map(|f| IndexEntry {
                name: f.name.clone(),
                app_id: f.app_id.clone(),
                description: f.description.clone(),
                params: f.params.clone(),
                history: f.history.clone(),
            })
            .collect();
        let path = dir.join(INDEX_FILE);
        let json = serde_json::to_string_pretty(&index).map_err(|source| LibraryError::Index {
            path: path.clone(),
            source,
        })?;
        fs::write(&path, json + "\n").map_err(io_err(&path))
    }

    /// Loads a library saved by [`FunctionLibrary::save`]; a directory
    /// without an index is an empty library.
    pub fn load(dir: &Path) -> Result<Self, LibraryError> {
        let index_path = dir.join(INDEX_FILE);
        if !index_path.exists() {
            return Ok(Self::default());
        }
        let raw = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
        let index: Vec<IndexEntry> = serde_json::from_str(&raw).map_err(|source| LibraryError::Index {
            path: index_path.clone(),
            source,
        })?;
        let mut lib = Self::default();
        for e in index {
            let path = dir.join(format!("{}.{SCRIPT_EXTENSION}", e.name));
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let file = parse_script_file(&text).map_err(|source| LibraryError::Script {
                path: path.clone(),
                source,
            })?;
            lib.functions.insert(
                e.name.clone(),
                LearnedFunction {
                    name: e.name,
                    app_id: e.app_id,
                    description: e.description,
                    params: e.params,
                    script: file.script,
                    history: e.history,
                },
            );
        }
        Ok(lib)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteMode {
    #[default]
    Deterministic,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouterConfig {
    pub mode: RouteMode,
    /// Functions scoring below this fraction of the best score are dropped.
    pub floor: f64,
    /// Backend for the `llm` mode.
    pub llm: LlmConfig,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            mode: RouteMode::Deterministic,
            floor: 0.2,
            llm: LlmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedCall {
    pub function: String,
    pub args: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionPlan {
    pub app_id: String,
    pub calls: Vec<PlannedCall>,
    pub rationale: String,
}

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("the function library is empty")]
    LibraryEmpty,
    #[error("no learned function matches the task {0:?}")]
    NoRoute(String),
    #[error("no function named `{0}` in the library")]
    UnknownFunction(String),
    #[error("plan mixes apps: `{function}` belongs to {found:?}, the plan to {expected:?}")]
    CrossApp {
        function: String,
        expected: String,
        found: String,
    },
    #[error("call {index} to `{function}`: {source}")]
    InvalidArgs {
        index: usize,
        function: String,
        #[source]
        source: RunError,
    },
}

/// Routing terms: lowercased words without stopwords or numerals, with
/// plurals folded.
pub fn terms(s: &str) -> Vec<String> {
    words(s)
        .into_iter()
        .filter(|w| !is_stopword(w) && numeral_value(w).is_none())
        .map(|w| stem(&w))
        .collect()
}

/// Cosine similarity of TF-IDF vectors between the task and each function
/// description, in library order. IDF is computed over the descriptions
/// with add-one smoothing.
pub fn similarity_scores(task: &str, library: &FunctionLibrary) -> Vec<(String, f64)> {
    let docs: Vec<(String, Vec<String>)> = library.iter().map(|f| (f.name.clone(), terms(&f.description))).collect();
    let n = docs.len() as f64;
    let mut df: BTreeMap<&str, f64> = BTreeMap::new();
    for (_, d) in &docs {
        for t in d.iter().collect::<BTreeSet<_>>() {
            *df.entry(t.as_str()).or_default() += 1.0;
        }
    }
    let idf = |t: &str| ((1.0 + n) / (1.0 + df.get(t).copied().unwrap_or(0.0))).ln() + 1.0;
    let vector = |ts: &[String]| -> BTreeMap<String, f64> {
        let mut v = BTreeMap::new();
        for t in ts {
            *v.entry(t.clone()).or_insert(0.0) += 1.0;
        }
        for (t, w) in v.iter_mut() {
            *w *= idf(t);
        }
        v
    };
    let norm = |v: &BTreeMap<String, f64>| v.values().map(|w| w * w).sum::<f64>().sqrt();
    let q = vector(&terms(task));
    let qn = norm(&q);
    docs.iter()
        .map(|(name, d)| {
            let v = vector(d);
            let dot: f64 = q.iter().filter_map(|(t, w)| v.get(t).map(|x| w * x)).sum();
            let denom = qn * norm(&v);
            (name.clone(), if denom > 0.0 { dot / denom } else { 0.0 })
        })
        .collect()
}

/// Indices of the scores to keep: positive scores at least `floor` times
/// the best one, best first, ties in input order.
pub fn select(scores: &[f64], floor: f64) -> Vec<usize> {
    let top = scores.iter().copied().fold(0.0_f64, f64::max);
    if top <= 0.0 {
        return Vec::new();
    }
    let mut keep: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i] > 0.0 && scores[i] / top >= floor)
        .collect();
    keep.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    keep
}

#[derive(Debug, Clone)]
struct ChoiceMatch {
    start: usize,
    end: usize,
    value: String,
}

/// Non-overlapping mentions of a slot's choices, longest first, returned in
/// text order.
fn choice_matches(tokens: &[String], slot: &ParamSlot) -> Vec<ChoiceMatch> {
    let mut all: Vec<ChoiceMatch> = slot
        .choices
        .iter()
        .flat_map(|c| {
            find_phrase(tokens, c).into_iter().map(move |(start, end)| ChoiceMatch {
                start,
                end,
                value: c.clone(),
            })
        })
        .collect();
    all.sort_by_key(|m| (std::cmp::Reverse(m.end - m.start), m.start));
    let mut kept: Vec<ChoiceMatch> = Vec::new();
    for m in all {
        if kept.iter().all(|k| m.end <= k.start || m.start >= k.end) {
            kept.push(m);
        }
    }
    kept.sort_by_key(|m| m.start);
    kept
}

struct Draft<'a> {
    function: &'a LearnedFunction,
    score: f64,
    anchor: usize,
    args: BTreeMap<String, String>,
    notes: Vec<String>,
}

impl Draft<'_> {
    fn unbound_integers(&self) -> Vec<&ParamSlot> {
        self.function
            .params
            .iter()
            .filter(|p| p.kind == ParamKind::Integer && !self.args.contains_key(&p.name))
            .collect()
    }
}

fn deterministic_route(task: &str, library: &FunctionLibrary, floor: f64) -> Result<FusionPlan, FusionError> {
    if library.is_empty() {
        return Err(FusionError::LibraryEmpty);
    }
    let scores = similarity_scores(task, library);
    let chosen = select(&scores.iter().map(|(_, s)| *s).collect::<Vec<_>>(), floor);
    if chosen.is_empty() {
        return Err(FusionError::NoRoute(task.to_string()));
    }
    let mut rationale = vec![format!(
        "similarity: {}",
        scores
            .iter()
            .map(|(n, s)| format!("{n}={s:.3}"))
            .collect::<Vec<_>>()
            .join(", ")
    )];
    // One session per task: keep the best function's app only.
    let app_id = library.get(&scores[chosen[0]].0).expect("scored").app_id.clone();
    let tokens = words(task);
    let mut claimed = vec![false; tokens.len()];
    let mut drafts: Vec<Draft> = Vec::new();
    for &i in &chosen {
        let (name, score) = &scores[i];
        let f = library.get(name).expect("scored");
        if f.app_id != app_id {
            rationale.push(format!("dropped {name}: belongs to app {:?}", f.app_id));
            continue;
        }
        let per_slot: Vec<(&ParamSlot, Vec<ChoiceMatch>)> = f
            .params
            .iter()
            .filter(|p| p.kind == ParamKind::Choice)
            .map(|p| (p, choice_matches(&tokens, p)))
            .collect();
        for (_, ms) in &per_slot {
            for m in ms {
                claimed[m.start..m.end].iter_mut().for_each(|c| *c = true);
            }
        }
        let calls = per_slot.iter().map(|(_, ms)| ms.len()).max().unwrap_or(0).max(1);
        let description: BTreeSet<String> = terms(&f.description).into_iter().collect();
        let lexical_anchor = tokens
            .iter()
            .position(|t| description.contains(&stem(t)))
            .unwrap_or(tokens.len());
        for k in 0..calls {
            let mut args = BTreeMap::new();
            let mut notes = Vec::new();
            let mut anchor = usize::MAX;
            for (slot, ms) in &per_slot {
                if let Some(m) = ms.get(k) {
                    args.insert(slot.name.clone(), m.value.clone());
                    notes.push(format!("{}={:?} from the task", slot.name, m.value));
                    anchor = anchor.min(m.start);
                }
            }
            if anchor == usize::MAX {
                anchor = lexical_anchor;
            }
            drafts.push(Draft {
                function: f,
                score: *score,
                anchor,
                args,
                notes,
            });
        }
    }
    drafts.sort_by(|a, b| {
        a.anchor
            .cmp(&b.anchor)
            .then(b.score.total_cmp(&a.score))
            .then(a.function.name.cmp(&b.function.name))
    });

    let mut numerals: Vec<(usize, u64)> = tokens
        .iter()
        .enumerate()
        .filter(|(p, _)| !claimed[*p])
        .filter_map(|(p, t)| numeral_value(t).map(|n| (p, n)))
        .collect();
    // A numeral next to a word naming the slot ("2 guests", "3 nights").
    for d in drafts.iter_mut() {
        for slot in d.unbound_integers().into_iter().map(|s| s.name.clone()).collect::<Vec<_>>() {
            let key = stem(&slot);
            let found = tokens.iter().enumerate().filter(|(_, t)| stem(t) == key).find_map(|(kw, _)| {
                numerals
                    .iter()
                    .enumerate()
                    .filter(|(_, (p, _))| p.abs_diff(kw) <= 2)
                    .min_by_key(|(_, (p, _))| (p.abs_diff(kw), *p > kw))
                    .map(|(i, _)| i)
            });
            if let Some(i) = found {
                let (_, n) = numerals.remove(i);
                d.args.insert(slot.clone(), n.to_string());
                d.notes.push(format!("{slot}={n} next to {key:?}"));
            }
        }
    }
    // Remaining numerals, left to right, go to the closest call that still
    // has an integer slot; ties go to the call that follows the numeral.
    for (p, n) in numerals {
        let target = drafts
            .iter()
            .enumerate()
            .filter(|(_, d)| d.anchor < tokens.len() && !d.unbound_integers().is_empty())
            .min_by_key(|(_, d)| (d.anchor.abs_diff(p), d.anchor < p))
            .map(|(i, _)| i);
        if let Some(i) = target {
            let d = &mut drafts[i];
            let slot = d.unbound_integers()[0].name.clone();
            d.args.insert(slot.clone(), n.to_string());
            d.notes.push(format!("{slot}={n} from the nearest number"));
        }
    }
    let mut calls = Vec::new();
    for d in drafts {
        let mut args = d.args;
        let mut notes = d.notes;
        for p in &d.function.params {
            if !args.contains_key(&p.name) {
                args.insert(p.name.clone(), p.default_value.clone());
                notes.push(format!("{}={:?} as demonstrated", p.name, p.default_value));
            }
        }
        rationale.push(format!("{} (score {:.3}): {}", d.function.name, d.score, notes.join(", ")));
        calls.push(PlannedCall {
            function: d.function.name.clone(),
            args,
        });
    }
    let mut plan = FusionPlan {
        app_id,
        calls,
        rationale: rationale.join("\n"),
    };
    validate_plan(&mut plan, library)?;
    Ok(plan)
}

/// Checks that every call names a known function of the plan's app and
/// that its arguments fit the schema; arguments are canonicalized in place.
pub fn validate_plan(plan: &mut FusionPlan, library: &FunctionLibrary) -> Result<(), FusionError> {
    for (index, call) in plan.calls.iter_mut().enumerate() {
        let f = library
            .get(&call.function)
            .ok_or_else(|| FusionError::UnknownFunction(call.function.clone()))?;
        if f.app_id != plan.app_id {
            return Err(FusionError::CrossApp {
                function: f.name.clone(),
                expected: plan.app_id.clone(),
                found: f.app_id.clone(),
            });
        }
        call.args = check_args(&f.params, &call.args).map_err(|source| FusionError::InvalidArgs {
            index,
            function: f.name.clone(),
            source,
        })?;
    }
    Ok(())
}

fn route_prompt(task: &str, library: &FunctionLibrary) -> String {
    let mut out = String::from(
        "### Role\nYou plan mobile-app tasks by combining learned functions.\n\n### Functions\n",
    );
    for f in library.iter() {
        out.push_str(&format!("- {} [app {}]: {}\n", f.signature(), f.app_id, f.description));
    }
    out.push_str(&format!(
        "\n### Task\n{task}\n\n### Output\nReply with JSON only: {{\"calls\": [{{\"function\": name, \"args\": {{param: value}}}}], \"rationale\": text}}. Calls run in order on one app.\n"
    ));
    out
}

#[derive(Deserialize)]
struct LlmPlan {
    calls: Vec<PlannedCall>,
    #[serde(default)]
    rationale: String,
}

fn parse_llm_plan(text: &str, library: &FunctionLibrary) -> Result<FusionPlan, String> {
    let raw: LlmPlan = serde_json::from_str(strip_fences(text).trim()).map_err(|e| format!("unparseable plan: {e}"))?;
    let first = raw.calls.first().ok_or("plan has no calls")?;
    let app_id = library
        .get(&first.function)
        .map(|f| f.app_id.clone())
        .ok_or_else(|| format!("unknown function `{}`", first.function))?;
    let mut plan = FusionPlan {
        app_id,
        calls: raw.calls,
        rationale: raw.rationale,
    };
    validate_plan(&mut plan, library).map_err(|e| e.to_string())?;
    Ok(plan)
}

/// Routes with an explicit backend for the `llm` mode. An llm answer that
/// does not parse or validate is replaced by the deterministic plan, so the
/// result is always a validated plan.
pub fn route_with(
    task: &str,
    library: &FunctionLibrary,
    config: &RouterConfig,
    backend: &dyn TextBackend,
) -> Result<FusionPlan, FusionError> {
    if library.is_empty() {
        return Err(FusionError::LibraryEmpty);
    }
    if config.mode == RouteMode::Llm {
        let prompt = route_prompt(task, library);
        let reply = backend.complete(&TextRequest {
            prompt: &prompt,
            purpose: TextPurpose::Route { task },
            attempt: 0,
        });
        let problem = match reply {
            Ok(text) => match parse_llm_plan(&text, library) {
                Ok(plan) => return Ok(plan),
                Err(p) => p,
            },
            Err(e) => e.to_string(),
        };
        let mut plan = deterministic_route(task, library, config.floor)?;
        plan.rationale = format!("llm plan rejected ({problem}); deterministic routing used\n{}", plan.rationale);
        return Ok(plan);
    }
    deterministic_route(task, library, config.floor)
}

pub fn route(task: &str, library: &FunctionLibrary, config: &RouterConfig) -> Result<FusionPlan, FusionError> {
    let backend = config.llm.build_backend();
    route_with(task, library, config, backend.as_ref())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallOutcome {
    pub function: String,
    pub args: BTreeMap<String, String>,
    pub succeeded: bool,
    /// Primitive calls this call completed.
    pub steps: usize,
}

#[derive(Debug, Error)]
#[error("call {} to `{function}` failed: {error}", .call_index + 1)]
pub struct PlanFailure {
    pub call_index: usize,
    pub function: String,
    pub error: RunError,
}

#[derive(Debug)]
pub struct TaskOutcome {
    pub calls: Vec<CallOutcome>,
    pub failure: Option<PlanFailure>,
    pub final_state: SimState,
}

impl TaskOutcome {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

/// Runs the plan's calls in order on one session started from `reset`. A
/// failing call stops the plan; the trace keeps everything done before it.
/// `config.budget` bounds the whole plan.
pub fn execute_plan(
    plan: &FusionPlan,
    library: &FunctionLibrary,
    app: &Arc<AppSpec>,
    config: &InterpretConfig,
) -> Result<(TaskOutcome, Vec<TraceEntry>), FusionError> {
    let mut plan = plan.clone();
    validate_plan(&mut plan, library)?;
    if !plan.calls.is_empty() && plan.app_id != app.app_id {
        return Err(FusionError::CrossApp {
            function: plan.calls[0].function.clone(),
            expected: app.app_id.clone(),
            found: plan.app_id.clone(),
        });
    }
    let mut state = reset(app);
    let mut entries: Vec<TraceEntry> = Vec::new();
    let mut calls = Vec::new();
    let mut failure = None;
    for (index, call) in plan.calls.iter().enumerate() {
        let f = library.get(&call.function).expect("validated");
        let cfg = InterpretConfig {
            budget: config.budget.saturating_sub(entries.len()),
            ..config.clone()
        };
        let result = interpret(&f.script, &f.name, &call.args, state, &cfg);
        let (trace, error) = match result {
            Ok(trace) => (trace, None),
            Err(fail) => (fail.trace, Some(fail.error)),
        };
        calls.push(CallOutcome {
            function: call.function.clone(),
            args: call.args.clone(),
            succeeded: error.is_none(),
            steps: trace.entries.len(),
        });
        entries.extend(trace.entries);
        state = trace.final_state;
        if let Some(error) = error {
            failure = Some(PlanFailure {
                call_index: index,
                function: call.function.clone(),
                error,
            });
            break;
        }
    }
    Ok((
        TaskOutcome {
            calls,
            failure,
            final_state: state,
        },
        entries,
    ))
}
