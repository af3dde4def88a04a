//! Turning an encoded demonstration into a checked, parameterized script.
//!
//! A [`TextBackend`] produces script text from a prompt. [`generate`] parses
//! and checks whatever comes back and retries with the diagnostics appended
//! until the script is valid or the retry budget runs out, so no unchecked
//! script ever leaves this module. [`deterministic_generate`] is the offline
//! generator behind the stub backend.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use crate::dsl::{ApiSpec, ParamKind, ParamSlot};
use crate::dsl::{
    check, parse_script, pretty_print, ActionScript, Arg, Call, CheckLimits, FunctionDef, Loc, ScriptFile,
    ScriptHeader, SelectorLit, Stmt, StmtKind, Value,
};
use crate::encoder::{EncodedDemo, EncodedStep};
use crate::sim::{ActionKind, AppMeta, AppSpec};
use crate::text::{is_stopword, numeral_value, words};

/// Variable that holds the texts returned by `*AndGetExpose` calls in
/// generated code.
pub const EXPOSE_VAR: &str = "exposed";

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("demonstration has no steps")]
    EmptyDemonstration,
    #[error("demonstration belongs to app {demo:?}, not {app:?}")]
    AppMismatch { demo: String, app: String },
    #[error("generation failed after {attempts} attempt(s): {}", .diagnostics.join("; "))]
    GenerationFailed { attempts: usize, diagnostics: Vec<String> },
    #[error("text backend unavailable: {0}")]
    BackendUnavailable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSection {
    pub name: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub sections: Vec<PromptSection>,
    pub rendered: String,
}

pub const PROMPT_SECTIONS: [&str; 5] = ["Role", "Skills", "Constraints", "Tool Description", "Operation Sequence"];

fn quoted(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn quoted_list(items: &[String]) -> String {
    serde_json::to_string(items).expect("list serializes")
}

/// Builds the five-section generation prompt. Pure: identical inputs give
/// byte-identical output.
pub fn build_prompt(encoded: &EncodedDemo, api: &ApiSpec, meta: &AppMeta) -> Result<PromptBundle, CodegenError> {
    if encoded.steps.is_empty() {
        return Err(CodegenError::EmptyDemonstration);
    }
    let role = format!(
        "You are an automation engineer for the mobile app {}{}. You turn one recorded demonstration into a reusable, parameterized automation function written in a small action language.",
        quoted(&meta.app_name),
        if meta.description.is_empty() {
            String::new()
        } else {
            format!(" ({})", meta.description)
        }
    );
    let skills = [
        "- Reading encoded demonstration steps: action type, element text, resource id, visual description, surrounding texts and the texts exposed on the screen.",
        "- Writing functions in the action language using only the provided primitives.",
        "- Recognizing consecutive repeated steps and expressing them as `repeat N { ... }` loops.",
        "- Recognizing values picked from on-screen lists or typed as numbers and turning them into function parameters.",
        "- Checking what a screen exposes with `if contains(var, value) { ... } else { ... }` before acting.",
    ]
    .join("\n");
    let constraints = [
        "- Call only the functions listed under Tool Description; any other call is rejected.".to_string(),
        "- Write exactly one function: `fn name(param, ...) { ... }`.".to_string(),
        "- Put a `# comment` on the line directly above every call. It explains the step and names the element's text or visual description.".to_string(),
        "- Select elements with `sel(text=..., id=..., visual=..., surrounding=[...])` and give at least one field.".to_string(),
        format!(
            "- `repeat` counts are integer literals from 1 to {} or a parameter.",
            crate::dsl::DEFAULT_MAX_LOOP_BOUND
        ),
        "- Output only the code, without prose or Markdown fences.".to_string(),
    ]
    .join("\n");
    let tools = api
        .primitives
        .iter()
        .map(|p| format!("- `{}`: {}", p.signature, p.description))
        .collect::<Vec<_>>()
        .join("\n");
    let mut ops = String::new();
    let _ = writeln!(ops, "Task: {}", encoded.instruction);
    let _ = writeln!(ops, "App: {}", encoded.app_id);
    let _ = write!(ops, "Demonstrated steps:");
    for (k, s) in encoded.steps.iter().enumerate() {
        let _ = write!(
            ops,
            "\n{}. action={} screen={} text={} id={} visual={}",
            k + 1,
            s.action_type,
            quoted(&s.screen),
            quoted(&s.text),
            quoted(&s.id),
            quoted(&s.visual)
        );
        if let Some(t) = &s.typed_text {
            let _ = write!(ops, " typed={}", quoted(t));
        }
        if let Some(d) = &s.scroll_direction {
            let _ = write!(ops, " direction={d}");
        }
        let _ = write!(ops, "\n   surrounding: {}", quoted_list(&s.surrounding));
        let _ = write!(ops, "\n   exposed: {}", quoted_list(&s.exposed));
    }
    let bodies = [role, skills, constraints, tools, ops];
    let sections: Vec<PromptSection> = PROMPT_SECTIONS
        .iter()
        .zip(bodies)
        .map(|(name, body)| PromptSection {
            name: name.to_string(),
            body,
        })
        .collect();
    let rendered = sections
        .iter()
        .map(|s| format!("### {}\n{}\n", s.name, s.body))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(PromptBundle { sections, rendered })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepGroup<T> {
    Step(T),
    Repeat { count: usize, body: Vec<T> },
}

/// Replaces maximal tandem repeats with `Repeat` groups. At each position
/// the repeat covering the most items wins, ties going to the shortest
/// period; scanning then resumes after it.
pub fn compress_by<T: Clone, K: PartialEq>(items: &[T], key: impl Fn(&T) -> K) -> Vec<StepGroup<T>> {
    let keys: Vec<K> = items.iter().map(&key).collect();
    let n = items.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let mut best: Option<(usize, usize)> = None;
        for period in 1..=(n - i) / 2 {
            let mut count = 1;
            while i + (count + 1) * period <= n
                && (0..period).all(|j| keys[i + j] == keys[i + count * period + j])
            {
                count += 1;
            }
            if count >= 2 && best.is_none_or(|(bp, bc)| period * count > bp * bc) {
                best = Some((period, count));
            }
        }
        match best {
            Some((period, count)) => {
                out.push(StepGroup::Repeat {
                    count,
                    body: items[i..i + period].to_vec(),
                });
                i += period * count;
            }
            None => {
                out.push(StepGroup::Step(items[i].clone()));
                i += 1;
            }
        }
    }
    out
}

pub fn expand<T: Clone>(groups: &[StepGroup<T>]) -> Vec<T> {
    let mut out = Vec::new();
    for g in groups {
        match g {
            StepGroup::Step(t) => out.push(t.clone()),
            StepGroup::Repeat { count, body } => {
                for _ in 0..*count {
                    out.extend(body.iter().cloned());
                }
            }
        }
    }
    out
}

/// Everything about a step except the exposed texts: two steps with equal
/// keys replay identically.
pub fn loop_key(step: &EncodedStep) -> EncodedStep {
    EncodedStep {
        exposed: Vec::new(),
        ..step.clone()
    }
}

pub fn compress_loops(steps: &[EncodedStep]) -> Vec<StepGroup<EncodedStep>> {
    compress_by(steps, loop_key)
}

#[derive(Debug, Clone, Default)]
struct ParamPlan {
    slots: Vec<ParamSlot>,
    /// Step index → slot name.
    uses: BTreeMap<usize, String>,
}

fn identifier(raw: &str, fallback: &str) -> String {
    let joined = words(raw).join("_");
    const RESERVED: &[&str] = &["fn", "let", "if", "else", "repeat", "contains", "sel", EXPOSE_VAR];
    if joined.is_empty() || joined.starts_with(|c: char| c.is_ascii_digit()) || RESERVED.contains(&joined.as_str()) {
        fallback.to_string()
    } else {
        joined
    }
}

fn integer_slot_name(id: &str) -> String {
    let mut base = id.to_string();
    for suffix in ["_input", "_field", "_box", "_edit", "_text", "_entry"] {
        if let Some(stripped) = base.strip_suffix(suffix) {
            base = stripped.to_string();
            break;
        }
    }
    identifier(&base, "number")
}

fn plan_params(encoded: &EncodedDemo, app: &AppSpec) -> ParamPlan {
    let mut plan = ParamPlan::default();
    for (i, step) in encoded.steps.iter().enumerate() {
        let candidate = match step.action_type {
            ActionKind::Click if !step.text.trim().is_empty() => app
                .screen(&step.screen)
                .and_then(|s| s.list_region())
                .and_then(|region| {
                    let labels = app.list_labels(&region.source);
                    (labels.len() >= 2 && labels.contains(&step.text)).then(|| {
                        let name = region.param.clone().unwrap_or_else(|| region.source.clone());
                        (identifier(&name, "choice"), ParamKind::Choice, labels, step.text.clone())
                    })
                }),
            ActionKind::Type => step
                .typed_text
                .as_deref()
                .and_then(|t| t.trim().parse::<u64>().ok())
                .map(|n| (integer_slot_name(&step.id), ParamKind::Integer, Vec::new(), n.to_string())),
            _ => None,
        };
        let Some((name, kind, choices, value)) = candidate else {
            continue;
        };
        match plan.slots.iter().find(|s| s.name == name) {
            // Same slot used again with the same value: reuse the parameter.
            Some(existing) if existing.kind == kind && existing.default_value == value => {
                plan.uses.insert(i, name);
            }
            // Name taken by a different value or kind: leave the step literal.
            Some(_) => {}
            None => {
                plan.slots.push(ParamSlot {
                    name: name.clone(),
                    kind,
                    choices,
                    source_step_index: i,
                    default_value: value,
                });
                plan.uses.insert(i, name);
            }
        }
    }
    plan
}

/// Parameters implied by the demonstration: a choice slot for each click
/// on a list item, an integer slot for each typed number.
pub fn extract_params(encoded: &EncodedDemo, app: &AppSpec) -> Vec<ParamSlot> {
    plan_params(encoded, app).slots
}

/// Replaces whole-word, case-insensitive occurrences of `needle`.
fn replace_words(haystack: &str, needle: &str, replacement: &str) -> String {
    if needle.is_empty() {
        return haystack.to_string();
    }
    let lower = haystack.to_lowercase();
    let target = needle.to_lowercase();
    // Lowercasing may change byte lengths outside ASCII; fall back to no-op.
    if lower.len() != haystack.len() || target.len() != needle.len() {
        return haystack.to_string();
    }
    let boundary = |s: &str, at: usize| -> bool {
        s[..at].chars().next_back().is_none_or(|c| !c.is_alphanumeric())
            && s[at + target.len()..].chars().next().is_none_or(|c| !c.is_alphanumeric())
    };
    let mut out = String::new();
    let mut pos = 0;
    while let Some(found) = lower[pos..].find(&target) {
        let at = pos + found;
        if boundary(&lower, at) {
            out.push_str(&haystack[pos..at]);
            out.push_str(replacement);
        } else {
            out.push_str(&haystack[pos..at + target.len()]);
        }
        pos = at + target.len();
    }
    out.push_str(&haystack[pos..]);
    out
}

/// Instruction with demonstrated parameter values replaced by `{name}`.
fn instruction_template(instruction: &str, slots: &[ParamSlot]) -> String {
    let mut sorted: Vec<&ParamSlot> = slots.iter().collect();
    sorted.sort_by_key(|s| std::cmp::Reverse(s.default_value.len()));
    sorted.iter().fold(instruction.to_string(), |acc, s| {
        replace_words(&acc, &s.default_value, &format!("{{{}}}", s.name))
    })
}

/// Function name from the instruction: parameter values become parameter
/// names, stopwords and numerals are dropped, at most four words are kept.
pub fn function_name(instruction: &str, slots: &[ParamSlot]) -> String {
    let template = instruction_template(instruction, slots);
    let mut seen = BTreeSet::new();
    let parts: Vec<String> = template
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !is_stopword(w) && numeral_value(w).is_none())
        .filter(|w| seen.insert(w.clone()))
        .take(4)
        .collect();
    identifier(&parts.join(" "), "task")
}

fn call(name: &str, args: Vec<Arg>, bind: Option<&str>, explanation: String) -> Stmt {
    Stmt::new(
        StmtKind::Call(Call {
            name: name.to_string(),
            args,
            bind: bind.map(str::to_string),
        }),
        explanation,
    )
}

fn str_or_none(s: &str) -> Option<Value> {
    (!s.trim().is_empty()).then(|| Value::Str(s.to_string()))
}

fn literal_selector(step: &EncodedStep, include_text: bool) -> SelectorLit {
    let ambiguous = !step.visual.trim().is_empty();
    let mut sel = SelectorLit {
        text: if include_text { str_or_none(&step.text) } else { None },
        id: str_or_none(&step.id),
        visual: str_or_none(&step.visual),
        surrounding: (ambiguous && !step.surrounding.is_empty()).then(|| step.surrounding.clone()),
    };
    if sel.is_empty() {
        sel.text = str_or_none(&step.text);
    }
    sel
}

/// Short human label for a step's target: text, else visual, else id.
fn target_label(step: &EncodedStep, sel: &SelectorLit) -> String {
    let show = |v: &Option<Value>| match v {
        Some(Value::Str(s)) => Some(s.clone()),
        Some(Value::Ref(r)) => Some(format!("{{{r}}}")),
        _ => None,
    };
    show(&sel.text)
        .or_else(|| show(&sel.visual))
        .or_else(|| show(&sel.id))
        .unwrap_or_else(|| step.text.clone())
}

struct Renderer<'a> {
    app: &'a AppSpec,
    plan: &'a ParamPlan,
    fragment: String,
}

impl Renderer<'_> {
    fn explain(&self, k: usize, what: &str) -> String {
        format!("Step {k}: {what} — {}", self.fragment)
    }

    /// Pages to search beyond the first when clicking a choice on `screen`.
    fn search_pages(&self, screen: &str) -> usize {
        self.app
            .screen(screen)
            .and_then(|s| s.list_region())
            .map(|r| {
                let len = self.app.list_labels(&r.source).len();
                len.div_ceil(r.window.max(1)).saturating_sub(1)
            })
            .unwrap_or(0)
    }

    fn step(&self, i: usize, step: &EncodedStep) -> Vec<Stmt> {
        let k = i + 1;
        let slot = self.plan.uses.get(&i);
        match step.action_type {
            ActionKind::Click => {
                let mut out = Vec::new();
                let sel = match slot {
                    Some(name) => {
                        let pages = self.search_pages(&step.screen);
                        if pages > 0 {
                            out.push(call(
                                "scrollAndGetExpose",
                                vec![Arg::Value(Value::Str("up".into()))],
                                Some(EXPOSE_VAR),
                                self.explain(k, &format!("scroll the list to the top before looking for '{{{name}}}'")),
                            ));
                            let down = call(
                                "scrollAndGetExpose",
                                vec![Arg::Value(Value::Str("down".into()))],
                                Some(EXPOSE_VAR),
                                self.explain(k, &format!("scroll down while '{{{name}}}' is not visible")),
                            );
                            out.push(Stmt::new(
                                StmtKind::Repeat {
                                    count: Value::Int(pages as u64),
                                    body: vec![Stmt::new(
                                        StmtKind::If {
                                            var: EXPOSE_VAR.into(),
                                            needle: Value::Ref(name.clone()),
                                            then_body: Vec::new(),
                                            else_body: vec![down],
                                        },
                                        "",
                                    )],
                                },
                                self.explain(k, &format!("page through the list until '{{{name}}}' is exposed")),
                            ));
                        }
                        SelectorLit {
                            text: Some(Value::Ref(name.clone())),
                            id: str_or_none(&step.id),
                            visual: None,
                            surrounding: None,
                        }
                    }
                    None => literal_selector(step, true),
                };
                let label = target_label(step, &sel);
                out.push(call(
                    "clickAndGetExpose",
                    vec![Arg::Selector(sel)],
                    None,
                    self.explain(k, &format!("click '{label}'")),
                ));
                out
            }
            ActionKind::Type => {
                // A field's text is its current content, not a label, so
                // prefer the id when there is one.
                let sel = literal_selector(step, step.id.trim().is_empty());
                let label = target_label(step, &sel);
                let (value, shown) = match slot {
                    Some(name) => (Value::Ref(name.clone()), format!("{{{name}}}")),
                    None => {
                        let t = step.typed_text.clone().unwrap_or_default();
                        (Value::Str(t.clone()), t)
                    }
                };
                vec![call(
                    "type",
                    vec![Arg::Selector(sel), Arg::Value(value)],
                    None,
                    self.explain(k, &format!("type '{shown}' into '{label}'")),
                )]
            }
            ActionKind::Scroll => {
                let dir = step.scroll_direction.map(|d| d.to_string()).unwrap_or_else(|| "down".into());
                vec![call(
                    "scrollAndGetExpose",
                    vec![Arg::Value(Value::Str(dir.clone()))],
                    Some(EXPOSE_VAR),
                    self.explain(k, &format!("scroll {dir}")),
                )]
            }
            ActionKind::Enter => vec![call("enter", vec![], None, self.explain(k, "press enter to submit the field"))],
            ActionKind::Back => vec![call("back", vec![], None, self.explain(k, "go back to the previous screen"))],
        }
    }
}

/// The script the stub backend returns: one function whose body is the
/// loop-compressed demonstration, with parameter references for list
/// choices and typed numbers and a comment above every call.
pub fn deterministic_script(encoded: &EncodedDemo, app: &AppSpec) -> (ActionScript, Vec<ParamSlot>) {
    let plan = plan_params(encoded, app);
    let renderer = Renderer {
        app,
        plan: &plan,
        fragment: instruction_template(&encoded.instruction, &plan.slots),
    };
    // A parameterized list click searches the list itself, so scrolls the
    // demonstrator made just before it on the same screen are dropped.
    let mut dropped = BTreeSet::new();
    for &i in plan.uses.keys() {
        let step = &encoded.steps[i];
        if step.action_type != ActionKind::Click || renderer.search_pages(&step.screen) == 0 {
            continue;
        }
        let mut j = i;
        while j > 0 && encoded.steps[j - 1].action_type == ActionKind::Scroll && encoded.steps[j - 1].screen == step.screen {
            j -= 1;
            dropped.insert(j);
        }
    }
    let kept: Vec<(usize, &EncodedStep)> =
        encoded.steps.iter().enumerate().filter(|(i, _)| !dropped.contains(i)).collect();
    let groups = compress_by(&kept, |(i, s)| (loop_key(s), plan.uses.get(i).cloned()));
    let mut body = Vec::new();
    for group in groups {
        match group {
            StepGroup::Step((i, s)) => body.extend(renderer.step(i, s)),
            StepGroup::Repeat { count, body: items } => {
                let first = items[0].0 + 1;
                let inner: Vec<Stmt> = items.iter().flat_map(|(i, s)| renderer.step(*i, s)).collect();
                body.push(Stmt::new(
                    StmtKind::Repeat {
                        count: Value::Int(count as u64),
                        body: inner,
                    },
                    format!("Steps {first}-{}: the same action repeated {count} times — {}", first + items.len() * count - 1, renderer.fragment),
                ));
            }
        }
    }
    let function = FunctionDef {
        name: function_name(&encoded.instruction, &plan.slots),
        params: plan.slots.iter().map(|s| s.name.clone()).collect(),
        body,
        loc: Loc::default(),
    };
    (
        ActionScript {
            functions: vec![function],
        },
        plan.slots,
    )
}

/// Canonical text of [`deterministic_script`]; byte-stable.
pub fn deterministic_generate(encoded: &EncodedDemo, app: &AppSpec) -> String {
    pretty_print(&deterministic_script(encoded, app).0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedScript {
    pub demo_id: String,
    pub app_id: String,
    pub instruction: String,
    /// Text as returned by the backend.
    pub raw_text: String,
    pub function_name: String,
    pub params: Vec<ParamSlot>,
    pub ast: ActionScript,
    pub explanations_per_call: Vec<String>,
    pub attempts: usize,
}

impl GeneratedScript {
    pub fn script_file(&self) -> ScriptFile {
        ScriptFile {
            header: ScriptHeader {
                demo_id: self.demo_id.clone(),
                app_id: self.app_id.clone(),
                function: self.function_name.clone(),
                instruction: self.instruction.clone(),
                params: self.params.clone(),
            },
            script: self.ast.clone(),
        }
    }
}

pub fn call_explanations(script: &ActionScript) -> Vec<String> {
    fn walk(body: &[Stmt], out: &mut Vec<String>) {
        for s in body {
            match &s.kind {
                StmtKind::Call(_) => out.push(s.explanation.clone()),
                StmtKind::If {
                    then_body, else_body, ..
                } => {
                    walk(then_body, out);
                    walk(else_body, out);
                }
                StmtKind::Repeat { body, .. } => walk(body, out),
                StmtKind::Let { .. } => {}
            }
        }
    }
    let mut out = Vec::new();
    for f in &script.functions {
        walk(&f.body, &mut out);
    }
    out
}

/// What a prompt is for, so offline backends can answer without a model.
#[derive(Clone, Copy)]
pub enum TextPurpose<'a> {
    Generate { encoded: &'a EncodedDemo, app: &'a AppSpec },
    Route { task: &'a str },
}

#[derive(Clone, Copy)]
pub struct TextRequest<'a> {
    pub prompt: &'a str,
    pub purpose: TextPurpose<'a>,
    /// 0 for the first attempt.
    pub attempt: usize,
}

/// Anything that turns a prompt into text.
pub trait TextBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &TextRequest<'_>) -> Result<String, CodegenError>;
}

/// Offline backend: ignores the prompt and returns [`deterministic_generate`].
/// It cannot route; routers fall back to their deterministic mode.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubBackend;

impl TextBackend for StubBackend {
    fn name(&self) -> &str {
        "deterministic_stub"
    }

    fn complete(&self, request: &TextRequest<'_>) -> Result<String, CodegenError> {
        match request.purpose {
            TextPurpose::Generate { encoded, app } => Ok(deterministic_generate(encoded, app)),
            TextPurpose::Route { .. } => Err(CodegenError::BackendUnavailable(
                "the deterministic stub does not route tasks".into(),
            )),
        }
    }
}

/// Chat-completions style HTTP backend with a single user message.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
    pub api_key: Option<String>,
}

/// Takes the first fenced code block if there is one.
pub fn strip_fences(text: &str) -> String {
    if let Some(start) = text.find("```") {
        let after = &text[start + 3..];
        let body_start = after.find('\n').map_or(after.len(), |n| n + 1);
        let body = &after[body_start..];
        if let Some(end) = body.find("```") {
            return body[..end].to_string();
        }
    }
    text.to_string()
}

impl TextBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn complete(&self, request: &TextRequest<'_>) -> Result<String, CodegenError> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut request = agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| CodegenError::BackendUnavailable(e.to_string()))?;
        let reply: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| CodegenError::BackendUnavailable(e.to_string()))?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(strip_fences)
            .ok_or_else(|| CodegenError::BackendUnavailable("reply has no choices[0].message.content".into()))
    }
}

/// Wraps a backend and corrupts a seeded fraction of its outputs, half of
/// them so the checker rejects them and half so they check but fail at run
/// time. Used to measure how failures surface.
pub struct FaultInjectingBackend {
    pub inner: Box<dyn TextBackend>,
    pub rate: f64,
    pub seed: u64,
}

pub(crate) fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl TextBackend for FaultInjectingBackend {
    fn name(&self) -> &str {
        "fault_injecting"
    }

    fn complete(&self, request: &TextRequest<'_>) -> Result<String, CodegenError> {
        let text = self.inner.complete(request)?;
        let TextPurpose::Generate { encoded, .. } = request.purpose else {
            return Ok(text);
        };
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[
            &self.seed.to_le_bytes(),
            encoded.demo_id.as_bytes(),
            &(request.attempt as u64).to_le_bytes(),
        ]));
        if rng.random::<f64>() >= self.rate {
            return Ok(text);
        }
        if rng.random::<bool>() {
            // Syntactically valid, but calls a primitive that does not exist.
            Ok(text.replacen("clickAndGetExpose(", "swipe(", 1))
        } else {
            // Checks fine, but the last click targets an element no screen has.
            let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
            if let Some(line) = lines.iter_mut().rev().find(|l| l.contains("clickAndGetExpose(sel(")) {
                let indent: String = line.chars().take_while(|c| c.is_whitespace()).collect();
                let bind = line.trim_start().split_once("clickAndGetExpose(").map(|(b, _)| b.to_string()).unwrap_or_default();
                *line = format!("{indent}{bind}clickAndGetExpose(sel(text=\"Missing Element\", id=\"missing_element\"))");
            }
            let mut out = lines.join("\n");
            out.push('\n');
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    DeterministicStub,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultConfig {
    pub rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub backend: BackendKind,
    pub model: String,
    pub temperature: f64,
    pub max_retries: usize,
    pub endpoint: String,
    pub timeout_ms: u64,
    /// Environment variable holding the remote API key.
    pub api_key_env: String,
    /// When set, generations are corrupted at this rate.
    pub fault: Option<FaultConfig>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            backend: BackendKind::DeterministicStub,
            model: "gpt-4o-mini".into(),
            temperature: 0.0,
            max_retries: 2,
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            timeout_ms: 60_000,
            api_key_env: "EBC_API_KEY".into(),
            fault: None,
        }
    }
}

impl LlmConfig {
    pub fn build_backend(&self) -> Box<dyn TextBackend> {
        let base: Box<dyn TextBackend> = match self.backend {
            BackendKind::DeterministicStub => Box::new(StubBackend),
            BackendKind::Remote => Box::new(RemoteBackend {
                endpoint: self.endpoint.clone(),
                model: self.model.clone(),
                temperature: self.temperature,
                timeout: Duration::from_millis(self.timeout_ms),
                api_key: std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty()),
            }),
        };
        match self.fault {
            Some(f) => Box::new(FaultInjectingBackend {
                inner: base,
                rate: f.rate,
                seed: f.seed,
            }),
            None => base,
        }
    }
}

/// Problems with one candidate script, empty when it is acceptable.
fn validate(text: &str, api: &ApiSpec, slots: &[ParamSlot]) -> Result<ActionScript, Vec<String>> {
    let ast = parse_script(text).map_err(|e| vec![e.to_string()])?;
    let mut problems: Vec<String> = check(&ast, api, CheckLimits::default())
        .iter()
        .map(ToString::to_string)
        .collect();
    if ast.functions.len() > 1 {
        problems.push(format!("expected one function, found {}", ast.functions.len()));
    }
    if let Some(f) = ast.functions.first() {
        let want: Vec<&str> = slots.iter().map(|s| s.name.as_str()).collect();
        if f.params.iter().map(String::as_str).collect::<Vec<_>>() != want {
            problems.push(format!("function parameters {:?} must be {:?}", f.params, want));
        }
    }
    if problems.is_empty() {
        Ok(ast)
    } else {
        Err(problems)
    }
}

/// Generates and validates a script with the given backend, retrying up to
/// `config.max_retries` times with the diagnostics appended to the prompt.
pub fn generate_with(
    encoded: &EncodedDemo,
    api: &ApiSpec,
    app: &AppSpec,
    config: &LlmConfig,
    backend: &dyn TextBackend,
) -> Result<GeneratedScript, CodegenError> {
    if encoded.app_id != app.app_id {
        return Err(CodegenError::AppMismatch {
            demo: encoded.app_id.clone(),
            app: app.app_id.clone(),
        });
    }
    let prompt = build_prompt(encoded, api, &app.meta)?;
    let slots = extract_params(encoded, app);
    let mut current = prompt.rendered.clone();
    let mut problems = Vec::new();
    for attempt in 0..=config.max_retries {
        let raw = backend.complete(&TextRequest {
            prompt: &current,
            purpose: TextPurpose::Generate { encoded, app },
            attempt,
        })?;
        match validate(&raw, api, &slots) {
            Ok(ast) => {
                let function_name = ast.functions[0].name.clone();
                return Ok(GeneratedScript {
                    demo_id: encoded.demo_id.clone(),
                    app_id: encoded.app_id.clone(),
                    instruction: encoded.instruction.clone(),
                    raw_text: raw,
                    function_name,
                    params: slots,
                    explanations_per_call: call_explanations(&ast),
                    ast,
                    attempts: attempt + 1,
                });
            }
            Err(found) => {
                problems = found;
                current = format!(
                    "{}\n### Diagnostics\nThe previous answer was rejected:\n{}\nReturn the corrected function.\n",
                    prompt.rendered,
                    problems.iter().map(|p| format!("- {p}")).collect::<Vec<_>>().join("\n")
                );
            }
        }
    }
    Err(CodegenError::GenerationFailed {
        attempts: config.max_retries + 1,
        diagnostics: problems,
    })
}

/// [`generate_with`] using the backend described by `config`.
pub fn generate(encoded: &EncodedDemo, api: &ApiSpec, app: &AppSpec, config: &LlmConfig) -> Result<GeneratedScript, CodegenError> {
    let backend = config.build_backend();
    generate_with(encoded, api, app, config, backend.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tandem_repeats() {
        let g = compress_by(&['A', 'B', 'A', 'B', 'A', 'B'], |c| *c);
        assert_eq!(g, vec![StepGroup::Repeat { count: 3, body: vec!['A', 'B'] }]);
        let g = compress_by(&['A', 'B', 'C'], |c| *c);
        assert_eq!(g, vec![StepGroup::Step('A'), StepGroup::Step('B'), StepGroup::Step('C')]);
        let g = compress_by(&['A', 'A', 'A', 'A'], |c| *c);
        assert_eq!(g, vec![StepGroup::Repeat { count: 4, body: vec!['A'] }]);
        let g = compress_by(&['C', 'A', 'A', 'B'], |c| *c);
        assert_eq!(
            g,
            vec![StepGroup::Step('C'), StepGroup::Repeat { count: 2, body: vec!['A'] }, StepGroup::Step('B')]
        );
    }

    #[test]
    fn word_replacement_respects_boundaries() {
        assert_eq!(replace_words("Order an Americano", "americano", "{drink}"), "Order an {drink}");
        assert_eq!(replace_words("for 2 guests and 22 nights", "2", "{g}"), "for {g} guests and 22 nights");
        assert_eq!(replace_words("Latte Lattes", "Latte", "X"), "X Lattes");
    }

    #[test]
    fn slot_names_from_ids() {
        assert_eq!(integer_slot_name("quantity_input"), "quantity");
        assert_eq!(integer_slot_name("guests_field"), "guests");
        assert_eq!(integer_slot_name(""), "number");
        assert_eq!(integer_slot_name("qty"), "qty");
    }

    #[test]
    fn fences_are_stripped() {
        assert_eq!(strip_fences("here:\n```ebc\nfn f() {}\n```\nbye"), "fn f() {}\n");
        assert_eq!(strip_fences("fn f() {}"), "fn f() {}");
    }
}
