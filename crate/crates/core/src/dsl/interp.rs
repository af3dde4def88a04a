use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ActionScript, Arg, Call, Loc, ParamKind, ParamSlot, SelectorLit, Stmt, StmtKind, Value, DEFAULT_MAX_LOOP_BOUND};
use crate::mapping::{map_step, MappingConfig, MappingError, MappingResult, Selector};
use crate::sim::{apply_action, current_tree, Action, Outcome, ScrollDirection, SimError, SimState};
use crate::ui::exposed_texts;

pub const DEFAULT_BUDGET: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretConfig {
    /// Maximum number of primitive calls in one run.
    pub budget: usize,
    pub max_loop_bound: u64,
    pub mapping: MappingConfig,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        InterpretConfig {
            budget: DEFAULT_BUDGET,
            max_loop_bound: DEFAULT_MAX_LOOP_BOUND,
            mapping: MappingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub function: String,
    pub loc: Loc,
    pub primitive: String,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<MappingResult>,
    pub outcome: Outcome,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionTrace {
    pub entries: Vec<TraceEntry>,
    pub final_state: SimState,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("no function named `{0}`")]
    UnknownFunction(String),
    #[error("argument error: {0}")]
    ArgError(String),
    #[error("{loc}: could not map {selector}: {source}")]
    MappingFailed {
        loc: Loc,
        selector: Box<Selector>,
        #[source]
        source: MappingError,
    },
    #[error("step budget of {0} primitive calls exceeded")]
    BudgetExceeded(usize),
    #[error("{loc}: repeat count {count} exceeds the loop bound {bound}")]
    LoopBound { loc: Loc, count: u64, bound: u64 },
    #[error("{loc}: `{name}` is not bound")]
    UnboundName { loc: Loc, name: String },
    #[error("{loc}: {message}")]
    TypeError { loc: Loc, message: String },
    #[error("{loc}: `{0}` is not an allowed primitive", .name)]
    UnknownPrimitive { loc: Loc, name: String },
    #[error("{loc}: {source}")]
    Sim {
        loc: Loc,
        #[source]
        source: SimError,
    },
}

/// A failed run together with everything executed before the failure.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct RunFailure {
    pub error: RunError,
    pub trace: ExecutionTrace,
}

/// Validates call arguments against a parameter schema and returns them in
/// canonical form: missing values take the demonstrated default, choices are
/// matched case-insensitively and replaced by the listed spelling, integers
/// must parse.
pub fn check_args(schema: &[ParamSlot], args: &BTreeMap<String, String>) -> Result<BTreeMap<String, String>, RunError> {
    if let Some(extra) = args.keys().find(|k| !schema.iter().any(|s| &s.name == *k)) {
        return Err(RunError::ArgError(format!("unexpected argument `{extra}`")));
    }
    let mut out = BTreeMap::new();
    for slot in schema {
        let raw = args.get(&slot.name).unwrap_or(&slot.default_value).trim().to_string();
        let value = match slot.kind {
            ParamKind::Choice => slot
                .choices
                .iter()
                .find(|c| c.eq_ignore_ascii_case(&raw))
                .cloned()
                .ok_or_else(|| {
                    RunError::ArgError(format!("`{}` must be one of {:?}, got {raw:?}", slot.name, slot.choices))
                })?,
            ParamKind::Integer => raw
                .parse::<u64>()
                .map(|n| n.to_string())
                .map_err(|_| RunError::ArgError(format!("`{}` must be a non-negative integer, got {raw:?}", slot.name)))?,
            ParamKind::FreeText => raw,
        };
        out.insert(slot.name.clone(), value);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Rt {
    Str(String),
    Int(u64),
    List(Vec<String>),
}

struct Run<'a> {
    cfg: &'a InterpretConfig,
    function: String,
    params: &'a BTreeMap<String, String>,
    vars: BTreeMap<String, Rt>,
    state: SimState,
    entries: Vec<TraceEntry>,
}

impl Run<'_> {
    fn lookup(&self, name: &str, loc: Loc) -> Result<Rt, RunError> {
        if let Some(v) = self.vars.get(name) {
            return Ok(v.clone());
        }
        self.params
            .get(name)
            .map(|s| Rt::Str(s.clone()))
            .ok_or_else(|| RunError::UnboundName {
                loc,
                name: name.to_string(),
            })
    }

    fn eval(&self, v: &Value, loc: Loc) -> Result<Rt, RunError> {
        match v {
            Value::Str(s) => Ok(Rt::Str(s.clone())),
            Value::Int(n) => Ok(Rt::Int(*n)),
            Value::Ref(name) => self.lookup(name, loc),
        }
    }

    fn eval_string(&self, v: &Value, loc: Loc) -> Result<String, RunError> {
        match self.eval(v, loc)? {
            Rt::Str(s) => Ok(s),
            Rt::Int(n) => Ok(n.to_string()),
            Rt::List(_) => Err(RunError::TypeError {
                loc,
                message: "expected a string, found an expose list".into(),
            }),
        }
    }

    fn selector(&self, sel: &SelectorLit, loc: Loc) -> Result<Selector, RunError> {
        let field = |v: &Option<Value>| -> Result<String, RunError> {
            v.as_ref().map_or(Ok(String::new()), |v| self.eval_string(v, loc))
        };
        Ok(Selector {
            text: field(&sel.text)?,
            id: field(&sel.id)?,
            visual: field(&sel.visual)?,
            surrounding: sel.surrounding.clone().unwrap_or_default(),
        })
    }

    fn explain(&self, text: &str) -> String {
        let mut out = text.to_string();
        for (name, value) in self.params {
            out = out.replace(&format!("{{{name}}}"), value);
        }
        out
    }

    fn selector_arg<'c>(&self, call: &'c Call, loc: Loc) -> Result<&'c SelectorLit, RunError> {
        match call.args.first() {
            Some(Arg::Selector(sel)) => Ok(sel),
            _ => Err(RunError::TypeError {
                loc,
                message: format!("`{}` expects a selector", call.name),
            }),
        }
    }

    fn map(&self, sel: &SelectorLit, loc: Loc) -> Result<MappingResult, RunError> {
        let selector = self.selector(sel, loc)?;
        let tree = current_tree(&self.state);
        map_step(&selector, &tree, &self.cfg.mapping).map_err(|source| RunError::MappingFailed {
            loc,
            selector: Box::new(selector),
            source,
        })
    }

    fn call(&mut self, call: &Call, stmt: &Stmt) -> Result<(), RunError> {
        let loc = stmt.loc;
        if self.entries.len() >= self.cfg.budget {
            return Err(RunError::BudgetExceeded(self.cfg.budget));
        }
        let (action, mapping) = match call.name.as_str() {
            "clickAndGetExpose" => {
                let m = self.map(self.selector_arg(call, loc)?, loc)?;
                (Action::Click { target: m.index }, Some(m))
            }
            "type" => {
                let m = self.map(self.selector_arg(call, loc)?, loc)?;
                let text = match call.args.get(1) {
                    Some(Arg::Value(v)) => self.eval_string(v, loc)?,
                    _ => {
                        return Err(RunError::TypeError {
                            loc,
                            message: "`type` expects a text argument".into(),
                        })
                    }
                };
                (Action::Type { target: m.index, text }, Some(m))
            }
            "scrollAndGetExpose" => {
                let raw = match call.args.first() {
                    Some(Arg::Value(v)) => self.eval_string(v, loc)?,
                    _ => String::new(),
                };
                let direction: ScrollDirection = raw.parse().map_err(|_| RunError::TypeError {
                    loc,
                    message: format!("scroll direction must be \"up\" or \"down\", got {raw:?}"),
                })?;
                (Action::Scroll { direction }, None)
            }
            "enter" => (Action::Enter, None),
            "back" => (Action::Back, None),
            other => {
                return Err(RunError::UnknownPrimitive {
                    loc,
                    name: other.to_string(),
                })
            }
        };
        let (next, outcome) = apply_action(&self.state, &action).map_err(|source| RunError::Sim { loc, source })?;
        self.state = next;
        if let Some(bind) = &call.bind {
            self.vars
                .insert(bind.clone(), Rt::List(exposed_texts(&current_tree(&self.state))));
        }
        self.entries.push(TraceEntry {
            function: self.function.clone(),
            loc,
            primitive: call.name.clone(),
            action,
            mapping,
            outcome,
            explanation: self.explain(&stmt.explanation),
        });
        Ok(())
    }

    fn body(&mut self, body: &[Stmt]) -> Result<(), RunError> {
        for stmt in body {
            let loc = stmt.loc;
            match &stmt.kind {
                StmtKind::Call(call) => self.call(call, stmt)?,
                StmtKind::Let { name, value } => {
                    let v = self.eval(value, loc)?;
                    self.vars.insert(name.clone(), v);
                }
                StmtKind::If {
                    var,
                    needle,
                    then_body,
                    else_body,
                } => {
                    let haystack = match self.lookup(var, loc)? {
                        Rt::List(items) => items,
                        _ => {
                            return Err(RunError::TypeError {
                                loc,
                                message: format!("`{var}` does not hold exposed texts"),
                            })
                        }
                    };
                    let needle = self.eval_string(needle, loc)?;
                    if haystack.iter().any(|t| t.contains(&needle)) {
                        self.body(then_body)?;
                    } else {
                        self.body(else_body)?;
                    }
                }
                StmtKind::Repeat { count, body } => {
                    let n = match self.eval(count, loc)? {
                        Rt::Int(n) => n,
                        Rt::Str(s) => s.trim().parse::<u64>().map_err(|_| RunError::TypeError {
                            loc,
                            message: format!("repeat count {s:?} is not an integer"),
                        })?,
                        Rt::List(_) => {
                            return Err(RunError::TypeError {
                                loc,
                                message: "repeat count is an expose list".into(),
                            })
                        }
                    };
                    if n > self.cfg.max_loop_bound {
                        return Err(RunError::LoopBound {
                            loc,
                            count: n,
                            bound: self.cfg.max_loop_bound,
                        });
                    }
                    for _ in 0..n {
                        self.body(body)?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[allow(clippy::result_large_err)]
/// Runs `entry` from `state`. Arguments must name exactly the function's
/// parameters; use [`check_args`] first to validate them against a schema.
pub fn interpret(
    script: &ActionScript,
    entry: &str,
    args: &BTreeMap<String, String>,
    state: SimState,
    cfg: &InterpretConfig,
) -> Result<ExecutionTrace, RunFailure> {
    let fail = |error, state| RunFailure {
        error,
        trace: ExecutionTrace {
            entries: Vec::new(),
            final_state: state,
        },
    };
    let Some(function) = script.function(entry) else {
        return Err(fail(RunError::UnknownFunction(entry.to_string()), state));
    };
    if let Some(missing) = function.params.iter().find(|p| !args.contains_key(*p)) {
        return Err(fail(RunError::ArgError(format!("missing argument `{missing}`")), state));
    }
    if let Some(extra) = args.keys().find(|k| !function.params.contains(k)) {
        return Err(fail(RunError::ArgError(format!("unexpected argument `{extra}`")), state));
    }
    let mut run = Run {
        cfg,
        function: entry.to_string(),
        params: args,
        vars: BTreeMap::new(),
        state,
        entries: Vec::new(),
    };
    let result = run.body(&function.body);
    let trace = ExecutionTrace {
        entries: run.entries,
        final_state: run.state,
    };
    match result {
        Ok(()) => Ok(trace),
        Err(error) => Err(RunFailure { error, trace }),
    }
}
