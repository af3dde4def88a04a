//! The action language generated scripts are written in.
//!
//! A script is a set of functions whose bodies call five whitelisted
//! primitives, bind the exposed texts they return, branch on
//! `contains(...)` and repeat blocks. Every primitive call carries the
//! comment written directly above it as its explanation. The grammar is
//! documented in `docs/grammar.md`.

mod check;
mod interp;
mod parser;
mod printer;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use check::{check, CheckLimits, Diagnostic, DiagnosticKind};
pub use interp::{
    check_args, interpret, ExecutionTrace, InterpretConfig, RunError, RunFailure, TraceEntry, DEFAULT_BUDGET,
};
pub use parser::{parse_script, parse_script_file, SyntaxError};
pub use printer::{pretty_print, render_script_file};

pub const DEFAULT_MAX_LOOP_BOUND: u64 = 64;

/// Source position, 1-based. Ignored by [`ActionScript::structurally_eq`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Loc {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Loc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

/// A literal or a reference to a parameter or variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Value {
    Str(String),
    Int(u64),
    Ref(String),
}

impl Value {
    pub fn as_ref_name(&self) -> Option<&str> {
        match self {
            Value::Ref(name) => Some(name),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectorLit {
    pub text: Option<Value>,
    pub id: Option<Value>,
    pub visual: Option<Value>,
    pub surrounding: Option<Vec<String>>,
}

impl SelectorLit {
    /// True when no field could contribute to matching. Parameter
    /// references count as present.
    pub fn is_empty(&self) -> bool {
        let blank = |v: &Option<Value>| match v {
            None => true,
            Some(Value::Str(s)) => s.trim().is_empty(),
            Some(_) => false,
        };
        blank(&self.text)
            && blank(&self.id)
            && blank(&self.visual)
            && self.surrounding.as_ref().is_none_or(|s| s.iter().all(|t| t.trim().is_empty()))
    }

    fn refs(&self) -> impl Iterator<Item = &str> {
        [&self.text, &self.id, &self.visual]
            .into_iter()
            .filter_map(|v| v.as_ref().and_then(Value::as_ref_name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Arg {
    Selector(SelectorLit),
    Value(Value),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Call {
    pub name: String,
    pub args: Vec<Arg>,
    pub bind: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stmt", rename_all = "snake_case")]
pub enum StmtKind {
    Call(Call),
    If {
        var: String,
        needle: Value,
        then_body: Vec<Stmt>,
        else_body: Vec<Stmt>,
    },
    Repeat {
        count: Value,
        body: Vec<Stmt>,
    },
    Let {
        name: String,
        value: Value,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stmt {
    pub kind: StmtKind,
    /// The comment lines directly above the statement, joined by spaces.
    pub explanation: String,
    pub loc: Loc,
}

impl Stmt {
    pub fn new(kind: StmtKind, explanation: impl Into<String>) -> Self {
        Stmt {
            kind,
            explanation: explanation.into(),
            loc: Loc::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDef {
    pub name: String,
    pub params: Vec<String>,
    pub body: Vec<Stmt>,
    pub loc: Loc,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionScript {
    pub functions: Vec<FunctionDef>,
}

impl ActionScript {
    pub fn function(&self, name: &str) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| f.name == name)
    }

    /// Copy with every source location cleared.
    pub fn without_locations(&self) -> ActionScript {
        fn strip(body: &[Stmt]) -> Vec<Stmt> {
            body.iter()
                .map(|s| Stmt {
                    kind: match &s.kind {
                        StmtKind::If {
                            var,
                            needle,
                            then_body,
                            else_body,
                        } => StmtKind::If {
                            var: var.clone(),
                            needle: needle.clone(),
                            then_body: strip(then_body),
                            else_body: strip(else_body),
                        },
                        StmtKind::Repeat { count, body } => StmtKind::Repeat {
                            count: count.clone(),
                            body: strip(body),
                        },
                        other => other.clone(),
                    },
                    explanation: s.explanation.clone(),
                    loc: Loc::default(),
                })
                .collect()
        }
        ActionScript {
            functions: self
                .functions
                .iter()
                .map(|f| FunctionDef {
                    name: f.name.clone(),
                    params: f.params.clone(),
                    body: strip(&f.body),
                    loc: Loc::default(),
                })
                .collect(),
        }
    }

    /// Equality ignoring source locations.
    pub fn structurally_eq(&self, other: &ActionScript) -> bool {
        self.without_locations() == other.without_locations()
    }

    /// Number of primitive calls written in the source (loops not unrolled).
    pub fn call_count(&self) -> usize {
        fn count(body: &[Stmt]) -> usize {
            body.iter()
                .map(|s| match &s.kind {
                    StmtKind::Call(_) => 1,
                    StmtKind::If {
                        then_body, else_body, ..
                    } => count(then_body) + count(else_body),
                    StmtKind::Repeat { body, .. } => count(body),
                    StmtKind::Let { .. } => 0,
                })
                .sum()
        }
        self.functions.iter().map(|f| count(&f.body)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgKind {
    Selector,
    Value,
    Direction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Primitive {
    pub name: String,
    pub signature: String,
    pub description: String,
    pub args: Vec<ArgKind>,
    pub returns_expose: bool,
}

/// The primitives generated code may call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiSpec {
    pub primitives: Vec<Primitive>,
}

impl Default for ApiSpec {
    fn default() -> Self {
        let p = |name: &str, signature: &str, description: &str, args: Vec<ArgKind>, returns_expose| Primitive {
            name: name.into(),
            signature: signature.into(),
            description: description.into(),
            args,
            returns_expose,
        };
        ApiSpec {
            primitives: vec![
                p(
                    "clickAndGetExpose",
                    "clickAndGetExpose(selector) -> list[str]",
                    "Click the element matched by the selector and return the texts exposed on the resulting screen.",
                    vec![ArgKind::Selector],
                    true,
                ),
                p(
                    "type",
                    "type(selector, text) -> none",
                    "Type text into the editable element matched by the selector, replacing its content.",
                    vec![ArgKind::Selector, ArgKind::Value],
                    false,
                ),
                p(
                    "scrollAndGetExpose",
                    "scrollAndGetExpose(direction) -> list[str]",
                    "Scroll the list on the current screen \"up\" or \"down\" by one page and return the exposed texts.",
                    vec![ArgKind::Direction],
                    true,
                ),
                p(
                    "enter",
                    "enter() -> none",
                    "Submit the focused input field.",
                    vec![],
                    false,
                ),
                p(
                    "back",
                    "back() -> none",
                    "Navigate back to the previous screen.",
                    vec![],
                    false,
                ),
            ],
        }
    }
}

impl ApiSpec {
    pub fn primitive(&self, name: &str) -> Option<&Primitive> {
        self.primitives.iter().find(|p| p.name == name)
    }

    pub fn names(&self) -> BTreeSet<&str> {
        self.primitives.iter().map(|p| p.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Choice,
    Integer,
    FreeText,
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamKind::Choice => "choice",
            ParamKind::Integer => "integer",
            ParamKind::FreeText => "free_text",
        })
    }
}

/// A parameter of a generated function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<String>,
    pub source_step_index: usize,
    /// The value used in the demonstration.
    pub default_value: String,
}

/// The metadata block at the top of a script file, one `#! key: value`
/// line per field.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptHeader {
    pub demo_id: String,
    pub app_id: String,
    pub function: String,
    pub instruction: String,
    pub params: Vec<ParamSlot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptFile {
    pub header: ScriptHeader,
    pub script: ActionScript,
}
