use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ActionScript, ApiSpec, Arg, ArgKind, Loc, Stmt, StmtKind, Value, DEFAULT_MAX_LOOP_BOUND};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckLimits {
    pub max_loop_bound: u64,
}

impl Default for CheckLimits {
    fn default() -> Self {
        CheckLimits {
            max_loop_bound: DEFAULT_MAX_LOOP_BOUND,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    NoFunctions,
    DuplicateFunction,
    DuplicateParam,
    UnknownPrimitive,
    Arity,
    ArgType,
    UnboundName,
    LoopBound,
    MissingExplanation,
    EmptySelector,
    BindNonExpose,
    ShadowedParam,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub loc: Loc,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:?}: {}", self.loc, self.kind, self.message)
    }
}

struct Checker<'a> {
    api: &'a ApiSpec,
    limits: CheckLimits,
    out: Vec<Diagnostic>,
}

impl Checker<'_> {
    fn push(&mut self, kind: DiagnosticKind, loc: Loc, message: impl Into<String>) {
        self.out.push(Diagnostic {
            kind,
            loc,
            message: message.into(),
        });
    }

    fn value(&mut self, v: &Value, scope: &BTreeSet<String>, loc: Loc) {
        if let Value::Ref(name) = v {
            if !scope.contains(name) {
                self.push(DiagnosticKind::UnboundName, loc, format!("`{name}` is not a parameter or variable"));
            }
        }
    }

    /// `scope` holds parameters and every variable assigned earlier in
    /// source order.
    fn body(&mut self, body: &[Stmt], params: &BTreeSet<String>, scope: &mut BTreeSet<String>) {
        for stmt in body {
            let loc = stmt.loc;
            match &stmt.kind {
                StmtKind::Call(call) => {
                    if stmt.explanation.trim().is_empty() {
                        self.push(
                            DiagnosticKind::MissingExplanation,
                            loc,
                            format!("call to `{}` has no explanation comment", call.name),
                        );
                    }
                    let Some(prim) = self.api.primitive(&call.name) else {
                        self.push(DiagnosticKind::UnknownPrimitive, loc, format!("`{}` is not an allowed primitive", call.name));
                        continue;
                    };
                    if call.args.len() != prim.args.len() {
                        self.push(
                            DiagnosticKind::Arity,
                            loc,
                            format!("`{}` takes {} argument(s), got {}", call.name, prim.args.len(), call.args.len()),
                        );
                    }
                    for (arg, kind) in call.args.iter().zip(&prim.args) {
                        match (kind, arg) {
                            (ArgKind::Selector, Arg::Selector(sel)) => {
                                if sel.is_empty() {
                                    self.push(DiagnosticKind::EmptySelector, loc, "selector has no non-empty field");
                                }
                                for name in sel.refs() {
                                    if !scope.contains(name) {
                                        self.push(
                                            DiagnosticKind::UnboundName,
                                            loc,
                                            format!("`{name}` is not a parameter or variable"),
                                        );
                                    }
                                }
                            }
                            (ArgKind::Value, Arg::Value(v)) => self.value(v, scope, loc),
                            (ArgKind::Direction, Arg::Value(Value::Str(d))) => {
                                if d != "up" && d != "down" {
                                    self.push(DiagnosticKind::ArgType, loc, format!("direction must be \"up\" or \"down\", got {d:?}"));
                                }
                            }
                            (ArgKind::Direction, Arg::Value(v @ Value::Ref(_))) => self.value(v, scope, loc),
                            (expected, _) => self.push(
                                DiagnosticKind::ArgType,
                                loc,
                                format!("`{}` expects a {expected:?} argument here", call.name).to_lowercase(),
                            ),
                        }
                    }
                    if let Some(bind) = &call.bind {
                        if !prim.returns_expose {
                            self.push(DiagnosticKind::BindNonExpose, loc, format!("`{}` returns nothing to bind", call.name));
                        }
                        if params.contains(bind) {
                            self.push(DiagnosticKind::ShadowedParam, loc, format!("assignment overwrites parameter `{bind}`"));
                        }
                        scope.insert(bind.clone());
                    }
                }
                StmtKind::Let { name, value } => {
                    self.value(value, scope, loc);
                    if params.contains(name) {
                        self.push(DiagnosticKind::ShadowedParam, loc, format!("`let` overwrites parameter `{name}`"));
                    }
                    scope.insert(name.clone());
                }
                StmtKind::If {
                    var,
                    needle,
                    then_body,
                    else_body,
                } => {
                    if !scope.contains(var) {
                        self.push(DiagnosticKind::UnboundName, loc, format!("`{var}` is not bound before this condition"));
                    }
                    self.value(needle, scope, loc);
                    self.body(then_body, params, scope);
                    self.body(else_body, params, scope);
                }
                StmtKind::Repeat { count, body } => {
                    match count {
                        Value::Int(n) if *n < 1 || *n > self.limits.max_loop_bound => self.push(
                            DiagnosticKind::LoopBound,
                            loc,
                            format!("repeat count {n} outside 1..={}", self.limits.max_loop_bound),
                        ),
                        Value::Str(_) => self.push(DiagnosticKind::ArgType, loc, "repeat count must be an integer"),
                        other => self.value(other, scope, loc),
                    }
                    self.body(body, params, scope);
                }
            }
        }
    }
}

/// Static checks; an empty result means the script may run.
pub fn check(script: &ActionScript, api: &ApiSpec, limits: CheckLimits) -> Vec<Diagnostic> {
    let mut c = Checker {
        api,
        limits,
        out: Vec::new(),
    };
    if script.functions.is_empty() {
        c.push(DiagnosticKind::NoFunctions, Loc::default(), "script defines no function");
    }
    let mut names = BTreeSet::new();
    for f in &script.functions {
        if !names.insert(f.name.as_str()) {
            c.push(DiagnosticKind::DuplicateFunction, f.loc, format!("function `{}` defined twice", f.name));
        }
        let mut params = BTreeSet::new();
        for p in &f.params {
            if !params.insert(p.clone()) {
                c.push(DiagnosticKind::DuplicateParam, f.loc, format!("parameter `{p}` listed twice"));
            }
        }
        let mut scope = params.clone();
        c.body(&f.body, &params, &mut scope);
    }
    c.out
}

#[cfg(test)]
mod tests {
    use super::super::parse_script;
    use super::*;

    fn kinds(src: &str) -> Vec<DiagnosticKind> {
        check(&parse_script(src).unwrap(), &ApiSpec::default(), CheckLimits::default())
            .into_iter()
            .map(|d| d.kind)
            .collect()
    }

    #[test]
    fn valid_script_is_clean() {
        let src = "fn f(d, q) {\n # a\n e = scrollAndGetExpose(\"up\")\n repeat 2 { if contains(e, d) {} else {\n # b\n e = scrollAndGetExpose(\"down\") } }\n # c\n clickAndGetExpose(sel(text=d))\n # d\n type(sel(id=\"qty\"), q)\n # e\n enter()\n # f\n back()\n}";
        assert_eq!(kinds(src), vec![]);
    }

    #[test]
    fn rejections() {
        assert_eq!(kinds("fn f() {\n # s\n swipe(\"left\")\n}"), vec![DiagnosticKind::UnknownPrimitive]);
        assert_eq!(kinds("fn f() { repeat 10_000 {\n # x\n enter() } }"), vec![DiagnosticKind::LoopBound]);
        assert_eq!(kinds("fn f() { repeat 0 {\n # x\n enter() } }"), vec![DiagnosticKind::LoopBound]);
        assert_eq!(kinds("fn f() { enter() }"), vec![DiagnosticKind::MissingExplanation]);
        assert_eq!(kinds("fn f() {\n # x\n enter(1)\n}"), vec![DiagnosticKind::Arity]);
        assert_eq!(kinds("fn f() {\n # x\n clickAndGetExpose(sel(text=\" \"))\n}"), vec![DiagnosticKind::EmptySelector]);
        assert_eq!(kinds("fn f() {\n # x\n clickAndGetExpose(sel(text=drink))\n}"), vec![DiagnosticKind::UnboundName]);
        assert_eq!(kinds("fn f() {\n # x\n clickAndGetExpose(\"Cart\")\n}"), vec![DiagnosticKind::ArgType]);
        assert_eq!(kinds("fn f() {\n # x\n scrollAndGetExpose(\"left\")\n}"), vec![DiagnosticKind::ArgType]);
        assert_eq!(kinds("fn f() {\n # x\n e = enter()\n}"), vec![DiagnosticKind::BindNonExpose]);
        assert_eq!(kinds("fn f() { if contains(e, \"x\") {} }"), vec![DiagnosticKind::UnboundName]);
        assert_eq!(kinds("fn f(a, a) {} fn f() {}"), vec![DiagnosticKind::DuplicateParam, DiagnosticKind::DuplicateFunction]);
        assert_eq!(kinds(""), vec![DiagnosticKind::NoFunctions]);
        assert_eq!(kinds("fn f(q) { let q = 1 }"), vec![DiagnosticKind::ShadowedParam]);
    }
}
