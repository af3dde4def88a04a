use std::fmt::Write;

use super::{ActionScript, Arg, ScriptFile, SelectorLit, Stmt, StmtKind, Value};

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn value(v: &Value) -> String {
    match v {
        Value::Str(s) => quote(s),
        Value::Int(n) => n.to_string(),
        Value::Ref(name) => name.clone(),
    }
}

fn selector(sel: &SelectorLit) -> String {
    let mut fields = Vec::new();
    for (name, v) in [("text", &sel.text), ("id", &sel.id), ("visual", &sel.visual)] {
        if let Some(v) = v {
            fields.push(format!("{name}={}", value(v)));
        }
    }
    if let Some(list) = &sel.surrounding {
        let items: Vec<String> = list.iter().map(|s| quote(s)).collect();
        fields.push(format!("surrounding=[{}]", items.join(", ")));
    }
    format!("sel({})", fields.join(", "))
}

fn arg(a: &Arg) -> String {
    match a {
        Arg::Selector(sel) => selector(sel),
        Arg::Value(v) => value(v),
    }
}

fn block(out: &mut String, body: &[Stmt], depth: usize) {
    let pad = "  ".repeat(depth);
    for stmt in body {
        if !stmt.explanation.is_empty() {
            // Explanations are one line; a line break would split the comment.
            let text = stmt.explanation.replace(['\n', '\r'], " ");
            let _ = writeln!(out, "{pad}# {text}");
        }
        match &stmt.kind {
            StmtKind::Call(call) => {
                let args: Vec<String> = call.args.iter().map(arg).collect();
                let bind = call.bind.as_ref().map(|b| format!("{b} = ")).unwrap_or_default();
                let _ = writeln!(out, "{pad}{bind}{}({})", call.name, args.join(", "));
            }
            StmtKind::Let { name, value: v } => {
                let _ = writeln!(out, "{pad}let {name} = {}", value(v));
            }
            StmtKind::Repeat { count, body } => {
                let _ = writeln!(out, "{pad}repeat {} {{", value(count));
                block(out, body, depth + 1);
                let _ = writeln!(out, "{pad}}}");
            }
            StmtKind::If {
                var,
                needle,
                then_body,
                else_body,
            } => {
                let _ = writeln!(out, "{pad}if contains({var}, {}) {{", value(needle));
                block(out, then_body, depth + 1);
                if else_body.is_empty() {
                    let _ = writeln!(out, "{pad}}}");
                } else {
                    let _ = writeln!(out, "{pad}}} else {{");
                    block(out, else_body, depth + 1);
                    let _ = writeln!(out, "{pad}}}");
                }
            }
        }
    }
}

/// Canonical source text: two-space indentation, explanations on the line
/// above their statement, one blank line between functions.
pub fn pretty_print(script: &ActionScript) -> String {
    let mut out = String::new();
    for (i, f) in script.functions.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "fn {}({}) {{", f.name, f.params.join(", "));
        block(&mut out, &f.body, 1);
        out.push_str("}\n");
    }
    out
}

/// The metadata header followed by the canonical script text.
pub fn render_script_file(file: &ScriptFile) -> String {
    let h = &file.header;
    let one_line = |s: &str| s.replace(['\n', '\r'], " ");
    let mut out = String::new();
    let _ = writeln!(out, "#! demo_id: {}", one_line(&h.demo_id));
    let _ = writeln!(out, "#! app_id: {}", one_line(&h.app_id));
    let _ = writeln!(out, "#! function: {}", one_line(&h.function));
    let _ = writeln!(out, "#! instruction: {}", one_line(&h.instruction));
    let _ = writeln!(
        out,
        "#! params: {}",
        serde_json::to_string(&h.params).expect("param schema serializes")
    );
    out.push('\n');
    out.push_str(&pretty_print(&file.script));
    out
}
