use thiserror::Error;

use super::{ActionScript, Arg, Call, FunctionDef, Loc, ParamSlot, ScriptFile, ScriptHeader, SelectorLit, Stmt, StmtKind, Value};

const KEYWORDS: &[&str] = &["fn", "let", "if", "else", "repeat", "contains", "sel"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at {line}:{column}: expected {expected}, found {found}")]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(u64),
    Str(String),
    Punct(char),
    Comment(String),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(n) => format!("integer {n}"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Punct(c) => format!("`{c}`"),
            Tok::Comment(_) => "comment".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    column: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            chars: src.chars().peekable(),
            line: 1,
            column: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn err(&self, loc: Loc, expected: &str, found: impl Into<String>) -> SyntaxError {
        SyntaxError {
            line: loc.line,
            column: loc.column,
            expected: expected.into(),
            found: found.into(),
        }
    }

    fn tokens(mut self) -> Result<Vec<(Tok, Loc)>, SyntaxError> {
        let mut out = Vec::new();
        loop {
            while self.chars.peek().is_some_and(|c| c.is_whitespace()) {
                self.bump();
            }
            let loc = Loc {
                line: self.line,
                column: self.column,
            };
            let Some(&c) = self.chars.peek() else {
                out.push((Tok::Eof, loc));
                return Ok(out);
            };
            match c {
                '#' => {
                    self.bump();
                    let mut text = String::new();
                    while let Some(&c) = self.chars.peek() {
                        if c == '\n' {
                            break;
                        }
                        text.push(c);
                        self.bump();
                    }
                    // `#!` lines are file metadata, not explanations.
                    if !text.starts_with('!') {
                        out.push((Tok::Comment(text.trim().to_string()), loc));
                    }
                }
                '"' => {
                    self.bump();
                    let mut s = String::new();
                    loop {
                        match self.bump() {
                            None => return Err(self.err(self.here(), "closing `\"`", "end of input")),
                            Some('"') => break,
                            Some('\\') => {
                                let esc_loc = self.here();
                                match self.bump() {
                                    Some('"') => s.push('"'),
                                    Some('\\') => s.push('\\'),
                                    Some('n') => s.push('\n'),
                                    Some('t') => s.push('\t'),
                                    Some('r') => s.push('\r'),
                                    other => {
                                        return Err(self.err(
                                            esc_loc,
                                            "escape sequence",
                                            other.map_or("end of input".to_string(), |c| format!("`\\{c}`")),
                                        ))
                                    }
                                }
                            }
                            Some(c) => s.push(c),
                        }
                    }
                    out.push((Tok::Str(s), loc));
                }
                c if c.is_ascii_digit() => {
                    let mut digits = String::new();
                    while let Some(&c) = self.chars.peek() {
                        if c.is_ascii_digit() {
                            digits.push(c);
                        } else if c != '_' {
                            break;
                        }
                        self.bump();
                    }
                    let n = digits
                        .parse::<u64>()
                        .map_err(|_| self.err(loc, "integer that fits in 64 bits", digits.clone()))?;
                    out.push((Tok::Int(n), loc));
                }
                c if c.is_alphabetic() || c == '_' => {
                    let mut ident = String::new();
                    while let Some(&c) = self.chars.peek() {
                        if !(c.is_alphanumeric() || c == '_') {
                            break;
                        }
                        ident.push(c);
                        self.bump();
                    }
                    out.push((Tok::Ident(ident), loc));
                }
                '(' | ')' | '{' | '}' | '[' | ']' | ',' | '=' => {
                    self.bump();
                    out.push((Tok::Punct(c), loc));
                }
                other => return Err(self.err(loc, "token", format!("`{other}`"))),
            }
        }
    }

    fn here(&self) -> Loc {
        Loc {
            line: self.line,
            column: self.column,
        }
    }
}

struct Parser {
    toks: Vec<(Tok, Loc)>,
    pos: usize,
}

type PResult<T> = Result<T, SyntaxError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, ahead: usize) -> &Tok {
        let i = (self.pos + ahead).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn loc(&self) -> Loc {
        self.toks[self.pos].1
    }

    fn advance(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> SyntaxError {
        let loc = self.loc();
        SyntaxError {
            line: loc.line,
            column: loc.column,
            expected: expected.into(),
            found: self.peek().describe(),
        }
    }

    fn expect_punct(&mut self, c: char) -> PResult<()> {
        if *self.peek() == Tok::Punct(c) {
            self.advance();
            Ok(())
        } else {
            Err(self.error(&format!("`{c}`")))
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if *self.peek() == Tok::Punct(c) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn expect_keyword(&mut self, kw: &str) -> PResult<()> {
        if self.is_keyword(kw) {
            self.advance();
            Ok(())
        } else {
            Err(self.error(&format!("`{kw}`")))
        }
    }

    fn expect_ident(&mut self, what: &str) -> PResult<String> {
        match self.peek() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                self.advance();
                Ok(s)
            }
            _ => Err(self.error(what)),
        }
    }

    fn comments(&mut self) -> String {
        let mut parts = Vec::new();
        while let Tok::Comment(text) = self.peek() {
            if !text.is_empty() {
                parts.push(text.clone());
            }
            self.advance();
        }
        parts.join(" ")
    }

    fn script(&mut self) -> PResult<ActionScript> {
        let mut functions = Vec::new();
        loop {
            self.comments();
            if *self.peek() == Tok::Eof {
                return Ok(ActionScript { functions });
            }
            functions.push(self.function()?);
        }
    }

    fn function(&mut self) -> PResult<FunctionDef> {
        let loc = self.loc();
        self.expect_keyword("fn")?;
        let name = self.expect_ident("function name")?;
        self.expect_punct('(')?;
        let mut params = Vec::new();
        if !self.eat_punct(')') {
            loop {
                params.push(self.expect_ident("parameter name")?);
                if self.eat_punct(')') {
                    break;
                }
                self.expect_punct(',')?;
            }
        }
        let body = self.block()?;
        Ok(FunctionDef { name, params, body, loc })
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect_punct('{')?;
        let mut body = Vec::new();
        loop {
            let explanation = self.comments();
            if self.eat_punct('}') {
                return Ok(body);
            }
            if *self.peek() == Tok::Eof {
                return Err(self.error("`}`"));
            }
            body.push(self.stmt(explanation)?);
        }
    }

    fn stmt(&mut self, explanation: String) -> PResult<Stmt> {
        let loc = self.loc();
        let kind = if self.is_keyword("let") {
            self.advance();
            let name = self.expect_ident("variable name")?;
            self.expect_punct('=')?;
            let value = self.value()?;
            StmtKind::Let { name, value }
        } else if self.is_keyword("if") {
            self.advance();
            self.expect_keyword("contains")?;
            self.expect_punct('(')?;
            let var = self.expect_ident("variable name")?;
            self.expect_punct(',')?;
            let needle = self.value()?;
            self.expect_punct(')')?;
            let then_body = self.block()?;
            let else_body = if self.is_keyword("else") {
                self.advance();
                self.block()?
            } else {
                Vec::new()
            };
            StmtKind::If {
                var,
                needle,
                then_body,
                else_body,
            }
        } else if self.is_keyword("repeat") {
            self.advance();
            let count = self.value()?;
            let body = self.block()?;
            StmtKind::Repeat { count, body }
        } else if matches!(self.peek_at(1), Tok::Punct('=')) {
            let bind = self.expect_ident("variable name")?;
            self.expect_punct('=')?;
            let mut call = self.call()?;
            call.bind = Some(bind);
            StmtKind::Call(call)
        } else {
            StmtKind::Call(self.call()?)
        };
        Ok(Stmt { kind, explanation, loc })
    }

    fn call(&mut self) -> PResult<Call> {
        let name = match self.peek() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => s.clone(),
            _ => return Err(self.error("statement")),
        };
        self.advance();
        self.expect_punct('(')?;
        let mut args = Vec::new();
        if !self.eat_punct(')') {
            loop {
                args.push(self.arg()?);
                if self.eat_punct(')') {
                    break;
                }
                self.expect_punct(',')?;
            }
        }
        Ok(Call { name, args, bind: None })
    }

    fn arg(&mut self) -> PResult<Arg> {
        if self.is_keyword("sel") {
            self.advance();
            return Ok(Arg::Selector(self.selector()?));
        }
        Ok(Arg::Value(self.value()?))
    }

    fn selector(&mut self) -> PResult<SelectorLit> {
        self.expect_punct('(')?;
        let mut sel = SelectorLit::default();
        if self.eat_punct(')') {
            return Ok(sel);
        }
        loop {
            let field_loc = self.loc();
            let field = match self.peek() {
                Tok::Ident(s) => s.clone(),
                _ => return Err(self.error("selector field")),
            };
            self.advance();
            self.expect_punct('=')?;
            let dup = match field.as_str() {
                "text" => sel.text.replace(self.value()?).is_some(),
                "id" => sel.id.replace(self.value()?).is_some(),
                "visual" => sel.visual.replace(self.value()?).is_some(),
                "surrounding" => sel.surrounding.replace(self.string_list()?).is_some(),
                other => {
                    return Err(SyntaxError {
                        line: field_loc.line,
                        column: field_loc.column,
                        expected: "one of text, id, visual, surrounding".into(),
                        found: format!("`{other}`"),
                    })
                }
            };
            if dup {
                return Err(SyntaxError {
                    line: field_loc.line,
                    column: field_loc.column,
                    expected: "each selector field at most once".into(),
                    found: format!("second `{field}`"),
                });
            }
            if self.eat_punct(')') {
                return Ok(sel);
            }
            self.expect_punct(',')?;
        }
    }

    fn string_list(&mut self) -> PResult<Vec<String>> {
        self.expect_punct('[')?;
        let mut items = Vec::new();
        if self.eat_punct(']') {
            return Ok(items);
        }
        loop {
            match self.advance_if_str() {
                Some(s) => items.push(s),
                None => return Err(self.error("string")),
            }
            if self.eat_punct(']') {
                return Ok(items);
            }
            self.expect_punct(',')?;
        }
    }

    fn advance_if_str(&mut self) -> Option<String> {
        if let Tok::Str(s) = self.peek() {
            let s = s.clone();
            self.advance();
            Some(s)
        } else {
            None
        }
    }

    fn value(&mut self) -> PResult<Value> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.advance();
                Ok(Value::Str(s))
            }
            Tok::Int(n) => {
                self.advance();
                Ok(Value::Int(n))
            }
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.advance();
                Ok(Value::Ref(s))
            }
            _ => Err(self.error("string, integer or name")),
        }
    }
}

pub fn parse_script(text: &str) -> Result<ActionScript, SyntaxError> {
    let toks = Lexer::new(text).tokens()?;
    Parser { toks, pos: 0 }.script()
}

/// Parses a script file, reading the `#! key: value` metadata lines that
/// precede the code.
pub fn parse_script_file(text: &str) -> Result<ScriptFile, SyntaxError> {
    let mut header = ScriptHeader::default();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let Some(rest) = trimmed.strip_prefix("#!") else {
            break;
        };
        let err = |expected: &str, found: &str| SyntaxError {
            line: i + 1,
            column: 1,
            expected: expected.into(),
            found: found.into(),
        };
        let (key, value) = rest.split_once(':').ok_or_else(|| err("`#! key: value`", trimmed))?;
        let value = value.trim();
        match key.trim() {
            "demo_id" => header.demo_id = value.to_string(),
            "app_id" => header.app_id = value.to_string(),
            "function" => header.function = value.to_string(),
            "instruction" => header.instruction = value.to_string(),
            "params" => {
                header.params = serde_json::from_str::<Vec<ParamSlot>>(value)
                    .map_err(|e| err("JSON parameter schema", &e.to_string()))?
            }
            other => return Err(err("one of demo_id, app_id, function, instruction, params", other)),
        }
    }
    Ok(ScriptFile {
        header,
        script: parse_script(text)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comment_becomes_explanation() {
        let s = parse_script("fn f(){ # open cart\n clickAndGetExpose(sel(text=\"Cart\")) }").unwrap();
        let f = &s.functions[0];
        assert_eq!(f.body.len(), 1);
        assert_eq!(f.body[0].explanation, "open cart");
        let StmtKind::Call(call) = &f.body[0].kind else { panic!() };
        assert_eq!(call.name, "clickAndGetExpose");
        assert_eq!(
            call.args,
            vec![Arg::Selector(SelectorLit {
                text: Some(Value::Str("Cart".into())),
                ..Default::default()
            })]
        );
    }

    #[test]
    fn repeat_block() {
        let s = parse_script("fn f() { repeat 3 { enter() } }").unwrap();
        let StmtKind::Repeat { count, body } = &s.functions[0].body[0].kind else { panic!() };
        assert_eq!(*count, Value::Int(3));
        assert!(matches!(&body[0].kind, StmtKind::Call(c) if c.name == "enter" && c.args.is_empty()));
    }

    #[test]
    fn missing_brace_reports_end_of_input() {
        let src = "fn f() {\n  enter()\n";
        let err = parse_script(src).unwrap_err();
        assert_eq!((err.line, err.column), (3, 1));
        assert_eq!(err.found, "end of input");
        assert_eq!(err.expected, "`}`");
    }

    #[test]
    fn bindings_conditions_and_lists() {
        let src = r#"
            fn order(drink, quantity) {
              # look
              e = scrollAndGetExpose("up")
              if contains(e, drink) {
              } else {
                # next page
                e = scrollAndGetExpose("down")
              }
              let n = 10_000
              # pick
              clickAndGetExpose(sel(text=drink, visual="x", surrounding=["a", "b\"c"]))
            }
        "#;
        let s = parse_script(src).unwrap();
        let body = &s.functions[0].body;
        assert_eq!(body.len(), 4);
        assert!(matches!(&body[0].kind, StmtKind::Call(c) if c.bind.as_deref() == Some("e")));
        assert!(matches!(&body[1].kind, StmtKind::If { then_body, else_body, .. } if then_body.is_empty() && else_body.len() == 1));
        assert!(matches!(&body[2].kind, StmtKind::Let { value: Value::Int(10_000), .. }));
        let StmtKind::Call(c) = &body[3].kind else { panic!() };
        let Arg::Selector(sel) = &c.args[0] else { panic!() };
        assert_eq!(sel.surrounding.as_deref(), Some(&["a".to_string(), "b\"c".to_string()][..]));
        assert_eq!(body[3].loc.line, 12);
    }

    #[test]
    fn keyword_cannot_name_a_parameter() {
        assert!(parse_script("fn f(repeat) {}").is_err());
        assert!(parse_script("fn f() { clickAndGetExpose(sel(text=\"a\", text=\"b\")) }").is_err());
        assert!(parse_script("fn f() { clickAndGetExpose(sel(colour=\"a\")) }").is_err());
        assert!(parse_script("fn f() { @ }").is_err());
    }

    #[test]
    fn header_lines() {
        let src = "#! demo_id: d1\n#! app_id: coffeeshop\n#! function: f\n#! instruction: Order an Americano\n#! params: [{\"name\":\"q\",\"kind\":\"integer\",\"source_step_index\":1,\"default_value\":\"1\"}]\nfn f(q) { enter() }\n";
        let file = parse_script_file(src).unwrap();
        assert_eq!(file.header.app_id, "coffeeshop");
        assert_eq!(file.header.params[0].name, "q");
        assert_eq!(file.script.functions[0].body[0].explanation, "");
    }
}
