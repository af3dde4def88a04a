//! Deterministic mock apps described as screen-graph state machines.
//!
//! An [`AppSpec`] is loaded from a JSON document. Screens are node templates
//! with `${var}` interpolation and at most one scrollable list region that
//! shows a fixed-size window of items. Transitions fire on the first rule
//! (declaration order) whose trigger matches the action. [`SimState`] is a
//! value: [`apply_action`] returns the successor state.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::ui::{Bounds, NodePath, UiNode, UiTree};

pub const BACK_STACK_LIMIT: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid app spec at {path}: {message}")]
    Spec { path: String, message: String },
    #[error("no interactive element with index {0}")]
    InvalidTarget(usize),
    #[error("element {0} is not editable")]
    TypeOnNonEditable(usize),
    #[error("unknown goal predicate {0:?}")]
    UnknownPredicate(String),
    #[error("bad goal arguments for {predicate}: {message}")]
    GoalArguments { predicate: String, message: String },
}

fn spec_err(path: impl Into<String>, message: impl Into<String>) -> SimError {
    SimError::Spec {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppMeta {
    pub app_name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub domain_tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    Type,
    Scroll,
    Enter,
    Back,
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionKind::Click => "click",
            ActionKind::Type => "type",
            ActionKind::Scroll => "scroll",
            ActionKind::Enter => "enter",
            ActionKind::Back => "back",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScrollDirection {
    Up,
    Down,
}

impl fmt::Display for ScrollDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScrollDirection::Up => "up",
            ScrollDirection::Down => "down",
        })
    }
}

impl std::str::FromStr for ScrollDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "up" => Ok(ScrollDirection::Up),
            "down" => Ok(ScrollDirection::Down),
            other => Err(format!("unknown scroll direction {other:?}")),
        }
    }
}

/// One user action. Element targets are indices into
/// [`crate::ui::enumerate_interactive`] of the current screen.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Click { target: usize },
    Type { target: usize, text: String },
    Scroll { direction: ScrollDirection },
    Enter,
    Back,
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Click { .. } => ActionKind::Click,
            Action::Type { .. } => ActionKind::Type,
            Action::Scroll { .. } => ActionKind::Scroll,
            Action::Enter => ActionKind::Enter,
            Action::Back => ActionKind::Back,
        }
    }

    pub fn target(&self) -> Option<usize> {
        match self {
            Action::Click { target } | Action::Type { target, .. } => Some(*target),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Transitioned { from: String, to: String },
    StateChanged,
    NoOp { reason: String },
}

/// Node template. Bounds are absolute, except inside a list item template
/// where they are relative to the row origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeTemplate {
    #[serde(default = "default_class")]
    pub class: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub id: String,
    pub bounds: [u32; 4],
    #[serde(default)]
    pub clickable: bool,
    #[serde(default)]
    pub editable: bool,
    #[serde(default)]
    pub scrollable: bool,
    #[serde(default)]
    pub annotation: String,
    /// Variable written by `type` actions on this node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible_if: Option<Condition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub list: Option<Box<ListRegion>>,
    #[serde(default)]
    pub children: Vec<NodeTemplate>,
}

fn default_class() -> String {
    "View".to_string()
}

/// Scrollable window over a list or object variable. Rows are rendered
/// from `item` as children of the node carrying the region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ListRegion {
    pub source: String,
    pub window: usize,
    pub row_height: u32,
    /// Parameter name for choices drawn from this list, e.g. `drink`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<String>,
    pub item: NodeTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenTemplate {
    #[serde(skip)]
    pub screen_id: String,
    pub root: NodeTemplate,
}

impl ScreenTemplate {
    pub fn list_region(&self) -> Option<&ListRegion> {
        fn find(t: &NodeTemplate) -> Option<&ListRegion> {
            if let Some(l) = &t.list {
                return Some(l);
            }
            t.children.iter().find_map(find)
        }
        find(&self.root)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementPredicate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trigger {
    pub action: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<ElementPredicate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Effect {
    Set { var: String, value: Value },
    Add { var: String, amount: Value },
    Put { var: String, key: String, amount: Value },
    Remove { var: String, key: String },
    Clear { var: String },
    Push { var: String, value: Value },
}

impl Effect {
    fn var(&self) -> &str {
        match self {
            Effect::Set { var, .. }
            | Effect::Add { var, .. }
            | Effect::Put { var, .. }
            | Effect::Remove { var, .. }
            | Effect::Clear { var }
            | Effect::Push { var, .. } => var,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRule {
    pub source: String,
    pub trigger: Trigger,
    #[serde(default)]
    pub effects: Vec<Effect>,
    pub destination: String,
    #[serde(default)]
    pub clear_back_stack: bool,
}

/// Condition over the variable store, used by goals and `visible_if`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    All(Vec<Condition>),
    Any(Vec<Condition>),
    Not(Box<Condition>),
    /// `var` renders to the same text as `value`.
    Eq { var: String, value: Value },
    /// Object `var` maps `key` to the integer `value` (missing keys count 0).
    Count { var: String, key: String, value: Value },
    /// Array or object `var` has `value` entries.
    Len { var: String, value: Value },
    /// Array `var` contains `value`, or object `var` has key `value`.
    Contains { var: String, value: Value },
    NonEmpty { var: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    #[serde(default)]
    pub params: Vec<String>,
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppSpec {
    pub app_id: String,
    pub meta: AppMeta,
    pub start_screen: String,
    pub screens: BTreeMap<String, ScreenTemplate>,
    #[serde(default)]
    pub transitions: Vec<TransitionRule>,
    #[serde(default)]
    pub variables: BTreeMap<String, Value>,
    #[serde(default)]
    pub goals: BTreeMap<String, GoalSpec>,
}

impl AppSpec {
    pub fn screen(&self, id: &str) -> Option<&ScreenTemplate> {
        self.screens.get(id)
    }

    /// Item labels of every list region, keyed by source variable.
    pub fn list_labels(&self, source: &str) -> Vec<String> {
        self.variables
            .get(source)
            .map(items_of)
            .unwrap_or_default()
            .into_iter()
            .map(|item| item.label)
            .collect()
    }

    /// All list regions declared by the app, with the screen holding them.
    pub fn list_regions(&self) -> Vec<(&str, &ListRegion)> {
        self.screens
            .iter()
            .filter_map(|(id, s)| s.list_region().map(|l| (id.as_str(), l)))
            .collect()
    }
}

/// Parses and validates an app spec document.
pub fn load_app_spec(document: &str) -> Result<AppSpec, SimError> {
    let mut app: AppSpec =
        serde_json::from_str(document).map_err(|e| spec_err("document", e.to_string()))?;
    for (id, screen) in app.screens.iter_mut() {
        screen.screen_id = id.clone();
    }
    validate(&app)?;
    Ok(app)
}

fn validate(app: &AppSpec) -> Result<(), SimError> {
    if app.app_id.trim().is_empty() {
        return Err(spec_err("app_id", "must not be empty"));
    }
    if app.meta.app_name.trim().is_empty() {
        return Err(spec_err("meta.app_name", "must not be empty"));
    }
    if app.screens.is_empty() {
        return Err(spec_err("screens", "at least one screen is required"));
    }
    if !app.screens.contains_key(&app.start_screen) {
        return Err(spec_err(
            "start_screen",
            format!("unknown screen {:?}", app.start_screen),
        ));
    }
    for (id, screen) in &app.screens {
        let path = format!("screens.{id}.root");
        let mut regions = 0;
        validate_template(app, &screen.root, &path, None, false, &mut regions)?;
        if regions > 1 {
            return Err(spec_err(
                format!("screens.{id}"),
                "at most one list region per screen",
            ));
        }
    }
    for (i, rule) in app.transitions.iter().enumerate() {
        if !app.screens.contains_key(&rule.source) {
            return Err(spec_err(
                format!("transitions[{i}].source"),
                format!("unknown screen {:?}", rule.source),
            ));
        }
        if !app.screens.contains_key(&rule.destination) {
            return Err(spec_err(
                format!("transitions[{i}].destination"),
                format!("unknown screen {:?}", rule.destination),
            ));
        }
        if matches!(rule.trigger.action, ActionKind::Scroll) {
            // Scrolling is navigation-only and never consults rules.
            return Err(spec_err(
                format!("transitions[{i}].trigger.action"),
                "scroll cannot trigger transitions",
            ));
        }
        if rule.trigger.action == ActionKind::Back && !rule.effects.is_empty() {
            return Err(spec_err(
                format!("transitions[{i}].effects"),
                "back rules navigate only and cannot carry effects",
            ));
        }
        for (j, effect) in rule.effects.iter().enumerate() {
            let path = format!("transitions[{i}].effects[{j}]");
            if !app.variables.contains_key(effect.var()) {
                return Err(spec_err(
                    format!("{path}.var"),
                    format!("unknown variable {:?}", effect.var()),
                ));
            }
            let templates: Vec<String> = match effect {
                Effect::Set { value, .. } | Effect::Push { value, .. } => strings_in(value),
                Effect::Add { amount, .. } => strings_in(amount),
                Effect::Put { key, amount, .. } => {
                    let mut v = strings_in(amount);
                    v.push(key.clone());
                    v
                }
                Effect::Remove { key, .. } => vec![key.clone()],
                Effect::Clear { .. } => Vec::new(),
            };
            for t in templates {
                check_refs(app, &t, &path, &["item", "typed"])?;
            }
        }
    }
    for (name, goal) in &app.goals {
        validate_condition(app, &goal.condition, &format!("goals.{name}.condition"), &goal.params)?;
    }
    Ok(())
}

fn strings_in(v: &Value) -> Vec<String> {
    match v {
        Value::String(s) => vec![s.clone()],
        _ => Vec::new(),
    }
}

fn validate_condition(app: &AppSpec, cond: &Condition, path: &str, params: &[String]) -> Result<(), SimError> {
    let allowed: Vec<&str> = params.iter().map(String::as_str).collect();
    let check_var = |var: &str| {
        if app.variables.contains_key(var) {
            Ok(())
        } else {
            Err(spec_err(path.to_string(), format!("unknown variable {var:?}")))
        }
    };
    match cond {
        Condition::All(cs) | Condition::Any(cs) => {
            for (i, c) in cs.iter().enumerate() {
                validate_condition(app, c, &format!("{path}[{i}]"), params)?;
            }
            Ok(())
        }
        Condition::Not(c) => validate_condition(app, c, path, params),
        Condition::Eq { var, value }
        | Condition::Len { var, value }
        | Condition::Contains { var, value } => {
            check_var(var)?;
            for s in strings_in(value) {
                check_refs(app, &s, path, &allowed)?;
            }
            Ok(())
        }
        Condition::Count { var, key, value } => {
            check_var(var)?;
            check_refs(app, key, path, &allowed)?;
            for s in strings_in(value) {
                check_refs(app, &s, path, &allowed)?;
            }
            Ok(())
        }
        Condition::NonEmpty { var } => check_var(var),
    }
}

fn check_refs(app: &AppSpec, template: &str, path: &str, extra: &[&str]) -> Result<(), SimError> {
    for name in template_refs(template) {
        let root = name.split('.').next().unwrap_or(&name);
        if !app.variables.contains_key(root) && !extra.contains(&root) {
            return Err(spec_err(
                path.to_string(),
                format!("unresolved reference ${{{name}}}"),
            ));
        }
    }
    Ok(())
}

fn validate_template(
    app: &AppSpec,
    t: &NodeTemplate,
    path: &str,
    parent: Option<Bounds>,
    in_item: bool,
    regions: &mut usize,
) -> Result<(), SimError> {
    let [l, tp, r, b] = t.bounds;
    let bounds = Bounds::new(l, tp, r, b).map_err(|e| spec_err(format!("{path}.bounds"), e.to_string()))?;
    if let Some(p) = parent {
        if !p.contains(&bounds) {
            return Err(spec_err(
                format!("{path}.bounds"),
                format!("{bounds} escapes parent {p}"),
            ));
        }
    } else if !in_item && !Bounds::screen().contains(&bounds) {
        return Err(spec_err(format!("{path}.bounds"), "outside the screen"));
    }
    let extra: &[&str] = if in_item { &["item"] } else { &[] };
    for field in [&t.text, &t.id, &t.annotation] {
        check_refs(app, field, path, extra)?;
    }
    if let Some(bind) = &t.bind {
        if !app.variables.contains_key(bind) {
            return Err(spec_err(format!("{path}.bind"), format!("unknown variable {bind:?}")));
        }
        if !t.editable {
            return Err(spec_err(format!("{path}.bind"), "only editable nodes bind variables"));
        }
    }
    if let Some(cond) = &t.visible_if {
        validate_condition(app, cond, &format!("{path}.visible_if"), &[])?;
    }
    if let Some(list) = &t.list {
        *regions += 1;
        let lp = format!("{path}.list");
        if in_item {
            return Err(spec_err(lp, "list regions cannot nest"));
        }
        if list.window == 0 {
            return Err(spec_err(format!("{lp}.window"), "window must be at least 1"));
        }
        if list.row_height == 0 {
            return Err(spec_err(format!("{lp}.row_height"), "row height must be positive"));
        }
        match app.variables.get(&list.source) {
            Some(Value::Array(_)) | Some(Value::Object(_)) => {}
            Some(_) => return Err(spec_err(format!("{lp}.source"), "source must be an array or object")),
            None => {
                return Err(spec_err(
                    format!("{lp}.source"),
                    format!("unknown variable {:?}", list.source),
                ))
            }
        }
        if list.window as u32 * list.row_height > bounds.height() {
            return Err(spec_err(lp, "window does not fit the container"));
        }
        let [il, it, ir, ib] = list.item.bounds;
        if ir > bounds.width() || ib > list.row_height || il >= ir || it >= ib {
            return Err(spec_err(format!("{lp}.item.bounds"), "item must fit inside one row"));
        }
        validate_template(app, &list.item, &format!("{lp}.item"), None, true, regions)?;
    }
    for (i, child) in t.children.iter().enumerate() {
        let parent_bounds = if in_item { None } else { Some(bounds) };
        validate_template(app, child, &format!("{path}.children[{i}]"), parent_bounds, in_item, regions)?;
    }
    Ok(())
}

/// `${name}` references in a template string.
fn template_refs(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find("${") {
        let after = &rest[start + 2..];
        match after.find('}') {
            Some(end) => {
                out.push(after[..end].trim().to_string());
                rest = &after[end + 1..];
            }
            None => break,
        }
    }
    out
}

/// One entry of a list variable: arrays of strings, arrays of objects with a
/// `label` field, or objects (key becomes the label, value the `value`).
#[derive(Debug, Clone, PartialEq)]
pub struct ListItem {
    pub label: String,
    pub fields: BTreeMap<String, Value>,
}

pub fn items_of(v: &Value) -> Vec<ListItem> {
    match v {
        Value::Array(items) => items
            .iter()
            .map(|item| match item {
                Value::Object(map) => ListItem {
                    label: map.get("label").map(render_value).unwrap_or_default(),
                    fields: map.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
                },
                other => ListItem {
                    label: render_value(other),
                    fields: BTreeMap::from([("label".to_string(), other.clone())]),
                },
            })
            .collect(),
        Value::Object(map) => map
            .iter()
            .map(|(k, v)| ListItem {
                label: k.clone(),
                fields: BTreeMap::from([
                    ("label".to_string(), Value::String(k.clone())),
                    ("value".to_string(), v.clone()),
                ]),
            })
            .collect(),
        _ => Vec::new(),
    }
}

pub fn render_value(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        other => other.to_string(),
    }
}

struct Scope<'a> {
    vars: &'a BTreeMap<String, Value>,
    item: Option<&'a ListItem>,
    typed: Option<&'a str>,
    args: Option<&'a BTreeMap<String, String>>,
}

impl Scope<'_> {
    fn lookup(&self, name: &str) -> Option<Value> {
        if let Some(args) = self.args {
            if let Some(v) = args.get(name) {
                return Some(Value::String(v.clone()));
            }
        }
        let mut parts = name.splitn(2, '.');
        let root = parts.next()?;
        let field = parts.next();
        match root {
            "item" => {
                let item = self.item?;
                match field {
                    None => Some(Value::String(item.label.clone())),
                    Some(f) => item.fields.get(f).cloned(),
                }
            }
            "typed" => self.typed.map(|t| Value::String(t.to_string())),
            _ => {
                let v = self.vars.get(root)?;
                match field {
                    None => Some(v.clone()),
                    Some(f) => v.get(f).cloned(),
                }
            }
        }
    }

    fn interpolate(&self, template: &str) -> String {
        let mut out = String::new();
        let mut rest = template;
        while let Some(start) = rest.find("${") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            match after.find('}') {
                Some(end) => {
                    let name = after[..end].trim();
                    out.push_str(&self.lookup(name).map(|v| render_value(&v)).unwrap_or_default());
                    rest = &after[end + 1..];
                }
                None => {
                    out.push_str(&rest[start..]);
                    rest = "";
                }
            }
        }
        out.push_str(rest);
        out
    }

    /// Like `interpolate`, but a string that is exactly one `${x}` yields the
    /// referenced value unchanged, so numbers stay numbers.
    fn resolve(&self, v: &Value) -> Value {
        match v {
            Value::String(s) => {
                let t = s.trim();
                if t.starts_with("${") && t.ends_with('}') && t.matches("${").count() == 1 {
                    self.lookup(t[2..t.len() - 1].trim()).unwrap_or(Value::Null)
                } else {
                    Value::String(self.interpolate(s))
                }
            }
            other => other.clone(),
        }
    }
}

fn as_int(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64(),
        Value::String(s) => s.trim().parse().ok(),
        Value::Null => Some(0),
        _ => None,
    }
}

fn eval_condition(cond: &Condition, scope: &Scope<'_>) -> bool {
    let var = |name: &str| scope.vars.get(name).cloned().unwrap_or(Value::Null);
    match cond {
        Condition::All(cs) => cs.iter().all(|c| eval_condition(c, scope)),
        Condition::Any(cs) => cs.iter().any(|c| eval_condition(c, scope)),
        Condition::Not(c) => !eval_condition(c, scope),
        Condition::Eq { var: name, value } => render_value(&var(name)) == render_value(&scope.resolve(value)),
        Condition::Count { var: name, key, value } => {
            let key = scope.interpolate(key);
            let have = var(name).get(&key).and_then(as_int).unwrap_or(0);
            as_int(&scope.resolve(value)) == Some(have)
        }
        Condition::Len { var: name, value } => {
            let len = match var(name) {
                Value::Array(a) => a.len(),
                Value::Object(o) => o.len(),
                _ => 0,
            };
            as_int(&scope.resolve(value)) == Some(len as i64)
        }
        Condition::Contains { var: name, value } => {
            let needle = render_value(&scope.resolve(value));
            match var(name) {
                Value::Array(a) => a.iter().any(|v| render_value(v) == needle),
                Value::Object(o) => o.contains_key(&needle),
                _ => false,
            }
        }
        Condition::NonEmpty { var: name } => match var(name) {
            Value::Array(a) => !a.is_empty(),
            Value::Object(o) => !o.is_empty(),
            Value::Null => false,
            other => !render_value(&other).is_empty(),
        },
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimState {
    #[serde(skip)]
    pub app: Arc<AppSpec>,
    pub app_id: String,
    pub screen: String,
    pub vars: BTreeMap<String, Value>,
    /// Window offset (in items) per screen holding a list region.
    pub offsets: BTreeMap<String, usize>,
    pub back_stack: Vec<String>,
    pub step_counter: u64,
    /// Resource id of the last typed-into field; `enter` rules match it.
    pub focus: Option<String>,
}

impl PartialEq for SimState {
    fn eq(&self, other: &Self) -> bool {
        self.app_id == other.app_id
            && self.screen == other.screen
            && self.vars == other.vars
            && self.offsets == other.offsets
            && self.back_stack == other.back_stack
            && self.step_counter == other.step_counter
            && self.focus == other.focus
    }
}

impl SimState {
    /// Screen and variable store, the parts that define what the user
    /// accomplished.
    pub fn same_outcome(&self, other: &SimState) -> bool {
        self.screen == other.screen && self.vars == other.vars
    }
}

pub fn reset(app: &Arc<AppSpec>) -> SimState {
    SimState {
        app: Arc::clone(app),
        app_id: app.app_id.clone(),
        screen: app.start_screen.clone(),
        vars: app.variables.clone(),
        offsets: BTreeMap::new(),
        back_stack: Vec::new(),
        step_counter: 0,
        focus: None,
    }
}

/// Where a rendered node came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeOrigin {
    pub item: Option<ListItem>,
    pub bind: Option<String>,
    pub list_source: Option<String>,
}

pub struct Rendered {
    pub tree: UiTree,
    pub origins: HashMap<NodePath, NodeOrigin>,
}

pub fn current_tree(state: &SimState) -> UiTree {
    render(state).tree
}

pub fn render(state: &SimState) -> Rendered {
    let screen = state
        .app
        .screen(&state.screen)
        .expect("state refers to a validated screen");
    let offset = state.offsets.get(&state.screen).copied().unwrap_or(0);
    let scope = Scope {
        vars: &state.vars,
        item: None,
        typed: None,
        args: None,
    };
    let mut origins = HashMap::new();
    let root = render_node(&screen.root, &scope, (0, 0), offset, &mut Vec::new(), &mut origins, None)
        .unwrap_or_else(|| UiNode::new(screen.root.class.clone(), Bounds::screen()));
    Rendered {
        tree: UiTree::new(state.screen.clone(), root),
        origins,
    }
}

fn render_node(
    t: &NodeTemplate,
    scope: &Scope<'_>,
    origin: (u32, u32),
    offset: usize,
    path: &mut NodePath,
    origins: &mut HashMap<NodePath, NodeOrigin>,
    list_source: Option<&str>,
) -> Option<UiNode> {
    if let Some(cond) = &t.visible_if {
        if !eval_condition(cond, scope) {
            return None;
        }
    }
    let [l, tp, r, b] = t.bounds;
    let bounds = Bounds {
        left: origin.0 + l,
        top: origin.1 + tp,
        right: origin.0 + r,
        bottom: origin.1 + b,
    };
    let mut node = UiNode::new(t.class.clone(), bounds);
    node.text = scope.interpolate(&t.text);
    node.resource_id = scope.interpolate(&t.id);
    node.annotation = scope.interpolate(&t.annotation);
    node.clickable = t.clickable;
    node.editable = t.editable;
    node.scrollable = t.scrollable || t.list.is_some();
    if let Some(bind) = &t.bind {
        if node.text.is_empty() {
            node.text = scope.vars.get(bind).map(render_value).unwrap_or_default();
        }
    }
    if scope.item.is_some() || t.bind.is_some() {
        origins.insert(
            path.clone(),
            NodeOrigin {
                item: scope.item.cloned(),
                bind: t.bind.clone(),
                list_source: list_source.map(str::to_string),
            },
        );
    }
    for child in &t.children {
        path.push(node.children.len());
        let rendered = render_node(child, scope, origin, offset, path, origins, list_source);
        path.pop();
        node.children.extend(rendered);
    }
    if let Some(list) = &t.list {
        let items = scope.vars.get(&list.source).map(items_of).unwrap_or_default();
        for (row, item) in items.iter().skip(offset).take(list.window).enumerate() {
            let item_scope = Scope {
                vars: scope.vars,
                item: Some(item),
                typed: None,
                args: None,
            };
            let row_origin = (bounds.left, bounds.top + row as u32 * list.row_height);
            path.push(node.children.len());
            let rendered = render_node(&list.item, &item_scope, row_origin, 0, path, origins, Some(&list.source));
            path.pop();
            node.children.extend(rendered);
        }
    }
    Some(node)
}

fn predicate_matches(pred: &ElementPredicate, node: &UiNode, scope: &Scope<'_>) -> bool {
    pred.id.as_ref().is_none_or(|id| scope.interpolate(id) == node.resource_id)
        && pred.text.as_ref().is_none_or(|t| scope.interpolate(t) == node.text)
        && pred.class.as_ref().is_none_or(|c| c == &node.node_class || c == node.short_class())
}

pub fn apply_action(state: &SimState, action: &Action) -> Result<(SimState, Outcome), SimError> {
    let rendered = render(state);
    let interactive = rendered.tree.interactive_paths();
    let mut next = state.clone();
    let outcome = match action {
        Action::Scroll { direction } => scroll(&mut next, *direction),
        Action::Back => {
            let matched = fire_rule(state, &mut next, ActionKind::Back, None, None, None)?;
            match matched {
                Some(o) => o,
                None => match next.back_stack.pop() {
                    Some(prev) => {
                        let from = std::mem::replace(&mut next.screen, prev);
                        next.focus = None;
                        Outcome::Transitioned {
                            from,
                            to: next.screen.clone(),
                        }
                    }
                    None => Outcome::NoOp {
                        reason: "at_root".into(),
                    },
                },
            }
        }
        Action::Enter => {
            let focused = state.focus.as_ref().and_then(|id| {
                interactive
                    .iter()
                    .filter_map(|p| rendered.tree.node_at(p))
                    .find(|n| &n.resource_id == id)
            });
            fire_rule(state, &mut next, ActionKind::Enter, focused, None, None)?.unwrap_or(Outcome::NoOp {
                reason: "no_matching_rule".into(),
            })
        }
        Action::Click { target } => {
            let path = interactive.get(*target).ok_or(SimError::InvalidTarget(*target))?;
            let node = rendered.tree.node_at(path).expect("interactive path is valid");
            let origin = rendered.origins.get(path);
            if node.editable {
                next.focus = Some(node.resource_id.clone());
            }
            fire_rule(state, &mut next, ActionKind::Click, Some(node), origin, None)?.unwrap_or(Outcome::NoOp {
                reason: "no_matching_rule".into(),
            })
        }
        Action::Type { target, text } => {
            let path = interactive.get(*target).ok_or(SimError::InvalidTarget(*target))?;
            let node = rendered.tree.node_at(path).expect("interactive path is valid");
            if !node.editable {
                return Err(SimError::TypeOnNonEditable(*target));
            }
            let origin = rendered.origins.get(path);
            next.focus = Some(node.resource_id.clone());
            let before = next.vars.clone();
            if let Some(bind) = origin.and_then(|o| o.bind.as_ref()) {
                next.vars.insert(bind.clone(), Value::String(text.clone()));
            }
            match fire_rule(state, &mut next, ActionKind::Type, Some(node), origin, Some(text))? {
                Some(o) => o,
                None if next.vars != before => Outcome::StateChanged,
                None => Outcome::NoOp {
                    reason: "no_binding".into(),
                },
            }
        }
    };
    next.step_counter += 1;
    Ok((next, outcome))
}

fn scroll(next: &mut SimState, direction: ScrollDirection) -> Outcome {
    let Some(list) = next.app.screen(&next.screen).and_then(|s| s.list_region()).cloned() else {
        return Outcome::NoOp {
            reason: "not_scrollable".into(),
        };
    };
    let len = next.vars.get(&list.source).map(|v| items_of(v).len()).unwrap_or(0);
    let offset = next.offsets.get(&next.screen).copied().unwrap_or(0);
    let new_offset = match direction {
        ScrollDirection::Down if offset + list.window < len => offset + list.window,
        ScrollDirection::Down => {
            return Outcome::NoOp {
                reason: "end_of_list".into(),
            }
        }
        ScrollDirection::Up if offset > 0 => offset.saturating_sub(list.window),
        ScrollDirection::Up => {
            return Outcome::NoOp {
                reason: "start_of_list".into(),
            }
        }
    };
    next.offsets.insert(next.screen.clone(), new_offset);
    Outcome::StateChanged
}

/// Fires the first matching rule. `Ok(None)` when nothing matched.
fn fire_rule(
    state: &SimState,
    next: &mut SimState,
    kind: ActionKind,
    node: Option<&UiNode>,
    origin: Option<&NodeOrigin>,
    typed: Option<&str>,
) -> Result<Option<Outcome>, SimError> {
    let app = Arc::clone(&state.app);
    let rule = app.transitions.iter().find(|rule| {
        if rule.source != state.screen || rule.trigger.action != kind {
            return false;
        }
        let scope = Scope {
            vars: &state.vars,
            item: origin.and_then(|o| o.item.as_ref()),
            typed,
            args: None,
        };
        match (&rule.trigger.element, node) {
            (None, _) => true,
            (Some(pred), Some(node)) => predicate_matches(pred, node, &scope),
            (Some(_), None) => false,
        }
    });
    let Some(rule) = rule else {
        return Ok(None);
    };
    let before = next.vars.clone();
    let snapshot = next.vars.clone();
    let scope = Scope {
        vars: &snapshot,
        item: origin.and_then(|o| o.item.as_ref()),
        typed,
        args: None,
    };
    for effect in &rule.effects {
        if let Err(reason) = apply_effect(&mut next.vars, effect, &scope) {
            next.vars = before;
            return Ok(Some(Outcome::NoOp { reason }));
        }
    }
    if rule.destination != state.screen {
        if rule.clear_back_stack {
            next.back_stack.clear();
        } else {
            next.back_stack.push(state.screen.clone());
            if next.back_stack.len() > BACK_STACK_LIMIT {
                next.back_stack.remove(0);
            }
        }
        next.screen = rule.destination.clone();
        next.offsets.remove(&rule.destination);
        next.focus = None;
        return Ok(Some(Outcome::Transitioned {
            from: state.screen.clone(),
            to: rule.destination.clone(),
        }));
    }
    if next.vars != before {
        Ok(Some(Outcome::StateChanged))
    } else {
        Ok(Some(Outcome::NoOp {
            reason: "no_effect".into(),
        }))
    }
}

fn apply_effect(vars: &mut BTreeMap<String, Value>, effect: &Effect, scope: &Scope<'_>) -> Result<(), String> {
    match effect {
        Effect::Set { var, value } => {
            vars.insert(var.clone(), scope.resolve(value));
        }
        Effect::Add { var, amount } => {
            let amount = as_int(&scope.resolve(amount)).ok_or("invalid_amount")?;
            let have = vars.get(var).and_then(as_int).ok_or("invalid_amount")?;
            vars.insert(var.clone(), Value::from(have + amount));
        }
        Effect::Put { var, key, amount } => {
            let amount = as_int(&scope.resolve(amount)).ok_or("invalid_amount")?;
            if amount <= 0 {
                return Err("invalid_amount".into());
            }
            let key = scope.interpolate(key);
            let Some(Value::Object(map)) = vars.get_mut(var) else {
                return Err("not_a_map".into());
            };
            let have = map.get(&key).and_then(as_int).unwrap_or(0);
            map.insert(key, Value::from(have + amount));
        }
        Effect::Remove { var, key } => {
            let key = scope.interpolate(key);
            if let Some(Value::Object(map)) = vars.get_mut(var) {
                map.remove(&key);
            }
        }
        Effect::Clear { var } => {
            let cleared = match vars.get(var) {
                Some(Value::Object(_)) => Value::Object(Default::default()),
                Some(Value::Array(_)) => Value::Array(Vec::new()),
                Some(Value::Number(_)) => Value::from(0),
                _ => Value::String(String::new()),
            };
            vars.insert(var.clone(), cleared);
        }
        Effect::Push { var, value } => {
            let value = scope.resolve(value);
            match vars.get_mut(var) {
                Some(Value::Array(items)) => items.push(value),
                _ => return Err("not_a_list".into()),
            }
        }
    }
    Ok(())
}

/// Evaluates a goal. `predicate` is a declared goal name, optionally with
/// arguments: `cart_contains(item="Latte", qty=2)`.
pub fn check_goal(state: &SimState, predicate: &str) -> Result<bool, SimError> {
    let (name, args) = parse_goal_call(predicate)?;
    let goal = state
        .app
        .goals
        .get(&name)
        .ok_or_else(|| SimError::UnknownPredicate(name.clone()))?;
    for p in &goal.params {
        if !args.contains_key(p) {
            return Err(SimError::GoalArguments {
                predicate: predicate.to_string(),
                message: format!("missing argument {p:?}"),
            });
        }
    }
    if let Some(extra) = args.keys().find(|k| !goal.params.contains(k)) {
        return Err(SimError::GoalArguments {
            predicate: predicate.to_string(),
            message: format!("unexpected argument {extra:?}"),
        });
    }
    let scope = Scope {
        vars: &state.vars,
        item: None,
        typed: None,
        args: Some(&args),
    };
    Ok(eval_condition(&goal.condition, &scope))
}

/// Splits `name(k=v, ...)` into its parts. Values may be quoted.
pub fn parse_goal_call(predicate: &str) -> Result<(String, BTreeMap<String, String>), SimError> {
    let bad = |m: &str| SimError::GoalArguments {
        predicate: predicate.to_string(),
        message: m.to_string(),
    };
    let s = predicate.trim();
    let Some(open) = s.find('(') else {
        return Ok((s.to_string(), BTreeMap::new()));
    };
    let inner = s[open + 1..].strip_suffix(')').ok_or_else(|| bad("missing ')'"))?;
    let mut args = BTreeMap::new();
    for part in split_args(inner) {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (k, v) = part.split_once('=').ok_or_else(|| bad("expected key=value"))?;
        let v = v.trim();
        let v = v
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(v);
        args.insert(k.trim().to_string(), v.to_string());
    }
    Ok((s[..open].trim().to_string(), args))
}

fn split_args(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    for c in s.chars() {
        match c {
            '"' => {
                quoted = !quoted;
                cur.push(c);
            }
            ',' if !quoted => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ui::enumerate_interactive;

    fn tiny_app() -> Arc<AppSpec> {
        let doc = r#"{
          "app_id": "tiny",
          "meta": {"app_name": "Tiny"},
          "start_screen": "home",
          "variables": {"items": ["a","b","c","d","e","f","g","h","i","j"], "picked": "", "n": "1",
                        "cart": {}, "pickup": ""},
          "screens": {
            "home": {"root": {"bounds": [0,0,1080,1920], "children": [
              {"class": "RecyclerView", "bounds": [0,100,1080,900], "list": {
                 "source": "items", "window": 4, "row_height": 200,
                 "item": {"bounds": [0,0,1080,200], "text": "${item}", "id": "row", "clickable": true}}}
            ]}},
            "detail": {"root": {"bounds": [0,0,1080,1920], "children": [
              {"bounds": [0,0,1080,100], "text": "Picked ${picked}"},
              {"class": "EditText", "bounds": [0,100,1080,200], "id": "qty", "editable": true, "bind": "n"},
              {"bounds": [0,200,1080,300], "text": "Add", "id": "add", "clickable": true},
              {"bounds": [0,300,1080,400], "text": "Qty: ${n}"}
            ]}}
          },
          "transitions": [
            {"source": "home", "trigger": {"action": "click", "element": {"id": "row"}},
             "effects": [{"op": "set", "var": "picked", "value": "${item}"}], "destination": "detail"},
            {"source": "detail", "trigger": {"action": "click", "element": {"id": "add"}},
             "effects": [{"op": "put", "var": "cart", "key": "${picked}", "amount": "${n}"}], "destination": "home"}
          ],
          "goals": {
            "cart_contains": {"params": ["item", "qty"], "condition": {"count": {"var": "cart", "key": "${item}", "value": "${qty}"}}},
            "both": {"condition": {"all": [{"count": {"var": "cart", "key": "a", "value": 1}}, {"eq": {"var": "pickup", "value": "takeaway"}}]}}
          }
        }"#;
        Arc::new(load_app_spec(doc).unwrap())
    }

    #[test]
    fn windowing() {
        let app = tiny_app();
        let s = reset(&app);
        let texts = |s: &SimState| {
            enumerate_interactive(&current_tree(s))
                .into_iter()
                .filter(|(_, n)| n.resource_id == "row")
                .map(|(_, n)| n.text.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(texts(&s), ["a", "b", "c", "d"]);
        let (s, o) = apply_action(&s, &Action::Scroll { direction: ScrollDirection::Down }).unwrap();
        assert_eq!(o, Outcome::StateChanged);
        assert_eq!(texts(&s), ["e", "f", "g", "h"]);
        let (s, _) = apply_action(&s, &Action::Scroll { direction: ScrollDirection::Down }).unwrap();
        assert_eq!(texts(&s), ["i", "j"]);
        let (s2, o) = apply_action(&s, &Action::Scroll { direction: ScrollDirection::Down }).unwrap();
        assert_eq!(o, Outcome::NoOp { reason: "end_of_list".into() });
        assert_eq!(s2.offsets, s.offsets);
        assert_eq!(s2.step_counter, 3);
    }

    #[test]
    fn click_type_and_goal() {
        let app = tiny_app();
        let s = reset(&app);
        let (s, o) = apply_action(&s, &Action::Click { target: 2 }).unwrap();
        assert_eq!(o, Outcome::Transitioned { from: "home".into(), to: "detail".into() });
        assert_eq!(s.vars["picked"], "b");
        // index 0 is the qty field, 1 the add button
        let (s, o) = apply_action(&s, &Action::Type { target: 0, text: "2".into() }).unwrap();
        assert_eq!(o, Outcome::StateChanged);
        let tree = current_tree(&s);
        assert!(crate::ui::exposed_texts(&tree).contains(&"Qty: 2".to_string()));
        assert_eq!(
            apply_action(&s, &Action::Type { target: 1, text: "x".into() }),
            Err(SimError::TypeOnNonEditable(1))
        );
        assert_eq!(apply_action(&s, &Action::Click { target: 9 }), Err(SimError::InvalidTarget(9)));
        assert!(!check_goal(&s, "cart_contains(item=\"b\", qty=2)").unwrap());
        let (s, _) = apply_action(&s, &Action::Click { target: 1 }).unwrap();
        assert!(check_goal(&s, "cart_contains(item=\"b\", qty=2)").unwrap());
        assert!(!check_goal(&s, "cart_contains(item=b, qty=1)").unwrap());
        assert_eq!(s.step_counter, 3);
        assert_eq!(s.back_stack, ["home", "detail"]);
        assert!(matches!(check_goal(&s, "nope"), Err(SimError::UnknownPredicate(_))));
        assert!(matches!(check_goal(&s, "cart_contains(item=b)"), Err(SimError::GoalArguments { .. })));
    }

    #[test]
    fn compound_goal_truth_table() {
        let app = tiny_app();
        for (a_qty, pickup) in [(0, ""), (1, ""), (0, "takeaway"), (1, "takeaway")] {
            let mut s = reset(&app);
            if a_qty > 0 {
                s.vars.insert("cart".into(), serde_json::json!({"a": a_qty}));
            }
            s.vars.insert("pickup".into(), Value::String(pickup.into()));
            let expected = a_qty == 1 && pickup == "takeaway";
            assert_eq!(check_goal(&s, "both").unwrap(), expected, "{a_qty} {pickup}");
        }
    }

    #[test]
    fn back_at_root_and_back_pops() {
        let app = tiny_app();
        let s = reset(&app);
        let (s1, o) = apply_action(&s, &Action::Back).unwrap();
        assert_eq!(o, Outcome::NoOp { reason: "at_root".into() });
        assert_eq!(s1.vars, s.vars);
        let (s2, _) = apply_action(&s1, &Action::Click { target: 1 }).unwrap();
        let (s3, o) = apply_action(&s2, &Action::Back).unwrap();
        assert_eq!(o, Outcome::Transitioned { from: "detail".into(), to: "home".into() });
        assert_eq!(s3.vars, s2.vars);
        assert!(s3.back_stack.is_empty());
    }

    #[test]
    fn dangling_destination_reported_by_path() {
        let doc = r#"{"app_id":"x","meta":{"app_name":"X"},"start_screen":"a",
          "screens":{"a":{"root":{"bounds":[0,0,10,10]}}},
          "transitions":[{"source":"a","trigger":{"action":"back"},"destination":"a"},
                         {"source":"a","trigger":{"action":"enter"},"destination":"cartt"}]}"#;
        match load_app_spec(doc) {
            Err(SimError::Spec { path, .. }) => assert_eq!(path, "transitions[1].destination"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_screens_rejected() {
        let doc = r#"{"app_id":"x","meta":{"app_name":"X"},"start_screen":"a","screens":{}}"#;
        match load_app_spec(doc) {
            Err(SimError::Spec { path, .. }) => assert_eq!(path, "screens"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unresolved_template_reference() {
        let doc = r#"{"app_id":"x","meta":{"app_name":"X"},"start_screen":"a",
          "screens":{"a":{"root":{"bounds":[0,0,10,10],"text":"${ghost}"}}}}"#;
        assert!(matches!(load_app_spec(doc), Err(SimError::Spec { .. })));
    }

    #[test]
    fn goal_call_parsing() {
        let (name, args) = parse_goal_call(r#"cart_contains(item="Flat, White", qty=2)"#).unwrap();
        assert_eq!(name, "cart_contains");
        assert_eq!(args["item"], "Flat, White");
        assert_eq!(args["qty"], "2");
    }
}
