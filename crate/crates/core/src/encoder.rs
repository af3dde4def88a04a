//! Recording demonstrations and encoding them into selector-bearing steps.
//!
//! An [`ActionEvent`] snapshots the screen *before* the action together with
//! the touched element. [`encode`] turns each event into an [`EncodedStep`]
//! carrying the element's text, id, surrounding texts and, only when text
//! and id are ambiguous on that screen, a visual description.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mapping::MappingConfig;
use crate::sim::{apply_action, current_tree, reset, Action, ActionKind, AppSpec, ScrollDirection, SimError, SimState};
use crate::ui::{self, exposed_texts, node_description, surrounding_context_at, NodePath, UiNode, UiTree};

/// Radius used for the recorded surrounding context.
pub const SURROUND_RADIUS: usize = 2;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("step {0}: element has no text, id or visual description")]
    Encoding(usize),
    #[error("step {0}: recorded element is not present in its screen snapshot")]
    ElementNotInTree(usize),
    #[error("visual describer unavailable: {0}")]
    DescriberUnavailable(String),
    #[error("demonstration has no events")]
    EmptyDemonstration,
    #[error("demonstration log: {0}")]
    Log(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionEvent {
    pub action: Action,
    pub action_type: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<UiNode>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub typed_text: Option<String>,
    #[serde(with = "ui::xml_string")]
    pub pre_tree: UiTree,
}

impl ActionEvent {
    /// Path of the recorded element inside `pre_tree`.
    pub fn element_path(&self) -> Option<NodePath> {
        self.element.as_ref().and_then(|e| self.pre_tree.locate(e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub demo_id: String,
    pub app_id: String,
    pub instruction: String,
    pub events: Vec<ActionEvent>,
}

/// What the demonstrator did, before any screen snapshots are attached.
/// This is the headless recording format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoScript {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo_id: Option<String>,
    pub app_id: String,
    pub instruction: String,
    pub actions: Vec<Action>,
}

impl DemoScript {
    /// The explicit id, or one derived from the content so identical
    /// recordings get identical ids.
    pub fn resolved_id(&self) -> String {
        self.demo_id
            .clone()
            .unwrap_or_else(|| derive_demo_id(&self.app_id, &self.instruction, &self.actions))
    }
}

pub fn derive_demo_id(app_id: &str, instruction: &str, actions: &[Action]) -> String {
    let mut h = Sha256::new();
    h.update(app_id.as_bytes());
    h.update([0]);
    h.update(instruction.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(actions).expect("actions serialize"));
    let digest = h.finalize();
    format!("demo-{}", &hex::encode(digest)[..12])
}

/// Captures an event for `action` on the current screen without applying it.
pub fn record_event(state: &SimState, action: &Action) -> Result<ActionEvent, SimError> {
    let pre_tree = current_tree(state);
    let mut metadata = BTreeMap::new();
    let element = match action.target() {
        Some(index) => {
            let paths = pre_tree.interactive_paths();
            let path = paths.get(index).ok_or(SimError::InvalidTarget(index))?;
            let node = pre_tree.node_at(path).expect("interactive path").clone();
            if matches!(action, Action::Type { .. }) && !node.editable {
                return Err(SimError::TypeOnNonEditable(index));
            }
            metadata.insert("text".into(), node.text.clone());
            metadata.insert("resource_id".into(), node.resource_id.clone());
            metadata.insert("bounds".into(), node.bounds.to_string());
            metadata.insert("annotation".into(), node.annotation.clone());
            metadata.insert("class".into(), node.node_class.clone());
            metadata.insert("index".into(), index.to_string());
            Some(node)
        }
        None => None,
    };
    if let Action::Scroll { direction } = action {
        metadata.insert("direction".into(), direction.to_string());
    }
    let typed_text = match action {
        Action::Type { text, .. } => Some(text.clone()),
        _ => None,
    };
    Ok(ActionEvent {
        action: action.clone(),
        action_type: action.kind(),
        element,
        metadata,
        typed_text,
        pre_tree,
    })
}

/// Replays a script against a fresh session, recording every event.
pub fn record_script(app: &Arc<AppSpec>, script: &DemoScript) -> Result<(Demonstration, SimState), EncodeError> {
    if script.app_id != app.app_id {
        return Err(EncodeError::Log(format!(
            "script targets app {:?} but {:?} was supplied",
            script.app_id, app.app_id
        )));
    }
    let mut state = reset(app);
    let mut events = Vec::with_capacity(script.actions.len());
    for action in &script.actions {
        events.push(record_event(&state, action)?);
        state = apply_action(&state, action)?.0;
    }
    Ok((
        Demonstration {
            demo_id: script.resolved_id(),
            app_id: script.app_id.clone(),
            instruction: script.instruction.clone(),
            events,
        },
        state,
    ))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum VisualDescriberConfig {
    /// Uses the simulator's annotation, or a phrase built from the class and
    /// nearby text when the annotation is empty.
    #[default]
    AnnotationStub,
    Remote {
        endpoint: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    5_000
}

pub fn describe_visual(tree: &UiTree, path: &[usize], config: &VisualDescriberConfig) -> Result<String, EncodeError> {
    match config {
        VisualDescriberConfig::AnnotationStub => Ok(node_description(tree, path)),
        VisualDescriberConfig::Remote { endpoint, timeout_ms } => {
            let node = tree
                .node_at(path)
                .ok_or_else(|| EncodeError::DescriberUnavailable("node not in tree".into()))?;
            let body = serde_json::json!({
                "node": node.shallow(),
                "context": surrounding_context_at(tree, path, 1).unwrap_or_default(),
                "screen": tree.to_xml(),
            });
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_millis(*timeout_ms)))
                .build()
                .into();
            let mut response = agent
                .post(endpoint)
                .send_json(&body)
                .map_err(|e| EncodeError::DescriberUnavailable(e.to_string()))?;
            let reply: serde_json::Value = response
                .body_mut()
                .read_json()
                .map_err(|e| EncodeError::DescriberUnavailable(e.to_string()))?;
            reply
                .get("description")
                .and_then(|d| d.as_str())
                .map(str::to_string)
                .ok_or_else(|| EncodeError::DescriberUnavailable("reply has no \"description\"".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedStep {
    pub action_type: ActionKind,
    /// Screen the step was performed on.
    pub screen: String,
    pub text: String,
    pub id: String,
    pub visual: String,
    pub exposed: Vec<String>,
    pub surrounding: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub typed_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scroll_direction: Option<ScrollDirection>,
}

impl EncodedStep {
    pub fn selector(&self) -> crate::mapping::Selector {
        crate::mapping::Selector {
            text: self.text.clone(),
            id: self.id.clone(),
            visual: self.visual.clone(),
            surrounding: self.surrounding.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedDemo {
    pub demo_id: String,
    pub app_id: String,
    pub instruction: String,
    pub steps: Vec<EncodedStep>,
}

/// Number of interactive nodes agreeing with every non-empty field of
/// (text, id). Both empty counts as zero matches.
pub fn text_id_matches(tree: &UiTree, text: &str, id: &str) -> usize {
    if text.trim().is_empty() && id.trim().is_empty() {
        return 0;
    }
    let norm = MappingConfig::default();
    let want = norm.normalize(text);
    tree.interactive_paths()
        .iter()
        .filter_map(|p| tree.node_at(p))
        .filter(|n| {
            (text.trim().is_empty() || norm.normalize(&n.text) == want) && (id.trim().is_empty() || n.resource_id == id)
        })
        .count()
}

pub fn encode(demo: &Demonstration, config: &VisualDescriberConfig) -> Result<EncodedDemo, EncodeError> {
    if demo.events.is_empty() {
        return Err(EncodeError::EmptyDemonstration);
    }
    let mut steps = Vec::with_capacity(demo.events.len());
    for (i, event) in demo.events.iter().enumerate() {
        let tree = &event.pre_tree;
        let exposed = exposed_texts(tree);
        let scroll_direction = match &event.action {
            Action::Scroll { direction } => Some(*direction),
            _ => None,
        };
        let Some(element) = &event.element else {
            steps.push(EncodedStep {
                action_type: event.action_type,
                screen: tree.screen_id.clone(),
                text: String::new(),
                id: String::new(),
                visual: String::new(),
                exposed,
                surrounding: Vec::new(),
                typed_text: event.typed_text.clone(),
                scroll_direction,
            });
            continue;
        };
        let path = tree.locate(element).ok_or(EncodeError::ElementNotInTree(i))?;
        let text = event.metadata.get("text").cloned().unwrap_or_else(|| element.text.clone());
        let id = event
            .metadata
            .get("resource_id")
            .cloned()
            .unwrap_or_else(|| element.resource_id.clone());
        let visual = if text_id_matches(tree, &text, &id) == 1 {
            String::new()
        } else {
            describe_visual(tree, &path, config)?
        };
        if text.trim().is_empty() && id.trim().is_empty() && visual.trim().is_empty() {
            return Err(EncodeError::Encoding(i));
        }
        steps.push(EncodedStep {
            action_type: event.action_type,
            screen: tree.screen_id.clone(),
            text,
            id,
            visual,
            exposed,
            surrounding: surrounding_context_at(tree, &path, SURROUND_RADIUS).unwrap_or_default(),
            typed_text: event.typed_text.clone(),
            scroll_direction,
        });
    }
    Ok(EncodedDemo {
        demo_id: demo.demo_id.clone(),
        app_id: demo.app_id.clone(),
        instruction: demo.instruction.clone(),
        steps,
    })
}

#[derive(Serialize, Deserialize)]
struct LogHeader {
    demo_id: String,
    app_id: String,
    instruction: String,
}

/// Writes the demonstration as JSON lines: a header line, then one
/// [`ActionEvent`] per line.
pub fn write_demo_log(demo: &Demonstration, mut out: impl Write) -> std::io::Result<()> {
    let header = LogHeader {
        demo_id: demo.demo_id.clone(),
        app_id: demo.app_id.clone(),
        instruction: demo.instruction.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for event in &demo.events {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_demo_log(input: impl BufRead) -> Result<Demonstration, EncodeError> {
    let mut lines = input.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
    let (_, first) = lines.next().ok_or_else(|| EncodeError::Log("empty log".into()))?;
    let first = first.map_err(|e| EncodeError::Log(e.to_string()))?;
    let header: LogHeader = serde_json::from_str(&first).map_err(|e| EncodeError::Log(format!("line 1: {e}")))?;
    let mut events = Vec::new();
    for (n, line) in lines {
        let line = line.map_err(|e| EncodeError::Log(e.to_string()))?;
        let event: ActionEvent =
            serde_json::from_str(&line).map_err(|e| EncodeError::Log(format!("line {}: {e}", n + 1)))?;
        events.push(event);
    }
    Ok(Demonstration {
        demo_id: header.demo_id,
        app_id: header.app_id,
        instruction: header.instruction,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ui::{parse_ui_xml, Bounds};

    fn five_adds() -> UiTree {
        let mut xml = String::from(r#"<hierarchy screen="menu"><node bounds="[0,0][1080,1920]">"#);
        for (i, d) in ["Americano", "Latte", "Mocha", "Chai", "Espresso"].iter().enumerate() {
            let top = i * 200;
            xml.push_str(&format!(
                r#"<node bounds="[0,{top}][1080,{b}]"><node text="{d}" bounds="[0,{top}][500,{b}]"/><node text="Add" resource-id="btn_add" clickable="true" annotation="plus button next to {d}" bounds="[800,{top}][1080,{b}]"/></node>"#,
                b = top + 200
            ));
        }
        xml.push_str(r#"<node text="Add to Order" resource-id="btn_order" clickable="true" bounds="[0,1800][1080,1920]"/></node></hierarchy>"#);
        parse_ui_xml(&xml).unwrap()
    }

    fn click_event(tree: &UiTree, index: usize) -> ActionEvent {
        let path = &tree.interactive_paths()[index];
        let node = tree.node_at(path).unwrap().clone();
        ActionEvent {
            action: Action::Click { target: index },
            action_type: ActionKind::Click,
            metadata: BTreeMap::from([
                ("text".to_string(), node.text.clone()),
                ("resource_id".to_string(), node.resource_id.clone()),
            ]),
            element: Some(node),
            typed_text: None,
            pre_tree: tree.clone(),
        }
    }

    fn demo(events: Vec<ActionEvent>) -> Demonstration {
        Demonstration {
            demo_id: "d".into(),
            app_id: "a".into(),
            instruction: "do it".into(),
            events,
        }
    }

    #[test]
    fn unique_element_skips_visual() {
        let tree = five_adds();
        let enc = encode(&demo(vec![click_event(&tree, 5)]), &VisualDescriberConfig::default()).unwrap();
        let step = &enc.steps[0];
        assert_eq!((step.text.as_str(), step.id.as_str(), step.visual.as_str()), ("Add to Order", "btn_order", ""));
    }

    #[test]
    fn ambiguous_element_gets_visual() {
        let tree = five_adds();
        let enc = encode(&demo(vec![click_event(&tree, 1)]), &VisualDescriberConfig::default()).unwrap();
        assert_eq!(enc.steps[0].visual, "plus button next to Latte");
        assert_eq!(enc.steps[0].surrounding, vec!["Latte".to_string()]);
    }

    #[test]
    fn synthesized_description_when_unannotated() {
        let tree = parse_ui_xml(
            r#"<node bounds="[0,0][1080,1920]"><node text="Mocha" bounds="[0,0][500,100]"/><node node-class="ImageButton" clickable="true" bounds="[600,0][700,100]"/></node>"#,
        )
        .unwrap();
        let enc = encode(&demo(vec![click_event(&tree, 0)]), &VisualDescriberConfig::default()).unwrap();
        assert_eq!(enc.steps[0].visual, "ImageButton near 'Mocha'");
    }

    #[test]
    fn elementless_and_empty() {
        let tree = five_adds();
        let enter = ActionEvent {
            action: Action::Enter,
            action_type: ActionKind::Enter,
            element: None,
            metadata: BTreeMap::new(),
            typed_text: None,
            pre_tree: tree.clone(),
        };
        let enc = encode(&demo(vec![enter]), &VisualDescriberConfig::default()).unwrap();
        assert_eq!(enc.steps[0].action_type, ActionKind::Enter);
        assert_eq!(enc.steps[0].exposed.len(), 11);
        assert!(matches!(encode(&demo(vec![]), &VisualDescriberConfig::default()), Err(EncodeError::EmptyDemonstration)));
    }

    #[test]
    fn blank_element_is_an_encoding_error() {
        let mut root = UiNode::new("Frame", Bounds::screen());
        let mut blank = UiNode::new("", Bounds::new(0, 0, 10, 10).unwrap());
        blank.clickable = true;
        root.children.push(blank);
        let tree = UiTree::new("s", root);
        assert!(matches!(
            encode(&demo(vec![click_event(&tree, 0)]), &VisualDescriberConfig::default()),
            Err(EncodeError::Encoding(0))
        ));
    }

    #[test]
    fn remote_describer_down() {
        let tree = five_adds();
        let config = VisualDescriberConfig::Remote {
            endpoint: "http://127.0.0.1:9/describe".into(),
            timeout_ms: 500,
        };
        assert!(matches!(describe_visual(&tree, &[0, 0, 1], &config), Err(EncodeError::DescriberUnavailable(_))));
    }

    #[test]
    fn log_round_trip() {
        let tree = five_adds();
        let d = demo(vec![click_event(&tree, 2), click_event(&tree, 5)]);
        let mut buf = Vec::new();
        write_demo_log(&d, &mut buf).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 3);
        assert_eq!(read_demo_log(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn derived_ids_are_stable() {
        let a = derive_demo_id("app", "x", &[Action::Enter]);
        assert_eq!(a, derive_demo_id("app", "x", &[Action::Enter]));
        assert_ne!(a, derive_demo_id("app", "x", &[Action::Back]));
        assert!(a.starts_with("demo-") && a.len() == 17);
    }
}
