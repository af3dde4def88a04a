//! UI hierarchy snapshots and the uiautomator-style XML dialect they are
//! dumped to.
//!
//! A [`UiTree`] is immutable once built. Nodes are addressed either by
//! reference (when borrowed from the tree) or by a [`NodePath`], the list of
//! child indices from the root. Document order is pre-order depth-first.

use std::fmt;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of the virtual screen all bounds live in.
pub const SCREEN_WIDTH: u32 = 1080;
/// Height of the virtual screen all bounds live in.
pub const SCREEN_HEIGHT: u32 = 1920;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UiError {
    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("node is not part of this tree")]
    NodeNotInTree,
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
}

impl UiError {
    fn parse(position: u64, message: impl Into<String>) -> Self {
        UiError::Parse {
            position: position as usize,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bounds {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

impl Bounds {
    pub fn new(left: u32, top: u32, right: u32, bottom: u32) -> Result<Self, UiError> {
        if left >= right || top >= bottom {
            return Err(UiError::InvalidBounds(format!(
                "[{left},{top}][{right},{bottom}] is empty"
            )));
        }
        Ok(Self {
            left,
            top,
            right,
            bottom,
        })
    }

    /// The full virtual screen.
    pub fn screen() -> Self {
        Self {
            left: 0,
            top: 0,
            right: SCREEN_WIDTH,
            bottom: SCREEN_HEIGHT,
        }
    }

    pub fn contains(&self, other: &Bounds) -> bool {
        self.left <= other.left
            && self.top <= other.top
            && self.right >= other.right
            && self.bottom >= other.bottom
    }

    pub fn width(&self) -> u32 {
        self.right - self.left
    }

    pub fn height(&self) -> u32 {
        self.bottom - self.top
    }

    /// Parses the `[l,t][r,b]` form.
    pub fn parse(s: &str) -> Result<Self, UiError> {
        let bad = || UiError::InvalidBounds(format!("expected \"[l,t][r,b]\", got {s:?}"));
        let rest = s.trim().strip_prefix('[').ok_or_else(bad)?;
        let (first, rest) = rest.split_once("][").ok_or_else(bad)?;
        let second = rest.strip_suffix(']').ok_or_else(bad)?;
        let pair = |p: &str| -> Result<(u32, u32), UiError> {
            let (a, b) = p.split_once(',').ok_or_else(bad)?;
            let a = a.trim().parse::<u32>().map_err(|_| bad())?;
            let b = b.trim().parse::<u32>().map_err(|_| bad())?;
            Ok((a, b))
        };
        let (left, top) = pair(first)?;
        let (right, bottom) = pair(second)?;
        Bounds::new(left, top, right, bottom)
    }
}

impl fmt::Display for Bounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{},{}][{},{}]",
            self.left, self.top, self.right, self.bottom
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UiNode {
    pub node_class: String,
    pub text: String,
    pub resource_id: String,
    pub bounds: Bounds,
    pub clickable: bool,
    pub editable: bool,
    pub scrollable: bool,
    /// Natural-language description standing in for what the element looks
    /// like. Only consulted when text and id cannot single the node out.
    pub annotation: String,
    pub children: Vec<UiNode>,
}

impl UiNode {
    pub fn new(node_class: impl Into<String>, bounds: Bounds) -> Self {
        Self {
            node_class: node_class.into(),
            text: String::new(),
            resource_id: String::new(),
            bounds,
            clickable: false,
            editable: false,
            scrollable: false,
            annotation: String::new(),
            children: Vec::new(),
        }
    }

    pub fn is_interactive(&self) -> bool {
        self.clickable || self.editable || self.scrollable
    }

    /// Last dotted segment of the class, e.g. `ImageButton` for
    /// `android.widget.ImageButton`.
    pub fn short_class(&self) -> &str {
        self.node_class
            .rsplit('.')
            .next()
            .unwrap_or(&self.node_class)
    }

    /// Copy of this node without its subtree.
    pub fn shallow(&self) -> UiNode {
        UiNode {
            children: Vec::new(),
            ..self.clone()
        }
    }
}

/// Child indices leading from the root to a node. The root is `[]`.
pub type NodePath = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UiTree {
    pub screen_id: String,
    pub root: UiNode,
}

impl UiTree {
    pub fn new(screen_id: impl Into<String>, root: UiNode) -> Self {
        Self {
            screen_id: screen_id.into(),
            root,
        }
    }

    /// All nodes with their paths, in document order.
    pub fn walk(&self) -> Vec<(NodePath, &UiNode)> {
        fn go<'a>(node: &'a UiNode, path: &mut NodePath, out: &mut Vec<(NodePath, &'a UiNode)>) {
            out.push((path.clone(), node));
            for (i, child) in node.children.iter().enumerate() {
                path.push(i);
                go(child, path, out);
                path.pop();
            }
        }
        let mut out = Vec::new();
        go(&self.root, &mut Vec::new(), &mut out);
        out
    }

    pub fn node_at(&self, path: &[usize]) -> Option<&UiNode> {
        let mut node = &self.root;
        for &i in path {
            node = node.children.get(i)?;
        }
        Some(node)
    }

    /// Finds the path of `node`: by address when it was borrowed from this
    /// tree, otherwise the first structurally equal node.
    pub fn locate(&self, node: &UiNode) -> Option<NodePath> {
        let all = self.walk();
        if let Some((path, _)) = all.iter().find(|(_, n)| std::ptr::eq(*n, node)) {
            return Some(path.clone());
        }
        all.into_iter()
            .find(|(_, n)| *n == node)
            .map(|(path, _)| path)
    }

    /// Like [`UiTree::locate`] but ignores children, for shallow node copies.
    pub fn locate_shallow(&self, node: &UiNode) -> Option<NodePath> {
        self.walk()
            .into_iter()
            .find(|(_, n)| n.shallow() == node.shallow())
            .map(|(path, _)| path)
    }

    /// Paths of interactive nodes; position in the result is the public
    /// element index.
    pub fn interactive_paths(&self) -> Vec<NodePath> {
        self.walk()
            .into_iter()
            .filter(|(_, n)| n.is_interactive())
            .map(|(p, _)| p)
            .collect()
    }

    pub fn to_xml(&self) -> String {
        let mut out = String::new();
        out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        out.push_str(&format!(
            "<hierarchy screen=\"{}\">\n",
            quick_xml::escape::escape(self.screen_id.as_str())
        ));
        write_node(&self.root, 1, &mut out);
        out.push_str("</hierarchy>\n");
        out
    }
}

fn write_node(node: &UiNode, depth: usize, out: &mut String) {
    use quick_xml::escape::escape;
    let indent = "  ".repeat(depth);
    out.push_str(&format!(
        "{indent}<node node-class=\"{}\" text=\"{}\" resource-id=\"{}\" bounds=\"{}\" clickable=\"{}\" editable=\"{}\" scrollable=\"{}\" annotation=\"{}\"",
        escape(node.node_class.as_str()),
        escape(node.text.as_str()),
        escape(node.resource_id.as_str()),
        node.bounds,
        node.clickable,
        node.editable,
        node.scrollable,
        escape(node.annotation.as_str()),
    ));
    if node.children.is_empty() {
        out.push_str("/>\n");
    } else {
        out.push_str(">\n");
        for child in &node.children {
            write_node(child, depth + 1, out);
        }
        out.push_str(&format!("{indent}</node>\n"));
    }
}

/// Parses a hierarchy dump.
///
/// The document is either a `<hierarchy>` element wrapping exactly one root
/// `<node>`, or a bare `<node>`. Missing attributes default to empty strings
/// and `false`; a node without `bounds` inherits its parent's (the root
/// defaults to the full screen). `class` is accepted as an alias of
/// `node-class`.
pub fn parse_ui_xml(document: &str) -> Result<UiTree, UiError> {
    let mut reader = Reader::from_str(document);
    reader.config_mut().trim_text(true);

    let mut screen_id = String::new();
    let mut in_hierarchy = false;
    let mut hierarchy_closed = false;
    let mut stack: Vec<UiNode> = Vec::new();
    let mut root: Option<UiNode> = None;

    loop {
        let start = reader.buffer_position();
        let event = reader
            .read_event()
            .map_err(|e| UiError::parse(reader.error_position(), e.to_string()))?;
        match event {
            Event::Start(e) if e.name().as_ref() == b"hierarchy" => {
                open_hierarchy(&e, start, &stack, &root, in_hierarchy, &mut screen_id)?;
                in_hierarchy = true;
            }
            Event::Empty(e) if e.name().as_ref() == b"hierarchy" => {
                open_hierarchy(&e, start, &stack, &root, in_hierarchy, &mut screen_id)?;
                hierarchy_closed = true;
            }
            Event::Start(e) => {
                let node = node_from_element(&e, start, stack.last().map(|p| p.bounds))?;
                check_placement(&stack, &root, hierarchy_closed, start)?;
                stack.push(node);
            }
            Event::Empty(e) => {
                let node = node_from_element(&e, start, stack.last().map(|p| p.bounds))?;
                check_placement(&stack, &root, hierarchy_closed, start)?;
                attach(node, &mut stack, &mut root);
            }
            Event::End(e) => {
                if e.name().as_ref() == b"hierarchy" {
                    if !stack.is_empty() {
                        return Err(UiError::parse(start, "unclosed <node> inside <hierarchy>"));
                    }
                    in_hierarchy = false;
                    hierarchy_closed = true;
                } else {
                    let node = stack
                        .pop()
                        .ok_or_else(|| UiError::parse(start, "unexpected closing tag"))?;
                    attach(node, &mut stack, &mut root);
                }
            }
            Event::Text(t) => {
                let raw = String::from_utf8_lossy(t.as_ref()).into_owned();
                if !raw.trim().is_empty() {
                    return Err(UiError::parse(start, "unexpected character data"));
                }
            }
            Event::Eof => {
                if !stack.is_empty() || in_hierarchy {
                    return Err(UiError::parse(
                        document.len() as u64,
                        "unexpected end of input: unclosed element",
                    ));
                }
                break;
            }
            Event::Decl(_) | Event::Comment(_) | Event::PI(_) | Event::DocType(_) => {}
            Event::CData(_) => return Err(UiError::parse(start, "unexpected CDATA")),
            _ => {}
        }
    }

    let root = root.ok_or_else(|| UiError::parse(document.len() as u64, "document has no <node>"))?;
    Ok(UiTree { screen_id, root })
}

fn open_hierarchy(
    e: &BytesStart<'_>,
    at: u64,
    stack: &[UiNode],
    root: &Option<UiNode>,
    in_hierarchy: bool,
    screen_id: &mut String,
) -> Result<(), UiError> {
    if in_hierarchy || root.is_some() || !stack.is_empty() {
        return Err(UiError::parse(at, "unexpected <hierarchy>"));
    }
    for attr in e.attributes() {
        let attr = attr.map_err(|err| UiError::parse(at, err.to_string()))?;
        if matches!(attr.key.as_ref(), b"screen" | b"screen-id") {
            *screen_id = attr
                .unescape_value()
                .map_err(|err| UiError::parse(at, err.to_string()))?
                .into_owned();
        }
    }
    Ok(())
}

fn check_placement(
    stack: &[UiNode],
    root: &Option<UiNode>,
    hierarchy_closed: bool,
    at: u64,
) -> Result<(), UiError> {
    if stack.is_empty() && (root.is_some() || hierarchy_closed) {
        return Err(UiError::parse(at, "more than one root <node>"));
    }
    Ok(())
}

fn attach(node: UiNode, stack: &mut [UiNode], root: &mut Option<UiNode>) {
    match stack.last_mut() {
        Some(parent) => parent.children.push(node),
        None => *root = Some(node),
    }
}

fn node_from_element(
    e: &BytesStart<'_>,
    at: u64,
    parent_bounds: Option<Bounds>,
) -> Result<UiNode, UiError> {
    if e.name().as_ref() != b"node" {
        return Err(UiError::parse(
            at,
            format!(
                "unexpected element <{}>",
                String::from_utf8_lossy(e.name().as_ref())
            ),
        ));
    }
    let mut node = UiNode::new("", parent_bounds.unwrap_or_else(Bounds::screen));
    for attr in e.attributes() {
        let attr = attr.map_err(|err| UiError::parse(at, err.to_string()))?;
        let value = attr
            .unescape_value()
            .map_err(|err| UiError::parse(at, err.to_string()))?
            .into_owned();
        let flag = |v: &str| -> Result<bool, UiError> {
            match v {
                "true" => Ok(true),
                "false" | "" => Ok(false),
                other => Err(UiError::parse(at, format!("invalid boolean {other:?}"))),
            }
        };
        match attr.key.as_ref() {
            b"node-class" | b"class" => node.node_class = value,
            b"text" => node.text = value,
            b"resource-id" => node.resource_id = value,
            b"bounds" => {
                node.bounds = Bounds::parse(&value).map_err(|err| UiError::parse(at, err.to_string()))?
            }
            b"clickable" => node.clickable = flag(&value)?,
            b"editable" => node.editable = flag(&value)?,
            b"scrollable" => node.scrollable = flag(&value)?,
            b"annotation" => node.annotation = value,
            _ => {}
        }
    }
    if let Some(parent) = parent_bounds {
        if !parent.contains(&node.bounds) {
            return Err(UiError::parse(
                at,
                format!("bounds {} escape parent bounds {}", node.bounds, parent),
            ));
        }
    }
    Ok(node)
}

/// Interactive nodes (clickable, editable or scrollable) indexed in
/// document order. The index is the element id shown to demonstrators.
pub fn enumerate_interactive(tree: &UiTree) -> Vec<(usize, &UiNode)> {
    tree.walk()
        .into_iter()
        .map(|(_, n)| n)
        .filter(|n| n.is_interactive())
        .enumerate()
        .collect()
}

/// Every non-blank text on screen, document order, duplicates kept.
pub fn exposed_texts(tree: &UiTree) -> Vec<String> {
    tree.walk()
        .into_iter()
        .filter(|(_, n)| !n.text.trim().is_empty())
        .map(|(_, n)| n.text.clone())
        .collect()
}

/// Texts near `node`: sibling subtrees within `radius` positions (document
/// order), then ancestor texts up to `radius` levels, nearest ancestor first.
pub fn surrounding_context(tree: &UiTree, node: &UiNode, radius: usize) -> Result<Vec<String>, UiError> {
    let path = tree.locate(node).ok_or(UiError::NodeNotInTree)?;
    surrounding_context_at(tree, &path, radius)
}

pub fn surrounding_context_at(tree: &UiTree, path: &[usize], radius: usize) -> Result<Vec<String>, UiError> {
    tree.node_at(path).ok_or(UiError::NodeNotInTree)?;
    let mut out = Vec::new();
    let Some((&own, parent_path)) = path.split_last() else {
        return Ok(out);
    };
    let parent = tree.node_at(parent_path).ok_or(UiError::NodeNotInTree)?;
    let lo = own.saturating_sub(radius);
    let hi = (own + radius).min(parent.children.len().saturating_sub(1));
    for (i, sibling) in parent.children.iter().enumerate().take(hi + 1).skip(lo) {
        if i != own {
            collect_texts(sibling, &mut out);
        }
    }
    for level in 1..=radius.min(path.len()) {
        let ancestor = tree
            .node_at(&path[..path.len() - level])
            .ok_or(UiError::NodeNotInTree)?;
        if !ancestor.text.trim().is_empty() {
            out.push(ancestor.text.clone());
        }
    }
    Ok(out)
}

fn collect_texts(node: &UiNode, out: &mut Vec<String>) {
    if !node.text.trim().is_empty() {
        out.push(node.text.clone());
    }
    for child in &node.children {
        collect_texts(child, out);
    }
}

/// What a node looks like in words: its annotation, or when that is empty a
/// phrase built from its class and its nearest context text, such as
/// `ImageButton near 'Mocha'`.
pub fn node_description(tree: &UiTree, path: &[usize]) -> String {
    let Some(node) = tree.node_at(path) else {
        return String::new();
    };
    if !node.annotation.trim().is_empty() {
        return node.annotation.clone();
    }
    let context = surrounding_context_at(tree, path, 1).unwrap_or_default();
    match context.first() {
        Some(near) => format!("{} near '{}'", node.short_class(), near),
        None => node.short_class().to_string(),
    }
}

/// Serde adapter storing a [`UiTree`] as its XML dump.
pub mod xml_string {
    use super::{parse_ui_xml, UiTree};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tree: &UiTree, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&tree.to_xml())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<UiTree, D::Error> {
        let text = String::deserialize(d)?;
        parse_ui_xml(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(class: &str, text: &str, b: [u32; 4]) -> UiNode {
        let mut n = UiNode::new(class, Bounds::new(b[0], b[1], b[2], b[3]).unwrap());
        n.text = text.into();
        n
    }

    #[test]
    fn single_node_document() {
        let tree = parse_ui_xml(
            r#"<node text="Add" resource-id="btn_add" bounds="[0,0][100,50]" clickable="true"/>"#,
        )
        .unwrap();
        assert_eq!(tree.root.text, "Add");
        assert_eq!(tree.root.resource_id, "btn_add");
        assert!(tree.root.clickable);
        assert!(!tree.root.editable);
        assert_eq!(tree.root.bounds, Bounds::new(0, 0, 100, 50).unwrap());
        assert!(tree.root.children.is_empty());
    }

    #[test]
    fn unclosed_node_errors_at_end_of_input() {
        let doc = r#"<node text="x">"#;
        match parse_ui_xml(doc) {
            Err(UiError::Parse { position, .. }) => assert_eq!(position, doc.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_bounds_rejected() {
        for bad in ["[0,0][100]", "0,0,10,10", "[10,0][5,20]", "[0,-1][5,5]", "[a,0][5,5]"] {
            let doc = format!(r#"<node bounds="{bad}"/>"#);
            assert!(
                matches!(parse_ui_xml(&doc), Err(UiError::Parse { .. })),
                "{bad} accepted"
            );
        }
    }

    #[test]
    fn missing_attributes_default() {
        let tree = parse_ui_xml(
            r#"<hierarchy screen="s"><node><node text="a" bounds="[0,0][10,10]"/></node></hierarchy>"#,
        )
        .unwrap();
        assert_eq!(tree.screen_id, "s");
        assert_eq!(tree.root.bounds, Bounds::screen());
        assert_eq!(tree.root.text, "");
        assert!(!tree.root.clickable);
        assert_eq!(tree.root.children[0].text, "a");
    }

    #[test]
    fn child_outside_parent_rejected() {
        let doc = r#"<node bounds="[0,0][10,10]"><node bounds="[0,0][20,5]"/></node>"#;
        assert!(parse_ui_xml(doc).is_err());
    }

    #[test]
    fn two_roots_rejected() {
        let doc = r#"<hierarchy><node/><node/></hierarchy>"#;
        assert!(parse_ui_xml(doc).is_err());
        assert!(parse_ui_xml("<hierarchy/>").is_err());
        assert!(parse_ui_xml("").is_err());
    }

    #[test]
    fn entities_round_trip() {
        let mut root = UiNode::new("View", Bounds::screen());
        root.text = "Fish & \"Chips\" <large>".into();
        let tree = UiTree::new("s&1", root);
        let again = parse_ui_xml(&tree.to_xml()).unwrap();
        assert_eq!(again, tree);
    }

    #[test]
    fn exposed_texts_drops_blank() {
        let mut root = UiNode::new("List", Bounds::screen());
        root.children = vec![
            leaf("T", "Americano", [0, 0, 10, 10]),
            leaf("T", "Latte", [0, 10, 10, 20]),
            leaf("T", "", [0, 20, 10, 30]),
            leaf("T", "   ", [0, 30, 10, 40]),
        ];
        let tree = UiTree::new("m", root);
        assert_eq!(exposed_texts(&tree), vec!["Americano", "Latte"]);
    }

    #[test]
    fn root_has_no_context() {
        let tree = UiTree::new("m", UiNode::new("Frame", Bounds::screen()));
        assert!(surrounding_context(&tree, &tree.root, 1).unwrap().is_empty());
    }

    #[test]
    fn context_of_foreign_node() {
        let tree = UiTree::new("m", UiNode::new("Frame", Bounds::screen()));
        let stranger = leaf("X", "nope", [1, 1, 2, 2]);
        assert_eq!(
            surrounding_context(&tree, &stranger, 1),
            Err(UiError::NodeNotInTree)
        );
    }

    #[test]
    fn description_prefers_annotation() {
        let mut root = UiNode::new("Row", Bounds::screen());
        let mut btn = leaf("android.widget.ImageButton", "", [500, 0, 600, 100]);
        root.children = vec![leaf("TextView", "Mocha", [0, 0, 400, 100]), btn.clone()];
        let tree = UiTree::new("m", root.clone());
        assert_eq!(node_description(&tree, &[1]), "ImageButton near 'Mocha'");
        btn.annotation = "red plus button".into();
        root.children[1] = btn;
        let tree = UiTree::new("m", root);
        assert_eq!(node_description(&tree, &[1]), "red plus button");
    }
}
