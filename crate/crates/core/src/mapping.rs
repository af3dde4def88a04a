//! Resolving a selector against a live hierarchy.
//!
//! [`map_step`] runs a cascade: exact text+id, unique id, unique text, then
//! surrounding-context disambiguation among the survivors, and finally a
//! weighted blend of every channel over all interactive nodes that must
//! clear `accept_threshold`.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ui::{node_description, surrounding_context_at, NodePath, UiNode, UiTree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappingWeights {
    pub text: f64,
    pub id: f64,
    pub surround: f64,
    pub visual: f64,
}

impl Default for MappingWeights {
    fn default() -> Self {
        Self {
            text: 0.35,
            id: 0.25,
            surround: 0.25,
            visual: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MappingConfig {
    pub weights: MappingWeights,
    pub accept_threshold: f64,
    pub surround_radius: usize,
    pub case_fold: bool,
    pub collapse_whitespace: bool,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            weights: MappingWeights::default(),
            accept_threshold: 0.5,
            surround_radius: 2,
            case_fold: true,
            collapse_whitespace: true,
        }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<(), String> {
        let w = self.weights;
        if [w.text, w.id, w.surround, w.visual].iter().any(|x| *x < 0.0 || !x.is_finite()) {
            return Err("mapping weights must be non-negative".into());
        }
        let sum = w.text + w.id + w.surround + w.visual;
        if (sum - 1.0).abs() > 1e-6 {
            return Err(format!("mapping weights must sum to 1, got {sum}"));
        }
        if !(self.accept_threshold > 0.0 && self.accept_threshold <= 1.0) {
            return Err("accept_threshold must be in (0, 1]".into());
        }
        if self.surround_radius == 0 {
            return Err("surround_radius must be at least 1".into());
        }
        Ok(())
    }

    /// Text and id channels only, surrounding and visual switched off.
    pub fn text_id_only() -> Self {
        let d = MappingWeights::default();
        let sum = d.text + d.id;
        Self {
            weights: MappingWeights {
                text: d.text / sum,
                id: d.id / sum,
                surround: 0.0,
                visual: 0.0,
            },
            ..Self::default()
        }
    }

    pub fn normalize(&self, s: &str) -> String {
        let s = if self.collapse_whitespace {
            s.split_whitespace().collect::<Vec<_>>().join(" ")
        } else {
            s.to_string()
        };
        if self.case_fold {
            s.to_lowercase()
        } else {
            s
        }
    }
}

/// What a script step knows about its target element.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selector {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub visual: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub surrounding: Vec<String>,
}

impl Selector {
    pub fn is_empty(&self) -> bool {
        self.text.trim().is_empty()
            && self.id.trim().is_empty()
            && self.visual.trim().is_empty()
            && self.surrounding.iter().all(|s| s.trim().is_empty())
    }

    /// Short human label: the text, else the visual description, else the id.
    pub fn label(&self) -> &str {
        [&self.text, &self.visual, &self.id]
            .into_iter()
            .find(|s| !s.trim().is_empty())
            .map(String::as_str)
            .unwrap_or("")
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if !self.text.is_empty() {
            parts.push(format!("text={:?}", self.text));
        }
        if !self.id.is_empty() {
            parts.push(format!("id={:?}", self.id));
        }
        if !self.visual.is_empty() {
            parts.push(format!("visual={:?}", self.visual));
        }
        if !self.surrounding.is_empty() {
            parts.push(format!("surrounding={:?}", self.surrounding));
        }
        write!(f, "sel({})", parts.join(", "))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentScores {
    pub text: f64,
    pub id: f64,
    pub surround: f64,
    pub visual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingCandidate {
    pub path: NodePath,
    pub node: UiNode,
    pub score: f64,
    pub components: ComponentScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingStage {
    ExactTextId,
    UniqueId,
    UniqueText,
    SurroundDisambiguated,
    VisualFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingResult {
    pub path: NodePath,
    /// Position among the interactive elements of the screen.
    pub index: usize,
    pub chosen: UiNode,
    pub score: f64,
    pub stage: MappingStage,
    pub explanation: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MappingError {
    #[error("selector has no usable field")]
    EmptySelector,
    #[error("no element matched: best score {best:.3} below threshold {threshold:.3}")]
    NoMatch { best: f64, threshold: f64 },
}

fn tokens(s: &str) -> BTreeSet<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count() as f64;
    let union = a.union(b).count() as f64;
    inter / union
}

/// Jaccard similarity over lowercase word tokens. Zero when either side is
/// empty.
pub fn visual_similarity(a: &str, b: &str) -> f64 {
    jaccard(&tokens(a), &tokens(b))
}

fn text_component(selector: &str, node: &str, config: &MappingConfig) -> f64 {
    if selector.trim().is_empty() || node.trim().is_empty() {
        return 0.0;
    }
    if config.normalize(selector) == config.normalize(node) {
        1.0
    } else {
        jaccard(&tokens(selector), &tokens(node))
    }
}

/// Scores one node against every channel of the selector. `path` addresses
/// the node inside `tree`.
pub fn score_candidate(selector: &Selector, tree: &UiTree, path: &[usize], config: &MappingConfig) -> MappingCandidate {
    let node = tree.node_at(path).cloned().unwrap_or_else(|| tree.root.clone());
    let text = text_component(&selector.text, &node.text, config);
    let id = if !selector.id.is_empty() && selector.id == node.resource_id {
        1.0
    } else {
        0.0
    };
    let surround = {
        let ctx = surrounding_context_at(tree, path, config.surround_radius).unwrap_or_default();
        jaccard(&tokens(&selector.surrounding.join(" ")), &tokens(&ctx.join(" ")))
    };
    let visual = visual_similarity(&selector.visual, &node_description(tree, path));
    let components = ComponentScores {
        text,
        id,
        surround,
        visual,
    };
    let w = config.weights;
    let score = w.text * text + w.id * id + w.surround * surround + w.visual * visual;
    MappingCandidate {
        path: path.to_vec(),
        node,
        score,
        components,
    }
}

/// Reading-order tie-break: higher score, then topmost, then leftmost.
fn better(a: &(f64, &UiNode), b: &(f64, &UiNode)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.bounds.top.cmp(&b.1.bounds.top))
        .then(a.1.bounds.left.cmp(&b.1.bounds.left))
}

pub fn map_step(selector: &Selector, tree: &UiTree, config: &MappingConfig) -> Result<MappingResult, MappingError> {
    if selector.is_empty() {
        return Err(MappingError::EmptySelector);
    }
    let interactive = tree.interactive_paths();
    let node = |p: &NodePath| tree.node_at(p).expect("path from this tree");
    let result = |i: usize, score: f64, stage: MappingStage, explanation: String| MappingResult {
        path: interactive[i].clone(),
        index: i,
        chosen: node(&interactive[i]).clone(),
        score,
        stage,
        explanation,
    };

    let has_text = !selector.text.trim().is_empty();
    let has_id = !selector.id.trim().is_empty();
    let want_text = config.normalize(&selector.text);
    let text_hits: Vec<usize> = if has_text {
        (0..interactive.len())
            .filter(|&i| config.normalize(&node(&interactive[i]).text) == want_text)
            .collect()
    } else {
        Vec::new()
    };
    let id_hits: Vec<usize> = if has_id {
        (0..interactive.len())
            .filter(|&i| node(&interactive[i]).resource_id == selector.id)
            .collect()
    } else {
        Vec::new()
    };
    let both: Vec<usize> = text_hits.iter().copied().filter(|i| id_hits.contains(i)).collect();

    if has_text && has_id && both.len() == 1 {
        return Ok(result(
            both[0],
            1.0,
            MappingStage::ExactTextId,
            format!(
                "text '{}' and id '{}' match exactly one element",
                selector.text, selector.id
            ),
        ));
    }
    if id_hits.len() == 1 {
        return Ok(result(
            id_hits[0],
            1.0,
            MappingStage::UniqueId,
            format!("id '{}' is unique on screen", selector.id),
        ));
    }
    if text_hits.len() == 1 {
        return Ok(result(
            text_hits[0],
            1.0,
            MappingStage::UniqueText,
            format!("text '{}' is unique on screen", selector.text),
        ));
    }

    let survivors = [&both, &id_hits, &text_hits]
        .into_iter()
        .find(|s| s.len() >= 2)
        .cloned()
        .unwrap_or_default();
    let has_surround = selector.surrounding.iter().any(|s| !s.trim().is_empty());
    if survivors.len() >= 2 && has_surround && config.weights.surround > 0.0 {
        let mut scored: Vec<(usize, f64)> = survivors
            .iter()
            .map(|&i| (i, score_candidate(selector, tree, &interactive[i], config).components.surround))
            .collect();
        scored.sort_by(|a, b| better(&(a.1, node(&interactive[a.0])), &(b.1, node(&interactive[b.0]))));
        let (best, best_score) = scored[0];
        let unique = scored.get(1).is_none_or(|second| second.1 < best_score);
        if best_score > 0.0 && unique {
            return Ok(result(
                best,
                best_score,
                MappingStage::SurroundDisambiguated,
                format!(
                    "{} elements match '{}'; the one surrounded by {:?} overlaps the recorded context best ({:.2})",
                    survivors.len(),
                    selector.label(),
                    surrounding_context_at(tree, &interactive[best], config.surround_radius).unwrap_or_default(),
                    best_score
                ),
            ));
        }
    }

    // Blend over the channels this selector actually carries.
    let w = config.weights;
    let channels = [
        (has_text, w.text),
        (has_id, w.id),
        (has_surround, w.surround),
        (!selector.visual.trim().is_empty(), w.visual),
    ];
    let denom: f64 = channels.iter().filter(|(present, _)| *present).map(|(_, w)| w).sum();
    if denom <= 0.0 || interactive.is_empty() {
        return Err(MappingError::NoMatch {
            best: 0.0,
            threshold: config.accept_threshold,
        });
    }
    let mut scored: Vec<(usize, f64)> = (0..interactive.len())
        .map(|i| (i, score_candidate(selector, tree, &interactive[i], config).score / denom))
        .collect();
    scored.sort_by(|a, b| better(&(a.1, node(&interactive[a.0])), &(b.1, node(&interactive[b.0]))));
    let (best, best_score) = scored[0];
    if best_score + 1e-12 < config.accept_threshold {
        return Err(MappingError::NoMatch {
            best: best_score,
            threshold: config.accept_threshold,
        });
    }
    let description = node_description(tree, &interactive[best]);
    Ok(result(
        best,
        best_score,
        MappingStage::VisualFallback,
        format!(
            "no exact match for '{}'; best blended match is the element described as '{}' ({:.2} >= {:.2})",
            selector.label(),
            description,
            best_score,
            config.accept_threshold
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ui::{Bounds, UiNode};

    fn node(class: &str, text: &str, id: &str, b: [u32; 4], clickable: bool) -> UiNode {
        let mut n = UiNode::new(class, Bounds::new(b[0], b[1], b[2], b[3]).unwrap());
        n.text = text.into();
        n.resource_id = id.into();
        n.clickable = clickable;
        n
    }

    /// Menu with one row per drink: label, price and an identical add button.
    fn menu(drinks: &[&str]) -> UiTree {
        let mut list = node("List", "", "", [0, 0, 1080, 1800], false);
        for (i, d) in drinks.iter().enumerate() {
            let top = i as u32 * 200;
            let mut row = node("Row", "", "", [0, top, 1080, top + 200], false);
            row.children = vec![
                node("TextView", d, "label", [0, top, 500, top + 200], false),
                node("TextView", &format!("${}.00", i + 3), "price", [500, top, 800, top + 200], false),
                node("Button", "Add", "btn_add", [800, top, 1080, top + 200], true),
            ];
            list.children.push(row);
        }
        let mut root = node("Frame", "", "", [0, 0, 1080, 1920], false);
        root.children = vec![list, node("Button", "Cart", "btn_cart", [0, 1800, 1080, 1920], true)];
        UiTree::new("menu", root)
    }

    #[test]
    fn unique_text_and_id() {
        let tree = menu(&["Americano", "Latte"]);
        let sel = Selector {
            text: "Cart".into(),
            id: "btn_cart".into(),
            ..Default::default()
        };
        let r = map_step(&sel, &tree, &MappingConfig::default()).unwrap();
        assert_eq!(r.stage, MappingStage::ExactTextId);
        assert_eq!(r.chosen.text, "Cart");
    }

    #[test]
    fn surrounding_breaks_ties() {
        let tree = menu(&["Americano", "Latte", "Mocha", "Chai", "Espresso"]);
        let sel = Selector {
            text: "Add".into(),
            id: "btn_add".into(),
            surrounding: vec!["Latte".into(), "$4.00".into()],
            ..Default::default()
        };
        let r = map_step(&sel, &tree, &MappingConfig::default()).unwrap();
        assert_eq!(r.stage, MappingStage::SurroundDisambiguated);
        assert_eq!(r.chosen.bounds.top, 200);
        assert!(!r.explanation.is_empty());
    }

    #[test]
    fn visual_only_selector() {
        let mut tree = menu(&["Latte", "Mocha"]);
        tree.root.children[0].children[1].children[2].annotation = "plus button near 'Mocha'".into();
        let sel = Selector {
            visual: "plus button near 'Mocha'".into(),
            ..Default::default()
        };
        let r = map_step(&sel, &tree, &MappingConfig::default()).unwrap();
        assert_eq!(r.stage, MappingStage::VisualFallback);
        assert!((r.score - 1.0).abs() < 1e-12);
        assert_eq!(r.chosen.bounds.top, 200);
    }

    #[test]
    fn nothing_above_threshold() {
        let tree = menu(&["Latte"]);
        let sel = Selector {
            text: "Checkout".into(),
            id: "btn_checkout".into(),
            ..Default::default()
        };
        assert!(matches!(
            map_step(&sel, &tree, &MappingConfig::default()),
            Err(MappingError::NoMatch { .. })
        ));
        assert_eq!(
            map_step(&Selector::default(), &tree, &MappingConfig::default()),
            Err(MappingError::EmptySelector)
        );
    }

    #[test]
    fn visual_similarity_examples() {
        assert_eq!(visual_similarity("red plus button", "red plus button"), 1.0);
        assert_eq!(visual_similarity("", "anything"), 0.0);
        assert!((visual_similarity("plus button near Mocha", "plus button near Latte") - 0.6).abs() < 1e-12);
    }

    #[test]
    fn score_examples() {
        let mut row = node("Row", "", "", [0, 0, 1080, 200], false);
        let mut add = node("Button", "Add", "btn_add", [800, 0, 1080, 200], true);
        add.annotation = "green add button".into();
        row.children = vec![node("TextView", "Latte", "", [0, 0, 500, 200], false), add];
        let tree = UiTree::new("s", row);
        let full = Selector {
            text: "Add".into(),
            id: "btn_add".into(),
            visual: "green add button".into(),
            surrounding: vec!["Latte".into()],
        };
        let c = score_candidate(&full, &tree, &[1], &MappingConfig::default());
        assert!((c.score - 1.0).abs() < 1e-12);

        let config = MappingConfig {
            weights: MappingWeights {
                text: 0.4,
                id: 0.3,
                surround: 0.2,
                visual: 0.1,
            },
            ..Default::default()
        };
        let text_only = Selector {
            text: "Add".into(),
            surrounding: vec!["Mocha".into()],
            ..Default::default()
        };
        let mut bare = tree.clone();
        bare.root.children[1].resource_id.clear();
        let c = score_candidate(&text_only, &bare, &[1], &config);
        assert!((c.score - 0.4).abs() < 1e-12, "{}", c.score);

        let disjoint = Selector {
            text: "Zebra".into(),
            id: "nope".into(),
            visual: "purple".into(),
            surrounding: vec!["Qux".into()],
        };
        assert_eq!(score_candidate(&disjoint, &tree, &[1], &config).score, 0.0);
    }

    #[test]
    fn normalization_folds_case_and_space() {
        let c = MappingConfig::default();
        assert_eq!(c.normalize("  Add   to\tOrder "), "add to order");
        assert!(MappingConfig::default().validate().is_ok());
        assert!(MappingConfig::text_id_only().validate().is_ok());
    }
}
