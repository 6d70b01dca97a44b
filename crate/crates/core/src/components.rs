//! Topic and vehicle extraction from like-view constituency trees.
//!
//! For every `like` leaf the vehicle is searched among the anchor's right
//! siblings and the topic among the ancestors of the anchor, bottom-up, with
//! two structural special cases and pronoun resolution. Extracted pairs are then
//! passed through three filters (gerund head, shared nouns, non-personal
//! pronoun topic).

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{is_noun_tag, is_punct, is_verb_tag, singularize};
use crate::treebank::{NodeId, Tree};

pub const NON_PERSONAL_PRONOUNS: [&str; 10] = [
    "it",
    "that",
    "this",
    "these",
    "those",
    "something",
    "anything",
    "everything",
    "nothing",
    "one",
];
pub const PERSONAL_PRONOUNS: [&str; 11] = ["i", "you", "he", "she", "we", "they", "me", "him", "her", "us", "them"];

/// A component span with the POS tag of every token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub text: String,
    pub tokens: Vec<(String, String)>,
    /// Half-open token range in the sentence, when the text occurs there.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
}

impl Component {
    fn from_tokens(tokens: Vec<(String, String)>, offset: usize) -> Option<Self> {
        let start = tokens.iter().position(|(t, _)| !is_punct(t))?;
        let end = tokens.iter().rposition(|(t, _)| !is_punct(t))? + 1;
        let span = Some((offset + start, offset + end));
        let tokens = tokens[start..end].to_vec();
        let text = tokens.iter().map(|(t, _)| t.as_str()).collect::<Vec<_>>().join(" ");
        Some(Component { text, tokens, span })
    }

    /// Last verb-tagged token, else the last token.
    pub fn head(&self) -> Option<&(String, String)> {
        self.tokens
            .iter()
            .rev()
            .find(|(_, tag)| is_verb_tag(tag))
            .or_else(|| self.tokens.last())
    }

    /// Rightmost noun-tagged token, else the last token.
    pub fn core_noun(&self) -> Option<&str> {
        self.tokens
            .iter()
            .rev()
            .find(|(_, tag)| is_noun_tag(tag))
            .or_else(|| self.tokens.last())
            .map(|(t, _)| t.as_str())
    }

    fn noun_lemmas(&self) -> HashSet<String> {
        self.tokens
            .iter()
            .filter(|(_, tag)| is_noun_tag(tag))
            .map(|(t, _)| singularize(t))
            .collect()
    }

    fn is_pronoun(&self) -> bool {
        if self.tokens.len() != 1 {
            return false;
        }
        let (tok, tag) = &self.tokens[0];
        let low = tok.to_lowercase();
        tag == "PRP" || NON_PERSONAL_PRONOUNS.contains(&low.as_str()) || PERSONAL_PRONOUNS.contains(&low.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    Gerund,
    NounOverlap,
    NonPersonalPronoun,
}

impl fmt::Display for FilterReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterReason::Gerund => "gerund",
            FilterReason::NounOverlap => "noun_overlap",
            FilterReason::NonPersonalPronoun => "non_personal_pronoun",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    NoAnchor,
    NoVehicle,
    NoTopic,
    Filtered(FilterReason),
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Ok => f.write_str("ok"),
            Status::NoAnchor => f.write_str("no_anchor"),
            Status::NoVehicle => f.write_str("no_vehicle"),
            Status::NoTopic => f.write_str("no_topic"),
            Status::Filtered(r) => write!(f, "filtered:{r}"),
        }
    }
}

impl std::str::FromStr for Status {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ok" => Status::Ok,
            "no_anchor" => Status::NoAnchor,
            "no_vehicle" => Status::NoVehicle,
            "no_topic" => Status::NoTopic,
            "filtered:gerund" => Status::Filtered(FilterReason::Gerund),
            "filtered:noun_overlap" => Status::Filtered(FilterReason::NounOverlap),
            "filtered:non_personal_pronoun" => Status::Filtered(FilterReason::NonPersonalPronoun),
            other => return Err(Error::invalid(format!("unknown status `{other}`"))),
        })
    }
}

/// Which rule located the topic subtree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicRule {
    /// Ascending labels `[NP, SBAR, S]`: topic under the `S`.
    RelativeClause,
    /// Ascending labels `[VP, VP, VP]` with the middle VP starting with "to": topic under the third VP.
    ToInfinitive,
    /// First `S` or `NP` ancestor.
    Default,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub sentence_id: String,
    /// Token index of the `like` leaf.
    pub anchor_index: Option<usize>,
    pub topic: Option<Component>,
    pub vehicle: Option<Component>,
    pub status: Status,
    pub rule: Option<TopicRule>,
    /// Pronoun replaced through coreference, if any.
    pub resolved_from: Option<String>,
    /// Space-joined sentence tokens.
    pub sentence: String,
}

impl ExtractionResult {
    pub const TSV_HEADER: &'static str = "id\ttopic\tvehicle\tstatus\tanchor_index\tsentence";

    pub fn to_record(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.sentence_id,
            self.topic.as_ref().map(|c| c.text.as_str()).unwrap_or(""),
            self.vehicle.as_ref().map(|c| c.text.as_str()).unwrap_or(""),
            self.status,
            self.anchor_index.map(|a| a.to_string()).unwrap_or_else(|| "-".into()),
            self.sentence,
        )
    }
}

/// Sentence context handed to a coreference resolver.
#[derive(Debug, Clone, Copy)]
pub struct CorefContext<'a> {
    pub sentence_id: &'a str,
    pub tokens: &'a [(String, String)],
}

pub trait CorefResolver: Sync {
    fn resolve(&self, pronoun: &str, ctx: &CorefContext<'_>) -> Option<String>;
}

/// Leaves every pronoun unresolved.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityResolver;

impl CorefResolver for IdentityResolver {
    fn resolve(&self, _pronoun: &str, _ctx: &CorefContext<'_>) -> Option<String> {
        None
    }
}

/// Precomputed referents keyed by (sentence id, lowercased pronoun),
/// read from `id<TAB>pronoun<TAB>referent` lines.
#[derive(Debug, Clone, Default)]
pub struct TableResolver {
    table: HashMap<(String, String), String>,
}

impl TableResolver {
    pub fn insert(&mut self, sentence_id: &str, pronoun: &str, referent: &str) {
        self.table
            .insert((sentence_id.to_string(), pronoun.to_lowercase()), referent.to_string());
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut out = TableResolver::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<coref table>", e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::Malformed {
                    line: i + 1,
                    message: "expected `id<TAB>pronoun<TAB>referent`".into(),
                });
            }
            out.insert(f[0], f[1], f[2]);
        }
        Ok(out)
    }
}

impl CorefResolver for TableResolver {
    fn resolve(&self, pronoun: &str, ctx: &CorefContext<'_>) -> Option<String> {
        self.table
            .get(&(ctx.sentence_id.to_string(), pronoun.to_lowercase()))
            .cloned()
    }
}

fn qualifies(tree: &Tree, n: NodeId) -> bool {
    let kids = tree.children(n);
    !kids.is_empty()
        && kids.iter().all(|&c| matches!(tree.label(c), "NP" | "PP"))
        && kids.iter().any(|&c| tree.label(c) == "NP")
}

/// Preorder search for the first node whose children are all `NP`/`PP` with at least one `NP`.
pub fn get_comp(tree: &Tree, n: NodeId) -> Option<NodeId> {
    tree.preorder(n).into_iter().find(|&m| qualifies(tree, m))
}

/// [`get_comp`] returning the span text.
pub fn get_comp_text(tree: &Tree, n: NodeId) -> Option<String> {
    get_comp(tree, n).map(|m| tree.leaf_text(m))
}

fn is_gerund_phrase(tree: &Tree, n: NodeId) -> bool {
    matches!(tree.label(n), "S" | "VP")
        && tree
            .leaves(n)
            .first()
            .and_then(|&l| tree.tag(l))
            .is_some_and(|t| t == "VBG")
}

/// Shallowest, leftmost NP (or gerund clause) among the given subtrees.
fn base_phrase(tree: &Tree, roots: &[NodeId]) -> Option<NodeId> {
    let mut queue: VecDeque<NodeId> = roots.iter().copied().collect();
    while let Some(n) = queue.pop_front() {
        if tree.label(n) == "NP" || is_gerund_phrase(tree, n) {
            return Some(n);
        }
        queue.extend(tree.children(n).iter().copied());
    }
    None
}

/// Component from the given sibling subtrees: the get_comp rule first, then the base-phrase fallback.
fn component_among(tree: &Tree, roots: &[NodeId]) -> Option<Component> {
    let node = roots
        .iter()
        .find_map(|&r| get_comp(tree, r))
        .or_else(|| base_phrase(tree, roots))?;
    Component::from_tokens(tree.tagged_leaves(node), tree.node(node).span.0)
}

/// Component under `subtree`, ignoring `path_child` (the child that contains the anchor).
/// When `path_child` is the anchor itself, its right siblings hold the vehicle and are skipped too.
fn component_excluding(tree: &Tree, subtree: NodeId, path_child: NodeId, anchor: NodeId) -> Option<Component> {
    let kids = tree.children(subtree);
    let roots: Vec<NodeId> = if path_child == anchor {
        kids.iter().copied().take_while(|&c| c != anchor).collect()
    } else {
        kids.iter().copied().filter(|&c| c != path_child).collect()
    };
    component_among(tree, &roots)
}

fn first_leaf_token(tree: &Tree, n: NodeId) -> Option<String> {
    tree.leaves(n).first().and_then(|&l| tree.node(l).token.clone())
}

/// Topic search from the anchor upwards. Returns the component and the rule that fired.
fn locate_topic(tree: &Tree, anchor: NodeId) -> Option<(Component, TopicRule)> {
    let mut path_child = anchor;
    let mut cur = tree.parent(anchor);
    let mut passed_s_or_np = false;
    while let Some(n) = cur {
        let parent = tree.parent(n);
        let grand = parent.and_then(|p| tree.parent(p));
        let label = tree.label(n);
        let chosen = match (parent, grand) {
            (Some(p), Some(g)) if label == "NP" && tree.label(p) == "SBAR" && tree.label(g) == "S" => {
                Some((g, p, TopicRule::RelativeClause))
            }
            (Some(p), Some(g))
                if !passed_s_or_np
                    && label == "VP"
                    && tree.label(p) == "VP"
                    && tree.label(g) == "VP"
                    && first_leaf_token(tree, p).is_some_and(|t| t.eq_ignore_ascii_case("to")) =>
            {
                Some((g, p, TopicRule::ToInfinitive))
            }
            _ if matches!(label, "S" | "NP") => Some((n, path_child, TopicRule::Default)),
            _ => None,
        };
        if let Some((subtree, excluded, rule)) = chosen {
            if let Some(c) = component_excluding(tree, subtree, excluded, anchor) {
                return Some((c, rule));
            }
        }
        if matches!(label, "S" | "NP") {
            passed_s_or_np = true;
        }
        path_child = n;
        cur = parent;
    }
    None
}

fn locate_vehicle(tree: &Tree, anchor: NodeId) -> Option<Component> {
    let parent = tree.parent(anchor)?;
    let kids = tree.children(parent);
    let pos = kids.iter().position(|&c| c == anchor)?;
    component_among(tree, &kids[pos + 1..])
}

/// Tag a resolved referent by finding its tokens in the sentence; unknown tokens get a
/// noun tag on the last word only.
fn tag_referent(referent: &str, sentence: &[(String, String)]) -> Component {
    let words: Vec<&str> = referent.split_whitespace().collect();
    if !words.is_empty() {
        for start in 0..sentence.len().saturating_sub(words.len() - 1) {
            let window = &sentence[start..start + words.len()];
            if window.iter().zip(&words).all(|((t, _), w)| t.eq_ignore_ascii_case(w)) {
                return Component {
                    text: referent.to_string(),
                    tokens: window.to_vec(),
                    span: Some((start, start + words.len())),
                };
            }
        }
    }
    let n = words.len();
    Component {
        text: referent.to_string(),
        tokens: words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.to_string(), if i + 1 == n { "NN" } else { "UNK" }.to_string()))
            .collect(),
        span: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Reject(FilterReason),
}

/// The three post-extraction filters, checked in order.
pub fn apply_filters(topic: &Component, vehicle: &Component) -> FilterDecision {
    let gerund = |c: &Component| c.head().is_some_and(|(_, tag)| tag == "VBG");
    if gerund(topic) || gerund(vehicle) {
        return FilterDecision::Reject(FilterReason::Gerund);
    }
    if !topic.noun_lemmas().is_disjoint(&vehicle.noun_lemmas()) {
        return FilterDecision::Reject(FilterReason::NounOverlap);
    }
    let t = topic.text.trim().to_lowercase();
    if NON_PERSONAL_PRONOUNS.contains(&t.as_str()) {
        return FilterDecision::Reject(FilterReason::NonPersonalPronoun);
    }
    FilterDecision::Keep
}

fn anchors(tree: &Tree) -> Vec<NodeId> {
    tree.leaves(tree.root())
        .into_iter()
        .filter(|&l| {
            tree.node(l)
                .token
                .as_deref()
                .is_some_and(|t| t.eq_ignore_ascii_case("like"))
        })
        .collect()
}

/// One result per `like` leaf, or a single `no_anchor` result.
pub fn extract_components(sentence_id: &str, tree: &Tree, resolver: &dyn CorefResolver) -> Vec<ExtractionResult> {
    let leaves = anchors(tree);
    let sentence = tree.tagged_leaves(tree.root());
    let text = sentence.iter().map(|(t, _)| t.as_str()).collect::<Vec<_>>().join(" ");
    if leaves.is_empty() {
        return vec![ExtractionResult {
            sentence_id: sentence_id.to_string(),
            anchor_index: None,
            topic: None,
            vehicle: None,
            status: Status::NoAnchor,
            rule: None,
            resolved_from: None,
            sentence: text,
        }];
    }
    leaves
        .into_iter()
        .map(|leaf| {
            // The anchor is the word node; with POS pre-leaves that is the pre-leaf.
            let anchor = match tree.parent(leaf) {
                Some(p) if tree.children(p).len() == 1 => p,
                _ => leaf,
            };
            let mut res = ExtractionResult {
                sentence_id: sentence_id.to_string(),
                anchor_index: Some(tree.node(leaf).span.0),
                topic: None,
                vehicle: None,
                status: Status::Ok,
                rule: None,
                resolved_from: None,
                sentence: text.clone(),
            };
            res.vehicle = locate_vehicle(tree, anchor);
            if let Some((mut topic, rule)) = locate_topic(tree, anchor) {
                if topic.is_pronoun() {
                    let ctx = CorefContext {
                        sentence_id,
                        tokens: &sentence,
                    };
                    if let Some(referent) = resolver.resolve(&topic.text, &ctx) {
                        res.resolved_from = Some(topic.text.clone());
                        topic = tag_referent(&referent, &sentence);
                    }
                }
                res.topic = Some(topic);
                res.rule = Some(rule);
            }
            res.status = match (&res.topic, &res.vehicle) {
                (_, None) => Status::NoVehicle,
                (None, _) => Status::NoTopic,
                (Some(t), Some(v)) => match apply_filters(t, v) {
                    FilterDecision::Keep => Status::Ok,
                    FilterDecision::Reject(r) => Status::Filtered(r),
                },
            };
            res
        })
        .collect()
}

/// Per-status tallies.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts(pub BTreeMap<String, u64>);

impl StatusCounts {
    pub fn add(&mut self, status: Status) {
        *self.0.entry(status.to_string()).or_insert(0) += 1;
    }

    pub fn get(&self, status: Status) -> u64 {
        self.0.get(&status.to_string()).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.0.values().sum()
    }

    pub fn merge(&mut self, other: &StatusCounts) {
        for (k, v) in &other.0 {
            *self.0.entry(k.clone()).or_insert(0) += v;
        }
    }
}

/// Run extraction for every candidate id. Every id must have a tree; trees without a
/// candidate are ignored.
pub fn extract_batch(
    trees: &[(String, Tree)],
    candidate_ids: &[String],
    resolver: &dyn CorefResolver,
) -> Result<(Vec<ExtractionResult>, StatusCounts)> {
    let by_id: HashMap<&str, &Tree> = trees.iter().map(|(id, t)| (id.as_str(), t)).collect();
    let mut seen = HashSet::new();
    let mut todo = Vec::new();
    for id in candidate_ids {
        if !seen.insert(id.as_str()) {
            continue;
        }
        let tree = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::IdMismatch(format!("candidate `{id}` has no tree in the tree file")))?;
        todo.push((id.as_str(), *tree));
    }
    let results: Vec<ExtractionResult> = todo
        .par_iter()
        .flat_map_iter(|(id, tree)| extract_components(id, tree, resolver))
        .collect();
    let mut counts = StatusCounts::default();
    for r in &results {
        counts.add(r.status);
    }
    Ok((results, counts))
}
