//! Penn-Treebank style bracketed trees.
//!
//! Trees live in an arena indexed by [`NodeId`]; nodes are stored in preorder.
//! Leaves carry the token (their label is the token itself), pre-leaves carry
//! the POS tag. Functional suffixes (`NP-SBJ` -> `NP`) are stripped and
//! `-NONE-` subtrees are removed while parsing.

use std::io::BufRead;

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub label: String,
    pub children: Vec<NodeId>,
    pub token: Option<String>,
    pub parent: Option<NodeId>,
    /// Half-open token span.
    pub span: (usize, usize),
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.token.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tree {
    nodes: Vec<Node>,
}

#[derive(Debug)]
enum Lex {
    Open(usize),
    Close(usize),
    Atom(usize, String),
}

impl Lex {
    fn offset(&self) -> usize {
        match self {
            Lex::Open(o) | Lex::Close(o) | Lex::Atom(o, _) => *o,
        }
    }
}

fn lex(text: &str) -> Vec<Lex> {
    let mut out = Vec::new();
    let mut atom_start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch == '(' || ch == ')' || ch.is_whitespace() {
            if let Some(s) = atom_start.take() {
                out.push(Lex::Atom(s, text[s..i].to_string()));
            }
            match ch {
                '(' => out.push(Lex::Open(i)),
                ')' => out.push(Lex::Close(i)),
                _ => {}
            }
        } else if atom_start.is_none() {
            atom_start = Some(i);
        }
    }
    if let Some(s) = atom_start {
        out.push(Lex::Atom(s, text[s..].to_string()));
    }
    out
}

#[derive(Debug)]
enum Raw {
    Inner { label: String, children: Vec<Raw> },
    Leaf(String),
}

fn perr(offset: usize, message: impl Into<String>) -> Error {
    Error::TreeParse {
        offset,
        message: message.into(),
    }
}

struct Parser {
    toks: Vec<Lex>,
    pos: usize,
}

impl Parser {
    fn eof_error(&self) -> Error {
        let off = self.toks.last().map(Lex::offset).unwrap_or(0);
        perr(off, "unbalanced brackets: unexpected end of input")
    }

    fn constituent(&mut self) -> Result<Raw> {
        let open = match self.toks.get(self.pos) {
            Some(Lex::Open(o)) => *o,
            Some(t) => return Err(perr(t.offset(), "expected `(`")),
            None => return Err(self.eof_error()),
        };
        self.pos += 1;
        let label = match self.toks.get(self.pos) {
            Some(Lex::Atom(_, s)) => {
                let s = s.clone();
                self.pos += 1;
                s
            }
            Some(Lex::Open(_)) => String::new(),
            Some(Lex::Close(_)) => return Err(perr(open, "empty constituent")),
            None => return Err(self.eof_error()),
        };
        let mut children = Vec::new();
        loop {
            match self.toks.get(self.pos) {
                Some(Lex::Close(_)) => {
                    self.pos += 1;
                    break;
                }
                Some(Lex::Open(_)) => children.push(self.constituent()?),
                Some(Lex::Atom(_, s)) => {
                    children.push(Raw::Leaf(s.clone()));
                    self.pos += 1;
                }
                None => return Err(self.eof_error()),
            }
        }
        if children.is_empty() {
            return Err(perr(open, "empty constituent"));
        }
        if label.is_empty() {
            // unlabeled wrapper, e.g. `( (S ...) )`
            if children.len() == 1 && matches!(children[0], Raw::Inner { .. }) {
                return Ok(children.pop().expect("one child"));
            }
            if children.iter().any(|c| matches!(c, Raw::Leaf(_))) {
                return Err(perr(open, "constituent without a label"));
            }
            return Ok(Raw::Inner {
                label: "ROOT".into(),
                children,
            });
        }
        Ok(Raw::Inner { label, children })
    }
}

/// `NP-SBJ-1` -> `NP`, `NP=2` -> `NP`; labels starting with `-` (e.g. `-LRB-`) are kept.
pub fn normalize_label(label: &str) -> &str {
    if label.starts_with('-') {
        return label;
    }
    match label.find(['-', '=']) {
        Some(i) if i > 0 => &label[..i],
        _ => label,
    }
}

fn normalize(raw: Raw) -> Option<Raw> {
    match raw {
        Raw::Leaf(t) => Some(Raw::Leaf(t)),
        Raw::Inner { label, children } => {
            if label == "-NONE-" {
                return None;
            }
            let had_children = !children.is_empty();
            let children: Vec<Raw> = children.into_iter().filter_map(normalize).collect();
            if had_children && children.is_empty() {
                return None;
            }
            Some(Raw::Inner {
                label: normalize_label(&label).to_string(),
                children,
            })
        }
    }
}

impl Tree {
    pub fn parse(text: &str) -> Result<Tree> {
        let toks = lex(text);
        match toks.first() {
            None => return Err(perr(0, "empty input")),
            Some(Lex::Atom(o, _)) => return Err(perr(*o, "bare token at top level")),
            Some(Lex::Close(o)) => return Err(perr(*o, "unbalanced brackets: unexpected `)`")),
            Some(Lex::Open(_)) => {}
        }
        let mut p = Parser { toks, pos: 0 };
        let raw = p.constituent()?;
        if let Some(t) = p.toks.get(p.pos) {
            return Err(perr(t.offset(), "trailing content after the tree"));
        }
        let raw = normalize(raw).ok_or_else(|| perr(0, "tree is empty after removing empty elements"))?;
        let mut tree = Tree { nodes: Vec::new() };
        let mut next_token = 0;
        tree.push(raw, None, &mut next_token);
        Ok(tree)
    }

    fn push(&mut self, raw: Raw, parent: Option<NodeId>, next_token: &mut usize) -> NodeId {
        let id = NodeId(self.nodes.len());
        match raw {
            Raw::Leaf(tok) => {
                self.nodes.push(Node {
                    label: tok.clone(),
                    children: Vec::new(),
                    token: Some(tok),
                    parent,
                    span: (*next_token, *next_token + 1),
                });
                *next_token += 1;
            }
            Raw::Inner { label, children } => {
                let start = *next_token;
                self.nodes.push(Node {
                    label,
                    children: Vec::new(),
                    token: None,
                    parent,
                    span: (start, start),
                });
                let kids: Vec<NodeId> = children
                    .into_iter()
                    .map(|c| self.push(c, Some(id), next_token))
                    .collect();
                let node = &mut self.nodes[id.0];
                node.children = kids;
                node.span = (start, *next_token);
            }
        }
        id
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.nodes[id.0].label
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].children
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parent
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node before its children, children left to right.
    pub fn preorder(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.children(n).iter().rev());
        }
        out
    }

    pub fn leaves(&self, id: NodeId) -> Vec<NodeId> {
        self.preorder(id)
            .into_iter()
            .filter(|&n| self.node(n).is_leaf())
            .collect()
    }

    /// Leaf tokens under `id` joined by single spaces.
    pub fn leaf_text(&self, id: NodeId) -> String {
        self.leaves(id)
            .iter()
            .map(|&n| self.node(n).token.as_deref().unwrap_or_default())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Ancestors of `id` from its parent up to the root (inclusive).
    pub fn parent_chain(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = self.parent(id);
        while let Some(p) = cur {
            out.push(p);
            cur = self.parent(p);
        }
        out
    }

    /// True when `node` lies in the subtree rooted at `ancestor` (a node is its own ancestor).
    pub fn is_within(&self, node: NodeId, ancestor: NodeId) -> bool {
        let (s, e) = self.node(ancestor).span;
        let (ns, ne) = self.node(node).span;
        // spans alone cannot separate unary chains, so walk up
        if ns < s || ne > e {
            return false;
        }
        let mut cur = Some(node);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.parent(c);
        }
        false
    }

    /// POS tag of a leaf, i.e. its parent's label.
    pub fn tag(&self, leaf: NodeId) -> Option<&str> {
        self.parent(leaf).map(|p| self.label(p))
    }

    /// (token, tag) pairs for the leaves under `id`.
    pub fn tagged_leaves(&self, id: NodeId) -> Vec<(String, String)> {
        self.leaves(id)
            .into_iter()
            .map(|l| {
                (
                    self.node(l).token.clone().unwrap_or_default(),
                    self.tag(l).unwrap_or_default().to_string(),
                )
            })
            .collect()
    }

    pub fn serialize(&self, id: NodeId) -> String {
        let mut out = String::new();
        self.write(id, &mut out);
        out
    }

    fn write(&self, id: NodeId, out: &mut String) {
        let n = self.node(id);
        if let Some(t) = &n.token {
            out.push_str(t);
            return;
        }
        out.push('(');
        out.push_str(&n.label);
        for &c in &n.children {
            out.push(' ');
            self.write(c, out);
        }
        out.push(')');
    }
}

/// Parse a tree file of `id<TAB>bracketing` lines. Each line keeps its own parse result.
pub fn read_tree_file<R: BufRead>(reader: R) -> Result<Vec<(usize, String, Result<Tree>)>> {
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<tree file>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, bracketing) = line.split_once('\t').ok_or_else(|| Error::Malformed {
            line: i + 1,
            message: "expected `id<TAB>bracketing`".into(),
        })?;
        lines.push((i + 1, id.to_string(), bracketing.to_string()));
    }
    Ok(lines
        .into_par_iter()
        .map(|(no, id, b)| {
            let t = Tree::parse(&b);
            (no, id, t)
        })
        .collect())
}
