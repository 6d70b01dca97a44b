//! Syntactic candidate extraction over POS-tagged sentences.
//!
//! Two patterns are recognised:
//!
//! * like view: `Noun1 ... BE/VB like ... Noun2`
//! * be view:   `Noun1 ... BE ... Noun2`
//!
//! Gaps are bounded by [`WINDOW`] tokens on each side and the nearest
//! qualifying noun is taken.

use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{is_noun_tag, is_verb_tag};

/// Maximum token distance between the verb group and either noun.
pub const WINDOW: usize = 10;

pub const BE_FORMS: [&str; 8] = ["am", "is", "are", "was", "were", "be", "been", "being"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub pos: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub id: String,
    pub source: String,
    pub tokens: Vec<Token>,
}

impl TaggedSentence {
    /// Parse `id<TAB>source<TAB>tok_POS tok_POS ...`. Token and tag are split at the last underscore.
    pub fn parse_line(line: &str) -> std::result::Result<Self, String> {
        let mut fields = line.splitn(3, '\t');
        let id = fields.next().unwrap_or_default();
        let source = fields.next().ok_or("expected 3 tab-separated fields, found 1")?;
        let body = fields.next().ok_or("expected 3 tab-separated fields, found 2")?;
        if id.is_empty() {
            return Err("empty sentence id".into());
        }
        let mut tokens = Vec::new();
        for (i, item) in body.split_whitespace().enumerate() {
            let (surface, pos) = item
                .rsplit_once('_')
                .ok_or_else(|| format!("token {} `{item}` has no tag", i + 1))?;
            if surface.is_empty() || pos.is_empty() {
                return Err(format!("token {} `{item}` has an empty surface or tag", i + 1));
            }
            tokens.push(Token {
                surface: surface.to_string(),
                pos: pos.to_string(),
            });
        }
        if tokens.is_empty() {
            return Err("sentence has no tokens".into());
        }
        Ok(TaggedSentence {
            id: id.to_string(),
            source: source.to_string(),
            tokens,
        })
    }

    pub fn to_line(&self) -> String {
        let body: Vec<String> = self.tokens.iter().map(|t| format!("{}_{}", t.surface, t.pos)).collect();
        format!("{}\t{}\t{}", self.id, self.source, body.join(" "))
    }

    /// Surface tokens joined by single spaces.
    pub fn text(&self) -> String {
        self.surfaces().join(" ")
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Like,
    Be,
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Like => "like",
            View::Be => "be",
        })
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "like" => Ok(View::Like),
            "be" => Ok(View::Be),
            other => Err(Error::invalid(format!("unknown view `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimileCandidate {
    pub sentence_id: String,
    pub view: View,
    /// Index of "like" (like view) or of the BE verb (be view).
    pub anchor_index: usize,
    pub noun1_index: usize,
    pub noun2_index: usize,
}

impl SimileCandidate {
    pub fn to_record(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.sentence_id, self.view, self.anchor_index, self.noun1_index, self.noun2_index
        )
    }

    pub fn parse_record(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(format!("expected 5 fields, found {}", f.len()));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| format!("bad index `{s}`: {e}"));
        Ok(SimileCandidate {
            sentence_id: f[0].to_string(),
            view: f[1].parse().map_err(|e: Error| e.to_string())?,
            anchor_index: num(f[2])?,
            noun1_index: num(f[3])?,
            noun2_index: num(f[4])?,
        })
    }

    /// Re-check the structural invariants against the sentence the candidate came from.
    pub fn validate(&self, s: &TaggedSentence) -> bool {
        let n = s.tokens.len();
        if !(self.noun1_index < self.anchor_index && self.anchor_index < self.noun2_index && self.noun2_index < n) {
            return false;
        }
        if !is_noun_tag(&s.tokens[self.noun1_index].pos) || !is_noun_tag(&s.tokens[self.noun2_index].pos) {
            return false;
        }
        let anchor = s.tokens[self.anchor_index].surface.to_lowercase();
        match self.view {
            View::Like => anchor == "like",
            View::Be => anchor != "like" && BE_FORMS.contains(&anchor.as_str()),
        }
    }
}

fn is_be(token: &Token) -> bool {
    BE_FORMS.contains(&token.surface.to_lowercase().as_str())
}

fn nearest_noun_left(tokens: &[Token], before: usize) -> Option<usize> {
    let lo = before.saturating_sub(WINDOW);
    (lo..before).rev().find(|&i| is_noun_tag(&tokens[i].pos))
}

fn nearest_noun_right(tokens: &[Token], after: usize) -> Option<usize> {
    let hi = (after + WINDOW).min(tokens.len().saturating_sub(1));
    (after + 1..=hi).find(|&i| is_noun_tag(&tokens[i].pos))
}

/// `Noun1 ... BE/VB like ... Noun2`. The verb must sit directly before "like".
pub fn match_like_pattern(s: &TaggedSentence) -> Vec<SimileCandidate> {
    let toks = &s.tokens;
    let mut out = Vec::new();
    for (a, tok) in toks.iter().enumerate() {
        if a == 0 || !tok.surface.eq_ignore_ascii_case("like") {
            continue;
        }
        let verb = a - 1;
        if !(is_be(&toks[verb]) || is_verb_tag(&toks[verb].pos)) {
            continue;
        }
        let (Some(n1), Some(n2)) = (nearest_noun_left(toks, verb), nearest_noun_right(toks, a)) else {
            continue;
        };
        out.push(SimileCandidate {
            sentence_id: s.id.clone(),
            view: View::Like,
            anchor_index: a,
            noun1_index: n1,
            noun2_index: n2,
        });
    }
    out
}

/// `Noun1 ... BE ... Noun2`, skipping BE verbs already used as the verb of a like match.
pub fn match_be_pattern(s: &TaggedSentence) -> Vec<SimileCandidate> {
    let taken: Vec<usize> = match_like_pattern(s).iter().map(|c| c.anchor_index - 1).collect();
    be_matches(s, &taken)
}

fn be_matches(s: &TaggedSentence, taken_verbs: &[usize]) -> Vec<SimileCandidate> {
    let toks = &s.tokens;
    let mut out = Vec::new();
    for (b, tok) in toks.iter().enumerate() {
        if !is_be(tok) || taken_verbs.contains(&b) {
            continue;
        }
        let (Some(n1), Some(n2)) = (nearest_noun_left(toks, b), nearest_noun_right(toks, b)) else {
            continue;
        };
        out.push(SimileCandidate {
            sentence_id: s.id.clone(),
            view: View::Be,
            anchor_index: b,
            noun1_index: n1,
            noun2_index: n2,
        });
    }
    out
}

/// Both views for one sentence: like matches first, then be matches.
pub fn match_sentence(s: &TaggedSentence) -> Vec<SimileCandidate> {
    let mut out = match_like_pattern(s);
    let taken: Vec<usize> = out.iter().map(|c| c.anchor_index - 1).collect();
    out.extend(be_matches(s, &taken));
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewCounts {
    pub like: u64,
    pub be: u64,
}

impl ViewCounts {
    pub fn add(&mut self, view: View) {
        match view {
            View::Like => self.like += 1,
            View::Be => self.be += 1,
        }
    }

    pub fn merge(self, other: ViewCounts) -> ViewCounts {
        ViewCounts {
            like: self.like + other.like,
            be: self.be + other.be,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanSummary {
    pub sentences: u64,
    pub counts: ViewCounts,
    pub diagnostics: Vec<Diagnostic>,
}

const CHUNK: usize = 4096;

/// Stream a tagged corpus, calling `sink` once per well-formed sentence with its candidates.
///
/// Malformed lines are skipped and reported in the summary; blank lines are ignored.
/// Sentences are matched in parallel per chunk and handed to `sink` in input order.
pub fn scan_corpus<R, F>(reader: R, mut sink: F) -> std::io::Result<ScanSummary>
where
    R: BufRead,
    F: FnMut(&TaggedSentence, &[SimileCandidate]),
{
    let mut summary = ScanSummary::default();
    let mut chunk: Vec<(usize, String)> = Vec::with_capacity(CHUNK);
    let mut flush = |chunk: &mut Vec<(usize, String)>, summary: &mut ScanSummary| {
        let parsed: Vec<_> = chunk
            .par_iter()
            .map(|(no, line)| match TaggedSentence::parse_line(line) {
                Ok(s) => {
                    let cands = match_sentence(&s);
                    Ok((s, cands))
                }
                Err(message) => Err(Diagnostic { line: *no, message }),
            })
            .collect();
        for item in parsed {
            match item {
                Ok((s, cands)) => {
                    summary.sentences += 1;
                    for c in &cands {
                        summary.counts.add(c.view);
                    }
                    sink(&s, &cands);
                }
                Err(d) => {
                    log::warn!("corpus line {}: {}; skipped", d.line, d.message);
                    summary.diagnostics.push(d);
                }
            }
        }
        chunk.clear();
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        chunk.push((i + 1, line.to_string()));
        if chunk.len() == CHUNK {
            flush(&mut chunk, &mut summary);
        }
    }
    if !chunk.is_empty() {
        flush(&mut chunk, &mut summary);
    }
    Ok(summary)
}

/// Convenience wrapper collecting every candidate.
pub fn scan_to_vec<R: BufRead>(reader: R) -> std::io::Result<(Vec<SimileCandidate>, ScanSummary)> {
    let mut all = Vec::new();
    let summary = scan_corpus(reader, |_, c| all.extend_from_slice(c))?;
    Ok((all, summary))
}
