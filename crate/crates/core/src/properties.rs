//! Property generation for extracted (topic, vehicle) pairs.
//!
//! Two providers score candidate properties: a knowledge provider queried with
//! the vehicle and a context provider queried with the sentence rewritten as
//! `as [MASK] as`. Raw scores are halved so each side contributes at most 0.5.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::components::{ExtractionResult, Status};
use crate::error::{Error, Result};
use crate::pattern::Diagnostic;
use crate::text::{fnv1a64, normalize_term};

pub const MAX_CANDIDATES: usize = 10;
pub const MASK: &str = "[MASK]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Knowledge,
    Context,
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::Knowledge => "knowledge",
            ProviderKind::Context => "context",
        })
    }
}

impl FromStr for ProviderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knowledge" => Ok(ProviderKind::Knowledge),
            "context" => Ok(ProviderKind::Context),
            other => Err(Error::invalid(format!("unknown provider kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub property: String,
    pub score: f64,
}

pub trait PropertyProvider: Sync {
    fn kind(&self) -> ProviderKind;

    /// Raw ranked candidates for `input`; callers pass the result through [`rank_candidates`].
    fn query(&self, input: &str) -> Result<Vec<Candidate>>;
}

fn valid_property(p: &str) -> bool {
    !p.is_empty()
        && !p.starts_with('-')
        && !p.ends_with('-')
        && p.chars().all(|c| c.is_alphanumeric() || c == '-' || c == '\'')
}

/// Lowercase, validate, dedup (keeping the best score), sort by score descending with
/// property as tie-break, and keep the top ten.
pub fn rank_candidates(raw: Vec<Candidate>) -> Result<Vec<Candidate>> {
    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    for c in raw {
        if !(0.0..=1.0).contains(&c.score) {
            return Err(Error::Provider(format!(
                "score {} for `{}` outside [0,1]",
                c.score, c.property
            )));
        }
        let p = c.property.trim().to_lowercase();
        if !valid_property(&p) {
            log::warn!("dropping malformed property `{}`", c.property);
            continue;
        }
        let e = best.entry(p).or_insert(c.score);
        if c.score > *e {
            *e = c.score;
        }
    }
    let mut out: Vec<Candidate> = best
        .into_iter()
        .map(|(property, score)| Candidate { property, score })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.property.cmp(&b.property)));
    out.truncate(MAX_CANDIDATES);
    Ok(out)
}

/// Replace the `like` at `like_index` with `as [MASK] as`.
pub fn mask_sentence<S: AsRef<str>>(tokens: &[S], like_index: usize) -> Result<String> {
    let tok = tokens.get(like_index).ok_or_else(|| {
        Error::invalid(format!(
            "like index {like_index} out of range ({} tokens)",
            tokens.len()
        ))
    })?;
    if !tok.as_ref().eq_ignore_ascii_case("like") {
        return Err(Error::invalid(format!(
            "token {like_index} is `{}`, not `like`",
            tok.as_ref()
        )));
    }
    let mut out: Vec<&str> = Vec::with_capacity(tokens.len() + 2);
    for (i, t) in tokens.iter().enumerate() {
        if i == like_index {
            out.extend(["as", MASK, "as"]);
        } else {
            out.push(t.as_ref());
        }
    }
    Ok(out.join(" "))
}

/// Key of a masked sentence in a context table: FNV-1a 64 as 16 hex digits.
pub fn context_key(masked: &str) -> String {
    format!("{:016x}", fnv1a64(masked.as_bytes()))
}

/// Halve every raw score.
pub fn normalize_scores(raw: &[Candidate]) -> Result<Vec<Candidate>> {
    if raw.len() > MAX_CANDIDATES {
        return Err(Error::invalid(format!(
            "{} candidates, at most {MAX_CANDIDATES} allowed",
            raw.len()
        )));
    }
    raw.iter()
        .map(|c| {
            if !(0.0..=1.0).contains(&c.score) {
                return Err(Error::invalid(format!("raw score {} outside [0,1]", c.score)));
            }
            Ok(Candidate {
                property: c.property.clone(),
                score: c.score * 0.5,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub knowledge: f64,
    pub context: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            knowledge: 0.3,
            context: 0.0,
        }
    }
}

/// A surviving property with its per-side components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredProperty {
    pub property: String,
    pub knowledge: f64,
    pub context: f64,
}

impl ScoredProperty {
    pub fn score(&self) -> f64 {
        self.knowledge + self.context
    }
}

/// Keep properties that pass at least one side's threshold (strictly); both sides'
/// scores are summed once a property survives. Sorted by property.
pub fn select_properties(knowledge: &[Candidate], context: &[Candidate], th: Thresholds) -> Vec<ScoredProperty> {
    let mut merged: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for c in knowledge {
        let e = merged.entry(&c.property).or_default();
        e.0 = e.0.max(c.score);
    }
    for c in context {
        let e = merged.entry(&c.property).or_default();
        e.1 = e.1.max(c.score);
    }
    merged
        .into_iter()
        .filter(|(_, (k, c))| *k > th.knowledge || *c > th.context)
        .filter(|(_, (k, c))| k + c > 0.0)
        .map(|(p, (k, c))| ScoredProperty {
            property: p.to_string(),
            knowledge: k,
            context: c,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimileInstance {
    pub sentence_id: String,
    pub topic: String,
    pub property: String,
    pub vehicle: String,
    pub score: f64,
    pub knowledge: f64,
    pub context: f64,
}

impl SimileInstance {
    pub const TSV_HEADER: &'static str = "sentence_id\ttopic\tproperty\tvehicle\tscore\tknowledge\tcontext";

    pub fn to_record(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.sentence_id, self.topic, self.property, self.vehicle, self.score, self.knowledge, self.context
        )
    }

    pub fn parse_record(line: &str, line_no: usize) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |m: String| Error::Malformed {
            line: line_no,
            message: m,
        };
        if f.len() != 7 {
            return Err(bad(format!("expected 7 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}`")));
        let inst = SimileInstance {
            sentence_id: f[0].to_string(),
            topic: f[1].to_string(),
            property: f[2].to_string(),
            vehicle: f[3].to_string(),
            score: num(f[4])?,
            knowledge: num(f[5])?,
            context: num(f[6])?,
        };
        if !(inst.score > 0.0 && inst.score <= 1.0) {
            return Err(bad(format!("instance score {} outside (0,1]", inst.score)));
        }
        Ok(inst)
    }
}

/// An extracted pair ready for property scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringItem {
    pub sentence_id: String,
    pub anchor_index: usize,
    pub topic: String,
    pub vehicle: String,
    pub tokens: Vec<String>,
}

impl ScoringItem {
    /// Only `ok` results become items.
    pub fn from_result(r: &ExtractionResult) -> Option<Self> {
        if r.status != Status::Ok {
            return None;
        }
        Some(ScoringItem {
            sentence_id: r.sentence_id.clone(),
            anchor_index: r.anchor_index?,
            topic: r.topic.as_ref()?.text.clone(),
            vehicle: r.vehicle.as_ref()?.text.clone(),
            tokens: r.sentence.split(' ').map(str::to_string).collect(),
        })
    }

    /// Parse a components-stage record; returns `None` for non-`ok` rows.
    pub fn parse_component_record(line: &str, line_no: usize) -> Result<Option<Self>> {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |m: String| Error::Malformed {
            line: line_no,
            message: m,
        };
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", f.len())));
        }
        let status: Status = f[3].parse().map_err(|e: Error| bad(e.to_string()))?;
        if status != Status::Ok {
            return Ok(None);
        }
        let anchor_index = f[4].parse().map_err(|_| bad(format!("bad anchor index `{}`", f[4])))?;
        Ok(Some(ScoringItem {
            sentence_id: f[0].to_string(),
            anchor_index,
            topic: f[1].to_string(),
            vehicle: f[2].to_string(),
            tokens: f[5].split(' ').map(str::to_string).collect(),
        }))
    }
}

fn score_item(
    item: &ScoringItem,
    knowledge: &dyn PropertyProvider,
    context: &dyn PropertyProvider,
    th: Thresholds,
) -> Result<Vec<SimileInstance>> {
    let topic = normalize_term(&item.topic);
    let vehicle = normalize_term(&item.vehicle);
    let masked = mask_sentence(&item.tokens, item.anchor_index)?;
    let k = normalize_scores(&rank_candidates(knowledge.query(&vehicle)?)?)?;
    let c = normalize_scores(&rank_candidates(context.query(&masked)?)?)?;
    Ok(select_properties(&k, &c, th)
        .into_iter()
        .map(|sp| SimileInstance {
            sentence_id: item.sentence_id.clone(),
            topic: topic.clone(),
            vehicle: vehicle.clone(),
            score: sp.score(),
            property: sp.property,
            knowledge: sp.knowledge,
            context: sp.context,
        })
        .collect())
}

/// Score every item. Failed items are skipped with a diagnostic (line = item position + 1).
/// Output is sorted by (sentence id, anchor, property).
pub fn build_instances(
    items: &[ScoringItem],
    knowledge: &dyn PropertyProvider,
    context: &dyn PropertyProvider,
    th: Thresholds,
) -> (Vec<SimileInstance>, Vec<Diagnostic>) {
    let mut scored: Vec<(usize, Result<Vec<SimileInstance>>)> = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| (i, score_item(item, knowledge, context, th)))
        .collect();
    scored.sort_by(|a, b| {
        let (x, y) = (&items[a.0], &items[b.0]);
        x.sentence_id
            .cmp(&y.sentence_id)
            .then(x.anchor_index.cmp(&y.anchor_index))
            .then(a.0.cmp(&b.0))
    });
    let mut out = Vec::new();
    let mut diags = Vec::new();
    for (i, res) in scored {
        match res {
            Ok(v) => out.extend(v),
            Err(e) => diags.push(Diagnostic {
                line: i + 1,
                message: format!("{}: {e}", items[i].sentence_id),
            }),
        }
    }
    (out, diags)
}

/// Lookup-table provider. Knowledge tables are keyed by the normalized vehicle,
/// context tables by [`context_key`] of the masked sentence.
#[derive(Debug, Clone)]
pub struct TableProvider {
    kind: ProviderKind,
    table: HashMap<String, Vec<Candidate>>,
}

impl TableProvider {
    pub fn new(kind: ProviderKind) -> Self {
        TableProvider {
            kind,
            table: HashMap::new(),
        }
    }

    pub fn insert(&mut self, key: &str, property: &str, score: f64) {
        let key = match self.kind {
            ProviderKind::Knowledge => normalize_term(key),
            ProviderKind::Context => key.trim().to_string(),
        };
        self.table.entry(key).or_default().push(Candidate {
            property: property.to_string(),
            score,
        });
    }

    /// Read `key<TAB>property<TAB>score` lines.
    pub fn read<R: BufRead>(kind: ProviderKind, reader: R) -> Result<Self> {
        let mut out = TableProvider::new(kind);
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<provider table>", e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = |m: &str| Error::Malformed {
                line: i + 1,
                message: m.to_string(),
            };
            if f.len() != 3 {
                return Err(bad("expected `key<TAB>property<TAB>score`"));
            }
            let score: f64 = f[2].trim().parse().map_err(|_| bad("bad score"))?;
            if !(0.0..=1.0).contains(&score) {
                return Err(bad("score outside [0,1]"));
            }
            out.insert(f[0], f[1], score);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl PropertyProvider for TableProvider {
    fn kind(&self) -> ProviderKind {
        self.kind
    }

    fn query(&self, input: &str) -> Result<Vec<Candidate>> {
        let key = match self.kind {
            ProviderKind::Knowledge => normalize_term(input),
            ProviderKind::Context => context_key(input),
        };
        Ok(self.table.get(&key).cloned().unwrap_or_default())
    }
}

#[derive(Serialize)]
struct HttpRequest<'a> {
    kind: ProviderKind,
    input: &'a str,
}

#[derive(Deserialize)]
struct HttpResponse {
    candidates: Vec<Candidate>,
}

/// Provider backed by a JSON-over-HTTP service:
/// `POST {"kind","input"}` answered with `{"candidates":[{"property","score"}]}`.
pub struct HttpProvider {
    kind: ProviderKind,
    url: String,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(kind: ProviderKind, url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpProvider {
            kind,
            url: url.into(),
            agent,
        }
    }
}

impl PropertyProvider for HttpProvider {
    fn kind(&self) -> ProviderKind {
        self.kind
    }

    fn query(&self, input: &str) -> Result<Vec<Candidate>> {
        let req = HttpRequest { kind: self.kind, input };
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&req)
            .map_err(|e| Error::Provider(format!("{}: {e}", self.url)))?;
        let body: HttpResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Provider(format!("{}: bad response: {e}", self.url)))?;
        Ok(body.candidates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cands(v: &[(&str, f64)]) -> Vec<Candidate> {
        v.iter()
            .map(|(p, s)| Candidate {
                property: p.to_string(),
                score: *s,
            })
            .collect()
    }

    #[test]
    fn mask_examples() {
        let toks: Vec<&str> = "Her hair felt like silk .".split(' ').collect();
        assert_eq!(mask_sentence(&toks, 3).unwrap(), "Her hair felt as [MASK] as silk .");
        assert_eq!(mask_sentence(&["like", "a", "rock"], 0).unwrap(), "as [MASK] as a rock");
        assert!(mask_sentence(&toks, 2).is_err());
        assert!(mask_sentence(&toks, 6).is_err());
    }

    #[test]
    fn normalize_examples() {
        let n = normalize_scores(&cands(&[("a", 1.0), ("b", 0.6), ("c", 0.0)])).unwrap();
        assert_eq!(n.iter().map(|c| c.score).collect::<Vec<_>>(), vec![0.5, 0.3, 0.0]);
        assert!(normalize_scores(&cands(&[("a", 1.5)])).is_err());
        assert!(normalize_scores(&cands(&[("a", 0.1); 11])).is_err());
    }

    #[test]
    fn select_examples() {
        let th = Thresholds::default();
        let r = select_properties(&cands(&[("soft", 0.35)]), &cands(&[("soft", 0.20)]), th);
        assert_eq!(r.len(), 1);
        assert!((r[0].score() - 0.55).abs() < 1e-12);
        assert!(select_properties(&cands(&[("good", 0.10)]), &[], th).is_empty());
        let r = select_properties(&[], &cands(&[("shiny", 0.05)]), th);
        assert_eq!(r[0].property, "shiny");
        assert_eq!(r[0].score(), 0.05);
        assert!(select_properties(&[], &cands(&[("zero", 0.0)]), th).is_empty());
    }

    #[test]
    fn ranking_is_order_independent() {
        let a = rank_candidates(cands(&[("b", 0.5), ("a", 0.5), ("C", 0.9)])).unwrap();
        let b = rank_candidates(cands(&[("c", 0.9), ("a", 0.5), ("b", 0.5)])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].property, "c");
        assert_eq!(a[1].property, "a");
        assert!(rank_candidates(cands(&[("x", -0.1)])).is_err());
        let many: Vec<(String, f64)> = (0..15).map(|i| (format!("p{i:02}"), i as f64 / 20.0)).collect();
        let many: Vec<Candidate> = many
            .into_iter()
            .map(|(property, score)| Candidate { property, score })
            .collect();
        assert_eq!(rank_candidates(many).unwrap().len(), MAX_CANDIDATES);
    }

    struct Failing;
    impl PropertyProvider for Failing {
        fn kind(&self) -> ProviderKind {
            ProviderKind::Knowledge
        }
        fn query(&self, input: &str) -> Result<Vec<Candidate>> {
            if input == "boom" {
                Err(Error::Provider("down".into()))
            } else {
                Ok(cands(&[("soft", 0.8), ("warm", 0.4)]))
            }
        }
    }

    fn item(id: &str, vehicle: &str) -> ScoringItem {
        ScoringItem {
            sentence_id: id.into(),
            anchor_index: 3,
            topic: "Her hair".into(),
            vehicle: vehicle.into(),
            tokens: "Her hair felt like silk .".split(' ').map(String::from).collect(),
        }
    }

    #[test]
    fn build_skips_failures() {
        let mut ctx = TableProvider::new(ProviderKind::Context);
        ctx.insert(&context_key("Her hair felt as [MASK] as silk ."), "smooth", 0.3);
        let (inst, diags) = build_instances(
            &[item("b", "boom"), item("a", "silk")],
            &Failing,
            &ctx,
            Thresholds::default(),
        );
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.starts_with("b:"));
        let props: Vec<&str> = inst.iter().map(|i| i.property.as_str()).collect();
        assert_eq!(props, vec!["smooth", "soft"]);
        assert_eq!(inst[1].score, 0.4);
        assert_eq!(inst[0].topic, "her hair");
    }

    #[test]
    fn instance_record_roundtrip() {
        let i = SimileInstance {
            sentence_id: "s1".into(),
            topic: "her hair".into(),
            property: "soft".into(),
            vehicle: "silk".into(),
            score: 0.1 + 0.2,
            knowledge: 0.1,
            context: 0.2,
        };
        assert_eq!(SimileInstance::parse_record(&i.to_record(), 1).unwrap(), i);
    }

    #[test]
    fn table_read_errors() {
        assert!(TableProvider::read(ProviderKind::Knowledge, "silk\tsoft\n".as_bytes()).is_err());
        assert!(TableProvider::read(ProviderKind::Knowledge, "silk\tsoft\t2\n".as_bytes()).is_err());
        let t = TableProvider::read(ProviderKind::Knowledge, "Silk\tsoft\t0.9\n".as_bytes()).unwrap();
        assert_eq!(t.query("silk").unwrap().len(), 1);
        assert!(t.query("wool").unwrap().is_empty());
    }
}
