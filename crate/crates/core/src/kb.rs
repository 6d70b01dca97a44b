//! Triplet aggregation, noisy-or plausibility, typicality and the on-disk store.
//!
//! The file is JSON lines: a header object followed by one triplet per line in
//! (topic, property, vehicle) order.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::properties::SimileInstance;
use crate::text::normalize_term;

pub const KB_FORMAT: &str = "simkb";
pub const KB_VERSION: u32 = 1;

/// Above this many scores the product is accumulated in log space.
const LOG_SPACE_THRESHOLD: usize = 64;

/// Noisy-or: `1 - prod(1 - s)`.
pub fn plausibility(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("plausibility of an empty score list"));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::invalid(format!("score {s} outside [0,1]")));
    }
    if scores.len() > LOG_SPACE_THRESHOLD {
        if scores.contains(&1.0) {
            return Ok(1.0);
        }
        let log_miss: f64 = scores.iter().map(|s| (-s).ln_1p()).sum();
        return Ok(-log_miss.exp_m1());
    }
    Ok(1.0 - scores.iter().map(|s| 1.0 - s).product::<f64>())
}

/// (topic, property, vehicle), each normalized.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripletKey {
    pub topic: String,
    pub property: String,
    pub vehicle: String,
}

impl TripletKey {
    pub fn new(topic: &str, property: &str, vehicle: &str) -> Self {
        TripletKey {
            topic: normalize_term(topic),
            property: normalize_term(property),
            vehicle: normalize_term(vehicle),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub topic: String,
    pub property: String,
    pub vehicle: String,
    pub frequency: u64,
    /// Sorted ascending.
    pub instance_scores: Vec<f64>,
    pub plausibility: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub typ_p_given_tv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub typ_tv_given_p: Option<f64>,
}

impl Triplet {
    fn from_scores(key: TripletKey, mut scores: Vec<f64>) -> Result<Self> {
        scores.sort_by(f64::total_cmp);
        let plausibility = plausibility(&scores)?;
        Ok(Triplet {
            topic: key.topic,
            property: key.property,
            vehicle: key.vehicle,
            frequency: scores.len() as u64,
            instance_scores: scores,
            plausibility,
            typ_p_given_tv: None,
            typ_tv_given_p: None,
        })
    }

    pub fn key(&self) -> TripletKey {
        TripletKey {
            topic: self.topic.clone(),
            property: self.property.clone(),
            vehicle: self.vehicle.clone(),
        }
    }

    /// N·P, the typicality weight.
    pub fn weight(&self) -> f64 {
        self.frequency as f64 * self.plausibility
    }
}

/// Instance scores grouped by triplet key. Shards merge associatively.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aggregate(pub BTreeMap<TripletKey, Vec<f64>>);

impl Aggregate {
    pub fn push(&mut self, key: TripletKey, score: f64) {
        self.0.entry(key).or_default().push(score);
    }

    pub fn merge(mut self, other: Aggregate) -> Aggregate {
        for (k, mut v) in other.0 {
            self.0.entry(k).or_default().append(&mut v);
        }
        self
    }
}

/// Group instances by normalized (t,p,v).
pub fn aggregate(instances: &[SimileInstance]) -> Aggregate {
    instances
        .par_iter()
        .fold(Aggregate::default, |mut acc, i| {
            acc.push(TripletKey::new(&i.topic, &i.property, &i.vehicle), i.score);
            acc
        })
        .reduce(Aggregate::default, Aggregate::merge)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbHeader {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub finalized: bool,
    pub triplets: usize,
    pub instances: u64,
    pub degenerate_groups: usize,
}

type Index<K> = HashMap<K, Vec<usize>>;

#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    triplets: Vec<Triplet>,
    config_hash: String,
    finalized: bool,
    degenerate_groups: usize,
    by_tv: Index<(String, String)>,
    by_p: Index<String>,
    by_pv: Index<(String, String)>,
    by_v: Index<String>,
}

impl PartialEq for KnowledgeBase {
    fn eq(&self, other: &Self) -> bool {
        self.triplets == other.triplets
            && self.config_hash == other.config_hash
            && self.finalized == other.finalized
            && self.degenerate_groups == other.degenerate_groups
    }
}

impl KnowledgeBase {
    fn from_sorted(triplets: Vec<Triplet>, config_hash: String, finalized: bool, degenerate_groups: usize) -> Self {
        let mut kb = KnowledgeBase {
            triplets,
            config_hash,
            finalized,
            degenerate_groups,
            by_tv: HashMap::new(),
            by_p: HashMap::new(),
            by_pv: HashMap::new(),
            by_v: HashMap::new(),
        };
        for (i, t) in kb.triplets.iter().enumerate() {
            kb.by_tv
                .entry((t.topic.clone(), t.vehicle.clone()))
                .or_default()
                .push(i);
            kb.by_p.entry(t.property.clone()).or_default().push(i);
            kb.by_pv
                .entry((t.property.clone(), t.vehicle.clone()))
                .or_default()
                .push(i);
            kb.by_v.entry(t.vehicle.clone()).or_default().push(i);
        }
        kb
    }

    /// Unfinalized KB from an aggregate.
    pub fn from_aggregate(agg: Aggregate, config_hash: impl Into<String>) -> Result<Self> {
        let triplets = agg
            .0
            .into_iter()
            .map(|(k, v)| Triplet::from_scores(k, v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_sorted(triplets, config_hash.into(), false, 0))
    }

    pub fn build(instances: &[SimileInstance], config_hash: impl Into<String>) -> Result<Self> {
        Self::from_aggregate(aggregate(instances), config_hash)
    }

    /// Union of two shards; the result is unfinalized.
    pub fn merge(&self, other: &KnowledgeBase) -> Result<Self> {
        let mut agg = Aggregate::default();
        for t in self.triplets.iter().chain(&other.triplets) {
            agg.0.entry(t.key()).or_default().extend(&t.instance_scores);
        }
        Self::from_aggregate(agg, self.config_hash.clone())
    }

    /// Compute both typicalities. Groups whose weights sum to zero get 0 and a warning.
    pub fn finalize(mut self) -> Self {
        fn normalize(triplets: &[Triplet], groups: Vec<&Vec<usize>>) -> (Vec<(usize, f64)>, usize) {
            let per_group: Vec<(Vec<(usize, f64)>, bool)> = groups
                .par_iter()
                .map(|idx| {
                    let total: f64 = idx.iter().map(|&i| triplets[i].weight()).sum();
                    if total > 0.0 {
                        (idx.iter().map(|&i| (i, triplets[i].weight() / total)).collect(), false)
                    } else {
                        (idx.iter().map(|&i| (i, 0.0)).collect(), true)
                    }
                })
                .collect();
            let degenerate = per_group.iter().filter(|(_, d)| *d).count();
            (per_group.into_iter().flat_map(|(v, _)| v).collect(), degenerate)
        }
        let (tv, deg_tv) = normalize(&self.triplets, self.by_tv.values().collect());
        let (p, deg_p) = normalize(&self.triplets, self.by_p.values().collect());
        for (i, x) in tv {
            self.triplets[i].typ_p_given_tv = Some(x);
        }
        for (i, x) in p {
            self.triplets[i].typ_tv_given_p = Some(x);
        }
        if deg_tv + deg_p > 0 {
            log::warn!(
                "{} degenerate typicality groups (all plausibilities zero)",
                deg_tv + deg_p
            );
        }
        self.degenerate_groups = deg_tv + deg_p;
        self.finalized = true;
        self
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn total_instances(&self) -> u64 {
        self.triplets.iter().map(|t| t.frequency).sum()
    }

    pub fn header(&self) -> KbHeader {
        KbHeader {
            format: KB_FORMAT.to_string(),
            version: KB_VERSION,
            config_hash: self.config_hash.clone(),
            finalized: self.finalized,
            triplets: self.triplets.len(),
            instances: self.total_instances(),
            degenerate_groups: self.degenerate_groups,
        }
    }

    fn group<K: std::hash::Hash + Eq>(&self, index: &Index<K>, key: &K) -> Vec<&Triplet> {
        index
            .get(key)
            .map(|v| v.iter().map(|&i| &self.triplets[i]).collect())
            .unwrap_or_default()
    }

    pub fn get(&self, topic: &str, property: &str, vehicle: &str) -> Option<&Triplet> {
        let key = TripletKey::new(topic, property, vehicle);
        self.triplets
            .binary_search_by(|t| {
                (t.topic.as_str(), t.property.as_str(), t.vehicle.as_str()).cmp(&(
                    key.topic.as_str(),
                    key.property.as_str(),
                    key.vehicle.as_str(),
                ))
            })
            .ok()
            .map(|i| &self.triplets[i])
    }

    /// G_(t,v)
    pub fn query_tv(&self, topic: &str, vehicle: &str) -> Vec<&Triplet> {
        self.group(&self.by_tv, &(normalize_term(topic), normalize_term(vehicle)))
    }

    /// G_p
    pub fn query_p(&self, property: &str) -> Vec<&Triplet> {
        self.group(&self.by_p, &normalize_term(property))
    }

    /// G_(p,v)
    pub fn query_pv(&self, property: &str, vehicle: &str) -> Vec<&Triplet> {
        self.group(&self.by_pv, &(normalize_term(property), normalize_term(vehicle)))
    }

    /// All triplets with the given vehicle.
    pub fn query_v(&self, vehicle: &str) -> Vec<&Triplet> {
        self.group(&self.by_v, &normalize_term(vehicle))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| Error::io("<kb output>", e);
        let header = serde_json::to_string(&self.header()).map_err(|e| Error::KbFormat(e.to_string()))?;
        writeln!(w, "{header}").map_err(io)?;
        for t in &self.triplets {
            let line = serde_json::to_string(t).map_err(|e| Error::KbFormat(e.to_string()))?;
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::KbFormat("empty file".into()))?
            .map_err(|e| Error::io("<kb input>", e))?;
        let header: KbHeader =
            serde_json::from_str(&first).map_err(|e| Error::KbFormat(format!("line 1: bad header: {e}")))?;
        if header.format != KB_FORMAT {
            return Err(Error::KbFormat(format!("unknown format `{}`", header.format)));
        }
        if header.version != KB_VERSION {
            return Err(Error::KbFormat(format!(
                "version {} not supported (expected {KB_VERSION})",
                header.version
            )));
        }
        let mut triplets: Vec<Triplet> = Vec::with_capacity(header.triplets);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line.map_err(|e| Error::io("<kb input>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Triplet =
                serde_json::from_str(&line).map_err(|e| Error::KbFormat(format!("line {line_no}: {e}")))?;
            if t.frequency as usize != t.instance_scores.len() || t.frequency == 0 {
                return Err(Error::KbFormat(format!(
                    "line {line_no}: frequency {} does not match {} instance scores",
                    t.frequency,
                    t.instance_scores.len()
                )));
            }
            let p = plausibility(&t.instance_scores).map_err(|e| Error::KbFormat(format!("line {line_no}: {e}")))?;
            if (p - t.plausibility).abs() > 1e-12 {
                return Err(Error::KbFormat(format!(
                    "line {line_no}: stored plausibility {} disagrees with instance scores ({p})",
                    t.plausibility
                )));
            }
            if let Some(prev) = triplets.last() {
                if prev.key() >= t.key() {
                    return Err(Error::KbFormat(format!(
                        "line {line_no}: triplets not sorted or duplicated"
                    )));
                }
            }
            if header.finalized && (t.typ_p_given_tv.is_none() || t.typ_tv_given_p.is_none()) {
                return Err(Error::KbFormat(format!(
                    "line {line_no}: finalized KB lacks typicality"
                )));
            }
            triplets.push(t);
        }
        if triplets.len() != header.triplets {
            return Err(Error::KbFormat(format!(
                "header announces {} triplets, found {}",
                header.triplets,
                triplets.len()
            )));
        }
        Ok(Self::from_sorted(
            triplets,
            header.config_hash,
            header.finalized,
            header.degenerate_groups,
        ))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(t: &str, p: &str, v: &str, s: f64) -> SimileInstance {
        SimileInstance {
            sentence_id: "x".into(),
            topic: t.into(),
            property: p.into(),
            vehicle: v.into(),
            score: s,
            knowledge: s / 2.0,
            context: s / 2.0,
        }
    }

    #[test]
    fn plausibility_examples() {
        assert_eq!(plausibility(&[0.4]).unwrap(), 0.4);
        assert_eq!(plausibility(&[0.3, 0.2, 1.0]).unwrap(), 1.0);
        assert_eq!(plausibility(&[0.5, 0.5]).unwrap(), 0.75);
        assert!(plausibility(&[]).is_err());
        assert!(plausibility(&[1.2]).is_err());
        let many = vec![0.01; 100];
        let direct = 1.0 - 0.99f64.powi(100);
        assert!((plausibility(&many).unwrap() - direct).abs() < 1e-12);
        let mut with_one = many.clone();
        with_one.push(1.0);
        assert_eq!(plausibility(&with_one).unwrap(), 1.0);
    }

    #[test]
    fn aggregate_dedups() {
        let v = vec![
            inst("Her hair", "soft", "silk", 0.5),
            inst("her  hair", "soft", "Silk", 0.2),
            inst("her hair", "soft", "silk", 0.1),
        ];
        let kb = KnowledgeBase::build(&v, "h").unwrap();
        assert_eq!(kb.len(), 1);
        let t = &kb.triplets()[0];
        assert_eq!(t.frequency, 3);
        assert_eq!(t.instance_scores, vec![0.1, 0.2, 0.5]);
        assert!(KnowledgeBase::build(&[], "h").unwrap().is_empty());
    }

    #[test]
    fn typicality_examples() {
        let v = vec![
            inst("a", "p1", "v", 0.5),
            inst("a", "p1", "v", 0.0),
            inst("a", "p2", "v", 0.5),
        ];
        let kb = KnowledgeBase::build(&v, "h").unwrap().finalize();
        let t1 = kb.get("a", "p1", "v").unwrap();
        let t2 = kb.get("a", "p2", "v").unwrap();
        assert!((t1.typ_p_given_tv.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((t2.typ_p_given_tv.unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(t1.typ_tv_given_p, Some(1.0));
    }

    #[test]
    fn degenerate_group() {
        let kb = KnowledgeBase::build(&[inst("a", "p", "v", 0.0)], "h")
            .unwrap()
            .finalize();
        assert_eq!(kb.triplets()[0].typ_p_given_tv, Some(0.0));
        assert_eq!(kb.header().degenerate_groups, 2);
    }

    #[test]
    fn roundtrip_and_queries() {
        let v = vec![
            inst("a", "p", "v", 0.3),
            inst("b", "p", "v", 0.7),
            inst("a", "q", "w", 0.1 + 0.2),
        ];
        let kb = KnowledgeBase::build(&v, "abc").unwrap().finalize();
        let mut buf = Vec::new();
        kb.write_to(&mut buf).unwrap();
        let back = KnowledgeBase::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, kb);
        assert_eq!(back.query_pv("P", "v").len(), 2);
        assert_eq!(back.query_tv("a", "w").len(), 1);
        assert!(back.query_tv("zz", "w").is_empty());
        assert_eq!(back.query_p("q")[0].instance_scores[0], 0.1 + 0.2);
    }

    #[test]
    fn corrupt_files_rejected() {
        let kb = KnowledgeBase::build(&[inst("a", "p", "v", 0.3)], "h").unwrap();
        let mut buf = Vec::new();
        kb.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let bumped = text.replace("\"version\":1", "\"version\":9");
        assert!(matches!(
            KnowledgeBase::read_from(bumped.as_bytes()),
            Err(Error::KbFormat(_))
        ));
        let truncated: String = text.lines().next().unwrap().to_string();
        assert!(KnowledgeBase::read_from(truncated.as_bytes()).is_err());
        let tampered = text.replace("\"plausibility\":0.3", "\"plausibility\":0.4");
        assert!(KnowledgeBase::read_from(tampered.as_bytes()).is_err());
        assert!(KnowledgeBase::read_from("".as_bytes()).is_err());
    }

    #[test]
    fn merge_matches_single_build() {
        let all = vec![
            inst("a", "p", "v", 0.3),
            inst("a", "p", "v", 0.6),
            inst("b", "q", "v", 0.2),
        ];
        let whole = KnowledgeBase::build(&all, "h").unwrap();
        let left = KnowledgeBase::build(&all[..1], "h").unwrap();
        let right = KnowledgeBase::build(&all[1..], "h").unwrap();
        assert_eq!(left.merge(&right).unwrap(), whole);
    }
}
