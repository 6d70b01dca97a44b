//! Knowledge-base statistics: pair frequency histogram and domain distributions.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::text::{normalize_term, singularize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    Person,
    Animal,
    BodyPart,
    Food,
    NaturalObject,
    NaturalPhenomenon,
    Feeling,
    Artifact,
    Location,
    Action,
}

impl Domain {
    pub const ALL: [Domain; 10] = [
        Domain::Person,
        Domain::Animal,
        Domain::BodyPart,
        Domain::Food,
        Domain::NaturalObject,
        Domain::NaturalPhenomenon,
        Domain::Feeling,
        Domain::Artifact,
        Domain::Location,
        Domain::Action,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Domain::Person => "person",
            Domain::Animal => "animal",
            Domain::BodyPart => "body part",
            Domain::Food => "food",
            Domain::NaturalObject => "natural object",
            Domain::NaturalPhenomenon => "natural phenomenon",
            Domain::Feeling => "feeling",
            Domain::Artifact => "artifact",
            Domain::Location => "location",
            Domain::Action => "action",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = Error;

    /// Accepts `body part`, `body_part` or `body-part`.
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_lowercase().replace(['_', '-'], " ");
        Domain::ALL
            .into_iter()
            .find(|d| d.name() == key)
            .ok_or_else(|| Error::invalid(format!("`{s}` is not a domain")))
    }
}

/// Words that end the head segment of a multi-word term ("kids in a candy store" -> "kids").
const HEAD_BREAKERS: [&str; 14] = [
    "in", "of", "on", "at", "with", "from", "for", "to", "by", "that", "who", "which", "under", "over",
];

/// term -> hypernym paths in priority order.
#[derive(Debug, Clone, Default)]
pub struct Taxonomy {
    paths: HashMap<String, Vec<Vec<String>>>,
}

impl Taxonomy {
    pub fn add_path(&mut self, term: &str, path: &[&str]) {
        self.paths
            .entry(normalize_term(term))
            .or_default()
            .push(path.iter().map(|h| normalize_term(&h.replace('_', " "))).collect());
    }

    /// Read `term<TAB>h1>h2>...` lines; repeated terms add further paths.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut tax = Taxonomy::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<taxonomy>", e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (term, path) = line.split_once('\t').ok_or_else(|| Error::Malformed {
                line: i + 1,
                message: "expected `term<TAB>hypernym>hypernym...`".into(),
            })?;
            let hops: Vec<&str> = path.split('>').map(str::trim).filter(|h| !h.is_empty()).collect();
            tax.add_path(term, &hops);
        }
        Ok(tax)
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    fn lookup(&self, word: &str) -> Option<Domain> {
        let paths = self.paths.get(word).or_else(|| self.paths.get(&singularize(word)))?;
        paths
            .iter()
            .flat_map(|p| std::iter::once(word).chain(p.iter().map(String::as_str)))
            .find_map(|h| h.parse::<Domain>().ok())
    }

    /// Domain of a term: the whole term first, then the words of its head segment from
    /// right to left, each looked up along its hypernym paths in order.
    pub fn assign_domain(&self, term: &str) -> Option<Domain> {
        let term = normalize_term(term);
        if let Some(d) = self.lookup(&term) {
            return Some(d);
        }
        let words: Vec<&str> = term.split(' ').collect();
        let end = words
            .iter()
            .position(|w| HEAD_BREAKERS.contains(w))
            .unwrap_or(words.len());
        words[..end].iter().rev().find_map(|w| self.lookup(w))
    }
}

/// Histogram of (t,v)-pair frequency: frequency value -> number of pairs.
pub fn freq_distribution(kb: &KnowledgeBase) -> BTreeMap<u64, u64> {
    let mut pairs: HashMap<(&str, &str), u64> = HashMap::new();
    for t in kb.triplets() {
        *pairs.entry((&t.topic, &t.vehicle)).or_insert(0) += t.frequency;
    }
    let mut hist = BTreeMap::new();
    for f in pairs.into_values() {
        *hist.entry(f).or_insert(0) += 1;
    }
    hist
}

pub fn freq_distribution_csv(hist: &BTreeMap<u64, u64>) -> String {
    let mut out = String::from("frequency,pairs\n");
    for (f, n) in hist {
        out.push_str(&format!("{f},{n}\n"));
    }
    out
}

/// Frequency-weighted share of each (topic domain, vehicle domain) cell, in percent.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DomainMapping {
    pub cells: BTreeMap<(Domain, Domain), f64>,
    /// Total weight of triplets whose topic and vehicle both got a domain.
    pub assigned_weight: u64,
    pub ignored_triplets: usize,
}

impl DomainMapping {
    /// Rows sorted by share descending, ties by domain order.
    pub fn ranked(&self) -> Vec<((Domain, Domain), f64)> {
        let mut v: Vec<_> = self.cells.iter().map(|(k, p)| (*k, *p)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("topic_domain,vehicle_domain,percent\n");
        for ((t, v), p) in self.ranked() {
            out.push_str(&format!("{t},{v},{p:.4}\n"));
        }
        out
    }
}

pub fn domain_mapping_table(kb: &KnowledgeBase, tax: &Taxonomy) -> DomainMapping {
    let mut weights: BTreeMap<(Domain, Domain), u64> = BTreeMap::new();
    let mut ignored = 0;
    for t in kb.triplets() {
        match (tax.assign_domain(&t.topic), tax.assign_domain(&t.vehicle)) {
            (Some(a), Some(b)) => *weights.entry((a, b)).or_insert(0) += t.frequency,
            _ => ignored += 1,
        }
    }
    let total: u64 = weights.values().sum();
    if total == 0 {
        log::warn!("no triplet has both terms assigned to a domain");
    }
    DomainMapping {
        cells: weights
            .into_iter()
            .map(|(k, w)| (k, 100.0 * w as f64 / total as f64))
            .collect(),
        assigned_weight: total,
        ignored_triplets: ignored,
    }
}

/// Frequency-weighted domain shares (percent) of topics and of vehicles, each over assigned terms.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DomainDistribution {
    pub topics: BTreeMap<Domain, f64>,
    pub vehicles: BTreeMap<Domain, f64>,
}

impl DomainDistribution {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("domain,topic_percent,vehicle_percent\n");
        for d in Domain::ALL {
            out.push_str(&format!(
                "{d},{:.4},{:.4}\n",
                self.topics.get(&d).copied().unwrap_or(0.0),
                self.vehicles.get(&d).copied().unwrap_or(0.0)
            ));
        }
        out
    }
}

pub fn domain_distribution(kb: &KnowledgeBase, tax: &Taxonomy) -> DomainDistribution {
    fn shares(counts: BTreeMap<Domain, u64>) -> BTreeMap<Domain, f64> {
        let total: u64 = counts.values().sum();
        counts
            .into_iter()
            .map(|(d, w)| (d, 100.0 * w as f64 / total as f64))
            .collect()
    }
    let mut topics = BTreeMap::new();
    let mut vehicles = BTreeMap::new();
    for t in kb.triplets() {
        if let Some(d) = tax.assign_domain(&t.topic) {
            *topics.entry(d).or_insert(0) += t.frequency;
        }
        if let Some(d) = tax.assign_domain(&t.vehicle) {
            *vehicles.entry(d).or_insert(0) += t.frequency;
        }
    }
    DomainDistribution {
        topics: shares(topics),
        vehicles: shares(vehicles),
    }
}
