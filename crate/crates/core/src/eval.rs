//! Ranking, generation and extraction metrics.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::components::{ExtractionResult, Status};
use crate::error::{Error, Result};
use crate::text::{is_noun_tag, normalize_term};

/// Gold answers and a predicted ranking. `frequency` is optional metadata used for filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingCase {
    pub gold: Vec<String>,
    pub ranking: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<u64>,
}

impl RankingCase {
    pub fn new(gold: Vec<String>, ranking: Vec<String>) -> Self {
        RankingCase {
            gold,
            ranking,
            frequency: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gold.is_empty() {
            return Err(Error::invalid("ranking case with no gold answers"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.ranking.iter().find(|r| !seen.insert(normalize_term(r))) {
            return Err(Error::invalid(format!("duplicate `{dup}` in ranking")));
        }
        Ok(())
    }

    /// 1-based rank of the first gold answer in the ranking.
    pub fn first_hit(&self) -> Option<usize> {
        let gold: HashSet<String> = self.gold.iter().map(|g| normalize_term(g)).collect();
        self.ranking
            .iter()
            .position(|r| gold.contains(&normalize_term(r)))
            .map(|i| i + 1)
    }
}

/// Read JSON-lines ranking cases.
pub fn read_cases<R: BufRead>(reader: R) -> Result<Vec<RankingCase>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<eval cases>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let case: RankingCase = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        case.validate().map_err(|e| Error::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(case);
    }
    Ok(out)
}

/// Keep cases whose frequency is strictly above `min`; cases without a frequency are dropped.
pub fn filter_by_frequency(cases: Vec<RankingCase>, min: u64) -> Vec<RankingCase> {
    cases
        .into_iter()
        .filter(|c| c.frequency.is_some_and(|f| f > min))
        .collect()
}

pub fn mrr(cases: &[RankingCase]) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::invalid("MRR over zero cases"));
    }
    let total: f64 = cases
        .iter()
        .map(|c| c.first_hit().map_or(0.0, |r| 1.0 / r as f64))
        .sum();
    Ok(total / cases.len() as f64)
}

pub fn recall_at_k(cases: &[RankingCase], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::invalid("recall@k needs k >= 1"));
    }
    if cases.is_empty() {
        return Err(Error::invalid("recall@k over zero cases"));
    }
    let hits = cases.iter().filter(|c| c.first_hit().is_some_and(|r| r <= k)).count();
    Ok(hits as f64 / cases.len() as f64)
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    out
}

/// (clipped matches, candidate n-gram total)
fn clipped<S: AsRef<str>>(cand: &[S], reference: &[S], n: usize) -> (usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let matched = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, cand.len().saturating_sub(n - 1))
}

fn combine(stats: &[(usize, usize)], cand_len: usize, ref_len: usize) -> f64 {
    if cand_len == 0 {
        return 0.0;
    }
    let usable: Vec<&(usize, usize)> = stats.iter().filter(|(_, total)| *total > 0).collect();
    if usable.is_empty() || usable.iter().any(|(m, _)| *m == 0) {
        return 0.0;
    }
    let log_p: f64 = usable.iter().map(|(m, t)| (*m as f64 / *t as f64).ln()).sum::<f64>() / usable.len() as f64;
    let bp = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    bp * log_p.exp()
}

/// Cumulative BLEU-n with uniform weights and no smoothing. Orders longer than the
/// candidate are left out of the geometric mean.
pub fn bleu<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("BLEU order must be at least 1"));
    }
    let stats: Vec<(usize, usize)> = (1..=n).map(|i| clipped(candidate, reference, i)).collect();
    Ok(combine(&stats, candidate.len(), reference.len()))
}

/// Corpus BLEU-n: clipped counts and lengths summed over all pairs.
pub fn corpus_bleu<S: AsRef<str>>(pairs: &[(Vec<S>, Vec<S>)], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("BLEU order must be at least 1"));
    }
    let mut stats = vec![(0usize, 0usize); n];
    let (mut c_len, mut r_len) = (0, 0);
    for (c, r) in pairs {
        c_len += c.len();
        r_len += r.len();
        for (i, s) in stats.iter_mut().enumerate() {
            let (m, t) = clipped(c, r, i + 1);
            s.0 += m;
            s.1 += t;
        }
    }
    Ok(combine(&stats, c_len, r_len))
}

/// Mean whitespace-token length; 0 for no input.
pub fn avg_length<S: AsRef<str>>(items: &[S]) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let total: usize = items.iter().map(|s| s.as_ref().split_whitespace().count()).sum();
    total as f64 / items.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when any ratio had a zero denominator and was reported as 0.
    pub zero_division: bool,
}

pub fn prf1(tp: u64, fp: u64, fn_: u64) -> Prf {
    let mut zero_division = false;
    let mut ratio = |num: f64, den: f64| {
        if den == 0.0 {
            zero_division = true;
            0.0
        } else {
            num / den
        }
    };
    let precision = ratio(tp as f64, (tp + fp) as f64);
    let recall = ratio(tp as f64, (tp + fn_) as f64);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    Prf {
        precision,
        recall,
        f1,
        zero_division,
    }
}

/// Fleiss' kappa for `ratings[item][category]` counts; every item needs the same rater count.
pub fn fleiss_kappa(ratings: &[Vec<u32>]) -> Result<f64> {
    let first = ratings.first().ok_or_else(|| Error::invalid("no items"))?;
    let raters: u32 = first.iter().sum();
    if raters < 2 {
        return Err(Error::invalid("need at least two raters"));
    }
    let cats = first.len();
    if ratings
        .iter()
        .any(|r| r.len() != cats || r.iter().sum::<u32>() != raters)
    {
        return Err(Error::invalid("rows differ in category count or rater total"));
    }
    let n = raters as f64;
    let items = ratings.len() as f64;
    let p_bar = ratings
        .iter()
        .map(|r| (r.iter().map(|&x| (x * x) as f64).sum::<f64>() - n) / (n * (n - 1.0)))
        .sum::<f64>()
        / items;
    let p_e: f64 = (0..cats)
        .map(|j| {
            let pj = ratings.iter().map(|r| r[j] as f64).sum::<f64>() / (items * n);
            pj * pj
        })
        .sum();
    if (1.0 - p_e).abs() < f64::EPSILON {
        return Err(Error::invalid("chance agreement is 1; kappa undefined"));
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Hand-labelled extraction outcome for one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldComponents {
    pub sentence_id: String,
    pub anchor_index: Option<usize>,
    pub status: Status,
    pub topic: String,
    pub vehicle: String,
}

/// Read `id<TAB>anchor<TAB>status<TAB>topic<TAB>vehicle`; anchor is `-` for none.
pub fn read_gold_components<R: BufRead>(reader: R) -> Result<Vec<GoldComponents>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<gold components>", e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: String| Error::Malformed {
            line: i + 1,
            message: m,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", f.len())));
        }
        let anchor_index = match f[1] {
            "-" => None,
            a => Some(a.parse().map_err(|_| bad(format!("bad anchor `{a}`")))?),
        };
        out.push(GoldComponents {
            sentence_id: f[0].to_string(),
            anchor_index,
            status: f[2].parse().map_err(|e: Error| bad(e.to_string()))?,
            topic: f[3].to_string(),
            vehicle: f[4].to_string(),
        });
    }
    Ok(out)
}

/// Rightmost noun of `span` using the tags of its occurrence in `sentence`; else its last word.
pub fn core_noun(span: &str, sentence: &[(String, String)]) -> String {
    let words: Vec<&str> = span.split_whitespace().collect();
    if words.is_empty() {
        return String::new();
    }
    for start in 0..sentence.len().saturating_sub(words.len() - 1) {
        let window = &sentence[start..start + words.len()];
        if window.iter().zip(&words).all(|((t, _), w)| t.eq_ignore_ascii_case(w)) {
            if let Some((t, _)) = window.iter().rev().find(|(_, tag)| is_noun_tag(tag)) {
                return t.to_lowercase();
            }
            break;
        }
    }
    words[words.len() - 1].to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionScores {
    pub hard: Prf,
    pub easy: Prf,
    /// Gold rows whose status (including filter reason) was reproduced.
    pub status_accuracy: f64,
}

/// Pair-level scores: a true positive needs both components to match. Hard matching is
/// case-insensitive exact text; easy matching compares core nouns.
pub fn score_extraction(
    predicted: &[ExtractionResult],
    gold: &[GoldComponents],
    sentences: &HashMap<String, Vec<(String, String)>>,
) -> ExtractionScores {
    let pred: HashMap<(&str, Option<usize>), &ExtractionResult> = predicted
        .iter()
        .map(|r| ((r.sentence_id.as_str(), r.anchor_index), r))
        .collect();
    let empty = Vec::new();
    let (mut hard, mut easy) = ((0u64, 0u64, 0u64), (0u64, 0u64, 0u64));
    let mut status_hits = 0usize;
    let mut gold_keys = HashSet::new();
    for g in gold {
        gold_keys.insert((g.sentence_id.as_str(), g.anchor_index));
        let p = pred.get(&(g.sentence_id.as_str(), g.anchor_index));
        if p.is_some_and(|p| p.status == g.status) {
            status_hits += 1;
        }
        let tags = sentences.get(&g.sentence_id).unwrap_or(&empty);
        let pair = p
            .filter(|p| p.status == Status::Ok)
            .and_then(|p| Some((p.topic.as_ref()?, p.vehicle.as_ref()?)));
        let gold_ok = g.status == Status::Ok;
        match pair {
            Some((t, v)) => {
                let hard_match = gold_ok
                    && normalize_term(&t.text) == normalize_term(&g.topic)
                    && normalize_term(&v.text) == normalize_term(&g.vehicle);
                let easy_match = gold_ok
                    && t.core_noun().map(str::to_lowercase).as_deref() == Some(core_noun(&g.topic, tags).as_str())
                    && v.core_noun().map(str::to_lowercase).as_deref() == Some(core_noun(&g.vehicle, tags).as_str());
                for (counts, ok) in [(&mut hard, hard_match), (&mut easy, easy_match)] {
                    if ok {
                        counts.0 += 1;
                    } else {
                        counts.1 += 1;
                        if gold_ok {
                            counts.2 += 1;
                        }
                    }
                }
            }
            None if gold_ok => {
                hard.2 += 1;
                easy.2 += 1;
            }
            None => {}
        }
    }
    // Predicted pairs with no gold row are false positives.
    let extra = predicted
        .iter()
        .filter(|r| r.status == Status::Ok && !gold_keys.contains(&(r.sentence_id.as_str(), r.anchor_index)))
        .count() as u64;
    hard.1 += extra;
    easy.1 += extra;
    ExtractionScores {
        hard: prf1(hard.0, hard.1, hard.2),
        easy: prf1(easy.0, easy.1, easy.2),
        status_accuracy: if gold.is_empty() {
            0.0
        } else {
            status_hits as f64 / gold.len() as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(gold: &[&str], ranking: &[&str]) -> RankingCase {
        RankingCase::new(
            gold.iter().map(|s| s.to_string()).collect(),
            ranking.iter().map(|s| s.to_string()).collect(),
        )
    }

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn ranking_examples() {
        assert_eq!(mrr(&[case(&["a"], &["a", "b"])]).unwrap(), 1.0);
        assert_eq!(mrr(&[case(&["b"], &["a", "b"])]).unwrap(), 0.5);
        let cases = vec![
            case(&["a"], &["a", "x"]),
            case(&["d"], &["x", "y", "z", "d", "e"]),
            case(&["q"], &["x"]),
        ];
        assert!((mrr(&cases).unwrap() - 1.25 / 3.0).abs() < 1e-12);
        assert!((recall_at_k(&cases, 5).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(recall_at_k(&cases, 0).is_err());
        assert!(mrr(&[]).is_err());
        assert!(case(&["a"], &["b", "B"]).validate().is_err());
    }

    #[test]
    fn bleu_examples() {
        let x = toks("kids in a candy store");
        assert_eq!(bleu(&x, &x, 1).unwrap(), 1.0);
        assert_eq!(bleu(&x, &x, 2).unwrap(), 1.0);
        assert_eq!(bleu(&toks("silk"), &toks("silk"), 2).unwrap(), 1.0);
        assert_eq!(bleu(&toks("a b"), &toks("c d"), 1).unwrap(), 0.0);
        let empty: Vec<&str> = vec![];
        assert_eq!(bleu(&empty, &x, 1).unwrap(), 0.0);
        // "a big cat" vs "a cat": unigram 2/3, bigram 0/2.
        assert!((bleu(&toks("a big cat"), &toks("a cat"), 1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(bleu(&toks("a big cat"), &toks("a cat"), 2).unwrap(), 0.0);
        // Brevity: "cat" vs "a cat" = exp(1 - 2) * 1.
        assert!((bleu(&toks("cat"), &toks("a cat"), 1).unwrap() - (-1f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn prf_examples() {
        let p = prf1(8, 2, 2);
        assert!((p.f1 - 0.8).abs() < 1e-12 && !p.zero_division);
        let z = prf1(0, 0, 0);
        assert_eq!((z.precision, z.recall, z.f1), (0.0, 0.0, 0.0));
        assert!(z.zero_division);
        assert_eq!(avg_length(&["a", "b c d"]), 2.0);
    }

    #[test]
    fn kappa_perfect_agreement() {
        let k = fleiss_kappa(&[vec![3, 0], vec![0, 3], vec![3, 0]]).unwrap();
        assert!((k - 1.0).abs() < 1e-12);
        assert!(fleiss_kappa(&[vec![3, 0], vec![1, 1]]).is_err());
    }

    #[test]
    fn frequency_filter() {
        let mut a = case(&["a"], &["a"]);
        a.frequency = Some(5);
        let mut b = case(&["a"], &["a"]);
        b.frequency = Some(4);
        assert_eq!(filter_by_frequency(vec![a.clone(), b], 4), vec![a]);
    }

    #[test]
    fn core_noun_uses_tags() {
        let s: Vec<(String, String)> = [
            ("kids", "NNS"),
            ("in", "IN"),
            ("a", "DT"),
            ("candy", "NN"),
            ("store", "NN"),
        ]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        assert_eq!(core_noun("kids in a candy store", &s), "store");
        assert_eq!(core_noun("unseen words", &s), "words");
    }
}
