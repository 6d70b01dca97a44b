//! Ranking properties and vehicles over a finalized knowledge base, plus
//! rule-based rewriting of "X is ADJ" sentences into similes.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Triplet};
use crate::text::{is_punct, normalize_term, word_count};

pub const DEFAULT_GAMMA: f64 = 2.0;
pub const MAX_COHERENT_VEHICLE_WORDS: usize = 7;

/// One summand of a score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contribution {
    pub topic: String,
    pub frequency: u64,
    pub plausibility: f64,
    pub typicality: f64,
}

impl Contribution {
    pub fn term(&self) -> f64 {
        self.typicality * self.frequency as f64 * self.plausibility
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedAnswer {
    pub answer: String,
    /// May be infinite for polish scores with long vehicles; ranking uses `log_score`.
    pub score: f64,
    pub log_score: f64,
    pub contributions: Vec<Contribution>,
}

/// Sort by score descending, ties by answer. Log scores are compared at a resolution
/// of 1e-9 so that rounding noise cannot reorder mathematically equal scores.
pub fn sort_answers(answers: &mut [RankedAnswer]) {
    fn key(log: f64) -> i64 {
        if log == f64::NEG_INFINITY {
            i64::MIN
        } else {
            (log * 1e9).round() as i64
        }
    }
    answers.sort_by(|a, b| {
        key(b.log_score)
            .cmp(&key(a.log_score))
            .then_with(|| a.answer.cmp(&b.answer))
    });
}

#[derive(Debug, Clone, Copy)]
enum Side {
    /// T(p|t,v)
    Interpret,
    /// T(t,v|p)
    Generate,
}

/// Read-only view over a finalized knowledge base.
#[derive(Debug, Clone, Copy)]
pub struct Inference<'a> {
    kb: &'a KnowledgeBase,
}

impl<'a> Inference<'a> {
    pub fn new(kb: &'a KnowledgeBase) -> Result<Self> {
        if !kb.is_finalized() {
            return Err(Error::invalid("knowledge base is not finalized (run `kb finalize`)"));
        }
        Ok(Inference { kb })
    }

    pub fn kb(&self) -> &'a KnowledgeBase {
        self.kb
    }

    fn contributions(&self, property: &str, vehicle: &str, side: Side) -> Vec<Contribution> {
        self.kb
            .query_pv(property, vehicle)
            .into_iter()
            .map(|t: &Triplet| Contribution {
                topic: t.topic.clone(),
                frequency: t.frequency,
                plausibility: t.plausibility,
                typicality: match side {
                    Side::Interpret => t.typ_p_given_tv,
                    Side::Generate => t.typ_tv_given_p,
                }
                .unwrap_or(0.0),
            })
            .collect()
    }

    fn answer(&self, answer: &str, property: &str, vehicle: &str, side: Side, log_boost: f64) -> RankedAnswer {
        let contributions = self.contributions(property, vehicle, side);
        let base: f64 = contributions.iter().map(Contribution::term).sum();
        let log_score = base.ln() + log_boost;
        RankedAnswer {
            answer: answer.to_string(),
            score: if log_boost == 0.0 { base } else { log_score.exp() },
            log_score,
            contributions,
        }
    }

    /// Sum of T(p|t',v)·N·P over G_(p,v). The topic does not enter the formula.
    pub fn score_property(&self, _topic: &str, vehicle: &str, property: &str) -> f64 {
        self.contributions(property, vehicle, Side::Interpret)
            .iter()
            .map(Contribution::term)
            .sum()
    }

    /// Sum of T(t',v|p)·N·P over G_(p,v).
    pub fn score_vehicle(&self, _topic: &str, property: &str, vehicle: &str) -> f64 {
        self.contributions(property, vehicle, Side::Generate)
            .iter()
            .map(Contribution::term)
            .sum()
    }

    /// Top-k properties attested with `vehicle`.
    pub fn interpret(&self, _topic: &str, vehicle: &str, k: usize) -> Vec<RankedAnswer> {
        let v = normalize_term(vehicle);
        let props: BTreeSet<&str> = self.kb.query_v(&v).into_iter().map(|t| t.property.as_str()).collect();
        let mut out: Vec<RankedAnswer> = props
            .into_iter()
            .map(|p| self.answer(p, p, &v, Side::Interpret, 0.0))
            .collect();
        sort_answers(&mut out);
        out.truncate(k);
        out
    }

    /// Top-k vehicles attested with `property`.
    pub fn generate_vehicles(&self, _topic: &str, property: &str, k: usize) -> Vec<RankedAnswer> {
        self.rank_vehicles(property, 0.0, k)
    }

    fn rank_vehicles(&self, property: &str, gamma: f64, k: usize) -> Vec<RankedAnswer> {
        let p = normalize_term(property);
        let vehicles: BTreeSet<&str> = self.kb.query_p(&p).into_iter().map(|t| t.vehicle.as_str()).collect();
        let mut out: Vec<RankedAnswer> = vehicles
            .into_iter()
            .map(|v| self.answer(v, &p, v, Side::Generate, gamma * word_count(v) as f64))
            .collect();
        sort_answers(&mut out);
        out.truncate(k);
        out
    }

    /// Vehicle score boosted by e^(γ·words(v)).
    pub fn polish_score(&self, property: &str, vehicle: &str, gamma: f64) -> f64 {
        let boost = gamma * word_count(vehicle) as f64;
        self.contributions(property, vehicle, Side::Generate)
            .iter()
            .map(|c| (c.term().ln() + boost).exp())
            .sum()
    }

    /// Top-k vehicles under the length-boosted score.
    pub fn polish_candidates(&self, property: &str, gamma: f64, k: usize) -> Vec<RankedAnswer> {
        self.rank_vehicles(property, gamma, k)
    }

    /// Replace the final adjective/adverb (or `property`, when given) with `like <vehicle>`.
    pub fn polish_rewrite<S: AsRef<str>>(
        &self,
        tokens: &[S],
        property: Option<&str>,
        gamma: f64,
        k: usize,
    ) -> Result<Polished> {
        let tokens: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
        let end = tokens
            .iter()
            .rposition(|t| !is_punct(t))
            .ok_or_else(|| Error::invalid("sentence has no words"))?;
        let (prefix_end, property) = match property {
            Some(p) => {
                let pos = tokens[..=end]
                    .iter()
                    .rposition(|t| t.eq_ignore_ascii_case(p))
                    .ok_or_else(|| Error::invalid(format!("property `{p}` not in sentence")))?;
                (pos, normalize_term(p))
            }
            None => (end, normalize_term(tokens[end])),
        };
        if !gamma.is_finite() {
            return Err(Error::invalid("gamma must be finite"));
        }
        let alternatives = self.polish_candidates(&property, gamma, k.max(1));
        let best = alternatives
            .first()
            .ok_or_else(|| Error::PropertyNotCovered(property.clone()))?;
        let mut out: Vec<&str> = tokens[..prefix_end].to_vec();
        out.push("like");
        out.push(&best.answer);
        out.extend(&tokens[prefix_end + 1..]);
        Ok(Polished {
            sentence: out.join(" "),
            property,
            vehicle: best.answer.clone(),
            alternatives: alternatives.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polished {
    pub sentence: String,
    pub property: String,
    pub vehicle: String,
    pub alternatives: Vec<RankedAnswer>,
}

/// A rewrite is coherent when the sentence still has `like` and the vehicle is
/// comma-free and at most seven words long.
pub fn coherence_check(sentence: &str, vehicle: &str) -> bool {
    sentence.split_whitespace().any(|t| t.eq_ignore_ascii_case("like"))
        && !vehicle.contains(',')
        && word_count(vehicle) <= MAX_COHERENT_VEHICLE_WORDS
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::properties::SimileInstance;

    fn inst(t: &str, p: &str, v: &str, s: f64) -> SimileInstance {
        SimileInstance {
            sentence_id: "x".into(),
            topic: t.into(),
            property: p.into(),
            vehicle: v.into(),
            score: s,
            knowledge: s,
            context: 0.0,
        }
    }

    fn kb(v: &[SimileInstance]) -> KnowledgeBase {
        KnowledgeBase::build(v, "h").unwrap().finalize()
    }

    #[test]
    fn requires_finalized() {
        let raw = KnowledgeBase::build(&[inst("a", "p", "v", 0.5)], "h").unwrap();
        assert!(Inference::new(&raw).is_err());
    }

    #[test]
    fn score_property_examples() {
        let kb = kb(&[inst("a", "p", "v", 0.5), inst("a", "p", "v", 0.0)]);
        let inf = Inference::new(&kb).unwrap();
        assert!((inf.score_property("zzz", "v", "p") - 1.0).abs() < 1e-12);
        assert_eq!(inf.score_property("a", "v", "missing"), 0.0);
        assert_eq!(inf.score_property("a", "v", "p"), inf.score_property("b", "v", "p"));
    }

    #[test]
    fn score_vehicle_example() {
        // N=3, P=0.4, T(t,v|p)=0.5: a second vehicle carries the other half of the weight.
        let s = 1.0 - (0.6f64).cbrt();
        let w = 1.0 - (0.4f64).sqrt();
        let kb = kb(&[
            inst("a", "p", "v", s),
            inst("a", "p", "v", s),
            inst("a", "p", "v", s),
            inst("b", "p", "w", w),
            inst("b", "p", "w", w),
        ]);
        let inf = Inference::new(&kb).unwrap();
        let t = kb.get("a", "p", "v").unwrap();
        assert!((t.plausibility - 0.4).abs() < 1e-12);
        assert!((t.typ_tv_given_p.unwrap() - 0.5).abs() < 1e-9);
        assert!((inf.score_vehicle("a", "p", "v") - 0.6).abs() < 1e-9);
        assert_eq!(inf.score_vehicle("a", "q", "v"), 0.0);
    }

    #[test]
    fn polish_boost() {
        let kb = kb(&[inst("a", "p", "x y z", 0.5), inst("b", "p", "w", 0.5)]);
        let inf = Inference::new(&kb).unwrap();
        let base = inf.score_vehicle("a", "p", "x y z");
        assert!((inf.polish_score("p", "x y z", 0.0) - base).abs() < 1e-12);
        assert!((inf.polish_score("p", "x y z", 2.0) / base - 6f64.exp()).abs() < 1e-9);
        let ranked = inf.polish_candidates("p", 2.0, 5);
        assert_eq!(ranked[0].answer, "x y z");
        let ranked = inf.polish_candidates("p", 0.0, 5);
        assert_eq!(ranked[0].answer, "w");
    }

    #[test]
    fn rewrite_love_is_rare() {
        let kb = kb(&[inst("love", "rare", "a unicorn", 0.9), inst("gem", "rare", "gold", 0.3)]);
        let inf = Inference::new(&kb).unwrap();
        let out = inf
            .polish_rewrite(&["Love", "is", "rare"], None, DEFAULT_GAMMA, 3)
            .unwrap();
        assert_eq!(out.sentence, "Love is like a unicorn");
        assert_eq!(out.alternatives.len(), 2);
        let out = inf
            .polish_rewrite(&["Love", "is", "rare", "."], None, DEFAULT_GAMMA, 1)
            .unwrap();
        assert_eq!(out.sentence, "Love is like a unicorn .");
        assert!(matches!(
            inf.polish_rewrite(&["Love", "is", "blue"], None, DEFAULT_GAMMA, 1),
            Err(Error::PropertyNotCovered(_))
        ));
    }

    #[test]
    fn ties_are_lexicographic() {
        let kb = kb(&[
            inst("a", "p", "v", 0.5),
            inst("a", "q", "v", 0.5),
            inst("a", "o", "v", 0.5),
        ]);
        let inf = Inference::new(&kb).unwrap();
        let names: Vec<String> = inf.interpret("a", "v", 10).into_iter().map(|r| r.answer).collect();
        assert_eq!(names, vec!["o", "p", "q"]);
        assert!(inf.interpret("a", "nothing", 10).is_empty());
        assert_eq!(inf.interpret("a", "v", 2).len(), 2);
    }

    #[test]
    fn coherence_examples() {
        assert!(coherence_check(
            "They were like kids in a candy store",
            "kids in a candy store"
        ));
        assert!(!coherence_check(
            "It was like x",
            "one two three four five six seven eight"
        ));
        assert!(coherence_check("It was like x", "one two three four five six seven"));
        assert!(!coherence_check("They were kids", "kids"));
        assert!(!coherence_check("It was like a, b", "a, b"));
    }
}
