//! Shared generators and brute-force oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore};
use simkb::classifier::{Label, LabeledExample};
use simkb::cotrain::UnlabeledSentence;
use simkb::properties::SimileInstance;

pub const TOPICS: &[&str] = &["he", "her hair", "the road", "my lawyer", "the sky"];
pub const PROPERTIES: &[&str] = &["soft", "fast", "cold", "bright", "long", "sharp"];
pub const VEHICLES: &[&str] = &[
    "silk",
    "a shark",
    "ice",
    "a diamond",
    "a decorative ribbon",
    "a bolt of lightning",
    "kids in a candy store",
];

/// Random instances over a small vocabulary; scores in (0, 1].
pub fn random_instances(rng: &mut impl RngCore, count: usize) -> Vec<SimileInstance> {
    (0..count)
        .map(|i| {
            let score = 1.0 - rng.random::<f64>();
            SimileInstance {
                sentence_id: format!("r{i}"),
                topic: TOPICS.choose(rng).unwrap().to_string(),
                property: PROPERTIES.choose(rng).unwrap().to_string(),
                vehicle: VEHICLES.choose(rng).unwrap().to_string(),
                score,
                knowledge: score / 2.0,
                context: score / 2.0,
            }
        })
        .collect()
}

pub fn noisy_or(scores: &[f64]) -> f64 {
    let mut miss = 1.0;
    for s in scores {
        miss *= 1.0 - s;
    }
    1.0 - miss
}

type Key = (String, String, String);

/// Frequencies and plausibilities recomputed from raw instances, with every score
/// formula written out as a plain sum.
pub struct Oracle {
    stats: BTreeMap<Key, (f64, f64)>,
}

impl Oracle {
    pub fn new(instances: &[SimileInstance], frequency_scale: u32) -> Self {
        let mut scores: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
        for i in instances {
            scores
                .entry((i.topic.clone(), i.property.clone(), i.vehicle.clone()))
                .or_default()
                .push(i.score);
        }
        let stats = scores
            .into_iter()
            .map(|(k, s)| {
                let n = (s.len() as u32 * frequency_scale) as f64;
                (k, (n, noisy_or(&s)))
            })
            .collect();
        Oracle { stats }
    }

    fn weight(&self, t: &str, p: &str, v: &str) -> f64 {
        self.stats
            .get(&(t.to_string(), p.to_string(), v.to_string()))
            .map_or(0.0, |(n, pl)| n * pl)
    }

    pub fn keys(&self) -> impl Iterator<Item = &Key> {
        self.stats.keys()
    }

    pub fn typ_p_given_tv(&self, t: &str, p: &str, v: &str) -> f64 {
        let mut total = 0.0;
        for ((t2, _, v2), (n, pl)) in &self.stats {
            if t2 == t && v2 == v {
                total += n * pl;
            }
        }
        self.weight(t, p, v) / total
    }

    pub fn typ_tv_given_p(&self, t: &str, p: &str, v: &str) -> f64 {
        let mut total = 0.0;
        for ((_, p2, _), (n, pl)) in &self.stats {
            if p2 == p {
                total += n * pl;
            }
        }
        self.weight(t, p, v) / total
    }

    /// Interpretation score of property `p` for vehicle `v`, summed over every topic.
    pub fn interpret_score(&self, v: &str, p: &str) -> f64 {
        let mut s = 0.0;
        for (t2, p2, v2) in self.stats.keys() {
            if p2 == p && v2 == v {
                s += self.typ_p_given_tv(t2, p, v) * self.weight(t2, p, v);
            }
        }
        s
    }

    /// Generation score of vehicle `v` for property `p`, summed over every topic.
    pub fn generate_score(&self, p: &str, v: &str) -> f64 {
        let mut s = 0.0;
        for (t2, p2, v2) in self.stats.keys() {
            if p2 == p && v2 == v {
                s += self.typ_tv_given_p(t2, p, v) * self.weight(t2, p, v);
            }
        }
        s
    }

    /// Generation terms each multiplied by e^(gamma * word count).
    pub fn polish_score(&self, p: &str, v: &str, gamma: f64) -> f64 {
        self.generate_score(p, v) * (gamma * v.split_whitespace().count() as f64).exp()
    }

    pub fn properties_of(&self, v: &str) -> Vec<String> {
        let mut out: Vec<String> = self.stats.keys().filter(|k| k.2 == v).map(|k| k.1.clone()).collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn vehicles_of(&self, p: &str) -> Vec<String> {
        let mut out: Vec<String> = self.stats.keys().filter(|k| k.1 == p).map(|k| k.2.clone()).collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Brute-force ranking: score descending, answer ascending on ties.
pub fn rank(mut scored: Vec<(String, f64)>) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored
}

pub struct TwoView {
    pub seeds: Vec<LabeledExample>,
    pub like_pool: Vec<UnlabeledSentence>,
    pub be_pool: Vec<UnlabeledSentence>,
    pub like_test: Vec<LabeledExample>,
    pub be_test: Vec<LabeledExample>,
}

/// Words per class; small enough that 50 seeds cover each class vocabulary.
const CLASS_VOCAB: usize = 10;

/// Separable two-view data: each class owns its own vocabulary, shared by both views;
/// the views differ in their cue word and filler vocabulary.
pub fn two_view_dataset(rng: &mut impl RngCore, seeds: usize, pool: usize, test: usize) -> TwoView {
    fn sentence(rng: &mut impl RngCore, label: Label, cue: &str, filler: &str) -> String {
        let class = match label {
            Label::Simile => "fig",
            Label::Literal => "lit",
        };
        let mut words: Vec<String> = (0..rng.random_range(2..4))
            .map(|_| format!("{class}{}", rng.random_range(0..CLASS_VOCAB)))
            .collect();
        words.extend((0..rng.random_range(3..6)).map(|_| format!("{filler}{}", rng.random_range(0..200))));
        words.shuffle(rng);
        words.insert(words.len() / 2, cue.to_string());
        words.join(" ")
    }
    fn label(rng: &mut impl RngCore) -> Label {
        if rng.random_bool(0.5) {
            Label::Simile
        } else {
            Label::Literal
        }
    }
    let mut examples = |n: usize, cue: &str, filler: &str| -> Vec<LabeledExample> {
        (0..n)
            .map(|_| {
                let l = label(rng);
                LabeledExample::new(sentence(rng, l, cue, filler), l)
            })
            .collect()
    };
    let seeds = examples(seeds, "like", "w");
    let like_test = examples(test, "like", "w");
    let be_test = examples(test, "is", "u");
    let like_pool = examples(pool, "like", "w");
    let be_pool = examples(pool, "is", "u");
    let unlabeled = |v: Vec<LabeledExample>, prefix: &str| -> Vec<UnlabeledSentence> {
        v.into_iter()
            .enumerate()
            .map(|(i, e)| UnlabeledSentence {
                id: format!("{prefix}{i}"),
                text: e.text,
            })
            .collect()
    };
    TwoView {
        seeds,
        like_pool: unlabeled(like_pool, "l"),
        be_pool: unlabeled(be_pool, "b"),
        like_test,
        be_test,
    }
}

/// Simile-class F1 of `predict` on `test`.
pub fn f1_on(test: &[LabeledExample], predict: impl Fn(&str) -> Label) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for e in test {
        match (predict(&e.text), e.label) {
            (Label::Simile, Label::Simile) => tp += 1.0,
            (Label::Simile, Label::Literal) => fp += 1.0,
            (Label::Literal, Label::Simile) => fneg += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fneg)
    }
}

/// Instances over a wide vocabulary (8000 possible triplets); vehicles have one to four words.
pub fn wide_instances(rng: &mut impl RngCore, count: usize) -> Vec<SimileInstance> {
    (0..count)
        .map(|i| {
            let score = 1.0 - rng.random::<f64>();
            let words = rng.random_range(1..=4);
            let v = rng.random_range(0..20);
            let vehicle = (0..words).map(|w| format!("v{v}w{w}")).collect::<Vec<_>>().join(" ");
            SimileInstance {
                sentence_id: format!("w{i}"),
                topic: format!("t{}", rng.random_range(0..20)),
                property: format!("p{}", rng.random_range(0..20)),
                vehicle,
                score,
                knowledge: score / 2.0,
                context: score / 2.0,
            }
        })
        .collect()
}

/// Each instance repeated `c` times with a score whose `c`-fold noisy-or equals the original.
pub fn scale_frequency(instances: &[SimileInstance], c: u32) -> Vec<SimileInstance> {
    instances
        .iter()
        .flat_map(|i| {
            let s = -((-i.score).ln_1p() / c as f64).exp_m1();
            (0..c).map(move |k| SimileInstance {
                sentence_id: format!("{}x{k}", i.sentence_id),
                score: s,
                ..i.clone()
            })
        })
        .collect()
}
