//! Binary simile/literal classification.
//!
//! [`HashedLinearModel`] is the bundled classifier: lowercased whitespace tokens
//! are hashed (FNV-1a) into `2^18` buckets, L2-normalised, and scored by an
//! averaged logistic-regression model trained with a fixed number of online
//! epochs. [`ExternalScorer`] wraps a child process that answers one
//! probability per input line, so any external model can stand in.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::str::FromStr;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::fnv1a64;

pub const MODEL_MAGIC: &str = "SIMCLS";
pub const MODEL_VERSION: &str = "v1";
pub const DEFAULT_BUCKETS_LOG2: u32 = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Simile,
    Literal,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Simile => "simile",
            Label::Literal => "literal",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "simile" | "1" | "pos" => Ok(Label::Simile),
            "literal" | "0" | "neg" => Ok(Label::Literal),
            other => Err(Error::invalid(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: Label,
}

impl LabeledExample {
    pub fn new(text: impl Into<String>, label: Label) -> Self {
        LabeledExample {
            text: text.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    /// Probability of `label`; always at least 0.5.
    pub confidence: f64,
}

impl Prediction {
    /// Simile when the simile probability is strictly above one half.
    pub fn from_simile_probability(p: f64) -> Self {
        if p > 0.5 {
            Prediction {
                label: Label::Simile,
                confidence: p,
            }
        } else {
            Prediction {
                label: Label::Literal,
                confidence: 1.0 - p,
            }
        }
    }

    pub fn simile_probability(&self) -> f64 {
        match self.label {
            Label::Simile => self.confidence,
            Label::Literal => 1.0 - self.confidence,
        }
    }
}

/// Anything that can put a simile probability on a sentence.
pub trait SimileScorer: Send + Sync {
    fn simile_probability(&self, text: &str) -> Result<f64>;

    fn predict_proba(&self, text: &str) -> Result<Prediction> {
        self.simile_probability(text).map(Prediction::from_simile_probability)
    }
}

/// Trains scorers; co-training is generic over this.
pub trait Learner: Sync {
    type Model: SimileScorer;

    fn fit(&self, examples: &[LabeledExample], seed: u64) -> Result<Self::Model>;
}

fn check_non_empty(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        Err(Error::invalid("cannot classify empty text"))
    } else {
        Ok(())
    }
}

/// Fail unless both labels are present.
pub fn check_both_labels(examples: &[LabeledExample]) -> Result<()> {
    let pos = examples.iter().filter(|e| e.label == Label::Simile).count();
    let neg = examples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateTraining(format!(
            "{pos} simile and {neg} literal examples; both classes are required"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub buckets_log2: u32,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            buckets_log2: DEFAULT_BUCKETS_LOG2,
            epochs: 10,
            learning_rate: 0.5,
        }
    }
}

/// Sparse L2-normalised hashed bag of words, sorted by bucket.
fn featurize(text: &str, mask: u64) -> Vec<(u32, f64)> {
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for tok in text.split_whitespace() {
        let bucket = (fnv1a64(tok.to_lowercase().as_bytes()) & mask) as u32;
        *counts.entry(bucket).or_insert(0.0) += 1.0;
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    counts.into_iter().map(|(k, c)| (k, c / norm)).collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashedLinearModel {
    buckets_log2: u32,
    bias: f64,
    weights: Vec<f64>,
}

impl HashedLinearModel {
    fn mask(&self) -> u64 {
        (1u64 << self.buckets_log2) - 1
    }

    fn score(&self, features: &[(u32, f64)]) -> f64 {
        features
            .iter()
            .fold(self.bias, |acc, &(j, x)| acc + self.weights[j as usize] * x)
    }

    pub fn train(examples: &[LabeledExample], seed: u64, cfg: &TrainConfig) -> Result<Self> {
        check_both_labels(examples)?;
        if let Some(e) = examples.iter().find(|e| e.text.trim().is_empty()) {
            return Err(Error::invalid(format!("empty training text (label {})", e.label)));
        }
        if !(1..=30).contains(&cfg.buckets_log2) {
            return Err(Error::invalid("buckets_log2 must be in 1..=30"));
        }
        let dim = 1usize << cfg.buckets_log2;
        let mask = (dim - 1) as u64;
        let data: Vec<(Vec<(u32, f64)>, f64)> = examples
            .iter()
            .map(|e| {
                let y = if e.label == Label::Simile { 1.0 } else { 0.0 };
                (featurize(&e.text, mask), y)
            })
            .collect();

        // Averaged SGD with the lazy trick: average = w - u / c.
        let mut w = vec![0.0f64; dim];
        let mut u = vec![0.0f64; dim];
        let (mut b, mut ub) = (0.0f64, 0.0f64);
        let mut c = 1.0f64;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let (x, y) = &data[i];
                let z = x.iter().fold(b, |acc, &(j, v)| acc + w[j as usize] * v);
                let g = cfg.learning_rate * (y - sigmoid(z));
                if g != 0.0 {
                    for &(j, v) in x {
                        w[j as usize] += g * v;
                        u[j as usize] += c * g * v;
                    }
                    b += g;
                    ub += c * g;
                }
                c += 1.0;
            }
        }
        let weights = w.iter().zip(&u).map(|(wi, ui)| wi - ui / c).collect();
        Ok(HashedLinearModel {
            buckets_log2: cfg.buckets_log2,
            bias: b - ub / c,
            weights,
        })
    }

    pub fn to_text(&self) -> String {
        let nonzero: Vec<(usize, f64)> = self
            .weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| (i, *w))
            .collect();
        let mut out = format!(
            "{MODEL_MAGIC} {MODEL_VERSION}\nbuckets_log2 {}\nbias {:?}\nnonzero {}\n",
            self.buckets_log2,
            self.bias,
            nonzero.len()
        );
        for (i, w) in nonzero {
            out.push_str(&format!("{i}\t{w:?}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::ModelFormat(format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MODEL_MAGIC) {
            return Err(bad(
                1,
                &format!("not a classifier model (expected `{MODEL_MAGIC} {MODEL_VERSION}` header)"),
            ));
        }
        match parts.next() {
            Some(MODEL_VERSION) => {}
            Some(v) => {
                return Err(bad(
                    1,
                    &format!("unsupported model version `{v}` (expected {MODEL_VERSION})"),
                ));
            }
            None => return Err(bad(1, "missing version")),
        }
        let mut field = |name: &str| -> Result<String> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| bad(0, &format!("truncated before `{name}`")))?;
            let rest = line
                .strip_prefix(name)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| bad(no, &format!("expected `{name} <value>`")))?;
            Ok(rest.to_string())
        };
        let buckets_log2: u32 = field("buckets_log2")?.parse().map_err(|_| bad(2, "bad buckets_log2"))?;
        if !(1..=30).contains(&buckets_log2) {
            return Err(bad(2, "buckets_log2 out of range"));
        }
        let bias: f64 = field("bias")?.parse().map_err(|_| bad(3, "bad bias"))?;
        let count: usize = field("nonzero")?.parse().map_err(|_| bad(4, "bad nonzero count"))?;
        let dim = 1usize << buckets_log2;
        let mut weights = vec![0.0; dim];
        let mut seen = 0usize;
        for (no, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (i, w) = line
                .split_once('\t')
                .ok_or_else(|| bad(no, "expected `index<TAB>weight`"))?;
            let i: usize = i.parse().map_err(|_| bad(no, "bad index"))?;
            let w: f64 = w.parse().map_err(|_| bad(no, "bad weight"))?;
            if i >= dim {
                return Err(bad(no, "index out of range"));
            }
            weights[i] = w;
            seen += 1;
        }
        if seen != count {
            return Err(Error::ModelFormat(format!("expected {count} weights, found {seen}")));
        }
        Ok(HashedLinearModel {
            buckets_log2,
            bias,
            weights,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

impl SimileScorer for HashedLinearModel {
    fn simile_probability(&self, text: &str) -> Result<f64> {
        check_non_empty(text)?;
        Ok(sigmoid(self.score(&featurize(text, self.mask()))))
    }
}

/// The bundled learner.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashedLinearLearner {
    pub config: TrainConfig,
}

impl Learner for HashedLinearLearner {
    type Model = HashedLinearModel;

    fn fit(&self, examples: &[LabeledExample], seed: u64) -> Result<HashedLinearModel> {
        HashedLinearModel::train(examples, seed, &self.config)
    }
}

/// A scorer backed by a child process speaking a line protocol:
/// one text per line on stdin, one probability per line on stdout.
pub struct ExternalScorer {
    child: Child,
    io: Mutex<(ChildStdin, BufReader<ChildStdout>)>,
}

impl ExternalScorer {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::ExternalScorer(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ExternalScorer {
            child,
            io: Mutex::new((stdin, stdout)),
        })
    }
}

impl SimileScorer for ExternalScorer {
    fn simile_probability(&self, text: &str) -> Result<f64> {
        check_non_empty(text)?;
        let one_line = text.replace(['\n', '\r'], " ");
        let mut guard = self
            .io
            .lock()
            .map_err(|_| Error::ExternalScorer("poisoned lock".into()))?;
        let (stdin, stdout) = &mut *guard;
        writeln!(stdin, "{one_line}")
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::ExternalScorer(format!("write failed: {e}")))?;
        let mut reply = String::new();
        let n = stdout
            .read_line(&mut reply)
            .map_err(|e| Error::ExternalScorer(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(Error::ExternalScorer("scorer closed its output".into()));
        }
        let p: f64 = reply
            .trim()
            .parse()
            .map_err(|_| Error::ExternalScorer(format!("not a probability: `{}`", reply.trim())))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::ExternalScorer(format!("probability {p} outside [0,1]")));
        }
        Ok(p)
    }
}

impl Drop for ExternalScorer {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vec<LabeledExample> {
        vec![
            LabeledExample::new("her hair felt like silk", Label::Simile),
            LabeledExample::new("he looks like his father", Label::Literal),
        ]
    }

    #[test]
    fn minimal_training_set() {
        let m = HashedLinearModel::train(&toy(), 1, &TrainConfig::default()).unwrap();
        let p = m.predict_proba("her hair felt like silk").unwrap();
        assert_eq!(p.label, Label::Simile);
    }

    #[test]
    fn single_class_is_degenerate() {
        let ex = vec![
            LabeledExample::new("a", Label::Simile),
            LabeledExample::new("b", Label::Simile),
        ];
        let err = HashedLinearModel::train(&ex, 0, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateTraining(_)));
        assert!(err.to_string().contains("degenerate training data"));
    }

    #[test]
    fn deterministic_serialization() {
        let a = HashedLinearModel::train(&toy(), 7, &TrainConfig::default()).unwrap();
        let b = HashedLinearModel::train(&toy(), 7, &TrainConfig::default()).unwrap();
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn empty_text_rejected() {
        let m = HashedLinearModel::train(&toy(), 1, &TrainConfig::default()).unwrap();
        assert!(m.predict_proba("").is_err());
        assert!(m.predict_proba("   ").is_err());
    }

    #[test]
    fn bag_of_words_invariance() {
        let m = HashedLinearModel::train(&toy(), 1, &TrainConfig::default()).unwrap();
        let a = m.simile_probability("silk like felt hair her her").unwrap();
        let b = m.simile_probability("her hair her felt like silk").unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn prediction_confidence_at_least_half() {
        for p in [0.0, 0.2, 0.5, 0.51, 1.0] {
            let pr = Prediction::from_simile_probability(p);
            assert!(pr.confidence >= 0.5);
            assert!((pr.simile_probability() - p).abs() < 1e-15);
        }
        assert_eq!(Prediction::from_simile_probability(0.5).label, Label::Literal);
    }

    #[test]
    fn header_checks() {
        let m = HashedLinearModel::train(&toy(), 1, &TrainConfig::default()).unwrap();
        let text = m.to_text();
        let v2 = text.replacen("SIMCLS v1", "SIMCLS v2", 1);
        let err = HashedLinearModel::from_text(&v2).unwrap_err().to_string();
        assert!(err.contains("unsupported model version"), "{err}");
        assert!(HashedLinearModel::from_text("hello\n").is_err());
        let truncated: String = text.lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(HashedLinearModel::from_text(&truncated).is_err());
    }

    #[test]
    fn external_scorer_line_protocol() {
        let scorer = ExternalScorer::spawn("sh", &["-c".into(), "while read l; do echo 0.75; done".into()]).unwrap();
        let p = scorer.predict_proba("her hair felt like silk").unwrap();
        assert_eq!(p.label, Label::Simile);
        assert_eq!(p.confidence, 0.75);
        assert_eq!(scorer.simile_probability("two\nlines").unwrap(), 0.75);
    }

    #[test]
    fn external_scorer_bad_reply() {
        let scorer = ExternalScorer::spawn("sh", &["-c".into(), "while read l; do echo nope; done".into()]).unwrap();
        assert!(scorer.simile_probability("x").is_err());
        let scorer = ExternalScorer::spawn("sh", &["-c".into(), "while read l; do echo 1.5; done".into()]).unwrap();
        assert!(scorer.simile_probability("x").is_err());
    }
}
