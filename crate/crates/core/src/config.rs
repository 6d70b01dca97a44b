//! Pipeline configuration: a `key = value` file, overridable per key.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::cotrain::CotrainConfig;
use crate::error::{Error, Result};
use crate::properties::Thresholds;

/// Where the components stage takes its like-view sentence ids from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentSource {
    Detected,
    Candidates,
}

impl FromStr for ComponentSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detected" => Ok(ComponentSource::Detected),
            "candidates" => Ok(ComponentSource::Candidates),
            other => Err(Error::Config(format!(
                "components.source must be `detected` or `candidates`, got `{other}`"
            ))),
        }
    }
}

impl ComponentSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ComponentSource::Detected => "detected",
            ComponentSource::Candidates => "candidates",
        }
    }
}

/// Input files. Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub trees: Option<PathBuf>,
    pub seeds: Option<PathBuf>,
    pub coref: Option<PathBuf>,
    pub knowledge_table: Option<PathBuf>,
    pub context_table: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub polish_input: Option<PathBuf>,
    pub eval_cases: Option<PathBuf>,
    pub gold_components: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub cotrain: CotrainConfig,
    pub thresholds: Thresholds,
    pub gamma: f64,
    pub top_k: usize,
    pub seed: u64,
    pub component_source: ComponentSource,
    pub knowledge_url: Option<String>,
    pub context_url: Option<String>,
    pub provider_timeout_secs: u64,
    /// Keep eval cases whose frequency is strictly above this value.
    pub eval_min_frequency: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths {
                output_dir: PathBuf::from("out"),
                ..Paths::default()
            },
            cotrain: CotrainConfig::default(),
            thresholds: Thresholds::default(),
            gamma: 2.0,
            top_k: 10,
            seed: 0,
            component_source: ComponentSource::Detected,
            knowledge_url: None,
            context_url: None,
            provider_timeout_secs: 30,
            eval_min_frequency: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "corpus",
    "trees",
    "seeds",
    "coref",
    "knowledge_table",
    "context_table",
    "knowledge_url",
    "context_url",
    "provider_timeout_secs",
    "taxonomy",
    "queries",
    "polish_input",
    "eval_cases",
    "gold_components",
    "output_dir",
    "iterations",
    "alpha_like",
    "alpha_be",
    "theta_like",
    "theta_be",
    "theta_knowledge",
    "theta_context",
    "gamma",
    "top_k",
    "seed",
    "components.source",
    "eval.min_frequency",
];

/// Closest known keys to `key`, best first.
pub fn suggest<'a>(key: &str, candidates: impl IntoIterator<Item = &'a str>, max: usize) -> Vec<&'a str> {
    let mut scored: Vec<(f64, &str)> = candidates
        .into_iter()
        .map(|c| (strsim::normalized_levenshtein(key, c), c))
        .filter(|(s, _)| *s >= 0.4)
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored.into_iter().take(max).map(|(_, c)| c).collect()
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl PipelineConfig {
    /// Apply one `key=value` setting. Relative paths are joined onto `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || Some(base.join(value));
        let p = &mut self.paths;
        match key {
            "corpus" => p.corpus = path(),
            "trees" => p.trees = path(),
            "seeds" => p.seeds = path(),
            "coref" => p.coref = path(),
            "knowledge_table" => p.knowledge_table = path(),
            "context_table" => p.context_table = path(),
            "taxonomy" => p.taxonomy = path(),
            "queries" => p.queries = path(),
            "polish_input" => p.polish_input = path(),
            "eval_cases" => p.eval_cases = path(),
            "gold_components" => p.gold_components = path(),
            "output_dir" => p.output_dir = base.join(value),
            "knowledge_url" => self.knowledge_url = Some(value.to_string()),
            "context_url" => self.context_url = Some(value.to_string()),
            "provider_timeout_secs" => self.provider_timeout_secs = parse_num(key, value)?,
            "iterations" => self.cotrain.iterations = parse_num(key, value)?,
            "alpha_like" => self.cotrain.sample_ratio_like = parse_num(key, value)?,
            "alpha_be" => self.cotrain.sample_ratio_be = parse_num(key, value)?,
            "theta_like" => self.cotrain.threshold_like = parse_num(key, value)?,
            "theta_be" => self.cotrain.threshold_be = parse_num(key, value)?,
            "theta_knowledge" => self.thresholds.knowledge = parse_num(key, value)?,
            "theta_context" => self.thresholds.context = parse_num(key, value)?,
            "gamma" => self.gamma = parse_num(key, value)?,
            "top_k" => self.top_k = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "components.source" => self.component_source = value.parse()?,
            "eval.min_frequency" => self.eval_min_frequency = Some(parse_num(key, value)?),
            other => {
                let hint = suggest(other, KEYS.iter().copied(), 3);
                let hint = if hint.is_empty() {
                    String::new()
                } else {
                    format!(" (did you mean {}?)", hint.join(", "))
                };
                return Err(Error::Config(format!("unknown key `{other}`{hint}")));
            }
        }
        Ok(())
    }

    /// Parse config text. `base` anchors relative paths.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        cfg.paths.output_dir = base.join("out");
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k.trim(), v.trim(), base)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Propagate the root seed and validate hyper-parameters.
    pub fn finish(mut self) -> Result<Self> {
        self.cotrain.seed = self.seed;
        self.cotrain.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !self.gamma.is_finite() {
            return Err(Error::Config("gamma must be finite".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        for (name, t) in [
            ("theta_knowledge", self.thresholds.knowledge),
            ("theta_context", self.thresholds.context),
        ] {
            if !(0.0..=0.5).contains(&t) {
                return Err(Error::Config(format!("{name} = {t} must lie in [0, 0.5]")));
            }
        }
        Ok(self)
    }

    /// Settings that affect outputs, excluding file locations.
    pub fn canonical(&self) -> BTreeMap<&'static str, String> {
        let c = &self.cotrain;
        BTreeMap::from([
            ("iterations", c.iterations.to_string()),
            ("alpha_like", c.sample_ratio_like.to_string()),
            ("alpha_be", c.sample_ratio_be.to_string()),
            ("theta_like", c.threshold_like.to_string()),
            ("theta_be", c.threshold_be.to_string()),
            ("theta_knowledge", self.thresholds.knowledge.to_string()),
            ("theta_context", self.thresholds.context.to_string()),
            ("gamma", self.gamma.to_string()),
            ("top_k", self.top_k.to_string()),
            ("seed", self.seed.to_string()),
            ("components.source", self.component_source.as_str().to_string()),
            ("knowledge_url", self.knowledge_url.clone().unwrap_or_default()),
            ("context_url", self.context_url.clone().unwrap_or_default()),
            (
                "eval.min_frequency",
                self.eval_min_frequency.map(|f| f.to_string()).unwrap_or_default(),
            ),
        ])
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.canonical() {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = PipelineConfig::default();
        assert_eq!(c.cotrain.iterations, 5);
        assert_eq!(c.cotrain.sample_ratio_like, 0.001);
        assert_eq!(c.cotrain.sample_ratio_be, 0.0001);
        assert_eq!(c.cotrain.threshold_like, 0.9);
        assert_eq!(c.thresholds.knowledge, 0.3);
        assert_eq!(c.thresholds.context, 0.0);
        assert_eq!(c.gamma, 2.0);
    }

    #[test]
    fn parse_and_hash() {
        let base = Path::new("/data");
        let c = PipelineConfig::parse("# comment\ncorpus = corpus.txt\nseed=7\ngamma = 1.5\n", base).unwrap();
        assert_eq!(c.paths.corpus.as_deref(), Some(Path::new("/data/corpus.txt")));
        assert_eq!(c.seed, 7);
        let moved = PipelineConfig::parse("corpus = /elsewhere/c.txt\nseed=7\ngamma = 1.5\n", base).unwrap();
        assert_eq!(c.hash(), moved.hash());
        let other = PipelineConfig::parse("seed=8\ngamma = 1.5\n", base).unwrap();
        assert_ne!(c.hash(), other.hash());
    }

    #[test]
    fn unknown_key_suggests() {
        let err = PipelineConfig::parse("gama = 2\n", Path::new("."))
            .unwrap_err()
            .to_string();
        assert!(err.contains("gamma"), "{err}");
        assert!(PipelineConfig::parse("gamma 2\n", Path::new(".")).is_err());
        assert!(PipelineConfig::parse("components.source = both\n", Path::new(".")).is_err());
    }

    #[test]
    fn finish_validates() {
        let mut c = PipelineConfig::default();
        c.cotrain.threshold_be = 0.2;
        assert!(c.finish().is_err());
        let c = PipelineConfig {
            seed: 9,
            ..PipelineConfig::default()
        };
        assert_eq!(c.finish().unwrap().cotrain.seed, 9);
    }
}
