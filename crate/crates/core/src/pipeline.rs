//! Stage orchestration. Every stage reads its inputs from the config or from
//! earlier stages' artifacts in the output directory, writes deterministic
//! outputs and a `<stage>.manifest.json` with content hashes and counters.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::classifier::{HashedLinearLearner, Label, LabeledExample};
use crate::components::{
    extract_batch, CorefResolver, ExtractionResult, IdentityResolver, StatusCounts, TableResolver,
};
use crate::config::{ComponentSource, PipelineConfig};
use crate::cotrain::{run_cotraining, AuditEntry, UnlabeledSentence};
use crate::error::{Error, Result};
use crate::eval::{
    avg_length, corpus_bleu, filter_by_frequency, mrr, read_gold_components, recall_at_k, score_extraction, RankingCase,
};
use crate::inference::{coherence_check, Inference};
use crate::kb::KnowledgeBase;
use crate::pattern::{scan_corpus, SimileCandidate, TaggedSentence, View};
use crate::properties::{
    build_instances, HttpProvider, PropertyProvider, ProviderKind, ScoringItem, SimileInstance, TableProvider,
};
use crate::stats::{domain_distribution, domain_mapping_table, freq_distribution, freq_distribution_csv, Taxonomy};
use crate::treebank::{read_tree_file, Tree};

pub const MANIFEST_VERSION: u32 = 1;

pub const CANDIDATES: &str = "candidates.tsv";
pub const DETECTED: &str = "detected.tsv";
pub const AUDIT: &str = "audit.tsv";
pub const MODEL_LIKE: &str = "model_like.txt";
pub const MODEL_BE: &str = "model_be.txt";
pub const COMPONENTS: &str = "components.tsv";
pub const INSTANCES: &str = "instances.tsv";
pub const SKIPPED: &str = "properties.skipped.tsv";
pub const KB_RAW: &str = "kb.raw.jsonl";
pub const KB_FINAL: &str = "kb.jsonl";
pub const QUERY_OUT: &str = "query.tsv";
pub const POLISH_OUT: &str = "polish.tsv";
pub const EVAL_OUT: &str = "eval.json";
pub const FREQ_OUT: &str = "freq.csv";
pub const MAPPING_OUT: &str = "domain_mapping.csv";
pub const DISTRIBUTION_OUT: &str = "domain_distribution.csv";
pub const STATS_OUT: &str = "stats.json";

const CANDIDATES_HEADER: &str = "sentence_id\tview\tanchor_index\tnoun1_index\tnoun2_index";
const DETECTED_HEADER: &str = "sentence_id\tview";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Extract,
    Detect,
    Components,
    Properties,
    Build,
    Finalize,
    Query,
    Polish,
    Eval,
    Stats,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Extract,
        Stage::Detect,
        Stage::Components,
        Stage::Properties,
        Stage::Build,
        Stage::Finalize,
        Stage::Query,
        Stage::Polish,
        Stage::Eval,
        Stage::Stats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Extract => "extract",
            Stage::Detect => "detect",
            Stage::Components => "components",
            Stage::Properties => "properties",
            Stage::Build => "build",
            Stage::Finalize => "finalize",
            Stage::Query => "query",
            Stage::Polish => "polish",
            Stage::Eval => "eval",
            Stage::Stats => "stats",
        }
    }

    pub fn manifest_name(self) -> String {
        format!("{}.manifest.json", self.name())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: u32,
    pub config_hash: String,
    /// Logical input name (config key or artifact file) -> sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: bad manifest: {e}", path.display())))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Data lines after the header, with 1-based line numbers.
fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, line));
    }
    Ok(out)
}

fn malformed(path: &Path, line: usize, message: impl fmt::Display) -> Error {
    Error::Malformed {
        line,
        message: format!("{}: {message}", path.display()),
    }
}

/// Read `label<TAB>text` seed lines.
pub fn read_seeds<R: BufRead>(reader: R) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<seeds>", e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (label, text) = line.split_once('\t').ok_or_else(|| Error::Malformed {
            line: i + 1,
            message: "expected `label<TAB>text`".into(),
        })?;
        let label: Label = label.trim().parse().map_err(|e: Error| Error::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(LabeledExample::new(text.trim(), label));
    }
    Ok(out)
}

/// One query per line: `interpret<TAB>topic<TAB>vehicle` or `generate<TAB>topic<TAB>property`.
#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    Interpret { topic: String, vehicle: String },
    Generate { topic: String, property: String },
}

pub fn read_queries<R: BufRead>(reader: R) -> Result<Vec<Query>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<queries>", e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let q = match f.as_slice() {
            ["interpret", t, v] => Query::Interpret {
                topic: t.to_string(),
                vehicle: v.to_string(),
            },
            ["generate", t, p] => Query::Generate {
                topic: t.to_string(),
                property: p.to_string(),
            },
            _ => {
                return Err(Error::Malformed {
                    line: i + 1,
                    message: "expected `interpret|generate<TAB>topic<TAB>vehicle|property`".into(),
                })
            }
        };
        out.push(q);
    }
    Ok(out)
}

/// Read a candidate file written by the extract stage.
pub fn read_candidates(path: &Path) -> Result<Vec<SimileCandidate>> {
    data_lines(path)?
        .into_iter()
        .map(|(no, line)| SimileCandidate::parse_record(&line).map_err(|m| malformed(path, no, m)))
        .collect()
}

/// Unlabeled like and be views: one entry per sentence, in candidate order.
pub fn candidate_views(
    corpus: &Path,
    candidates: &[SimileCandidate],
) -> Result<(Vec<UnlabeledSentence>, Vec<UnlabeledSentence>)> {
    let mut order: HashMap<&str, (Option<usize>, Option<usize>)> = HashMap::new();
    let (mut n_like, mut n_be) = (0usize, 0usize);
    for c in candidates {
        let e = order.entry(c.sentence_id.as_str()).or_default();
        match c.view {
            View::Like if e.0.is_none() => {
                e.0 = Some(n_like);
                n_like += 1;
            }
            View::Be if e.1.is_none() => {
                e.1 = Some(n_be);
                n_be += 1;
            }
            _ => {}
        }
    }
    let mut like: Vec<Option<UnlabeledSentence>> = vec![None; n_like];
    let mut be: Vec<Option<UnlabeledSentence>> = vec![None; n_be];
    scan_corpus(open(corpus)?, |s: &TaggedSentence, _| {
        if let Some(&(l, b)) = order.get(s.id.as_str()) {
            let u = UnlabeledSentence {
                id: s.id.clone(),
                text: s.text(),
            };
            if let Some(i) = l {
                like[i].get_or_insert(u.clone());
            }
            if let Some(i) = b {
                be[i].get_or_insert(u);
            }
        }
    })
    .map_err(|e| Error::io(corpus, e))?;
    let collect = |v: Vec<Option<UnlabeledSentence>>| -> Result<Vec<UnlabeledSentence>> {
        v.into_iter()
            .map(|u| {
                u.ok_or_else(|| Error::IdMismatch("candidate sentence missing from the corpus (re-run extract)".into()))
            })
            .collect()
    };
    let like = collect(like)?;
    let be = collect(be)?;
    Ok((like, be))
}

/// Evaluation item: a precomputed ranking, or a query answered from the knowledge base.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct EvalItem {
    #[serde(default)]
    pub task: Option<String>,
    #[serde(default)]
    pub topic: Option<String>,
    #[serde(default)]
    pub vehicle: Option<String>,
    #[serde(default)]
    pub property: Option<String>,
    /// Sentence to polish.
    #[serde(default)]
    pub input: Option<String>,
    pub gold: Vec<String>,
    #[serde(default)]
    pub ranking: Option<Vec<String>>,
    #[serde(default)]
    pub frequency: Option<u64>,
}

fn read_eval_items(path: &Path) -> Result<Vec<EvalItem>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: EvalItem = serde_json::from_str(&line).map_err(|e| malformed(path, i + 1, e))?;
        if item.gold.is_empty() {
            return Err(malformed(path, i + 1, "empty gold list"));
        }
        out.push(item);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageStatus {
    NotRun,
    UpToDate,
    Stale(Vec<String>),
}

/// Output-producing stage runner bound to one configuration.
pub struct Pipeline {
    cfg: PipelineConfig,
    out: PathBuf,
    config_hash: String,
}

struct StageRun {
    stage: Stage,
    inputs: BTreeMap<String, String>,
    outputs: Vec<&'static str>,
    counts: BTreeMap<String, u64>,
}

impl StageRun {
    fn new(stage: Stage) -> Self {
        StageRun {
            stage,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            counts: BTreeMap::new(),
        }
    }

    fn count(&mut self, key: impl Into<String>, value: impl TryInto<u64>) {
        self.counts.insert(key.into(), value.try_into().unwrap_or(u64::MAX));
    }
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        let out = cfg.paths.output_dir.clone();
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let config_hash = cfg.hash();
        Ok(Pipeline { cfg, out, config_hash })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn config_path(&self, key: &str) -> Option<&PathBuf> {
        let p = &self.cfg.paths;
        match key {
            "corpus" => p.corpus.as_ref(),
            "trees" => p.trees.as_ref(),
            "seeds" => p.seeds.as_ref(),
            "coref" => p.coref.as_ref(),
            "knowledge_table" => p.knowledge_table.as_ref(),
            "context_table" => p.context_table.as_ref(),
            "taxonomy" => p.taxonomy.as_ref(),
            "queries" => p.queries.as_ref(),
            "polish_input" => p.polish_input.as_ref(),
            "eval_cases" => p.eval_cases.as_ref(),
            "gold_components" => p.gold_components.as_ref(),
            _ => None,
        }
    }

    fn input_path(&self, name: &str) -> PathBuf {
        self.config_path(name).cloned().unwrap_or_else(|| self.artifact(name))
    }

    /// A configured input file; records its hash.
    fn config_input(&self, run: &mut StageRun, key: &str) -> Result<PathBuf> {
        let path = self
            .config_path(key)
            .ok_or_else(|| Error::Config(format!("stage `{}` needs `{key}` in the config", run.stage)))?
            .clone();
        if !path.exists() {
            return Err(Error::Config(format!("`{key}` file {} does not exist", path.display())));
        }
        run.inputs.insert(key.to_string(), sha256_file(&path)?);
        Ok(path)
    }

    fn optional_config_input(&self, run: &mut StageRun, key: &str) -> Result<Option<PathBuf>> {
        match self.config_path(key) {
            Some(_) => self.config_input(run, key).map(Some),
            None => Ok(None),
        }
    }

    /// An upstream artifact; errors name the stage that produces it.
    fn artifact_input(&self, run: &mut StageRun, name: &str, producer: Stage) -> Result<PathBuf> {
        let path = self.artifact(name);
        if !path.exists() {
            return Err(Error::MissingPrerequisite {
                stage: run.stage.to_string(),
                missing: path.display().to_string(),
                run_first: format!("run {producer}"),
            });
        }
        run.inputs.insert(name.to_string(), sha256_file(&path)?);
        Ok(path)
    }

    fn write(&self, run: &mut StageRun, name: &'static str, bytes: &[u8]) -> Result<()> {
        let path = self.artifact(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        run.outputs.push(name);
        Ok(())
    }

    fn finish(&self, run: StageRun) -> Result<Manifest> {
        let mut outputs = BTreeMap::new();
        for name in &run.outputs {
            outputs.insert(name.to_string(), sha256_file(&self.artifact(name))?);
        }
        let manifest = Manifest {
            stage: run.stage.to_string(),
            version: MANIFEST_VERSION,
            config_hash: self.config_hash.clone(),
            inputs: run.inputs,
            outputs,
            counts: run.counts,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
        text.push('\n');
        let path = self.artifact(&run.stage.manifest_name());
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        for (k, v) in &manifest.counts {
            log::info!("{}: {k} = {v}", manifest.stage);
        }
        Ok(manifest)
    }

    pub fn run(&self, stage: Stage) -> Result<Manifest> {
        log::info!("running stage {stage}");
        let mut run = StageRun::new(stage);
        match stage {
            Stage::Extract => self.extract(&mut run)?,
            Stage::Detect => self.detect(&mut run)?,
            Stage::Components => self.components(&mut run)?,
            Stage::Properties => self.properties(&mut run)?,
            Stage::Build => self.build(&mut run)?,
            Stage::Finalize => self.finalize(&mut run)?,
            Stage::Query => self.query(&mut run)?,
            Stage::Polish => self.polish(&mut run)?,
            Stage::Eval => self.eval(&mut run)?,
            Stage::Stats => self.stats(&mut run)?,
        }
        self.finish(run)
    }

    /// Stages whose inputs are configured, in order.
    pub fn planned_stages(&self) -> Vec<Stage> {
        let p = &self.cfg.paths;
        let mut v = vec![Stage::Extract];
        if self.cfg.component_source == ComponentSource::Detected || p.seeds.is_some() {
            v.push(Stage::Detect);
        }
        v.extend([Stage::Components, Stage::Properties, Stage::Build, Stage::Finalize]);
        if p.queries.is_some() {
            v.push(Stage::Query);
        }
        if p.polish_input.is_some() {
            v.push(Stage::Polish);
        }
        if p.eval_cases.is_some() || p.gold_components.is_some() {
            v.push(Stage::Eval);
        }
        v.push(Stage::Stats);
        v
    }

    pub fn run_all(&self) -> Result<Vec<Manifest>> {
        self.planned_stages().into_iter().map(|s| self.run(s)).collect()
    }

    /// Compare each stage's manifest with the current inputs, outputs and config.
    pub fn status(&self) -> Result<Vec<(Stage, StageStatus)>> {
        let mut out = Vec::new();
        for stage in Stage::ALL {
            let path = self.artifact(&stage.manifest_name());
            if !path.exists() {
                out.push((stage, StageStatus::NotRun));
                continue;
            }
            let m = Manifest::load(&path)?;
            let mut reasons = Vec::new();
            if m.config_hash != self.config_hash {
                reasons.push("configuration changed".to_string());
            }
            let inputs = m.inputs.iter().map(|(n, h)| ("input", n, h, self.input_path(n)));
            let outputs = m.outputs.iter().map(|(n, h)| ("output", n, h, self.artifact(n)));
            for (kind, name, hash, path) in inputs.chain(outputs) {
                match sha256_file(&path) {
                    Ok(h) if &h == hash => {}
                    Ok(_) => reasons.push(format!("{kind} {name} changed")),
                    Err(_) => reasons.push(format!("{kind} {name} missing")),
                }
            }
            out.push((
                stage,
                if reasons.is_empty() {
                    StageStatus::UpToDate
                } else {
                    StageStatus::Stale(reasons)
                },
            ));
        }
        Ok(out)
    }

    fn extract(&self, run: &mut StageRun) -> Result<()> {
        let corpus = self.config_input(run, "corpus")?;
        let out_path = self.artifact(CANDIDATES);
        let file = File::create(&out_path).map_err(|e| Error::io(&out_path, e))?;
        let mut w = BufWriter::new(file);
        let mut write_err = writeln!(w, "{CANDIDATES_HEADER}").err();
        let summary = scan_corpus(open(&corpus)?, |_, cands| {
            for c in cands {
                if write_err.is_none() {
                    write_err = writeln!(w, "{}", c.to_record()).err();
                }
            }
        })
        .map_err(|e| Error::io(&corpus, e))?;
        if let Some(e) = write_err {
            return Err(Error::io(&out_path, e));
        }
        w.flush().map_err(|e| Error::io(&out_path, e))?;
        drop(w);
        run.outputs.push(CANDIDATES);
        run.count("sentences", summary.sentences);
        run.count("candidates_like", summary.counts.like);
        run.count("candidates_be", summary.counts.be);
        run.count("malformed_lines", summary.diagnostics.len());
        Ok(())
    }

    fn detect(&self, run: &mut StageRun) -> Result<()> {
        let corpus = self.config_input(run, "corpus")?;
        let seeds_path = self.config_input(run, "seeds")?;
        let cand_path = self.artifact_input(run, CANDIDATES, Stage::Extract)?;
        let seeds = read_seeds(open(&seeds_path)?)?;
        let candidates = read_candidates(&cand_path)?;

        let (like, be) = candidate_views(&corpus, &candidates)?;

        let learner = HashedLinearLearner::default();
        let result = run_cotraining(&learner, &seeds, &like, &be, &self.cfg.cotrain)?;

        let mut detected = String::from(DETECTED_HEADER);
        detected.push('\n');
        for (view, ids) in [(View::Like, &result.simile_like), (View::Be, &result.simile_be)] {
            for id in ids {
                detected.push_str(&format!("{id}\t{view}\n"));
            }
        }
        self.write(run, DETECTED, detected.as_bytes())?;
        let mut audit = String::from(AuditEntry::TSV_HEADER);
        audit.push('\n');
        for a in &result.audit {
            audit.push_str(&a.to_tsv());
            audit.push('\n');
        }
        self.write(run, AUDIT, audit.as_bytes())?;
        self.write(run, MODEL_LIKE, result.model_like.to_text().as_bytes())?;
        self.write(run, MODEL_BE, result.model_be.to_text().as_bytes())?;

        run.count("seeds", seeds.len());
        run.count("unlabeled_like", like.len());
        run.count("unlabeled_be", be.len());
        run.count("detected_like", result.simile_like.len());
        run.count("detected_be", result.simile_be.len());
        if let Some(last) = result.audit.last() {
            run.count("labeled_like", last.labeled_like);
            run.count("labeled_be", last.labeled_be);
        }
        Ok(())
    }

    fn like_ids(&self, run: &mut StageRun) -> Result<Vec<String>> {
        let mut seen = HashSet::new();
        let mut ids = Vec::new();
        match self.cfg.component_source {
            ComponentSource::Detected => {
                let path = self.artifact_input(run, DETECTED, Stage::Detect)?;
                for (no, line) in data_lines(&path)? {
                    let (id, view) = line
                        .split_once('\t')
                        .ok_or_else(|| malformed(&path, no, "expected `id<TAB>view`"))?;
                    let view: View = view.parse().map_err(|e: Error| malformed(&path, no, e))?;
                    if view == View::Like && seen.insert(id.to_string()) {
                        ids.push(id.to_string());
                    }
                }
            }
            ComponentSource::Candidates => {
                let path = self.artifact_input(run, CANDIDATES, Stage::Extract)?;
                for c in read_candidates(&path)? {
                    if c.view == View::Like && seen.insert(c.sentence_id.clone()) {
                        ids.push(c.sentence_id);
                    }
                }
            }
        }
        Ok(ids)
    }

    fn resolver(&self, run: &mut StageRun) -> Result<Box<dyn CorefResolver>> {
        Ok(match self.optional_config_input(run, "coref")? {
            Some(p) => Box::new(TableResolver::read(open(&p)?)?),
            None => Box::new(IdentityResolver),
        })
    }

    /// Parse the trees for `ids`; unparseable trees are errors only when needed.
    fn load_trees(&self, path: &Path, ids: &HashSet<&str>) -> Result<Vec<(String, Tree)>> {
        let mut out = Vec::new();
        for (no, id, tree) in read_tree_file(open(path)?)? {
            let needed = ids.contains(id.as_str());
            match tree {
                Ok(t) if needed => out.push((id, t)),
                Ok(_) => {}
                Err(e) if needed => return Err(malformed(path, no, format!("tree `{id}`: {e}"))),
                Err(e) => log::warn!("{}:{no}: tree `{id}` skipped: {e}", path.display()),
            }
        }
        Ok(out)
    }

    fn extraction(&self, run: &mut StageRun, ids: &[String]) -> Result<(Vec<ExtractionResult>, StatusCounts)> {
        let trees_path = self.config_input(run, "trees")?;
        let resolver = self.resolver(run)?;
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        let trees = self.load_trees(&trees_path, &wanted)?;
        extract_batch(&trees, ids, resolver.as_ref())
    }

    fn components(&self, run: &mut StageRun) -> Result<()> {
        let ids = self.like_ids(run)?;
        let (results, counts) = self.extraction(run, &ids)?;
        let mut text = String::from(ExtractionResult::TSV_HEADER);
        text.push('\n');
        for r in &results {
            text.push_str(&r.to_record());
            text.push('\n');
        }
        self.write(run, COMPONENTS, text.as_bytes())?;
        run.count("sentences", ids.len());
        run.count("anchors", counts.total());
        for (status, n) in &counts.0 {
            run.count(format!("status:{status}"), *n);
        }
        Ok(())
    }

    fn provider(&self, run: &mut StageRun, kind: ProviderKind) -> Result<Box<dyn PropertyProvider>> {
        let (key, url) = match kind {
            ProviderKind::Knowledge => ("knowledge_table", &self.cfg.knowledge_url),
            ProviderKind::Context => ("context_table", &self.cfg.context_url),
        };
        match (self.config_path(key).is_some(), url) {
            (true, Some(_)) => Err(Error::Config(format!("set either `{key}` or the {kind} url, not both"))),
            (true, None) => {
                let path = self.config_input(run, key)?;
                Ok(Box::new(TableProvider::read(kind, open(&path)?)?))
            }
            (false, Some(u)) => Ok(Box::new(HttpProvider::new(
                kind,
                u.clone(),
                Duration::from_secs(self.cfg.provider_timeout_secs),
            ))),
            (false, None) => Err(Error::Config(format!(
                "no {kind} provider configured (`{key}` or `{kind}_url`)"
            ))),
        }
    }

    fn properties(&self, run: &mut StageRun) -> Result<()> {
        let path = self.artifact_input(run, COMPONENTS, Stage::Components)?;
        let knowledge = self.provider(run, ProviderKind::Knowledge)?;
        let context = self.provider(run, ProviderKind::Context)?;
        let mut items = Vec::new();
        for (no, line) in data_lines(&path)? {
            if let Some(item) = ScoringItem::parse_component_record(&line, no)? {
                items.push(item);
            }
        }
        let (instances, diags) = build_instances(&items, knowledge.as_ref(), context.as_ref(), self.cfg.thresholds);
        let mut text = String::from(SimileInstance::TSV_HEADER);
        text.push('\n');
        for i in &instances {
            text.push_str(&i.to_record());
            text.push('\n');
        }
        self.write(run, INSTANCES, text.as_bytes())?;
        let mut skipped = String::from("item\tmessage\n");
        for d in &diags {
            log::warn!("property scoring skipped item {}: {}", d.line, d.message);
            skipped.push_str(&format!("{}\t{}\n", d.line, d.message));
        }
        self.write(run, SKIPPED, skipped.as_bytes())?;
        run.count("items", items.len());
        run.count("instances", instances.len());
        run.count("skipped", diags.len());
        Ok(())
    }

    fn build(&self, run: &mut StageRun) -> Result<()> {
        let path = self.artifact_input(run, INSTANCES, Stage::Properties)?;
        let instances = data_lines(&path)?
            .into_iter()
            .map(|(no, line)| SimileInstance::parse_record(&line, no))
            .collect::<Result<Vec<_>>>()?;
        let kb = KnowledgeBase::build(&instances, self.config_hash.clone())?;
        kb.save(&self.artifact(KB_RAW))?;
        run.outputs.push(KB_RAW);
        run.count("instances", instances.len());
        run.count("triplets", kb.len());
        Ok(())
    }

    fn finalize(&self, run: &mut StageRun) -> Result<()> {
        let path = self.artifact_input(run, KB_RAW, Stage::Build)?;
        let kb = KnowledgeBase::load(&path)?.finalize();
        kb.save(&self.artifact(KB_FINAL))?;
        run.outputs.push(KB_FINAL);
        run.count("triplets", kb.len());
        run.count("instances", kb.total_instances());
        run.count("degenerate_groups", kb.header().degenerate_groups);
        Ok(())
    }

    fn load_kb(&self, run: &mut StageRun) -> Result<KnowledgeBase> {
        let path = self.artifact_input(run, KB_FINAL, Stage::Finalize)?;
        KnowledgeBase::load(&path)
    }

    fn query(&self, run: &mut StageRun) -> Result<()> {
        let kb = self.load_kb(run)?;
        let inf = Inference::new(&kb)?;
        let path = self.config_input(run, "queries")?;
        let queries = read_queries(open(&path)?)?;
        let mut text = String::from("query\ttask\ttopic\tkey\trank\tanswer\tscore\n");
        let mut answered = 0;
        for (i, q) in queries.iter().enumerate() {
            let (task, topic, key, answers) = match q {
                Query::Interpret { topic, vehicle } => (
                    "interpret",
                    topic,
                    vehicle,
                    inf.interpret(topic, vehicle, self.cfg.top_k),
                ),
                Query::Generate { topic, property } => (
                    "generate",
                    topic,
                    property,
                    inf.generate_vehicles(topic, property, self.cfg.top_k),
                ),
            };
            if !answers.is_empty() {
                answered += 1;
            }
            for (r, a) in answers.iter().enumerate() {
                text.push_str(&format!(
                    "{}\t{task}\t{topic}\t{key}\t{}\t{}\t{}\n",
                    i + 1,
                    r + 1,
                    a.answer,
                    a.score
                ));
            }
        }
        self.write(run, QUERY_OUT, text.as_bytes())?;
        run.count("queries", queries.len());
        run.count("answered", answered);
        Ok(())
    }

    fn polish(&self, run: &mut StageRun) -> Result<()> {
        let kb = self.load_kb(run)?;
        let inf = Inference::new(&kb)?;
        let path = self.config_input(run, "polish_input")?;
        let mut text = String::from("input\tstatus\toutput\tvehicle\tcoherent\n");
        let (mut total, mut rewritten) = (0usize, 0usize);
        for line in open(&path)?.lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            total += 1;
            match inf.polish_rewrite(&tokens, None, self.cfg.gamma, self.cfg.top_k) {
                Ok(p) => {
                    rewritten += 1;
                    let coherent = coherence_check(&p.sentence, &p.vehicle);
                    text.push_str(&format!(
                        "{}\tok\t{}\t{}\t{coherent}\n",
                        tokens.join(" "),
                        p.sentence,
                        p.vehicle
                    ));
                }
                Err(Error::PropertyNotCovered(p)) => {
                    text.push_str(&format!("{}\tnot_covered:{p}\t\t\tfalse\n", tokens.join(" ")));
                }
                Err(e) => return Err(e),
            }
        }
        self.write(run, POLISH_OUT, text.as_bytes())?;
        run.count("sentences", total);
        run.count("rewritten", rewritten);
        Ok(())
    }

    fn eval(&self, run: &mut StageRun) -> Result<()> {
        let cases = self.optional_config_input(run, "eval_cases")?;
        let gold = self.optional_config_input(run, "gold_components")?;
        if cases.is_none() && gold.is_none() {
            return Err(Error::Config(
                "stage `eval` needs `eval_cases` or `gold_components`".into(),
            ));
        }
        let mut report: BTreeMap<String, Value> = BTreeMap::new();
        if let Some(path) = cases {
            let kb = self.load_kb(run)?;
            let inf = Inference::new(&kb)?;
            let k = self.cfg.top_k;
            let mut rankings: BTreeMap<&str, Vec<RankingCase>> = BTreeMap::new();
            let mut polish_pairs: Vec<(Vec<String>, Vec<String>)> = Vec::new();
            let (mut polish_total, mut coherent) = (0usize, 0usize);
            let mut generated: Vec<String> = Vec::new();
            for (i, item) in read_eval_items(&path)?.into_iter().enumerate() {
                let bad = |m: &str| malformed(&path, i + 1, m);
                let task = item
                    .task
                    .as_deref()
                    .unwrap_or(if item.ranking.is_some() { "ranking" } else { "" });
                let ranking = match task {
                    "ranking" => item
                        .ranking
                        .clone()
                        .ok_or_else(|| bad("`ranking` task without a ranking"))?,
                    "interpret" => {
                        let v = item
                            .vehicle
                            .as_deref()
                            .ok_or_else(|| bad("interpret needs `vehicle`"))?;
                        let t = item.topic.as_deref().unwrap_or("");
                        inf.interpret(t, v, k).into_iter().map(|a| a.answer).collect()
                    }
                    "generate" => {
                        let p = item
                            .property
                            .as_deref()
                            .ok_or_else(|| bad("generate needs `property`"))?;
                        let t = item.topic.as_deref().unwrap_or("");
                        inf.generate_vehicles(t, p, k).into_iter().map(|a| a.answer).collect()
                    }
                    "polish" => {
                        let input = item.input.as_deref().ok_or_else(|| bad("polish needs `input`"))?;
                        let tokens: Vec<&str> = input.split_whitespace().collect();
                        polish_total += 1;
                        let reference: Vec<String> = item.gold[0].split_whitespace().map(str::to_string).collect();
                        let candidate = match inf.polish_rewrite(&tokens, item.property.as_deref(), self.cfg.gamma, k) {
                            Ok(p) => {
                                if coherence_check(&p.sentence, &p.vehicle) {
                                    coherent += 1;
                                }
                                generated.push(p.vehicle.clone());
                                p.vehicle.split_whitespace().map(str::to_string).collect()
                            }
                            Err(Error::PropertyNotCovered(_)) => Vec::new(),
                            Err(e) => return Err(e),
                        };
                        polish_pairs.push((candidate, reference));
                        continue;
                    }
                    other => return Err(bad(&format!("unknown task `{other}`"))),
                };
                let case = RankingCase {
                    gold: item.gold,
                    ranking,
                    frequency: item.frequency,
                };
                rankings
                    .entry(match task {
                        "interpret" => "interpret",
                        "generate" => "generate",
                        _ => "ranking",
                    })
                    .or_default()
                    .push(case);
            }
            for (task, cases) in rankings {
                let cases = match self.cfg.eval_min_frequency {
                    Some(f) => filter_by_frequency(cases, f),
                    None => cases,
                };
                run.count(format!("cases:{task}"), cases.len());
                if cases.is_empty() {
                    continue;
                }
                let mut m = serde_json::Map::new();
                m.insert("cases".into(), json!(cases.len()));
                m.insert("mrr".into(), json!(mrr(&cases)?));
                for r in [1, 5, 10] {
                    m.insert(format!("recall@{r}"), json!(recall_at_k(&cases, r)?));
                }
                report.insert(task.to_string(), Value::Object(m));
            }
            if polish_total > 0 {
                run.count("cases:polish", polish_total);
                report.insert(
                    "polish".into(),
                    json!({
                        "cases": polish_total,
                        "covered": generated.len(),
                        "bleu1": corpus_bleu(&polish_pairs, 1)?,
                        "bleu2": corpus_bleu(&polish_pairs, 2)?,
                        "avg_length": avg_length(&generated),
                        "coherent": coherent,
                    }),
                );
            }
        }
        if let Some(path) = gold {
            let gold = read_gold_components(open(&path)?)?;
            let mut seen = HashSet::new();
            let ids: Vec<String> = gold
                .iter()
                .filter(|g| seen.insert(g.sentence_id.clone()))
                .map(|g| g.sentence_id.clone())
                .collect();
            let trees_path = self.config_input(run, "trees")?;
            let resolver = self.resolver(run)?;
            let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
            let trees = self.load_trees(&trees_path, &wanted)?;
            let tags: HashMap<String, Vec<(String, String)>> = trees
                .iter()
                .map(|(id, t)| (id.clone(), t.tagged_leaves(t.root())))
                .collect();
            let (results, _) = extract_batch(&trees, &ids, resolver.as_ref())?;
            let scores = score_extraction(&results, &gold, &tags);
            run.count("cases:components", gold.len());
            report.insert(
                "components".into(),
                serde_json::to_value(scores).map_err(|e| Error::invalid(e.to_string()))?,
            );
        }
        let mut text = serde_json::to_string_pretty(&report).map_err(|e| Error::invalid(e.to_string()))?;
        text.push('\n');
        self.write(run, EVAL_OUT, text.as_bytes())
    }

    fn stats(&self, run: &mut StageRun) -> Result<()> {
        let kb = self.load_kb(run)?;
        let hist = freq_distribution(&kb);
        self.write(run, FREQ_OUT, freq_distribution_csv(&hist).as_bytes())?;
        let mut summary = json!({
            "triplets": kb.len(),
            "instances": kb.total_instances(),
            "pairs": hist.values().sum::<u64>(),
        });
        if let Some(path) = self.optional_config_input(run, "taxonomy")? {
            let tax = Taxonomy::read(open(&path)?)?;
            let mapping = domain_mapping_table(&kb, &tax);
            self.write(run, MAPPING_OUT, mapping.to_csv().as_bytes())?;
            let dist = domain_distribution(&kb, &tax);
            self.write(run, DISTRIBUTION_OUT, dist.to_csv().as_bytes())?;
            summary["domain_assigned_weight"] = json!(mapping.assigned_weight);
            summary["domain_ignored_triplets"] = json!(mapping.ignored_triplets);
            run.count("domain_ignored_triplets", mapping.ignored_triplets);
        }
        let mut text = serde_json::to_string_pretty(&summary).map_err(|e| Error::invalid(e.to_string()))?;
        text.push('\n');
        self.write(run, STATS_OUT, text.as_bytes())?;
        run.count("triplets", kb.len());
        run.count("pairs", hist.values().sum::<u64>());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_roundtrip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("nope".parse::<Stage>().is_err());
    }

    #[test]
    fn seeds_and_queries_parse() {
        let s =
            read_seeds("simile\tHer hair felt like silk\n# c\nliteral\tHe looks like his dad\n".as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert!(read_seeds("maybe\tx\n".as_bytes()).is_err());
        let q = read_queries("interpret\ther hair\tsilk\ngenerate\tlove\trare\n".as_bytes()).unwrap();
        assert_eq!(q.len(), 2);
        assert!(read_queries("ask\tx\n".as_bytes()).is_err());
    }

    #[test]
    fn missing_prerequisite_names_stage() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.paths.output_dir = dir.path().join("out");
        let p = Pipeline::new(cfg).unwrap();
        match p.run(Stage::Build) {
            Err(Error::MissingPrerequisite { run_first, .. }) => assert_eq!(run_first, "run properties"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(p.run(Stage::Extract), Err(Error::Config(_))));
    }
}
