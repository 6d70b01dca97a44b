use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use simkb::classifier::{ExternalScorer, HashedLinearLearner, HashedLinearModel, SimileScorer};
use simkb::config::PipelineConfig;
use simkb::cotrain::run_cotraining;
use simkb::explain::explain;
use simkb::inference::{coherence_check, Inference, RankedAnswer};
use simkb::kb::{KnowledgeBase, Triplet};
use simkb::pipeline::{self, Pipeline, Stage, StageStatus, KB_FINAL};
use simkb::properties::SimileInstance;
use simkb::{Error, Result};

#[derive(Parser)]
#[command(
    name = "simkb",
    version,
    about = "Build and query a probabilistic simile knowledge base"
)]
struct Cli {
    /// key = value configuration file; relative paths in it resolve against its directory
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Root random seed, overriding the config
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: one per core)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Override a config key, e.g. `--set gamma=1.5`; repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one pipeline stage, or `all` for every configured stage in order
    Run { stage: String },
    /// Report whether each stage's outputs match its recorded inputs
    Status,
    /// Co-train the like-view and be-view classifiers
    Cotrain(CotrainArgs),
    /// Build, finalize and query knowledge base files
    Kb {
        #[command(subcommand)]
        action: KbCommand,
    },
    /// Rank properties shared by a topic and a vehicle
    Interpret {
        #[command(flatten)]
        kb: KbArg,
        #[arg(long, default_value = "")]
        topic: String,
        #[arg(long)]
        vehicle: String,
        #[arg(short, long)]
        k: Option<usize>,
        /// Emit JSON with the contributing triplets
        #[arg(long)]
        explain: bool,
    },
    /// Rank vehicles that convey a property
    Generate {
        #[command(flatten)]
        kb: KbArg,
        #[arg(long, default_value = "")]
        topic: String,
        #[arg(long)]
        property: String,
        #[arg(short, long)]
        k: Option<usize>,
        #[arg(long)]
        explain: bool,
    },
    /// Rewrite literal sentences from standard input into similes
    Polish {
        #[command(flatten)]
        kb: KbArg,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(short, long)]
        k: Option<usize>,
        /// Property to replace; defaults to the final adjective or adverb
        #[arg(long)]
        property: Option<String>,
        #[arg(long)]
        explain: bool,
    },
    /// Show how a triplet's plausibility and typicality were computed
    Explain {
        #[command(flatten)]
        kb: KbArg,
        #[arg(long, default_value = "")]
        topic: String,
        #[arg(long)]
        property: String,
        #[arg(long)]
        vehicle: String,
    },
    /// Classify sentences from standard input as simile or literal
    Classify {
        /// Model file written by `cotrain` or the detect stage
        #[arg(long, conflicts_with = "external", required_unless_present = "external")]
        model: Option<PathBuf>,
        /// External scorer command; reads one sentence per line, answers one probability per line
        #[arg(long, num_args = 1.., allow_hyphen_values = true, value_name = "CMD")]
        external: Option<Vec<String>>,
    },
}

#[derive(Args)]
struct KbArg {
    /// Finalized knowledge base (default: the pipeline output)
    #[arg(long, value_name = "FILE")]
    kb: Option<PathBuf>,
}

#[derive(Args)]
struct CotrainArgs {
    /// Tagged corpus the candidates were extracted from
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Candidate file from the extract stage
    #[arg(long)]
    candidates: Option<PathBuf>,
    /// Labeled seeds, `simile|literal<TAB>text`
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum KbCommand {
    /// Aggregate scored instances into an unfinalized knowledge base
    Build {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute typicality scores
    Finalize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// List stored triplets matching the given terms
    Query {
        #[command(flatten)]
        kb: KbArg,
        #[arg(long)]
        topic: Option<String>,
        #[arg(long)]
        property: Option<String>,
        #[arg(long)]
        vehicle: Option<String>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::parse("", &cwd)?,
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim(), &cwd)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.finish()
}

fn stdout_err(e: io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn kb_path(cfg: &PipelineConfig, arg: &KbArg) -> PathBuf {
    arg.kb.clone().unwrap_or_else(|| cfg.paths.output_dir.join(KB_FINAL))
}

fn load_finalized(cfg: &PipelineConfig, arg: &KbArg) -> Result<KnowledgeBase> {
    let path = kb_path(cfg, arg);
    if !path.exists() {
        return Err(Error::NotFound(format!(
            "knowledge base {} (pass --kb or run `simkb run finalize`)",
            path.display()
        )));
    }
    KnowledgeBase::load(&path)
}

fn print_ranking(out: &mut impl Write, answers: &[RankedAnswer], as_json: bool) -> Result<()> {
    if as_json {
        let text = serde_json::to_string_pretty(answers).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(out, "{text}").map_err(stdout_err)
    } else {
        for (i, a) in answers.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}", i + 1, a.answer, a.score).map_err(stdout_err)?;
        }
        Ok(())
    }
}

fn print_triplet(out: &mut impl Write, t: &Triplet) -> Result<()> {
    let typ = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| v.to_string());
    writeln!(
        out,
        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
        t.topic,
        t.property,
        t.vehicle,
        t.frequency,
        t.plausibility,
        typ(t.typ_p_given_tv),
        typ(t.typ_tv_given_p)
    )
    .map_err(stdout_err)
}

fn read_instances(path: &Path) -> Result<Vec<SimileInstance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| SimileInstance::parse_record(l, i + 1))
        .collect()
}

fn cotrain(cfg: &PipelineConfig, args: &CotrainArgs) -> Result<()> {
    let pick = |flag: &Option<PathBuf>, configured: &Option<PathBuf>, name: &str| {
        flag.clone()
            .or_else(|| configured.clone())
            .ok_or_else(|| Error::Config(format!("pass --{name} or set `{name}` in the config")))
    };
    let corpus = pick(&args.corpus, &cfg.paths.corpus, "corpus")?;
    let seeds_path = pick(&args.seeds, &cfg.paths.seeds, "seeds")?;
    let candidates = args
        .candidates
        .clone()
        .unwrap_or_else(|| cfg.paths.output_dir.join(pipeline::CANDIDATES));
    let file = fs::File::open(&seeds_path).map_err(|e| Error::io(&seeds_path, e))?;
    let seeds = pipeline::read_seeds(io::BufReader::new(file))?;
    let (like, be) = pipeline::candidate_views(&corpus, &pipeline::read_candidates(&candidates)?)?;
    let result = run_cotraining(&HashedLinearLearner::default(), &seeds, &like, &be, &cfg.cotrain)?;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let write = |name: &str, text: String| {
        let path = args.out.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    let lines = |ids: &[String]| ids.iter().map(|id| format!("{id}\n")).collect::<String>();
    write("similes_like.txt", lines(&result.simile_like))?;
    write("similes_be.txt", lines(&result.simile_be))?;
    write(pipeline::MODEL_LIKE, result.model_like.to_text())?;
    write(pipeline::MODEL_BE, result.model_be.to_text())?;
    let audit: String = std::iter::once(simkb::cotrain::AuditEntry::TSV_HEADER.to_string())
        .chain(result.audit.iter().map(|a| a.to_tsv()))
        .map(|l| l + "\n")
        .collect();
    write(pipeline::AUDIT, audit)?;
    log::info!(
        "cotrain: {} like and {} be sentences labeled simile",
        result.simile_like.len(),
        result.simile_be.len()
    );
    Ok(())
}

fn classify(model: Option<&Path>, external: Option<&[String]>) -> Result<()> {
    let scorer: Box<dyn SimileScorer> = match (model, external) {
        (Some(path), _) => Box::new(HashedLinearModel::load(path)?),
        (None, Some([program, args @ ..])) => Box::new(ExternalScorer::spawn(program, args)?),
        _ => return Err(Error::invalid("pass --model or --external")),
    };
    let mut out = BufWriter::new(io::stdout().lock());
    for line in io::stdin().lock().lines() {
        let line = line.map_err(|e| Error::io("<stdin>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p = scorer.predict_proba(&line)?;
        writeln!(out, "{}\t{}\t{line}", p.label, p.confidence).map_err(stdout_err)?;
    }
    out.flush().map_err(stdout_err)
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let mut out = BufWriter::new(io::stdout().lock());
    match &cli.command {
        Command::Run { stage } => {
            let p = Pipeline::new(cfg)?;
            let manifests = if stage == "all" {
                p.run_all()?
            } else {
                vec![p.run(stage.parse::<Stage>()?)?]
            };
            for m in manifests {
                let counts: Vec<String> = m.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
                writeln!(out, "{}\t{}", m.stage, counts.join(" ")).map_err(stdout_err)?;
            }
        }
        Command::Status => {
            for (stage, status) in Pipeline::new(cfg)?.status()? {
                let text = match status {
                    StageStatus::NotRun => "not run".to_string(),
                    StageStatus::UpToDate => "up to date".to_string(),
                    StageStatus::Stale(reasons) => format!("stale: {}", reasons.join("; ")),
                };
                writeln!(out, "{stage}\t{text}").map_err(stdout_err)?;
            }
        }
        Command::Cotrain(args) => cotrain(&cfg, args)?,
        Command::Kb { action } => match action {
            KbCommand::Build { instances, out: path } => {
                let kb = KnowledgeBase::build(&read_instances(instances)?, cfg.hash())?;
                kb.save(path)?;
                writeln!(out, "triplets={} instances={}", kb.len(), kb.total_instances()).map_err(stdout_err)?;
            }
            KbCommand::Finalize { input, out: path } => {
                let kb = KnowledgeBase::load(input)?.finalize();
                kb.save(path)?;
                let h = kb.header();
                writeln!(out, "triplets={} degenerate_groups={}", h.triplets, h.degenerate_groups)
                    .map_err(stdout_err)?;
            }
            KbCommand::Query {
                kb,
                topic,
                property,
                vehicle,
            } => {
                let path = kb_path(&cfg, kb);
                let kb = KnowledgeBase::load(&path)?;
                let norm = |s: &Option<String>| s.as_deref().map(simkb::text::normalize_term);
                let (t, p, v) = (norm(topic), norm(property), norm(vehicle));
                writeln!(
                    out,
                    "topic\tproperty\tvehicle\tfrequency\tplausibility\ttyp_p_given_tv\ttyp_tv_given_p"
                )
                .map_err(stdout_err)?;
                let matches = |want: &Option<String>, have: &str| want.as_deref().is_none_or(|w| w == have);
                for tr in kb.triplets() {
                    if matches(&t, &tr.topic) && matches(&p, &tr.property) && matches(&v, &tr.vehicle) {
                        print_triplet(&mut out, tr)?;
                    }
                }
            }
        },
        Command::Interpret {
            kb,
            topic,
            vehicle,
            k,
            explain,
        } => {
            let kb = load_finalized(&cfg, kb)?;
            let answers = Inference::new(&kb)?.interpret(topic, vehicle, k.unwrap_or(cfg.top_k));
            print_ranking(&mut out, &answers, *explain)?;
        }
        Command::Generate {
            kb,
            topic,
            property,
            k,
            explain,
        } => {
            let kb = load_finalized(&cfg, kb)?;
            let answers = Inference::new(&kb)?.generate_vehicles(topic, property, k.unwrap_or(cfg.top_k));
            print_ranking(&mut out, &answers, *explain)?;
        }
        Command::Polish {
            kb,
            gamma,
            k,
            property,
            explain,
        } => {
            let kb = load_finalized(&cfg, kb)?;
            let inf = Inference::new(&kb)?;
            let (gamma, k) = (gamma.unwrap_or(cfg.gamma), k.unwrap_or(cfg.top_k));
            for line in io::stdin().lock().lines() {
                let line = line.map_err(|e| Error::io("<stdin>", e))?;
                let tokens: Vec<&str> = line.split_whitespace().collect();
                if tokens.is_empty() {
                    continue;
                }
                let p = match inf.polish_rewrite(&tokens, property.as_deref(), gamma, k) {
                    Ok(p) => p,
                    Err(Error::PropertyNotCovered(p)) => {
                        log::warn!("`{p}` has no vehicle in the knowledge base; sentence left unchanged");
                        writeln!(out, "{line}").map_err(stdout_err)?;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                if *explain {
                    let v = json!({
                        "input": line,
                        "output": p.sentence,
                        "property": p.property,
                        "vehicle": p.vehicle,
                        "coherent": coherence_check(&p.sentence, &p.vehicle),
                        "alternatives": p.alternatives,
                    });
                    writeln!(out, "{v}").map_err(stdout_err)?;
                } else {
                    writeln!(out, "{}", p.sentence).map_err(stdout_err)?;
                }
            }
        }
        Command::Explain {
            kb,
            topic,
            property,
            vehicle,
        } => {
            let kb = KnowledgeBase::load(&kb_path(&cfg, kb))?;
            write!(out, "{}", explain(&kb, topic, property, vehicle)?).map_err(stdout_err)?;
        }
        Command::Classify { model, external } => {
            drop(out);
            return classify(model.as_deref(), external.as_deref());
        }
    }
    out.flush().map_err(stdout_err)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            log::error!("cannot configure {jobs} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
