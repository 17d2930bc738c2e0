use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chronolink::corpus::{compute_stats, mentions, parse_conllu, Document, MentionAnnotation};
use chronolink::dynamics::SenseInventory;
use chronolink::evalrep::{
    evaluate, histogram_csv, krippendorff_alpha, popularity_correlation, popularity_histogram,
};
use chronolink::kbstore::{load_kb, read_entities, EmbeddingIndex, Kb, NormMode, TypeTaxonomy};
use chronolink::nilpred::{logistic_train, sweep_tau, NilKind, NilRule};
use chronolink::pipeline::{dev_cases, link_corpus, LinkInputs, LinkSettings, Prediction, RunConfig};
use chronolink::retrieval::CandidateDump;
use chronolink::Link;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::config::{config_hash, LinkArgs};
use crate::UsageError;

#[derive(Debug, Parser)]
#[command(name = "chronolink", version, about = "Temporally constrained entity linking for historical corpora")]
pub struct Cli {
    /// Debug logging
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus statistics
    Stats {
        corpus: PathBuf,
        /// Write stats.json and stats.txt here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Link every mention of a corpus
    Link {
        #[command(flatten)]
        args: LinkArgs,
        /// Output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against the gold links of a corpus
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        kb: KbArgs,
        /// Candidate dump of the run (defaults to candidates.jsonl next to the predictions)
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inter-annotator agreement between two annotation files
    Iaa {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_enum, default_value_t = IaaFormat::Conllu)]
        format: IaaFormat,
        /// Token label compared for CoNLL-U input
        #[arg(long, value_enum, default_value_t = IaaLevel::Link)]
        level: IaaLevel,
        /// Ignore tokens outside a mention in both files
        #[arg(long)]
        annotated_only: bool,
    },
    /// Popularity histogram of gold entities and its correlation with correctness
    Popularity {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        kb: KbArgs,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick a NIL threshold on development data
    Sweep {
        #[command(flatten)]
        args: LinkArgs,
        #[arg(long)]
        dev_corpus: PathBuf,
        #[arg(long)]
        dev_mention_embeddings: PathBuf,
        /// Heuristic to sweep, or "all"
        #[arg(long, default_value = "all")]
        kind: String,
        /// Write the best rule as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the logistic NIL classifier on development data
    TrainNil {
        #[command(flatten)]
        args: LinkArgs,
        #[arg(long)]
        dev_corpus: PathBuf,
        #[arg(long)]
        dev_mention_embeddings: PathBuf,
        #[arg(long, default_value_t = 5000)]
        epochs: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IaaFormat {
    Conllu,
    Tsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IaaLevel {
    Link,
    Nec,
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct KbArgs {
    #[arg(long)]
    pub entities: Option<PathBuf>,
    /// Optional here: without it only entity metadata is used
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats { corpus, out } => cmd_stats(&corpus, out.as_deref()),
        Command::Link { args, out } => cmd_link(&args, out),
        Command::Eval {
            predictions,
            corpus,
            kb,
            candidates,
            out,
        } => cmd_eval(&predictions, &corpus, &kb, candidates, out.as_deref()),
        Command::Iaa {
            a,
            b,
            format,
            level,
            annotated_only,
        } => cmd_iaa(&a, &b, format, level, annotated_only),
        Command::Popularity {
            corpus,
            kb,
            predictions,
            out,
        } => cmd_popularity(&corpus, &kb, predictions.as_deref(), &out),
        Command::Sweep {
            args,
            dev_corpus,
            dev_mention_embeddings,
            kind,
            out,
        } => cmd_sweep(&args, &dev_corpus, &dev_mention_embeddings, &kind, out.as_deref()),
        Command::TrainNil {
            args,
            dev_corpus,
            dev_mention_embeddings,
            epochs,
            lr,
            out,
        } => cmd_train_nil(&args, &dev_corpus, &dev_mention_embeddings, epochs, lr, &out),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| chronolink::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }.into())
}

fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let text = read_text(path)?;
    parse_conllu(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn jsonl<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

fn pretty<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn cmd_stats(corpus: &Path, out: Option<&Path>) -> Result<()> {
    let docs = read_corpus(corpus)?;
    let stats = compute_stats(&docs);
    let table = stats.to_table();
    print!("{table}");
    if let Some(dir) = out {
        write_file(&dir.join("stats.json"), pretty(&stats)?)?;
        write_file(&dir.join("stats.txt"), table)?;
    }
    Ok(())
}

/// Loads a KB. Without an embedding file the entity metadata is kept and
/// embedding references are dropped.
fn load_kb_args(kb: &KbArgs) -> Result<Option<Kb>> {
    let Some(entities) = &kb.entities else {
        if kb.embeddings.is_some() {
            return Err(UsageError("--embeddings needs --entities".into()).into());
        }
        return Ok(None);
    };
    let kb = match &kb.embeddings {
        Some(emb) => load_kb(entities, emb, kb.taxonomy.as_deref())?,
        None => {
            let mut records = read_entities(&read_text(entities)?)?;
            records.iter_mut().for_each(|r| r.embedding_id = None);
            let taxonomy = match &kb.taxonomy {
                Some(p) => TypeTaxonomy::from_json(&read_text(p)?)?,
                None => TypeTaxonomy::builtin(),
            };
            Kb::new(records, EmbeddingIndex::new(1, Vec::new(), NormMode::Raw)?, taxonomy)?
        }
    };
    Ok(Some(kb))
}

struct Loaded {
    docs: Vec<Document>,
    kb: Option<Kb>,
    mention_embeddings: Option<EmbeddingIndex>,
    senses: Option<SenseInventory>,
    settings: LinkSettings,
}

fn load_run(cfg: &RunConfig) -> Result<Loaded> {
    cfg.validate()?;
    let trained = match &cfg.nil_rule {
        Some(p) => Some(NilRule::from_json(&read_text(p)?)?),
        None => None,
    };
    let settings = cfg.settings(trained.as_ref())?;
    let docs = read_corpus(cfg.corpus.as_deref().expect("validated"))?;
    let kb = load_kb_args(&KbArgs {
        entities: cfg.entities.clone(),
        embeddings: cfg.embeddings.clone(),
        taxonomy: cfg.taxonomy.clone(),
    })?;
    let mention_embeddings = cfg
        .mention_embeddings
        .as_deref()
        .map(EmbeddingIndex::read)
        .transpose()?;
    let senses = cfg.senses.as_deref().map(SenseInventory::load).transpose()?;
    Ok(Loaded {
        docs,
        kb,
        mention_embeddings,
        senses,
        settings,
    })
}

impl Loaded {
    fn inputs(&self) -> LinkInputs<'_> {
        LinkInputs {
            docs: &self.docs,
            kb: self.kb.as_ref(),
            mention_embeddings: self.mention_embeddings.as_ref(),
            senses: self.senses.as_ref(),
        }
    }
}

fn cmd_link(args: &LinkArgs, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = args.resolve()?;
    if out.is_some() {
        cfg.out = out;
    }
    let Some(out) = cfg.out.clone() else {
        return Err(UsageError("no output directory (--out)".into()).into());
    };
    let loaded = load_run(&cfg)?;
    let output = link_corpus(&loaded.inputs(), &loaded.settings)?;

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_file(&out.join("predictions.jsonl"), jsonl(&output.predictions)?)?;
    write_file(&out.join("candidates.jsonl"), jsonl(&output.candidates)?)?;
    if cfg.trace {
        write_file(&out.join("dynamics_trace.csv"), output.traces_csv())?;
    }
    let n_nil = output.predictions.iter().filter(|p| p.predicted.is_nil()).count();
    let meta = json!({
        "tool": "chronolink",
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "config_sha256": config_hash(&cfg)?,
        "nil_rule": loaded.settings.nil.describe(),
        "score_normalization": output.score_normalization,
        "n_mentions": output.predictions.len(),
        "n_nil": n_nil,
        "n_dynamics_runs": output.traces.len(),
        "n_unconverged": output.traces.iter().filter(|t| !t.outcome.converged).count(),
    });
    write_file(&out.join("run.json"), pretty(&meta)?)?;
    println!(
        "linked {} mentions ({} NIL) -> {}",
        output.predictions.len(),
        n_nil,
        out.display()
    );
    Ok(())
}

fn read_predictions(path: &Path) -> Result<HashMap<String, Link>> {
    let mut map = HashMap::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(line).map_err(|e| chronolink::Error::Json {
            context: format!("{} line {}", path.display(), i + 1),
            source: e,
        })?;
        if map.insert(p.mention_id.clone(), p.predicted).is_some() {
            return Err(chronolink::Error::Eval(format!("duplicate prediction for {}", p.mention_id)).into());
        }
    }
    Ok(map)
}

fn read_candidates(path: &Path) -> Result<HashMap<String, CandidateDump>> {
    let mut map = HashMap::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let d: CandidateDump = serde_json::from_str(line).map_err(|e| chronolink::Error::Json {
            context: format!("{} line {}", path.display(), i + 1),
            source: e,
        })?;
        map.insert(d.mention_id.clone(), d);
    }
    Ok(map)
}

fn cmd_eval(
    predictions: &Path,
    corpus: &Path,
    kb: &KbArgs,
    candidates: Option<PathBuf>,
    out: Option<&Path>,
) -> Result<()> {
    let gold: Vec<MentionAnnotation> = mentions(&read_corpus(corpus)?);
    let preds = read_predictions(predictions)?;
    let kb = load_kb_args(kb)?;
    let candidates = candidates.or_else(|| {
        let sibling = predictions.with_file_name("candidates.jsonl");
        sibling.exists().then_some(sibling)
    });
    let dumps = match candidates {
        Some(p) => read_candidates(&p)?,
        None => HashMap::new(),
    };
    let report = evaluate(&preds, &gold, kb.as_ref(), &dumps)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(dir) = out {
        write_file(&dir.join("eval.json"), pretty(&report)?)?;
        write_file(&dir.join("eval.txt"), text)?;
    }
    Ok(())
}

fn token_labels(docs: &[Document], level: IaaLevel) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for d in docs {
        for s in &d.sentences {
            for t in &s.tokens {
                let label = match level {
                    IaaLevel::Link => t.link.map_or("O".to_string(), |l| l.to_string()),
                    IaaLevel::Nec => t.tag.entity_type().unwrap_or("O").to_string(),
                };
                out.push((t.surface.clone(), label));
            }
        }
    }
    out
}

fn tsv_labels(path: &Path) -> Result<HashMap<String, Option<String>>> {
    let mut map = HashMap::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, label) = line.split_once('\t').ok_or_else(|| chronolink::Error::Parse {
            line: i + 1,
            message: "expected `item<TAB>label`".into(),
        })?;
        let label = label.trim();
        let value = (!label.is_empty() && label != "_").then(|| label.to_string());
        map.insert(id.to_string(), value);
    }
    Ok(map)
}

fn cmd_iaa(a: &Path, b: &Path, format: IaaFormat, level: IaaLevel, annotated_only: bool) -> Result<()> {
    let units: Vec<Vec<Option<String>>> = match format {
        IaaFormat::Conllu => {
            let la = token_labels(&read_corpus(a)?, level);
            let lb = token_labels(&read_corpus(b)?, level);
            if la.len() != lb.len() {
                return Err(chronolink::Error::Eval(format!(
                    "files have {} and {} tokens",
                    la.len(),
                    lb.len()
                ))
                .into());
            }
            let mut units = Vec::with_capacity(la.len());
            for (i, ((sa, xa), (sb, xb))) in la.into_iter().zip(lb).enumerate() {
                if sa != sb {
                    return Err(chronolink::Error::Eval(format!(
                        "token {} differs: `{sa}` vs `{sb}`",
                        i + 1
                    ))
                    .into());
                }
                units.push(vec![Some(xa), Some(xb)]);
            }
            units
        }
        IaaFormat::Tsv => {
            let (ma, mb) = (tsv_labels(a)?, tsv_labels(b)?);
            let mut ids: Vec<&String> = ma.keys().chain(mb.keys()).collect();
            ids.sort();
            ids.dedup();
            ids.into_iter()
                .map(|id| vec![ma.get(id).cloned().flatten(), mb.get(id).cloned().flatten()])
                .collect()
        }
    };
    let units: Vec<_> = if annotated_only {
        units
            .into_iter()
            .filter(|u| u.iter().any(|v| v.as_deref().map_or(false, |s| s != "O")))
            .collect()
    } else {
        units
    };
    let alpha = krippendorff_alpha(&units)?;
    println!("{}", serde_json::to_string(&json!({ "units": units.len(), "alpha": alpha }))?);
    Ok(())
}

fn cmd_popularity(corpus: &Path, kb: &KbArgs, predictions: Option<&Path>, out: &Path) -> Result<()> {
    let gold = mentions(&read_corpus(corpus)?);
    let kb = load_kb_args(kb)?.ok_or_else(|| UsageError("popularity needs --entities".into()))?;
    let links: Vec<Link> = gold.iter().map(|m| m.gold_link).collect();
    let bins = popularity_histogram(&kb, &links);
    write_file(&out.join("popularity_histogram.csv"), histogram_csv(&bins))?;
    let mut report = json!({ "bins": bins });
    if let Some(p) = predictions {
        let preds = read_predictions(p)?;
        report["spearman"] = serde_json::to_value(popularity_correlation(&preds, &gold, &kb)?)?;
        report["more_popular_chosen"] =
            json!(chronolink::evalrep::popularity_preference(&preds, &gold, &kb)?);
    }
    write_file(&out.join("popularity.json"), pretty(&report)?)?;
    print!("{}", histogram_csv(&bins));
    Ok(())
}

fn dev_run(args: &LinkArgs, dev_corpus: &Path, dev_embeddings: &Path) -> Result<(Loaded, RunConfig)> {
    let mut cfg = args.resolve()?;
    cfg.corpus = Some(dev_corpus.to_path_buf());
    cfg.mention_embeddings = Some(dev_embeddings.to_path_buf());
    // the rule under construction must not act while collecting cases
    cfg.nil = "none".into();
    cfg.nil_rule = None;
    Ok((load_run(&cfg)?, cfg))
}

fn cmd_sweep(args: &LinkArgs, dev_corpus: &Path, dev_embeddings: &Path, kind: &str, out: Option<&Path>) -> Result<()> {
    let kinds: Vec<NilKind> = if kind == "all" {
        NilKind::THRESHOLD_KINDS.to_vec()
    } else {
        vec![kind.parse()?]
    };
    let (loaded, _) = dev_run(args, dev_corpus, dev_embeddings)?;
    let cases = dev_cases(&loaded.inputs(), &loaded.settings)?;
    let mut best: Option<chronolink::nilpred::SweepResult> = None;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "heuristic     tau     F1")?;
    for k in kinds {
        let r = sweep_tau(k, &cases)?;
        writeln!(stdout, "{:<12}  {:.3}  {:.4}", k, r.tau, r.f1)?;
        if best.as_ref().map_or(true, |b| r.f1 > b.f1) {
            best = Some(r);
        }
    }
    if let (Some(path), Some(b)) = (out, best) {
        write_file(path, NilRule::threshold(b.kind, b.tau)?.to_json() + "\n")?;
    }
    Ok(())
}

fn cmd_train_nil(args: &LinkArgs, dev_corpus: &Path, dev_embeddings: &Path, epochs: usize, lr: f64, out: &Path) -> Result<()> {
    let (loaded, _) = dev_run(args, dev_corpus, dev_embeddings)?;
    let cases = dev_cases(&loaded.inputs(), &loaded.settings)?;
    let inputs: Vec<_> = cases
        .iter()
        .map(|c| chronolink::nilpred::NilInput {
            scores: &c.scores,
            surface: &c.surface,
            label: c.label.as_deref(),
        })
        .collect();
    let labels: Vec<bool> = cases.iter().map(|c| c.gold.is_nil()).collect();
    let rule = logistic_train(&inputs, &labels, epochs, lr)?;
    let correct = inputs
        .iter()
        .zip(&labels)
        .filter(|(i, &y)| rule.predict(i) == y)
        .count();
    write_file(out, rule.to_json() + "\n")?;
    println!(
        "trained on {} mentions, training accuracy {:.4} -> {}",
        cases.len(),
        correct as f64 / cases.len().max(1) as f64,
        out.display()
    );
    Ok(())
}
