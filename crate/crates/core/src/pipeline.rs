//! End-to-end linking: retrieve, filter, disambiguate, decide NIL.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, MentionAnnotation};
use crate::dynamics::{
    build_game, run_dynamics, select_link, select_link_static, DynamicsConfig, DynamicsOutcome,
    LinkDecision, MentionInput, SenseInventory,
};
use crate::error::{Error, Result};
use crate::ids::Link;
use crate::kbstore::{fold_alias, EmbeddingIndex, Kb, NormMode};
use crate::nilpred::{DevCase, NilInput, NilKind, NilRule, ScoreVector};
use crate::retrieval::{apply_constraints, retrieve, CandidateDump, CandidateSet, Constraints};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkerKind {
    Eld,
    EldStatic,
}

impl FromStr for LinkerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "eld" => Ok(LinkerKind::Eld),
            "eld_static" => Ok(LinkerKind::EldStatic),
            _ => Err(Error::Config(format!("unknown linker `{s}` (expected eld or eld-static)"))),
        }
    }
}

impl fmt::Display for LinkerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkerKind::Eld => "eld",
            LinkerKind::EldStatic => "eld-static",
        })
    }
}

/// When a linked mention is turned into NIL.
#[derive(Debug, Clone, PartialEq)]
pub enum NilPolicy {
    /// Only mentions without surviving candidates become NIL.
    None,
    /// Every mention is NIL.
    Always,
    Rule(NilRule),
}

impl NilPolicy {
    /// Parses `none`, `always`, `KIND:TAU`, a bare `KIND` (threshold taken
    /// from a swept `trained` rule of the same kind), or `logistic`.
    pub fn parse(text: &str, trained: Option<&NilRule>) -> Result<Self> {
        let text = text.trim();
        let (kind, tau) = match text.split_once(':') {
            Some((k, t)) => (k, Some(t)),
            None => (text, None),
        };
        match kind.to_ascii_lowercase().as_str() {
            "none" | "" if tau.is_none() => return Ok(NilPolicy::None),
            "always" if tau.is_none() => return Ok(NilPolicy::Always),
            _ => {}
        }
        let kind: NilKind = kind.parse()?;
        if kind == NilKind::Logistic {
            if tau.is_some() {
                return Err(Error::Config("the logistic NIL rule takes no threshold".into()));
            }
            return match trained {
                Some(rule) if rule.kind == NilKind::Logistic => Ok(NilPolicy::Rule(rule.clone())),
                _ => Err(Error::Config("--nil logistic needs a trained rule file (nil_rule)".into())),
            };
        }
        let tau = match (tau, trained) {
            (Some(t), _) => t,
            (None, Some(rule)) if rule.kind == kind => return Ok(NilPolicy::Rule(rule.clone())),
            (None, _) => {
                return Err(Error::Config(format!(
                    "NIL heuristic `{kind}` needs a threshold (e.g. {kind}:0.5) or a swept rule file"
                )))
            }
        };
        let tau: f64 = tau
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("invalid NIL threshold `{tau}`")))?;
        Ok(NilPolicy::Rule(NilRule::threshold(kind, tau)?))
    }

    pub fn describe(&self) -> String {
        match self {
            NilPolicy::None => "none".into(),
            NilPolicy::Always => "always".into(),
            NilPolicy::Rule(r) if r.kind == NilKind::Logistic => "logistic".into(),
            NilPolicy::Rule(r) => format!("{}:{}", r.kind, r.tau),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSettings {
    pub constraints: Constraints,
    pub linker: LinkerKind,
    pub nil: NilPolicy,
    pub k: usize,
    pub dynamics: DynamicsConfig,
    pub jobs: Option<usize>,
}

impl Default for LinkSettings {
    fn default() -> Self {
        LinkSettings {
            constraints: Constraints::ALL,
            linker: LinkerKind::Eld,
            nil: NilPolicy::None,
            k: 10,
            dynamics: DynamicsConfig::default(),
            jobs: None,
        }
    }
}

/// Borrowed resources of one linking run.
#[derive(Debug, Clone, Copy)]
pub struct LinkInputs<'a> {
    pub docs: &'a [Document],
    pub kb: Option<&'a Kb>,
    /// One row per mention, in corpus order.
    pub mention_embeddings: Option<&'a EmbeddingIndex>,
    pub senses: Option<&'a SenseInventory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mention_id: String,
    pub predicted: Link,
    /// Probability (dynamic linker) or retrieval score (static linker) of
    /// the chosen entity.
    pub score: Option<f64>,
    /// What turned the mention into NIL, if anything did.
    pub heuristic: Option<String>,
    pub filtered_count: usize,
    pub n_candidates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceTrace {
    pub document_id: String,
    pub sentence_index: usize,
    pub outcome: DynamicsOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkOutput {
    pub predictions: Vec<Prediction>,
    pub candidates: Vec<CandidateDump>,
    pub traces: Vec<SentenceTrace>,
    /// How candidate scores were mapped to `[0, 1]` before NIL rules.
    pub score_normalization: &'static str,
}

impl LinkOutput {
    pub fn traces_csv(&self) -> String {
        let mut s = String::from("document_id,sentence_index,iteration,max_delta\n");
        for t in &self.traces {
            for (i, d) in t.outcome.trace.iter().enumerate() {
                s.push_str(&format!("{},{},{},{:e}\n", t.document_id, t.sentence_index, i + 1, d));
            }
        }
        s
    }
}

pub fn score_normalization(kb: Option<&Kb>) -> &'static str {
    match kb.map(|k| k.embeddings().norm_mode()) {
        Some(NormMode::Unit) => "shifted_cosine",
        Some(NormMode::Raw) => "min_max",
        None => "none",
    }
}

/// Survivor scores mapped to `[0, 1]`: `(1 + s) / 2` for a unit index,
/// min-max otherwise (a lone survivor maps to 1).
pub fn normalized_scores(cs: &CandidateSet, mode: NormMode) -> ScoreVector {
    let raw = cs.survivor_scores();
    let scores = match mode {
        NormMode::Unit => raw.iter().map(|s| ((1.0 + s) / 2.0).clamp(0.0, 1.0)).collect(),
        NormMode::Raw => {
            let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                raw.iter().map(|s| (s - lo) / (hi - lo)).collect()
            } else {
                vec![1.0; raw.len()]
            }
        }
    };
    ScoreVector::new(scores).expect("candidate scores are finite")
}

/// What NIL rules see for one mention after disambiguation.
#[derive(Debug, Clone, PartialEq)]
pub struct NilView {
    pub scores: ScoreVector,
    pub surface: String,
    pub label: Option<String>,
}

impl NilView {
    pub fn input(&self) -> NilInput<'_> {
        NilInput {
            scores: &self.scores,
            surface: &self.surface,
            label: self.label.as_deref(),
        }
    }
}

fn nil_view(cs: &CandidateSet, decision: &LinkDecision, kb: &Kb) -> NilView {
    let label = decision
        .link
        .qid()
        .and_then(|q| kb.get(q))
        .map(|e| fold_alias(&e.label));
    NilView {
        scores: normalized_scores(cs, kb.embeddings().norm_mode()),
        surface: fold_alias(&cs.mention.surface),
        label,
    }
}

struct Linked {
    cs: CandidateSet,
    decision: LinkDecision,
    no_candidates: bool,
}

struct SentenceJob<'a> {
    document_id: &'a str,
    sentence_index: usize,
    /// Global mention indices.
    mentions: Vec<usize>,
}

fn sentence_jobs<'a>(docs: &'a [Document], mentions: &[MentionAnnotation]) -> Vec<SentenceJob<'a>> {
    let mut jobs: Vec<SentenceJob<'a>> = Vec::new();
    let mut doc_iter = docs.iter();
    let mut current: Option<&Document> = None;
    for (i, m) in mentions.iter().enumerate() {
        let same = jobs
            .last()
            .map_or(false, |j| j.document_id == m.document_id && j.sentence_index == m.sentence_index);
        if same {
            jobs.last_mut().unwrap().mentions.push(i);
            continue;
        }
        while current.map_or(true, |d| d.document_id != m.document_id) {
            current = doc_iter.next();
        }
        jobs.push(SentenceJob {
            document_id: &current.unwrap().document_id,
            sentence_index: m.sentence_index,
            mentions: vec![i],
        });
    }
    jobs
}

fn link_sentence(
    job: &SentenceJob<'_>,
    docs_by_id: &BTreeMap<&str, &Document>,
    mentions: &[MentionAnnotation],
    inputs: &LinkInputs<'_>,
    kb: &Kb,
    query: &EmbeddingIndex,
    settings: &LinkSettings,
) -> Result<(Vec<Linked>, Option<SentenceTrace>)> {
    let mut sets = Vec::with_capacity(job.mentions.len());
    for &i in &job.mentions {
        let m = &mentions[i];
        let cs = retrieve(m, query.row(i)?, kb, settings.k)?;
        sets.push(apply_constraints(&cs, settings.constraints, kb, m.document_date));
    }

    let nil_strategy = settings.dynamics.nil_strategy;
    let mut decisions: Vec<Option<LinkDecision>> = vec![None; sets.len()];
    let mut trace = None;
    match settings.linker {
        LinkerKind::EldStatic => {
            for (d, cs) in decisions.iter_mut().zip(&sets) {
                *d = Some(select_link_static(cs, true)?);
            }
        }
        LinkerKind::Eld => {
            let players: Vec<usize> = (0..sets.len())
                .filter(|&s| nil_strategy || sets[s].survivors().next().is_some())
                .collect();
            if !players.is_empty() {
                let game_inputs: Vec<MentionInput<'_>> = players
                    .iter()
                    .map(|&s| {
                        Ok(MentionInput {
                            candidates: &sets[s],
                            embedding: query.row(job.mentions[s])?,
                        })
                    })
                    .collect::<Result<_>>()?;
                let context = match inputs.senses {
                    Some(inv) => inv.context_tokens(&docs_by_id[job.document_id].sentences[job.sentence_index]),
                    None => Vec::new(),
                };
                let mut game = build_game(&game_inputs, &context, kb, &settings.dynamics)?;
                let outcome = run_dynamics(&mut game, &settings.dynamics);
                if !outcome.converged {
                    log::warn!(
                        "dynamics did not converge in {} iterations ({}, sentence {})",
                        outcome.iterations,
                        job.document_id,
                        job.sentence_index
                    );
                }
                for (p, &s) in players.iter().enumerate() {
                    decisions[s] = Some(select_link(&game, p)?);
                }
                trace = Some(SentenceTrace {
                    document_id: job.document_id.to_string(),
                    sentence_index: job.sentence_index,
                    outcome,
                });
            }
        }
    }

    let linked = sets
        .into_iter()
        .zip(decisions)
        .map(|(cs, d)| {
            let no_candidates = cs.survivors().next().is_none();
            let decision = d.unwrap_or(LinkDecision {
                link: Link::Nil,
                weight: 0.0,
            });
            Linked {
                cs,
                decision,
                no_candidates,
            }
        })
        .collect();
    Ok((linked, trace))
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::Config("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::Config(format!("thread pool: {e}"))),
    }
}

fn check_inputs<'a>(inputs: &LinkInputs<'a>, n_mentions: usize) -> Result<(&'a Kb, &'a EmbeddingIndex)> {
    let kb = inputs
        .kb
        .ok_or_else(|| Error::Config("linking needs a knowledge base".into()))?;
    let query = inputs
        .mention_embeddings
        .ok_or_else(|| Error::Config("linking needs mention embeddings".into()))?;
    if query.len() != n_mentions {
        return Err(Error::Embeddings(format!(
            "mention embedding file has {} rows, corpus has {n_mentions} mentions",
            query.len()
        )));
    }
    if n_mentions > 0 && !kb.is_empty() && query.dimension() != kb.embeddings().dimension() {
        return Err(Error::Embeddings(format!(
            "mention embeddings have dimension {}, KB has {}",
            query.dimension(),
            kb.embeddings().dimension()
        )));
    }
    if let Some(inv) = inputs.senses {
        inv.validate(kb)?;
    }
    Ok((kb, query))
}

fn disambiguate(inputs: &LinkInputs<'_>, settings: &LinkSettings) -> Result<(Vec<MentionAnnotation>, Vec<Linked>, Vec<SentenceTrace>)> {
    let mentions = crate::corpus::mentions(inputs.docs);
    let (kb, query) = check_inputs(inputs, mentions.len())?;
    settings.dynamics.validate()?;
    if settings.k == 0 {
        return Err(Error::Config("retrieval depth k must be at least 1".into()));
    }
    let jobs = sentence_jobs(inputs.docs, &mentions);
    let docs_by_id: BTreeMap<&str, &Document> =
        inputs.docs.iter().map(|d| (d.document_id.as_str(), d)).collect();
    let results: Vec<Result<(Vec<Linked>, Option<SentenceTrace>)>> = with_pool(settings.jobs, || {
        jobs.par_iter()
            .map(|job| link_sentence(job, &docs_by_id, &mentions, inputs, kb, query, settings))
            .collect()
    })?;
    let mut linked = Vec::with_capacity(mentions.len());
    let mut traces = Vec::new();
    for r in results {
        let (l, t) = r?;
        linked.extend(l);
        traces.extend(t);
    }
    Ok((mentions, linked, traces))
}

/// Links every mention of the corpus. Output order is corpus order and
/// does not depend on the number of threads.
pub fn link_corpus(inputs: &LinkInputs<'_>, settings: &LinkSettings) -> Result<LinkOutput> {
    if settings.nil == NilPolicy::Always && inputs.kb.is_none() {
        let predictions = crate::corpus::mentions(inputs.docs)
            .iter()
            .map(|m| Prediction {
                mention_id: m.id(),
                predicted: Link::Nil,
                score: None,
                heuristic: Some("always".into()),
                filtered_count: 0,
                n_candidates: 0,
            })
            .collect();
        return Ok(LinkOutput {
            predictions,
            candidates: Vec::new(),
            traces: Vec::new(),
            score_normalization: score_normalization(None),
        });
    }

    let (_, linked, traces) = disambiguate(inputs, settings)?;
    let kb = inputs.kb.expect("checked by disambiguate");
    let nil_in_candidates = settings.linker == LinkerKind::Eld && settings.dynamics.nil_strategy;

    let mut predictions = Vec::with_capacity(linked.len());
    let mut candidates = Vec::with_capacity(linked.len());
    for l in &linked {
        let mut link = l.decision.link;
        let mut heuristic = None;
        if l.no_candidates {
            heuristic = Some("no_candidates".to_string());
        }
        match &settings.nil {
            NilPolicy::Always => {
                link = Link::Nil;
                heuristic = Some("always".into());
            }
            NilPolicy::Rule(rule) if !link.is_nil() => {
                if rule.predict(&nil_view(&l.cs, &l.decision, kb).input()) {
                    link = Link::Nil;
                    heuristic = Some(rule.kind.to_string());
                }
            }
            _ => {}
        }
        predictions.push(Prediction {
            mention_id: l.cs.mention.id(),
            predicted: link,
            score: (!l.no_candidates || !l.decision.link.is_nil()).then_some(l.decision.weight),
            heuristic,
            filtered_count: l.cs.filtered_count(),
            n_candidates: l.cs.candidates.len(),
        });
        candidates.push(CandidateDump::new(&l.cs, nil_in_candidates));
    }
    Ok(LinkOutput {
        predictions,
        candidates,
        traces,
        score_normalization: score_normalization(Some(kb)),
    })
}

/// Development cases for threshold sweeps and classifier training: the
/// linker runs without a NIL rule and every mention keeps its view.
pub fn dev_cases(inputs: &LinkInputs<'_>, settings: &LinkSettings) -> Result<Vec<DevCase>> {
    let (_, linked, _) = disambiguate(inputs, settings)?;
    let kb = inputs.kb.expect("checked by disambiguate");
    Ok(linked
        .iter()
        .map(|l| {
            let view = nil_view(&l.cs, &l.decision, kb);
            DevCase {
                scores: if l.decision.link.is_nil() { ScoreVector::default() } else { view.scores },
                surface: view.surface,
                label: view.label,
                linked: l.decision.link,
                gold: l.cs.mention.gold_link,
            }
        })
        .collect())
}

/// Serialized run configuration. Paths are resolved by the caller; every
/// string field is validated by [`RunConfig::settings`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub entities: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub mention_embeddings: Option<PathBuf>,
    pub senses: Option<PathBuf>,
    pub nil_rule: Option<PathBuf>,
    pub constraints: String,
    pub linker: String,
    pub nil: String,
    pub k: usize,
    pub dynamics: DynamicsConfig,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            entities: None,
            embeddings: None,
            taxonomy: None,
            mention_embeddings: None,
            senses: None,
            nil_rule: None,
            constraints: "phi_d,phi_t".into(),
            linker: "eld".into(),
            nil: "none".into(),
            k: 10,
            dynamics: DynamicsConfig::default(),
            seed: 0,
            jobs: None,
            out: None,
            trace: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Every problem with the configuration, in field order. File contents
    /// are not read, only existence is checked.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.constraints.parse::<Constraints>() {
            out.push(e.to_string());
        }
        if let Err(e) = self.linker.parse::<LinkerKind>() {
            out.push(e.to_string());
        }
        let nil_lower = self.nil.trim().to_ascii_lowercase();
        let bare_kind = nil_lower.parse::<NilKind>().ok();
        if nil_lower == "logistic" && self.nil_rule.is_none() {
            out.push("nil `logistic` needs `nil_rule`".into());
        } else if bare_kind.is_some() && self.nil_rule.is_some() {
            // the threshold comes from the rule file
        } else if let Err(e) = NilPolicy::parse(&self.nil, None) {
            out.push(e.to_string());
        }
        if self.k == 0 {
            out.push("k must be at least 1".into());
        }
        if self.jobs == Some(0) {
            out.push("jobs must be at least 1".into());
        }
        if let Err(e) = self.dynamics.validate() {
            out.push(e.to_string());
        }
        if self.corpus.is_none() {
            out.push("no corpus given".into());
        }
        let needs_kb = nil_lower != "always" || self.entities.is_some();
        if needs_kb {
            for (name, p) in [
                ("entities", &self.entities),
                ("embeddings", &self.embeddings),
                ("mention_embeddings", &self.mention_embeddings),
            ] {
                if p.is_none() {
                    out.push(format!("no {name} file given"));
                }
            }
        }
        for (name, p) in [
            ("corpus", &self.corpus),
            ("entities", &self.entities),
            ("embeddings", &self.embeddings),
            ("taxonomy", &self.taxonomy),
            ("mention_embeddings", &self.mention_embeddings),
            ("senses", &self.senses),
            ("nil_rule", &self.nil_rule),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    out.push(format!("{name} file {} does not exist", p.display()));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn settings(&self, trained: Option<&NilRule>) -> Result<LinkSettings> {
        Ok(LinkSettings {
            constraints: self.constraints.parse()?,
            linker: self.linker.parse()?,
            nil: NilPolicy::parse(&self.nil, trained)?,
            k: self.k,
            dynamics: self.dynamics,
            jobs: self.jobs,
        })
    }
}
