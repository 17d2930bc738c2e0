//! Entity-linking game and its replicator dynamics.
//!
//! Every mention in a sentence is a player whose pure strategies are its
//! surviving candidate entities (plus, optionally, a reserved NIL strategy).
//! Content words found in a sense inventory join as context players whose
//! strategies are their senses. Players influence each other through the
//! adjacency matrix `A`, built from the similarity of their embeddings, and
//! strategies reward each other through the global payoff matrix `Z`, built
//! from the similarity of entity and sense embeddings.
//!
//! The payoff of strategy `h` for player `i` is
//!
//! ```text
//! u_h = x_i[h] * sum_j A[i][j] * (Z x_j)[h]
//! ```
//!
//! and one synchronous step replaces every `x_i[h]` by `u_h / sum_k u_k`.
//! Similarities enter `A` and `Z` as `(1 + cos) / 2`, so every payoff is
//! non-negative and each `x_i` stays on its simplex.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::ids::{Link, Qid};
use crate::kbstore::{fold_alias, Kb};
use crate::retrieval::{rank_order, CandidateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayerKind {
    Mention,
    Context,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StrategyKind {
    Entity { qid: Qid, embedding_id: usize },
    Sense { sense_id: String, embedding_id: usize },
    Nil,
}

impl StrategyKind {
    pub fn link(&self) -> Option<Link> {
        match self {
            StrategyKind::Entity { qid, .. } => Some(Link::Entity(*qid)),
            StrategyKind::Nil => Some(Link::Nil),
            StrategyKind::Sense { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Player {
    pub kind: PlayerKind,
    /// Global strategy ids (rows of `Z`).
    pub strategies: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Uniform,
    Prior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub init: Init,
    /// Offer a reserved NIL strategy to every mention.
    pub nil_strategy: bool,
    /// Constant payoff of the NIL strategy against every strategy.
    pub nil_kappa: f64,
    /// Shifted similarities below this are dropped from `A`.
    pub adjacency_threshold: f64,
    /// Softmax temperature of the prior initialization.
    pub prior_temperature: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            tol: 1e-6,
            max_iter: 1000,
            init: Init::Uniform,
            nil_strategy: false,
            nil_kappa: 0.5,
            adjacency_threshold: 0.25,
            prior_temperature: 1.0,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config("dynamics tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("dynamics max_iter must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.nil_kappa) {
            return Err(Error::Config("nil_kappa must lie in [0, 1]".into()));
        }
        if !(self.prior_temperature > 0.0) {
            return Err(Error::Config("prior_temperature must be positive".into()));
        }
        Ok(())
    }
}

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    pub players: Vec<Player>,
    pub strategies: Vec<StrategyKind>,
    /// Mixed strategy of each player over its own strategy list.
    pub x: Vec<Vec<f64>>,
    /// Player adjacency, `n x n`.
    pub a: Vec<Vec<f64>>,
    /// Strategy payoffs, `M x M` over `strategies`.
    pub z: Vec<Vec<f64>>,
    pub nil_strategy: Option<usize>,
}

fn square_check(name: &str, m: &[Vec<f64>], size: usize) -> Result<()> {
    if m.len() != size || m.iter().any(|r| r.len() != size) {
        return Err(Error::Game(format!("{name} must be {size}x{size}")));
    }
    for i in 0..size {
        for j in 0..size {
            let v = m[i][j];
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Game(format!("{name}[{i}][{j}] = {v} outside [0, 1]")));
            }
            if v != m[j][i] {
                return Err(Error::Game(format!("{name} is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

impl Game {
    /// Checks every structural invariant before returning the game.
    pub fn new(
        players: Vec<Player>,
        strategies: Vec<StrategyKind>,
        x: Vec<Vec<f64>>,
        a: Vec<Vec<f64>>,
        z: Vec<Vec<f64>>,
        nil_strategy: Option<usize>,
    ) -> Result<Self> {
        let n = players.len();
        let m = strategies.len();
        if x.len() != n {
            return Err(Error::Game("one mixed strategy per player required".into()));
        }
        for (i, (p, xi)) in players.iter().zip(&x).enumerate() {
            if p.strategies.is_empty() {
                return Err(Error::Game(format!("player {i} has no strategies")));
            }
            if p.strategies.iter().any(|&s| s >= m) {
                return Err(Error::Game(format!("player {i} references an unknown strategy")));
            }
            if xi.len() != p.strategies.len() {
                return Err(Error::Game(format!("player {i}: strategy vector length mismatch")));
            }
            if !on_simplex(xi) {
                return Err(Error::Game(format!("player {i}: mixed strategy not on the simplex")));
            }
        }
        square_check("A", &a, n)?;
        if a.iter().enumerate().any(|(i, r)| r[i] != 0.0) {
            return Err(Error::Game("A must have a zero diagonal".into()));
        }
        square_check("Z", &z, m)?;
        if let Some(nil) = nil_strategy {
            if strategies.get(nil) != Some(&StrategyKind::Nil) {
                return Err(Error::Game("nil_strategy does not point at the NIL strategy".into()));
            }
        }
        Ok(Game {
            players,
            strategies,
            x,
            a,
            z,
            nil_strategy,
        })
    }

    pub fn n_players(&self) -> usize {
        self.players.len()
    }
}

pub fn on_simplex(x: &[f64]) -> bool {
    !x.is_empty()
        && x.iter().all(|&v| v >= 0.0 && v.is_finite())
        && (x.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
}

/// `sum_j A[i][j] * (Z x_j)[h]` for each of player `i`'s strategies: the
/// payoff of `h` before weighting by `x_i[h]`.
pub fn fitness(game: &Game, i: usize) -> Vec<f64> {
    let own = &game.players[i].strategies;
    let mut v = vec![0.0; own.len()];
    for (j, pj) in game.players.iter().enumerate() {
        let aij = game.a[i][j];
        if aij == 0.0 {
            continue;
        }
        let xj = &game.x[j];
        for (slot, &h) in own.iter().enumerate() {
            let zh = &game.z[h];
            let zx: f64 = pj.strategies.iter().zip(xj).map(|(&s, &p)| zh[s] * p).sum();
            v[slot] += aij * zx;
        }
    }
    v
}

/// Payoff vector of player `i` over its strategies.
pub fn payoff(game: &Game, i: usize) -> Vec<f64> {
    fitness(game, i)
        .into_iter()
        .zip(&game.x[i])
        .map(|(f, &p)| p * f)
        .collect()
}

/// One synchronous replicator update of every player. Returns the largest
/// absolute change of any strategy probability.
pub fn replicator_step(game: &mut Game) -> f64 {
    let updates: Vec<Option<Vec<f64>>> = (0..game.n_players())
        .map(|i| {
            let f = fitness(game, i);
            if f.iter().all(|&v| v == f[0]) {
                // uniform fitness: x is already a fixed point
                return None;
            }
            let u: Vec<f64> = f.iter().zip(&game.x[i]).map(|(v, p)| v * p).collect();
            let total: f64 = u.iter().sum();
            if !(total > 0.0) || !total.is_finite() {
                return None;
            }
            Some(u.into_iter().map(|v| v / total).collect())
        })
        .collect();

    let mut delta: f64 = 0.0;
    for (xi, next) in game.x.iter_mut().zip(updates) {
        if let Some(next) = next {
            for (old, new) in xi.iter_mut().zip(next) {
                delta = delta.max((new - *old).abs());
                *old = new;
            }
        }
    }
    delta
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsOutcome {
    pub iterations: usize,
    pub converged: bool,
    /// Max delta of each iteration.
    pub trace: Vec<f64>,
}

impl DynamicsOutcome {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,max_delta\n");
        for (i, d) in self.trace.iter().enumerate() {
            let _ = writeln!(s, "{},{:e}", i + 1, d);
        }
        s
    }
}

/// Iterates until the largest change falls below `tol` or `max_iter` steps ran.
pub fn run_dynamics(game: &mut Game, config: &DynamicsConfig) -> DynamicsOutcome {
    let mut trace = Vec::new();
    for it in 1..=config.max_iter {
        let delta = replicator_step(game);
        trace.push(delta);
        if delta < config.tol {
            return DynamicsOutcome {
                iterations: it,
                converged: true,
                trace,
            };
        }
    }
    DynamicsOutcome {
        iterations: config.max_iter,
        converged: false,
        trace,
    }
}

/// Final link for a mention and the weight that decided it (a probability
/// for dynamic selection, a retrieval score for static selection).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkDecision {
    pub link: Link,
    pub weight: f64,
}

/// Strategy with the highest probability; ties go to the smaller QID and
/// NIL loses every tie.
pub fn select_link(game: &Game, player: usize) -> Result<LinkDecision> {
    let p = &game.players[player];
    if p.kind != PlayerKind::Mention {
        return Err(Error::Game(format!("player {player} is not a mention")));
    }
    let mut best: Option<LinkDecision> = None;
    for (&s, &prob) in p.strategies.iter().zip(&game.x[player]) {
        let link = game.strategies[s]
            .link()
            .ok_or_else(|| Error::Game("mention holds a sense strategy".into()))?;
        let better = match &best {
            None => true,
            Some(b) => prob > b.weight || (prob == b.weight && link.tie_order(&b.link).is_lt()),
        };
        if better {
            best = Some(LinkDecision { link, weight: prob });
        }
    }
    best.ok_or_else(|| Error::Game(format!("player {player} has no strategies")))
}

/// Most similar surviving candidate without running the dynamics. With no
/// survivors the mention goes to NIL when allowed.
pub fn select_link_static(cs: &CandidateSet, nil_enabled: bool) -> Result<LinkDecision> {
    match cs.survivors().min_by(|a, b| rank_order(a, b)) {
        Some(c) => Ok(LinkDecision {
            link: Link::Entity(c.qid),
            weight: c.score,
        }),
        None if nil_enabled => Ok(LinkDecision {
            link: Link::Nil,
            weight: 0.0,
        }),
        None => Err(Error::Game(format!(
            "mention {} has no surviving candidate and NIL is disabled",
            cs.mention.id()
        ))),
    }
}

// ---------------------------------------------------------------------------
// Game construction

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sense {
    pub sense_id: String,
    pub embedding_id: usize,
}

/// Lemma -> senses; sense embeddings live in the KB embedding index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SenseInventory {
    by_lemma: HashMap<String, Vec<Sense>>,
}

#[derive(Deserialize)]
struct SenseLine {
    lemma: String,
    sense_id: String,
    embedding_id: usize,
}

impl SenseInventory {
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut by_lemma: HashMap<String, Vec<Sense>> = HashMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let s: SenseLine = serde_json::from_str(line)
                .map_err(|e| Error::json(format!("sense inventory line {}", i + 1), e))?;
            let senses = by_lemma.entry(fold_alias(&s.lemma)).or_default();
            if !senses.iter().any(|x| x.sense_id == s.sense_id) {
                senses.push(Sense {
                    sense_id: s.sense_id,
                    embedding_id: s.embedding_id,
                });
            }
        }
        Ok(SenseInventory { by_lemma })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SenseInventory::from_jsonl(&text)
    }

    /// Checks every sense embedding against the KB index.
    pub fn validate(&self, kb: &Kb) -> Result<()> {
        let rows = kb.embeddings().len();
        for (lemma, senses) in &self.by_lemma {
            if let Some(s) = senses.iter().find(|s| s.embedding_id >= rows) {
                return Err(Error::Kb(format!(
                    "sense {} of `{lemma}` references embedding {}, index has {rows} rows",
                    s.sense_id, s.embedding_id
                )));
            }
        }
        Ok(())
    }

    pub fn senses(&self, lemma: &str) -> &[Sense] {
        self.by_lemma
            .get(&fold_alias(lemma))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Context players of a sentence: tokens outside every mention span whose
    /// surface has senses.
    pub fn context_tokens(&self, sentence: &Sentence) -> Vec<ContextToken> {
        let spans = sentence.mention_spans();
        sentence
            .tokens
            .iter()
            .enumerate()
            .filter(|(i, _)| !spans.iter().any(|&(s, e)| (s..e).contains(i)))
            .filter_map(|(_, t)| {
                let senses = self.senses(&t.surface);
                (!senses.is_empty()).then(|| ContextToken {
                    lemma: t.surface.clone(),
                    senses: senses.to_vec(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextToken {
    pub lemma: String,
    pub senses: Vec<Sense>,
}

/// A mention entering the game: its constrained candidates and its context
/// embedding.
#[derive(Debug, Clone, Copy)]
pub struct MentionInput<'a> {
    pub candidates: &'a CandidateSet,
    pub embedding: &'a [f32],
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
    }
}

/// `(1 + cos) / 2`, in `[0, 1]`.
pub fn shifted_similarity(a: &[f32], b: &[f32]) -> f64 {
    (1.0 + cosine(a, b)) / 2.0
}

fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn mean_vector(rows: &[&[f32]]) -> Vec<f32> {
    let dim = rows.first().map_or(0, |r| r.len());
    let mut out = vec![0.0f32; dim];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r.iter()) {
            *o += v;
        }
    }
    let n = rows.len().max(1) as f32;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Builds the game of one sentence. Players `0..mentions.len()` are the
/// mentions, in input order; context players follow.
pub fn build_game(
    mentions: &[MentionInput<'_>],
    context: &[ContextToken],
    kb: &Kb,
    config: &DynamicsConfig,
) -> Result<Game> {
    let index = kb.embeddings();
    let mut strategies: Vec<StrategyKind> = Vec::new();
    let mut strategy_vecs: Vec<Option<&[f32]>> = Vec::new();
    let mut entity_ids: HashMap<Qid, usize> = HashMap::new();
    let mut sense_ids: HashMap<String, usize> = HashMap::new();
    let mut nil_id = None;

    let mut players = Vec::new();
    let mut x = Vec::new();
    let mut player_vecs: Vec<Vec<f32>> = Vec::new();

    for m in mentions {
        let cs = m.candidates;
        let mut own = Vec::new();
        let mut logits = Vec::new();
        for c in cs.survivors() {
            let id = match entity_ids.get(&c.qid) {
                Some(&id) => id,
                None => {
                    let emb = kb.get(c.qid).and_then(|e| e.embedding_id).ok_or_else(|| {
                        Error::Game(format!("candidate {} has no embedding", c.qid))
                    })?;
                    strategies.push(StrategyKind::Entity {
                        qid: c.qid,
                        embedding_id: emb,
                    });
                    strategy_vecs.push(Some(index.row(emb)?));
                    entity_ids.insert(c.qid, strategies.len() - 1);
                    strategies.len() - 1
                }
            };
            own.push(id);
            logits.push(c.score);
        }
        if config.nil_strategy {
            let id = *nil_id.get_or_insert_with(|| {
                strategies.push(StrategyKind::Nil);
                strategy_vecs.push(None);
                strategies.len() - 1
            });
            own.push(id);
            let weakest = logits.iter().cloned().fold(f64::INFINITY, f64::min);
            logits.push(if weakest.is_finite() { weakest } else { 0.0 });
        }
        if own.is_empty() {
            return Err(Error::Game(format!(
                "mention {} has no strategies and the NIL strategy is disabled",
                cs.mention.id()
            )));
        }
        let xi = match config.init {
            Init::Uniform => vec![1.0 / own.len() as f64; own.len()],
            Init::Prior => softmax(&logits, config.prior_temperature),
        };
        players.push(Player {
            kind: PlayerKind::Mention,
            strategies: own,
        });
        x.push(xi);
        player_vecs.push(m.embedding.to_vec());
    }

    for tok in context {
        let mut own = Vec::new();
        let mut rows = Vec::new();
        for s in &tok.senses {
            let row = index.row(s.embedding_id)?;
            rows.push(row);
            let id = *sense_ids.entry(s.sense_id.clone()).or_insert_with(|| {
                strategies.push(StrategyKind::Sense {
                    sense_id: s.sense_id.clone(),
                    embedding_id: s.embedding_id,
                });
                strategy_vecs.push(Some(row));
                strategies.len() - 1
            });
            if !own.contains(&id) {
                own.push(id);
            }
        }
        if own.is_empty() {
            continue;
        }
        x.push(vec![1.0 / own.len() as f64; own.len()]);
        players.push(Player {
            kind: PlayerKind::Context,
            strategies: own,
        });
        player_vecs.push(mean_vector(&rows));
    }

    let n = players.len();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let w = shifted_similarity(&player_vecs[i], &player_vecs[j]);
            let w = if w < config.adjacency_threshold { 0.0 } else { w };
            a[i][j] = w;
            a[j][i] = w;
        }
    }

    let m = strategies.len();
    let mut z = vec![vec![0.0; m]; m];
    for h in 0..m {
        for s in h..m {
            let v = match (strategy_vecs[h], strategy_vecs[s]) {
                (Some(p), Some(q)) => shifted_similarity(p, q),
                _ => config.nil_kappa,
            };
            z[h][s] = v;
            z[s][h] = v;
        }
    }

    Game::new(players, strategies, x, a, z, nil_id)
}
