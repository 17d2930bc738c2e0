//! Candidate generation and plausibility filtering.
//!
//! Candidates come from an exhaustive inner-product scan of the entity
//! embeddings, merged with entities whose label or alias matches the mention
//! surface. Implausible candidates are not deleted: they are marked with the
//! first constraint they fail and moved behind the survivors, so later error
//! analysis can still ask whether the gold entity was retrieved at all.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::MentionAnnotation;
use crate::error::{Error, Result};
use crate::ids::Qid;
use crate::kbstore::{Kb, TypeTaxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Constraint {
    /// Entity date must not be later than the document date.
    #[serde(rename = "phi_d")]
    Time,
    /// Entity NER classes must be compatible with the mention type.
    #[serde(rename = "phi_t")]
    Type,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Constraint::Time => "phi_d",
            Constraint::Type => "phi_t",
        })
    }
}

/// Enabled plausibility constraints. Evaluation order is always time, then type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Constraints {
    pub time: bool,
    pub types: bool,
}

impl Constraints {
    pub const NONE: Constraints = Constraints {
        time: false,
        types: false,
    };
    pub const ALL: Constraints = Constraints {
        time: true,
        types: true,
    };

    pub fn enabled(&self) -> impl Iterator<Item = Constraint> {
        [
            self.time.then_some(Constraint::Time),
            self.types.then_some(Constraint::Type),
        ]
        .into_iter()
        .flatten()
    }

    pub fn is_subset_of(&self, other: &Constraints) -> bool {
        (!self.time || other.time) && (!self.types || other.types)
    }
}

impl FromStr for Constraints {
    type Err = Error;

    /// Comma-separated `phi_d`, `phi_t`; empty or `none` disables both.
    fn from_str(s: &str) -> Result<Self> {
        let mut c = Constraints::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "phi_d" => c.time = true,
                "phi_t" => c.types = true,
                "none" => {}
                other => return Err(Error::Config(format!("unknown constraint `{other}`"))),
            }
        }
        Ok(c)
    }
}

impl fmt::Display for Constraints {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.enabled().map(|c| c.to_string()).collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub qid: Qid,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filtered_by: Option<Constraint>,
}

impl Candidate {
    pub fn survives(&self) -> bool {
        self.filtered_by.is_none()
    }
}

/// Score descending, ties by ascending QID.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score.total_cmp(&a.score).then(a.qid.cmp(&b.qid))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub mention: MentionAnnotation,
    /// Survivors first, each group ordered by [`rank_order`].
    pub candidates: Vec<Candidate>,
    pub k: usize,
}

impl CandidateSet {
    pub fn survivors(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter().filter(|c| c.survives())
    }

    /// Survivor scores, descending.
    pub fn survivor_scores(&self) -> Vec<f64> {
        self.survivors().map(|c| c.score).collect()
    }

    pub fn filtered_count(&self) -> usize {
        self.candidates.iter().filter(|c| !c.survives()).count()
    }

    /// Whether `qid` was retrieved, filtered or not.
    pub fn contains(&self, qid: Qid) -> bool {
        self.candidates.iter().any(|c| c.qid == qid)
    }

    fn sort(&mut self) {
        self.candidates
            .sort_by(|a, b| b.survives().cmp(&a.survives()).then_with(|| rank_order(a, b)));
    }
}

/// Top-`k` candidates for a mention.
///
/// Alias matches are admitted first (at their dense score), the remaining
/// slots are filled from the dense ranking, and the union is sorted.
pub fn retrieve(
    mention: &MentionAnnotation,
    context_embedding: &[f32],
    kb: &Kb,
    k: usize,
) -> Result<CandidateSet> {
    if k == 0 {
        return Err(Error::Config("retrieval depth k must be at least 1".into()));
    }
    let index = kb.embeddings();
    if !kb.is_empty() && context_embedding.len() != index.dimension() {
        return Err(Error::Embeddings(format!(
            "context embedding has dimension {}, KB index has {}",
            context_embedding.len(),
            index.dimension()
        )));
    }

    let score_of = |i: usize| -> Result<Option<Candidate>> {
        let e = &kb.entities()[i];
        match e.embedding_id {
            Some(id) => Ok(Some(Candidate {
                qid: e.qid,
                score: index.score(context_embedding, id)?,
                filtered_by: None,
            })),
            None => Ok(None),
        }
    };

    let mut alias: Vec<Candidate> = Vec::new();
    for &i in kb.alias_indices(&mention.surface) {
        if let Some(c) = score_of(i)? {
            alias.push(c);
        }
    }
    alias.sort_by(rank_order);
    alias.truncate(k);

    let taken: HashSet<Qid> = alias.iter().map(|c| c.qid).collect();
    let mut dense: Vec<Candidate> = Vec::with_capacity(kb.len());
    for i in 0..kb.len() {
        if let Some(c) = score_of(i)? {
            if !taken.contains(&c.qid) {
                dense.push(c);
            }
        }
    }
    let room = k - alias.len();
    if dense.len() > room && room > 0 {
        dense.select_nth_unstable_by(room - 1, rank_order);
    }
    dense.truncate(room);

    let mut set = CandidateSet {
        mention: mention.clone(),
        candidates: alias.into_iter().chain(dense).collect(),
        k,
    };
    set.sort();
    Ok(set)
}

/// Time plausibility: an undated entity is plausible; otherwise its year must
/// not be later than the document year.
pub fn phi_d(document_year: i32, entity_year: Option<i32>) -> bool {
    entity_year.map_or(true, |y| y <= document_year)
}

/// Type plausibility: an entity without mapped types is plausible; otherwise
/// its types must be compatible with the mention type.
pub fn phi_t(mention_ner_type: &str, entity_ner_types: &BTreeSet<String>, tax: &TypeTaxonomy) -> bool {
    if entity_ner_types.is_empty() {
        return true;
    }
    let mention: BTreeSet<String> = std::iter::once(mention_ner_type.to_string()).collect();
    tax.types_compatible(&mention, entity_ner_types)
}

/// First enabled constraint a candidate fails, if any.
pub fn first_failure(
    qid: Qid,
    mention_ner_type: &str,
    document_year: i32,
    constraints: Constraints,
    kb: &Kb,
) -> Option<Constraint> {
    constraints.enabled().find(|c| match c {
        Constraint::Time => !phi_d(document_year, kb.year(qid)),
        Constraint::Type => match kb.get(qid) {
            Some(e) => !phi_t(mention_ner_type, &e.ner_types, kb.taxonomy()),
            None => false,
        },
    })
}

/// Marks candidates that fail an enabled constraint. Candidates already
/// marked keep their label; scores are never touched.
pub fn apply_constraints(
    cs: &CandidateSet,
    constraints: Constraints,
    kb: &Kb,
    document_year: i32,
) -> CandidateSet {
    let mut out = cs.clone();
    for c in out.candidates.iter_mut().filter(|c| c.survives()) {
        c.filtered_by = first_failure(c.qid, &cs.mention.ner_type, document_year, constraints, kb);
    }
    out.sort();
    out
}

/// One line of the candidate dump written by the linker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDump {
    pub mention_id: String,
    pub surface: String,
    pub ner_type: String,
    pub document_date: i32,
    pub k: usize,
    /// Whether the reserved NIL strategy was offered alongside the candidates.
    #[serde(default)]
    pub nil_in_candidates: bool,
    pub candidates: Vec<Candidate>,
}

impl CandidateDump {
    pub fn new(cs: &CandidateSet, nil_in_candidates: bool) -> Self {
        CandidateDump {
            mention_id: cs.mention.id(),
            surface: cs.mention.surface.clone(),
            ner_type: cs.mention.ner_type.clone(),
            document_date: cs.mention.document_date,
            k: cs.k,
            nil_in_candidates,
            candidates: cs.candidates.clone(),
        }
    }

    pub fn contains(&self, qid: Qid) -> bool {
        self.candidates.iter().any(|c| c.qid == qid)
    }
}
