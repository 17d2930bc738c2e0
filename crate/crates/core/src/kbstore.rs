//! Local knowledge-base snapshot.
//!
//! Holds entity metadata (labels, aliases, mapped NER classes, dated
//! properties, popularity), resolves an entity's year through the ranked list
//! of time-related Wikidata properties, expands NER types through the type
//! taxonomy, and stores the dense entity embeddings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::ids::Qid;

/// Time-related Wikidata properties in retrieval order: most precise first.
pub const TIME_PROPERTIES: [&str; 15] = [
    "P569",   // date of birth
    "P571",   // inception
    "P1619",  // date of official opening
    "P1191",  // date of first performance
    "P10135", // recording date
    "P577",   // publication date
    "P575",   // time of discovery or invention
    "P1317",  // floruit
    "P7124",  // date of the first one
    "P10673", // debut date
    "P9448",  // introduced on
    "P6949",  // announcement date
    "P729",   // service entry
    "P2031",  // work period (start)
    "P585",   // point in time
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DateValue {
    Year(i64),
    Text(String),
}

impl DateValue {
    /// Year component of an integer year or an ISO / Wikidata timestamp
    /// (`1707`, `1707-05-12`, `+1707-05-12T00:00:00Z`, `-0500`).
    pub fn year(&self) -> Option<i32> {
        match self {
            DateValue::Year(y) => i32::try_from(*y).ok(),
            DateValue::Text(s) => parse_date_year(s),
        }
    }
}

fn parse_date_year(s: &str) -> Option<i32> {
    let s = s.trim();
    let (sign, body) = match s.as_bytes().first()? {
        b'+' => (1, &s[1..]),
        b'-' => (-1, &s[1..]),
        _ => (1, s),
    };
    let end = body.find(|c: char| !c.is_ascii_digit()).unwrap_or(body.len());
    if end == 0 {
        return None;
    }
    let rest = &body[end..];
    if !(rest.is_empty() || rest.starts_with('-') || rest.starts_with('T')) {
        return None;
    }
    body[..end].parse::<i32>().ok().map(|y| sign * y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub qid: Qid,
    pub label: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    /// Raw `P31` values.
    #[serde(default)]
    pub wikidata_types: BTreeSet<String>,
    /// NER classes the `P31` values were mapped to offline.
    #[serde(default)]
    pub ner_types: BTreeSet<String>,
    #[serde(default, rename = "dates")]
    pub date_properties: BTreeMap<String, DateValue>,
    #[serde(default)]
    pub popularity: u64,
    #[serde(default)]
    pub embedding_id: Option<usize>,
}

/// Ranked time properties; the first present property decides an entity's year.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropertyPriority {
    order: Vec<String>,
}

impl Default for PropertyPriority {
    fn default() -> Self {
        PropertyPriority {
            order: TIME_PROPERTIES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl PropertyPriority {
    /// A custom ordering: 15 distinct property ids, `P569` first and `P585` last.
    pub fn new(order: Vec<String>) -> Result<Self> {
        let distinct: BTreeSet<_> = order.iter().collect();
        if order.len() != 15 || distinct.len() != 15 {
            return Err(Error::Config("property priority needs 15 distinct properties".into()));
        }
        if order.first().map(String::as_str) != Some("P569")
            || order.last().map(String::as_str) != Some("P585")
        {
            return Err(Error::Config("property priority must start at P569 and end at P585".into()));
        }
        Ok(PropertyPriority { order })
    }

    /// `(rank, property)` pairs with ranks starting at 1.
    pub fn ranked(&self) -> impl Iterator<Item = (usize, &str)> {
        self.order.iter().enumerate().map(|(i, p)| (i + 1, p.as_str()))
    }

    pub fn contains(&self, property: &str) -> bool {
        self.order.iter().any(|p| p == property)
    }
}

/// Year of the highest-priority dated property, if any.
pub fn resolve_entity_date(record: &EntityRecord, priority: &PropertyPriority) -> Result<Option<i32>> {
    for (_, prop) in priority.ranked() {
        if let Some(value) = record.date_properties.get(prop) {
            return value.year().map(Some).ok_or_else(|| Error::Date {
                property: prop.to_string(),
                value: match value {
                    DateValue::Year(y) => y.to_string(),
                    DateValue::Text(s) => s.clone(),
                },
            });
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Type taxonomy

/// Strips an IOB prefix and lower-cases: `B-Theatre` -> `theatre`.
pub fn canonical_type(t: &str) -> String {
    let t = t.trim();
    let bare = t
        .strip_prefix("B-")
        .or_else(|| t.strip_prefix("I-"))
        .unwrap_or(t);
    bare.to_lowercase()
}

fn iob_prefix(t: &str) -> &str {
    let t = t.trim();
    if t.starts_with("B-") {
        "B-"
    } else if t.starts_with("I-") {
        "I-"
    } else {
        ""
    }
}

/// Parent type -> sub-types. A sub-type may sit under several parents.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypeTaxonomy {
    children: BTreeMap<String, BTreeSet<String>>,
    parents: HashMap<String, BTreeSet<String>>,
}

const BUILTIN_TAXONOMY: &[(&str, &[&str])] = &[
    ("B-event", &["B-concert", "B-festival"]),
    ("B-facility", &["B-street", "B-road", "B-park"]),
    (
        "B-building",
        &[
            "B-theatre", "B-university", "B-worship-place", "B-museum", "B-college", "B-company",
            "B-school", "B-hall",
        ],
    ),
    ("B-language", &[]),
    (
        "B-organization",
        &[
            "B-theatre", "B-university", "B-worship-place", "B-museum", "B-college", "B-company",
            "B-school", "B-empire", "B-government-organization", "B-religious-group", "B-band",
        ],
    ),
    ("B-person", &[]),
    ("B-publication", &["B-book", "B-magazine", "B-newspaper", "B-journal"]),
    ("B-work-of-art", &["B-music", "B-opera", "B-symphony", "B-book", "B-song"]),
    (
        "B-location",
        &[
            "B-park", "B-hall", "B-city", "B-city-district", "B-continent", "B-country", "B-county",
            "B-local-region", "B-mountain", "B-road", "B-square", "B-country-region",
            "B-province", "B-island",
        ],
    ),
];

impl TypeTaxonomy {
    /// Builds from a parent -> children map; rejects cycles.
    pub fn new(map: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut children: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut parents: HashMap<String, BTreeSet<String>> = HashMap::new();
        for (parent, kids) in map {
            let p = canonical_type(&parent);
            let entry = children.entry(p.clone()).or_default();
            for k in kids {
                let c = canonical_type(&k);
                entry.insert(c.clone());
                parents.entry(c).or_default().insert(p.clone());
            }
        }
        let tax = TypeTaxonomy { children, parents };
        tax.check_acyclic()?;
        Ok(tax)
    }

    /// The music-periodical taxonomy shipped with the toolkit.
    pub fn builtin() -> Self {
        let map = BUILTIN_TAXONOMY
            .iter()
            .map(|(p, ks)| (p.to_string(), ks.iter().map(|s| s.to_string()).collect()))
            .collect();
        TypeTaxonomy::new(map).expect("builtin taxonomy is acyclic")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, Vec<String>> =
            serde_json::from_str(text).map_err(|e| Error::json("taxonomy", e))?;
        TypeTaxonomy::new(map)
    }

    /// Parent -> children with `B-` prefixes, as stored on disk.
    pub fn to_json_map(&self) -> BTreeMap<String, Vec<String>> {
        self.children
            .iter()
            .map(|(p, ks)| (format!("B-{p}"), ks.iter().map(|k| format!("B-{k}")).collect()))
            .collect()
    }

    fn check_acyclic(&self) -> Result<()> {
        // 0 = unvisited, 1 = on stack, 2 = done
        fn visit<'a>(
            node: &'a str,
            tax: &'a TypeTaxonomy,
            state: &mut HashMap<&'a str, u8>,
        ) -> Result<()> {
            match state.get(node) {
                Some(1) => return Err(Error::Kb(format!("taxonomy cycle through `{node}`"))),
                Some(2) => return Ok(()),
                _ => {}
            }
            state.insert(node, 1);
            if let Some(kids) = tax.children.get(node) {
                for k in kids {
                    visit(k, tax, state)?;
                }
            }
            state.insert(node, 2);
            Ok(())
        }
        let mut state = HashMap::new();
        for node in self.children.keys() {
            visit(node, self, &mut state)?;
        }
        Ok(())
    }

    /// Canonical ancestors of a canonical type, including itself.
    fn closure(&self, canonical: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![canonical.to_string()];
        while let Some(t) = stack.pop() {
            if out.insert(t.clone()) {
                if let Some(ps) = self.parents.get(&t) {
                    stack.extend(ps.iter().cloned());
                }
            }
        }
        out
    }

    /// `{t}` plus all its ancestors, written with `t`'s IOB prefix.
    pub fn expand_types(&self, t: &str) -> BTreeSet<String> {
        let prefix = iob_prefix(t);
        let canonical = canonical_type(t);
        let mut out: BTreeSet<String> = self
            .closure(&canonical)
            .into_iter()
            .filter(|c| c != &canonical)
            .map(|c| format!("{prefix}{c}"))
            .collect();
        out.insert(t.trim().to_string());
        out
    }

    fn expand_canonical<'a, I: IntoIterator<Item = &'a String>>(&self, types: I) -> BTreeSet<String> {
        types
            .into_iter()
            .flat_map(|t| self.closure(&canonical_type(t)))
            .collect()
    }

    /// Whether the expanded type sets intersect. Both sides are expanded.
    pub fn types_compatible(&self, a: &BTreeSet<String>, b: &BTreeSet<String>) -> bool {
        let ea = self.expand_canonical(a);
        let eb = self.expand_canonical(b);
        !ea.is_disjoint(&eb)
    }
}

// ---------------------------------------------------------------------------
// Embeddings

pub const EMBEDDING_MAGIC: &[u8; 8] = b"HELIXEMB";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    Raw,
    Unit,
}

impl NormMode {
    fn byte(self) -> u8 {
        match self {
            NormMode::Raw => 0,
            NormMode::Unit => 1,
        }
    }
}

/// Dense row-major float32 vectors, one per embedding id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dimension: usize,
    data: Vec<f32>,
    norm_mode: NormMode,
}

fn l2(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

impl EmbeddingIndex {
    /// Builds an index; in `Unit` mode every row is scaled to norm 1.
    pub fn new(dimension: usize, rows: Vec<Vec<f32>>, norm_mode: NormMode) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Embeddings("dimension must be positive".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * dimension);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dimension {
                return Err(Error::Embeddings(format!(
                    "row {i} has length {}, expected {dimension}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        let mut index = EmbeddingIndex {
            dimension,
            data,
            norm_mode,
        };
        if norm_mode == NormMode::Unit {
            index.normalize_rows()?;
        }
        Ok(index)
    }

    fn normalize_rows(&mut self) -> Result<()> {
        let dim = self.dimension;
        for (i, row) in self.data.chunks_mut(dim).enumerate() {
            let n = l2(row);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::Embeddings(format!("row {i} cannot be unit-normalized")));
            }
            for x in row.iter_mut() {
                *x = (f64::from(*x) / n) as f32;
            }
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dimension
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn norm_mode(&self) -> NormMode {
        self.norm_mode
    }

    pub fn row(&self, id: usize) -> Result<&[f32]> {
        if id >= self.len() {
            return Err(Error::Embeddings(format!(
                "embedding id {id} out of range ({} rows)",
                self.len()
            )));
        }
        Ok(&self.data[id * self.dimension..(id + 1) * self.dimension])
    }

    /// Inner product of two stored rows (cosine similarity in `Unit` mode).
    pub fn similarity(&self, a: usize, b: usize) -> Result<f64> {
        Ok(dot(self.row(a)?, self.row(b)?))
    }

    /// Inner product of a query vector with a stored row.
    pub fn score(&self, query: &[f32], id: usize) -> Result<f64> {
        if query.len() != self.dimension {
            return Err(Error::Embeddings(format!(
                "query has dimension {}, index has {}",
                query.len(),
                self.dimension
            )));
        }
        Ok(dot(query, self.row(id)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + self.data.len() * 4);
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        out.push(self.norm_mode.byte());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Embeddings(m.to_string());
        if bytes.len() < 17 || &bytes[..8] != EMBEDDING_MAGIC {
            return Err(bad("missing HELIXEMB header"));
        }
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let dimension = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let norm_mode = match bytes[16] {
            0 => NormMode::Raw,
            1 => NormMode::Unit,
            b => return Err(Error::Embeddings(format!("unknown norm mode {b}"))),
        };
        if dimension == 0 {
            return Err(bad("dimension must be positive"));
        }
        let expected = count
            .checked_mul(dimension)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| bad("header overflows"))?;
        let body = &bytes[17..];
        if body.len() != expected {
            return Err(Error::Embeddings(format!(
                "header declares {count}x{dimension} floats ({expected} bytes) but body has {} bytes",
                body.len()
            )));
        }
        let data: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(bad("non-finite value"));
        }
        let mut index = EmbeddingIndex {
            dimension,
            data,
            norm_mode,
        };
        if norm_mode == NormMode::Unit {
            for (i, row) in index.data.chunks(dimension).enumerate() {
                let n = l2(row);
                if (n - 1.0).abs() > 1e-3 {
                    return Err(Error::Embeddings(format!(
                        "row {i} has norm {n} in a unit-norm file"
                    )));
                }
            }
            index.normalize_rows()?;
        }
        Ok(index)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        EmbeddingIndex::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

// ---------------------------------------------------------------------------
// Knowledge base

/// NFKD-fold, drop combining marks, lower-case and collapse whitespace.
pub fn fold_alias(s: &str) -> String {
    let folded: String = s
        .nfkd()
        .filter(|c| !is_combining_mark(*c))
        .flat_map(char::to_lowercase)
        .collect();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Immutable in-memory KB.
#[derive(Debug, Clone)]
pub struct Kb {
    entities: Vec<EntityRecord>,
    years: Vec<Option<i32>>,
    by_qid: HashMap<Qid, usize>,
    aliases: HashMap<String, Vec<usize>>,
    embeddings: EmbeddingIndex,
    taxonomy: TypeTaxonomy,
    priority: PropertyPriority,
}

impl Kb {
    pub fn new(
        entities: Vec<EntityRecord>,
        embeddings: EmbeddingIndex,
        taxonomy: TypeTaxonomy,
    ) -> Result<Self> {
        Kb::with_priority(entities, embeddings, taxonomy, PropertyPriority::default())
    }

    pub fn with_priority(
        mut entities: Vec<EntityRecord>,
        embeddings: EmbeddingIndex,
        taxonomy: TypeTaxonomy,
        priority: PropertyPriority,
    ) -> Result<Self> {
        let mut by_qid = HashMap::with_capacity(entities.len());
        let mut aliases: HashMap<String, Vec<usize>> = HashMap::new();
        let mut years = Vec::with_capacity(entities.len());
        for (i, e) in entities.iter_mut().enumerate() {
            if by_qid.insert(e.qid, i).is_some() {
                return Err(Error::Kb(format!("duplicate QID {}", e.qid)));
            }
            if let Some(id) = e.embedding_id {
                if id >= embeddings.len() {
                    return Err(Error::Kb(format!(
                        "{} references embedding {id}, but the index has {} rows",
                        e.qid,
                        embeddings.len()
                    )));
                }
            }
            let unknown: Vec<String> = e
                .date_properties
                .keys()
                .filter(|p| !priority.contains(p))
                .cloned()
                .collect();
            for p in unknown {
                log::warn!("{}: ignoring non-time property {p}", e.qid);
                e.date_properties.remove(&p);
            }
            let year = resolve_entity_date(e, &priority)
                .map_err(|err| Error::Kb(format!("{}: {err}", e.qid)))?;
            years.push(year);
            let mut keys: Vec<String> = std::iter::once(&e.label)
                .chain(e.aliases.iter())
                .map(|s| fold_alias(s))
                .filter(|k| !k.is_empty())
                .collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                aliases.entry(k).or_default().push(i);
            }
        }
        for ids in aliases.values_mut() {
            ids.sort_by_key(|&i| entities[i].qid);
        }
        Ok(Kb {
            entities,
            years,
            by_qid,
            aliases,
            embeddings,
            taxonomy,
            priority,
        })
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entities(&self) -> &[EntityRecord] {
        &self.entities
    }

    pub fn get(&self, qid: Qid) -> Option<&EntityRecord> {
        self.by_qid.get(&qid).map(|&i| &self.entities[i])
    }

    pub fn index_of(&self, qid: Qid) -> Option<usize> {
        self.by_qid.get(&qid).copied()
    }

    /// Resolved year of an entity (absent for unknown QIDs or undated entities).
    pub fn year(&self, qid: Qid) -> Option<i32> {
        self.index_of(qid).and_then(|i| self.years[i])
    }

    pub fn year_at(&self, index: usize) -> Option<i32> {
        self.years[index]
    }

    /// Entities whose label or alias folds to the same key, by ascending QID.
    pub fn lookup_alias(&self, surface: &str) -> Vec<&EntityRecord> {
        self.aliases
            .get(&fold_alias(surface))
            .map(|ids| ids.iter().map(|&i| &self.entities[i]).collect())
            .unwrap_or_default()
    }

    pub(crate) fn alias_indices(&self, surface: &str) -> &[usize] {
        self.aliases
            .get(&fold_alias(surface))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn embeddings(&self) -> &EmbeddingIndex {
        &self.embeddings
    }

    pub fn taxonomy(&self) -> &TypeTaxonomy {
        &self.taxonomy
    }

    pub fn priority(&self) -> &PropertyPriority {
        &self.priority
    }
}

/// Reads one JSON entity per line; blank lines are skipped.
pub fn read_entities(text: &str) -> Result<Vec<EntityRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::json(format!("entities line {}", i + 1), e))
        })
        .collect()
}

/// Loads entities (JSON lines), embeddings (binary) and an optional taxonomy
/// file; without one the builtin taxonomy is used.
pub fn load_kb(entities_path: &Path, embeddings_path: &Path, taxonomy_path: Option<&Path>) -> Result<Kb> {
    let text = std::fs::read_to_string(entities_path).map_err(|e| Error::io(entities_path, e))?;
    let entities = read_entities(&text)?;
    let embeddings = EmbeddingIndex::read(embeddings_path)?;
    let taxonomy = match taxonomy_path {
        Some(p) => {
            TypeTaxonomy::from_json(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?
        }
        None => TypeTaxonomy::builtin(),
    };
    Kb::new(entities, embeddings, taxonomy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(qid: u64, dates: &[(&str, DateValue)]) -> EntityRecord {
        EntityRecord {
            qid: Qid(qid),
            label: format!("e{qid}"),
            aliases: vec![],
            wikidata_types: BTreeSet::new(),
            ner_types: BTreeSet::new(),
            date_properties: dates.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            popularity: 0,
            embedding_id: None,
        }
    }

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn birth_beats_inception() {
        let r = record(1, &[("P571", DateValue::Year(1850)), ("P569", DateValue::Year(1707))]);
        assert_eq!(resolve_entity_date(&r, &PropertyPriority::default()).unwrap(), Some(1707));
    }

    #[test]
    fn no_dates_and_last_property() {
        let p = PropertyPriority::default();
        assert_eq!(resolve_entity_date(&record(1, &[]), &p).unwrap(), None);
        let r = record(1, &[("P585", DateValue::Year(1630))]);
        assert_eq!(resolve_entity_date(&r, &p).unwrap(), Some(1630));
    }

    #[test]
    fn iso_and_wikidata_timestamps() {
        let p = PropertyPriority::default();
        let r = record(1, &[("P569", DateValue::Text("+1707-05-12T00:00:00Z".into()))]);
        assert_eq!(resolve_entity_date(&r, &p).unwrap(), Some(1707));
        let r = record(1, &[("P571", DateValue::Text("-0500".into()))]);
        assert_eq!(resolve_entity_date(&r, &p).unwrap(), Some(-500));
        let r = record(1, &[("P577", DateValue::Text("around 1800".into()))]);
        match resolve_entity_date(&r, &p) {
            Err(Error::Date { property, .. }) => assert_eq!(property, "P577"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn priority_shape() {
        let p = PropertyPriority::default();
        let ranked: Vec<_> = p.ranked().collect();
        assert_eq!(ranked.len(), 15);
        assert_eq!(ranked[0], (1, "P569"));
        assert_eq!(ranked[14], (15, "P585"));
        assert!(PropertyPriority::new(vec!["P569".into()]).is_err());
        let mut rev: Vec<String> = TIME_PROPERTIES.iter().rev().map(|s| s.to_string()).collect();
        assert!(PropertyPriority::new(rev.clone()).is_err());
        rev.reverse();
        rev.swap(3, 4);
        assert!(PropertyPriority::new(rev).is_ok());
    }

    #[test]
    fn taxonomy_expansion() {
        let tax = TypeTaxonomy::builtin();
        assert_eq!(
            tax.expand_types("B-theatre"),
            set(&["B-theatre", "B-building", "B-organization"])
        );
        assert_eq!(tax.expand_types("B-person"), set(&["B-person"]));
        assert_eq!(tax.expand_types("B-concert"), set(&["B-concert", "B-event"]));
        assert_eq!(tax.expand_types("B-unseen"), set(&["B-unseen"]));
        assert_eq!(tax.expand_types("theatre"), set(&["theatre", "building", "organization"]));
    }

    #[test]
    fn compatibility() {
        let tax = TypeTaxonomy::builtin();
        assert!(tax.types_compatible(&set(&["B-person"]), &set(&["B-person"])));
        assert!(tax.types_compatible(&set(&["B-building"]), &set(&["B-theatre"])));
        assert!(tax.types_compatible(&set(&["B-theatre"]), &set(&["B-building"])));
        assert!(!tax.types_compatible(&set(&["B-person"]), &set(&["B-city"])));
        // siblings meet at a shared parent
        assert!(tax.types_compatible(&set(&["B-museum"]), &set(&["B-school"])));
        assert!(tax.types_compatible(&set(&["person"]), &set(&["B-person"])));
        assert!(!tax.types_compatible(&set(&["B-person"]), &BTreeSet::new()));
    }

    #[test]
    fn taxonomy_cycle_rejected() {
        let mut map = BTreeMap::new();
        map.insert("B-a".to_string(), vec!["B-b".to_string()]);
        map.insert("B-b".to_string(), vec!["B-a".to_string()]);
        assert!(TypeTaxonomy::new(map).is_err());
    }

    #[test]
    fn taxonomy_json_round_trip() {
        let tax = TypeTaxonomy::builtin();
        let json = serde_json::to_string(&tax.to_json_map()).unwrap();
        assert_eq!(TypeTaxonomy::from_json(&json).unwrap(), tax);
    }

    #[test]
    fn similarity_basics() {
        let idx = EmbeddingIndex::new(
            3,
            vec![vec![3.0, 4.0, 0.0], vec![0.0, 0.0, 2.0], vec![1.0, 1.0, 1.0]],
            NormMode::Unit,
        )
        .unwrap();
        assert!((idx.similarity(0, 0).unwrap() - 1.0).abs() < 1e-6);
        assert!(idx.similarity(0, 1).unwrap().abs() < 1e-9);
        assert!(idx.similarity(0, 3).is_err());
        for i in 0..idx.len() {
            assert!((l2(idx.row(i).unwrap()) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn embedding_bytes_round_trip_and_corruption() {
        let idx = EmbeddingIndex::new(2, vec![vec![1.0, 2.0], vec![-3.0, 0.5]], NormMode::Raw).unwrap();
        let bytes = idx.to_bytes();
        assert_eq!(&bytes[..8], b"HELIXEMB");
        assert_eq!(bytes.len(), 17 + 4 * 4);
        assert_eq!(EmbeddingIndex::from_bytes(&bytes).unwrap(), idx);

        let mut wrong_dim = bytes.clone();
        wrong_dim[12..16].copy_from_slice(&3u32.to_le_bytes());
        assert!(EmbeddingIndex::from_bytes(&wrong_dim).is_err());
        assert!(EmbeddingIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert!(EmbeddingIndex::from_bytes(&bad_magic).is_err());
    }

    #[test]
    fn fold_handles_case_and_diacritics() {
        assert_eq!(fold_alias("Barrière"), "barriere");
        assert_eq!(fold_alias("  NAUMANN  "), "naumann");
        assert_eq!(fold_alias("Johann  Gottlieb Naumann"), "johann gottlieb naumann");
    }

    #[test]
    fn kb_rejects_duplicates_and_dangling_embeddings() {
        let idx = EmbeddingIndex::new(2, vec![vec![1.0, 0.0]], NormMode::Unit).unwrap();
        let dup = vec![record(1, &[]), record(1, &[])];
        assert!(Kb::new(dup, idx.clone(), TypeTaxonomy::builtin()).is_err());
        let mut dangling = record(2, &[]);
        dangling.embedding_id = Some(5);
        assert!(Kb::new(vec![dangling], idx, TypeTaxonomy::builtin()).is_err());
    }

    #[test]
    fn kb_drops_unknown_date_properties() {
        let idx = EmbeddingIndex::new(2, vec![], NormMode::Unit).unwrap();
        let r = record(3, &[("P570", DateValue::Year(1801)), ("P2031", DateValue::Year(1780))]);
        let kb = Kb::new(vec![r], idx, TypeTaxonomy::builtin()).unwrap();
        assert_eq!(kb.year(Qid(3)), Some(1780));
        assert!(!kb.get(Qid(3)).unwrap().date_properties.contains_key("P570"));
    }

    #[test]
    fn entity_json_shape() {
        let line = r#"{"qid":"Q5129347","label":"Claudio Constantini","aliases":["Constantini"],"wikidata_types":["Q5"],"ner_types":["B-person"],"dates":{"P569":"1983-01-01"},"popularity":12,"embedding_id":0}"#;
        let es = read_entities(line).unwrap();
        assert_eq!(es[0].qid, Qid(5129347));
        assert_eq!(es[0].date_properties["P569"], DateValue::Text("1983-01-01".into()));
        let line = r#"{"qid":"Q1","label":"x","dates":{"P569":1707}}"#;
        let es = read_entities(line).unwrap();
        assert_eq!(es[0].date_properties["P569"], DateValue::Year(1707));
        assert!(read_entities(r#"{"qid":"NIL","label":"x"}"#).is_err());
    }
}
