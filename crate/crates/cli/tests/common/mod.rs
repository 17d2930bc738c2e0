//! Synthetic linking worlds and helpers for driving the binary.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chronolink::corpus::{serialize_conllu, Document, Sentence, Token};
use chronolink::kbstore::{DateValue, EmbeddingIndex, EntityRecord, NormMode};
use chronolink::{Link, Qid};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const DIM: usize = 128;
pub const N_ENTITIES: usize = 500;
/// Entities live in the first `KB_DIMS` coordinates; out-of-KB mentions
/// point into the rest.
const KB_DIMS: usize = 112;

/// Sentence-level weight of a gold vector; the rest is its own direction.
const SCENE_WEIGHT: f64 = 0.6;
const MENTION_NOISE: f64 = 0.15;
const DECOY_NOISE: f64 = 0.05;

const TYPES: [(&str, &str, &str); 3] = [
    ("person", "P569", "city"),
    ("city", "P571", "person"),
    ("newspaper", "P571", "person"),
];

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_chronolink"))
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn gaussian(rng: &mut ChaCha8Rng, dims: std::ops::Range<usize>) -> Vec<f64> {
    (0..DIM)
        .map(|i| if dims.contains(&i) { rng.sample(StandardNormal) } else { 0.0 })
        .collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn mix(a: &[f64], wa: f64, b: &[f64], wb: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec<f64> {
    unit(gaussian(rng, 0..KB_DIMS))
}

fn out_of_kb_unit(rng: &mut ChaCha8Rng) -> Vec<f64> {
    unit(gaussian(rng, KB_DIMS..DIM))
}

/// Random unit vector orthogonal to every vector in `basis` (all unit and
/// mutually orthogonal).
fn orthogonal_unit(rng: &mut ChaCha8Rng, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut v = random_unit(rng);
    for b in basis {
        let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        v = mix(&v, 1.0, b, -d);
    }
    unit(v)
}

fn jitter(rng: &mut ChaCha8Rng, v: &[f64], scale: f64) -> Vec<f64> {
    let noise = random_unit(rng);
    unit(mix(v, 1.0, &noise, scale))
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// One corpus split with its mention vectors.
pub struct Split {
    pub docs: Vec<Document>,
    pub mention_rows: Vec<Vec<f32>>,
    pub n_nil: usize,
}

pub struct World {
    pub entities: Vec<EntityRecord>,
    pub entity_rows: Vec<Vec<f32>>,
    pub test: Split,
    pub dev: Split,
}

pub struct WorldFiles {
    pub entities: PathBuf,
    pub embeddings: PathBuf,
    pub test_corpus: PathBuf,
    pub test_mentions: PathBuf,
    pub dev_corpus: PathBuf,
    pub dev_mentions: PathBuf,
}

struct Builder {
    rng: ChaCha8Rng,
    entities: Vec<EntityRecord>,
    rows: Vec<Vec<f32>>,
}

impl Builder {
    fn push(&mut self, label: String, ty: &str, date: Option<(&str, i64)>, row: &[f64]) -> Qid {
        let qid = Qid(100_000 + self.entities.len() as u64);
        let mut dates = BTreeMap::new();
        if let Some((prop, year)) = date {
            dates.insert(prop.to_string(), DateValue::Year(year));
        }
        let popularity = self.rng.gen_range(0..5000);
        self.entities.push(EntityRecord {
            qid,
            label,
            aliases: vec![],
            wikidata_types: BTreeSet::new(),
            ner_types: [ty.to_string()].into(),
            date_properties: dates,
            popularity,
            embedding_id: Some(self.rows.len()),
        });
        self.rows.push(to_f32(row));
        qid
    }

    /// Sentences of 3 to 5 mentions, one scene per sentence. Every linked
    /// mention gets a plausible gold and an implausible homonym that is
    /// closer to the mention than the gold. Golds of one sentence share the
    /// scene direction and are otherwise orthogonal; NIL mentions have no
    /// counterpart in the KB subspace.
    fn split(&mut self, name: &str, n_mentions: usize, n_nil: usize) -> Split {
        let mut is_nil: Vec<bool> = (0..n_mentions).map(|i| i < n_nil).collect();
        is_nil.shuffle(&mut self.rng);
        let mut docs: Vec<Document> = Vec::new();
        let mut mention_rows = Vec::new();
        let mut next = 0;
        let mut sentence_no = 0;
        while next < n_mentions {
            if sentence_no % 5 == 0 {
                docs.push(Document {
                    document_id: format!("{name}_{:03}.txt", docs.len()),
                    document_date: self.rng.gen_range(1850..1900),
                    sentences: vec![],
                });
            }
            let doc_year = i64::from(docs.last().unwrap().document_date);
            let size = (3 + sentence_no % 3).min(n_mentions - next);
            let scene = random_unit(&mut self.rng);
            let mut basis = vec![scene.clone()];
            let mut tokens = vec![Token::outside("Yesterday")];
            for _ in 0..size {
                let (ty, prop, other) = TYPES[self.rng.gen_range(0..TYPES.len())];
                let surface = format!("{}{}", &name[..1].to_uppercase(), 1000 + next);
                if is_nil[next] {
                    mention_rows.push(to_f32(&out_of_kb_unit(&mut self.rng)));
                    tokens.push(Token::begin(surface, ty, Link::Nil));
                } else {
                    let own = orthogonal_unit(&mut self.rng, &basis);
                    basis.push(own.clone());
                    let gold_row = unit(mix(&scene, SCENE_WEIGHT, &own, (1.0 - SCENE_WEIGHT.powi(2)).sqrt()));
                    let mention_row = jitter(&mut self.rng, &own, MENTION_NOISE);
                    let gold_year = self.rng.gen_bool(0.7).then(|| self.rng.gen_range(1700..doc_year));
                    let gold = self.push(surface.clone(), ty, gold_year.map(|y| (prop, y)), &gold_row);
                    let decoy_row = jitter(&mut self.rng, &mention_row, DECOY_NOISE);
                    if self.rng.gen_bool(0.5) {
                        let late = self.rng.gen_range(doc_year + 30..2000);
                        self.push(surface.clone(), ty, Some((prop, late)), &decoy_row);
                    } else {
                        self.push(surface.clone(), other, None, &decoy_row);
                    }
                    mention_rows.push(to_f32(&mention_row));
                    tokens.push(Token::begin(surface, ty, Link::Entity(gold)));
                }
                tokens.push(Token::outside("and"));
                next += 1;
            }
            tokens.pop();
            tokens.push(Token::outside("."));
            let text = tokens.iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" ");
            docs.last_mut().unwrap().sentences.push(Sentence { text, tokens });
            sentence_no += 1;
        }
        Split { docs, mention_rows, n_nil }
    }
}

/// 500 entities, a 200-mention test split and a 100-mention dev split.
pub fn world(seed: u64) -> World {
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        entities: vec![],
        rows: vec![],
    };
    let test = b.split("test", 200, 40);
    let dev = b.split("dev", 100, 20);
    let mut filler = 0;
    while b.entities.len() < N_ENTITIES {
        let (ty, prop, _) = TYPES[filler % TYPES.len()];
        let year = b.rng.gen_range(1600..2000);
        let row = random_unit(&mut b.rng);
        b.push(format!("Filler {filler}"), ty, Some((prop, year)), &row);
        filler += 1;
    }
    assert_eq!(b.entities.len(), N_ENTITIES);
    World {
        entities: b.entities,
        entity_rows: b.rows,
        test,
        dev,
    }
}

fn write_rows(path: &Path, rows: &[Vec<f32>]) {
    EmbeddingIndex::new(DIM, rows.to_vec(), NormMode::Unit)
        .unwrap()
        .write(path)
        .unwrap();
}

impl World {
    pub fn write(&self, dir: &Path) -> WorldFiles {
        let files = WorldFiles {
            entities: dir.join("entities.jsonl"),
            embeddings: dir.join("entities.emb"),
            test_corpus: dir.join("test.tsv"),
            test_mentions: dir.join("test_mentions.emb"),
            dev_corpus: dir.join("dev.tsv"),
            dev_mentions: dir.join("dev_mentions.emb"),
        };
        let jsonl: String = self
            .entities
            .iter()
            .map(|e| serde_json::to_string(e).unwrap() + "\n")
            .collect();
        std::fs::write(&files.entities, jsonl).unwrap();
        write_rows(&files.embeddings, &self.entity_rows);
        std::fs::write(&files.test_corpus, serialize_conllu(&self.test.docs).unwrap()).unwrap();
        write_rows(&files.test_mentions, &self.test.mention_rows);
        std::fs::write(&files.dev_corpus, serialize_conllu(&self.dev.docs).unwrap()).unwrap();
        write_rows(&files.dev_mentions, &self.dev.mention_rows);
        files
    }
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
