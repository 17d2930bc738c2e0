//! CoNLL-U style historical EL corpora (MHERCL layout).
//!
//! A file is a sequence of sentences separated by blank lines. Each sentence
//! is preceded by `#key:value` metadata lines (`document_id`, `document_date`,
//! `sent_text`) and holds one token per line with tab-separated columns:
//! surface, IOB tag and link (`Q…`, `NIL`, or `_` when outside a mention).
//! An optional fourth column carries the OCR-noise flag (`noisy`, `clean`, `_`).
//!
//! Document metadata persists across sentences until a new `#document_id`
//! appears, so files that state it once per document parse the same way as
//! files that repeat it on every sentence.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::Link;

/// NER classes attested in the MHERCL release. Other types are accepted
/// and kept verbatim, but mentions carrying them are flagged.
pub const KNOWN_NER_TYPES: &[&str] = &[
    "person", "city", "music", "organization", "work-of-art", "country", "building", "opera",
    "theatre", "worship-place", "publication", "book", "road", "company", "school",
    "city-district", "magazine", "event", "festival", "street", "mountain", "university",
    "government-organization", "college", "facility", "local-region", "county", "continent",
    "journal", "square", "song", "concert", "location", "river", "museum", "newspaper",
    "country-region", "symphony", "religious-group", "thing", "family", "language", "band",
    "province", "island", "park", "empire", "hotel", "scholarship", "institution", "village",
    "town", "books", "person (fictional character)", "lake", "hall", "society", "military",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IobTag {
    Outside,
    Begin(String),
    Inside(String),
}

impl IobTag {
    pub fn parse(s: &str) -> Option<IobTag> {
        if s == "O" {
            return Some(IobTag::Outside);
        }
        let (prefix, ty) = s.split_once('-')?;
        if ty.is_empty() {
            return None;
        }
        match prefix {
            "B" => Some(IobTag::Begin(ty.to_string())),
            "I" => Some(IobTag::Inside(ty.to_string())),
            _ => None,
        }
    }

    pub fn entity_type(&self) -> Option<&str> {
        match self {
            IobTag::Outside => None,
            IobTag::Begin(t) | IobTag::Inside(t) => Some(t),
        }
    }
}

impl fmt::Display for IobTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IobTag::Outside => f.write_str("O"),
            IobTag::Begin(t) => write!(f, "B-{t}"),
            IobTag::Inside(t) => write!(f, "I-{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub tag: IobTag,
    /// `None` is the `_` marker carried by every `O` token.
    pub link: Option<Link>,
    pub noisy: Option<bool>,
}

impl Token {
    pub fn outside(surface: impl Into<String>) -> Self {
        Token {
            surface: surface.into(),
            tag: IobTag::Outside,
            link: None,
            noisy: None,
        }
    }

    pub fn begin(surface: impl Into<String>, ty: &str, link: Link) -> Self {
        Token {
            surface: surface.into(),
            tag: IobTag::Begin(ty.to_string()),
            link: Some(link),
            noisy: None,
        }
    }

    pub fn inside(surface: impl Into<String>, ty: &str, link: Link) -> Self {
        Token {
            surface: surface.into(),
            tag: IobTag::Inside(ty.to_string()),
            link: Some(link),
            noisy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub document_id: String,
    pub document_date: i32,
    pub sentences: Vec<Sentence>,
}

/// One gold mention reconstructed from a `B-` run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionAnnotation {
    pub document_id: String,
    pub document_date: i32,
    pub sentence_index: usize,
    /// Half-open token range `[start, end)`.
    pub token_span: (usize, usize),
    pub surface: String,
    pub ner_type: String,
    pub gold_link: Link,
    pub noisy: Option<bool>,
    pub known_type: bool,
}

impl MentionAnnotation {
    /// Stable identifier used in prediction and candidate files.
    pub fn id(&self) -> String {
        mention_id(&self.document_id, self.sentence_index, self.token_span)
    }
}

pub fn mention_id(document_id: &str, sentence_index: usize, span: (usize, usize)) -> String {
    format!("{document_id}#{sentence_index}:{}-{}", span.0, span.1)
}

impl Sentence {
    /// Mentions in this sentence, in token order. Assumes a valid IOB sequence.
    pub fn mention_spans(&self) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut i = 0;
        while i < self.tokens.len() {
            if let IobTag::Begin(ty) = &self.tokens[i].tag {
                let mut end = i + 1;
                while end < self.tokens.len()
                    && matches!(&self.tokens[end].tag, IobTag::Inside(t) if t == ty)
                {
                    end += 1;
                }
                spans.push((i, end));
                i = end;
            } else {
                i += 1;
            }
        }
        spans
    }
}

impl Document {
    pub fn mentions(&self) -> Vec<MentionAnnotation> {
        let mut out = Vec::new();
        for (si, sentence) in self.sentences.iter().enumerate() {
            for (start, end) in sentence.mention_spans() {
                let toks = &sentence.tokens[start..end];
                let ner_type = toks[0].tag.entity_type().unwrap_or_default().to_string();
                let noisy = if toks.iter().all(|t| t.noisy.is_none()) {
                    None
                } else {
                    Some(toks.iter().any(|t| t.noisy == Some(true)))
                };
                out.push(MentionAnnotation {
                    document_id: self.document_id.clone(),
                    document_date: self.document_date,
                    sentence_index: si,
                    token_span: (start, end),
                    surface: toks
                        .iter()
                        .map(|t| t.surface.as_str())
                        .collect::<Vec<_>>()
                        .join(" "),
                    known_type: KNOWN_NER_TYPES.contains(&ner_type.as_str()),
                    ner_type,
                    gold_link: toks[0].link.unwrap_or(Link::Nil),
                    noisy,
                });
            }
        }
        out
    }
}

/// All mentions of a corpus in file order.
pub fn mentions(docs: &[Document]) -> Vec<MentionAnnotation> {
    docs.iter().flat_map(Document::mentions).collect()
}

// ---------------------------------------------------------------------------
// Parsing

struct PendingSentence {
    first_line: usize,
    text: Option<String>,
    tokens: Vec<Token>,
}

#[derive(Default)]
struct Builder {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
    dates: HashMap<String, i32>,
    doc_id: Option<String>,
    date: Option<i32>,
    date_in_block: bool,
    text: Option<String>,
}

impl Builder {
    fn flush(&mut self, pending: &mut Option<PendingSentence>) -> Result<()> {
        let Some(p) = pending.take() else {
            return Ok(());
        };
        let doc_id = self.doc_id.clone().ok_or_else(|| Error::Parse {
            line: p.first_line,
            message: "sentence has no #document_id".into(),
        })?;
        if let Some(date) = self.date {
            match self.dates.get(&doc_id) {
                Some(&d) if d != date => {
                    return Err(Error::Parse {
                        line: p.first_line,
                        message: format!(
                            "document `{doc_id}` has conflicting dates {d} and {date}"
                        ),
                    })
                }
                _ => {
                    self.dates.insert(doc_id.clone(), date);
                }
            }
        }
        let idx = match self.by_id.get(&doc_id) {
            Some(&i) => i,
            None => {
                self.docs.push(Document {
                    document_id: doc_id.clone(),
                    document_date: 0,
                    sentences: Vec::new(),
                });
                self.by_id.insert(doc_id, self.docs.len() - 1);
                self.docs.len() - 1
            }
        };
        self.docs[idx].sentences.push(Sentence {
            text: p.text.or_else(|| self.text.take()).unwrap_or_default(),
            tokens: p.tokens,
        });
        self.text = None;
        self.date_in_block = false;
        Ok(())
    }

    fn metadata(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        match key {
            "document_id" => {
                if value.is_empty() {
                    return Err(Error::Parse {
                        line,
                        message: "empty #document_id".into(),
                    });
                }
                if self.doc_id.as_deref() != Some(value) && !self.date_in_block {
                    self.date = None;
                }
                self.doc_id = Some(value.to_string());
            }
            "document_date" | "date" => {
                let year = parse_year(value).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("invalid document date `{value}`"),
                })?;
                self.date = Some(year);
                self.date_in_block = true;
            }
            "sent_text" | "text" => self.text = Some(value.to_string()),
            _ => {}
        }
        Ok(())
    }
}

/// Leading positive year of `1873`, `1873-05-01` and similar.
fn parse_year(value: &str) -> Option<i32> {
    let digits: String = value.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    let rest = &value[digits.len()..];
    if !(rest.is_empty() || rest.starts_with('-')) {
        return None;
    }
    digits.parse().ok().filter(|&y: &i32| y > 0)
}

fn split_metadata(body: &str) -> Option<(&str, &str)> {
    let body = body.trim_start();
    let pos = body.find([':', '='])?;
    Some((body[..pos].trim(), body[pos + 1..].trim()))
}

fn parse_token(line: usize, raw: &str, prev: Option<&Token>) -> Result<Token> {
    let err = |message: String| Error::Parse { line, message };
    let cols: Vec<&str> = raw.split('\t').collect();
    if cols.len() == 1 && raw.contains(char::is_whitespace) {
        return Err(err("columns must be separated by tabs".into()));
    }
    if !(3..=4).contains(&cols.len()) {
        return Err(err(format!("expected 3 or 4 columns, found {}", cols.len())));
    }
    if cols[0].is_empty() {
        return Err(err("empty token".into()));
    }
    let tag = IobTag::parse(cols[1]).ok_or_else(|| err(format!("invalid IOB tag `{}`", cols[1])))?;
    let link = match cols[2] {
        "_" => None,
        s => Some(s.parse::<Link>().map_err(|e| err(e.to_string()))?),
    };
    let noisy = match cols.get(3) {
        None | Some(&"_") => None,
        Some(&"noisy") => Some(true),
        Some(&"clean") => Some(false),
        Some(other) => return Err(err(format!("invalid noise flag `{other}`"))),
    };
    let token = Token {
        surface: cols[0].to_string(),
        tag,
        link,
        noisy,
    };
    check_token(&token, prev).map_err(err)?;
    Ok(token)
}

/// IOB and link-column rules for one token given its predecessor in the sentence.
fn check_token(token: &Token, prev: Option<&Token>) -> std::result::Result<(), String> {
    match (&token.tag, token.link) {
        (IobTag::Outside, Some(l)) => return Err(format!("`O` token carries link {l}")),
        (IobTag::Begin(_) | IobTag::Inside(_), None) => {
            return Err(format!("`{}` token has no link", token.tag))
        }
        _ => {}
    }
    if let IobTag::Inside(ty) = &token.tag {
        let Some(prev) = prev else {
            return Err(format!("`I-{ty}` at start of sentence"));
        };
        match prev.tag.entity_type() {
            None => return Err(format!("`I-{ty}` follows `O`")),
            Some(pt) if pt != ty => return Err(format!("`I-{ty}` continues a `{pt}` mention")),
            _ => {}
        }
        if prev.link != token.link {
            return Err("link changes inside a mention".into());
        }
    }
    Ok(())
}

/// Parses a corpus. Documents are returned in order of first appearance.
pub fn parse_conllu(text: &str) -> Result<Vec<Document>> {
    let mut b = Builder::default();
    let mut pending: Option<PendingSentence> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            b.flush(&mut pending)?;
            continue;
        }
        if line.starts_with('#') && !line.contains('\t') {
            if pending.is_some() {
                b.flush(&mut pending)?;
            }
            if let Some((key, value)) = split_metadata(&line[1..]) {
                b.metadata(line_no, key, value)?;
            }
            continue;
        }
        let p = pending.get_or_insert_with(|| PendingSentence {
            first_line: line_no,
            text: None,
            tokens: Vec::new(),
        });
        if p.tokens.is_empty() {
            p.text = b.text.take();
        }
        let tok = parse_token(line_no, line, p.tokens.last())?;
        p.tokens.push(tok);
    }
    b.flush(&mut pending)?;

    for doc in &mut b.docs {
        doc.document_date = *b.dates.get(&doc.document_id).ok_or_else(|| Error::MissingDate {
            document_id: doc.document_id.clone(),
        })?;
    }
    Ok(b.docs)
}

// ---------------------------------------------------------------------------
// Serialization

fn validate(doc: &Document) -> std::result::Result<(), String> {
    let id = &doc.document_id;
    if id.is_empty() {
        return Err("empty document_id".into());
    }
    if id.contains(['\n', '\r']) || id.trim() != id {
        return Err(format!("document_id `{id}` is not a single trimmed line"));
    }
    if doc.document_date <= 0 {
        return Err(format!("document `{id}` has non-positive date {}", doc.document_date));
    }
    for (si, s) in doc.sentences.iter().enumerate() {
        let at = |m: String| format!("document `{id}`, sentence {si}: {m}");
        if s.tokens.is_empty() {
            return Err(at("no tokens".into()));
        }
        if s.text.contains(['\n', '\r']) || s.text.trim() != s.text {
            return Err(at("sentence text is not a single trimmed line".into()));
        }
        for (ti, t) in s.tokens.iter().enumerate() {
            if t.surface.is_empty() || t.surface.contains(['\t', '\n', '\r']) {
                return Err(at(format!("token {ti} has an unserializable surface")));
            }
            if t.surface.trim().is_empty() {
                return Err(at(format!("token {ti} is blank")));
            }
            if let Some(ty) = t.tag.entity_type() {
                if ty.is_empty() || ty.contains(char::is_whitespace) {
                    return Err(at(format!("token {ti} has invalid type `{ty}`")));
                }
            }
            let prev = ti.checked_sub(1).map(|p| &s.tokens[p]);
            check_token(t, prev).map_err(|m| at(format!("token {ti}: {m}")))?;
        }
    }
    Ok(())
}

/// Writes documents in the release layout. Every document is validated
/// before any output is produced.
pub fn serialize_conllu(docs: &[Document]) -> Result<String> {
    for d in docs {
        validate(d).map_err(Error::InvalidDocument)?;
    }
    let mut out = String::new();
    for d in docs {
        for s in &d.sentences {
            let _ = writeln!(out, "#document_id:{}", d.document_id);
            let _ = writeln!(out, "#document_date:{}", d.document_date);
            let _ = writeln!(out, "#sent_text:{}", s.text);
            for t in &s.tokens {
                let link = t.link.map_or_else(|| "_".to_string(), |l| l.to_string());
                let _ = write!(out, "{}\t{}\t{}", t.surface, t.tag, link);
                match t.noisy {
                    Some(true) => out.push_str("\tnoisy"),
                    Some(false) => out.push_str("\tclean"),
                    None => {}
                }
                out.push('\n');
            }
            out.push('\n');
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Statistics

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub n_sentences: usize,
    pub n_tokens: usize,
    /// Rounded to one decimal.
    pub avg_tokens_per_sentence: f64,
    pub n_mentions_all: usize,
    pub n_mentions_unique: usize,
    pub n_types: usize,
    pub nil_share_all: f64,
    pub nil_share_unique: f64,
    pub noisy_share: f64,
    pub n_unknown_type_mentions: usize,
    pub type_histogram: BTreeMap<String, usize>,
}

fn share(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Corpus counts. Mentions are unique by (lower-cased surface, gold link).
pub fn compute_stats(docs: &[Document]) -> CorpusStats {
    let n_sentences: usize = docs.iter().map(|d| d.sentences.len()).sum();
    let n_tokens: usize = docs
        .iter()
        .flat_map(|d| &d.sentences)
        .map(|s| s.tokens.len())
        .sum();
    let all = mentions(docs);
    let mut unique: HashSet<(String, Link)> = HashSet::new();
    let mut type_histogram = BTreeMap::new();
    for m in &all {
        unique.insert((m.surface.to_lowercase(), m.gold_link));
        *type_histogram.entry(m.ner_type.clone()).or_insert(0) += 1;
    }
    let nil_all = all.iter().filter(|m| m.gold_link.is_nil()).count();
    let nil_unique = unique.iter().filter(|(_, l)| l.is_nil()).count();
    let noisy = all.iter().filter(|m| m.noisy == Some(true)).count();
    let avg = share(n_tokens, n_sentences);
    CorpusStats {
        n_docs: docs.len(),
        n_sentences,
        n_tokens,
        avg_tokens_per_sentence: (avg * 10.0).round() / 10.0,
        n_mentions_all: all.len(),
        n_mentions_unique: unique.len(),
        n_types: type_histogram.len(),
        nil_share_all: share(nil_all, all.len()),
        nil_share_unique: share(nil_unique, unique.len()),
        noisy_share: share(noisy, all.len()),
        n_unknown_type_mentions: all.iter().filter(|m| !m.known_type).count(),
        type_histogram,
    }
}

impl CorpusStats {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<28}{:>10}", "documents", self.n_docs);
        let _ = writeln!(s, "{:<28}{:>10}", "sentences", self.n_sentences);
        let _ = writeln!(s, "{:<28}{:>10}", "tokens", self.n_tokens);
        let _ = writeln!(s, "{:<28}{:>10.1}", "tokens per sentence", self.avg_tokens_per_sentence);
        let _ = writeln!(s, "{:<28}{:>10}", "mentions (all)", self.n_mentions_all);
        let _ = writeln!(s, "{:<28}{:>10}", "mentions (unique)", self.n_mentions_unique);
        let _ = writeln!(s, "{:<28}{:>10}", "types", self.n_types);
        let _ = writeln!(s, "{:<28}{:>10.2}", "NIL share (all)", self.nil_share_all);
        let _ = writeln!(s, "{:<28}{:>10.2}", "NIL share (unique)", self.nil_share_unique);
        let _ = writeln!(s, "{:<28}{:>10.2}", "noisy share", self.noisy_share);
        let mut types: Vec<_> = self.type_histogram.iter().collect();
        types.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        let _ = writeln!(s, "\ntop types");
        for (t, n) in types.into_iter().take(10) {
            let _ = writeln!(s, "  {t:<26}{n:>10}");
        }
        s
    }
}
