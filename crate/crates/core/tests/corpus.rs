use std::collections::HashSet;

use chronolink::corpus::{compute_stats, parse_conllu, serialize_conllu, Document, IobTag, Sentence, Token};
use chronolink::{Link, Qid};
use proptest::prelude::*;

const TWENTY: &str = include_str!("data/twenty.tsv");

/// Counts taken straight from the text lines, without the parser.
struct LineCounts {
    docs: usize,
    sentences: usize,
    tokens: usize,
    mentions: usize,
    nil_mentions: usize,
    unique: usize,
}

fn count_lines(text: &str) -> LineCounts {
    let mut docs = HashSet::new();
    let mut sentences = 0;
    let mut tokens = 0;
    let mut mentions = 0;
    let mut nil_mentions = 0;
    let mut unique = HashSet::new();
    let mut current: Option<(Vec<String>, String)> = None;
    let flush = |cur: &mut Option<(Vec<String>, String)>, unique: &mut HashSet<(String, String)>| {
        if let Some((words, link)) = cur.take() {
            unique.insert((words.join(" ").to_lowercase(), link));
        }
    };
    for line in text.lines() {
        if let Some(id) = line.strip_prefix("#document_id:") {
            docs.insert(id.to_string());
        } else if line.starts_with("#sent_text:") {
            sentences += 1;
        } else if line.starts_with('#') {
            continue;
        } else if !line.is_empty() {
            tokens += 1;
            let cols: Vec<&str> = line.split('\t').collect();
            if cols[1].starts_with("B-") {
                flush(&mut current, &mut unique);
                mentions += 1;
                if cols[2] == "NIL" {
                    nil_mentions += 1;
                }
                current = Some((vec![cols[0].to_string()], cols[2].to_string()));
            } else if cols[1].starts_with("I-") {
                current.as_mut().unwrap().0.push(cols[0].to_string());
            } else {
                flush(&mut current, &mut unique);
            }
        } else {
            flush(&mut current, &mut unique);
        }
    }
    flush(&mut current, &mut unique);
    LineCounts {
        docs: docs.len(),
        sentences,
        tokens,
        mentions,
        nil_mentions,
        unique: unique.len(),
    }
}

#[test]
fn twenty_sentence_fixture_counts() {
    let docs = parse_conllu(TWENTY).unwrap();
    let stats = compute_stats(&docs);
    let oracle = count_lines(TWENTY);
    assert_eq!(stats.n_docs, oracle.docs);
    assert_eq!(stats.n_sentences, 20);
    assert_eq!(stats.n_sentences, oracle.sentences);
    assert_eq!(stats.n_tokens, oracle.tokens);
    assert_eq!(stats.n_mentions_all, oracle.mentions);
    assert_eq!(stats.n_mentions_unique, oracle.unique);
    let nil_share = oracle.nil_mentions as f64 / oracle.mentions as f64;
    assert!((stats.nil_share_all - nil_share).abs() < 1e-12);
    let avg = ((oracle.tokens as f64 / 20.0) * 10.0).round() / 10.0;
    assert_eq!(stats.avg_tokens_per_sentence, avg);
    // "organisation" is spelt differently from the known inventory
    assert_eq!(stats.n_unknown_type_mentions, 2);
}

#[test]
fn twenty_sentence_fixture_round_trips() {
    let docs = parse_conllu(TWENTY).unwrap();
    assert_eq!(serialize_conllu(&docs).unwrap(), TWENTY);
}

#[test]
fn multi_token_mentions_share_one_link() {
    let docs = parse_conllu(TWENTY).unwrap();
    let m = docs[0].mentions();
    let hanover = m.iter().find(|m| m.surface == "Hanover Square Rooms").unwrap();
    assert_eq!(hanover.gold_link, Link::Nil);
    assert_eq!(hanover.token_span.1 - hanover.token_span.0, 3);
    let clara = m.iter().find(|m| m.surface.starts_with("Madame")).unwrap();
    assert_eq!(clara.gold_link, Link::Entity(Qid(42831)));
}

#[test]
fn empty_corpus_has_zero_stats() {
    let docs = parse_conllu("").unwrap();
    let s = compute_stats(&docs);
    assert_eq!((s.n_docs, s.n_sentences, s.n_tokens, s.n_mentions_all), (0, 0, 0, 0));
    assert_eq!(s.nil_share_all, 0.0);
}

fn word() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z0-9.,'-]{0,7}"
}

fn link() -> impl Strategy<Value = Link> {
    prop_oneof![Just(Link::Nil), (1u64..5000).prop_map(|q| Link::Entity(Qid(q)))]
}

#[derive(Debug, Clone)]
enum Piece {
    Outside(String),
    Mention(Vec<String>, String, Link),
}

fn piece() -> impl Strategy<Value = Piece> {
    prop_oneof![
        word().prop_map(Piece::Outside),
        (
            prop::collection::vec(word(), 1..4),
            prop::sample::select(vec!["person", "city", "opera", "newspaper", "work-of-art"]),
            link()
        )
            .prop_map(|(w, t, l)| Piece::Mention(w, t.to_string(), l)),
    ]
}

fn sentence() -> impl Strategy<Value = Sentence> {
    (
        prop::collection::vec(piece(), 1..8),
        prop::option::of(any::<bool>()),
    )
        .prop_map(|(pieces, noisy)| {
            let mut tokens = Vec::new();
            for p in pieces {
                match p {
                    Piece::Outside(w) => tokens.push(Token::outside(w)),
                    Piece::Mention(ws, ty, l) => {
                        for (i, w) in ws.into_iter().enumerate() {
                            let mut t = if i == 0 { Token::begin(w, &ty, l) } else { Token::inside(w, &ty, l) };
                            t.noisy = noisy;
                            tokens.push(t);
                        }
                    }
                }
            }
            let text = tokens.iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" ");
            Sentence { text, tokens }
        })
}

fn corpus() -> impl Strategy<Value = Vec<Document>> {
    prop::collection::vec((1800i32..2000, prop::collection::vec(sentence(), 1..4)), 1..4).prop_map(|docs| {
        docs.into_iter()
            .enumerate()
            .map(|(i, (date, sentences))| Document {
                document_id: format!("doc_{i}.txt"),
                document_date: date,
                sentences,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn serialize_then_parse_is_identity(docs in corpus()) {
        let text = serialize_conllu(&docs).unwrap();
        let back = parse_conllu(&text).unwrap();
        prop_assert_eq!(&back, &docs);
        prop_assert_eq!(serialize_conllu(&back).unwrap(), text);
    }

    #[test]
    fn stats_are_additive(a in corpus(), b in corpus()) {
        let b: Vec<Document> = b
            .into_iter()
            .map(|mut d| { d.document_id = format!("other_{}", d.document_id); d })
            .collect();
        let joined: Vec<Document> = a.iter().chain(&b).cloned().collect();
        let (sa, sb, sj) = (compute_stats(&a), compute_stats(&b), compute_stats(&joined));
        prop_assert_eq!(sj.n_docs, sa.n_docs + sb.n_docs);
        prop_assert_eq!(sj.n_sentences, sa.n_sentences + sb.n_sentences);
        prop_assert_eq!(sj.n_tokens, sa.n_tokens + sb.n_tokens);
        prop_assert_eq!(sj.n_mentions_all, sa.n_mentions_all + sb.n_mentions_all);
        prop_assert!(sj.n_mentions_unique <= sa.n_mentions_unique + sb.n_mentions_unique);
    }

    #[test]
    fn mentions_cover_every_tagged_token(docs in corpus()) {
        for d in &docs {
            for (si, s) in d.sentences.iter().enumerate() {
                let tagged = s.tokens.iter().filter(|t| t.tag != IobTag::Outside).count();
                let covered: usize = d.mentions().iter()
                    .filter(|m| m.sentence_index == si)
                    .map(|m| m.token_span.1 - m.token_span.0)
                    .sum();
                prop_assert_eq!(tagged, covered);
            }
        }
    }
}
