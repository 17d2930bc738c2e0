//! Scoring, agreement and popularity analysis.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::MentionAnnotation;
use crate::error::{Error, Result};
use crate::ids::{Link, Qid};
use crate::kbstore::Kb;
use crate::retrieval::{phi_d, CandidateDump};

/// Mention-level micro scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_correct: usize,
    pub n_wrong: usize,
    pub n_missing: usize,
    pub n_total: usize,
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_ids(predictions: &HashMap<String, Link>, gold: &[MentionAnnotation]) -> Result<()> {
    let known: BTreeSet<String> = gold.iter().map(MentionAnnotation::id).collect();
    let mut unknown: Vec<&String> = predictions.keys().filter(|k| !known.contains(*k)).collect();
    unknown.sort();
    match unknown.first() {
        Some(id) => Err(Error::Eval(format!(
            "{} prediction(s) for unknown mentions, first `{id}`",
            unknown.len()
        ))),
        None => Ok(()),
    }
}

/// A prediction is correct when it equals the gold link. Missing predictions
/// count against recall only.
pub fn score(predictions: &HashMap<String, Link>, gold: &[MentionAnnotation]) -> Result<EvalResult> {
    check_ids(predictions, gold)?;
    let mut correct = 0;
    let mut emitted = 0;
    for m in gold {
        if let Some(p) = predictions.get(&m.id()) {
            emitted += 1;
            if *p == m.gold_link {
                correct += 1;
            }
        }
    }
    let precision = ratio(correct, emitted);
    let recall = ratio(correct, gold.len());
    Ok(EvalResult {
        precision,
        recall,
        f1: f1_of(precision, recall),
        n_correct: correct,
        n_wrong: emitted - correct,
        n_missing: gold.len() - emitted,
        n_total: gold.len(),
    })
}

/// Accuracy and F1 of one plausibility check. Gold links are taken as the
/// plausible reference, so F1 is `2 acc / (1 + acc)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryScore {
    pub accuracy: f64,
    pub f1: f64,
}

impl BinaryScore {
    fn from_bits(bits: &[bool]) -> Self {
        let tp = bits.iter().filter(|&&b| b).count();
        let fn_ = bits.len() - tp;
        let precision = if tp == 0 { 0.0 } else { 1.0 };
        let recall = ratio(tp, tp + fn_);
        BinaryScore {
            accuracy: ratio(tp, bits.len()),
            f1: f1_of(precision, recall),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlausibilityReport {
    pub n_scored: usize,
    pub time: BinaryScore,
    pub types: BinaryScore,
}

/// `(time, type)` plausibility bits of a predicted link for a mention.
/// NIL, missing and unknown predictions are implausible; an entity with no
/// mapped types is type-implausible.
pub fn plausibility_bits(predicted: Option<Link>, mention: &MentionAnnotation, kb: &Kb) -> (bool, bool) {
    let Some(Link::Entity(q)) = predicted else {
        return (false, false);
    };
    let Some(entity) = kb.get(q) else {
        return (false, false);
    };
    let time = phi_d(mention.document_date, kb.year(q));
    let mention_types: BTreeSet<String> = std::iter::once(mention.ner_type.clone()).collect();
    let types = kb.taxonomy().types_compatible(&mention_types, &entity.ner_types);
    (time, types)
}

/// Plausibility of predictions over mentions whose gold link is not NIL.
pub fn plausibility_score(
    predictions: &HashMap<String, Link>,
    gold: &[MentionAnnotation],
    kb: &Kb,
) -> Result<PlausibilityReport> {
    check_ids(predictions, gold)?;
    let (time, types): (Vec<bool>, Vec<bool>) = gold
        .iter()
        .filter(|m| !m.gold_link.is_nil())
        .map(|m| plausibility_bits(predictions.get(&m.id()).copied(), m, kb))
        .unzip();
    Ok(PlausibilityReport {
        n_scored: time.len(),
        time: BinaryScore::from_bits(&time),
        types: BinaryScore::from_bits(&types),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LinkKind {
    Nil,
    Qid,
    Missing,
}

impl LinkKind {
    fn of(link: Option<Link>) -> Self {
        match link {
            None => LinkKind::Missing,
            Some(Link::Nil) => LinkKind::Nil,
            Some(Link::Entity(_)) => LinkKind::Qid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BucketKey {
    pub target: LinkKind,
    /// Whether the target was among the retrieved candidates (filtered ones
    /// included). For NIL targets: whether a NIL strategy was offered.
    /// Absent when no candidate dump exists for the mention.
    pub target_in_topk: Option<bool>,
    pub predicted: LinkKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakdownRow {
    #[serde(flatten)]
    pub key: BucketKey,
    pub count: usize,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBreakdown {
    pub n_wrong: usize,
    pub rows: Vec<BreakdownRow>,
}

/// Puts every wrong or missing prediction into exactly one bucket.
pub fn error_breakdown(
    predictions: &HashMap<String, Link>,
    gold: &[MentionAnnotation],
    candidates: &HashMap<String, CandidateDump>,
) -> Result<ErrorBreakdown> {
    check_ids(predictions, gold)?;
    let mut counts: BTreeMap<BucketKey, usize> = BTreeMap::new();
    let mut n_wrong = 0;
    for m in gold {
        let id = m.id();
        let predicted = predictions.get(&id).copied();
        if predicted == Some(m.gold_link) {
            continue;
        }
        n_wrong += 1;
        let in_topk = candidates.get(&id).map(|d| match m.gold_link {
            Link::Entity(q) => d.contains(q),
            Link::Nil => d.nil_in_candidates,
        });
        let key = BucketKey {
            target: LinkKind::of(Some(m.gold_link)),
            target_in_topk: in_topk,
            predicted: LinkKind::of(predicted),
        };
        *counts.entry(key).or_default() += 1;
    }
    let rows = counts
        .into_iter()
        .map(|(key, count)| BreakdownRow {
            key,
            count,
            share: ratio(count, n_wrong),
        })
        .collect();
    Ok(ErrorBreakdown { n_wrong, rows })
}

impl ErrorBreakdown {
    pub fn share(&self, key: BucketKey) -> f64 {
        self.rows.iter().find(|r| r.key == key).map_or(0.0, |r| r.share)
    }
}

/// Nominal Krippendorff's alpha. `units[u][c]` is coder `c`'s value for unit
/// `u`; units with fewer than two values are not pairable and are skipped.
pub fn krippendorff_alpha<T: Ord + Clone>(units: &[Vec<Option<T>>]) -> Result<f64> {
    let mut labels: BTreeMap<T, usize> = BTreeMap::new();
    let mut pairable: Vec<Vec<usize>> = Vec::new();
    for unit in units {
        let values: Vec<usize> = unit
            .iter()
            .flatten()
            .map(|v| {
                let next = labels.len();
                *labels.entry(v.clone()).or_insert(next)
            })
            .collect();
        if values.len() >= 2 {
            pairable.push(values);
        }
    }
    if pairable.is_empty() {
        return Err(Error::Eval("no unit is coded by two or more annotators".into()));
    }

    let q = labels.len();
    let mut o = vec![vec![0.0f64; q]; q];
    for values in &pairable {
        let w = 1.0 / (values.len() - 1) as f64;
        for (i, &c) in values.iter().enumerate() {
            for (j, &k) in values.iter().enumerate() {
                if i != j {
                    o[c][k] += w;
                }
            }
        }
    }
    let n_c: Vec<f64> = o.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = n_c.iter().sum();
    let mut d_o = 0.0;
    let mut d_e = 0.0;
    for c in 0..q {
        for k in 0..q {
            if c != k {
                d_o += o[c][k];
                d_e += n_c[c] * n_c[k];
            }
        }
    }
    d_o /= n;
    d_e /= n * (n - 1.0);
    if d_o == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - d_o / d_e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    /// Two-sided, from the t approximation with `n - 2` degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

/// 1-based ranks; tied values share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Rank correlation. `None` when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<SpearmanResult>> {
    if x.len() != y.len() {
        return Err(Error::Eval("spearman inputs differ in length".into()));
    }
    if x.len() < 3 {
        return Err(Error::Eval("spearman needs at least 3 pairs".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Eval("spearman inputs must be finite".into()));
    }
    let Some(rho) = pearson(&average_ranks(x), &average_ranks(y)) else {
        return Ok(None);
    };
    let n = x.len();
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(Some(SpearmanResult { rho, p_value, n }))
}

/// Wrong QID predictions more popular than the gold entity, over all scored
/// mentions.
pub fn popularity_preference(
    predictions: &HashMap<String, Link>,
    gold: &[MentionAnnotation],
    kb: &Kb,
) -> Result<f64> {
    check_ids(predictions, gold)?;
    let popularity = |q: Qid| kb.get(q).map(|e| e.popularity);
    let hits = gold
        .iter()
        .filter(|m| match (predictions.get(&m.id()), m.gold_link) {
            (Some(&Link::Entity(p)), Link::Entity(g)) if p != g => {
                matches!((popularity(p), popularity(g)), (Some(a), Some(b)) if a > b)
            }
            _ => false,
        })
        .count();
    Ok(ratio(hits, gold.len()))
}

/// Popularity against correctness for every mention with a QID gold link.
pub fn popularity_correlation(
    predictions: &HashMap<String, Link>,
    gold: &[MentionAnnotation],
    kb: &Kb,
) -> Result<Option<SpearmanResult>> {
    check_ids(predictions, gold)?;
    let (pop, correct): (Vec<f64>, Vec<f64>) = gold
        .iter()
        .filter_map(|m| {
            let q = m.gold_link.qid()?;
            let p = kb.get(q)?.popularity as f64;
            let ok = predictions.get(&m.id()) == Some(&m.gold_link);
            Some((p, if ok { 1.0 } else { 0.0 }))
        })
        .unzip();
    if pop.len() < 3 {
        return Ok(None);
    }
    spearman(&pop, &correct)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: u64,
    /// Exclusive.
    pub upper: u64,
    pub count: usize,
}

fn log_bin(p: u64) -> Option<u32> {
    (p > 0).then(|| p.ilog10())
}

/// Log10 histogram over the popularity of distinct gold entities. Zero
/// popularity gets its own `[0, 1)` bin. Bins run contiguously from the
/// lowest to the highest occupied one.
pub fn popularity_histogram(kb: &Kb, gold_links: &[Link]) -> Vec<HistogramBin> {
    let qids: BTreeSet<Qid> = gold_links.iter().filter_map(Link::qid).collect();
    let mut counts: BTreeMap<Option<u32>, usize> = BTreeMap::new();
    for q in qids {
        match kb.get(q) {
            Some(e) => *counts.entry(log_bin(e.popularity)).or_default() += 1,
            None => log::warn!("gold entity {q} is not in the KB"),
        }
    }
    let (Some(first), Some(last)) = (counts.keys().next().copied(), counts.keys().last().copied()) else {
        return Vec::new();
    };
    let mut bins = Vec::new();
    if first.is_none() {
        bins.push(HistogramBin { lower: 0, upper: 1, count: counts[&None] });
    }
    if let Some(hi) = last {
        let lo = first.unwrap_or(0);
        for k in lo..=hi {
            bins.push(HistogramBin {
                lower: 10u64.pow(k),
                upper: 10u64.saturating_pow(k + 1),
                count: counts.get(&Some(k)).copied().unwrap_or(0),
            });
        }
    }
    bins
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut s = String::from("bin_lower,bin_upper,count\n");
    for b in bins {
        let _ = writeln!(s, "{},{},{}", b.lower, b.upper, b.count);
    }
    s
}

/// Everything `eval` reports for one prediction file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub result: EvalResult,
    pub nil_share: f64,
    pub plausibility: Option<PlausibilityReport>,
    pub breakdown: ErrorBreakdown,
    pub popularity_preference: Option<f64>,
    pub popularity_correlation: Option<SpearmanResult>,
}

pub fn evaluate(
    predictions: &HashMap<String, Link>,
    gold: &[MentionAnnotation],
    kb: Option<&Kb>,
    candidates: &HashMap<String, CandidateDump>,
) -> Result<EvalReport> {
    let result = score(predictions, gold)?;
    let nil_share = ratio(gold.iter().filter(|m| m.gold_link.is_nil()).count(), gold.len());
    let (plausibility, preference, correlation) = match kb {
        Some(kb) => (
            Some(plausibility_score(predictions, gold, kb)?),
            Some(popularity_preference(predictions, gold, kb)?),
            popularity_correlation(predictions, gold, kb)?,
        ),
        None => (None, None, None),
    };
    Ok(EvalReport {
        result,
        nil_share,
        plausibility,
        breakdown: error_breakdown(predictions, gold, candidates)?,
        popularity_preference: preference,
        popularity_correlation: correlation,
    })
}

fn kind_str(k: LinkKind) -> &'static str {
    match k {
        LinkKind::Nil => "NIL",
        LinkKind::Qid => "QID",
        LinkKind::Missing => "-",
    }
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let r = &self.result;
        let mut s = String::new();
        let _ = writeln!(s, "mentions    {}", r.n_total);
        let _ = writeln!(s, "correct     {}", r.n_correct);
        let _ = writeln!(s, "wrong       {}", r.n_wrong);
        let _ = writeln!(s, "missing     {}", r.n_missing);
        let _ = writeln!(s, "precision   {:.4}", r.precision);
        let _ = writeln!(s, "recall      {:.4}", r.recall);
        let _ = writeln!(s, "F1          {:.4}", r.f1);
        let _ = writeln!(s, "NIL share   {:.4}", self.nil_share);
        if let Some(p) = &self.plausibility {
            let _ = writeln!(s, "\nplausibility over {} linked mentions", p.n_scored);
            let _ = writeln!(s, "  time  acc {:.2}  F1 {:.2}", p.time.accuracy, p.time.f1);
            let _ = writeln!(s, "  type  acc {:.2}  F1 {:.2}", p.types.accuracy, p.types.f1);
        }
        if let Some(share) = self.popularity_preference {
            let _ = writeln!(s, "\nmore popular QID chosen  {:.2}%", 100.0 * share);
        }
        if let Some(c) = &self.popularity_correlation {
            let star = if c.p_value < 0.05 { "*" } else { "" };
            let _ = writeln!(s, "popularity spearman      {:.3}{star} (p={:.3}, n={})", c.rho, c.p_value, c.n);
        }
        let _ = writeln!(s, "\nerrors ({})", self.breakdown.n_wrong);
        let _ = writeln!(s, "  target  in-top-k  predicted  share");
        for row in &self.breakdown.rows {
            let topk = match row.key.target_in_topk {
                Some(true) => "yes",
                Some(false) => "no",
                None => "-",
            };
            let _ = writeln!(
                s,
                "  {:<6}  {:<8}  {:<9}  {:.4}",
                kind_str(row.key.target),
                topk,
                kind_str(row.key.predicted),
                row.share
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kbstore::{EmbeddingIndex, EntityRecord, NormMode, TypeTaxonomy};

    fn mention(i: usize, gold: Link, year: i32, ty: &str) -> MentionAnnotation {
        MentionAnnotation {
            document_id: "d".into(),
            document_date: year,
            sentence_index: i,
            token_span: (0, 1),
            surface: format!("m{i}"),
            ner_type: ty.into(),
            gold_link: gold,
            noisy: None,
            known_type: true,
        }
    }

    fn q(n: u64) -> Link {
        Link::Entity(Qid(n))
    }

    #[test]
    fn two_of_three() {
        let gold = vec![mention(0, q(1), 1900, "person"), mention(1, q(2), 1900, "person"), mention(2, Link::Nil, 1900, "person")];
        let preds: HashMap<String, Link> = [(gold[0].id(), q(1)), (gold[1].id(), q(3)), (gold[2].id(), Link::Nil)].into_iter().collect();
        let r = score(&preds, &gold).unwrap();
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!((r.precision, r.recall), (r.f1, r.f1));
        assert_eq!((r.n_correct, r.n_wrong, r.n_missing), (2, 1, 0));
    }

    #[test]
    fn missing_lowers_recall_only() {
        let gold = vec![mention(0, q(1), 1900, "person"), mention(1, q(2), 1900, "person")];
        let preds: HashMap<String, Link> = [(gold[0].id(), q(1))].into_iter().collect();
        let r = score(&preds, &gold).unwrap();
        assert_eq!((r.precision, r.recall), (1.0, 0.5));
        let mut bad = preds.clone();
        bad.insert("nowhere#0:0-1".into(), Link::Nil);
        assert!(score(&bad, &gold).is_err());
    }

    #[test]
    fn plausibility_f1_matches_accuracy_relation() {
        for acc in [0.67f64, 0.27] {
            let n = 100;
            let tp = (acc * n as f64).round() as usize;
            let bits: Vec<bool> = (0..n).map(|i| i < tp).collect();
            let s = BinaryScore::from_bits(&bits);
            assert!((s.f1 - 2.0 * acc / (1.0 + acc)).abs() < 1e-12);
        }
        assert!((2.0 * 0.67 / 1.67f64 - 0.80).abs() < 0.005);
        assert!((2.0 * 0.27 / 1.27f64 - 0.43).abs() < 0.005);
    }

    fn small_kb() -> Kb {
        let rec = |n: u64, pop: u64, year: Option<i64>, ty: &str| {
            let mut dates = BTreeMap::new();
            if let Some(y) = year {
                dates.insert("P569".to_string(), crate::kbstore::DateValue::Year(y));
            }
            EntityRecord {
                qid: Qid(n),
                label: format!("e{n}"),
                aliases: vec![],
                wikidata_types: Default::default(),
                ner_types: if ty.is_empty() { Default::default() } else { [ty.to_string()].into_iter().collect() },
                date_properties: dates,
                popularity: pop,
                embedding_id: None,
            }
        };
        Kb::new(
            vec![
                rec(1, 5, Some(1800), "person"),
                rec(2, 500, Some(1983), "person"),
                rec(3, 0, None, "location"),
                rec(4, 2000, None, ""),
            ],
            EmbeddingIndex::new(2, vec![], NormMode::Raw).unwrap(),
            TypeTaxonomy::builtin(),
        )
        .unwrap()
    }

    #[test]
    fn plausibility_bits_cases() {
        let kb = small_kb();
        let m = mention(0, q(1), 1824, "person");
        assert_eq!(plausibility_bits(Some(q(1)), &m, &kb), (true, true));
        assert_eq!(plausibility_bits(Some(q(2)), &m, &kb), (false, true));
        assert_eq!(plausibility_bits(Some(q(3)), &m, &kb), (true, false));
        assert_eq!(plausibility_bits(Some(q(4)), &m, &kb), (true, false));
        assert_eq!(plausibility_bits(Some(Link::Nil), &m, &kb), (false, false));
        assert_eq!(plausibility_bits(None, &m, &kb), (false, false));
    }

    #[test]
    fn preference_and_histogram() {
        let kb = small_kb();
        let gold: Vec<_> = (0..10).map(|i| mention(i, q(1), 1900, "person")).collect();
        let mut preds: HashMap<String, Link> = gold.iter().map(|m| (m.id(), q(1))).collect();
        assert_eq!(popularity_preference(&preds, &gold, &kb).unwrap(), 0.0);
        preds.insert(gold[3].id(), q(2));
        assert!((popularity_preference(&preds, &gold, &kb).unwrap() - 0.1).abs() < 1e-15);
        // less popular wrong answer does not count
        preds.insert(gold[3].id(), q(3));
        assert_eq!(popularity_preference(&preds, &gold, &kb).unwrap(), 0.0);

        assert!(popularity_histogram(&kb, &[]).is_empty());
        let h = popularity_histogram(&kb, &[q(2), q(2), Link::Nil]);
        assert_eq!(h, vec![HistogramBin { lower: 100, upper: 1000, count: 1 }]);
        let h = popularity_histogram(&kb, &[q(1), q(2), q(3), q(4)]);
        assert_eq!(
            h.iter().map(|b| (b.lower, b.count)).collect::<Vec<_>>(),
            vec![(0, 1), (1, 1), (10, 0), (100, 1), (1000, 1)]
        );
        assert!(histogram_csv(&h).starts_with("bin_lower,bin_upper,count\n0,1,1\n"));
    }

    #[test]
    fn breakdown_buckets() {
        let gold = vec![mention(0, q(5), 1900, "person"), mention(1, Link::Nil, 1900, "person"), mention(2, q(6), 1900, "person")];
        let preds: HashMap<String, Link> = [(gold[0].id(), Link::Nil), (gold[1].id(), q(7)), (gold[2].id(), q(6))].into_iter().collect();
        let dump = |m: &MentionAnnotation, qs: &[u64]| CandidateDump {
            mention_id: m.id(),
            surface: m.surface.clone(),
            ner_type: m.ner_type.clone(),
            document_date: m.document_date,
            k: 10,
            nil_in_candidates: false,
            candidates: qs
                .iter()
                .map(|&n| crate::retrieval::Candidate { qid: Qid(n), score: 0.5, filtered_by: None })
                .collect(),
        };
        let dumps: HashMap<String, CandidateDump> = [(gold[0].id(), dump(&gold[0], &[5, 9])), (gold[1].id(), dump(&gold[1], &[7]))].into_iter().collect();
        let b = error_breakdown(&preds, &gold, &dumps).unwrap();
        assert_eq!(b.n_wrong, 2);
        let k1 = BucketKey { target: LinkKind::Qid, target_in_topk: Some(true), predicted: LinkKind::Nil };
        let k2 = BucketKey { target: LinkKind::Nil, target_in_topk: Some(false), predicted: LinkKind::Qid };
        assert_eq!((b.share(k1), b.share(k2)), (0.5, 0.5));
        let all: HashMap<String, Link> = gold.iter().map(|m| (m.id(), m.gold_link)).collect();
        let b = error_breakdown(&all, &gold, &dumps).unwrap();
        assert_eq!(b.n_wrong, 0);
        assert!(b.rows.is_empty());
    }

    #[test]
    fn alpha_edge_cases() {
        let perfect: Vec<Vec<Option<&str>>> = (0..10).map(|i| vec![Some(["a", "b", "c"][i % 3]); 2]).collect();
        assert_eq!(krippendorff_alpha(&perfect).unwrap(), 1.0);
        let opposite: Vec<Vec<Option<u8>>> = (0..10).map(|i| vec![Some((i % 2) as u8), Some(1 - (i % 2) as u8)]).collect();
        assert!(krippendorff_alpha(&opposite).unwrap() <= 0.0);
        let single: Vec<Vec<Option<u8>>> = vec![vec![Some(1), None], vec![None, Some(2)]];
        assert!(krippendorff_alpha(&single).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn spearman_extremes() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman(&x, &[2.0, 4.0, 8.0, 16.0, 32.0]).unwrap().unwrap().rho, 1.0);
        assert_eq!(spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap().unwrap().rho, -1.0);
        assert!(spearman(&x, &[1.0; 5]).unwrap().is_none());
        assert!(spearman(&x[..2], &x[..2]).is_err());
        let r = spearman(&x, &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap().unwrap();
        assert!((r.rho - 0.8).abs() < 1e-12);
        assert!(r.p_value > 0.05 && r.p_value < 0.2);
    }
}
