//! NIL prediction from candidate scores and surface similarity.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::Link;

/// Candidate scores sorted descending.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(mut scores: Vec<f64>) -> Result<Self> {
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidDocument("non-finite candidate score".into()));
        }
        scores.sort_by(|a, b| b.total_cmp(a));
        Ok(ScoreVector(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn top(&self) -> Option<f64> {
        self.0.first().copied()
    }

    pub fn second(&self) -> Option<f64> {
        self.0.get(1).copied()
    }

    pub fn median(&self) -> Option<f64> {
        let n = self.0.len();
        match n {
            0 => None,
            _ if n % 2 == 1 => Some(self.0[n / 2]),
            _ => Some((self.0[n / 2 - 1] + self.0[n / 2]) / 2.0),
        }
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.0.is_empty()).then(|| self.0.iter().sum::<f64>() / self.0.len() as f64)
    }
}

/// `(a - b) / ((a + b) / 2)`. A zero denominator gives 0 when `a == b` and
/// an infinity of the sign of `a - b` otherwise.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    let num = a - b;
    let den = (a + b) / 2.0;
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            num.signum() * f64::INFINITY
        }
    } else {
        num / den
    }
}

pub fn nil_fixed(s: &ScoreVector, tau: f64) -> bool {
    s.top().map_or(true, |top| top < tau)
}

/// Falls back to [`nil_fixed`] with fewer than two scores.
pub fn nil_dev_top(s: &ScoreVector, tau: f64) -> bool {
    match (s.top(), s.second()) {
        (Some(a), Some(b)) => relative_gap(a, b) < tau,
        _ => nil_fixed(s, tau),
    }
}

pub fn nil_dev_median(s: &ScoreVector, tau: f64) -> bool {
    match (s.top(), s.median()) {
        (Some(a), Some(m)) => relative_gap(a, m) < tau,
        _ => true,
    }
}

pub fn nil_dev_mean(s: &ScoreVector, tau: f64) -> bool {
    match (s.top(), s.mean()) {
        (Some(a), Some(m)) => relative_gap(a, m) < tau,
        _ => true,
    }
}

pub fn levenshtein_sim(a: &str, b: &str) -> f64 {
    let max = a.chars().count().max(b.chars().count());
    if max == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(a, b) as f64 / max as f64
}

fn bigrams(s: &str) -> BTreeSet<(char, char)> {
    let chars: Vec<char> = s.chars().collect();
    chars.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Jaccard similarity of character-bigram sets. Strings too short to have a
/// bigram score 1 against an identical string and 0 otherwise.
pub fn jaccard_sim(a: &str, b: &str) -> f64 {
    let (x, y) = (bigrams(a), bigrams(b));
    if x.is_empty() && y.is_empty() {
        return if a == b { 1.0 } else { 0.0 };
    }
    let inter = x.intersection(&y).count();
    let union = x.union(&y).count();
    inter as f64 / union as f64
}

/// Share of matching positions, the shorter string padded on the right.
pub fn hamming_sim(a: &str, b: &str) -> f64 {
    let (x, y): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let max = x.len().max(y.len());
    if max == 0 {
        return 1.0;
    }
    let same = x.iter().zip(&y).filter(|(p, q)| p == q).count();
    same as f64 / max as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NilKind {
    Fixed,
    DevTop,
    DevMedian,
    DevMean,
    Levenshtein,
    Jaccard,
    Hamming,
    Logistic,
}

impl NilKind {
    pub const THRESHOLD_KINDS: [NilKind; 7] = [
        NilKind::Fixed,
        NilKind::DevTop,
        NilKind::DevMedian,
        NilKind::DevMean,
        NilKind::Levenshtein,
        NilKind::Jaccard,
        NilKind::Hamming,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NilKind::Fixed => "fixed",
            NilKind::DevTop => "dev_top",
            NilKind::DevMedian => "dev_median",
            NilKind::DevMean => "dev_mean",
            NilKind::Levenshtein => "levenshtein",
            NilKind::Jaccard => "jaccard",
            NilKind::Hamming => "hamming",
            NilKind::Logistic => "logistic",
        }
    }

    pub fn is_string(self) -> bool {
        matches!(self, NilKind::Levenshtein | NilKind::Jaccard | NilKind::Hamming)
    }
}

impl fmt::Display for NilKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NilKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        [NilKind::Logistic]
            .into_iter()
            .chain(NilKind::THRESHOLD_KINDS)
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::Config(format!("unknown NIL heuristic `{s}`")))
    }
}

pub fn string_sim(kind: NilKind, a: &str, b: &str) -> Option<f64> {
    match kind {
        NilKind::Levenshtein => Some(levenshtein_sim(a, b)),
        NilKind::Jaccard => Some(jaccard_sim(a, b)),
        NilKind::Hamming => Some(hamming_sim(a, b)),
        _ => None,
    }
}

/// NIL iff the similarity of mention and entity label is below `tau`.
pub fn nil_string(mention: &str, label: &str, kind: NilKind, tau: f64) -> bool {
    string_sim(kind, mention, label).map_or(true, |s| s < tau)
}

/// What a NIL rule looks at for one mention.
#[derive(Debug, Clone, Copy)]
pub struct NilInput<'a> {
    pub scores: &'a ScoreVector,
    pub surface: &'a str,
    /// Label of the top surviving candidate.
    pub label: Option<&'a str>,
}

pub const FEATURE_ORDER: [&str; 6] = ["s0", "s0_minus_s1", "dev_top", "dev_median", "dev_mean", "levenshtein"];

const FEATURE_CLAMP: f64 = 2.0;

/// Logistic features, without the bias term. Ratios are clamped to
/// `[-2, 2]`, the range they cover for non-negative scores.
pub fn features(input: &NilInput<'_>) -> [f64; 6] {
    let s = input.scores;
    let s0 = s.top().unwrap_or(0.0);
    let s1 = s.second().unwrap_or(0.0);
    let clamp = |v: f64| v.clamp(-FEATURE_CLAMP, FEATURE_CLAMP);
    let lev = input.label.map_or(0.0, |l| levenshtein_sim(input.surface, l));
    [
        s0,
        s0 - s1,
        clamp(relative_gap(s0, s1)),
        clamp(relative_gap(s0, s.median().unwrap_or(0.0))),
        clamp(relative_gap(s0, s.mean().unwrap_or(0.0))),
        lev,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NilRule {
    pub kind: NilKind,
    #[serde(default)]
    pub tau: f64,
    /// Logistic only: bias first, then one weight per feature.
    #[serde(default)]
    pub weights: Vec<f64>,
    #[serde(default)]
    pub feature_order: Vec<String>,
}

impl NilRule {
    pub fn threshold(kind: NilKind, tau: f64) -> Result<Self> {
        let rule = NilRule {
            kind,
            tau,
            weights: Vec::new(),
            feature_order: Vec::new(),
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn logistic(weights: Vec<f64>) -> Result<Self> {
        let rule = NilRule {
            kind: NilKind::Logistic,
            tau: 0.0,
            weights,
            feature_order: FEATURE_ORDER.iter().map(|s| s.to_string()).collect(),
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.kind == NilKind::Logistic {
            if self.weights.len() != FEATURE_ORDER.len() + 1 {
                return Err(Error::Config(format!(
                    "logistic rule needs {} weights, got {}",
                    FEATURE_ORDER.len() + 1,
                    self.weights.len()
                )));
            }
            if self.feature_order != FEATURE_ORDER {
                return Err(Error::Config("logistic rule has an unexpected feature order".into()));
            }
            if self.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::Config("logistic rule has non-finite weights".into()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rule: NilRule =
            serde_json::from_str(text).map_err(|e| Error::json("NIL rule", e))?;
        rule.validate()?;
        Ok(rule)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("NIL rule serializes")
    }

    /// An empty score vector is always NIL.
    pub fn predict(&self, input: &NilInput<'_>) -> bool {
        let s = input.scores;
        if s.is_empty() {
            return true;
        }
        match self.kind {
            NilKind::Fixed => nil_fixed(s, self.tau),
            NilKind::DevTop => nil_dev_top(s, self.tau),
            NilKind::DevMedian => nil_dev_median(s, self.tau),
            NilKind::DevMean => nil_dev_mean(s, self.tau),
            kind if kind.is_string() => match input.label {
                Some(label) => nil_string(input.surface, label, kind, self.tau),
                None => true,
            },
            _ => logistic_predict(&self.weights, &features(input)),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn linear(weights: &[f64], x: &[f64]) -> f64 {
    weights[0] + weights[1..].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
}

pub fn logistic_probability(weights: &[f64], x: &[f64]) -> f64 {
    sigmoid(linear(weights, x))
}

/// NIL iff the probability is strictly above one half.
pub fn logistic_predict(weights: &[f64], x: &[f64]) -> bool {
    logistic_probability(weights, x) > 0.5
}

/// Mean binary cross-entropy.
pub fn logistic_loss(weights: &[f64], xs: &[Vec<f64>], ys: &[bool]) -> f64 {
    let total: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let z = linear(weights, x);
            softplus(z) - if y { z } else { 0.0 }
        })
        .sum();
    total / xs.len() as f64
}

/// Gradient of [`logistic_loss`] with respect to the weights.
pub fn logistic_gradient(weights: &[f64], xs: &[Vec<f64>], ys: &[bool]) -> Vec<f64> {
    let mut g = vec![0.0; weights.len()];
    for (x, &y) in xs.iter().zip(ys) {
        let r = sigmoid(linear(weights, x)) - if y { 1.0 } else { 0.0 };
        g[0] += r;
        for (gi, v) in g[1..].iter_mut().zip(x) {
            *gi += r * v;
        }
    }
    let n = xs.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

/// Full-batch gradient descent from zero weights. Returns bias-first weights.
pub fn fit_logistic(xs: &[Vec<f64>], ys: &[bool], epochs: usize, lr: f64) -> Result<Vec<f64>> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Eval("logistic training needs one label per non-empty row".into()));
    }
    let dim = xs[0].len();
    if xs.iter().any(|x| x.len() != dim) {
        return Err(Error::Eval("feature rows differ in length".into()));
    }
    if !(lr > 0.0) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    let positives = ys.iter().filter(|&&y| y).count();
    if positives == 0 || positives == ys.len() {
        log::warn!("single-class training data, fitting a constant predictor");
        let mut w = vec![0.0; dim + 1];
        w[0] = if positives == 0 { -1.0 } else { 1.0 };
        return Ok(w);
    }
    let mut w = vec![0.0; dim + 1];
    for _ in 0..epochs {
        let g = logistic_gradient(&w, xs, ys);
        for (wi, gi) in w.iter_mut().zip(g) {
            *wi -= lr * gi;
        }
    }
    Ok(w)
}

/// Trains the NIL classifier on the fixed feature set.
pub fn logistic_train(inputs: &[NilInput<'_>], gold_nil: &[bool], epochs: usize, lr: f64) -> Result<NilRule> {
    let xs: Vec<Vec<f64>> = inputs.iter().map(|i| features(i).to_vec()).collect();
    NilRule::logistic(fit_logistic(&xs, gold_nil, epochs, lr)?)
}

/// One development mention for threshold sweeping.
#[derive(Debug, Clone, PartialEq)]
pub struct DevCase {
    pub scores: ScoreVector,
    pub surface: String,
    pub label: Option<String>,
    /// Link chosen when the rule does not fire.
    pub linked: Link,
    pub gold: Link,
}

impl DevCase {
    fn input(&self) -> NilInput<'_> {
        NilInput {
            scores: &self.scores,
            surface: &self.surface,
            label: self.label.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub kind: NilKind,
    pub tau: f64,
    pub f1: f64,
}

pub const SWEEP_STEPS: usize = 1000;

/// Micro-F1 of a rule over development cases. Every case gets a prediction,
/// so this equals accuracy.
pub fn dev_f1(rule: &NilRule, dev: &[DevCase]) -> f64 {
    if dev.is_empty() {
        return 0.0;
    }
    let correct = dev
        .iter()
        .filter(|c| {
            let predicted = if rule.predict(&c.input()) { Link::Nil } else { c.linked };
            predicted == c.gold
        })
        .count();
    correct as f64 / dev.len() as f64
}

/// Best `tau` on the grid `0, 0.001, ..., 1`; ties go to the smallest.
pub fn sweep_tau(kind: NilKind, dev: &[DevCase]) -> Result<SweepResult> {
    if kind == NilKind::Logistic {
        return Err(Error::Config("the logistic rule has no threshold".into()));
    }
    if dev.is_empty() {
        return Err(Error::Eval("threshold sweep needs development data".into()));
    }
    let mut best = SweepResult {
        kind,
        tau: 0.0,
        f1: f64::NEG_INFINITY,
    };
    for i in 0..=SWEEP_STEPS {
        let tau = i as f64 / SWEEP_STEPS as f64;
        let f1 = dev_f1(&NilRule::threshold(kind, tau)?, dev);
        if f1 > best.f1 {
            best.tau = tau;
            best.f1 = f1;
        }
    }
    Ok(best)
}
