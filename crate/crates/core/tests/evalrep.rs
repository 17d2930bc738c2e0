use std::collections::{BTreeMap, HashMap};

use chronolink::corpus::MentionAnnotation;
use chronolink::evalrep::{average_ranks, krippendorff_alpha, score, spearman};
use chronolink::{Link, Qid};
use proptest::prelude::*;

fn mention(i: usize, gold: Link) -> MentionAnnotation {
    MentionAnnotation {
        document_id: "d".into(),
        document_date: 1880,
        sentence_index: i,
        token_span: (0, 1),
        surface: format!("m{i}"),
        ner_type: "person".into(),
        gold_link: gold,
        noisy: None,
        known_type: true,
    }
}

/// Nominal alpha from pair counts, without a coincidence matrix.
fn alpha_oracle(units: &[Vec<Option<u32>>]) -> f64 {
    let mut disagree = 0.0;
    let mut totals: BTreeMap<u32, f64> = BTreeMap::new();
    let mut n = 0.0;
    for unit in units {
        let vals: Vec<u32> = unit.iter().flatten().copied().collect();
        let m = vals.len();
        if m < 2 {
            continue;
        }
        let mut pairs = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i != j && vals[i] != vals[j] {
                    pairs += 1.0;
                }
            }
        }
        disagree += pairs / (m - 1) as f64;
        for v in vals {
            *totals.entry(v).or_default() += 1.0;
            n += 1.0;
        }
    }
    let sum_sq: f64 = totals.values().map(|c| c * c).sum();
    let expected = (n * n - sum_sq) / (n * (n - 1.0));
    if disagree == 0.0 {
        return 1.0;
    }
    1.0 - (disagree / n) / expected
}

fn reference_units() -> Vec<Vec<Option<u32>>> {
    // four coders, twelve units, blanks as None
    let rows: [[Option<u32>; 12]; 4] = [
        [Some(1), Some(2), Some(3), Some(3), Some(2), Some(1), Some(4), Some(1), Some(2), None, None, None],
        [Some(1), Some(2), Some(3), Some(3), Some(2), Some(2), Some(4), Some(1), Some(2), Some(5), None, Some(3)],
        [None, Some(3), Some(3), Some(3), Some(2), Some(3), Some(4), Some(2), Some(2), Some(5), Some(1), None],
        [Some(1), Some(2), Some(3), Some(3), Some(2), Some(4), Some(4), Some(1), Some(2), Some(5), Some(1), None],
    ];
    (0..12).map(|u| rows.iter().map(|r| r[u]).collect()).collect()
}

#[test]
fn reference_reliability_table() {
    let units = reference_units();
    let alpha = krippendorff_alpha(&units).unwrap();
    assert!((alpha - alpha_oracle(&units)).abs() < 1e-9);
    assert!((alpha - 0.743).abs() < 5e-4);
}

#[test]
fn perfect_agreement_is_one() {
    let units: Vec<Vec<Option<&str>>> = vec![vec![Some("a"), Some("a")], vec![Some("b"), Some("b"), None]];
    assert_eq!(krippendorff_alpha(&units).unwrap(), 1.0);
    let lonely: Vec<Vec<Option<&str>>> = vec![vec![Some("a"), None]];
    assert!(krippendorff_alpha(&lonely).is_err());
}

#[test]
fn scoring_counts() {
    let gold = vec![
        mention(0, Link::Entity(Qid(1))),
        mention(1, Link::Nil),
        mention(2, Link::Entity(Qid(3))),
        mention(3, Link::Entity(Qid(4))),
    ];
    let mut preds = HashMap::new();
    preds.insert(gold[0].id(), Link::Entity(Qid(1)));
    preds.insert(gold[1].id(), Link::Nil);
    preds.insert(gold[2].id(), Link::Entity(Qid(9)));
    let r = score(&preds, &gold).unwrap();
    assert_eq!((r.n_correct, r.n_wrong, r.n_missing, r.n_total), (2, 1, 1, 4));
    assert!((r.precision - 2.0 / 3.0).abs() < 1e-12);
    assert!((r.recall - 0.5).abs() < 1e-12);
    assert!((r.f1 - 4.0 / 7.0).abs() < 1e-12);

    preds.insert("elsewhere#0:0-1".into(), Link::Nil);
    assert!(score(&preds, &gold).is_err());
}

#[test]
fn spearman_handles_ties_and_constants() {
    assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap().is_none());
    assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]).unwrap().unwrap();
    assert_eq!(r.rho, 1.0);
}

fn links() -> impl Strategy<Value = Link> {
    prop_oneof![Just(Link::Nil), (1u64..6).prop_map(|q| Link::Entity(Qid(q)))]
}

proptest! {
    #[test]
    fn alpha_matches_pair_oracle(units in prop::collection::vec(prop::collection::vec(prop::option::of(0u32..4), 2..5), 2..15)) {
        prop_assume!(units.iter().any(|u| u.iter().flatten().count() >= 2));
        let pairable: usize = units.iter().map(|u| u.iter().flatten().count()).filter(|&c| c >= 2).sum();
        prop_assume!(pairable >= 3);
        let got = krippendorff_alpha(&units).unwrap();
        let want = alpha_oracle(&units);
        if want.is_finite() {
            prop_assert!((got - want).abs() < 1e-9);
        }
        // relabelling values leaves alpha unchanged
        let relabeled: Vec<Vec<Option<u32>>> = units.iter().map(|u| u.iter().map(|v| v.map(|x| 100 - 7 * x)).collect()).collect();
        let again = krippendorff_alpha(&relabeled).unwrap();
        prop_assert!(got == again || (got - again).abs() < 1e-12);
    }

    #[test]
    fn spearman_is_monotone_invariant(x in prop::collection::vec(-100.0f64..100.0, 3..30), y_seed in prop::collection::vec(-100.0f64..100.0, 30)) {
        let y = &y_seed[..x.len()];
        let base = spearman(&x, y).unwrap();
        let transformed: Vec<f64> = x.iter().map(|v| (v / 50.0).exp() * 3.0 + 1.0).collect();
        let moved = spearman(&transformed, y).unwrap();
        match (base, moved) {
            (Some(a), Some(b)) => prop_assert!((a.rho - b.rho).abs() < 1e-9),
            (a, b) => prop_assert_eq!(a.is_none(), b.is_none()),
        }
    }

    #[test]
    fn scores_ignore_order(golds in prop::collection::vec(links(), 1..30), preds in prop::collection::vec(prop::option::of(links()), 30), rot in 0usize..30) {
        let gold: Vec<MentionAnnotation> = golds.iter().enumerate().map(|(i, g)| mention(i, *g)).collect();
        let p: HashMap<String, Link> = gold.iter().zip(&preds).filter_map(|(m, p)| p.map(|l| (m.id(), l))).collect();
        let mut rotated = gold.clone();
        rotated.rotate_left(rot % gold.len());
        prop_assert_eq!(score(&p, &gold).unwrap(), score(&p, &rotated).unwrap());
    }

    #[test]
    fn always_nil_scores_the_nil_share(golds in prop::collection::vec(links(), 1..40)) {
        let gold: Vec<MentionAnnotation> = golds.iter().enumerate().map(|(i, g)| mention(i, *g)).collect();
        let p: HashMap<String, Link> = gold.iter().map(|m| (m.id(), Link::Nil)).collect();
        let share = golds.iter().filter(|g| **g == Link::Nil).count() as f64 / golds.len() as f64;
        let r = score(&p, &gold).unwrap();
        prop_assert!((r.f1 - share).abs() < 1e-12);
        prop_assert!((r.precision - share).abs() < 1e-12);
    }
}
