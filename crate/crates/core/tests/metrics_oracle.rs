mod common;

use actgraph::metrics::{bleu4, cider, clipped_counts, evaluate_pairs, rouge_l, EvalPair, MetricReport};
use common::oracle::{self, Item};

const TOL: f64 = 1e-9;

fn pairs(items: &[Item]) -> Vec<EvalPair> {
    items
        .iter()
        .map(|it| {
            let refs: Vec<String> = it.references.iter().map(|s| s.to_string()).collect();
            EvalPair::new(it.id, it.candidate, &refs).unwrap()
        })
        .collect()
}

fn report(items: &[Item]) -> MetricReport {
    evaluate_pairs(&pairs(items)).unwrap()
}

#[test]
fn fixtures_match_oracle() {
    for (name, items) in oracle::fixtures() {
        let r = report(&items);
        assert!((r.bleu4 - oracle::bleu4(&items)).abs() <= TOL, "{name}: bleu {} vs {}", r.bleu4, oracle::bleu4(&items));
        assert!((r.rouge_l - oracle::rouge_corpus(&items)).abs() <= TOL, "{name}: rouge");
        assert!((r.cider - oracle::cider(&items)).abs() <= TOL, "{name}: cider {} vs {}", r.cider, oracle::cider(&items));
        for (got, it) in r.items.iter().zip(&items) {
            assert_eq!(got.video_id, it.id);
            assert!((got.rouge_l - oracle::rouge_l(it)).abs() <= TOL, "{name}/{}: rouge", it.id);
        }
        for (got, want) in r.items.iter().zip(oracle::cider_items(&items)) {
            assert!((got.cider - want).abs() <= TOL, "{name}/{}: cider {} vs {want}", got.video_id, got.cider);
        }
        assert!((0.0..=1.0).contains(&r.bleu4) && (0.0..=1.0).contains(&r.rouge_l) && (0.0..=10.0).contains(&r.cider));
    }
}

#[test]
fn identical_pairs_reach_maxima() {
    let (_, items) = oracle::fixtures().into_iter().next().unwrap();
    let r = report(&items);
    assert!((r.bleu4 - 1.0).abs() <= TOL);
    assert!((r.rouge_l - 1.0).abs() <= TOL);
    for it in &r.items {
        assert!((it.cider - 10.0).abs() <= TOL);
    }
}

#[test]
fn clipped_precision_is_two_sevenths() {
    let p = &pairs(&[oracle::item("v", "the the the the the the the", &["the cat is on the mat"])])[0];
    let (m, t) = clipped_counts(&p.candidate, &p.references, 1);
    assert_eq!((m, t), (2, 7));
}

#[test]
fn brevity_penalty_scales_prefix_match() {
    let items = [oracle::item("v", "one two three four five", &["one two three four five six seven"])];
    let expected = (1.0f64 - 7.0 / 5.0).exp();
    assert!((bleu4(&pairs(&items)).unwrap() - expected).abs() <= TOL);
}

#[test]
fn rouge_hand_value() {
    let p = &pairs(&[oracle::item("v", "a b c d", &["a c d e"])])[0];
    assert!((rouge_l(p) - 0.75).abs() <= TOL);
}

fn doubled(base: &[Item]) -> Vec<Item> {
    base.iter()
        .chain(base.iter())
        .map(|it| oracle::item(it.id, it.candidate, &it.references))
        .collect()
}

/// Every candidate n-gram occurs in some reference, so all document
/// frequencies are at least one and doubling the corpus keeps N/df.
#[test]
fn doubling_corpus_keeps_cider_items() {
    let base = [
        oracle::item("v1", "a dog runs fast", &["a dog runs fast in the park"]),
        oracle::item("v2", "a man cooks dinner", &["a man cooks dinner at home"]),
        oracle::item("v3", "two cats sleep", &["two cats sleep together"]),
        oracle::item("v4", "a car drives on the road", &["a car drives on the road at night"]),
    ];
    let (_, single) = cider(&pairs(&base)).unwrap();
    let (_, double) = cider(&pairs(&doubled(&base))).unwrap();
    let brute = oracle::cider_items(&base);
    for (i, s) in single.iter().enumerate() {
        assert!(*s > 0.0);
        assert!((s - double[i]).abs() <= TOL);
        assert!((s - double[i + base.len()]).abs() <= TOL);
        assert!((s - brute[i]).abs() <= TOL);
    }
}

/// A candidate n-gram absent from all references is clamped to df = 1, so
/// its weight ln(N) grows when the corpus is doubled.
#[test]
fn unseen_ngrams_break_doubling_invariance() {
    let base = [
        oracle::item("v1", "a dog runs very fast", &["a dog runs fast in the park"]),
        oracle::item("v2", "a man cooks dinner", &["a man cooks dinner at home"]),
    ];
    let (_, single) = cider(&pairs(&base)).unwrap();
    let (_, double) = cider(&pairs(&doubled(&base))).unwrap();
    assert!((single[0] - double[0]).abs() > 1e-6);
    assert!((single[1] - double[1]).abs() <= TOL);
    let brute = oracle::cider_items(&doubled(&base));
    assert!((double[0] - brute[0]).abs() <= TOL);
}

#[test]
fn corpus_scores_ignore_pair_order() {
    for (name, items) in oracle::fixtures() {
        let p = pairs(&items);
        let a = evaluate_pairs(&p).unwrap();
        for shift in 1..p.len() {
            let mut q = p.clone();
            q.rotate_left(shift);
            q.reverse();
            let b = evaluate_pairs(&q).unwrap();
            assert_eq!((a.bleu4, a.rouge_l, a.cider), (b.bleu4, b.rouge_l, b.cider), "{name}");
        }
    }
}
