use std::collections::BTreeSet;

use proptest::prelude::*;
use spanib_core::corpus::{EntityMention, MentionDictionary, Sentence, SurfaceMatch};
use spanib_core::decode_eval::{evaluate, heuristic_decode, micro_f1, ScoredSpan};

const LABELS: [&str; 3] = ["LOC", "ORG", "PER"];

fn scored_span() -> impl Strategy<Value = ScoredSpan> {
    (1usize..13, 0usize..4, 0usize..3, 0u8..6)
        .prop_map(|(start, extra, l, p)| ScoredSpan::new(start, start + extra, LABELS[l], 0.4 + 0.1 * f64::from(p)))
}

/// Repeatedly takes the best remaining candidate and marks its tokens as used.
fn reference_decode(spans: &[ScoredSpan]) -> Vec<ScoredSpan> {
    let key = |s: &ScoredSpan| (std::cmp::Reverse(s.prob.to_bits()), s.start, s.end - s.start, s.label.clone());
    let mut remaining: Vec<ScoredSpan> = spans.to_vec();
    let mut used: BTreeSet<usize> = BTreeSet::new();
    let mut kept = Vec::new();
    loop {
        remaining.retain(|s| (s.start..=s.end).all(|t| !used.contains(&t)));
        let Some(best) = remaining.iter().min_by_key(|s| key(s)).cloned() else {
            break;
        };
        used.extend(best.start..=best.end);
        kept.push(best);
    }
    kept.sort_by_key(|s| s.start);
    kept
}

/// Counts by nested loops over deduplicated spans.
fn brute_force(pred: &[Vec<ScoredSpan>], gold: &[Sentence]) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        let mut seen: Vec<(usize, usize, &str)> = Vec::new();
        for s in p {
            let k = (s.start, s.end, s.label.as_str());
            if !seen.contains(&k) {
                seen.push(k);
            }
        }
        for k in &seen {
            if g.mentions.iter().any(|m| (m.start, m.end, m.etype.as_str()) == *k) {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        for m in &g.mentions {
            if !seen.contains(&(m.start, m.end, m.etype.as_str())) {
                fn_ += 1;
            }
        }
    }
    (tp, fp, fn_)
}

fn gold_sentence() -> impl Strategy<Value = Sentence> {
    prop::collection::vec((0usize..3, 1usize..3, 0usize..3), 0..4).prop_map(|layout| {
        let mut mentions = Vec::new();
        let mut next = 1;
        for (gap, len, l) in layout {
            let start = next + gap;
            mentions.push(EntityMention::new(start, start + len - 1, LABELS[l]));
            next = start + len;
        }
        let n = next.max(12) + 2;
        Sentence::new((0..n).map(|i| format!("t{i}")).collect(), mentions).unwrap()
    })
}

/// Predictions near the gold mentions so that hits, misses and label errors all occur.
fn case() -> impl Strategy<Value = (Vec<Vec<ScoredSpan>>, Vec<Sentence>)> {
    prop::collection::vec(gold_sentence(), 0..4).prop_flat_map(|gold| {
        let preds: Vec<_> = gold
            .iter()
            .map(|g| {
                let copies: Vec<ScoredSpan> =
                    g.mentions.iter().map(|m| ScoredSpan::new(m.start, m.end, m.etype.clone(), 0.9)).collect();
                (prop::sample::subsequence(copies.clone(), 0..=copies.len()), prop::collection::vec(scored_span(), 0..3))
                    .prop_map(|(mut keep, noise)| {
                        keep.extend(noise);
                        keep
                    })
            })
            .collect();
        (preds, Just(gold))
    })
}

fn rate(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[test]
fn zero_denominators_give_zero() {
    let gold = vec![Sentence::from_text("a b", vec![]).unwrap()];
    let r = micro_f1(&[vec![]], &gold).unwrap();
    assert_eq!((r.overall.precision, r.overall.recall, r.overall.f1), (0.0, 0.0, 0.0));
    let with_gold = vec![Sentence::from_text("a b", vec![EntityMention::new(1, 1, "PER")]).unwrap()];
    let r = micro_f1(&[vec![]], &with_gold).unwrap();
    assert_eq!((r.overall.tp, r.overall.fn_, r.overall.f1), (0, 1, 0.0));
    let r = micro_f1(&[vec![ScoredSpan::new(2, 2, "PER", 0.9)]], &gold).unwrap();
    assert_eq!((r.overall.fp, r.overall.recall, r.overall.f1), (1, 0.0, 0.0));
    assert!(micro_f1(&[], &gold).is_err());
}

#[test]
fn memorizer_shows_dictionary_gap() {
    let train = vec![
        Sentence::from_text("Alba met Borin", vec![EntityMention::new(1, 1, "PER"), EntityMention::new(3, 3, "PER")]).unwrap(),
    ];
    let test = vec![
        Sentence::from_text("Alba saw Cato", vec![EntityMention::new(1, 1, "PER"), EntityMention::new(3, 3, "PER")]).unwrap(),
        Sentence::from_text("Dova and Borin", vec![EntityMention::new(1, 1, "PER"), EntityMention::new(3, 3, "PER")]).unwrap(),
    ];
    let dict = MentionDictionary::from_corpus(&train, SurfaceMatch::Exact);
    let memorized: Vec<Vec<ScoredSpan>> = test
        .iter()
        .map(|s| {
            s.mentions
                .iter()
                .filter(|m| dict.contains(&s.mention_surface(m)))
                .map(|m| ScoredSpan::new(m.start, m.end, m.etype.clone(), 1.0))
                .collect()
        })
        .collect();
    let r = evaluate(&memorized, &test, Some(&dict)).unwrap();
    let d = r.dictionary.unwrap();
    assert_eq!(d.all.in_dict.f1, 1.0);
    assert_eq!(d.all.out_dict.f1, 0.0);
    assert_eq!(d.all.f1_gap(), 1.0);
    assert_eq!(r.overall.gold(), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn decode_matches_reference(spans in prop::collection::vec(scored_span(), 0..=20)) {
        let got = heuristic_decode(&spans);
        prop_assert_eq!(&got, &reference_decode(&spans));
        for (i, a) in got.iter().enumerate() {
            for b in &got[i + 1..] {
                prop_assert!(!a.overlaps(b));
            }
        }
    }

    #[test]
    fn micro_f1_matches_brute_force((pred, gold) in case()) {
        let r = micro_f1(&pred, &gold).unwrap();
        let (tp, fp, fn_) = brute_force(&pred, &gold);
        prop_assert_eq!((r.overall.tp, r.overall.fp, r.overall.fn_), (tp, fp, fn_));
        let p = rate(tp, tp + fp);
        let rc = rate(tp, tp + fn_);
        let f = if p + rc > 0.0 { 2.0 * p * rc / (p + rc) } else { 0.0 };
        prop_assert!((r.overall.precision - p).abs() < 1e-12);
        prop_assert!((r.overall.recall - rc).abs() < 1e-12);
        prop_assert!((r.overall.f1 - f).abs() < 1e-12);
        let gold_total: usize = gold.iter().map(|s| s.mentions.len()).sum();
        prop_assert_eq!(r.overall.gold(), gold_total);
        let per_type_tp: usize = r.per_type.values().map(|s| s.tp).sum();
        prop_assert_eq!(per_type_tp, tp);
    }

    #[test]
    fn partition_counts_add_up((pred, gold) in case()) {
        let dict = MentionDictionary::from_corpus(&gold[..gold.len() / 2], SurfaceMatch::Exact);
        let r = evaluate(&pred, &gold, Some(&dict)).unwrap();
        let d = r.dictionary.unwrap();
        prop_assert_eq!(d.all.in_dict.tp + d.all.out_dict.tp, r.overall.tp);
        prop_assert_eq!(d.all.in_dict.fp + d.all.out_dict.fp, r.overall.fp);
        prop_assert_eq!(d.all.in_dict.fn_ + d.all.out_dict.fn_, r.overall.fn_);
    }
}
