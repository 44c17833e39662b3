use proptest::prelude::*;
use spanib_core::augment::{levenshtein, make_contrastive_pairs, make_oov_testset, replace_mentions, typos_transform};
use spanib_core::corpus::{build_mention_lexicon, oov_rate, EntityMention, MentionLexicon, Sentence};

const TYPES: [&str; 3] = ["LOC", "ORG", "PER"];

fn sentence(prefix: &'static str) -> impl Strategy<Value = Sentence> {
    (
        prop::collection::vec("[a-z]{1,5}", 1..12),
        prop::collection::vec((0usize..3, 1usize..3, 0usize..3, "[A-Z][a-z]{1,4}"), 0..4),
    )
        .prop_map(move |(context, layout)| {
            let mut tokens = Vec::new();
            let mut mentions = Vec::new();
            let mut ctx = context.into_iter();
            for (gap, len, t, name) in layout {
                tokens.extend(ctx.by_ref().take(gap));
                let start = tokens.len() + 1;
                tokens.extend((0..len).map(|i| format!("{prefix}{name}{i}")));
                mentions.push(EntityMention::new(start, tokens.len(), TYPES[t]));
            }
            tokens.extend(ctx);
            if tokens.is_empty() {
                tokens.push("x".into());
            }
            Sentence::new(tokens, mentions).unwrap()
        })
}

fn corpus(prefix: &'static str) -> impl Strategy<Value = Vec<Sentence>> {
    prop::collection::vec(sentence(prefix), 1..8)
}

fn full_lexicon(sentences: &[Sentence]) -> MentionLexicon {
    let mut lex = build_mention_lexicon(sentences);
    for t in TYPES {
        lex.insert(t, vec![format!("Filler{t}")]);
    }
    lex
}

/// Tokens outside mentions, in order.
fn context(s: &Sentence) -> Vec<&String> {
    s.tokens
        .iter()
        .enumerate()
        .filter(|(i, _)| !s.mentions.iter().any(|m| m.start <= i + 1 && i + 1 <= m.end))
        .map(|(_, t)| t)
        .collect()
}

#[test]
fn berlin_becomes_iceland() {
    let s = Sentence::from_text("Berlin is wonderful in the winter", vec![EntityMention::new(1, 1, "LOC")]).unwrap();
    let mut lex = MentionLexicon::default();
    lex.insert("LOC", vec!["Berlin".into()]);
    lex.insert("LOC", vec!["Iceland".into()]);
    let pair = replace_mentions(&s, &lex, 3).unwrap();
    assert_eq!(pair.variant.text(), "Iceland is wonderful in the winter");
    assert_eq!(pair.span_alignment, vec![(0, 0)]);
}

proptest! {
    #[test]
    fn replacement_preserves_structure(sentences in corpus(""), seed in any::<u64>()) {
        let lex = full_lexicon(&sentences);
        let pairs = make_contrastive_pairs(&sentences, &lex, seed).unwrap();
        prop_assert_eq!(pairs.len(), sentences.len());
        for p in &pairs {
            let (o, v) = (&p.original, &p.variant);
            prop_assert_eq!(o.mentions.len(), v.mentions.len());
            for (a, b) in o.mentions.iter().zip(&v.mentions) {
                prop_assert_eq!(&a.etype, &b.etype);
                let replacement = v.span_tokens(b.start, b.end).to_vec();
                prop_assert!(lex.contains(&b.etype, &replacement));
                let others = lex.entries(&a.etype).unwrap().len();
                if others >= 2 {
                    prop_assert_ne!(o.span_tokens(a.start, a.end), replacement.as_slice());
                }
            }
            prop_assert_eq!(context(o), context(v));
            let mut left: Vec<usize> = p.span_alignment.iter().map(|x| x.0).collect();
            let mut right: Vec<usize> = p.span_alignment.iter().map(|x| x.1).collect();
            left.sort_unstable();
            right.sort_unstable();
            let all: Vec<usize> = (0..o.mentions.len()).collect();
            prop_assert_eq!(&left, &all);
            prop_assert_eq!(&right, &all);
        }
        prop_assert_eq!(make_contrastive_pairs(&sentences, &lex, seed).unwrap(), pairs);
    }

    #[test]
    fn typos_edit_each_mention_token_once(s in sentence(""), seed in any::<u64>()) {
        let t = typos_transform(&s, seed);
        prop_assert_eq!(&t.mentions, &s.mentions);
        prop_assert_eq!(t.tokens.len(), s.tokens.len());
        for (i, (a, b)) in s.tokens.iter().zip(&t.tokens).enumerate() {
            let inside = s.mentions.iter().any(|m| m.start <= i + 1 && i + 1 <= m.end);
            if inside {
                prop_assert_eq!(levenshtein(a, b), 1);
            } else {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn oov_testset_is_fully_unseen(train in corpus("Tr"), test in corpus("Tr"), held in corpus("Ho"), seed in any::<u64>()) {
        let lexicon = build_mention_lexicon(&train);
        let holdout = full_lexicon(&held);
        let out = make_oov_testset(&test, &lexicon, &holdout, seed).unwrap();
        prop_assert_eq!(out.coverage.unchanged(), 0);
        let mentions: usize = test.iter().map(|s| s.mentions.len()).sum();
        prop_assert_eq!(out.coverage.replaced, mentions);
        let stats = oov_rate(&train, &out.sentences);
        if mentions > 0 {
            prop_assert_eq!(stats.oov_rate, Some(1.0));
        }
        prop_assert!(make_oov_testset(&test, &lexicon, &lexicon, seed).is_err() || lexicon.is_empty());
    }
}
