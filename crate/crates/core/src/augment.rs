//! Contrastive pair generation by mention replacement, plus the typo and
//! out-of-vocabulary perturbations used to build robustness test sets.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EntityMention, MentionLexicon, Sentence};
use crate::error::{Error, Result};

/// Two sentences sharing context and mention types but not mention names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastivePair {
    pub original: Sentence,
    pub variant: Sentence,
    /// `(original mention index, variant mention index)`
    pub span_alignment: Vec<(usize, usize)>,
}

impl ContrastivePair {
    /// Aligned gold mention intervals of both sentences.
    pub fn aligned_mentions(&self) -> impl Iterator<Item = (&EntityMention, &EntityMention)> {
        self.span_alignment
            .iter()
            .map(|&(a, b)| (&self.original.mentions[a], &self.variant.mentions[b]))
    }
}

/// Mixes a base seed with a per-item index (splitmix64 finalizer), so
/// per-sentence streams do not depend on processing order.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Rebuilds `sentence` with each mention's tokens replaced by `pick(i, mention)`,
/// recomputing mention offsets for length changes.
fn rebuild_with<F>(sentence: &Sentence, mut pick: F) -> Result<Sentence>
where
    F: FnMut(usize, &EntityMention) -> Result<Vec<String>>,
{
    let mut tokens = Vec::with_capacity(sentence.len());
    let mut mentions = Vec::with_capacity(sentence.mentions.len());
    let mut cursor = 1;
    for (i, m) in sentence.mentions.iter().enumerate() {
        tokens.extend_from_slice(&sentence.tokens[cursor - 1..m.start - 1]);
        let replacement = pick(i, m)?;
        let start = tokens.len() + 1;
        tokens.extend(replacement);
        mentions.push(EntityMention::new(start, tokens.len(), m.etype.clone()));
        cursor = m.end + 1;
    }
    tokens.extend_from_slice(&sentence.tokens[cursor - 1..]);
    Sentence::new(tokens, mentions)
}

/// Replaces every mention by a uniformly drawn same-type lexicon entry,
/// excluding the original surface whenever an alternative exists.
pub fn replace_mentions(
    sentence: &Sentence,
    lexicon: &MentionLexicon,
    rng_seed: u64,
) -> Result<ContrastivePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let variant = rebuild_with(sentence, |_, m| {
        let entries = lexicon
            .entries(&m.etype)
            .filter(|set| !set.is_empty())
            .ok_or_else(|| Error::EmptyLexiconType(m.etype.clone()))?;
        let original = sentence.span_tokens(m.start, m.end);
        let alternatives: Vec<&Vec<String>> =
            entries.iter().filter(|e| e.as_slice() != original).collect();
        Ok(match alternatives.choose(&mut rng) {
            Some(choice) => (*choice).clone(),
            None => original.to_vec(),
        })
    })?;
    let span_alignment = (0..sentence.mentions.len()).map(|i| (i, i)).collect();
    Ok(ContrastivePair {
        original: sentence.clone(),
        variant,
        span_alignment,
    })
}

/// One contrastive variant per sentence, seeded per sentence index.
pub fn make_contrastive_pairs(
    sentences: &[Sentence],
    lexicon: &MentionLexicon,
    seed: u64,
) -> Result<Vec<ContrastivePair>> {
    sentences
        .iter()
        .enumerate()
        .map(|(i, s)| replace_mentions(s, lexicon, derive_seed(seed, i as u64)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CharEdit {
    Modify,
    Insert,
    Delete,
}

fn random_letter_except<R: Rng>(rng: &mut R, avoid: char) -> char {
    let (base, is_alpha) = if avoid.is_ascii_uppercase() {
        (b'A', true)
    } else {
        (b'a', avoid.is_ascii_lowercase())
    };
    if !is_alpha {
        return (base + rng.random_range(0..26)) as char;
    }
    // 25 letters other than `avoid`
    let skip = avoid as u8 - base;
    let mut k = rng.random_range(0..25u8);
    if k >= skip {
        k += 1;
    }
    (base + k) as char
}

/// Applies one random character edit to a token; returns the edit actually made.
pub fn typo_token<R: Rng>(token: &str, rng: &mut R) -> (String, CharEdit) {
    let mut chars: Vec<char> = token.chars().collect();
    let mut edit = match rng.random_range(0..3) {
        0 => CharEdit::Modify,
        1 => CharEdit::Insert,
        _ => CharEdit::Delete,
    };
    if edit == CharEdit::Delete && chars.len() <= 1 {
        edit = CharEdit::Modify;
    }
    match edit {
        CharEdit::Modify => {
            if chars.is_empty() {
                chars.push(random_letter_except(rng, 'a'));
                return (chars.into_iter().collect(), CharEdit::Insert);
            }
            let pos = rng.random_range(0..chars.len());
            chars[pos] = random_letter_except(rng, chars[pos]);
        }
        CharEdit::Insert => {
            let pos = rng.random_range(0..=chars.len());
            chars.insert(pos, (b'a' + rng.random_range(0..26u8)) as char);
        }
        CharEdit::Delete => {
            let pos = rng.random_range(0..chars.len());
            chars.remove(pos);
        }
    }
    (chars.into_iter().collect(), edit)
}

/// Gives every mention token exactly one character edit; context tokens and
/// mention boundaries are unchanged.
pub fn typos_transform(sentence: &Sentence, rng_seed: u64) -> Sentence {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = sentence.clone();
    for m in &sentence.mentions {
        for token in &mut out.tokens[m.start - 1..m.end] {
            *token = typo_token(token, &mut rng).0;
        }
    }
    out
}

/// Mentions left untouched because the holdout lexicon lacked their type.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OovCoverage {
    pub replaced: usize,
    pub unchanged_by_type: BTreeMap<String, usize>,
}

impl OovCoverage {
    pub fn unchanged(&self) -> usize {
        self.unchanged_by_type.values().sum()
    }
}

#[derive(Debug, Clone)]
pub struct OovTestSet {
    pub sentences: Vec<Sentence>,
    pub coverage: OovCoverage,
}

/// Replaces every test mention with a same-type entry from a holdout lexicon
/// that shares no surface string with the training lexicon.
pub fn make_oov_testset(
    test: &[Sentence],
    lexicon: &MentionLexicon,
    holdout_lexicon: &MentionLexicon,
    rng_seed: u64,
) -> Result<OovTestSet> {
    let train_surfaces = lexicon.surfaces();
    let shared = holdout_lexicon
        .surfaces()
        .intersection(&train_surfaces)
        .count();
    if shared > 0 {
        return Err(Error::Precondition(format!(
            "holdout lexicon shares {shared} surface strings with the training lexicon"
        )));
    }
    let mut coverage = OovCoverage::default();
    let mut sentences = Vec::with_capacity(test.len());
    for (i, sentence) in test.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, i as u64));
        let rebuilt = rebuild_with(sentence, |_, m| {
            let entries: Vec<&Vec<String>> = holdout_lexicon
                .entries(&m.etype)
                .map(|set| set.iter().collect())
                .unwrap_or_default();
            Ok(match entries.choose(&mut rng) {
                Some(choice) => {
                    coverage.replaced += 1;
                    (*choice).clone()
                }
                None => {
                    *coverage.unchanged_by_type.entry(m.etype.clone()).or_default() += 1;
                    sentence.span_tokens(m.start, m.end).to_vec()
                }
            })
        })?;
        sentences.push(rebuilt);
    }
    Ok(OovTestSet {
        sentences,
        coverage,
    })
}

/// Character-level edit distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_mention_lexicon, oov_rate};

    fn sent(text: &str, mentions: &[(usize, usize, &str)]) -> Sentence {
        Sentence::from_text(
            text,
            mentions
                .iter()
                .map(|&(s, e, t)| EntityMention::new(s, e, t))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn berlin_becomes_iceland() {
        let train = vec![
            sent("Berlin is wonderful in the winter", &[(1, 1, "LOC")]),
            sent("Iceland is cold", &[(1, 1, "LOC")]),
        ];
        let lex = build_mention_lexicon(&train);
        let pair = replace_mentions(&train[0], &lex, 3).unwrap();
        assert_eq!(pair.variant.text(), "Iceland is wonderful in the winter");
        assert_eq!(pair.span_alignment, vec![(0, 0)]);
    }

    #[test]
    fn no_mentions_means_identical_variant() {
        let s = sent("nothing to see", &[]);
        let pair = replace_mentions(&s, &MentionLexicon::default(), 0).unwrap();
        assert_eq!(pair.variant, s);
    }

    #[test]
    fn length_changes_shift_later_mentions() {
        // three mentions; only "New York" is a 2-token LOC alternative
        let s = sent("Berlin met Anna at Siemens", &[(1, 1, "LOC"), (3, 3, "PER"), (5, 5, "ORG")]);
        let mut lex = MentionLexicon::default();
        lex.insert("LOC", vec!["Berlin".into()]);
        lex.insert("LOC", vec!["New".into(), "York".into()]);
        lex.insert("PER", vec!["Anna".into()]);
        lex.insert("ORG", vec!["Siemens".into()]);
        let pair = replace_mentions(&s, &lex, 11).unwrap();
        assert_eq!(pair.variant.text(), "New York met Anna at Siemens");
        assert_eq!(
            pair.variant.mentions,
            vec![
                EntityMention::new(1, 2, "LOC"),
                EntityMention::new(4, 4, "PER"),
                EntityMention::new(6, 6, "ORG")
            ]
        );
    }

    #[test]
    fn missing_type_is_an_error() {
        let s = sent("Berlin", &[(1, 1, "LOC")]);
        let err = replace_mentions(&s, &MentionLexicon::default(), 0).unwrap_err();
        assert!(matches!(err, Error::EmptyLexiconType(t) if t == "LOC"));
    }

    #[test]
    fn typos_edit_each_mention_token_once() {
        let s = sent("Angela Merkel visited Berlin today", &[(1, 2, "PER"), (4, 4, "LOC")]);
        for seed in 0..50 {
            let t = typos_transform(&s, seed);
            assert_eq!(t.mentions, s.mentions);
            for (i, (a, b)) in s.tokens.iter().zip(&t.tokens).enumerate() {
                let in_mention = s.mentions.iter().any(|m| m.start <= i + 1 && i + 1 <= m.end);
                assert_eq!(levenshtein(a, b), usize::from(in_mention), "{a} -> {b}");
            }
        }
    }

    #[test]
    fn typo_modify_keeps_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen_modify = false;
        for _ in 0..100 {
            let (out, edit) = typo_token("Berlin", &mut rng);
            if edit == CharEdit::Modify {
                seen_modify = true;
                assert_eq!(out.chars().count(), 6);
                assert_eq!(levenshtein("Berlin", &out), 1);
            }
        }
        assert!(seen_modify);
    }

    #[test]
    fn single_char_delete_falls_back_to_modify() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (out, edit) = typo_token("X", &mut rng);
            assert_ne!(edit, CharEdit::Delete);
            assert_eq!(levenshtein("X", &out), 1);
        }
    }

    #[test]
    fn typos_without_mentions_is_identity() {
        let s = sent("plain words only", &[]);
        assert_eq!(typos_transform(&s, 9), s);
    }

    #[test]
    fn oov_testset_replaces_everything_covered() {
        let train = vec![sent("Berlin is big", &[(1, 1, "LOC")]), sent("Anna sings", &[(1, 1, "PER")])];
        let test = vec![
            sent("Berlin is small", &[(1, 1, "LOC")]),
            sent("Anna at Berlin", &[(1, 1, "PER"), (3, 3, "LOC")]),
        ];
        let lex = build_mention_lexicon(&train);
        let mut holdout = MentionLexicon::default();
        holdout.insert("LOC", vec!["Oslo".into()]);
        holdout.insert("LOC", vec!["Lake".into(), "Como".into()]);
        let out = make_oov_testset(&test, &lex, &holdout, 1).unwrap();
        assert_eq!(out.coverage.replaced, 2);
        assert_eq!(out.coverage.unchanged_by_type.get("PER"), Some(&1));
        let locs_only: Vec<Sentence> = out
            .sentences
            .iter()
            .map(|s| Sentence {
                tokens: s.tokens.clone(),
                mentions: s.mentions.iter().filter(|m| m.etype == "LOC").cloned().collect(),
            })
            .collect();
        assert_eq!(oov_rate(&train, &locs_only).oov_rate, Some(1.0));
        assert!(make_oov_testset(&[], &lex, &holdout, 1).unwrap().sentences.is_empty());
    }

    #[test]
    fn oov_testset_rejects_overlapping_holdout() {
        let train = vec![sent("Berlin", &[(1, 1, "LOC")])];
        let lex = build_mention_lexicon(&train);
        assert!(matches!(
            make_oov_testset(&train, &lex, &lex, 0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("", "ab"), 2);
        assert_eq!(levenshtein("same", "same"), 0);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }
}
