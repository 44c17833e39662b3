//! Corpus ingestion: CoNLL reading and writing, span enumeration, vocabularies,
//! mention lexicons and out-of-vocabulary statistics.
//!
//! Token positions are 1-based and inclusive throughout this module, so the
//! sentence "Berlin is wonderful" has spans `(1,1) .. (3,3)`. Conversion to
//! 0-based offsets happens only where tensors are indexed.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label of spans that are not entities.
pub const OUTSIDE: &str = "O";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityMention {
    pub start: usize,
    pub end: usize,
    pub etype: String,
}

impl EntityMention {
    pub fn new(start: usize, end: usize, etype: impl Into<String>) -> Self {
        Self {
            start,
            end,
            etype: etype.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &EntityMention) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub mentions: Vec<EntityMention>,
}

impl Sentence {
    /// Builds a sentence, checking that mentions are in range, sorted and disjoint.
    pub fn new(tokens: Vec<String>, mut mentions: Vec<EntityMention>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Precondition("sentence has no tokens".into()));
        }
        mentions.sort();
        for m in &mentions {
            if m.start == 0 || m.start > m.end || m.end > tokens.len() {
                return Err(Error::Precondition(format!(
                    "mention ({}, {}, {}) outside sentence of {} tokens",
                    m.start,
                    m.end,
                    m.etype,
                    tokens.len()
                )));
            }
        }
        if let Some(w) = mentions.windows(2).find(|w| w[0].overlaps(&w[1])) {
            return Err(Error::Precondition(format!(
                "overlapping mentions ({}, {}) and ({}, {})",
                w[0].start, w[0].end, w[1].start, w[1].end
            )));
        }
        Ok(Self { tokens, mentions })
    }

    /// Convenience constructor from whitespace-separated text.
    pub fn from_text(text: &str, mentions: Vec<EntityMention>) -> Result<Self> {
        Self::new(text.split_whitespace().map(String::from).collect(), mentions)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn span_tokens(&self, start: usize, end: usize) -> &[String] {
        &self.tokens[start - 1..end]
    }

    /// Surface string of a token interval, tokens joined by single spaces.
    pub fn surface(&self, start: usize, end: usize) -> String {
        self.span_tokens(start, end).join(" ")
    }

    pub fn mention_surface(&self, mention: &EntityMention) -> String {
        self.surface(mention.start, mention.end)
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Per-token BIO2 tags.
    pub fn bio2_tags(&self) -> Vec<String> {
        let mut tags = vec![OUTSIDE.to_string(); self.tokens.len()];
        for m in &self.mentions {
            tags[m.start - 1] = format!("B-{}", m.etype);
            for tag in &mut tags[m.start..m.end] {
                *tag = format!("I-{}", m.etype);
            }
        }
        tags
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TagScheme {
    /// IOB1: `B-` only separates adjacent entities of the same type.
    Bio,
    /// IOB2: every entity begins with `B-`.
    #[default]
    Bio2,
}

impl std::str::FromStr for TagScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bio" | "iob" | "iob1" => Ok(Self::Bio),
            "bio2" | "iob2" => Ok(Self::Bio2),
            other => Err(Error::Config(format!("unknown tag scheme `{other}`"))),
        }
    }
}

/// Outcome of parsing a CoNLL document.
#[derive(Debug, Clone, Default)]
pub struct ConllDocument {
    pub sentences: Vec<Sentence>,
    /// Number of `I-X` tags that did not continue an `X` entity and were
    /// treated as `B-X`.
    pub repaired_tags: usize,
}

enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

fn parse_tag(tag: &str) -> Option<Tag<'_>> {
    if tag == OUTSIDE {
        return Some(Tag::Outside);
    }
    let (prefix, etype) = tag.split_once('-')?;
    if etype.is_empty() {
        return None;
    }
    match prefix {
        "B" => Some(Tag::Begin(etype)),
        "I" => Some(Tag::Inside(etype)),
        _ => None,
    }
}

/// Parses CoNLL text: one `token<whitespace>...<whitespace>tag` per line, blank
/// lines between sentences. The first column is the token and the last column
/// the tag; `-DOCSTART-` lines are skipped.
pub fn parse_conll(text: &str, scheme: TagScheme, source: &Path) -> Result<ConllDocument> {
    let mut doc = ConllDocument::default();
    let mut tokens: Vec<String> = Vec::new();
    let mut mentions: Vec<EntityMention> = Vec::new();
    // open entity: (start, type)
    let mut open: Option<(usize, String)> = None;

    let flush = |tokens: &mut Vec<String>,
                     mentions: &mut Vec<EntityMention>,
                     open: &mut Option<(usize, String)>,
                     doc: &mut ConllDocument| {
        if let Some((start, etype)) = open.take() {
            mentions.push(EntityMention::new(start, tokens.len(), etype));
        }
        if !tokens.is_empty() {
            let sentence = Sentence {
                tokens: std::mem::take(tokens),
                mentions: std::mem::take(mentions),
            };
            doc.sentences.push(sentence);
        }
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut tokens, &mut mentions, &mut open, &mut doc);
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields[0] == "-DOCSTART-" {
            continue;
        }
        if fields.len() < 2 {
            return Err(Error::Parse {
                path: source.to_path_buf(),
                line: lineno + 1,
                message: format!("expected `token<sep>tag`, found `{line}`"),
            });
        }
        let tag_str = fields[fields.len() - 1];
        let tag = parse_tag(tag_str).ok_or_else(|| Error::Parse {
            path: source.to_path_buf(),
            line: lineno + 1,
            message: format!("unknown tag `{tag_str}`"),
        })?;
        let position = tokens.len() + 1;
        tokens.push(fields[0].to_string());

        match tag {
            Tag::Outside => {
                if let Some((start, etype)) = open.take() {
                    mentions.push(EntityMention::new(start, position - 1, etype));
                }
            }
            Tag::Begin(etype) => {
                if let Some((start, prev)) = open.take() {
                    mentions.push(EntityMention::new(start, position - 1, prev));
                }
                open = Some((position, etype.to_string()));
            }
            Tag::Inside(etype) => {
                let continues = matches!(&open, Some((_, prev)) if prev == etype);
                if !continues {
                    if let Some((start, prev)) = open.take() {
                        mentions.push(EntityMention::new(start, position - 1, prev));
                    }
                    if scheme == TagScheme::Bio2 {
                        doc.repaired_tags += 1;
                        log::warn!(
                            "{}:{}: `{tag_str}` does not continue an entity; treating as B-{etype}",
                            source.display(),
                            lineno + 1
                        );
                    }
                    open = Some((position, etype.to_string()));
                }
            }
        }
    }
    flush(&mut tokens, &mut mentions, &mut open, &mut doc);
    Ok(doc)
}

pub fn read_conll_document(path: impl AsRef<Path>, scheme: TagScheme) -> Result<ConllDocument> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conll(&text, scheme, path)
}

/// Reads a CoNLL file into sentences.
pub fn read_conll(path: impl AsRef<Path>, scheme: TagScheme) -> Result<Vec<Sentence>> {
    Ok(read_conll_document(path, scheme)?.sentences)
}

/// Tags for one sentence under `scheme`.
pub fn encode_tags(sentence: &Sentence, scheme: TagScheme) -> Vec<String> {
    match scheme {
        TagScheme::Bio2 => sentence.bio2_tags(),
        TagScheme::Bio => {
            let mut tags = vec![OUTSIDE.to_string(); sentence.len()];
            let mut prev: Option<&EntityMention> = None;
            for m in &sentence.mentions {
                let adjacent_same = prev.is_some_and(|p| p.end + 1 == m.start && p.etype == m.etype);
                for (i, tag) in tags[m.start - 1..m.end].iter_mut().enumerate() {
                    let prefix = if i == 0 && adjacent_same { "B" } else { "I" };
                    *tag = format!("{prefix}-{}", m.etype);
                }
                prev = Some(m);
            }
            tags
        }
    }
}

/// Serializes sentences as CoNLL: `token<sep>tag` lines, each sentence
/// terminated by a blank line.
pub fn write_conll(sentences: &[Sentence], scheme: TagScheme, separator: &str) -> String {
    let mut out = String::new();
    for sentence in sentences {
        for (token, tag) in sentence.tokens.iter().zip(encode_tags(sentence, scheme)) {
            out.push_str(token);
            out.push_str(separator);
            out.push_str(&tag);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// A candidate span with its reassigned label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpanCandidate {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl SpanCandidate {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_entity(&self) -> bool {
        self.label != OUTSIDE
    }
}

/// All spans of length at most `max_len` in lexicographic `(start, end)` order,
/// labeled with the gold type when they match a mention exactly and `O`
/// otherwise.
pub fn enumerate_spans(sentence: &Sentence, max_len: usize) -> Vec<SpanCandidate> {
    let n = sentence.len();
    let gold: HashMap<(usize, usize), &str> = sentence
        .mentions
        .iter()
        .map(|m| ((m.start, m.end), m.etype.as_str()))
        .collect();
    let mut spans = Vec::with_capacity(n * max_len.min(n));
    for start in 1..=n {
        for end in start..=(start + max_len - 1).min(n) {
            let label = gold.get(&(start, end)).copied().unwrap_or(OUTSIDE);
            spans.push(SpanCandidate {
                start,
                end,
                label: label.to_string(),
            });
        }
    }
    spans
}

/// Gold mentions that span enumeration cannot reach.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanCoverage {
    pub total_mentions: usize,
    pub unreachable_mentions: usize,
}

pub fn span_coverage(sentences: &[Sentence], max_len: usize) -> SpanCoverage {
    let mut cov = SpanCoverage::default();
    for m in sentences.iter().flat_map(|s| &s.mentions) {
        cov.total_mentions += 1;
        if m.len() > max_len {
            cov.unreachable_mentions += 1;
        }
    }
    cov
}

/// Token-to-id map with reserved padding and unknown ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    const SPECIALS: [&'static str; 2] = ["<pad>", "<unk>"];

    fn from_token_list(words: impl IntoIterator<Item = String>) -> Self {
        let mut tokens: Vec<String> = Self::SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let mut vocab = Self {
            tokens,
            index: HashMap::new(),
        };
        vocab.rebuild_index();
        vocab
    }

    /// Must be called after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .skip(Self::SPECIALS.len())
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// Keeps tokens occurring at least `min_count` times; ids are assigned in
/// lexicographic token order after the two specials.
pub fn build_vocabulary(train: &[Sentence], min_count: usize) -> Result<Vocabulary> {
    if train.is_empty() {
        return Err(Error::Precondition(
            "cannot build a vocabulary from an empty corpus".into(),
        ));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for token in train.iter().flat_map(|s| &s.tokens) {
        *counts.entry(token.as_str()).or_default() += 1;
    }
    Ok(Vocabulary::from_token_list(
        counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .map(|(t, _)| t.to_string()),
    ))
}

/// Per-type sets of mention token sequences seen in training data.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionLexicon {
    entries: BTreeMap<String, BTreeSet<Vec<String>>>,
}

impl MentionLexicon {
    pub fn insert(&mut self, etype: &str, tokens: Vec<String>) {
        self.entries.entry(etype.to_string()).or_default().insert(tokens);
    }

    pub fn entries(&self, etype: &str) -> Option<&BTreeSet<Vec<String>>> {
        self.entries.get(etype)
    }

    pub fn types(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, etype: &str, tokens: &[String]) -> bool {
        self.entries.get(etype).is_some_and(|set| set.contains(tokens))
    }

    /// Number of distinct entries across all types.
    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All surface strings regardless of type.
    pub fn surfaces(&self) -> BTreeSet<String> {
        self.entries
            .values()
            .flat_map(|set| set.iter().map(|t| t.join(" ")))
            .collect()
    }

    /// Removes every entry whose surface string also appears in `other`.
    pub fn without_surfaces_of(&self, other: &MentionLexicon) -> MentionLexicon {
        let banned = other.surfaces();
        let mut out = MentionLexicon::default();
        for (etype, set) in &self.entries {
            for tokens in set {
                if !banned.contains(&tokens.join(" ")) {
                    out.insert(etype, tokens.clone());
                }
            }
        }
        out
    }
}

pub fn build_mention_lexicon(train: &[Sentence]) -> MentionLexicon {
    let mut lexicon = MentionLexicon::default();
    for sentence in train {
        for m in &sentence.mentions {
            lexicon.insert(&m.etype, sentence.span_tokens(m.start, m.end).to_vec());
        }
    }
    lexicon
}

/// How mention surfaces are compared when testing dictionary membership.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceMatch {
    #[default]
    Exact,
    Lowercase,
}

impl SurfaceMatch {
    pub fn key(self, surface: &str) -> String {
        match self {
            Self::Exact => surface.to_string(),
            Self::Lowercase => surface.to_lowercase(),
        }
    }
}

/// Set of training mention surfaces, independent of type.
#[derive(Debug, Clone, Default)]
pub struct MentionDictionary {
    surfaces: HashSet<String>,
    matching: SurfaceMatch,
}

impl MentionDictionary {
    pub fn from_corpus(train: &[Sentence], matching: SurfaceMatch) -> Self {
        let surfaces = train
            .iter()
            .flat_map(|s| s.mentions.iter().map(move |m| matching.key(&s.mention_surface(m))))
            .collect();
        Self { surfaces, matching }
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.surfaces.contains(&self.matching.key(surface))
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }
}

/// Test-set statistics in the shape of a dataset summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OovStats {
    pub sents: usize,
    pub entities: usize,
    pub oov_entities: usize,
    /// Occurrence-level rate; `None` when the test set has no mentions.
    pub oov_rate: Option<f64>,
    pub unique_entities: usize,
    pub unique_oov_entities: usize,
    /// Rate over distinct test surfaces.
    pub type_level_oov_rate: Option<f64>,
}

pub fn oov_rate(train: &[Sentence], test: &[Sentence]) -> OovStats {
    oov_rate_with(train, test, SurfaceMatch::Exact)
}

pub fn oov_rate_with(train: &[Sentence], test: &[Sentence], matching: SurfaceMatch) -> OovStats {
    let dict = MentionDictionary::from_corpus(train, matching);
    let mut entities = 0;
    let mut oov = 0;
    let mut unique: HashMap<String, bool> = HashMap::new();
    for sentence in test {
        for m in &sentence.mentions {
            let surface = sentence.mention_surface(m);
            let is_oov = !dict.contains(&surface);
            entities += 1;
            oov += usize::from(is_oov);
            unique.insert(matching.key(&surface), is_oov);
        }
    }
    let unique_oov = unique.values().filter(|&&v| v).count();
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    OovStats {
        sents: test.len(),
        entities,
        oov_entities: oov,
        oov_rate: ratio(oov, entities),
        unique_entities: unique.len(),
        unique_oov_entities: unique_oov,
        type_level_oov_rate: ratio(unique_oov, unique.len()),
    }
}

/// Index of a gold mention within a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MentionRef {
    pub sentence: usize,
    pub mention: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DictSplit {
    pub in_dict: BTreeSet<MentionRef>,
    pub out_dict: BTreeSet<MentionRef>,
}

impl DictSplit {
    pub fn total(&self) -> usize {
        self.in_dict.len() + self.out_dict.len()
    }
}

/// Partitions test mentions by whether their surface string is a training mention.
pub fn indict_outdict_split(train: &[Sentence], test: &[Sentence]) -> DictSplit {
    split_by_dictionary(&MentionDictionary::from_corpus(train, SurfaceMatch::Exact), test)
}

pub fn split_by_dictionary(dict: &MentionDictionary, test: &[Sentence]) -> DictSplit {
    let mut split = DictSplit::default();
    for (si, sentence) in test.iter().enumerate() {
        for (mi, m) in sentence.mentions.iter().enumerate() {
            let r = MentionRef {
                sentence: si,
                mention: mi,
            };
            if dict.contains(&sentence.mention_surface(m)) {
                split.in_dict.insert(r);
            } else {
                split.out_dict.insert(r);
            }
        }
    }
    split
}

impl fmt::Display for OovStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.sents, self.entities, format_rate(self.oov_rate))
    }
}

/// Two-decimal rendering with `NA` for undefined rates.
pub fn format_rate(rate: Option<f64>) -> String {
    rate.map_or_else(|| "NA".to_string(), |r| format!("{r:.2}"))
}

pub const OOV_STATS_HEADER: &str = "dataset,sents,entities,oov_rate";

/// One CSV row per named dataset; `type_level` selects the distinct-surface rate.
pub fn oov_stats_csv(rows: &[(String, OovStats)], type_level: bool) -> String {
    let mut out = String::from(OOV_STATS_HEADER);
    out.push('\n');
    for (name, stats) in rows {
        let rate = if type_level {
            stats.type_level_oov_rate
        } else {
            stats.oov_rate
        };
        out.push_str(&format!(
            "{name},{},{},{}\n",
            stats.sents,
            stats.entities,
            format_rate(rate)
        ));
    }
    out
}
