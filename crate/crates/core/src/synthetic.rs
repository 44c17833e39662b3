//! Templated synthetic NER corpora with controllable entity overlap.
//!
//! Context templates determine the entity type of each slot (a few slots are
//! deliberately ambiguous between two types). Entity names are invented
//! capitalized pseudo-words drawn from pools that are disjoint across the
//! train, dev and test splits, so every test mention is out-of-dictionary and
//! every test entity token is unknown to a vocabulary built on train.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EntityMention, Sentence};

pub const ENTITY_TYPES: [&str; 4] = ["LOC", "MISC", "ORG", "PER"];

const TEMPLATES: &[&str] = &[
    "{PER} said on Tuesday that the plan had failed .",
    "yesterday {PER} met reporters outside the court .",
    "coach {PER} praised the young players .",
    "the minister , {PER} , resigned after the vote .",
    "{PER} scored twice in the second half .",
    "fans cheered as {PER} lifted the trophy .",
    "heavy rain flooded streets in {LOC} overnight .",
    "the delegation flew from {LOC} to {LOC} .",
    "police in {LOC} arrested three men .",
    "tourists crowded the beaches near {LOC} .",
    "the border town of {LOC} was quiet .",
    "prices rose sharply across {LOC} last month .",
    "shares of {ORG} fell four percent .",
    "{ORG} reported a quarterly profit .",
    "the striker joined {ORG} on a free transfer .",
    "analysts expect {ORG} to cut jobs .",
    "a spokesman for {ORG} declined to comment .",
    "{ORG} beat {ORG} 2 - 1 on Sunday .",
    "the {MISC} festival opened with a parade .",
    "she speaks fluent {MISC} at home .",
    "the {MISC} community celebrated the holiday .",
    "he won the {MISC} award for poetry .",
    "critics praised the {MISC} film .",
    "the ceremony followed {MISC} tradition .",
    "{PER} , who works for {ORG} , lives in {LOC} .",
    "{PER} visited {LOC} with {MISC} friends .",
    "{PER|ORG} announced a new plan on Monday .",
    "officials criticised {LOC|ORG} over the deal .",
];

/// A token sequence where some positions are typed entity slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub parts: Vec<TemplatePart>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplatePart {
    Word(String),
    /// Candidate types; more than one makes the slot ambiguous.
    Slot(Vec<String>),
}

impl Template {
    pub fn parse(text: &str) -> Self {
        let parts = text
            .split_whitespace()
            .map(|tok| match tok.strip_prefix('{').and_then(|t| t.strip_suffix('}')) {
                Some(types) => TemplatePart::Slot(types.split('|').map(String::from).collect()),
                None => TemplatePart::Word(tok.to_string()),
            })
            .collect();
        Self { parts }
    }

    pub fn is_ambiguous(&self) -> bool {
        self.parts
            .iter()
            .any(|p| matches!(p, TemplatePart::Slot(types) if types.len() > 1))
    }

    pub fn slot_types(&self) -> BTreeSet<&str> {
        self.parts
            .iter()
            .filter_map(|p| match p {
                TemplatePart::Slot(t) => Some(t.iter().map(String::as_str)),
                TemplatePart::Word(_) => None,
            })
            .flatten()
            .collect()
    }
}

pub fn templates() -> Vec<Template> {
    TEMPLATES.iter().map(|t| Template::parse(t)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub train_sentences: usize,
    pub dev_sentences: usize,
    pub test_sentences: usize,
    pub train_entities_per_type: usize,
    pub dev_entities_per_type: usize,
    pub test_entities_per_type: usize,
    /// Entity names have 1..=max_entity_tokens tokens.
    pub max_entity_tokens: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_sentences: 400,
            dev_sentences: 100,
            test_sentences: 200,
            train_entities_per_type: 20,
            dev_entities_per_type: 15,
            test_entities_per_type: 30,
            max_entity_tokens: 2,
        }
    }
}

/// Entity names per type.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityPool {
    pub by_type: Vec<(String, Vec<Vec<String>>)>,
}

impl EntityPool {
    pub fn names(&self, etype: &str) -> &[Vec<String>] {
        self.by_type
            .iter()
            .find(|(t, _)| t == etype)
            .map(|(_, v)| v.as_slice())
            .unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    /// Entities unseen in train: every mention is out-of-dictionary.
    pub test: Vec<Sentence>,
    /// Same templates filled with training entities.
    pub test_indict: Vec<Sentence>,
    pub train_pool: EntityPool,
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr", "st", "tr"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
const CODAS: &[&str] = &["", "", "n", "r", "s", "l", "th", "sk"];

fn pseudo_word<R: Rng>(rng: &mut R) -> String {
    let syllables = rng.random_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).expect("non-empty"));
        w.push_str(VOWELS.choose(rng).expect("non-empty"));
    }
    w.push_str(CODAS.choose(rng).expect("non-empty"));
    let mut chars = w.chars();
    let first = chars.next().expect("non-empty word").to_ascii_uppercase();
    std::iter::once(first).chain(chars).collect()
}

/// Pools of entity names, disjoint at the token level across pools.
fn make_pools<R: Rng>(sizes: &[usize], max_tokens: usize, rng: &mut R) -> Vec<EntityPool> {
    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut fresh = |rng: &mut R| loop {
        let w = pseudo_word(rng);
        if used.insert(w.clone()) {
            return w;
        }
    };
    sizes
        .iter()
        .map(|&size| EntityPool {
            by_type: ENTITY_TYPES
                .iter()
                .map(|t| {
                    let names = (0..size)
                        .map(|_| {
                            let len = rng.random_range(1..=max_tokens.max(1));
                            (0..len).map(|_| fresh(rng)).collect()
                        })
                        .collect();
                    (t.to_string(), names)
                })
                .collect(),
        })
        .collect()
}

/// Fills `template` with names from `pool`.
pub fn instantiate<R: Rng>(template: &Template, pool: &EntityPool, rng: &mut R) -> Sentence {
    let mut tokens = Vec::new();
    let mut mentions = Vec::new();
    for part in &template.parts {
        match part {
            TemplatePart::Word(w) => tokens.push(w.clone()),
            TemplatePart::Slot(types) => {
                let etype = types.choose(rng).expect("slot has a type");
                let name = pool.names(etype).choose(rng).expect("pool covers every type");
                let start = tokens.len() + 1;
                tokens.extend(name.iter().cloned());
                mentions.push(EntityMention::new(start, tokens.len(), etype.clone()));
            }
        }
    }
    Sentence::new(tokens, mentions).expect("templates produce well-formed sentences")
}

fn sample_split<R: Rng>(n: usize, templates: &[Template], pool: &EntityPool, rng: &mut R) -> Vec<Sentence> {
    (0..n)
        .map(|i| {
            // cycle templates so every one is represented
            let t = &templates[(i + rng.random_range(0..templates.len())) % templates.len()];
            instantiate(t, pool, rng)
        })
        .collect()
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let templates = templates();
    let mut pools = make_pools(
        &[
            cfg.train_entities_per_type,
            cfg.dev_entities_per_type,
            cfg.test_entities_per_type,
        ],
        cfg.max_entity_tokens,
        &mut rng,
    )
    .into_iter();
    let (train_pool, dev_pool, test_pool) = (
        pools.next().expect("three pools"),
        pools.next().expect("three pools"),
        pools.next().expect("three pools"),
    );
    SyntheticCorpus {
        train: sample_split(cfg.train_sentences, &templates, &train_pool, &mut rng),
        dev: sample_split(cfg.dev_sentences, &templates, &dev_pool, &mut rng),
        test: sample_split(cfg.test_sentences, &templates, &test_pool, &mut rng),
        test_indict: sample_split(cfg.test_sentences, &templates, &train_pool, &mut rng),
        train_pool,
    }
}
