//! Optimization: batch construction with contrastive pairs, loss assembly per
//! training mode, Adam updates, checkpoint selection on dev F1, and a
//! finite-difference gradient checker.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{derive_seed, make_contrastive_pairs};
use crate::autodiff::{Tape, Var};
use crate::bottleneck::{draw_noise, posterior_graph, sample_graph, JsMode, PosteriorVars};
use crate::corpus::{
    build_mention_lexicon, build_vocabulary, enumerate_spans, MentionDictionary, MentionLexicon, Sentence,
    SpanCandidate,
};
use crate::decode_eval::{evaluate, micro_f1, predict, EvalReport};
use crate::encoder::{embed_ids, encode_context_graph, span_repr_graph};
use crate::error::{Error, Result};
use crate::model::{Bound, LabelSet, ModelConfig, ModelParams, SpanModel};
use crate::objectives::{base_loss_graph, gi_loss_graph, si_loss_graph, vanilla_ib_graph, LossWeights};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Base loss plus the InfoNCE and divergence terms over contrastive pairs.
    #[default]
    Miner,
    BaseOnly,
    /// Base loss plus beta times the KL to a standard normal prior.
    VaniIb,
    /// Base loss over the original and mention-replaced sentences.
    DataAug,
}

impl TrainMode {
    pub fn uses_variants(self) -> bool {
        matches!(self, Self::Miner | Self::DataAug)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Miner => "miner",
            Self::BaseOnly => "base-only",
            Self::VaniIb => "vani-ib",
            Self::DataAug => "data-aug",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "miner" => Ok(Self::Miner),
            "base-only" | "base" => Ok(Self::BaseOnly),
            "vani-ib" | "vaniib" => Ok(Self::VaniIb),
            "data-aug" | "dataaug" => Ok(Self::DataAug),
            other => Err(Error::Config(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Sentences per batch.
    pub batch_size: usize,
    pub seed: u64,
    pub max_sentence_len: usize,
    pub checkpoint_top_k: usize,
    pub weights: LossWeights,
    /// O spans kept per gold span in each sentence; `None` keeps every span.
    pub o_span_ratio: Option<f64>,
    pub js_mode: JsMode,
    pub js_samples: usize,
    /// Average the InfoNCE loss anchored on both sides of each pair.
    pub symmetric_gi: bool,
    /// Apply the base loss to the mention-replaced sentence as well.
    pub base_on_variant: bool,
    pub vocab_min_count: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Miner,
            learning_rate: 5e-5,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            max_sentence_len: 128,
            checkpoint_top_k: 3,
            weights: LossWeights::default(),
            o_span_ratio: Some(3.0),
            js_mode: JsMode::Mc,
            js_samples: 1,
            symmetric_gi: true,
            base_on_variant: true,
            vocab_min_count: 1,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.mode == TrainMode::Miner && self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2 in miner mode".into()));
        }
        if self.max_sentence_len == 0 {
            return Err(Error::Config("max_sentence_len must be positive".into()));
        }
        if self.checkpoint_top_k == 0 {
            return Err(Error::Config("checkpoint_top_k must be at least 1".into()));
        }
        if self.js_samples == 0 {
            return Err(Error::Config("js_samples must be at least 1".into()));
        }
        if let Some(r) = self.o_span_ratio {
            if !(r >= 0.0) {
                return Err(Error::Config("o_span_ratio must be nonnegative".into()));
            }
        }
        self.weights.validate()
    }
}

// Independent RNG streams derived from the run seed.
const STREAM_INIT: u64 = 0x1001;
const STREAM_SHUFFLE: u64 = 0x2002;
const STREAM_PAIRS: u64 = 0x3003;
const STREAM_SPANS: u64 = 0x4004;
const STREAM_STEP: u64 = 0x5005;

fn stream(seed: u64, stream: u64, index: u64) -> u64 {
    derive_seed(derive_seed(seed, stream), index)
}

/// Cuts a sentence to `max_len` tokens, dropping mentions that cross the cut.
/// Returns the number of dropped mentions.
pub fn truncate_sentence(sentence: &Sentence, max_len: usize) -> (Sentence, usize) {
    if sentence.len() <= max_len {
        return (sentence.clone(), 0);
    }
    let mentions: Vec<_> = sentence
        .mentions
        .iter()
        .filter(|m| m.end <= max_len)
        .cloned()
        .collect();
    let dropped = sentence.mentions.len() - mentions.len();
    let s = Sentence::new(sentence.tokens[..max_len].to_vec(), mentions)
        .expect("prefix of a valid sentence is valid");
    (s, dropped)
}

/// Truncates every sentence, warning per cut sentence.
pub fn truncate_corpus(sentences: &[Sentence], max_len: usize) -> Vec<Sentence> {
    sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (t, dropped) = truncate_sentence(s, max_len);
            if t.len() < s.len() {
                log::warn!(
                    "sentence {i}: truncated from {} to {max_len} tokens, {dropped} mention(s) dropped",
                    s.len()
                );
            }
            t
        })
        .collect()
}

/// A sentence with the span candidates used for training.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanSample {
    pub sentence: Sentence,
    pub spans: Vec<SpanCandidate>,
    /// For each gold mention, its index in `spans` (`None` when the mention is
    /// longer than the maximum span length).
    pub mention_spans: Vec<Option<usize>>,
}

impl SpanSample {
    /// Every gold span plus up to `ratio * max(1, gold)` O spans, sampled
    /// without replacement and kept in enumeration order.
    pub fn build<R: Rng + ?Sized>(sentence: &Sentence, max_span_len: usize, ratio: Option<f64>, rng: &mut R) -> Self {
        let all = enumerate_spans(sentence, max_span_len);
        let keep: Vec<bool> = match ratio {
            None => vec![true; all.len()],
            Some(r) => {
                let gold = all.iter().filter(|s| s.is_entity()).count();
                let outside: Vec<usize> = (0..all.len()).filter(|&i| !all[i].is_entity()).collect();
                let budget = ((r * gold.max(1) as f64).ceil() as usize).min(outside.len());
                let mut keep: Vec<bool> = all.iter().map(|s| s.is_entity()).collect();
                for i in rand::seq::index::sample(rng, outside.len(), budget) {
                    keep[outside[i]] = true;
                }
                keep
            }
        };
        let spans: Vec<SpanCandidate> = all
            .into_iter()
            .zip(keep)
            .filter_map(|(s, k)| k.then_some(s))
            .collect();
        let mention_spans = sentence
            .mentions
            .iter()
            .map(|m| spans.iter().position(|s| s.start == m.start && s.end == m.end))
            .collect();
        Self {
            sentence: sentence.clone(),
            spans,
            mention_spans,
        }
    }
}

/// Aligned gold span of a contrastive pair inside a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanPair {
    pub sentence: usize,
    pub original_span: usize,
    pub variant_span: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub originals: Vec<SpanSample>,
    /// Empty unless the mode uses contrastive variants.
    pub variants: Vec<SpanSample>,
    pub alignments: Vec<SpanPair>,
}

/// Batches for one epoch. The order is reshuffled and the contrastive
/// variants resampled per `(seed, epoch)`.
pub fn make_batches(
    train: &[Sentence],
    lexicon: &MentionLexicon,
    cfg: &TrainConfig,
    max_span_len: usize,
    epoch: usize,
) -> Result<Vec<Batch>> {
    if train.is_empty() {
        return Err(Error::Precondition("training corpus is empty".into()));
    }
    let train = truncate_corpus(train, cfg.max_sentence_len);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream(cfg.seed, STREAM_SHUFFLE, epoch as u64)));

    let pairs = if cfg.mode.uses_variants() {
        Some(make_contrastive_pairs(
            &train,
            lexicon,
            stream(cfg.seed, STREAM_PAIRS, epoch as u64),
        )?)
    } else {
        None
    };

    let mut span_rng = ChaCha8Rng::seed_from_u64(stream(cfg.seed, STREAM_SPANS, epoch as u64));
    let mut batches = Vec::new();
    for chunk in order.chunks(cfg.batch_size) {
        let mut batch = Batch {
            originals: Vec::with_capacity(chunk.len()),
            variants: Vec::new(),
            alignments: Vec::new(),
        };
        for (bi, &si) in chunk.iter().enumerate() {
            let original = SpanSample::build(&train[si], max_span_len, cfg.o_span_ratio, &mut span_rng);
            if let Some(pairs) = &pairs {
                let pair = &pairs[si];
                let variant = SpanSample::build(&pair.variant, max_span_len, cfg.o_span_ratio, &mut span_rng);
                for &(a, b) in &pair.span_alignment {
                    if let (Some(oa), Some(vb)) = (original.mention_spans[a], variant.mention_spans[b]) {
                        batch.alignments.push(SpanPair {
                            sentence: bi,
                            original_span: oa,
                            variant_span: vb,
                        });
                    }
                }
                batch.variants.push(variant);
            }
            batch.originals.push(original);
        }
        batches.push(batch);
    }
    Ok(batches)
}

/// Per-span posteriors and latent samples for a list of sentences.
struct Encoded {
    post: PosteriorVars,
    z: Var,
    labels: Vec<usize>,
    offsets: Vec<usize>,
}

fn encode_samples<R: Rng + ?Sized>(
    tape: &mut Tape,
    bound: &Bound,
    model: &SpanModel,
    samples: &[SpanSample],
    rng: &mut R,
    training: bool,
) -> Result<Encoded> {
    let cfg = &model.config.encoder;
    let mut reprs = Vec::with_capacity(samples.len());
    let mut labels = Vec::new();
    let mut offsets = Vec::with_capacity(samples.len());
    for s in samples {
        offsets.push(labels.len());
        let ids = model.vocab.encode(&s.sentence.tokens);
        let u = embed_ids(tape, bound, &ids);
        let h = encode_context_graph(tape, bound, cfg, u, training.then_some(&mut *rng));
        let spans: Vec<(usize, usize)> = s.spans.iter().map(|c| (c.start, c.end)).collect();
        reprs.push(span_repr_graph(tape, bound, cfg, h, &spans)?);
        for c in &s.spans {
            labels.push(
                model
                    .labels
                    .id(&c.label)
                    .ok_or_else(|| Error::Contract(format!("label `{}` not in the label set", c.label)))?,
            );
        }
    }
    let t = tape.vstack(&reprs);
    let post = posterior_graph(tape, bound, t);
    let z = if training {
        let eps = draw_noise(tape, post, rng);
        sample_graph(tape, post, eps)
    } else {
        post.mean
    };
    Ok(Encoded {
        post,
        z,
        labels,
        offsets,
    })
}

/// Loss components on the tape; absent terms are `None`.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub base: Var,
    pub gi: Option<Var>,
    pub si: Option<Var>,
    pub total: Var,
}

/// Builds the training loss of `batch` under `cfg.mode`. All randomness
/// (dropout, reparameterization noise, MC divergence samples) comes from
/// `rng`, so re-seeding it freezes the noise.
pub fn batch_loss_graph<R: Rng + ?Sized>(
    tape: &mut Tape,
    bound: &Bound,
    model: &SpanModel,
    cfg: &TrainConfig,
    batch: &Batch,
    rng: &mut R,
    training: bool,
) -> Result<LossVars> {
    let orig = encode_samples(tape, bound, model, &batch.originals, rng, training)?;
    let w = cfg.weights;
    let variants = if cfg.mode.uses_variants() && !batch.variants.is_empty() {
        Some(encode_samples(tape, bound, model, &batch.variants, rng, training)?)
    } else {
        None
    };

    let variant_base = cfg.mode == TrainMode::DataAug || cfg.base_on_variant;
    let base = match &variants {
        Some(var) if variant_base => {
            let z = tape.vstack(&[orig.z, var.z]);
            let mut gold = orig.labels.clone();
            gold.extend_from_slice(&var.labels);
            base_loss_graph(tape, bound, z, &gold)
        }
        _ => base_loss_graph(tape, bound, orig.z, &orig.labels),
    };

    let mut gi = None;
    let mut si = None;
    match cfg.mode {
        TrainMode::BaseOnly | TrainMode::DataAug => {}
        TrainMode::VaniIb => si = Some(vanilla_ib_graph(tape, orig.post)),
        TrainMode::Miner => {
            if let Some(var) = &variants {
                let rows_a: Vec<usize> = batch
                    .alignments
                    .iter()
                    .map(|p| orig.offsets[p.sentence] + p.original_span)
                    .collect();
                let rows_b: Vec<usize> = batch
                    .alignments
                    .iter()
                    .map(|p| var.offsets[p.sentence] + p.variant_span)
                    .collect();
                if rows_a.len() >= 2 {
                    let za = tape.gather_rows(orig.z, &rows_a);
                    let zb = tape.gather_rows(var.z, &rows_b);
                    gi = Some(gi_loss_graph(
                        tape,
                        bound,
                        model.config.critic,
                        za,
                        zb,
                        cfg.symmetric_gi,
                    )?);
                } else {
                    log::debug!("batch has {} aligned pair(s); gi term skipped", rows_a.len());
                }
                if !rows_a.is_empty() {
                    let p = orig.post.select(tape, &rows_a);
                    let q = var.post.select(tape, &rows_b);
                    si = Some(si_loss_graph(tape, p, q, cfg.js_mode, cfg.js_samples, rng));
                }
            }
        }
    }

    let mut total = base;
    if let Some(g) = gi {
        let scaled = tape.scale(g, w.gamma);
        total = tape.add(total, scaled);
    }
    if let Some(s) = si {
        let scaled = tape.scale(s, w.beta);
        total = tape.add(total, scaled);
    }
    Ok(LossVars { base, gi, si, total })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub base: f64,
    pub gi: f64,
    pub si: f64,
    pub total: f64,
    /// Set on the last step of each epoch.
    pub dev_f1: Option<f64>,
}

pub const LOG_HEADER: &str = "step,epoch,base,gi,si,total,dev_f1";

/// Values are written in shortest round-trip form, so equal logs mean equal
/// runs.
pub fn log_csv(records: &[LossRecord]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in records {
        let dev = r.dev_f1.map(|f| f.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step, r.epoch, r.base, r.gi, r.si, r.total, dev
        );
    }
    out
}

/// First-order adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Matrix>,
    second: BTreeMap<String, Matrix>,
}

impl Adam {
    pub fn new(learning_rate: f64, config: AdamConfig) -> Self {
        Self {
            learning_rate,
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &BTreeMap<String, Matrix>) {
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *pi -= self.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + epsilon);
            }
        }
    }
}

/// Parameter gradients of `loss`, keyed by parameter name.
pub fn collect_gradients(tape: &Tape, bound: &Bound, params: &ModelParams, loss: Var) -> BTreeMap<String, Matrix> {
    let mut grads = tape.backward(loss);
    params
        .names()
        .filter_map(|n| grads.take(bound.var(n)).map(|g| (n.to_string(), g)))
        .collect()
}

/// One forward/backward pass and Adam update.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut SpanModel,
    optimizer: &mut Adam,
    batch: &Batch,
    cfg: &TrainConfig,
    rng: &mut R,
    step: usize,
    epoch: usize,
) -> Result<LossRecord> {
    if let Some(name) = model.params.first_non_finite() {
        return Err(Error::NonFinite {
            tensor: name.to_string(),
            stage: format!("parameters before step {step}"),
        });
    }
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, true);
    let loss = batch_loss_graph(&mut tape, &bound, model, cfg, batch, rng, true)?;
    let record = LossRecord {
        step,
        epoch,
        base: tape.scalar(loss.base),
        gi: loss.gi.map_or(0.0, |v| tape.scalar(v)),
        si: loss.si.map_or(0.0, |v| tape.scalar(v)),
        total: tape.scalar(loss.total),
        dev_f1: None,
    };
    for (name, value) in [("loss.base", record.base), ("loss.gi", record.gi), ("loss.si", record.si)] {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                tensor: name.to_string(),
                stage: format!("forward pass at step {step}"),
            });
        }
    }
    let grads = collect_gradients(&tape, &bound, &model.params, loss.total);
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFinite {
            tensor: name.clone(),
            stage: format!("gradient at step {step}"),
        });
    }
    optimizer.update(&mut model.params, &grads);
    if let Some(name) = model.params.first_non_finite() {
        return Err(Error::NonFinite {
            tensor: name.to_string(),
            stage: format!("update at step {step}"),
        });
    }
    Ok(record)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinate with the largest error.
    pub worst: Option<(String, usize)>,
}

/// Denominator floor for the relative error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Central-difference check of `loss` at the given `(tensor, flat index)`
/// coordinates. The relative error is
/// `|analytic - numeric| / max(|analytic|, |numeric|, GRAD_CHECK_FLOOR)`.
/// `loss` must be deterministic: any noise it draws has to be reseeded on
/// every call.
pub fn gradient_check<F>(
    params: &ModelParams,
    coords: &[(String, usize)],
    loss: F,
    epsilon: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let root = loss(&mut tape, &bound)?;
    let grads = collect_gradients(&tape, &bound, params, root);

    let eval = |p: &ModelParams| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, false);
        let v = loss(&mut tape, &bound)?;
        Ok(tape.scalar(v))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut probe = params.clone();
    for (name, idx) in coords {
        let original = params
            .try_get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?
            .data()[*idx];
        let analytic = grads.get(name).map_or(0.0, |g| g.data()[*idx]);
        probe.get_mut(name).expect("checked above").data_mut()[*idx] = original + epsilon;
        let up = eval(&probe)?;
        probe.get_mut(name).expect("checked above").data_mut()[*idx] = original - epsilon;
        let down = eval(&probe)?;
        probe.get_mut(name).expect("checked above").data_mut()[*idx] = original;
        let numeric = (up - down) / (2.0 * epsilon);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((name.clone(), *idx));
        }
    }
    Ok(report)
}

/// Every coordinate of every tensor.
pub fn all_coordinates(params: &ModelParams) -> Vec<(String, usize)> {
    params
        .iter()
        .flat_map(|(n, m)| (0..m.len()).map(move |i| (n.to_string(), i)))
        .collect()
}

/// Up to `per_tensor` random coordinates of each tensor.
pub fn sample_coordinates<R: Rng + ?Sized>(params: &ModelParams, per_tensor: usize, rng: &mut R) -> Vec<(String, usize)> {
    params
        .iter()
        .flat_map(|(n, m)| {
            let k = per_tensor.min(m.len());
            let mut idx = rand::seq::index::sample(rng, m.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| (n.to_string(), i)).collect::<Vec<_>>()
        })
        .collect()
}

/// A retained model with the epoch and dev score that selected it.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub epoch: usize,
    pub dev_f1: f64,
    pub model: SpanModel,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters after the last epoch.
    pub model: SpanModel,
    /// Best `checkpoint_top_k` epochs by dev F1, best first.
    pub checkpoints: Vec<Snapshot>,
    pub log: Vec<LossRecord>,
    pub dev_history: Vec<(usize, f64)>,
}

/// Builds vocabulary, labels and fresh parameters from `train`.
pub fn init_model(train: &[Sentence], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<SpanModel> {
    let vocab = build_vocabulary(train, cfg.vocab_min_count)?;
    let labels = LabelSet::from_corpus(train);
    let mut rng = ChaCha8Rng::seed_from_u64(stream(cfg.seed, STREAM_INIT, 0));
    SpanModel::new(model_cfg.clone(), vocab, labels, &mut rng)
}

pub fn fit(train: &[Sentence], dev: &[Sentence], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<FitOutcome> {
    let model = init_model(train, model_cfg, cfg)?;
    fit_model(model, train, dev, cfg)
}

/// Trains `model` for `cfg.epochs`, scoring dev after every epoch.
pub fn fit_model(mut model: SpanModel, train: &[Sentence], dev: &[Sentence], cfg: &TrainConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    if dev.is_empty() {
        return Err(Error::Precondition("dev corpus is empty".into()));
    }
    let train = truncate_corpus(train, cfg.max_sentence_len);
    let lexicon = build_mention_lexicon(&train);
    let mut optimizer = Adam::new(cfg.learning_rate, cfg.adam);
    let mut log = Vec::new();
    let mut checkpoints: Vec<Snapshot> = Vec::new();
    let mut dev_history = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let batches = make_batches(&train, &lexicon, cfg, model.config.encoder.max_span_length, epoch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(stream(cfg.seed, STREAM_STEP, epoch as u64));
        for batch in &batches {
            log.push(train_step(&mut model, &mut optimizer, batch, cfg, &mut rng, step, epoch)?);
            step += 1;
        }
        let dev_f1 = micro_f1(&predict(&model, dev)?, dev)?.overall.f1;
        if let Some(last) = log.last_mut() {
            last.dev_f1 = Some(dev_f1);
        }
        dev_history.push((epoch, dev_f1));
        log::info!("epoch {epoch}: dev F1 {dev_f1:.4}");
        checkpoints.push(Snapshot {
            epoch,
            dev_f1,
            model: model.clone(),
        });
        checkpoints.sort_by(|a, b| b.dev_f1.total_cmp(&a.dev_f1).then(a.epoch.cmp(&b.epoch)));
        checkpoints.truncate(cfg.checkpoint_top_k);
    }
    Ok(FitOutcome {
        model,
        checkpoints,
        log,
        dev_history,
    })
}

/// Test scores of each retained checkpoint and their mean F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKReport {
    pub per_checkpoint: Vec<CheckpointScore>,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointScore {
    pub epoch: usize,
    pub dev_f1: f64,
    pub test: EvalReport,
}

pub fn evaluate_checkpoints(
    checkpoints: &[Snapshot],
    test: &[Sentence],
    dict: Option<&MentionDictionary>,
) -> Result<TopKReport> {
    let per_checkpoint = checkpoints
        .iter()
        .map(|c| {
            Ok(CheckpointScore {
                epoch: c.epoch,
                dev_f1: c.dev_f1,
                test: evaluate(&predict(&c.model, test)?, test, dict)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_f1 = if per_checkpoint.is_empty() {
        0.0
    } else {
        per_checkpoint.iter().map(|c| c.test.overall.f1).sum::<f64>() / per_checkpoint.len() as f64
    };
    Ok(TopKReport { per_checkpoint, mean_f1 })
}
