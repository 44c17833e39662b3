//! Span classification at inference time, greedy non-overlapping decoding and
//! entity-level micro-F1 with in-dictionary / out-of-dictionary breakdowns.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::bottleneck::posterior_graph;
use crate::corpus::{enumerate_spans, EntityMention, MentionDictionary, Sentence};
use crate::encoder::{embed_ids, encode_context_graph, span_repr_graph};
use crate::error::{Error, Result};
use crate::model::{LabelSet, SpanModel};
use crate::objectives::label_logits_graph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
    pub prob: f64,
}

impl ScoredSpan {
    pub fn new(start: usize, end: usize, label: impl Into<String>, prob: f64) -> Self {
        Self {
            start,
            end,
            label: label.into(),
            prob,
        }
    }

    pub fn overlaps(&self, other: &ScoredSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn to_mention(&self) -> EntityMention {
        EntityMention::new(self.start, self.end, self.label.clone())
    }
}

/// Label distribution of one enumerated span, indexed like the model's [`LabelSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpanDistribution {
    pub start: usize,
    pub end: usize,
    pub probs: Vec<f64>,
}

/// Softmax over labels for every enumerated span, using the posterior mean.
pub fn span_distributions(sentence: &Sentence, model: &SpanModel) -> Result<Vec<SpanDistribution>> {
    let cfg = &model.config.encoder;
    let spans: Vec<(usize, usize)> = enumerate_spans(sentence, cfg.max_span_length)
        .into_iter()
        .map(|s| (s.start, s.end))
        .collect();
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, false);
    let u = embed_ids(&mut tape, &bound, &model.vocab.encode(&sentence.tokens));
    let h = encode_context_graph::<rand_chacha::ChaCha8Rng>(&mut tape, &bound, cfg, u, None);
    let t = span_repr_graph(&mut tape, &bound, cfg, h, &spans)?;
    let post = posterior_graph(&mut tape, &bound, t);
    let logits = label_logits_graph(&mut tape, &bound, post.mean);
    let logp = tape.log_softmax_rows(logits);
    let logp = tape.value(logp);
    Ok(spans
        .iter()
        .enumerate()
        .map(|(i, &(start, end))| SpanDistribution {
            start,
            end,
            probs: logp.row(i).iter().map(|l| l.exp()).collect(),
        })
        .collect())
}

/// Non-`O` argmax spans with their probabilities. Argmax ties go to the lower
/// label index, so `O` wins ties.
pub fn classify_spans(sentence: &Sentence, model: &SpanModel) -> Result<Vec<ScoredSpan>> {
    Ok(span_distributions(sentence, model)?
        .into_iter()
        .filter_map(|d| {
            let (best, prob) = argmax(&d.probs);
            (best != LabelSet::OUTSIDE_ID)
                .then(|| ScoredSpan::new(d.start, d.end, model.labels.name(best), prob))
        })
        .collect())
}

fn argmax(xs: &[f64]) -> (usize, f64) {
    xs.iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, x)| if x > best.1 { (i, x) } else { best })
}

/// Priority used by [`heuristic_decode`]: higher probability first, then
/// earlier start, shorter span and lexicographically smaller label.
pub fn decode_order(a: &ScoredSpan, b: &ScoredSpan) -> Ordering {
    b.prob
        .total_cmp(&a.prob)
        .then(a.start.cmp(&b.start))
        .then((a.end - a.start).cmp(&(b.end - b.start)))
        .then(a.label.cmp(&b.label))
}

/// Greedy non-overlapping selection, returned sorted by start.
pub fn heuristic_decode(spans: &[ScoredSpan]) -> Vec<ScoredSpan> {
    let mut order: Vec<&ScoredSpan> = spans.iter().collect();
    order.sort_by(|a, b| decode_order(a, b));
    let mut kept: Vec<ScoredSpan> = Vec::new();
    for s in order {
        if kept.iter().all(|k| !k.overlaps(s)) {
            kept.push(s.clone());
        }
    }
    kept.sort_by_key(|s| (s.start, s.end));
    kept
}

/// Decoded entities for every sentence.
pub fn predict(model: &SpanModel, sentences: &[Sentence]) -> Result<Vec<Vec<ScoredSpan>>> {
    sentences
        .iter()
        .map(|s| classify_spans(s, model).map(|spans| heuristic_decode(&spans)))
        .collect()
}

/// Counts and rates for one slice of the evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Scores {
    /// Empty denominators give 0 for the affected rate.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }

    pub fn gold(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn predicted(&self) -> usize {
        self.tp + self.fp
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PartitionScores {
    pub in_dict: Scores,
    pub out_dict: Scores,
}

impl PartitionScores {
    /// InDict F1 minus OutDict F1.
    pub fn f1_gap(&self) -> f64 {
        self.in_dict.f1 - self.out_dict.f1
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DictReport {
    pub all: PartitionScores,
    pub per_type: BTreeMap<String, PartitionScores>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Scores,
    pub per_type: BTreeMap<String, Scores>,
    pub dictionary: Option<DictReport>,
}

pub const PARTITION_FOOTER: &str =
    "# predictions matching no gold mention are attributed to InDict or OutDict by their own surface string";

#[derive(Default, Clone, Copy)]
struct Tally {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Tally {
    fn scores(self) -> Scores {
        Scores::from_counts(self.tp, self.fp, self.fn_)
    }
}

#[derive(Default, Clone, Copy)]
struct SplitTally {
    in_dict: Tally,
    out_dict: Tally,
}

impl SplitTally {
    fn side(&mut self, in_dict: bool) -> &mut Tally {
        if in_dict {
            &mut self.in_dict
        } else {
            &mut self.out_dict
        }
    }

    fn scores(self) -> PartitionScores {
        PartitionScores {
            in_dict: self.in_dict.scores(),
            out_dict: self.out_dict.scores(),
        }
    }
}

/// Exact-match micro-F1 over the whole corpus.
pub fn micro_f1(pred: &[Vec<ScoredSpan>], gold: &[Sentence]) -> Result<EvalReport> {
    evaluate(pred, gold, None)
}

/// Micro-F1 plus, when `dict` is given, the InDict/OutDict breakdown. A
/// prediction belongs to the partition of the gold mention it matches;
/// unmatched predictions use their own surface string.
pub fn evaluate(
    pred: &[Vec<ScoredSpan>],
    gold: &[Sentence],
    dict: Option<&MentionDictionary>,
) -> Result<EvalReport> {
    if pred.len() != gold.len() {
        return Err(Error::Contract(format!(
            "{} prediction lists for {} gold sentences",
            pred.len(),
            gold.len()
        )));
    }
    let mut overall = Tally::default();
    let mut by_type: BTreeMap<String, Tally> = BTreeMap::new();
    let mut split_all = SplitTally::default();
    let mut split_by_type: BTreeMap<String, SplitTally> = BTreeMap::new();

    for (preds, sentence) in pred.iter().zip(gold) {
        let gold_set: HashSet<(usize, usize, &str)> = sentence
            .mentions
            .iter()
            .map(|m| (m.start, m.end, m.etype.as_str()))
            .collect();
        let pred_set: BTreeSet<(usize, usize, &str)> =
            preds.iter().map(|p| (p.start, p.end, p.label.as_str())).collect();
        let in_dict = |start: usize, end: usize| {
            dict.is_some_and(|d| start >= 1 && end <= sentence.len() && d.contains(&sentence.surface(start, end)))
        };

        for m in &sentence.mentions {
            let key = (m.start, m.end, m.etype.as_str());
            let hit = pred_set.contains(&key);
            let side = in_dict(m.start, m.end);
            let t = by_type.entry(m.etype.clone()).or_default();
            let st = split_by_type.entry(m.etype.clone()).or_default();
            if hit {
                overall.tp += 1;
                t.tp += 1;
                split_all.side(side).tp += 1;
                st.side(side).tp += 1;
            } else {
                overall.fn_ += 1;
                t.fn_ += 1;
                split_all.side(side).fn_ += 1;
                st.side(side).fn_ += 1;
            }
        }
        for &(start, end, label) in &pred_set {
            if gold_set.contains(&(start, end, label)) {
                continue;
            }
            let side = in_dict(start, end);
            overall.fp += 1;
            by_type.entry(label.to_string()).or_default().fp += 1;
            split_all.side(side).fp += 1;
            split_by_type.entry(label.to_string()).or_default().side(side).fp += 1;
        }
    }

    Ok(EvalReport {
        overall: overall.scores(),
        per_type: by_type.into_iter().map(|(k, v)| (k, v.scores())).collect(),
        dictionary: dict.map(|_| DictReport {
            all: split_all.scores(),
            per_type: split_by_type.into_iter().map(|(k, v)| (k, v.scores())).collect(),
        }),
    })
}

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

impl EvalReport {
    /// Rows per type then `ALL`: `type,tp,fp,fn,precision,recall,f1`.
    pub fn overall_csv(&self) -> String {
        let mut out = String::from("type,tp,fp,fn,precision,recall,f1\n");
        let rows = self
            .per_type
            .iter()
            .map(|(k, v)| (k.as_str(), v))
            .chain(std::iter::once(("ALL", &self.overall)));
        for (name, s) in rows {
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{},{}",
                s.tp,
                s.fp,
                s.fn_,
                f4(s.precision),
                f4(s.recall),
                f4(s.f1)
            );
        }
        out
    }

    /// InDict/OutDict precision and recall per type and `ALL`, with
    /// InDict-minus-OutDict differences and the attribution footer.
    pub fn partition_csv(&self) -> Option<String> {
        let dict = self.dictionary.as_ref()?;
        let mut out = String::from(
            "type,indict_p,indict_r,indict_f1,outdict_p,outdict_r,outdict_f1,diff_p,diff_r,diff_f1\n",
        );
        let rows = dict
            .per_type
            .iter()
            .map(|(k, v)| (k.as_str(), v))
            .chain(std::iter::once(("ALL", &dict.all)));
        for (name, s) in rows {
            let (i, o) = (&s.in_dict, &s.out_dict);
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{},{},{},{},{}",
                f4(i.precision),
                f4(i.recall),
                f4(i.f1),
                f4(o.precision),
                f4(o.recall),
                f4(o.f1),
                f4(i.precision - o.precision),
                f4(i.recall - o.recall),
                f4(i.f1 - o.f1)
            );
        }
        out.push_str(PARTITION_FOOTER);
        out.push('\n');
        Some(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
