//! Token and span representations.
//!
//! Tokens are embedded with a trainable table and contextualized by either a
//! bidirectional Elman recurrence or a windowed self-attention layer; both
//! produce `2 * hidden_dim` features per token. A span `(b, e)` is represented
//! as `[h_b; h_e; length_table[e - b]]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::{Sentence, SpanCandidate, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{Bound, ModelParams};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ContextArch {
    #[default]
    BidirectionalRecurrent,
    WindowedSelfAttention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_span_length: usize,
    pub length_embed_dim: usize,
    pub dropout_rate: f64,
    pub context_arch: ContextArch,
    /// Tokens attended to on each side under windowed self-attention.
    pub attention_window: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden_dim: 64,
            max_span_length: 4,
            length_embed_dim: 25,
            dropout_rate: 0.2,
            context_arch: ContextArch::BidirectionalRecurrent,
            attention_window: 3,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0
            || self.hidden_dim == 0
            || self.max_span_length == 0
            || self.length_embed_dim == 0
        {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Width of each contextual token vector `h_i`.
    pub fn token_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Width of the combined span vector `t_i`.
    pub fn span_dim(&self) -> usize {
        2 * self.token_dim() + self.length_embed_dim
    }
}

/// Inverted-dropout mask: kept entries are scaled by `1 / (1 - rate)`.
fn dropout<R: Rng + ?Sized>(tape: &mut Tape, x: Var, rate: f64, rng: &mut R) -> Var {
    if rate == 0.0 {
        return x;
    }
    let (r, c) = tape.value(x).shape();
    let keep = 1.0 / (1.0 - rate);
    let mask = Matrix::from_vec(
        r,
        c,
        (0..r * c)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    );
    let m = tape.constant(mask);
    tape.mul(x, m)
}

/// `n x embed_dim` embedding rows for token ids.
pub fn embed_ids(tape: &mut Tape, bound: &Bound, ids: &[usize]) -> Var {
    tape.gather_rows(bound.var("embed.tokens"), ids)
}

/// Contextual vectors `h_1..h_n` (`n x 2 * hidden_dim`). Dropout is applied
/// to the inputs and outputs when `rng` is given.
pub fn encode_context_graph<R: Rng + ?Sized>(
    tape: &mut Tape,
    bound: &Bound,
    config: &EncoderConfig,
    u: Var,
    mut rng: Option<&mut R>,
) -> Var {
    let u = match rng.as_deref_mut() {
        Some(r) => dropout(tape, u, config.dropout_rate, r),
        None => u,
    };
    let h = match config.context_arch {
        ContextArch::BidirectionalRecurrent => birnn(tape, bound, config, u),
        ContextArch::WindowedSelfAttention => windowed_attention(tape, bound, config, u),
    };
    match rng {
        Some(r) => dropout(tape, h, config.dropout_rate, r),
        None => h,
    }
}

fn recurrence(tape: &mut Tape, bound: &Bound, dir: &str, projected: Var, order: &[usize]) -> Vec<Var> {
    let w_rec = bound.var(&format!("encoder.{dir}.w_rec"));
    let hidden = tape.value(w_rec).rows();
    let mut prev: Option<Var> = None;
    let mut states = vec![None; order.len()];
    for &t in order {
        let x_t = tape.gather_rows(projected, &[t]);
        let pre = match prev {
            Some(h) => {
                let rec = tape.matmul(h, w_rec);
                tape.add(x_t, rec)
            }
            None => x_t,
        };
        let h = tape.tanh(pre);
        states[t] = Some(h);
        prev = Some(h);
    }
    debug_assert_eq!(tape.value(prev.unwrap()).cols(), hidden);
    states.into_iter().map(|s| s.expect("every step visited")).collect()
}

fn birnn(tape: &mut Tape, bound: &Bound, _config: &EncoderConfig, u: Var) -> Var {
    let n = tape.value(u).rows();
    let mut outputs = Vec::with_capacity(2);
    for (dir, order) in [
        ("fwd", (0..n).collect::<Vec<_>>()),
        ("bwd", (0..n).rev().collect::<Vec<_>>()),
    ] {
        let w_in = bound.var(&format!("encoder.{dir}.w_in"));
        let bias = bound.var(&format!("encoder.{dir}.bias"));
        let proj = tape.matmul(u, w_in);
        let proj = tape.add_row(proj, bias);
        let states = recurrence(tape, bound, dir, proj, &order);
        outputs.push(tape.vstack(&states));
    }
    tape.hstack(&outputs)
}

fn windowed_attention(tape: &mut Tape, bound: &Bound, config: &EncoderConfig, u: Var) -> Var {
    let n = tape.value(u).rows();
    let q = tape.matmul(u, bound.var("encoder.attn.query"));
    let k = tape.matmul(u, bound.var("encoder.attn.key"));
    let v = tape.matmul(u, bound.var("encoder.attn.value"));
    let scores = tape.matmul_t(q, k);
    let scores = tape.scale(scores, 1.0 / (config.hidden_dim as f64).sqrt());
    let w = config.attention_window;
    let mask = Matrix::from_vec(
        n,
        n,
        (0..n * n)
            .map(|idx| {
                let (i, j) = (idx / n, idx % n);
                if i.abs_diff(j) <= w {
                    0.0
                } else {
                    -1e9
                }
            })
            .collect(),
    );
    let mask = tape.constant(mask);
    let scores = tape.add(scores, mask);
    let log_attn = tape.log_softmax_rows(scores);
    let attn = tape.exp(log_attn);
    let ctx = tape.matmul(attn, v);
    let joined = tape.hstack(&[u, ctx]);
    let out = tape.matmul(joined, bound.var("encoder.attn.out"));
    let out = tape.add_row(out, bound.var("encoder.attn.out_bias"));
    tape.tanh(out)
}

/// Span vectors for 1-based inclusive `(start, end)` pairs over token
/// representations `h`.
pub fn span_repr_graph(
    tape: &mut Tape,
    bound: &Bound,
    config: &EncoderConfig,
    h: Var,
    spans: &[(usize, usize)],
) -> Result<Var> {
    let n = tape.value(h).rows();
    let mut starts = Vec::with_capacity(spans.len());
    let mut ends = Vec::with_capacity(spans.len());
    let mut lengths = Vec::with_capacity(spans.len());
    for &(s, e) in spans {
        if s == 0 || s > e || e > n {
            return Err(Error::Contract(format!(
                "span ({s}, {e}) outside sentence of {n} tokens"
            )));
        }
        let len = e - s + 1;
        if len > config.max_span_length {
            return Err(Error::Contract(format!(
                "span ({s}, {e}) has length {len} > max_span_length {}",
                config.max_span_length
            )));
        }
        starts.push(s - 1);
        ends.push(e - 1);
        lengths.push(len - 1);
    }
    let hb = tape.gather_rows(h, &starts);
    let he = tape.gather_rows(h, &ends);
    let hl = tape.gather_rows(bound.var("span.length"), &lengths);
    Ok(tape.hstack(&[hb, he, hl]))
}

/// A span representation split into its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanRepr {
    pub boundary: Vec<f64>,
    pub length_emb: Vec<f64>,
    pub combined: Vec<f64>,
}

/// `u_1..u_n`: embedding rows, with unknown tokens sharing the unknown row.
pub fn embed_tokens(sentence: &Sentence, vocab: &Vocabulary, params: &ModelParams) -> Matrix {
    let table = params.get("embed.tokens");
    let rows: Vec<Vec<f64>> = vocab
        .encode(&sentence.tokens)
        .into_iter()
        .map(|id| table.row(id).to_vec())
        .collect();
    Matrix::from_rows(&rows)
}

/// `h_1..h_n` for embedded tokens. With `training`, dropout draws from `rng`.
pub fn encode_context<R: Rng + ?Sized>(
    u: &Matrix,
    params: &ModelParams,
    config: &EncoderConfig,
    training: bool,
    rng: &mut R,
) -> Matrix {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let uv = tape.constant(u.clone());
    let h = encode_context_graph(&mut tape, &bound, config, uv, training.then_some(rng));
    tape.value(h).clone()
}

pub fn span_representation(
    h: &Matrix,
    span: &SpanCandidate,
    params: &ModelParams,
    config: &EncoderConfig,
) -> Result<SpanRepr> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let hv = tape.constant(h.clone());
    let t = span_repr_graph(&mut tape, &bound, config, hv, &[(span.start, span.end)])?;
    let combined = tape.value(t).row(0).to_vec();
    let split = 2 * h.cols();
    Ok(SpanRepr {
        boundary: combined[..split].to_vec(),
        length_emb: combined[split..].to_vec(),
        combined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(arch: ContextArch) -> (ModelConfig, Vocabulary, ModelParams, Sentence) {
        let s = Sentence::from_text("the cat sat on the mat today", vec![]).unwrap();
        let vocab = build_vocabulary(std::slice::from_ref(&s), 1).unwrap();
        let mut cfg = ModelConfig::default();
        cfg.encoder.embed_dim = 6;
        cfg.encoder.hidden_dim = 5;
        cfg.encoder.length_embed_dim = 3;
        cfg.encoder.context_arch = arch;
        cfg.encoder.attention_window = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ModelParams::init(&cfg, vocab.len(), 3, &mut rng);
        (cfg, vocab, params, s)
    }

    #[test]
    fn unknown_tokens_share_a_row() {
        let (_, vocab, params, _) = setup(ContextArch::BidirectionalRecurrent);
        let s = Sentence::from_text("cat zebra unicorn cat", vec![]).unwrap();
        let u = embed_tokens(&s, &vocab, &params);
        assert_eq!(u.shape(), (4, 6));
        assert_eq!(u.row(1), u.row(2));
        assert_eq!(u.row(0), u.row(3));
        assert_eq!(u.row(0), params.get("embed.tokens").row(vocab.id("cat")));
    }

    #[test]
    fn context_shapes_and_determinism() {
        for arch in [ContextArch::BidirectionalRecurrent, ContextArch::WindowedSelfAttention] {
            let (cfg, vocab, params, s) = setup(arch);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let u = embed_tokens(&s, &vocab, &params);
            let h1 = encode_context(&u, &params, &cfg.encoder, false, &mut rng);
            let h2 = encode_context(&u, &params, &cfg.encoder, false, &mut rng);
            assert_eq!(h1.shape(), (7, 10));
            assert_eq!(h1, h2);
            let single = Sentence::from_text("cat", vec![]).unwrap();
            let u1 = embed_tokens(&single, &vocab, &params);
            assert_eq!(encode_context(&u1, &params, &cfg.encoder, false, &mut rng).shape(), (1, 10));
        }
    }

    #[test]
    fn dropout_only_in_training() {
        let (cfg, vocab, params, s) = setup(ContextArch::BidirectionalRecurrent);
        let u = embed_tokens(&s, &vocab, &params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let eval = encode_context(&u, &params, &cfg.encoder, false, &mut rng);
        let train = encode_context(&u, &params, &cfg.encoder, true, &mut rng);
        assert_ne!(eval, train);
    }

    #[test]
    fn distant_context_changes_representation() {
        let (cfg, vocab, params, _) = setup(ContextArch::BidirectionalRecurrent);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Sentence::from_text("the cat sat on the mat today", vec![]).unwrap();
        let b = Sentence::from_text("the cat sat on the today mat", vec![]).unwrap();
        let ha = encode_context(&embed_tokens(&a, &vocab, &params), &params, &cfg.encoder, false, &mut rng);
        let hb = encode_context(&embed_tokens(&b, &vocab, &params), &params, &cfg.encoder, false, &mut rng);
        // token 1 is unchanged but sees different right context
        assert_ne!(ha.row(0), hb.row(0));
    }

    #[test]
    fn span_parts_concatenate() {
        let (cfg, vocab, params, s) = setup(ContextArch::BidirectionalRecurrent);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = encode_context(&embed_tokens(&s, &vocab, &params), &params, &cfg.encoder, false, &mut rng);
        let span = |start, end| SpanCandidate {
            start,
            end,
            label: "O".into(),
        };
        let r = span_representation(&h, &span(2, 3), &params, &cfg.encoder).unwrap();
        assert_eq!(r.combined.len(), 2 * 10 + 3);
        assert_eq!(&r.boundary[..10], h.row(1));
        assert_eq!(&r.boundary[10..], h.row(2));
        assert_eq!(r.length_emb, params.get("span.length").row(1));
        let single = span_representation(&h, &span(1, 1), &params, &cfg.encoder).unwrap();
        assert_eq!(&single.boundary[..10], &single.boundary[10..]);
        assert!(matches!(
            span_representation(&h, &span(1, 5), &params, &cfg.encoder),
            Err(Error::Contract(_))
        ));
    }
}
