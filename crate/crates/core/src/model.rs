//! Model configuration, label inventory, and the named parameter collection.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::{Sentence, Vocabulary, OUTSIDE};
use crate::encoder::{ContextArch, EncoderConfig};
use crate::error::{Error, Result};
use crate::objectives::CriticKind;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Width of the hidden layer shared by the mean and scale heads.
    pub ib_hidden_dim: usize,
    /// Bottleneck dimension K.
    pub latent_dim: usize,
    pub critic: CriticKind,
    pub critic_hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            ib_hidden_dim: 100,
            latent_dim: 50,
            critic: CriticKind::Bilinear,
            critic_hidden_dim: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.ib_hidden_dim == 0 || self.latent_dim == 0 || self.critic_hidden_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Span label inventory `Y`; index 0 is always `O`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    labels: Vec<String>,
}

impl LabelSet {
    pub const OUTSIDE_ID: usize = 0;

    pub fn new<I, S>(entity_types: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut types: Vec<String> = entity_types
            .into_iter()
            .map(Into::into)
            .filter(|t| t != OUTSIDE)
            .collect();
        types.sort();
        types.dedup();
        let mut labels = vec![OUTSIDE.to_string()];
        labels.extend(types);
        Self { labels }
    }

    pub fn from_corpus(sentences: &[Sentence]) -> Self {
        Self::new(
            sentences
                .iter()
                .flat_map(|s| s.mentions.iter().map(|m| m.etype.clone())),
        )
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn name(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn entity_types(&self) -> &[String] {
        &self.labels[1..]
    }

    pub fn names(&self) -> &[String] {
        &self.labels
    }
}

/// Every trainable tensor, keyed by a unique dotted name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, Matrix>,
}

impl ModelParams {
    /// Fresh parameters. Embedding and length tables are uniform in
    /// [-0.1, 0.1]; dense maps use Glorot scaling; biases start at zero.
    pub fn init<R: Rng + ?Sized>(
        config: &ModelConfig,
        vocab_size: usize,
        num_labels: usize,
        rng: &mut R,
    ) -> Self {
        let enc = &config.encoder;
        let (e, h) = (enc.embed_dim, enc.hidden_dim);
        let mut p = Self::default();
        p.insert("embed.tokens", Matrix::uniform(vocab_size, e, 0.1, rng));
        match enc.context_arch {
            ContextArch::BidirectionalRecurrent => {
                for dir in ["fwd", "bwd"] {
                    p.insert(&format!("encoder.{dir}.w_in"), Matrix::glorot(e, h, rng));
                    p.insert(&format!("encoder.{dir}.w_rec"), Matrix::glorot(h, h, rng));
                    p.insert(&format!("encoder.{dir}.bias"), Matrix::zeros(1, h));
                }
            }
            ContextArch::WindowedSelfAttention => {
                for name in ["query", "key", "value"] {
                    p.insert(&format!("encoder.attn.{name}"), Matrix::glorot(e, h, rng));
                }
                p.insert("encoder.attn.out", Matrix::glorot(e + h, 2 * h, rng));
                p.insert("encoder.attn.out_bias", Matrix::zeros(1, 2 * h));
            }
        }
        p.insert(
            "span.length",
            Matrix::uniform(enc.max_span_length, enc.length_embed_dim, 0.1, rng),
        );
        let (d, ib, k) = (enc.span_dim(), config.ib_hidden_dim, config.latent_dim);
        p.insert("ib.hidden", Matrix::glorot(d, ib, rng));
        p.insert("ib.hidden_bias", Matrix::zeros(1, ib));
        p.insert("ib.mean", Matrix::glorot(ib, k, rng));
        p.insert("ib.mean_bias", Matrix::zeros(1, k));
        p.insert("ib.scale", Matrix::glorot(ib, k, rng));
        p.insert("ib.scale_bias", Matrix::zeros(1, k));
        p.insert("labels", Matrix::glorot(num_labels, k, rng));
        match config.critic {
            CriticKind::Bilinear => p.insert("critic.bilinear", Matrix::glorot(k, k, rng)),
            CriticKind::Mlp => {
                let c = config.critic_hidden_dim;
                p.insert("critic.left", Matrix::glorot(k, c, rng));
                p.insert("critic.right", Matrix::glorot(k, c, rng));
                p.insert("critic.bias", Matrix::zeros(1, c));
                p.insert("critic.out", Matrix::glorot(c, 1, rng));
            }
        }
        p
    }

    pub fn insert(&mut self, name: &str, value: Matrix) {
        self.tensors.insert(name.to_string(), value);
    }

    /// Panics on unknown names; parameter names are fixed by [`ModelParams::init`].
    pub fn get(&self, name: &str) -> &Matrix {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.values().map(Matrix::len).sum()
    }

    /// First tensor containing a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|(_, m)| !m.is_finite())
            .map(|(k, _)| k.as_str())
    }

    /// Puts every tensor on `tape`, tracked for gradients when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(name, m)| {
                let v = if trainable {
                    tape.param(m.clone())
                } else {
                    tape.constant(m.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Tape handles of bound parameters.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Everything needed to run the model: configuration, vocabulary, label set
/// and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub labels: LabelSet,
    pub params: ModelParams,
}

impl SpanModel {
    pub fn new<R: Rng + ?Sized>(
        config: ModelConfig,
        vocab: Vocabulary,
        labels: LabelSet,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, vocab.len(), labels.len(), rng);
        Ok(Self {
            config,
            vocab,
            labels,
            params,
        })
    }
}
