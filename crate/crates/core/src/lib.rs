//! Span-based named entity recognition with a Gaussian information-bottleneck
//! span representation, trained with two mutual-information objectives:
//! an InfoNCE term that rewards agreement between a span and its
//! mention-replaced counterpart, and a divergence term that penalizes
//! posteriors sensitive to the entity name itself.
//!
//! The crate is organized bottom-up:
//!
//! * [`corpus`] reads CoNLL files, enumerates spans and computes OOV statistics.
//! * [`augment`] builds contrastive pairs and perturbed evaluation sets.
//! * [`encoder`], [`bottleneck`] and [`objectives`] form the differentiable model,
//!   built on the reverse-mode tape in [`autodiff`].
//! * [`training`] runs optimization, checkpoint selection and gradient checks.
//! * [`decode_eval`] decodes flat entities and scores them.

pub mod augment;
pub mod autodiff;
pub mod bottleneck;
pub mod checkpoint;
pub mod corpus;
pub mod decode_eval;
pub mod encoder;
pub mod error;
pub mod model;
pub mod objectives;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use corpus::{EntityMention, MentionLexicon, Sentence, SpanCandidate, Vocabulary};
pub use decode_eval::{EvalReport, ScoredSpan};
pub use error::{Error, Result};
pub use model::{LabelSet, ModelConfig, ModelParams, SpanModel};
pub use tensor::Matrix;
pub use training::{TrainConfig, TrainMode};
