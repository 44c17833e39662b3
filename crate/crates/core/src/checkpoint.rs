//! Single-file model archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "SPANIBCK"
//! version      u32       FORMAT_VERSION
//! header_len   u64
//! header       JSON      CheckpointHeader (config, vocabulary, labels, extra metadata)
//! count        u32       number of tensors
//! per tensor:
//!   name_len   u32
//!   name       UTF-8
//!   dtype      u8        1 = f64
//!   ndim       u32       always 2
//!   dims       u64 * ndim
//!   data       f64 * prod(dims), row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{LabelSet, ModelConfig, ModelParams, SpanModel};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 8] = b"SPANIBCK";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub labels: LabelSet,
    #[serde(default)]
    pub extra: serde_json::Value,
}

fn format_tag() -> String {
    format!("spanib-checkpoint/{FORMAT_VERSION}")
}

pub fn to_bytes(model: &SpanModel, extra: serde_json::Value) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format: format_tag(),
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        labels: model.labels.clone(),
        extra,
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(model.params.iter().count() as u32).to_le_bytes());
    for (name, m) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Checkpoint("truncated archive".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Decodes an archive and checks every tensor against the shapes its own
/// config implies.
pub fn from_bytes(bytes: &[u8]) -> Result<(SpanModel, serde_json::Value)> {
    let mut r = Reader { buf: bytes };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint archive (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let header_len = r.u64()? as usize;
    let mut header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)?;
    if header.format != format_tag() {
        return Err(Error::Checkpoint(format!("unexpected format tag `{}`", header.format)));
    }
    header.vocab.rebuild_index();
    header.config.validate()?;

    let count = r.u32()? as usize;
    let mut params = ModelParams::default();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = r.u8()?;
        if dtype != DTYPE_F64 {
            return Err(Error::Checkpoint(format!("tensor `{name}` has unsupported dtype {dtype}")));
        }
        let ndim = r.u32()?;
        if ndim != 2 {
            return Err(Error::Checkpoint(format!("tensor `{name}` has {ndim} dims, expected 2")));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let raw = r.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(&name, Matrix::from_vec(rows, cols, data));
    }
    if !r.buf.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.buf.len())));
    }
    check_layout(&header.config, &header.vocab, &header.labels, &params)?;
    let model = SpanModel {
        config: header.config,
        vocab: header.vocab,
        labels: header.labels,
        params,
    };
    Ok((model, header.extra))
}

/// Parameter names and shapes must be exactly those a fresh model with the
/// same config would have.
pub fn check_layout(
    config: &ModelConfig,
    vocab: &Vocabulary,
    labels: &LabelSet,
    params: &ModelParams,
) -> Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let expected = ModelParams::init(config, vocab.len(), labels.len(), &mut rng);
    let got: Vec<(&str, (usize, usize))> = params.iter().map(|(n, m)| (n, m.shape())).collect();
    let want: Vec<(&str, (usize, usize))> = expected.iter().map(|(n, m)| (n, m.shape())).collect();
    if got != want {
        for (n, shape) in &want {
            match params.try_get(n) {
                None => return Err(Error::Checkpoint(format!("missing tensor `{n}`"))),
                Some(m) if m.shape() != *shape => {
                    return Err(Error::Checkpoint(format!(
                        "tensor `{n}` has shape {:?}, config expects {shape:?}",
                        m.shape()
                    )))
                }
                _ => {}
            }
        }
        return Err(Error::Checkpoint("unexpected extra tensors".into()));
    }
    Ok(())
}

pub fn save(path: impl AsRef<Path>, model: &SpanModel, extra: serde_json::Value) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model, extra)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(SpanModel, serde_json::Value)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Like [`load`], but the stored model config must equal `expected`.
pub fn load_expecting(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<SpanModel> {
    let (model, _) = load(path)?;
    if &model.config != expected {
        return Err(Error::Checkpoint(
            "stored model config does not match the requested config".into(),
        ));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, Sentence};

    fn model() -> SpanModel {
        let s = Sentence::from_text("a b c", vec![]).unwrap();
        let vocab = build_vocabulary(&[s], 1).unwrap();
        let mut cfg = ModelConfig::default();
        cfg.encoder.embed_dim = 4;
        cfg.encoder.hidden_dim = 3;
        cfg.latent_dim = 2;
        cfg.ib_hidden_dim = 5;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        SpanModel::new(cfg, vocab, LabelSet::new(["PER"]), &mut rng).unwrap()
    }

    #[test]
    fn round_trip() {
        let m = model();
        let extra = serde_json::json!({"epoch": 3, "dev_f1": 0.5});
        let (back, e) = from_bytes(&to_bytes(&m, extra.clone()).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(e, extra);
        assert_eq!(back.vocab.id("b"), m.vocab.id("b"));
    }

    #[test]
    fn file_round_trip_and_config_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = model();
        save(&path, &m, serde_json::Value::Null).unwrap();
        assert_eq!(load_expecting(&path, &m.config).unwrap(), m);
        let mut other = m.config.clone();
        other.latent_dim = 7;
        assert!(matches!(load_expecting(&path, &other), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn rejects_corruption() {
        let m = model();
        let bytes = to_bytes(&m, serde_json::Value::Null).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(from_bytes(&bad), Err(Error::Checkpoint(_))));
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());

        let mut wrong = m.clone();
        wrong.params.insert("labels", Matrix::zeros(5, 2));
        let bytes = to_bytes(&wrong, serde_json::Value::Null).unwrap();
        let err = from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("labels"), "{err}");
    }
}
