//! Checkpoint persistence.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "PCL1"
//! version 1 byte   (currently 1)
//! meta    u64 length + that many bytes of UTF-8 JSON
//! tensors repeated until EOF:
//!   u64 name length, name bytes,
//!   u64 rank, rank x u64 extents,
//!   numel x f64 values
//! ```
//!
//! Round-trips are bit-exact; `f64` values are stored verbatim.

use crate::encoder::{EncoderDims, EncoderParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"PCL1";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub dims: EncoderDims,
    pub dropout_rate: f64,
    pub tied: bool,
    pub seed: u64,
    pub step: u64,
    pub dev_score: f64,
    pub config_hash: String,
    /// id-ordered token list, so a checkpoint can tokenize evaluation
    /// input without the original corpus.
    pub vocab: Vec<String>,
}

fn tensor_entries<'a>(
    prefix: &str,
    params: &'a EncoderParams,
) -> Vec<(String, &'a Tensor)> {
    EncoderParams::TENSOR_NAMES
        .iter()
        .zip(params.tensors())
        .map(|(name, t)| (format!("{prefix}.{name}"), t))
        .collect()
}

pub fn save_checkpoint(
    theta: &EncoderParams,
    peer: &EncoderParams,
    meta: &CheckpointMeta,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    let meta_json = serde_json::to_vec(meta)
        .map_err(|e| Error::Contract(format!("metadata serialization failed: {e}")))?;
    buf.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta_json);

    let entries: Vec<(String, &Tensor)> = tensor_entries("theta", theta)
        .into_iter()
        .chain(tensor_entries("peer", peer))
        .collect();
    for (name, tensor) in entries {
        buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.shape().len() as u64).to_le_bytes());
        for &e in tensor.shape() {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Byte reader that remembers its position so format errors can name
/// the offending offset.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                what: format!("truncated while reading {what}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(EncoderParams, EncoderParams, CheckpointMeta)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };

    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            what: format!("bad magic {magic:?}, expected {MAGIC:?}"),
        });
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            what: format!("unsupported version {version}"),
        });
    }
    let meta_len = r.u64("metadata length")? as usize;
    let meta_offset = r.pos as u64;
    let meta_bytes = r.take(meta_len, "metadata block")?;
    let meta: CheckpointMeta = serde_json::from_slice(meta_bytes).map_err(|e| Error::Format {
        offset: meta_offset,
        what: format!("metadata is not valid JSON: {e}"),
    })?;

    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    while !r.done() {
        let name_len = r.u64("tensor name length")? as usize;
        let name_offset = r.pos as u64;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::Format {
                offset: name_offset,
                what: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.u64("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("tensor extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        let data_offset = r.pos as u64;
        let raw = r.take(numel * 8, "tensor values")?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|_| Error::Format {
            offset: data_offset,
            what: format!("inconsistent shape for tensor {name}"),
        })?;
        tensors.push((name, tensor));
    }

    let find = |name: &str| -> Result<Tensor> {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| Error::Format {
                offset: bytes.len() as u64,
                what: format!("missing tensor {name}"),
            })
    };
    let assemble = |prefix: &str| -> Result<EncoderParams> {
        let params = EncoderParams {
            embedding: find(&format!("{prefix}.embedding"))?,
            w1: find(&format!("{prefix}.w1"))?,
            b1: find(&format!("{prefix}.b1"))?,
            w2: find(&format!("{prefix}.w2"))?,
            b2: find(&format!("{prefix}.b2"))?,
            dropout_rate: meta.dropout_rate,
        };
        if params.dims() != meta.dims {
            return Err(Error::ShapeMismatch {
                context: "checkpoint tensors vs metadata dims",
                lhs: vec![
                    params.dims().vocab,
                    params.dims().d_embed,
                    params.dims().d_hidden,
                    params.dims().d_out,
                ],
                rhs: vec![
                    meta.dims.vocab,
                    meta.dims.d_embed,
                    meta.dims.d_hidden,
                    meta.dims.d_out,
                ],
            });
        }
        Ok(params)
    };

    Ok((assemble("theta")?, assemble("peer")?, meta))
}

/// Check loaded dims against what a configuration expects.
pub fn expect_dims(meta: &CheckpointMeta, expected: EncoderDims) -> Result<()> {
    if meta.dims != expected {
        return Err(Error::ShapeMismatch {
            context: "checkpoint dims vs configured dims",
            lhs: vec![
                meta.dims.vocab,
                meta.dims.d_embed,
                meta.dims.d_hidden,
                meta.dims.d_out,
            ],
            rhs: vec![
                expected.vocab,
                expected.d_embed,
                expected.d_hidden,
                expected.d_out,
            ],
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;

    fn meta(dims: EncoderDims) -> CheckpointMeta {
        CheckpointMeta {
            dims,
            dropout_rate: 0.1,
            tied: false,
            seed: 3,
            step: 250,
            dev_score: 0.6125,
            config_hash: "deadbeef".into(),
            vocab: vec!["<pad>".into(), "<unk>".into(), "a".into()],
        }
    }

    fn dims() -> EncoderDims {
        EncoderDims {
            vocab: 3,
            d_embed: 4,
            d_hidden: 5,
            d_out: 6,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let theta = init_params(dims(), 0.1, 1).unwrap();
        let peer = init_params(dims(), 0.1, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&theta, &peer, &meta(dims()), &path).unwrap();
        let (t2, p2, m2) = load_checkpoint(&path).unwrap();
        assert_eq!(theta, t2);
        assert_eq!(peer, p2);
        assert_eq!(m2, meta(dims()));
    }

    #[test]
    fn corrupt_magic_is_a_format_error() {
        let theta = init_params(dims(), 0.1, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&theta, &theta, &meta(dims()), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
    }

    #[test]
    fn truncation_names_the_offset() {
        let theta = init_params(dims(), 0.1, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&theta, &theta, &meta(dims()), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 11]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn mismatched_dims_are_rejected() {
        let theta = init_params(dims(), 0.1, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut bad_meta = meta(dims());
        bad_meta.dims.d_out = 7;
        save_checkpoint(&theta, &theta, &bad_meta, &path).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");

        // expect_dims flags config-vs-checkpoint disagreement.
        let good = meta(dims());
        let mut expected = dims();
        expected.d_hidden = 16;
        assert!(expect_dims(&good, expected).is_err());
        assert!(expect_dims(&good, dims()).is_ok());
    }
}
