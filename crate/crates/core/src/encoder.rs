//! The trainable sentence-embedding network and its peer.
//!
//! Architecture: embedding lookup with mean pooling over non-PAD tokens,
//! then a two-layer MLP head (`tanh` hidden layer) with inverted dropout
//! after pooling and after the hidden activation. Mean pooling is
//! deliberately order-invariant; the bias probes measure that surface
//! rather than the architecture hiding it.

use crate::error::{Error, Result};
use crate::seeds;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::text::{Sentence, PAD_ID};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub vocab: usize,
    pub d_embed: usize,
    pub d_hidden: usize,
    pub d_out: usize,
}

impl EncoderDims {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab", self.vocab),
            ("d_embed", self.d_embed),
            ("d_hidden", self.d_hidden),
            ("d_out", self.d_out),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("encoder dim {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Whether a forward pass draws dropout masks, and from which stream.
/// Evaluation paths always use `Off`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Off,
    Stochastic(u64),
}

/// Parameters of one embedding network.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub embedding: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub dropout_rate: f64,
}

impl EncoderParams {
    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            vocab: self.embedding.shape()[0],
            d_embed: self.embedding.shape()[1],
            d_hidden: self.w1.shape()[1],
            d_out: self.w2.shape()[1],
        }
    }

    /// Canonical parameter order used for gradients, Adam state and
    /// checkpoints.
    pub fn tensors(&self) -> [&Tensor; 5] {
        [&self.embedding, &self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 5] {
        [
            &mut self.embedding,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    pub const TENSOR_NAMES: [&'static str; 5] = ["embedding", "w1", "b1", "w2", "b2"];
}

fn glorot(rng: &mut rand_chacha::ChaCha8Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Glorot-uniform weights, zero biases, zero PAD row; deterministic per
/// seed.
pub fn init_params(dims: EncoderDims, dropout_rate: f64, seed: u64) -> Result<EncoderParams> {
    dims.validate()?;
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::Config(format!(
            "dropout_rate must be in [0,1), got {dropout_rate}"
        )));
    }
    let mut rng = seeds::rng(seed);
    let mut emb = glorot(&mut rng, dims.vocab, dims.d_embed, dims.vocab * dims.d_embed);
    for v in emb[..dims.d_embed].iter_mut() {
        *v = 0.0; // PAD row
    }
    let w1 = glorot(
        &mut rng,
        dims.d_embed,
        dims.d_hidden,
        dims.d_embed * dims.d_hidden,
    );
    let w2 = glorot(
        &mut rng,
        dims.d_hidden,
        dims.d_out,
        dims.d_hidden * dims.d_out,
    );
    Ok(EncoderParams {
        embedding: Tensor::new(vec![dims.vocab, dims.d_embed], emb)?,
        w1: Tensor::new(vec![dims.d_embed, dims.d_hidden], w1)?,
        b1: Tensor::zeros(vec![dims.d_hidden]),
        w2: Tensor::new(vec![dims.d_hidden, dims.d_out], w2)?,
        b2: Tensor::zeros(vec![dims.d_out]),
        dropout_rate,
    })
}

/// Handles for one parameter set registered on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub embedding: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub dropout_rate: f64,
    dims: EncoderDims,
}

impl EncoderVars {
    /// Snapshot `params` onto `tape`. With `trainable = false` the
    /// gradients are dropped during the backward sweep.
    pub fn register(tape: &mut Tape, params: &EncoderParams, trainable: bool) -> Self {
        EncoderVars {
            embedding: tape.leaf(&params.embedding, trainable),
            w1: tape.leaf(&params.w1, trainable),
            b1: tape.leaf(&params.b1, trainable),
            w2: tape.leaf(&params.w2, trainable),
            b2: tape.leaf(&params.b2, trainable),
            dropout_rate: params.dropout_rate,
            dims: params.dims(),
        }
    }

    pub fn dims(&self) -> EncoderDims {
        self.dims
    }

    /// Parameter handles in canonical order.
    pub fn var_list(&self) -> [Var; 5] {
        [self.embedding, self.w1, self.b1, self.w2, self.b2]
    }
}

fn maybe_dropout(
    tape: &mut Tape,
    x: Var,
    rate: f64,
    mode: DropoutMode,
    layer: u64,
) -> Result<Var> {
    match mode {
        DropoutMode::Off => Ok(x),
        DropoutMode::Stochastic(_) if rate == 0.0 => Ok(x),
        // Per-layer mask streams: layer 1 after pooling, layer 2 after
        // the hidden activation.
        DropoutMode::Stochastic(seed) => tape.dropout(x, 1.0 - rate, seeds::chain(&[seed, layer])),
    }
}

/// Forward pass on a tape: pooled embedding -> dropout -> tanh(W1 x r +
/// b1) -> dropout -> W2 x + b2. With `DropoutMode::Off` the result is a
/// pure function of (sentence, params).
pub fn encode_on_tape(
    tape: &mut Tape,
    enc: &EncoderVars,
    sentence: &Sentence,
    mode: DropoutMode,
) -> Result<Var> {
    let d = enc.dims;
    let pooled = tape.embed_mean(enc.embedding, sentence.tokens(), PAD_ID)?;
    let pooled = maybe_dropout(tape, pooled, enc.dropout_rate, mode, 1)?;
    let row = tape.reshape(pooled, vec![1, d.d_embed])?;
    let hidden = tape.matmul(row, enc.w1)?;
    let hidden = tape.reshape(hidden, vec![d.d_hidden])?;
    let hidden = tape.add(hidden, enc.b1)?;
    let hidden = tape.tanh(hidden);
    let hidden = maybe_dropout(tape, hidden, enc.dropout_rate, mode, 2)?;
    let row = tape.reshape(hidden, vec![1, d.d_hidden])?;
    let out = tape.matmul(row, enc.w2)?;
    let out = tape.reshape(out, vec![d.d_out])?;
    tape.add(out, enc.b2)
}

/// One-off forward pass without gradient tracking.
pub fn encode(params: &EncoderParams, sentence: &Sentence, mode: DropoutMode) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = EncoderVars::register(&mut tape, params, false);
    let out = encode_on_tape(&mut tape, &vars, sentence, mode)?;
    Ok(tape.value(out).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> EncoderDims {
        EncoderDims {
            vocab: 12,
            d_embed: 8,
            d_hidden: 10,
            d_out: 6,
        }
    }

    fn sent(tokens: &[u32]) -> Sentence {
        Sentence::new(tokens.to_vec()).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_pads_zero() {
        let a = init_params(dims(), 0.1, 5).unwrap();
        let b = init_params(dims(), 0.1, 5).unwrap();
        assert_eq!(a, b);
        let c = init_params(dims(), 0.1, 6).unwrap();
        assert_ne!(a, c);
        assert!(a.embedding.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_weight_std_matches_glorot() {
        let d = EncoderDims {
            vocab: 64,
            d_embed: 64,
            d_hidden: 64,
            d_out: 64,
        };
        let p = init_params(d, 0.1, 9).unwrap();
        let expected = (2.0f64 / (64.0 + 64.0)).sqrt();
        let std = |t: &Tensor| {
            let n = t.numel() as f64;
            let mean: f64 = t.data().iter().sum::<f64>() / n;
            (t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
        };
        let got = std(&p.w1);
        assert!(
            (got - expected).abs() / expected < 0.1,
            "std {got} vs expected {expected}"
        );
    }

    #[test]
    fn encode_off_is_pure() {
        let p = init_params(dims(), 0.1, 5).unwrap();
        let s = sent(&[2, 3, 4]);
        let a = encode(&p, &s, DropoutMode::Off).unwrap();
        let b = encode(&p, &s, DropoutMode::Off).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stochastic_seeds_differ_and_repeat() {
        let p = init_params(dims(), 0.5, 5).unwrap();
        let s = sent(&[2, 3, 4]);
        let a = encode(&p, &s, DropoutMode::Stochastic(1)).unwrap();
        let b = encode(&p, &s, DropoutMode::Stochastic(2)).unwrap();
        let a2 = encode(&p, &s, DropoutMode::Stochastic(1)).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, a2);
    }

    #[test]
    fn pooling_of_single_token_is_its_embedding_row() {
        let p = init_params(dims(), 0.0, 5).unwrap();
        let mut tape = Tape::new();
        let vars = EncoderVars::register(&mut tape, &p, false);
        let pooled = tape.embed_mean(vars.embedding, &[3], PAD_ID).unwrap();
        assert_eq!(tape.value(pooled), p.embedding.row(3));
    }

    #[test]
    fn pooling_ignores_pad_and_rejects_all_pad() {
        let p = init_params(dims(), 0.0, 5).unwrap();
        let mut tape = Tape::new();
        let vars = EncoderVars::register(&mut tape, &p, false);
        let with_pad = tape.embed_mean(vars.embedding, &[3, PAD_ID], PAD_ID).unwrap();
        assert_eq!(tape.value(with_pad), p.embedding.row(3));
        let err = encode(&p, &sent(&[PAD_ID, PAD_ID]), DropoutMode::Off).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn pooling_is_bitwise_permutation_invariant() {
        let p = init_params(dims(), 0.0, 5).unwrap();
        let a = encode(&p, &sent(&[2, 3, 4, 5]), DropoutMode::Off).unwrap();
        let b = encode(&p, &sent(&[5, 4, 2, 3]), DropoutMode::Off).unwrap();
        assert_eq!(a, b);
    }
}
