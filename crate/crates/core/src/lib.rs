//! Peer-contrastive learning for unsupervised sentence embeddings, from
//! scratch: a dense `f64` tensor library with tape-based reverse-mode
//! autodiff, word-level text augmentations, a dual-network encoder, the
//! contrastive and cooperative objectives, a deterministic training
//! loop, and a Spearman evaluation harness with shortcut bias probes on
//! synthetic corpora that carry ground-truth similarity labels.
//!
//! Everything randomized is driven by explicit seeds, so any run —
//! training included — is bitwise reproducible from its configuration.

pub mod augment;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod objectives;
pub mod optim;
pub mod seeds;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
