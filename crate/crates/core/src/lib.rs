//! Sliding-window self-attention quality metric (SAQM) for no-reference
//! image quality assessment.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`tape`], [`optim`]: a small dense tensor type, a
//!   reverse-mode autodiff tape (including the gradient reversal operator)
//!   and the Adam optimizer.
//! * [`model`]: the Q/K/V branch networks, the attention kernel with its
//!   learnable gate, the patch regressor, the domain classifier head and
//!   the checkpoint format.
//! * [`data`]: PPM/PGM loading, MOS manifests, patch extraction,
//!   reference-disjoint splitting and a synthetic two-domain generator.
//! * [`train`]: the four training configurations (supervised on either
//!   domain, unsupervised and semi-supervised domain adaptation).
//! * [`eval`]: PLCC/SROCC and report rendering.

pub mod data;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod model;
pub mod optim;
pub mod real;
pub mod tape;
pub mod tensor;
pub mod train;

pub use data::{Domain, Manifest, Sample, Split, SynthSpec};
pub use error::{Error, Result};
pub use eval::{plcc, srocc, EvalReport};
pub use model::{AttentionTrace, SaqmParams};
pub use real::Real;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use train::{ConfigId, RunLog, TrainConfig};
