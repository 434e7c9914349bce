//! A from-scratch causal protein language model.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense arrays and a reverse-mode tape
//! - [`model`]: GQA-S2 attention with partial RoPE and VO-RoPE, value
//!   residuals, key offset, Canon convolutions, ReLU² FFN, sandwich RMSNorm
//! - [`optim`]: Muon with Polar Express, AdamW, warmup-stable-decay
//! - [`data`]: FASTA, tokenisation, cropping, holdout and packing
//! - [`scoring`]: likelihood deltas, A3M/PSSM retrieval augmentation, Spearman
//! - [`lens`]: logit lens, entropy profiles and attention statistics
//! - [`run`]: run configs, the training loop and the command implementations
//!   behind the `proust` binary

// Index loops read better than iterator chains in the numeric kernels.
#![allow(
    clippy::needless_range_loop,
    clippy::too_many_arguments,
    clippy::neg_cmp_op_on_partial_ord
)]

pub mod data;
pub mod error;
pub mod lens;
pub mod model;
pub mod optim;
pub mod par;
pub mod run;
pub mod scoring;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
pub use tensor::{Scalar, Tensor};

// glibc's allocator hands large freed blocks back to the kernel and faults
// them in again on the next forward pass; on small models that doubled the
// wall time of training and gradient checks.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;
