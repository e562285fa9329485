//! Dataset distillation by spatial attention matching.
//!
//! A small synthetic image set is learned so that, through freshly sampled
//! random ConvNet encoders, its per-layer spatial attention maps and its
//! last-layer feature means match those of the real training set. The
//! distilled set is then judged by training new classifiers on it.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`graph`], [`kernels`], [`optim`]: a small dense-tensor
//!   engine with reverse-mode autodiff.
//! - [`encoder`]: the randomly initialised ConvNet feature extractor.
//! - [`losses`]: attention pooling, attention matching and mean matching.
//! - [`augment`], [`coreset`], [`distill`]: the distillation loop.
//! - [`eval`]: classifier training and test accuracy.
//! - [`data`], [`io`]: dataset readers, the toy generator and file formats.
//! - [`cli`]: the `attn-distill` command line.

pub mod augment;
pub mod cli;
pub mod coreset;
pub mod data;
pub mod distill;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod kernels;
pub mod losses;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::{Real, Tensor};
