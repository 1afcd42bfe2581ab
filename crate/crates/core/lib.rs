//! Siamese capsule networks for pairwise verification.
//!
//! The crate is layered bottom-up:
//! - [`autodiff`]: tensors with a tape-based reverse-mode graph,
//! - [`layers`]: convolution, batch norm, dense layers and initialization,
//! - [`capsules`]: squash, dynamic routing, capsule layers, concrete dropout,
//! - [`siamese`]: the capsule encoder, the CNN baseline, distances and losses,
//! - [`optim`]: AMSGrad and SGD,
//! - [`data`]: PGM/JPEG ingestion, subject splits and pair sampling,
//! - [`harness`]: training, evaluation, gradient checks and file formats.

pub mod autodiff;
pub mod capsules;
pub mod data;
pub mod error;
pub mod harness;
pub mod layers;
pub mod optim;
pub mod rng;
pub mod siamese;
pub mod tensor;

pub use autodiff::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use tensor::{Init, Tensor};
