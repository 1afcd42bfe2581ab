//! Siamese capsule networks for few-shot face verification, built on a small
//! reverse-mode autodiff engine over `f64` tensors.

// Tensor ops return `Result` for shape errors, so they cannot be the std
// operator traits; `!(x > 0.0)` is used on purpose to reject NaN.
#![allow(clippy::should_implement_trait, clippy::neg_cmp_op_on_partial_ord)]

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
