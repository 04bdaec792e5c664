//! # can
//!
//! A deterministic CPU training engine for Creative Adversarial Networks:
//! a DCGAN-style generator/discriminator pair in which the discriminator
//! carries a second, style-classification head, and the generator is
//! additionally rewarded for producing images whose style posterior is
//! maximally ambiguous. Plain GAN and style-classification-only ablations
//! are available as training variants.
//!
//! The crate is self-contained: dense tensor kernels with exact analytic
//! gradients, Adam, a finite-difference gradient checker, synthetic
//! style-labeled corpora for desk-scale experiments, bit-exact checkpointing,
//! and evaluation utilities (style-posterior entropy, Welch's t-test).
//!
//! Start with the runnable examples (`cargo run --release --example ...`):
//! each major capability has one. The `can` binary exposes the same
//! functionality as subcommands.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod kernel;
pub mod losses;
pub mod models;
pub mod optim;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Precision, Tensor};
