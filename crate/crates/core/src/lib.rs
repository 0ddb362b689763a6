//! Cross pseudo-labeling (XPL) for semi-supervised audio-visual source
//! localization, on synthetic scenes with exact ground truth.
//!
//! Two encoder pairs produce per-cell cosine-similarity maps. After a warmup on
//! labeled data, each model is trained on the other's sharpened, EMA-smoothed
//! soft pseudo-labels, restricted to unlabeled samples on which the two models
//! agree (curriculum selection by Pearson consensus).

pub mod ablate;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod kv;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pl;
pub mod plot;
pub mod report;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Axis, Gradients, Graph, Var};
pub use error::{Result, XplError};
pub use tensor::Tensor;
