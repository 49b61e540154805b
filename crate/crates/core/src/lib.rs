//! Convolution-augmented self-attention for small Transformer encoders.
//!
//! ```text
//! tensor / tape / gradcheck   dense f64 arrays, reverse-mode AD, finite differences
//! attention                   score variants, value convolutions, multi-head layer
//! model                       BERT-style encoder with tied MLM head, checkpoints
//! train                       vocabulary, masking, AdamW, schedule, training loop
//! tasks / inspect             synthetic corpora, evaluation, kernel and map export
//! ```

pub mod attention;
pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod inspect;
pub mod model;
pub mod param;
pub mod tape;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
