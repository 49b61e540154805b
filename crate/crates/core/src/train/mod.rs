//! Vocabulary, MLM masking, AdamW and the training loop.

pub mod data;
pub mod optim;
mod run;
pub mod vocab;

pub use data::{apply_mlm_mask, encode_batch, MaskPolicy, MaskedBatch};
pub use optim::{adam_step, lr_schedule, AdamConfig, Schedule, TrainState};
pub use run::{train, train_lines, train_lines_until, RunConfig, StepRecord, TrainReport, CHECKPOINT_FILE, METRICS_FILE};
pub use vocab::{build_vocab, tokenize, Vocab};
