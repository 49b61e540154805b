//! BERT-style encoder with a tied-embedding masked-LM head.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use config::EncoderConfig;
pub use forward::{embed, encoder_forward, mlm_logits, mlm_loss, EncoderOutput, TokenBatch};
pub use params::{init_params, parameter_count, BoundParams, EncoderParams, EncoderWeights, LayerWeights, Norm};

use crate::error::Result;
use crate::tape::Tape;
use crate::tensor::Tensor;

impl EncoderParams {
    /// Inference-mode final hidden states, `[batch·n × hidden]`.
    pub fn hidden_states(&self, batch: &TokenBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let out = encoder_forward(&mut tape, &self.config, &bound.weights, batch, None)?;
        Ok(tape.value(out.hidden).clone())
    }

    /// Inference-mode vocabulary logits for every position, `[batch·n × vocab]`.
    pub fn logits(&self, batch: &TokenBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let out = encoder_forward(&mut tape, &self.config, &bound.weights, batch, None)?;
        let logits = mlm_logits(&mut tape, &bound.weights, out.hidden)?;
        Ok(tape.value(logits).clone())
    }

    /// Post-softmax attention for one sequence: `maps[layer][head]`, each `[n×n]`.
    pub fn attention_maps(&self, ids: &[usize]) -> Result<Vec<Vec<Tensor>>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let batch = TokenBatch::single(ids.to_vec());
        let out = encoder_forward(&mut tape, &self.config, &bound.weights, &batch, None)?;
        Ok(out
            .attention
            .iter()
            .map(|layer| layer[0].iter().map(|&v| tape.value(v).clone()).collect())
            .collect())
    }
}
