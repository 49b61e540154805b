use super::{EncoderConfig, EncoderWeights};
use crate::attention::{multi_head_attention, Dropout};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

/// Equal-length token sequences with their pad masks (`true` = real token).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
}

impl TokenBatch {
    pub fn single(ids: Vec<usize>) -> Self {
        let mask = vec![true; ids.len()];
        Self {
            ids: vec![ids],
            mask: vec![mask],
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }

    pub fn validate(&self, config: &EncoderConfig) -> Result<()> {
        let n = self.seq_len();
        if self.ids.is_empty() || n == 0 {
            return Err(Error::Input("empty batch".into()));
        }
        if n > config.max_len {
            return Err(Error::Input(format!(
                "sequence length {n} exceeds max length {}",
                config.max_len
            )));
        }
        if self.mask.len() != self.ids.len() {
            return Err(Error::Input("pad mask count differs from sequence count".into()));
        }
        for (ids, mask) in self.ids.iter().zip(&self.mask) {
            if ids.len() != n || mask.len() != n {
                return Err(Error::Input("sequences in a batch must share one length".into()));
            }
            if let Some(&bad) = ids.iter().find(|&&t| t >= config.vocab_size) {
                return Err(Error::Input(format!(
                    "token id {bad} out of range for vocab size {}",
                    config.vocab_size
                )));
            }
        }
        Ok(())
    }
}

/// Encoder activations for a batch, rows stacked sequence-major.
pub struct EncoderOutput {
    /// `[batch·n × hidden]`
    pub hidden: Var,
    /// `probs[layer][sequence][head]`, each `[n×n]`.
    pub attention: Vec<Vec<Vec<Var>>>,
}

fn hidden_dropout(tape: &mut Tape, x: Var, dropout: &mut Option<&mut Dropout<'_>>) -> Result<Var> {
    match dropout.as_deref_mut() {
        Some(d) => {
            let p = d.hidden;
            tape.dropout(x, p, &mut d.rng)
        }
        None => Ok(x),
    }
}

/// Token (plus optional absolute position) embeddings, normalized: `[batch·n × hidden]`.
pub fn embed(
    tape: &mut Tape,
    config: &EncoderConfig,
    w: &EncoderWeights<Var>,
    batch: &TokenBatch,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<Var> {
    batch.validate(config)?;
    let ids: Vec<usize> = batch.ids.concat();
    let mut x = tape.gather_rows(w.token_embed, &ids)?;
    if let Some(proj) = &w.embed_proj {
        let p = tape.matmul(x, proj.weight)?;
        x = tape.add_bias(p, proj.bias)?;
    }
    if let Some(pos) = w.position_embed {
        let n = batch.seq_len();
        let positions: Vec<usize> = (0..batch.len()).flat_map(|_| 0..n).collect();
        let p = tape.gather_rows(pos, &positions)?;
        x = tape.add(x, p)?;
    }
    let x = tape.layer_norm(x, w.embed_norm.gain, w.embed_norm.bias)?;
    hidden_dropout(tape, x, &mut dropout)
}

/// Post-norm encoder stack: `h ← LN(h + MHA(h))`, `h ← LN(h + FFN(h))`.
pub fn encoder_forward(
    tape: &mut Tape,
    config: &EncoderConfig,
    w: &EncoderWeights<Var>,
    batch: &TokenBatch,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<EncoderOutput> {
    let mut h = embed(tape, config, w, batch, dropout.as_deref_mut())?;
    let n = batch.seq_len();
    let shape = config.attention_shape();
    let mut attention = Vec::with_capacity(w.layers.len());
    for layer in &w.layers {
        let mut outs = Vec::with_capacity(batch.len());
        let mut maps = Vec::with_capacity(batch.len());
        for (s, mask) in batch.mask.iter().enumerate() {
            let x = if batch.len() == 1 { h } else { tape.slice_rows(h, s * n, n)? };
            let out = multi_head_attention(
                tape,
                x,
                &config.attention,
                &shape,
                &layer.attention,
                Some(mask),
                dropout.as_deref_mut(),
            )?;
            outs.push(out.output);
            maps.push(out.probs);
        }
        attention.push(maps);
        let a = if outs.len() == 1 { outs[0] } else { tape.concat_rows(&outs)? };
        let a = hidden_dropout(tape, a, &mut dropout)?;
        let r = tape.add(h, a)?;
        h = tape.layer_norm(r, layer.attention_norm.gain, layer.attention_norm.bias)?;

        let f = tape.matmul(h, layer.ffn_in.weight)?;
        let f = tape.add_bias(f, layer.ffn_in.bias)?;
        let f = tape.gelu(f);
        let f = tape.matmul(f, layer.ffn_out.weight)?;
        let f = tape.add_bias(f, layer.ffn_out.bias)?;
        let f = hidden_dropout(tape, f, &mut dropout)?;
        let r = tape.add(h, f)?;
        h = tape.layer_norm(r, layer.ffn_norm.gain, layer.ffn_norm.bias)?;
    }
    Ok(EncoderOutput { hidden: h, attention })
}

/// Vocabulary logits for hidden rows, through the tied token embedding.
pub fn mlm_logits(tape: &mut Tape, w: &EncoderWeights<Var>, hidden: Var) -> Result<Var> {
    let t = tape.matmul(hidden, w.mlm_dense.weight)?;
    let t = tape.add_bias(t, w.mlm_dense.bias)?;
    let t = tape.gelu(t);
    let t = tape.layer_norm(t, w.mlm_norm.gain, w.mlm_norm.bias)?;
    let logits = tape.matmul_bt(t, w.token_embed)?;
    tape.add_bias(logits, w.mlm_bias)
}

/// Mean cross-entropy over selected positions. `positions` are `(sequence, index, target)`.
pub fn mlm_loss(
    tape: &mut Tape,
    config: &EncoderConfig,
    w: &EncoderWeights<Var>,
    batch: &TokenBatch,
    positions: &[(usize, usize, usize)],
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<(Var, Var)> {
    if positions.is_empty() {
        return Err(Error::Input("no masked positions to score".into()));
    }
    let out = encoder_forward(tape, config, w, batch, dropout.as_deref_mut())?;
    let n = batch.seq_len();
    let rows: Vec<usize> = positions.iter().map(|&(s, i, _)| s * n + i).collect();
    let targets: Vec<usize> = positions.iter().map(|&(_, _, t)| t).collect();
    let picked = tape.gather_rows(out.hidden, &rows)?;
    let logits = mlm_logits(tape, w, picked)?;
    let loss = tape.cross_entropy(logits, &targets)?;
    Ok((loss, logits))
}
