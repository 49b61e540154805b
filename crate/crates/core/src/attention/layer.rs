use rand::RngCore;

use super::scores::{attention_scores_standard, fixed_bias_term, key_dynamic_term, query_dynamic_term};
use super::{separable_conv_projection, AttentionConfig, AttentionShape, AttentionWeights, RelativeOffsets, SeparableProjection};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{matrix_dims, Tensor};

/// Dropout source for training-mode forward passes.
pub struct Dropout<'a> {
    pub rng: &'a mut dyn RngCore,
    /// Applied to post-softmax attention probabilities.
    pub attention: f64,
    /// Applied to sublayer outputs and embeddings.
    pub hidden: f64,
}

/// Layer output plus the per-head attention probabilities `[n×n]`.
pub struct AttentionOutput {
    pub output: Var,
    pub probs: Vec<Var>,
}

fn project(
    tape: &mut Tape,
    all: &mut Option<Var>,
    x: Var,
    lin: &super::Linear<Var>,
    head: usize,
    dh: usize,
) -> Result<Var> {
    let full = match *all {
        Some(v) => v,
        None => {
            let raw = tape.matmul(x, lin.weight)?;
            let v = tape.add_bias(raw, lin.bias)?;
            *all = Some(v);
            v
        }
    };
    tape.slice_cols(full, head * dh, dh)
}

fn head_input(
    tape: &mut Tape,
    convs: &[SeparableProjection<Var>],
    conv_input: Option<Var>,
    all: &mut Option<Var>,
    x: Var,
    lin: &super::Linear<Var>,
    head: usize,
    dh: usize,
) -> Result<Var> {
    match (convs.get(head), conv_input) {
        (Some(p), Some(xc)) => separable_conv_projection(tape, xc, p.depthwise, p.pointwise),
        _ => project(tape, all, x, lin, head, dh),
    }
}

/// Multi-head self-attention over one sequence `x: [n×d]`.
///
/// `pad_mask[j] == false` marks padding: it is excluded from every softmax and
/// zeroed before any sequence convolution reads it.
pub fn multi_head_attention(
    tape: &mut Tape,
    x: Var,
    config: &AttentionConfig,
    shape: &AttentionShape,
    weights: &AttentionWeights<Var>,
    pad_mask: Option<&[bool]>,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<AttentionOutput> {
    weights.validate(config, shape, |v| tape.shape(*v).to_vec())?;
    let (n, d) = matrix_dims("multi_head_attention", tape.value(x))?;
    if d != shape.hidden {
        return Err(Error::Config(format!(
            "input width {d} does not match hidden size {}",
            shape.hidden
        )));
    }
    if let Some(m) = pad_mask {
        if m.len() != n {
            return Err(Error::Input(format!("pad mask has {} entries for {n} tokens", m.len())));
        }
        if !m.iter().any(|&b| b) {
            return Err(Error::Input("pad mask hides every token".into()));
        }
    }
    let dh = shape.head_size();
    let offsets = RelativeOffsets::new(n, shape.kernel_half_width);
    let padded = pad_mask.filter(|m| m.iter().any(|&b| !b));
    let row_mask = match padded {
        Some(m) => {
            let data = m
                .iter()
                .flat_map(|&keep| std::iter::repeat_n(if keep { 1.0 } else { 0.0 }, d))
                .collect();
            Some(tape.constant(Tensor::new(vec![n, d], data)?))
        }
        None => None,
    };
    let softmax_mask: Option<Vec<bool>> = padded.map(|m| (0..n * n).map(|p| m[p % n]).collect());

    let conv_input = if config.conv_qkv.any() {
        Some(match row_mask {
            Some(rm) => tape.mul(x, rm)?,
            None => x,
        })
    } else {
        None
    };
    let sep = &weights.conv.separable;
    let (mut q_all, mut k_all, mut v_all) = (None, None, None);
    let mut contexts = Vec::with_capacity(shape.heads);
    let mut values = Vec::with_capacity(shape.heads);
    let mut probs_out = Vec::with_capacity(shape.heads);
    for head in 0..shape.heads {
        let q = head_input(tape, &sep.query, conv_input, &mut q_all, x, &weights.query, head, dh)?;
        let k = head_input(tape, &sep.key, conv_input, &mut k_all, x, &weights.key, head, dh)?;
        let v = head_input(tape, &sep.value, conv_input, &mut v_all, x, &weights.value, head, dh)?;

        let mut scores = attention_scores_standard(tape, q, k)?;
        if config.query_dynamic {
            let table = weights.conv.rel_embed.expect("validated");
            let term = query_dynamic_term(tape, q, table, &offsets)?;
            scores = tape.add(scores, term)?;
        }
        if config.fixed_lightweight {
            let beta = weights.conv.fixed_beta.expect("validated");
            let term = fixed_bias_term(tape, beta, head, &offsets)?;
            scores = tape.add(scores, term)?;
        }
        if config.key_dynamic {
            let table = weights.conv.key_rel_embed.expect("validated");
            let term = key_dynamic_term(tape, k, table, &offsets)?;
            scores = tape.add(scores, term)?;
        }
        let probs = tape.softmax(scores, softmax_mask.as_deref())?;
        probs_out.push(probs);
        let weighted = match dropout.as_deref_mut() {
            Some(dr) => {
                let p = dr.attention;
                tape.dropout(probs, p, &mut dr.rng)?
            }
            None => probs,
        };
        contexts.push(tape.matmul(weighted, v)?);
        values.push(v);
    }
    let mut context = if contexts.len() == 1 {
        contexts[0]
    } else {
        tape.concat_cols(&contexts)?
    };
    if config.depthwise_bias {
        let beta = weights.conv.depthwise_beta.expect("validated");
        let mut full = if values.len() == 1 {
            values[0]
        } else {
            tape.concat_cols(&values)?
        };
        if let Some(rm) = row_mask {
            full = tape.mul(full, rm)?;
        }
        let conv = tape.depthwise_conv(full, beta)?;
        context = tape.add(context, conv)?;
    }
    let projected = tape.matmul(context, weights.output.weight)?;
    let output = tape.add_bias(projected, weights.output.bias)?;
    Ok(AttentionOutput {
        output,
        probs: probs_out,
    })
}
