//! Pre-softmax attention logits for each position mechanism.
//!
//! All functions take per-head queries and keys of shape `[n×d_h]` and return
//! `[n×n]` logits on the tape. Relative terms index their `2k+1`-wide tables
//! through a [`RelativeOffsets`] table, so offsets beyond `±k` use the boundary
//! column.

use crate::attention::RelativeOffsets;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{matrix_dims, Tensor};

fn head_dims(tape: &Tape, q: Var, k: Var, offsets: &RelativeOffsets) -> Result<(usize, usize)> {
    let (n, dh) = matrix_dims("attention_scores", tape.value(q))?;
    let (nk, dk) = matrix_dims("attention_scores", tape.value(k))?;
    if n != nk || dh != dk {
        return Err(Error::Dimension {
            op: "attention_scores",
            left: tape.shape(q).to_vec(),
            right: tape.shape(k).to_vec(),
        });
    }
    if offsets.len() != n {
        return Err(Error::Shape {
            op: "attention_scores",
            msg: format!("offset table is for length {}, sequence has {n}", offsets.len()),
        });
    }
    Ok((n, dh))
}

fn check_table(tape: &Tape, table: Var, dh: usize, offsets: &RelativeOffsets) -> Result<()> {
    let shape = tape.shape(table);
    if shape != [dh, offsets.width()] {
        return Err(Error::Dimension {
            op: "relative_embedding",
            left: shape.to_vec(),
            right: vec![dh, offsets.width()],
        });
    }
    Ok(())
}

/// `(Q·Kᵀ)/√d_h`
pub fn attention_scores_standard(tape: &mut Tape, q: Var, k: Var) -> Result<Var> {
    let (_, dh) = matrix_dims("attention_scores_standard", tape.value(q))?;
    let raw = tape.matmul_bt(q, k)?;
    Ok(tape.scale(raw, 1.0 / (dh as f64).sqrt()))
}

/// `β[row][idx(i, j)]` as an `[n×n]` bias; `beta` is `[2k+1]` or a row of `[rows×(2k+1)]`.
pub(crate) fn fixed_bias_term(tape: &mut Tape, beta: Var, row: usize, offsets: &RelativeOffsets) -> Result<Var> {
    let w = offsets.width();
    let numel = tape.value(beta).numel();
    if numel % w != 0 || (row + 1) * w > numel {
        return Err(Error::Dimension {
            op: "fixed_lightweight",
            left: tape.shape(beta).to_vec(),
            right: vec![row + 1, w],
        });
    }
    let base = row * w;
    let index = offsets.as_slice().iter().map(|&o| base + o).collect();
    let n = offsets.len();
    tape.index_select(beta, index, vec![n, n])
}

/// `(Q_i · W_{:, idx(i, j)})/√d_h`, generated row-wise from queries.
pub(crate) fn query_dynamic_term(tape: &mut Tape, q: Var, table: Var, offsets: &RelativeOffsets) -> Result<Var> {
    let (n, dh) = matrix_dims("query_dynamic", tape.value(q))?;
    check_table(tape, table, dh, offsets)?;
    let w = offsets.width();
    let per_offset = tape.matmul(q, table)?;
    let index = (0..n * n).map(|p| (p / n) * w + offsets.as_slice()[p]).collect();
    let term = tape.index_select(per_offset, index, vec![n, n])?;
    Ok(tape.scale(term, 1.0 / (dh as f64).sqrt()))
}

/// `(K_j · W'_{:, idx(i, j)})/√d_h`, generated column-wise from keys.
pub(crate) fn key_dynamic_term(tape: &mut Tape, k: Var, table: Var, offsets: &RelativeOffsets) -> Result<Var> {
    let (n, dh) = matrix_dims("key_dynamic", tape.value(k))?;
    check_table(tape, table, dh, offsets)?;
    let w = offsets.width();
    let per_offset = tape.matmul(k, table)?;
    let index = (0..n * n).map(|p| (p % n) * w + offsets.as_slice()[p]).collect();
    let term = tape.index_select(per_offset, index, vec![n, n])?;
    Ok(tape.scale(term, 1.0 / (dh as f64).sqrt()))
}

/// Standard logits plus a fixed per-offset bias (not scaled by `1/√d_h`).
pub fn scores_fixed_lightweight(
    tape: &mut Tape,
    q: Var,
    k: Var,
    beta: Var,
    offsets: &RelativeOffsets,
) -> Result<Var> {
    head_dims(tape, q, k, offsets)?;
    let base = attention_scores_standard(tape, q, k)?;
    let bias = fixed_bias_term(tape, beta, 0, offsets)?;
    tape.add(base, bias)
}

/// Query-generated dynamic lightweight convolution, in the expanded two-term form
/// `Q_i·K_j/√d_h + Q_i·W^C_{idx}/√d_h`.
pub fn scores_dynamic_lightweight(
    tape: &mut Tape,
    q: Var,
    k: Var,
    rel_embed: Var,
    offsets: &RelativeOffsets,
) -> Result<Var> {
    head_dims(tape, q, k, offsets)?;
    let base = attention_scores_standard(tape, q, k)?;
    let dynamic = query_dynamic_term(tape, q, rel_embed, offsets)?;
    tape.add(base, dynamic)
}

/// Composite logits: standard + query-dynamic (scaled) + fixed β (unscaled).
pub fn scores_composite(
    tape: &mut Tape,
    q: Var,
    k: Var,
    rel_embed: Var,
    beta: Var,
    offsets: &RelativeOffsets,
) -> Result<Var> {
    head_dims(tape, q, k, offsets)?;
    let base = attention_scores_standard(tape, q, k)?;
    let dynamic = query_dynamic_term(tape, q, rel_embed, offsets)?;
    let fixed = fixed_bias_term(tape, beta, 0, offsets)?;
    let partial = tape.add(base, dynamic)?;
    tape.add(partial, fixed)
}

/// Standard logits plus the key-generated dynamic term.
pub fn scores_key_dynamic(
    tape: &mut Tape,
    q: Var,
    k: Var,
    key_rel_embed: Var,
    offsets: &RelativeOffsets,
) -> Result<Var> {
    head_dims(tape, q, k, offsets)?;
    let base = attention_scores_standard(tape, q, k)?;
    let keyed = key_dynamic_term(tape, k, key_rel_embed, offsets)?;
    tape.add(base, keyed)
}

/// Relative-embedding logits in the combined form `Q_i·(K_j + W^C_{idx})ᵀ/√d_h`,
/// evaluated directly without the tape.
pub fn relative_embedding_scores(
    q: &Tensor,
    k: &Tensor,
    rel_embed: &Tensor,
    offsets: &RelativeOffsets,
) -> Result<Tensor> {
    let (n, dh) = matrix_dims("relative_embedding_scores", q)?;
    if k.shape() != q.shape() {
        return Err(Error::Dimension {
            op: "relative_embedding_scores",
            left: q.shape().to_vec(),
            right: k.shape().to_vec(),
        });
    }
    if rel_embed.shape() != [dh, offsets.width()] || offsets.len() != n {
        return Err(Error::Dimension {
            op: "relative_embedding_scores",
            left: rel_embed.shape().to_vec(),
            right: vec![dh, offsets.width()],
        });
    }
    let w = offsets.width();
    let scale = (dh as f64).sqrt();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let col = offsets.get(i, j);
            let mut acc = 0.0;
            for c in 0..dh {
                acc += q.at(i, c) * (k.at(j, c) + rel_embed.data()[c * w + col]);
            }
            out[i * n + j] = acc / scale;
        }
    }
    Tensor::new(vec![n, n], out)
}
