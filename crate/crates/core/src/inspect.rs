//! Evaluation and matrix exports from checkpoints.

use std::io::Write;
use std::ops::Range;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{encoder_forward, mlm_logits, Checkpoint, TokenBatch};
use crate::tape::Tape;
use crate::tensor::{cross_entropy_parts, Tensor};
use crate::train::vocab::{CLS, SEP};
use crate::train::{apply_mlm_mask, encode_batch, tokenize, MaskPolicy};

const EVAL_BATCH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mean_loss: f64,
    /// Number of scored positions.
    pub positions: usize,
}

/// Masked-token accuracy and mean cross-entropy under a fixed evaluation mask.
///
/// Each eligible token is selected with probability `mask_prob` and always
/// replaced by `[MASK]`, so no target is ever visible.
pub fn evaluate<S: AsRef<str>>(checkpoint: &Checkpoint, lines: &[S], mask_prob: f64, seed: u64) -> Result<EvalReport> {
    let vocab = &checkpoint.vocab;
    for (n, line) in lines.iter().enumerate() {
        if let Some(tok) = tokenize(line.as_ref()).into_iter().find(|t| vocab.id(t).is_none()) {
            return Err(Error::VocabMismatch(format!(
                "line {}: token `{tok}` is not in the checkpoint vocabulary",
                n + 1
            )));
        }
    }
    let params = &checkpoint.params;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut correct, mut total, mut loss_sum) = (0usize, 0usize, 0.0);
    for chunk in lines.chunks(EVAL_BATCH) {
        let batch = encode_batch(chunk, vocab, params.config.max_len);
        let masked = apply_mlm_mask(&batch, MaskPolicy::mask_only(mask_prob), vocab.len(), &mut rng);
        let positions = masked.positions();
        if positions.is_empty() {
            continue;
        }
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let out = encoder_forward(&mut tape, &params.config, &bound.weights, &masked.inputs, None)?;
        let n = masked.inputs.seq_len();
        let rows: Vec<usize> = positions.iter().map(|&(s, i, _)| s * n + i).collect();
        let targets: Vec<usize> = positions.iter().map(|&(_, _, t)| t).collect();
        let picked = tape.gather_rows(out.hidden, &rows)?;
        let logits = mlm_logits(&mut tape, &bound.weights, picked)?;
        let logits = tape.value(logits);
        let (mean, _) = cross_entropy_parts(logits, &targets)?;
        loss_sum += mean * targets.len() as f64;
        for (r, &t) in targets.iter().enumerate() {
            let row = logits.row(r);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            correct += usize::from(best == t);
        }
        total += targets.len();
    }
    if total == 0 {
        return Err(Error::Input("evaluation selected no positions".into()));
    }
    Ok(EvalReport {
        accuracy: correct as f64 / total as f64,
        mean_loss: loss_sum / total as f64,
        positions: total,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    /// Per-head offset bias `[heads × width]`.
    Fixed,
    /// Per-channel value kernel, exported as `[channels × width]`.
    Depthwise,
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(KernelKind::Fixed),
            "depthwise" => Ok(KernelKind::Depthwise),
            other => Err(Error::Config(format!("unknown kernel kind `{other}` (expected fixed or depthwise)"))),
        }
    }
}

/// Kernel rows labelled by head or channel, columns by offset.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    pub kind: KernelKind,
    pub offsets: Vec<i64>,
    /// Original head or channel index of each row.
    pub labels: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

fn argmax(row: &[f64]) -> usize {
    (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b })
}

/// Reads a layer's learned kernel. `rows` restricts the heads or channels;
/// `sort_by_argmax` orders rows by the offset of their largest weight.
pub fn export_kernel_weights(
    checkpoint: &Checkpoint,
    layer: usize,
    kind: KernelKind,
    rows: Option<Range<usize>>,
    sort_by_argmax: bool,
) -> Result<KernelMatrix> {
    let params = &checkpoint.params;
    let config = &params.config;
    let weights = params.weights();
    let lw = weights.layers.get(layer).ok_or_else(|| {
        Error::Input(format!("layer {layer} out of range (model has {})", config.layers))
    })?;
    let k = config.kernel_half_width as i64;
    let table: Vec<Vec<f64>> = match kind {
        KernelKind::Fixed => {
            let beta = lw.attention.conv.fixed_beta.ok_or_else(|| {
                Error::Config("model has no fixed lightweight kernel (enable fixed_lightweight)".into())
            })?;
            (0..beta.rows()).map(|h| beta.row(h).to_vec()).collect()
        }
        KernelKind::Depthwise => {
            let beta = lw.attention.conv.depthwise_beta.ok_or_else(|| {
                Error::Config("model has no depthwise value kernel (enable depthwise_bias)".into())
            })?;
            let t = beta.transpose()?;
            (0..t.rows()).map(|c| t.row(c).to_vec()).collect()
        }
    };
    let range = rows.unwrap_or(0..table.len());
    if range.start >= range.end || range.end > table.len() {
        return Err(Error::Input(format!(
            "row range {}..{} is outside 0..{}",
            range.start,
            range.end,
            table.len()
        )));
    }
    let mut labels: Vec<usize> = range.collect();
    if sort_by_argmax {
        labels.sort_by_key(|&r| (argmax(&table[r]), r));
    }
    Ok(KernelMatrix {
        kind,
        offsets: (-k..=k).collect(),
        rows: labels.iter().map(|&r| table[r].clone()).collect(),
        labels,
    })
}

impl KernelMatrix {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let first = match self.kind {
            KernelKind::Fixed => "head",
            KernelKind::Depthwise => "channel",
        };
        let header = std::iter::once(first.to_string()).chain(self.offsets.iter().map(i64::to_string));
        w.write_record(header).map_err(csv_err)?;
        for (label, row) in self.labels.iter().zip(&self.rows) {
            let rec = std::iter::once(label.to_string()).chain(row.iter().map(f64::to_string));
            w.write_record(rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Input(e.to_string()))
    }
}

/// Post-softmax attention of one head with the token labels of its rows and columns.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub labels: Vec<String>,
    pub probs: Tensor,
}

/// Attention map for `sentence`. Unless `with_specials` is set the sentence is
/// encoded without `[CLS]`/`[SEP]`, so the map covers exactly its tokens.
pub fn export_attention_map(
    checkpoint: &Checkpoint,
    sentence: &str,
    layer: usize,
    head: usize,
    with_specials: bool,
) -> Result<AttentionMap> {
    let config = checkpoint.config();
    if layer >= config.layers {
        return Err(Error::Input(format!("layer {layer} out of range (model has {})", config.layers)));
    }
    if head >= config.heads {
        return Err(Error::Input(format!("head {head} out of range (model has {})", config.heads)));
    }
    let vocab = &checkpoint.vocab;
    let mut ids: Vec<usize> = tokenize(sentence).iter().map(|t| vocab.id_or_unk(t)).collect();
    if with_specials {
        ids.insert(0, CLS);
        ids.push(SEP);
    }
    if ids.is_empty() {
        return Err(Error::Input("sentence has no tokens".into()));
    }
    let labels = ids.iter().map(|&i| vocab.token(i).unwrap_or("?").to_string()).collect();
    let mut tape = Tape::new();
    let params = &checkpoint.params;
    let bound = params.bind(&mut tape, false);
    let out = encoder_forward(&mut tape, config, &bound.weights, &TokenBatch::single(ids), None)?;
    let probs = tape.value(out.attention[layer][0][head]).clone();
    Ok(AttentionMap { labels, probs })
}

impl AttentionMap {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header = std::iter::once(String::new()).chain(self.labels.iter().cloned());
        w.write_record(header).map_err(csv_err)?;
        for (i, label) in self.labels.iter().enumerate() {
            let rec = std::iter::once(label.clone()).chain(self.probs.row(i).iter().map(f64::to_string));
            w.write_record(rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Input(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Input(format!("writing CSV: {e}"))
}
