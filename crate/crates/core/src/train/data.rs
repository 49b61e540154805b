use rand::Rng;

use super::vocab::{tokenize, Vocab, CLS, MASK, NUM_SPECIALS, PAD, SEP};
use crate::model::TokenBatch;

/// Wraps each line as `[CLS] tokens [SEP]`, truncates to `max_len` and pads
/// every row to the longest one. Unknown words map to `[UNK]`.
pub fn encode_batch<S: AsRef<str>>(lines: &[S], vocab: &Vocab, max_len: usize) -> TokenBatch {
    let max_len = max_len.max(2);
    let mut ids: Vec<Vec<usize>> = lines
        .iter()
        .map(|line| {
            let mut row = vec![CLS];
            row.extend(tokenize(line.as_ref()).iter().map(|t| vocab.id_or_unk(t)));
            row.truncate(max_len - 1);
            row.push(SEP);
            row
        })
        .collect();
    let width = ids.iter().map(Vec::len).max().unwrap_or(0);
    let mask = ids
        .iter_mut()
        .map(|row| {
            let real = row.len();
            row.resize(width, PAD);
            (0..width).map(|i| i < real).collect()
        })
        .collect();
    TokenBatch { ids, mask }
}

/// How selected positions are corrupted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskPolicy {
    pub prob: f64,
    /// Share of selected positions replaced by `[MASK]`.
    pub mask_share: f64,
    /// Share replaced by a random non-special token; the rest stay unchanged.
    pub random_share: f64,
}

impl MaskPolicy {
    pub fn standard(prob: f64) -> Self {
        Self {
            prob,
            mask_share: 0.8,
            random_share: 0.1,
        }
    }

    /// Every selected position becomes `[MASK]`.
    pub fn mask_only(prob: f64) -> Self {
        Self {
            prob,
            mask_share: 1.0,
            random_share: 0.0,
        }
    }
}

/// A corrupted batch with its prediction targets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedBatch {
    pub inputs: TokenBatch,
    /// Original ids; meaningful only where `loss_mask` is set.
    pub targets: Vec<Vec<usize>>,
    pub loss_mask: Vec<Vec<bool>>,
}

impl MaskedBatch {
    /// `(sequence, position, target)` for every selected position.
    pub fn positions(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (s, (row, sel)) in self.targets.iter().zip(&self.loss_mask).enumerate() {
            for (i, (&t, &on)) in row.iter().zip(sel).enumerate() {
                if on {
                    out.push((s, i, t));
                }
            }
        }
        out
    }

    pub fn num_selected(&self) -> usize {
        self.loss_mask.iter().flatten().filter(|&&b| b).count()
    }
}

fn eligible(id: usize) -> bool {
    !matches!(id, PAD | CLS | SEP)
}

/// Selects each eligible token with probability `policy.prob` and corrupts it.
/// `[PAD]`, `[CLS]` and `[SEP]` are never selected.
pub fn apply_mlm_mask(
    batch: &TokenBatch,
    policy: MaskPolicy,
    vocab_size: usize,
    rng: &mut impl Rng,
) -> MaskedBatch {
    let mut inputs = batch.clone();
    let targets = batch.ids.clone();
    let mut loss_mask = Vec::with_capacity(batch.len());
    for (row, pad) in inputs.ids.iter_mut().zip(&batch.mask) {
        let mut sel = vec![false; row.len()];
        for (i, id) in row.iter_mut().enumerate() {
            if !pad[i] || !eligible(*id) || !rng.random_bool(policy.prob) {
                continue;
            }
            sel[i] = true;
            let u: f64 = rng.random();
            if u < policy.mask_share {
                *id = MASK;
            } else if u < policy.mask_share + policy.random_share && vocab_size > NUM_SPECIALS {
                *id = rng.random_range(NUM_SPECIALS..vocab_size);
            }
        }
        loss_mask.push(sel);
    }
    MaskedBatch {
        inputs,
        targets,
        loss_mask,
    }
}
