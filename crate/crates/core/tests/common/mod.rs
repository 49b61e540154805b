//! Loop-level reference implementations and fixtures shared by the integration tests.
#![allow(dead_code)]

use convattn::attention::{AttentionConfig, AttentionShape, AttentionWeights};
use convattn::model::{init_params, EncoderConfig, EncoderParams};
use convattn::param::ParamSpec;
use convattn::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rows = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn rows(t: &Tensor) -> Rows {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn max_abs_diff(a: &Tensor, b: &Rows) -> f64 {
    assert_eq!(a.rows(), b.len());
    rows(a)
        .iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// Column of the offset `j - i` after clamping to `[-k, k]`.
pub fn offset_col(i: usize, j: usize, k: usize) -> usize {
    let rel = (j as i64 - i as i64).clamp(-(k as i64), k as i64);
    (rel + k as i64) as usize
}

pub fn matmul(a: &Rows, b: &Rows) -> Rows {
    let inner = b.len();
    a.iter()
        .map(|r| {
            (0..b[0].len())
                .map(|j| (0..inner).map(|c| r[c] * b[c][j]).sum())
                .collect()
        })
        .collect()
}

pub fn standard_scores(q: &Rows, k: &Rows) -> Rows {
    let dh = q[0].len();
    let s = (dh as f64).sqrt();
    q.iter()
        .map(|qi| k.iter().map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / s).collect())
        .collect()
}

/// Standard scores plus `beta[idx(i, j)]`, unscaled.
pub fn fixed_scores(q: &Rows, k: &Rows, beta: &[f64], half: usize) -> Rows {
    let mut s = standard_scores(q, k);
    for (i, row) in s.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x += beta[offset_col(i, j, half)];
        }
    }
    s
}

/// Standard scores plus a per-query kernel: token i builds weights
/// `w_i[o] = Σ_c q[i][c]·W[c][o] / √d_h` and adds `w_i[idx(i, j)]` to logit (i, j).
pub fn dynamic_scores(q: &Rows, k: &Rows, table: &Rows, half: usize) -> Rows {
    let dh = q[0].len();
    let width = 2 * half + 1;
    let s = (dh as f64).sqrt();
    let mut out = standard_scores(q, k);
    for (i, row) in out.iter_mut().enumerate() {
        let kernel: Vec<f64> = (0..width)
            .map(|o| (0..dh).map(|c| q[i][c] * table[c][o]).sum::<f64>() / s)
            .collect();
        for (j, x) in row.iter_mut().enumerate() {
            *x += kernel[offset_col(i, j, half)];
        }
    }
    out
}

pub fn softmax_rows(s: &Rows) -> Rows {
    s.iter()
        .map(|r| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|x| x / z).collect()
        })
        .collect()
}

/// Zero-padded per-channel convolution, `beta` laid out `[width][channel]`.
pub fn depthwise_conv(x: &Rows, beta: &Rows) -> Rows {
    let n = x.len();
    let d = x[0].len();
    let half = beta.len() / 2;
    let mut out = vec![vec![0.0; d]; n];
    for c in 0..d {
        for i in 0..n {
            for (o, w) in beta.iter().enumerate() {
                let j = i as i64 + o as i64 - half as i64;
                if (0..n as i64).contains(&j) {
                    out[i][c] += w[c] * x[j as usize][c];
                }
            }
        }
    }
    out
}

pub fn add(a: &Rows, b: &Rows) -> Rows {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

/// Attention weights with every parameter drawn uniformly from `±scale`.
pub struct LayerFixture {
    pub specs: Vec<ParamSpec>,
    pub tensors: Vec<Tensor>,
    pub layout: AttentionWeights<usize>,
}

impl LayerFixture {
    pub fn new(config: &AttentionConfig, shape: &AttentionShape, rng: &mut impl Rng, scale: f64) -> Self {
        let mut specs = Vec::new();
        let layout = AttentionWeights::build("attn", config, shape, &mut |s: ParamSpec| {
            specs.push(s);
            specs.len() - 1
        });
        let tensors = specs.iter().map(|s| random_tensor(rng, &s.shape, scale)).collect();
        Self { specs, tensors, layout }
    }

    pub fn bind(&self, tape: &mut Tape) -> (Vec<Var>, AttentionWeights<Var>) {
        let vars: Vec<Var> = self.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let w = self.layout.map(&mut |&i| vars[i]);
        (vars, w)
    }

    pub fn zero(&mut self, pick: impl Fn(&AttentionWeights<usize>) -> Option<usize>) {
        if let Some(i) = pick(&self.layout) {
            let shape = self.tensors[i].shape().to_vec();
            self.tensors[i] = Tensor::zeros(&shape);
        }
    }
}

/// Tiny encoder used by gradient and oracle tests.
pub fn micro_config(attention: AttentionConfig) -> EncoderConfig {
    EncoderConfig {
        layers: 1,
        hidden: 4,
        intermediate: 6,
        heads: 2,
        head_size: 2,
        embedding_size: 4,
        vocab_size: 8,
        max_len: 8,
        kernel_half_width: 2,
        use_absolute_positions: false,
        hidden_dropout: 0.0,
        attention_dropout: 0.0,
        seed: 0,
        attention: AttentionConfig {
            conv_kernel_half_width: 1,
            ..attention
        },
    }
}

/// Initialized parameters with every tensor replaced by random values, so
/// zero-initialized kernels and unit gains do not hide errors.
pub fn random_params(config: &EncoderConfig, seed: u64, scale: f64) -> EncoderParams {
    let mut p = init_params(config, seed).unwrap();
    let mut r = rng(seed ^ 0xabcdef);
    for (spec, t) in p.specs.iter().zip(p.tensors.iter_mut()) {
        let mut fresh = random_tensor(&mut r, &spec.shape, scale);
        if spec.name.ends_with(".gain") {
            fresh = fresh.map(|x| 1.0 + x);
        }
        *t = fresh;
    }
    p
}

/// Every attention variant exercised by the suites.
pub fn variants() -> Vec<(&'static str, AttentionConfig)> {
    convattn::attention::PRESETS
        .iter()
        .map(|&name| (name, AttentionConfig::preset(name).unwrap()))
        .collect()
}
