use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EncoderConfig;
use crate::attention::{AttentionWeights, Linear};
use crate::error::{Error, Result};
use crate::param::{Init, ParamSpec};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Norm<T> {
    pub gain: T,
    pub bias: T,
}

impl<T> Norm<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Norm<U> {
        Norm {
            gain: f(&self.gain),
            bias: f(&self.bias),
        }
    }

    fn build(prefix: &str, len: usize, make: &mut impl FnMut(ParamSpec) -> T) -> Self {
        Self {
            gain: make(ParamSpec::new(format!("{prefix}.gain"), &[len], Init::Ones, false)),
            bias: make(ParamSpec::bias(format!("{prefix}.bias"), len)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T> {
    pub attention: AttentionWeights<T>,
    pub attention_norm: Norm<T>,
    pub ffn_in: Linear<T>,
    pub ffn_out: Linear<T>,
    pub ffn_norm: Norm<T>,
}

impl<T> LayerWeights<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> LayerWeights<U> {
        LayerWeights {
            attention: self.attention.map(f),
            attention_norm: self.attention_norm.map(f),
            ffn_in: self.ffn_in.map(f),
            ffn_out: self.ffn_out.map(f),
            ffn_norm: self.ffn_norm.map(f),
        }
    }
}

/// Encoder weights, generic over storage (tensor slots or tape variables).
///
/// The MLM output projection reuses `token_embed`; there is no separate
/// output embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights<T> {
    /// `[vocab×embedding_size]`
    pub token_embed: T,
    /// Present when the embedding size differs from the hidden size.
    pub embed_proj: Option<Linear<T>>,
    /// `[max_len×hidden]`
    pub position_embed: Option<T>,
    pub embed_norm: Norm<T>,
    pub layers: Vec<LayerWeights<T>>,
    /// `hidden → embedding_size` transform ahead of the tied projection.
    pub mlm_dense: Linear<T>,
    pub mlm_norm: Norm<T>,
    /// `[vocab]`
    pub mlm_bias: T,
}

impl<T> EncoderWeights<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> EncoderWeights<U> {
        EncoderWeights {
            token_embed: f(&self.token_embed),
            embed_proj: self.embed_proj.as_ref().map(|l| l.map(f)),
            position_embed: self.position_embed.as_ref().map(&mut *f),
            embed_norm: self.embed_norm.map(f),
            layers: self.layers.iter().map(|l| l.map(f)).collect(),
            mlm_dense: self.mlm_dense.map(f),
            mlm_norm: self.mlm_norm.map(f),
            mlm_bias: f(&self.mlm_bias),
        }
    }

    pub fn build(config: &EncoderConfig, make: &mut impl FnMut(ParamSpec) -> T) -> Self {
        let (v, e, d) = (config.vocab_size, config.embedding_size, config.hidden);
        let token_embed = make(ParamSpec::weight("embeddings.token", &[v, e]));
        let embed_proj = (e != d).then(|| Linear {
            weight: make(ParamSpec::weight("embeddings.proj.weight", &[e, d])),
            bias: make(ParamSpec::bias("embeddings.proj.bias", d)),
        });
        let position_embed = config
            .use_absolute_positions
            .then(|| make(ParamSpec::weight("embeddings.position", &[config.max_len, d])));
        let embed_norm = Norm::build("embeddings.norm", d, make);
        let shape = config.attention_shape();
        let layers = (0..config.layers)
            .map(|l| {
                let p = format!("layer{l}");
                LayerWeights {
                    attention: AttentionWeights::build(&format!("{p}.attention"), &config.attention, &shape, make),
                    attention_norm: Norm::build(&format!("{p}.attention_norm"), d, make),
                    ffn_in: Linear {
                        weight: make(ParamSpec::weight(format!("{p}.ffn_in.weight"), &[d, config.intermediate])),
                        bias: make(ParamSpec::bias(format!("{p}.ffn_in.bias"), config.intermediate)),
                    },
                    ffn_out: Linear {
                        weight: make(ParamSpec::weight(format!("{p}.ffn_out.weight"), &[config.intermediate, d])),
                        bias: make(ParamSpec::bias(format!("{p}.ffn_out.bias"), d)),
                    },
                    ffn_norm: Norm::build(&format!("{p}.ffn_norm"), d, make),
                }
            })
            .collect();
        let mlm_dense = Linear {
            weight: make(ParamSpec::weight("mlm.dense.weight", &[d, e])),
            bias: make(ParamSpec::bias("mlm.dense.bias", e)),
        };
        let mlm_norm = Norm::build("mlm.norm", e, make);
        let mlm_bias = make(ParamSpec::bias("mlm.output_bias", v));
        Self {
            token_embed,
            embed_proj,
            position_embed,
            embed_norm,
            layers,
            mlm_dense,
            mlm_norm,
            mlm_bias,
        }
    }
}

/// Materialized encoder parameters: a flat tensor list plus its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub layout: EncoderWeights<usize>,
    pub specs: Vec<ParamSpec>,
    pub tensors: Vec<Tensor>,
}

fn layout(config: &EncoderConfig) -> (EncoderWeights<usize>, Vec<ParamSpec>) {
    let mut specs = Vec::new();
    let layout = EncoderWeights::build(config, &mut |s: ParamSpec| {
        specs.push(s);
        specs.len() - 1
    });
    (layout, specs)
}

/// Deterministic initialization from `seed`.
pub fn init_params(config: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    let (layout, specs) = layout(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = specs.iter().map(|s| s.materialize(&mut rng)).collect();
    Ok(EncoderParams {
        config: config.clone(),
        layout,
        specs,
        tensors,
    })
}

impl EncoderParams {
    /// Reassembles parameters from named tensors, checking names and shapes against the layout.
    pub fn from_named(config: &EncoderConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = layout(config);
        if named.len() != specs.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                named.len()
            )));
        }
        let mut tensors = Vec::with_capacity(specs.len());
        for (spec, (name, t)) in specs.iter().zip(named) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} {:?} does not match expected {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
            tensors.push(t);
        }
        Ok(Self {
            config: config.clone(),
            layout,
            specs,
            tensors,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    /// Typed view with concrete tensors.
    pub fn weights(&self) -> EncoderWeights<&Tensor> {
        self.layout.map(&mut |&i| &self.tensors[i])
    }

    /// Places every parameter on `tape`, as differentiable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars: Vec<Var> = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        let weights = self.layout.map(&mut |&i| vars[i]);
        BoundParams { vars, weights }
    }
}

/// Parameters placed on a tape.
pub struct BoundParams {
    /// Same order as [`EncoderParams::tensors`].
    pub vars: Vec<Var>,
    pub weights: EncoderWeights<Var>,
}

/// Closed-form parameter count for a configuration.
pub fn parameter_count(config: &EncoderConfig) -> usize {
    let (v, e, d, i, l) = (
        config.vocab_size,
        config.embedding_size,
        config.hidden,
        config.intermediate,
        config.layers,
    );
    let (h, dh) = (config.heads, config.head_size);
    let w = 2 * config.kernel_half_width + 1;
    let a = &config.attention;
    let mut per_layer = 4 * (d * d + d) + 2 * (2 * d) + (d * i + i) + (i * d + d);
    if a.fixed_lightweight {
        per_layer += h * w;
    }
    if a.query_dynamic {
        per_layer += dh * w;
    }
    if a.key_dynamic {
        per_layer += dh * w;
    }
    if a.depthwise_bias {
        per_layer += w * d;
    }
    let roles = [a.conv_qkv.query, a.conv_qkv.key, a.conv_qkv.value]
        .iter()
        .filter(|&&on| on)
        .count();
    let sep_w = 2 * a.conv_kernel_half_width + 1;
    per_layer += roles * h.div_ceil(2) * (sep_w * d + d * dh);
    let embeddings = v * e
        + if e != d { e * d + d } else { 0 }
        + if config.use_absolute_positions { config.max_len * d } else { 0 }
        + 2 * d;
    let head = d * e + e + 2 * e + v;
    embeddings + l * per_layer + head
}
