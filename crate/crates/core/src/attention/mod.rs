//! Convolution-augmented self-attention.
//!
//! Score variants, value-side convolutions and the multi-head layer that
//! composes them according to an [`AttentionConfig`].

mod conv;
mod layer;
mod offsets;
mod scores;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{Init, ParamSpec};

pub use conv::{depthwise_conv, depthwise_value_bias, lightweight_conv, separable_conv_projection};
pub use layer::{multi_head_attention, AttentionOutput, Dropout};
pub use offsets::{relative_offset_index, RelativeOffsets};
pub use scores::{
    attention_scores_standard, relative_embedding_scores, scores_composite, scores_dynamic_lightweight,
    scores_fixed_lightweight, scores_key_dynamic,
};

/// Which query/key/value projections are replaced by separable convolutions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvQkv {
    #[serde(default)]
    pub query: bool,
    #[serde(default)]
    pub key: bool,
    #[serde(default)]
    pub value: bool,
}

impl ConvQkv {
    pub fn any(&self) -> bool {
        self.query || self.key || self.value
    }
}

fn default_conv_half_width() -> usize {
    8
}

/// Position mechanisms enabled in an attention layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    #[serde(default)]
    pub fixed_lightweight: bool,
    #[serde(default)]
    pub query_dynamic: bool,
    #[serde(default)]
    pub key_dynamic: bool,
    #[serde(default)]
    pub depthwise_bias: bool,
    #[serde(default)]
    pub conv_qkv: ConvQkv,
    /// Half-width of the separable projection kernels.
    #[serde(default = "default_conv_half_width")]
    pub conv_kernel_half_width: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            fixed_lightweight: false,
            query_dynamic: false,
            key_dynamic: false,
            depthwise_bias: false,
            conv_qkv: ConvQkv::default(),
            conv_kernel_half_width: default_conv_half_width(),
        }
    }
}

/// Named attention variants.
pub const PRESETS: &[&str] = &[
    "none",
    "fixed",
    "dynamic",
    "composite",
    "composite-key",
    "depthwise",
    "composite-depthwise",
    "conv-qk",
    "conv-value",
    "conv-qkv",
    "composite-conv-qk",
    "composite-conv-value",
    "composite-conv-qkv",
];

impl AttentionConfig {
    /// Composite attention is fixed plus query-dynamic lightweight convolution.
    pub fn is_composite(&self) -> bool {
        self.fixed_lightweight && self.query_dynamic
    }

    /// True when nothing in the layer depends on token order.
    pub fn is_position_free(&self) -> bool {
        !(self.fixed_lightweight || self.query_dynamic || self.key_dynamic || self.depthwise_bias || self.conv_qkv.any())
    }

    pub fn preset(name: &str) -> Result<Self> {
        let composite = Self {
            fixed_lightweight: true,
            query_dynamic: true,
            ..Self::default()
        };
        let qk = ConvQkv {
            query: true,
            key: true,
            value: false,
        };
        let v = ConvQkv {
            query: false,
            key: false,
            value: true,
        };
        let qkv = ConvQkv {
            query: true,
            key: true,
            value: true,
        };
        Ok(match name {
            "none" => Self::default(),
            "fixed" => Self {
                fixed_lightweight: true,
                ..Self::default()
            },
            "dynamic" => Self {
                query_dynamic: true,
                ..Self::default()
            },
            "composite" => composite,
            "composite-key" => Self {
                key_dynamic: true,
                ..composite
            },
            "depthwise" => Self {
                depthwise_bias: true,
                ..Self::default()
            },
            "composite-depthwise" => Self {
                depthwise_bias: true,
                ..composite
            },
            "conv-qk" => Self {
                conv_qkv: qk,
                ..Self::default()
            },
            "conv-value" => Self {
                conv_qkv: v,
                ..Self::default()
            },
            "conv-qkv" => Self {
                conv_qkv: qkv,
                ..Self::default()
            },
            "composite-conv-qk" => Self { conv_qkv: qk, ..composite },
            "composite-conv-value" => Self { conv_qkv: v, ..composite },
            "composite-conv-qkv" => Self { conv_qkv: qkv, ..composite },
            other => {
                return Err(Error::Config(format!(
                    "unknown attention preset `{other}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        })
    }
}

/// Sizes of one attention layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionShape {
    pub hidden: usize,
    pub heads: usize,
    /// Half-width `k` of the score convolutions.
    pub kernel_half_width: usize,
}

impl AttentionShape {
    pub fn head_size(&self) -> usize {
        self.hidden / self.heads
    }

    /// Heads whose projections may be replaced by convolutions: the first ⌈h/2⌉.
    pub fn conv_heads(&self) -> usize {
        self.heads.div_ceil(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.hidden == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: T,
    pub bias: T,
}

impl<T> Linear<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Linear<U> {
        Linear {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }

    fn build(prefix: &str, input: usize, output: usize, make: &mut impl FnMut(ParamSpec) -> T) -> Self {
        Self {
            weight: make(ParamSpec::weight(format!("{prefix}.weight"), &[input, output])),
            bias: make(ParamSpec::bias(format!("{prefix}.bias"), output)),
        }
    }
}

/// Depthwise kernel `[(2k_p+1)×d]` followed by pointwise map `[d×d_h]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableProjection<T> {
    pub depthwise: T,
    pub pointwise: T,
}

impl<T> SeparableProjection<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> SeparableProjection<U> {
        SeparableProjection {
            depthwise: f(&self.depthwise),
            pointwise: f(&self.pointwise),
        }
    }
}

/// Per replaced head, one separable projection for each enabled role.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableQkv<T> {
    pub query: Vec<SeparableProjection<T>>,
    pub key: Vec<SeparableProjection<T>>,
    pub value: Vec<SeparableProjection<T>>,
}

impl<T> SeparableQkv<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> SeparableQkv<U> {
        let mut m = |v: &Vec<SeparableProjection<T>>| v.iter().map(|p| p.map(f)).collect::<Vec<_>>();
        SeparableQkv {
            query: m(&self.query),
            key: m(&self.key),
            value: m(&self.value),
        }
    }
}

/// Learned convolution parameters of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    /// `[h×(2k+1)]`, one fixed kernel per head.
    pub fixed_beta: Option<T>,
    /// `[d_h×(2k+1)]`, shared across heads.
    pub rel_embed: Option<T>,
    /// `[d_h×(2k+1)]`, shared across heads.
    pub key_rel_embed: Option<T>,
    /// `[(2k+1)×d]`, one kernel per model channel.
    pub depthwise_beta: Option<T>,
    pub separable: SeparableQkv<T>,
}

impl<T> ConvParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ConvParams<U> {
        ConvParams {
            fixed_beta: self.fixed_beta.as_ref().map(&mut *f),
            rel_embed: self.rel_embed.as_ref().map(&mut *f),
            key_rel_embed: self.key_rel_embed.as_ref().map(&mut *f),
            depthwise_beta: self.depthwise_beta.as_ref().map(&mut *f),
            separable: self.separable.map(f),
        }
    }
}

/// All weights of one multi-head attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
    pub conv: ConvParams<T>,
}

impl<T> AttentionWeights<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> AttentionWeights<U> {
        AttentionWeights {
            query: self.query.map(f),
            key: self.key.map(f),
            value: self.value.map(f),
            output: self.output.map(f),
            conv: self.conv.map(f),
        }
    }

    /// Declares every parameter the configuration needs, in a fixed order.
    pub fn build(
        prefix: &str,
        config: &AttentionConfig,
        shape: &AttentionShape,
        make: &mut impl FnMut(ParamSpec) -> T,
    ) -> Self {
        let (d, h) = (shape.hidden, shape.heads);
        let dh = shape.head_size();
        let width = 2 * shape.kernel_half_width + 1;
        let query = Linear::build(&format!("{prefix}.query"), d, d, make);
        let key = Linear::build(&format!("{prefix}.key"), d, d, make);
        let value = Linear::build(&format!("{prefix}.value"), d, d, make);
        let output = Linear::build(&format!("{prefix}.output"), d, d, make);
        let fixed_beta = config
            .fixed_lightweight
            .then(|| make(ParamSpec::new(format!("{prefix}.fixed_beta"), &[h, width], Init::Zeros, true)));
        let rel_embed = config
            .query_dynamic
            .then(|| make(ParamSpec::new(format!("{prefix}.rel_embed"), &[dh, width], Init::Zeros, true)));
        let key_rel_embed = config.key_dynamic.then(|| {
            make(ParamSpec::new(
                format!("{prefix}.key_rel_embed"),
                &[dh, width],
                Init::Zeros,
                true,
            ))
        });
        let depthwise_beta = config.depthwise_bias.then(|| {
            make(ParamSpec::new(
                format!("{prefix}.depthwise_beta"),
                &[width, d],
                Init::Zeros,
                true,
            ))
        });
        let sep_width = 2 * config.conv_kernel_half_width + 1;
        let mut role = |name: &str, on: bool| -> Vec<SeparableProjection<T>> {
            if !on {
                return Vec::new();
            }
            (0..shape.conv_heads())
                .map(|head| SeparableProjection {
                    depthwise: make(ParamSpec::new(
                        format!("{prefix}.sep_{name}.{head}.depthwise"),
                        &[sep_width, d],
                        Init::CenterTap,
                        true,
                    )),
                    pointwise: make(ParamSpec::weight(
                        format!("{prefix}.sep_{name}.{head}.pointwise"),
                        &[d, dh],
                    )),
                })
                .collect()
        };
        let separable = SeparableQkv {
            query: role("query", config.conv_qkv.query),
            key: role("key", config.conv_qkv.key),
            value: role("value", config.conv_qkv.value),
        };
        Self {
            query,
            key,
            value,
            output,
            conv: ConvParams {
                fixed_beta,
                rel_embed,
                key_rel_embed,
                depthwise_beta,
                separable,
            },
        }
    }

    /// Checks that present parameters match the configuration and have the expected shapes.
    pub fn validate(
        &self,
        config: &AttentionConfig,
        shape: &AttentionShape,
        shape_of: impl Fn(&T) -> Vec<usize>,
    ) -> Result<()> {
        shape.validate()?;
        let (d, h) = (shape.hidden, shape.heads);
        let dh = shape.head_size();
        let width = 2 * shape.kernel_half_width + 1;
        let sep_width = 2 * config.conv_kernel_half_width + 1;
        let expect = |what: &str, t: &T, want: &[usize]| -> Result<()> {
            let got = shape_of(t);
            if got != want {
                return Err(Error::Config(format!("{what} has shape {got:?}, expected {want:?}")));
            }
            Ok(())
        };
        for (what, lin) in [
            ("query", &self.query),
            ("key", &self.key),
            ("value", &self.value),
            ("output", &self.output),
        ] {
            expect(what, &lin.weight, &[d, d])?;
            expect(what, &lin.bias, &[d])?;
        }
        let optional = |what: &str, on: bool, t: &Option<T>, want: &[usize]| -> Result<()> {
            match (on, t) {
                (true, Some(t)) => expect(what, t, want),
                (false, None) => Ok(()),
                (true, None) => Err(Error::Config(format!("{what} is enabled but missing"))),
                (false, Some(_)) => Err(Error::Config(format!("{what} is present but disabled"))),
            }
        };
        let c = &self.conv;
        optional("fixed_beta", config.fixed_lightweight, &c.fixed_beta, &[h, width])?;
        optional("rel_embed", config.query_dynamic, &c.rel_embed, &[dh, width])?;
        optional("key_rel_embed", config.key_dynamic, &c.key_rel_embed, &[dh, width])?;
        optional("depthwise_beta", config.depthwise_bias, &c.depthwise_beta, &[width, d])?;
        for (what, on, list) in [
            ("separable query", config.conv_qkv.query, &c.separable.query),
            ("separable key", config.conv_qkv.key, &c.separable.key),
            ("separable value", config.conv_qkv.value, &c.separable.value),
        ] {
            let want = if on { shape.conv_heads() } else { 0 };
            if list.len() != want {
                return Err(Error::Config(format!(
                    "{what} has {} head projections, expected {want}",
                    list.len()
                )));
            }
            for p in list {
                expect(what, &p.depthwise, &[sep_width, d])?;
                expect(what, &p.pointwise, &[d, dh])?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_composite_flag() {
        for name in PRESETS {
            AttentionConfig::preset(name).unwrap();
        }
        assert!(AttentionConfig::preset("composite").unwrap().is_composite());
        assert!(!AttentionConfig::preset("fixed").unwrap().is_composite());
        assert!(AttentionConfig::preset("none").unwrap().is_position_free());
        assert!(AttentionConfig::preset("bogus").is_err());
    }

    #[test]
    fn conv_heads_is_ceil_half() {
        for (h, want) in [(1, 1), (2, 1), (3, 2), (4, 2), (5, 3)] {
            let s = AttentionShape {
                hidden: h * 2,
                heads: h,
                kernel_half_width: 1,
            };
            assert_eq!(s.conv_heads(), want);
        }
    }

    #[test]
    fn validate_catches_missing_and_extra_params() {
        let shape = AttentionShape {
            hidden: 4,
            heads: 2,
            kernel_half_width: 1,
        };
        let cfg = AttentionConfig::preset("composite").unwrap();
        let w = AttentionWeights::build("l", &cfg, &shape, &mut |s: ParamSpec| s.shape);
        w.validate(&cfg, &shape, |s| s.clone()).unwrap();
        let plain = AttentionConfig::default();
        assert!(w.validate(&plain, &shape, |s| s.clone()).is_err());
        let w2 = AttentionWeights::build("l", &plain, &shape, &mut |s: ParamSpec| s.shape);
        assert!(w2.validate(&cfg, &shape, |s| s.clone()).is_err());
    }
}
