//! Parameter declarations shared by the attention layer and the encoder.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

/// Standard deviation for weight and embedding initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `N(0, INIT_STD²)`
    Normal,
    Zeros,
    Ones,
    /// Kernel `[(2k+1)×d]` with a one at offset zero in every channel.
    CenterTap,
}

/// A named parameter to be materialized by a builder.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init, decay: bool) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
            decay,
        }
    }

    pub fn weight(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, shape, Init::Normal, true)
    }

    pub fn bias(name: impl Into<String>, len: usize) -> Self {
        Self::new(name, &[len], Init::Zeros, false)
    }

    pub fn materialize(&self, rng: &mut impl Rng) -> Tensor {
        match self.init {
            Init::Zeros => Tensor::zeros(&self.shape),
            Init::Ones => Tensor::ones(&self.shape),
            Init::Normal => {
                let dist = Normal::new(0.0, INIT_STD).expect("valid normal");
                let n = self.shape.iter().product();
                let data = (0..n).map(|_| dist.sample(rng)).collect();
                Tensor::new(self.shape.clone(), data).expect("param shape")
            }
            Init::CenterTap => {
                let mut t = Tensor::zeros(&self.shape);
                let (width, d) = (self.shape[0], self.shape[1]);
                let center = width / 2;
                t.data_mut()[center * d..(center + 1) * d].fill(1.0);
                t
            }
        }
    }
}
