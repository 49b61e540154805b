//! Sequence convolutions over token representations.

use crate::error::{Error, Result};
use crate::tape::{depthwise_conv_kernel, Tape, Var};
use crate::tensor::{matrix_dims, Tensor};

fn check_kernel_width(op: &'static str, width: usize) -> Result<usize> {
    if width % 2 == 0 {
        return Err(Error::Shape {
            op,
            msg: format!("kernel width {width} must be odd (2k+1)"),
        });
    }
    Ok((width - 1) / 2)
}

/// Lightweight convolution: one weight per relative offset, shared by all channels,
/// with zero padding outside the sequence.
pub fn lightweight_conv(x: &Tensor, beta: &[f64]) -> Result<Tensor> {
    let (n, d) = matrix_dims("lightweight_conv", x)?;
    let k = check_kernel_width("lightweight_conv", beta.len())?;
    let mut out = vec![0.0; n * d];
    // Same loop nest and accumulation order as the depthwise kernel.
    for i in 0..n {
        for (o, &b) in beta.iter().enumerate() {
            let j = i as isize + o as isize - k as isize;
            if j < 0 || j >= n as isize {
                continue;
            }
            let j = j as usize;
            let xr = &x.data()[j * d..(j + 1) * d];
            let dst = &mut out[i * d..(i + 1) * d];
            for c in 0..d {
                dst[c] += b * xr[c];
            }
        }
    }
    Tensor::new(vec![n, d], out)
}

/// Depthwise convolution with an independent `2k+1` kernel per channel.
pub fn depthwise_conv(x: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let (n, d) = matrix_dims("depthwise_conv", x)?;
    let (width, dk) = matrix_dims("depthwise_conv", beta)?;
    if dk != d {
        return Err(Error::Dimension {
            op: "depthwise_conv",
            left: x.shape().to_vec(),
            right: beta.shape().to_vec(),
        });
    }
    check_kernel_width("depthwise_conv", width)?;
    let mut out = vec![0.0; n * d];
    depthwise_conv_kernel(x.data(), n, d, beta.data(), &mut out);
    Tensor::new(vec![n, d], out)
}

/// Attention-weighted values plus a depthwise convolution of the same values.
///
/// The probabilities are already softmaxed; the convolution term is added to the
/// attention output, never to the logits.
pub fn depthwise_value_bias(tape: &mut Tape, probs: Var, values: Var, beta: Var) -> Result<Var> {
    let (n, m) = matrix_dims("depthwise_value_bias", tape.value(probs))?;
    let (nv, _) = matrix_dims("depthwise_value_bias", tape.value(values))?;
    if n != m || m != nv {
        return Err(Error::Dimension {
            op: "depthwise_value_bias",
            left: tape.shape(probs).to_vec(),
            right: tape.shape(values).to_vec(),
        });
    }
    let attended = tape.matmul(probs, values)?;
    let conv = tape.depthwise_conv(values, beta)?;
    tape.add(attended, conv)
}

/// Depthwise convolution over the sequence followed by a per-position linear map.
pub fn separable_conv_projection(tape: &mut Tape, x: Var, depthwise: Var, pointwise: Var) -> Result<Var> {
    let mixed = tape.depthwise_conv(x, depthwise)?;
    tape.matmul(mixed, pointwise)
}
