mod common;

use common::*;
use convattn::attention::{multi_head_attention, AttentionShape};
use convattn::gradcheck::{finite_diff_grad, max_relative_error, DEFAULT_STEP};
use convattn::model::{mlm_loss, EncoderParams, TokenBatch};
use convattn::{Tape, Tensor};

const TOL: f64 = 1e-4;

/// Weighted sum of the layer output, so every output element carries a distinct cotangent.
fn layer_loss(
    config: &convattn::attention::AttentionConfig,
    shape: &AttentionShape,
    fx: &LayerFixture,
    x: &Tensor,
    probe: &Tensor,
    mask: Option<&[bool]>,
) -> (f64, Vec<Tensor>, Tensor) {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let (vars, w) = fx.bind(&mut tape);
    let out = multi_head_attention(&mut tape, xv, config, shape, &w, mask, None).unwrap();
    let pv = tape.constant(probe.clone());
    let weighted = tape.mul(out.output, pv).unwrap();
    let loss = tape.sum(weighted);
    let grads = tape.backward(loss).unwrap();
    let value = tape.value(loss).data()[0];
    (value, vars.iter().map(|&v| grads.wrt(v)).collect(), grads.wrt(xv))
}

#[test]
fn every_attention_variant_matches_finite_differences() {
    let shape = AttentionShape {
        hidden: 4,
        heads: 2,
        kernel_half_width: 2,
    };
    for (name, mut config) in variants() {
        config.conv_kernel_half_width = 1;
        for (seed, mask) in [(1u64, None), (2, Some(vec![true, true, true, false]))] {
            let mut r = rng(seed);
            let fx = LayerFixture::new(&config, &shape, &mut r, 0.7);
            let x = random_tensor(&mut r, &[4, 4], 1.0);
            let probe = random_tensor(&mut r, &[4, 4], 1.0);
            let mask = mask.as_deref();
            let (_, grads, gx) = layer_loss(&config, &shape, &fx, &x, &probe, mask);

            let num = finite_diff_grad(|xx| Ok(layer_loss(&config, &shape, &fx, xx, &probe, mask).0), &x, DEFAULT_STEP).unwrap();
            let err = max_relative_error(&gx, &num);
            assert!(err <= TOL, "{name}: input gradient error {err}");

            for (i, spec) in fx.specs.iter().enumerate() {
                let num = finite_diff_grad(
                    |t| {
                        let mut f = LayerFixture {
                            specs: fx.specs.clone(),
                            tensors: fx.tensors.clone(),
                            layout: fx.layout.clone(),
                        };
                        f.tensors[i] = t.clone();
                        Ok(layer_loss(&config, &shape, &f, &x, &probe, mask).0)
                    },
                    &fx.tensors[i],
                    DEFAULT_STEP,
                )
                .unwrap();
                let err = max_relative_error(&grads[i], &num);
                assert!(err <= TOL, "{name}: {} gradient error {err}", spec.name);
            }
        }
    }
}

fn encoder_loss(params: &EncoderParams, batch: &TokenBatch, positions: &[(usize, usize, usize)]) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let (loss, _) = mlm_loss(&mut tape, &params.config, &bound.weights, batch, positions, None).unwrap();
    let grads = tape.backward(loss).unwrap();
    let value = tape.value(loss).data()[0];
    (value, bound.vars.iter().map(|&v| grads.wrt(v)).collect())
}

#[test]
fn micro_encoder_matches_finite_differences() {
    for (name, attention) in variants() {
        for embedding_size in [4, 3] {
            let mut config = micro_config(attention.clone());
            config.embedding_size = embedding_size;
            let params = random_params(&config, 17, 0.5);
            let batch = TokenBatch::single(vec![5, 7]);
            let positions = [(0, 0, 6), (0, 1, 3)];
            let (_, grads) = encoder_loss(&params, &batch, &positions);
            for (i, spec) in params.specs.iter().enumerate() {
                let num = finite_diff_grad(
                    |t| {
                        let mut p = params.clone();
                        p.tensors[i] = t.clone();
                        Ok(encoder_loss(&p, &batch, &positions).0)
                    },
                    &params.tensors[i],
                    DEFAULT_STEP,
                )
                .unwrap();
                let err = max_relative_error(&grads[i], &num);
                assert!(err <= TOL, "{name} (e={embedding_size}): {} gradient error {err}", spec.name);
            }
        }
    }
}

#[test]
fn empty_selection_is_rejected_rather_than_scored() {
    let config = micro_config(convattn::attention::AttentionConfig::preset("composite").unwrap());
    let params = random_params(&config, 3, 0.5);
    let batch = TokenBatch::single(vec![5, 6, 7]);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    assert!(mlm_loss(&mut tape, &params.config, &bound.weights, &batch, &[], None).is_err());
}
