use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam hyperparameters with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.01,
        }
    }
}

/// Warmup-then-decay learning-rate schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub peak_lr: f64,
}

impl Schedule {
    pub fn lr(&self, step: u64) -> Result<f64> {
        lr_schedule(step, self.warmup_steps, self.total_steps, self.peak_lr)
    }
}

/// Linear ramp from 0 to `peak` over `warmup` steps, then linear decay to 0 at `total`.
/// Steps past `total` get 0.
pub fn lr_schedule(step: u64, warmup: u64, total: u64, peak: f64) -> Result<f64> {
    if warmup > total {
        return Err(Error::Config(format!(
            "warmup steps {warmup} exceed total steps {total}"
        )));
    }
    if step >= total {
        return Ok(if step == total && warmup == total && total > 0 { peak } else { 0.0 });
    }
    if step < warmup {
        Ok(peak * step as f64 / warmup as f64)
    } else {
        Ok(peak * (total - step) as f64 / (total - warmup) as f64)
    }
}

/// Optimizer state carried across steps and checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Number of optimizer updates applied so far.
    pub step: u64,
    pub seed: u64,
    pub schedule: Schedule,
    pub adam: AdamConfig,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl TrainState {
    pub fn new(params: &[Tensor], seed: u64, schedule: Schedule, adam: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            step: 0,
            seed,
            schedule,
            adam,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }
}

/// One bias-corrected Adam update. Decay is applied directly to weights flagged in
/// `decay`, scaled by `lr`.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    decay: &[bool],
    state: &mut TrainState,
    lr: f64,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || decay.len() != n || state.first_moment.len() != n || state.second_moment.len() != n {
        return Err(Error::Shape {
            op: "adam_step",
            msg: format!(
                "{n} parameters, {} gradients, {} decay flags, {} moments",
                grads.len(),
                decay.len(),
                state.first_moment.len()
            ),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first_moment[i].shape() {
            return Err(Error::Dimension {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let AdamConfig {
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.adam;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for i in 0..n {
        let wd = if decay[i] { weight_decay } else { 0.0 };
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        let g = grads[i].data();
        for (j, w) in params[i].data_mut().iter_mut().enumerate() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let update = (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            *w -= lr * (update + wd * *w);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(params: &[Tensor], weight_decay: f64) -> TrainState {
        let adam = AdamConfig {
            weight_decay,
            ..AdamConfig::default()
        };
        let schedule = Schedule {
            warmup_steps: 0,
            total_steps: 1,
            peak_lr: 1.0,
        };
        TrainState::new(params, 0, schedule, adam)
    }

    #[test]
    fn zero_grad_zero_decay_is_a_no_op() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0]).unwrap()];
        let before = p.clone();
        let mut s = state(&p, 0.0);
        adam_step(&mut p, &[Tensor::zeros(&[2])], &[true], &mut s, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        let (g, lr, eps) = (0.37, 0.01, 1e-6);
        let mut p = vec![Tensor::scalar(0.5)];
        let mut s = state(&p, 0.0);
        adam_step(&mut p, &[Tensor::scalar(g)], &[true], &mut s, lr).unwrap();
        // m̂ = g and v̂ = g² after bias correction.
        let expected = 0.5 - lr * g / (g.abs() + eps);
        assert!((p[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn decay_without_gradient_shrinks() {
        let mut p = vec![Tensor::vector(vec![2.0, -4.0]).unwrap(), Tensor::vector(vec![3.0]).unwrap()];
        let mut s = state(&p, 0.1);
        let grads = [Tensor::zeros(&[2]), Tensor::zeros(&[1])];
        adam_step(&mut p, &grads, &[true, false], &mut s, 0.5).unwrap();
        assert_eq!(p[0].data(), &[2.0 * 0.95, -4.0 * 0.95]);
        assert_eq!(p[1].data(), &[3.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut s = state(&p, 0.0);
        assert!(adam_step(&mut p, &[Tensor::zeros(&[3])], &[true], &mut s, 0.1).is_err());
    }

    #[test]
    fn schedule_points() {
        assert_eq!(lr_schedule(0, 10, 110, 1.0).unwrap(), 0.0);
        assert_eq!(lr_schedule(10, 10, 110, 1.0).unwrap(), 1.0);
        assert_eq!(lr_schedule(60, 10, 110, 1.0).unwrap(), 0.5);
        assert_eq!(lr_schedule(110, 10, 110, 1.0).unwrap(), 0.0);
        assert_eq!(lr_schedule(5, 10, 110, 2e-3).unwrap(), 1e-3);
        assert!(matches!(lr_schedule(0, 11, 10, 1.0), Err(Error::Config(_))));
    }
}
