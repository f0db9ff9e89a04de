//! AdamW with decoupled weight decay and the warmup-cosine schedule.

use std::collections::HashMap;

use crate::nn::{ParamModule, TensorRole};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Optimizer state is kept in f64 keyed by parameter name, so the update is
/// identical whichever scalar type the model trains in.
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: u64,
    state: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, t: 0, state: HashMap::new() }
    }

    /// One bias-corrected update for every parameter present in `grads`.
    /// Parameters absent from the map are left bitwise untouched, which is
    /// what keeps a frozen encoder frozen during head-only finetuning.
    pub fn step<T: Scalar, M: ParamModule<T>>(
        &mut self,
        model: &mut M,
        grads: &HashMap<String, Tensor<T>>,
        lr: f64,
    ) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (beta1, beta2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let state = &mut self.state;
        model.visit_tensors_mut(&mut |name, role, value| {
            if role != TensorRole::Trainable {
                return;
            }
            let Some(grad) = grads.get(name) else { return };
            assert_eq!(
                grad.shape(),
                value.shape(),
                "adamw: gradient shape {} does not match parameter {name} of shape {}",
                grad.shape_string(),
                value.shape_string()
            );
            let (m, v) = state
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; value.numel()], vec![0.0; value.numel()]));
            let data = value.data_mut();
            for i in 0..data.len() {
                let g = grad.data()[i].to_f64();
                let p = data[i].to_f64();
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] = T::from_f64(p - lr * (m_hat / (v_hat.sqrt() + eps) + wd * p));
            }
        });
    }
}

/// Learning rate for 0-based `step` out of `total`: linear warmup over the
/// first 5% of steps, then cosine decay from the peak down to 1e-6 of it at
/// the final step.
pub fn cosine_warmup_lr(peak: f64, step: usize, total: usize) -> f64 {
    assert!(total >= 1, "schedule needs at least one step");
    let warmup = ((total as f64) * 0.05).floor().max(1.0) as usize;
    if step < warmup {
        return peak * (step + 1) as f64 / warmup as f64;
    }
    let floor_lr = 1e-6 * peak;
    let span = total.saturating_sub(warmup + 1).max(1);
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    floor_lr + (peak - floor_lr) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
