//! Adam optimizer and learning-rate schedule.

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Moment buffers and hyper-parameters of a bias-corrected Adam optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Tensor<F>>,
    second: Vec<Tensor<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<F>>, lr: f64) -> Self {
        let (first, second): (Vec<_>, Vec<_>) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first,
            second,
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn moments(&self) -> (&[Tensor<F>], &[Tensor<F>]) {
        (&self.first, &self.second)
    }

    /// Restores moment buffers, e.g. after reloading a checkpoint.
    pub fn set_moments(&mut self, first: Vec<Tensor<F>>, second: Vec<Tensor<F>>) -> Result<()> {
        if first.len() != self.first.len() || second.len() != self.second.len() {
            return Err(dim_err("AdamState::set_moments", "buffer count mismatch"));
        }
        for (a, b) in first.iter().zip(&self.first).chain(second.iter().zip(&self.second)) {
            if a.shape() != b.shape() {
                return Err(dim_err(
                    "AdamState::set_moments",
                    format!("shape {:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
        }
        self.first = first;
        self.second = second;
        Ok(())
    }
}

/// Applies one Adam update to `params` in place and increments the step.
pub fn adam_step<F: Scalar>(
    params: &mut [&mut Tensor<F>],
    grads: &[&Tensor<F>],
    state: &mut AdamState<F>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(dim_err(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.first.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first[i].shape() {
            return Err(dim_err(
                "adam_step",
                format!(
                    "parameter {i}: shape {:?}, grad {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    state.first[i].shape()
                ),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = F::of(state.lr / c1);
    let c2_sqrt = F::of(c2.sqrt());
    let eps = F::of(state.eps);
    let (fb1, fb2) = (F::of(b1), F::of(b2));
    let (ob1, ob2) = (F::of(1.0 - b1), F::of(1.0 - b2));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mv = fb1 * *mv + ob1 * gv;
            *vv = fb2 * *vv + ob2 * gv * gv;
            let denom = vv.sqrt() / c2_sqrt + eps;
            *pv = *pv - lr * *mv / denom;
        }
    }
    Ok(())
}

/// Cosine decay from `lr_max` at step 0 to `lr_min` at `total_steps`.
pub fn cosine_lr(step: u64, total_steps: u64, lr_max: f64, lr_min: f64) -> f64 {
    if total_steps <= 1 {
        return lr_max;
    }
    let t = (step as f64 / (total_steps - 1) as f64).clamp(0.0, 1.0);
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}
