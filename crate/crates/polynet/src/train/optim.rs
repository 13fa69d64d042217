//! SGD with momentum and Adam, plus global-norm gradient clipping.
//!
//! Both steps mutate parameters in place; optimizer state lives outside and
//! persists across steps. Weight decay is applied additively to the gradient
//! and skipped for bias-like tensors (β, b_n).

use crate::{Error, Result, Tensor};

#[derive(Debug, Clone)]
pub struct SgdMomentumState {
    velocity: Vec<Tensor>,
}

impl SgdMomentumState {
    pub fn new(params: &[(String, &Tensor, bool)]) -> Self {
        SgdMomentumState {
            velocity: params.iter().map(|(_, t, _)| Tensor::zeros(t.shape())).collect(),
        }
    }
}

fn check_alignment(
    op: &'static str,
    params: &[(String, &mut Tensor, bool)],
    grads: &[Tensor],
    state_len: usize,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state_len {
        return Err(Error::shape(
            op,
            format!("{} params, {} grads, {} state slots", params.len(), grads.len(), state_len),
        ));
    }
    for ((name, p, _), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape(
                op,
                format!("{name}: param {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
    }
    Ok(())
}

/// `v <- momentum * v + g + weight_decay * θ` then `θ <- θ - lr * v`.
pub fn step_sgd_momentum(
    params: &mut [(String, &mut Tensor, bool)],
    grads: &[Tensor],
    state: &mut SgdMomentumState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    check_alignment("step_sgd_momentum", params, grads, state.velocity.len())?;
    for (((_, p, bias_like), g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        let decay = if *bias_like { 0.0 } else { weight_decay };
        for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = momentum * *vv + gv + decay * *pv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[(String, &Tensor, bool)]) -> Self {
        AdamState {
            m: params.iter().map(|(_, t, _)| Tensor::zeros(t.shape())).collect(),
            v: params.iter().map(|(_, t, _)| Tensor::zeros(t.shape())).collect(),
            step: 0,
        }
    }
}

/// Standard Adam with bias correction; the update divides by `sqrt(v̂) + eps`
/// (epsilon added after the square root).
#[allow(clippy::too_many_arguments)]
pub fn step_adam(
    params: &mut [(String, &mut Tensor, bool)],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
) -> Result<()> {
    check_alignment("step_adam", params, grads, state.m.len())?;
    state.step += 1;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for ((((_, p, bias_like), g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        let decay = if *bias_like { 0.0 } else { weight_decay };
        for (((pv, gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let grad = gv + decay * *pv;
            *mv = beta1 * *mv + (1.0 - beta1) * grad;
            *vv = beta2 * *vv + (1.0 - beta2) * grad * grad;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scale all gradients so the global L2 norm is at most `threshold`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor], threshold: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.data().iter().map(|&x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > threshold && norm > 0.0 {
        let scale = threshold / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
