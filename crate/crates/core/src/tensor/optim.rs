use crate::error::{shape_err, Error, Result};

use super::{Element, Tensor};

/// Epochs between learning-rate decays.
pub const LR_STEP_EPOCHS: usize = 50;
/// Divisor applied at each decay.
pub const LR_DECAY_FACTOR: f64 = 10.0;

/// Step-decay schedule: `base_lr · 10^(-floor(epoch / 50))`.
pub fn lr_schedule(epoch: usize, base_lr: f64) -> f64 {
    base_lr / LR_DECAY_FACTOR.powi((epoch / LR_STEP_EPOCHS) as i32)
}

/// Adam moment buffers. Buffers are allocated on the first step to match the
/// parameter list and must keep matching it afterwards.
#[derive(Clone, Debug)]
pub struct AdamState<T: Element = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Element> Default for AdamState<T> {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl<T: Element> AdamState<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update over `params` using the gradients stored on them.
///
/// Weight decay is the classic L2 form: `weight_decay · param` is added to
/// the gradient before the moments are updated. A non-finite gradient aborts
/// the step before any parameter is touched.
pub fn adam_step<T: Element>(
    params: &mut [&mut Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if state.first.is_empty() && state.step == 0 {
        state.first = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        state.second = state.first.clone();
    }
    if state.first.len() != params.len() {
        return Err(shape_err!(
            "optimizer tracks {} parameters, got {}",
            state.first.len(),
            params.len()
        ));
    }
    for (i, p) in params.iter().enumerate() {
        let g = p
            .grad()
            .ok_or_else(|| shape_err!("parameter {i} has no gradient buffer"))?;
        if g.len() != state.first[i].len() {
            return Err(shape_err!("parameter {i} changed size since the last step"));
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in parameter {i} at element {j} (optimizer step {})",
                state.step + 1
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let b1 = T::cast(state.beta1);
    let b2 = T::cast(state.beta2);
    let one = T::one();
    let bias1 = T::cast(1.0 - state.beta1.powi(t));
    let bias2 = T::cast(1.0 - state.beta2.powi(t));
    let lr = T::cast(lr);
    let wd = T::cast(weight_decay);
    let eps = T::cast(state.eps);

    for (i, p) in params.iter_mut().enumerate() {
        let g: Vec<T> = p.grad().expect("checked above").to_vec();
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j] + wd * *w;
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
