use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, Default)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new() -> Self {
        Self {
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != grads.len()
        || state.m.iter().zip(grads).any(|(m, g)| m.len() != g.len())
    {
        return Err(Error::Shape("optimizer state does not match parameters".into()));
    }

    state.step += 1;
    let t = state.step as i32;
    let b1 = T::of(config.beta1);
    let b2 = T::of(config.beta2);
    let one = T::one();
    let c1 = T::of(1.0 - config.beta1.powi(t));
    let c2 = T::of(1.0 - config.beta2.powi(t));
    let lr = T::of(config.lr);
    let eps = T::of(config.eps);

    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((pi, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = b1 * *mi + (one - b1) * *gi;
            *vi = b2 * *vi + (one - b2) * *gi * *gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::vector(vec![1.0f64, -2.0, 3.0]);
        let before = p.clone();
        let mut st = AdamState::new();
        adam_step(&mut [&mut p], &[Tensor::zeros(&[3])], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::vector(vec![0.0f64, 0.0]);
        let g = Tensor::vector(vec![3.0, -0.5]);
        let mut st = AdamState::new();
        let cfg = AdamConfig::with_lr(0.01);
        adam_step(&mut [&mut p], &[g], &mut st, &cfg).unwrap();
        assert!((p.data()[0] + 0.01).abs() < 1e-6);
        assert!((p.data()[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut w = Tensor::vector(vec![1.0f64]);
        let mut st = AdamState::new();
        let cfg = AdamConfig::with_lr(0.1);
        for _ in 0..100 {
            let g = Tensor::vector(vec![2.0 * w.data()[0]]);
            adam_step(&mut [&mut w], &[g], &mut st, &cfg).unwrap();
        }
        assert!(w.data()[0].abs() < 0.1, "w = {}", w.data()[0]);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut p = Tensor::vector(vec![0.0f64; 2]);
        let mut st = AdamState::new();
        let err = adam_step(&mut [&mut p], &[Tensor::zeros(&[3])], &mut st, &AdamConfig::default());
        assert!(matches!(err, Err(Error::Shape(_))));
    }
}
