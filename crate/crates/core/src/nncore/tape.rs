//! Reverse-mode tape. A tape records one forward pass and is consumed by `backward`.

use std::sync::atomic::{AtomicU64, Ordering};

use super::layers::{layer_backward, sigmoid, softplus, ConvGeometry, LayerKind, LayerView};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

enum Op<T> {
    Leaf,
    Layer {
        kind: LayerKind,
        input: Var,
        weight: Var,
        bias: Var,
        geometry: ConvGeometry,
    },
    Relu(Var),
    Sigmoid(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    Sum(Var),
    WeightedSum(Var, Vec<T>),
    /// `mu + exp(log_var / 2) * noise`
    Reparam {
        mu: Var,
        log_var: Var,
        noise: Vec<T>,
    },
    /// `sum_m x_m ln sigmoid(a_m) + (1 - x_m) ln(1 - sigmoid(a_m))`
    BernoulliLogLik {
        logits: Var,
        target: Vec<T>,
    },
    /// `1/2 sum_j (mu_j^2 + exp(lv_j) - 1 - lv_j)`
    GaussianKl {
        mu: Var,
        log_var: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<&Tensor<T>> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::State(format!(
                "variable {v:?} was not recorded on tape {}",
                self.id
            )));
        }
        Ok(&self.nodes[v.index].value)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        self.check(v)
    }

    fn with_params<R>(
        &self,
        kind: LayerKind,
        weight: Var,
        bias: Var,
        geometry: ConvGeometry,
        f: impl FnOnce(&LayerView<'_, T>) -> Result<R>,
    ) -> Result<R> {
        let view = LayerView::new(kind, self.check(weight)?, self.check(bias)?, geometry)?;
        f(&view)
    }

    /// Applies a layer whose weight and bias are tape variables.
    pub fn layer(
        &mut self,
        kind: LayerKind,
        input: Var,
        weight: Var,
        bias: Var,
        geometry: ConvGeometry,
    ) -> Result<Var> {
        let x = self.check(input)?;
        let out = self.with_params(kind, weight, bias, geometry, |p| p.forward(x))?;
        Ok(self.push(
            out,
            Op::Layer {
                kind,
                input,
                weight,
                bias,
                geometry,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.check(x)?.map(|v| v.max(T::zero()));
        Ok(self.push(out, Op::Relu(x)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.check(x)?.map(sigmoid);
        Ok(self.push(out, Op::Sigmoid(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.check(x)?.clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<(&Tensor<T>, &Tensor<T>)> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        Ok((ta, tb))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.same_shape(a, b)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| *x + *y).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.same_shape(a, b)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| *x - *y).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.check(x)?.map(|v| v * c);
        Ok(self.push(out, Op::Scale(x, c)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.check(x)?.sum());
        Ok(self.push(out, Op::Sum(x)))
    }

    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor<T>) -> Result<Var> {
        let value = self.check(x)?.dot(weights)?;
        Ok(self.push(
            Tensor::scalar(value),
            Op::WeightedSum(x, weights.data().to_vec()),
        ))
    }

    pub fn reparameterize(&mut self, mu: Var, log_var: Var, noise: &Tensor<T>) -> Result<Var> {
        let (tm, tl) = self.same_shape(mu, log_var)?;
        if noise.shape() != tm.shape() {
            return Err(Error::Shape(format!(
                "noise {:?} does not match latent {:?}",
                noise.shape(),
                tm.shape()
            )));
        }
        let half = T::of(0.5);
        let data = tm
            .data()
            .iter()
            .zip(tl.data())
            .zip(noise.data())
            .map(|((m, lv), e)| *m + (*lv * half).exp() * *e)
            .collect();
        let out = Tensor::from_parts(tm.shape().to_vec(), data);
        Ok(self.push(
            out,
            Op::Reparam {
                mu,
                log_var,
                noise: noise.data().to_vec(),
            },
        ))
    }

    /// Bernoulli log-likelihood of binary `target` under `sigmoid(logits)`, in nats.
    pub fn bernoulli_log_lik(&mut self, logits: Var, target: &[T]) -> Result<Var> {
        let a = self.check(logits)?;
        if a.len() != target.len() {
            return Err(Error::Shape(format!(
                "logits {:?} vs {} targets",
                a.shape(),
                target.len()
            )));
        }
        let ll: T = a
            .data()
            .iter()
            .zip(target)
            .map(|(a, x)| *x * *a - softplus(*a))
            .sum();
        Ok(self.push(
            Tensor::scalar(ll),
            Op::BernoulliLogLik {
                logits,
                target: target.to_vec(),
            },
        ))
    }

    /// KL divergence from `N(mu, exp(log_var))` to `N(0, I)`, in nats.
    pub fn gaussian_kl(&mut self, mu: Var, log_var: Var) -> Result<Var> {
        let (tm, tl) = self.same_shape(mu, log_var)?;
        let half = T::of(0.5);
        let kl: T = tm
            .data()
            .iter()
            .zip(tl.data())
            .map(|(m, lv)| half * (*m * *m + lv.exp() - T::one() - *lv))
            .sum();
        Ok(self.push(Tensor::scalar(kl), Op::GaussianKl { mu, log_var }))
    }

    /// Backpropagates a scalar output.
    pub fn backward_scalar(self, output: Var) -> Result<Gradients<T>> {
        let value = self.check(output)?;
        if value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward_scalar on output of shape {:?}",
                value.shape()
            )));
        }
        self.backward(output, Tensor::scalar(T::one()))
    }

    /// Backpropagates `seed` (the gradient of some objective w.r.t. `output`).
    pub fn backward(self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called before any forward pass".into()));
        }
        let out_shape = self.check(output)?.shape().to_vec();
        if seed.shape() != out_shape.as_slice() {
            return Err(Error::Shape(format!(
                "seed gradient {:?} does not match output {out_shape:?}",
                seed.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.index] = Some(seed);

        fn acc<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
            match &mut grads[v.index] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=output.index).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Layer {
                    kind,
                    input,
                    weight,
                    bias,
                    geometry,
                } => {
                    let x = &self.nodes[input.index].value;
                    let lg = self.with_params(*kind, *weight, *bias, *geometry, |p| {
                        layer_backward(x, p, &g)
                    })?;
                    acc(&mut grads, *input, lg.input);
                    acc(&mut grads, *weight, lg.weight);
                    acc(&mut grads, *bias, lg.bias);
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.index].value;
                    let data = xv
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(v, gv)| if *v > T::zero() { *gv } else { T::zero() })
                        .collect();
                    acc(&mut grads, *x, Tensor::from_parts(xv.shape().to_vec(), data));
                }
                Op::Sigmoid(x) => {
                    let data = node
                        .value
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(s, gv)| *gv * *s * (T::one() - *s))
                        .collect();
                    acc(&mut grads, *x, Tensor::from_parts(node.value.shape().to_vec(), data));
                }
                Op::Reshape(x) => {
                    let shape = self.nodes[x.index].value.shape().to_vec();
                    acc(&mut grads, *x, g.reshape(&shape)?);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|v| -v));
                    acc(&mut grads, *a, g);
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    acc(&mut grads, *x, g.map(|v| v * c));
                }
                Op::Sum(x) => {
                    let shape = self.nodes[x.index].value.shape().to_vec();
                    acc(&mut grads, *x, Tensor::full(&shape, g.data()[0]));
                }
                Op::WeightedSum(x, w) => {
                    let shape = self.nodes[x.index].value.shape().to_vec();
                    let g0 = g.data()[0];
                    let data = w.iter().map(|wi| *wi * g0).collect();
                    acc(&mut grads, *x, Tensor::from_parts(shape, data));
                }
                Op::Reparam { mu, log_var, noise } => {
                    let lv = &self.nodes[log_var.index].value;
                    let half = T::of(0.5);
                    let glv = lv
                        .data()
                        .iter()
                        .zip(noise)
                        .zip(g.data())
                        .map(|((l, e), gv)| *gv * *e * half * (*l * half).exp())
                        .collect();
                    acc(&mut grads, *log_var, Tensor::from_parts(lv.shape().to_vec(), glv));
                    acc(&mut grads, *mu, g);
                }
                Op::BernoulliLogLik { logits, target } => {
                    let a = &self.nodes[logits.index].value;
                    let g0 = g.data()[0];
                    let data = a
                        .data()
                        .iter()
                        .zip(target)
                        .map(|(a, x)| g0 * (*x - sigmoid(*a)))
                        .collect();
                    acc(&mut grads, *logits, Tensor::from_parts(a.shape().to_vec(), data));
                }
                Op::GaussianKl { mu, log_var } => {
                    let (m, lv) = (&self.nodes[mu.index].value, &self.nodes[log_var.index].value);
                    let g0 = g.data()[0];
                    let half = T::of(0.5);
                    let gm = m.map(|v| g0 * v);
                    let glv = lv.map(|v| g0 * half * (v.exp() - T::one()));
                    acc(&mut grads, *mu, gm);
                    acc(&mut grads, *log_var, glv);
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

/// Gradients of the backpropagated objective for every recorded variable it depends on.
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when the objective does not depend on `v`.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.index).and_then(|g| g.take())
    }
}
