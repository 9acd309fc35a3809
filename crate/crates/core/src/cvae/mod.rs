//! Convolutional VAE over binary voxel grids.
//!
//! The posterior network maps a grid through three `conv3d` layers and a hidden
//! linear layer to the mean and log-variance of a diagonal Gaussian. The
//! likelihood network mirrors it with `convtranspose3d` layers and emits one
//! Bernoulli logit per voxel. The prior is `N(0, I)`.

mod io;
mod train;

#[cfg(test)]
mod tests;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{check_depth, VoxelGrid};
use crate::nncore::{
    sigmoid, softplus, ConvGeometry, LayerKind, LayerParams, Real, Tape, Tensor, Var,
};

pub use io::{content_hash, FORMAT_VERSION, MAGIC};
pub use train::{TrainConfig, TrainReport};

pub const DEFAULT_LATENT_DIM: usize = 50;
pub const DEFAULT_HIDDEN: usize = 500;
pub const DEFAULT_CHANNELS: [usize; 3] = [8, 16, 32];

const LAYERS: usize = 11;
const ENC: [usize; 3] = [0, 1, 2];
const ENC_FC: usize = 3;
const MU: usize = 4;
const LOG_VAR: usize = 5;
const DEC_FC1: usize = 6;
const DEC_FC2: usize = 7;
const DEC: [usize; 3] = [8, 9, 10];

/// Encoder conv geometry per depth; the decoder applies the same three in reverse.
pub fn default_schedule(depth: u8) -> Result<[ConvGeometry; 3]> {
    check_depth(depth)?;
    let g = ConvGeometry::new;
    Ok(match depth {
        1 => [g(2, 2, 0), g(1, 1, 0), g(1, 1, 0)],
        2 => [g(2, 2, 0), g(2, 2, 0), g(1, 1, 0)],
        3..=5 => [g(4, 2, 1); 3],
        6 => [g(4, 4, 0), g(4, 2, 1), g(4, 2, 1)],
        7 => [g(4, 4, 0), g(4, 4, 0), g(4, 2, 1)],
        _ => [g(4, 4, 0); 3],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CvaeConfig {
    pub depth: u8,
    pub latent_dim: usize,
    pub hidden: usize,
    pub channels: [usize; 3],
    pub encoder: [ConvGeometry; 3],
}

impl CvaeConfig {
    /// Default sizes and schedule for `depth`.
    pub fn new(depth: u8) -> Result<Self> {
        Self::with_sizes(depth, DEFAULT_LATENT_DIM, DEFAULT_HIDDEN, DEFAULT_CHANNELS)
    }

    pub fn with_sizes(
        depth: u8,
        latent_dim: usize,
        hidden: usize,
        channels: [usize; 3],
    ) -> Result<Self> {
        let config = Self {
            depth,
            latent_dim,
            hidden,
            channels,
            encoder: default_schedule(depth)?,
        };
        config.spatial()?;
        Ok(config)
    }

    pub fn voxels(&self) -> usize {
        1 << (3 * self.depth as usize)
    }

    /// Side lengths before and after each encoder conv. Fails unless the decoder
    /// convs map the last side exactly back to `2^depth`.
    pub fn spatial(&self) -> Result<[usize; 4]> {
        check_depth(self.depth)?;
        if self.latent_dim == 0 || self.hidden == 0 || self.channels.contains(&0) {
            return Err(Error::Config(format!("layer sizes must be positive: {self:?}")));
        }
        if self.latent_dim > u16::MAX as usize {
            return Err(Error::Config(format!("latent_dim {} too large", self.latent_dim)));
        }
        let mut sides = [1usize << self.depth; 4];
        for (i, g) in self.encoder.iter().enumerate() {
            let out = g.conv_out(sides[i]).ok_or_else(|| {
                Error::Config(format!("conv {i} {g:?} cannot consume side {}", sides[i]))
            })?;
            if g.transpose_out(out) != Some(sides[i]) {
                return Err(Error::Config(format!(
                    "conv {i} {g:?} maps side {} to {out}, which its transpose does not invert",
                    sides[i]
                )));
            }
            sides[i + 1] = out;
        }
        Ok(sides)
    }

    /// Width of the flattened encoder output.
    pub fn flat(&self) -> Result<usize> {
        let s = self.spatial()?[3];
        Ok(self.channels[2] * s * s * s)
    }

    /// Weight shape of every layer, in parameter order.
    fn shapes(&self) -> Result<Vec<(LayerKind, Vec<usize>, usize, ConvGeometry)>> {
        let flat = self.flat()?;
        let [c1, c2, c3] = self.channels;
        let ins = [1, c1, c2];
        let outs = [c1, c2, c3];
        let lin = ConvGeometry::new(1, 1, 0);
        let mut v = Vec::with_capacity(LAYERS);
        for i in 0..3 {
            let k = self.encoder[i].kernel;
            v.push((LayerKind::Conv3d, vec![outs[i], ins[i], k, k, k], outs[i], self.encoder[i]));
        }
        v.push((LayerKind::Linear, vec![self.hidden, flat], self.hidden, lin));
        v.push((LayerKind::Linear, vec![self.latent_dim, self.hidden], self.latent_dim, lin));
        v.push((LayerKind::Linear, vec![self.latent_dim, self.hidden], self.latent_dim, lin));
        v.push((LayerKind::Linear, vec![self.hidden, self.latent_dim], self.hidden, lin));
        v.push((LayerKind::Linear, vec![flat, self.hidden], flat, lin));
        for i in (0..3).rev() {
            let k = self.encoder[i].kernel;
            // transposed weights are [in, out, k, k, k]
            v.push((
                LayerKind::ConvTranspose3d,
                vec![outs[i], ins[i], k, k, k],
                ins[i],
                self.encoder[i],
            ));
        }
        Ok(v)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self
            .shapes()?
            .iter()
            .map(|(_, w, b, _)| w.iter().product::<usize>() + b)
            .sum())
    }

    /// Builds `-ELBO` in nats on `tape`. `params` are the model tensors in
    /// [`CvaeModel::params`] order; `target` is the grid in raster order.
    pub fn elbo_graph<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        target: &[T],
        noise: &Tensor<T>,
    ) -> Result<Var> {
        if params.len() != 2 * LAYERS {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                2 * LAYERS,
                params.len()
            )));
        }
        let shapes = self.shapes()?;
        let sides = self.spatial()?;
        let layer = |tape: &mut Tape<T>, i: usize, x: Var| {
            let (kind, _, _, g) = shapes[i];
            tape.layer(kind, x, params[2 * i], params[2 * i + 1], g)
        };
        let s = sides[0];
        let x = tape.leaf(Tensor::new(vec![1, s, s, s], target.to_vec())?);
        let mut h = x;
        for i in ENC {
            h = layer(tape, i, h)?;
            h = tape.relu(h)?;
        }
        h = layer(tape, ENC_FC, h)?;
        h = tape.relu(h)?;
        let mu = layer(tape, MU, h)?;
        let log_var = layer(tape, LOG_VAR, h)?;
        let z = tape.reparameterize(mu, log_var, noise)?;
        let mut g = layer(tape, DEC_FC1, z)?;
        g = tape.relu(g)?;
        g = layer(tape, DEC_FC2, g)?;
        g = tape.relu(g)?;
        let s3 = sides[3];
        g = tape.reshape(g, &[self.channels[2], s3, s3, s3])?;
        for (n, i) in DEC.into_iter().enumerate() {
            g = layer(tape, i, g)?;
            if n < 2 {
                g = tape.relu(g)?;
            }
        }
        let recon = tape.bernoulli_log_lik(g, target)?;
        let kl = tape.gaussian_kl(mu, log_var)?;
        tape.sub(kl, recon)
    }
}

/// Diagonal Gaussian `Q(z | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl PosteriorParams {
    pub fn sigma(&self, j: usize) -> f64 {
        (0.5 * self.log_var[j]).exp()
    }

    /// Reparameterized draw `mu + exp(log_var / 2) * noise`.
    pub fn sample(&self, noise: &[f64]) -> Result<Vec<f64>> {
        if noise.len() != self.mu.len() {
            return Err(Error::Shape(format!(
                "noise of length {} for a {}-dimensional latent",
                noise.len(),
                self.mu.len()
            )));
        }
        Ok((0..self.mu.len())
            .map(|j| self.mu[j] + self.sigma(j) * noise[j])
            .collect())
    }
}

/// Per-voxel Bernoulli parameters in raster order, strictly inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelProbs {
    pub p: Vec<f64>,
}

/// Single-sample ELBO terms in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Elbo {
    /// `-(recon_ll - kl)`
    pub loss: f64,
    pub recon_ll: f64,
    pub kl: f64,
}

impl Elbo {
    pub fn loss_bits(&self) -> f64 {
        self.loss / std::f64::consts::LN_2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvaeModel<T = f32> {
    config: CvaeConfig,
    sides: [usize; 4],
    layers: Vec<LayerParams<T>>,
}

impl<T: Real> CvaeModel<T> {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization for weights and biases.
    pub fn new(config: CvaeConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, |shape, fan_in| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect()
        })
    }

    pub fn zeros(config: CvaeConfig) -> Result<Self> {
        Self::build(config, |shape, _| vec![T::zero(); shape.iter().product()])
    }

    fn build(config: CvaeConfig, mut fill: impl FnMut(&[usize], usize) -> Vec<T>) -> Result<Self> {
        let sides = config.spatial()?;
        let mut layers = Vec::with_capacity(LAYERS);
        for (kind, wshape, bias_len, g) in config.shapes()? {
            let fan_in = wshape[1..].iter().product();
            let weight = Tensor::new(wshape.clone(), fill(&wshape, fan_in))?;
            let bias = Tensor::new(vec![bias_len], fill(&[bias_len], fan_in))?;
            layers.push(match kind {
                LayerKind::Conv3d => LayerParams::conv3d(weight, bias, g)?,
                LayerKind::ConvTranspose3d => LayerParams::convtranspose3d(weight, bias, g)?,
                LayerKind::Linear => LayerParams::linear(weight, bias)?,
            });
        }
        Ok(Self {
            config,
            sides,
            layers,
        })
    }

    /// Rebuilds a model from tensors in [`Self::params`] order.
    pub fn from_params(config: CvaeConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        if params.len() != 2 * LAYERS {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                2 * LAYERS,
                params.len()
            )));
        }
        for (slot, p) in model.params_mut().into_iter().zip(params) {
            if slot.shape() != p.shape() {
                return Err(Error::Shape(format!(
                    "parameter {:?} where {:?} was expected",
                    p.shape(),
                    slot.shape()
                )));
            }
            *slot = p;
        }
        Ok(model)
    }

    pub fn config(&self) -> &CvaeConfig {
        &self.config
    }

    pub fn depth(&self) -> u8 {
        self.config.depth
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Weight and bias of every layer: posterior convs, hidden, mu head,
    /// log-variance head, then the likelihood linears and transposed convs.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn cast<U: Real>(&self) -> CvaeModel<U> {
        CvaeModel {
            config: self.config,
            sides: self.sides,
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    kind: l.kind,
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                    geometry: l.geometry,
                })
                .collect(),
        }
    }

    fn check_grid(&self, grid: &VoxelGrid) -> Result<()> {
        if grid.depth() != self.config.depth {
            return Err(Error::Config(format!(
                "grid has depth {} but the model was built for depth {}",
                grid.depth(),
                self.config.depth
            )));
        }
        Ok(())
    }

    pub(crate) fn grid_values(grid: &VoxelGrid) -> Vec<T> {
        grid.occupancy()
            .iter()
            .map(|v| if *v != 0 { T::one() } else { T::zero() })
            .collect()
    }

    fn relu(mut t: Tensor<T>) -> Tensor<T> {
        for v in t.data_mut() {
            *v = v.max(T::zero());
        }
        t
    }

    fn encode(&self, grid: &VoxelGrid) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_grid(grid)?;
        let s = self.sides[0];
        let mut h = Tensor::new(vec![1, s, s, s], Self::grid_values(grid))?;
        for i in ENC.into_iter().chain([ENC_FC]) {
            h = Self::relu(self.layers[i].forward(&h)?);
        }
        Ok((self.layers[MU].forward(&h)?, self.layers[LOG_VAR].forward(&h)?))
    }

    pub fn posterior(&self, grid: &VoxelGrid) -> Result<PosteriorParams> {
        let (mu, log_var) = self.encode(grid)?;
        let to64 = |t: Tensor<T>| t.data().iter().map(|v| v.as_f64()).collect::<Vec<_>>();
        let pp = PosteriorParams {
            mu: to64(mu),
            log_var: to64(log_var),
        };
        if pp.mu.iter().chain(&pp.log_var).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("posterior parameters are not finite".into()));
        }
        Ok(pp)
    }

    /// Per-voxel logits in raster order.
    pub fn logits(&self, z: &[f64]) -> Result<Vec<T>> {
        if z.len() != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "latent of length {} for a model with latent_dim {}",
                z.len(),
                self.config.latent_dim
            )));
        }
        let mut h = Tensor::new(vec![z.len()], z.iter().map(|v| T::of(*v)).collect())?;
        h = Self::relu(self.layers[DEC_FC1].forward(&h)?);
        h = Self::relu(self.layers[DEC_FC2].forward(&h)?);
        let s = self.sides[3];
        h = h.reshape(&[self.config.channels[2], s, s, s])?;
        for (n, i) in DEC.into_iter().enumerate() {
            h = self.layers[i].forward(&h)?;
            if n < 2 {
                h = Self::relu(h);
            }
        }
        Ok(h.into_data())
    }

    pub fn likelihood(&self, z: &[f64]) -> Result<VoxelProbs> {
        const EDGE: f64 = 1e-15;
        let logits = self.logits(z)?;
        let p = logits
            .iter()
            .map(|a| sigmoid(a.as_f64()).clamp(EDGE, 1.0 - EDGE))
            .collect::<Vec<_>>();
        if p.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("likelihood produced NaN".into()));
        }
        Ok(VoxelProbs { p })
    }

    /// Single-sample ELBO with the given unit-Gaussian `noise`.
    pub fn elbo(&self, grid: &VoxelGrid, noise: &[f64]) -> Result<Elbo> {
        let pp = self.posterior(grid)?;
        let z = pp.sample(noise)?;
        let logits = self.logits(&z)?;
        let recon_ll: f64 = logits
            .iter()
            .zip(grid.occupancy())
            .map(|(a, x)| {
                let a = a.as_f64();
                *x as f64 * a - softplus(a)
            })
            .sum();
        let kl: f64 = pp
            .mu
            .iter()
            .zip(&pp.log_var)
            .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
            .sum();
        let loss = kl - recon_ll;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite ELBO (recon {recon_ll}, kl {kl})"
            )));
        }
        Ok(Elbo { loss, recon_ll, kl })
    }
}
