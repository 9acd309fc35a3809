use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::CvaeModel;
use crate::error::{Error, Result};
use crate::geometry::VoxelGrid;
use crate::nncore::{adam_step, AdamConfig, AdamState, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-3,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean `-ELBO` in bits per grid for each epoch, measured before each minibatch update.
    pub epoch_loss_bits: Vec<f64>,
}

impl<T: Real> CvaeModel<T> {
    /// `-ELBO` in nats for one grid and its parameter gradients.
    pub fn loss_and_grads(&self, grid: &VoxelGrid, noise: &[f64]) -> Result<(f64, Vec<Tensor<T>>)> {
        self.check_grid(grid)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params().into_iter().map(|p| tape.leaf(p.clone())).collect();
        let noise = Tensor::new(vec![noise.len()], noise.iter().map(|v| T::of(*v)).collect())?;
        let target = Self::grid_values(grid);
        let loss = self.config.elbo_graph(&mut tape, &vars, &target, &noise)?;
        let value = tape.value(loss)?.data()[0].as_f64();
        if !value.is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }
        let mut grads = tape.backward_scalar(loss)?;
        let out = vars
            .iter()
            .zip(self.params())
            .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Ok((value, out))
    }

    pub fn train(&mut self, data: &[VoxelGrid], config: &TrainConfig) -> Result<TrainReport> {
        self.train_with(data, config, |_, _| {})
    }

    /// Adam on minibatch-mean `-ELBO` with one noise draw per grid per step.
    /// `on_epoch(epoch, mean_bits)` runs after every epoch.
    pub fn train_with(
        &mut self,
        data: &[VoxelGrid],
        config: &TrainConfig,
        mut on_epoch: impl FnMut(usize, f64),
    ) -> Result<TrainReport> {
        if data.is_empty() {
            return Err(Error::InvalidInput("training set is empty".into()));
        }
        if config.batch_size == 0 || !(config.lr > 0.0 && config.lr.is_finite()) {
            return Err(Error::Config(format!(
                "batch size must be positive and lr finite and positive, got {config:?}"
            )));
        }
        for g in data {
            self.check_grid(g)?;
        }
        let adam = AdamConfig::with_lr(config.lr);
        let mut state = AdamState::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut report = TrainReport::default();
        let latent = self.latent_dim();
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(config.batch_size) {
                let mut sum: Option<Vec<Tensor<T>>> = None;
                for &i in batch {
                    let noise: Vec<f64> = (0..latent).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let (loss, grads) = self.loss_and_grads(&data[i], &noise).map_err(|e| match e {
                        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}: {m}")),
                        other => other,
                    })?;
                    total += loss;
                    match &mut sum {
                        None => sum = Some(grads),
                        Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
                    }
                }
                let scale = T::of(1.0 / batch.len() as f64);
                let mean: Vec<Tensor<T>> = sum
                    .unwrap_or_default()
                    .into_iter()
                    .map(|g| g.map(|v| v * scale))
                    .collect();
                adam_step(&mut self.params_mut(), &mean, &mut state, &adam)?;
            }
            let bits = total / data.len() as f64 / std::f64::consts::LN_2;
            if !bits.is_finite() || self.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Numeric(format!("training diverged in epoch {epoch}")));
            }
            report.epoch_loss_bits.push(bits);
            on_epoch(epoch, bits);
        }
        Ok(report)
    }
}
