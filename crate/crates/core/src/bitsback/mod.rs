//! Bits-back coding of a batch of voxel grids through one rANS state.
//!
//! Each grid is encoded by first *decoding* latent bucket indices from the
//! message under the posterior, then pushing the voxels under the likelihood
//! given the bucket centres, and finally pushing the indices under the uniform
//! prior. The decoder runs the same steps backwards and re-encodes the indices
//! under the posterior of the recovered grid, which restores the bits the
//! encoder borrowed.

mod container;

#[cfg(test)]
mod tests;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ans::{bernoulli_cdf, AnsState, GaussianBuckets, PRECISION};
use crate::cvae::CvaeModel;
use crate::error::{Error, Result};
use crate::geometry::{voxelize, PointCloud, VoxelGrid};

pub use container::{Container, CONTAINER_MAGIC, CONTAINER_VERSION, HEADER_BYTES};

/// How many tables of each kind were built. There is no other kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TableCounters {
    pub prior: u64,
    pub posterior: u64,
    pub likelihood: u64,
}

/// Seed words that guarantee the first cloud's posterior pops never run dry:
/// each pop consumes at most `PRECISION` bits.
pub fn seed_word_count(latent_dim: usize) -> usize {
    2 + (latent_dim * PRECISION as usize).div_ceil(32)
}

pub fn seed_words(seed: u64, count: usize) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random()).collect()
}

fn sigma(log_var: f64) -> f64 {
    (0.5 * log_var).exp().clamp(1e-30, 1e30)
}

/// Appends one grid to `state`.
pub fn bb_encode_one(
    state: &mut AnsState,
    grid: &VoxelGrid,
    model: &CvaeModel,
    buckets: &GaussianBuckets,
    counters: &mut TableCounters,
) -> Result<()> {
    let pp = model.posterior(grid)?;
    let mut indices = Vec::with_capacity(pp.mu.len());
    for j in 0..pp.mu.len() {
        let cdf = buckets.posterior_cdf(pp.mu[j], sigma(pp.log_var[j]))?;
        counters.posterior += 1;
        let idx = state.pop(&cdf).map_err(|e| match e {
            Error::MessageExhausted => Error::InsufficientInitialBits(format!(
                "message ran out while popping latent dimension {j}"
            )),
            other => other,
        })?;
        indices.push(idx);
    }
    let z: Vec<f64> = indices.iter().map(|i| buckets.centre(*i)).collect();
    let probs = model.likelihood(&z)?;
    for (x, p) in grid.occupancy().iter().zip(&probs.p).rev() {
        state.push(*x as usize, &bernoulli_cdf(*p)?)?;
        counters.likelihood += 1;
    }
    let prior = buckets.prior_cdf();
    for idx in indices.iter().rev() {
        state.push(*idx, prior)?;
        counters.prior += 1;
    }
    Ok(())
}

/// Removes the most recently encoded grid from `state`.
pub fn bb_decode_one(
    state: &mut AnsState,
    model: &CvaeModel,
    buckets: &GaussianBuckets,
    counters: &mut TableCounters,
) -> Result<VoxelGrid> {
    let exhausted = |e: Error| match e {
        Error::MessageExhausted => Error::Codec("payload exhausted".into()),
        other => other,
    };
    let prior = buckets.prior_cdf();
    let mut indices = Vec::with_capacity(model.latent_dim());
    for _ in 0..model.latent_dim() {
        indices.push(state.pop(prior).map_err(exhausted)?);
        counters.prior += 1;
    }
    let z: Vec<f64> = indices.iter().map(|i| buckets.centre(*i)).collect();
    let probs = model.likelihood(&z)?;
    let mut occupancy = Vec::with_capacity(probs.p.len());
    for p in &probs.p {
        occupancy.push(state.pop(&bernoulli_cdf(*p)?).map_err(exhausted)? as u8);
        counters.likelihood += 1;
    }
    let grid = VoxelGrid::new(model.depth(), occupancy)?;
    let pp = model.posterior(&grid)?;
    for j in (0..indices.len()).rev() {
        let cdf = buckets.posterior_cdf(pp.mu[j], sigma(pp.log_var[j]))?;
        counters.posterior += 1;
        state.push(indices[j], &cdf)?;
    }
    Ok(grid)
}

/// Totals for one container. `per_cloud_bits` is only known at encode time.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeLengthReport {
    pub total_bits: u64,
    pub initial_bits: u64,
    pub net_bits: u64,
    pub bpp: f64,
    /// Change in `AnsState::information_bits` caused by each grid, in batch order.
    pub per_cloud_bits: Vec<f64>,
}

pub fn report(container: &Container) -> CodeLengthReport {
    let total_bits = 32 * container.payload.len() as u64;
    let initial_bits = 32 * container.seed_words as u64;
    CodeLengthReport {
        total_bits,
        initial_bits,
        net_bits: total_bits.saturating_sub(initial_bits),
        bpp: total_bits as f64 / container.total_points as f64,
        per_cloud_bits: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Compressed {
    pub container: Container,
    pub per_cloud_bits: Vec<f64>,
}

impl Compressed {
    pub fn report(&self) -> CodeLengthReport {
        CodeLengthReport {
            per_cloud_bits: self.per_cloud_bits.clone(),
            ..report(&self.container)
        }
    }
}

/// Encodes `grids` in order; `total_points` is the bpp denominator.
pub fn compress_grids(
    grids: &[VoxelGrid],
    total_points: u64,
    model: &CvaeModel,
    p_bits: u8,
    seed: u64,
) -> Result<Compressed> {
    compress_grids_counted(grids, total_points, model, p_bits, seed, &mut TableCounters::default())
}

pub fn compress_grids_counted(
    grids: &[VoxelGrid],
    total_points: u64,
    model: &CvaeModel,
    p_bits: u8,
    seed: u64,
    counters: &mut TableCounters,
) -> Result<Compressed> {
    if grids.is_empty() {
        return Err(Error::InvalidInput("batch is empty".into()));
    }
    if total_points == 0 {
        return Err(Error::InvalidInput("batch has no points".into()));
    }
    if let Some(g) = grids.iter().find(|g| g.depth() != model.depth()) {
        return Err(Error::Config(format!(
            "grid of depth {} in a batch for a depth-{} model",
            g.depth(),
            model.depth()
        )));
    }
    let buckets = GaussianBuckets::new(p_bits)?;
    let count = seed_word_count(model.latent_dim());
    let mut state = AnsState::from_seed_words(&seed_words(seed, count));
    let mut per_cloud_bits = Vec::with_capacity(grids.len());
    for g in grids {
        let before = state.information_bits();
        bb_encode_one(&mut state, g, model, &buckets, counters)?;
        per_cloud_bits.push(state.information_bits() - before);
    }
    Ok(Compressed {
        container: Container {
            depth: model.depth(),
            p_bits,
            latent_dim: model.latent_dim() as u16,
            batch: grids.len() as u32,
            total_points,
            seed,
            seed_words: count as u32,
            model_hash: model.hash(),
            payload: state.flush(),
        },
        per_cloud_bits,
    })
}

/// Voxelizes every cloud at `depth` and encodes them as one batch.
pub fn compress_batch(
    clouds: &[PointCloud],
    model: &CvaeModel,
    depth: u8,
    p_bits: u8,
    seed: u64,
) -> Result<Compressed> {
    if depth != model.depth() {
        return Err(Error::Config(format!(
            "depth {depth} requested for a depth-{} model",
            model.depth()
        )));
    }
    let grids = clouds
        .iter()
        .map(|c| voxelize(c, depth))
        .collect::<Result<Vec<_>>>()?;
    let points = clouds.iter().map(|c| c.len() as u64).sum();
    compress_grids(&grids, points, model, p_bits, seed)
}

pub fn decompress_batch(container: &Container, model: &CvaeModel) -> Result<Vec<VoxelGrid>> {
    decompress_batch_counted(container, model, &mut TableCounters::default())
}

pub fn decompress_batch_counted(
    container: &Container,
    model: &CvaeModel,
    counters: &mut TableCounters,
) -> Result<Vec<VoxelGrid>> {
    if container.model_hash != model.hash() {
        return Err(Error::Codec(format!(
            "container was written with model {:016x}, got {:016x}",
            container.model_hash,
            model.hash()
        )));
    }
    if container.depth != model.depth() || container.latent_dim as usize != model.latent_dim() {
        return Err(Error::Codec("container geometry does not match the model".into()));
    }
    let buckets = GaussianBuckets::new(container.p_bits)?;
    let mut state = AnsState::restore(&container.payload)?;
    let mut grids = Vec::with_capacity(container.batch as usize);
    for _ in 0..container.batch {
        grids.push(bb_decode_one(&mut state, model, &buckets, counters)?);
    }
    let initial = AnsState::from_seed_words(&seed_words(
        container.seed,
        container.seed_words as usize,
    ));
    if state != initial {
        return Err(Error::Codec(
            "residual message does not match the seeded initial state".into(),
        ));
    }
    grids.reverse();
    Ok(grids)
}
