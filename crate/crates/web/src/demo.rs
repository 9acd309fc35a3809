//! Plain-Rust implementations behind the exported functions, testable natively.

use bbpc_core::ans::GaussianBuckets;
use bbpc_core::bench::{voxelize_all, DatasetSpec};
use bbpc_core::bitsback::{compress_grids, decompress_batch};
use bbpc_core::cvae::{CvaeConfig, CvaeModel, TrainConfig};
use bbpc_core::geometry::{gen_synthetic, voxelize, ShapeKind};
use bbpc_core::seqcodec::{seq_compress_grids, seq_overhead_bytes, DEFAULT_BYTES_PER_ENTRY};
use bbpc_core::Result;

/// Occupied voxel coordinates as a flat `[x0, y0, z0, x1, ...]` list.
pub fn voxel_coords(kind: &str, points: usize, depth: u8, seed: u64) -> Result<Vec<u32>> {
    let kind: ShapeKind = kind.parse()?;
    let grid = voxelize(&gen_synthetic(kind, points, seed)?, depth)?;
    let mut out = Vec::with_capacity(3 * grid.occupied_count());
    for (i, v) in grid.occupancy().iter().enumerate() {
        if *v == 1 {
            let (x, y, z) = grid.coords(i);
            out.extend([x as u32, y as u32, z as u32]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub clouds: usize,
    pub points: u64,
    pub train_loss_bits: Vec<f64>,
    pub bitsback_bits: u64,
    pub initial_bits: u64,
    pub bitsback_bpp: f64,
    pub sequential_bpp: f64,
    pub model_bytes: u64,
    pub table_bytes: u64,
    pub lossless: bool,
}

/// Trains a small-latent model on the batch itself for `epochs`, then codes the
/// batch with bits-back and with the sequential baseline.
pub fn compress_batch_summary(
    clouds: usize,
    points: usize,
    depth: u8,
    epochs: usize,
    seed: u64,
) -> Result<BatchSummary> {
    let spec = DatasetSpec {
        kind: None,
        clouds,
        points,
        seed,
    };
    let pcs = spec.generate()?;
    let grids = voxelize_all(&pcs, depth)?;
    let total_points = pcs.iter().map(|c| c.len() as u64).sum();
    let config = CvaeConfig::with_sizes(depth, 16, 128, [8, 16, 32])?;
    let mut model = CvaeModel::new(config, seed)?;
    let report = model.train(
        &grids,
        &TrainConfig {
            epochs,
            lr: 3e-3,
            batch_size: 8,
            seed,
        },
    )?;
    let bb = compress_grids(&grids, total_points, &model, 12, seed)?;
    let lossless = decompress_batch(&bb.container, &model)? == grids;
    let seq = seq_compress_grids(&grids, &model)?;
    let r = bb.report();
    Ok(BatchSummary {
        clouds,
        points: total_points,
        train_loss_bits: report.epoch_loss_bits,
        bitsback_bits: r.total_bits,
        initial_bits: r.initial_bits,
        bitsback_bpp: r.bpp,
        sequential_bpp: seq.payload_bits() as f64 / total_points as f64,
        model_bytes: model.decoder_size_bytes() as u64,
        table_bytes: seq_overhead_bytes(clouds as u64, depth, DEFAULT_BYTES_PER_ENTRY),
        lossless,
    })
}

/// Quantized posterior frequencies of `N(mu, sigma^2)` over `2^p_bits` buckets.
pub fn posterior_frequencies(mu: f64, sigma: f64, p_bits: u8) -> Result<Vec<u32>> {
    Ok(GaussianBuckets::new(p_bits)?.posterior_cdf(mu, sigma)?.frequencies())
}
