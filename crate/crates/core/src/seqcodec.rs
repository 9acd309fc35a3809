//! Sequential baseline: each grid is coded on its own under per-voxel
//! probabilities, and the decoder is handed those probability tables instead of
//! a model.

use crate::ans::{bernoulli_cdf, AnsState};
use crate::cvae::CvaeModel;
use crate::error::{Error, Result};
use crate::geometry::{voxelize, PointCloud, VoxelGrid};

pub const DEFAULT_BYTES_PER_ENTRY: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SeqCompressed {
    pub depth: u8,
    /// One flushed message per grid.
    pub payloads: Vec<Vec<u32>>,
    /// One `2^(3d)` table of `P(x_m = 1)` per grid; `None` models a missing table.
    pub tables: Vec<Option<Vec<f32>>>,
}

impl SeqCompressed {
    pub fn batch(&self) -> usize {
        self.payloads.len()
    }

    pub fn payload_bits(&self) -> u64 {
        self.payloads.iter().map(|p| 32 * p.len() as u64).sum()
    }
}

/// Decoder-side storage for `batch` tables of `2^(3 depth)` entries.
pub fn seq_overhead_bytes(batch: u64, depth: u8, bytes_per_entry: u64) -> u64 {
    batch * (1u64 << (3 * depth as u32)) * bytes_per_entry
}

/// Codes one grid into a fresh message, pushing voxels in reverse raster order.
pub fn seq_encode_grid(grid: &VoxelGrid, table: &[f32]) -> Result<Vec<u32>> {
    if table.len() != grid.len() {
        return Err(Error::Shape(format!(
            "table of {} entries for a grid of {} voxels",
            table.len(),
            grid.len()
        )));
    }
    let mut state = AnsState::new();
    for (x, p) in grid.occupancy().iter().zip(table).rev() {
        state.push(*x as usize, &bernoulli_cdf(*p as f64)?)?;
    }
    Ok(state.flush())
}

pub fn seq_decode_grid(depth: u8, payload: &[u32], table: &[f32]) -> Result<VoxelGrid> {
    let mut grid = VoxelGrid::empty(depth)?;
    if table.len() != grid.len() {
        return Err(Error::Shape(format!(
            "table of {} entries for a grid of {} voxels",
            table.len(),
            grid.len()
        )));
    }
    let mut state = AnsState::restore(payload)?;
    for (m, p) in table.iter().enumerate() {
        let x = state.pop(&bernoulli_cdf(*p as f64)?).map_err(|e| match e {
            Error::MessageExhausted => Error::Codec(format!("payload exhausted at voxel {m}")),
            other => other,
        })?;
        grid.set(m, x == 1);
    }
    if state != AnsState::new() {
        return Err(Error::Codec("payload has trailing data".into()));
    }
    Ok(grid)
}

/// Per-voxel probabilities from the posterior mean, rounded to `f32`.
pub fn probability_table(grid: &VoxelGrid, model: &CvaeModel) -> Result<Vec<f32>> {
    let pp = model.posterior(grid)?;
    Ok(model.likelihood(&pp.mu)?.p.iter().map(|p| *p as f32).collect())
}

pub fn seq_compress_grids(grids: &[VoxelGrid], model: &CvaeModel) -> Result<SeqCompressed> {
    let mut out = SeqCompressed {
        depth: model.depth(),
        payloads: Vec::with_capacity(grids.len()),
        tables: Vec::with_capacity(grids.len()),
    };
    for g in grids {
        let table = probability_table(g, model)?;
        out.payloads.push(seq_encode_grid(g, &table)?);
        out.tables.push(Some(table));
    }
    Ok(out)
}

pub fn seq_compress(clouds: &[PointCloud], model: &CvaeModel, depth: u8) -> Result<SeqCompressed> {
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
    seq_compress_grids(&grids, model)
}

/// Decodes every grid from its stored table alone; a missing table fails only its grid.
pub fn seq_decompress(sc: &SeqCompressed) -> Vec<Result<VoxelGrid>> {
    sc.payloads
        .iter()
        .enumerate()
        .map(|(i, payload)| match sc.tables.get(i) {
            Some(Some(table)) => seq_decode_grid(sc.depth, payload, table),
            _ => Err(Error::Codec(format!("probability table {i} is missing"))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ans::TOTAL;
    use crate::cvae::CvaeConfig;
    use crate::geometry::{gen_synthetic, ShapeKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grids(n: usize, depth: u8) -> Vec<VoxelGrid> {
        (0..n)
            .map(|i| {
                let kind = ShapeKind::ALL[i % 4];
                voxelize(&gen_synthetic(kind, 300, i as u64).unwrap(), depth).unwrap()
            })
            .collect()
    }

    #[test]
    fn overhead_formula() {
        assert_eq!(seq_overhead_bytes(1000, 7, 4), 8_388_608_000);
        assert_eq!(seq_overhead_bytes(0, 7, 4), 0);
        assert_eq!(seq_overhead_bytes(1000, 5, 2), 65_536_000);
    }

    #[test]
    fn roundtrip_with_model_tables() {
        let m = CvaeModel::new(CvaeConfig::new(3).unwrap(), 4).unwrap();
        let gs = grids(6, 3);
        let sc = seq_compress_grids(&gs, &m).unwrap();
        assert_eq!(sc.tables.len(), 6);
        assert!(sc.tables.iter().all(|t| t.as_ref().unwrap().len() == 512));
        let out: Vec<VoxelGrid> = seq_decompress(&sc).into_iter().map(|r| r.unwrap()).collect();
        assert_eq!(out, gs);
        assert_eq!(sc, seq_compress_grids(&gs, &m).unwrap());
    }

    #[test]
    fn missing_table_fails_only_its_grid() {
        let m = CvaeModel::new(CvaeConfig::new(3).unwrap(), 5).unwrap();
        let gs = grids(3, 3);
        let mut sc = seq_compress_grids(&gs, &m).unwrap();
        sc.tables[1] = None;
        let out = seq_decompress(&sc);
        assert_eq!(out[0].as_ref().unwrap(), &gs[0]);
        assert!(out[1].is_err());
        assert_eq!(out[2].as_ref().unwrap(), &gs[2]);
    }

    #[test]
    fn payload_tracks_entropy_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let depth = 5;
        let mut total_bits = 0u64;
        let mut ideal = 0.0;
        for _ in 0..4 {
            let table: Vec<f32> = (0..1 << 15).map(|_| rng.random_range(0.05..0.95)).collect();
            let occupancy: Vec<u8> = table.iter().map(|p| (rng.random::<f32>() < *p) as u8).collect();
            let grid = VoxelGrid::new(depth, occupancy).unwrap();
            for (x, p) in grid.occupancy().iter().zip(&table) {
                let f = bernoulli_cdf(*p as f64).unwrap().frequency(*x as usize);
                ideal -= (f as f64 / TOTAL as f64).log2();
            }
            let payload = seq_encode_grid(&grid, &table).unwrap();
            total_bits += 32 * payload.len() as u64;
            assert_eq!(seq_decode_grid(depth, &payload, &table).unwrap(), grid);
        }
        let rel = (total_bits as f64 - ideal) / ideal;
        assert!(rel.abs() < 0.01, "{total_bits} vs {ideal}");
    }

    #[test]
    fn corrupted_payloads_are_rejected() {
        let g = &grids(1, 3)[0];
        let table = vec![0.3f32; 512];
        let payload = seq_encode_grid(g, &table).unwrap();
        assert!(seq_decode_grid(3, &payload[3..], &table).is_err());
        assert!(seq_decode_grid(3, &payload, &table[1..]).is_err());
    }
}
