//! Experiment harness: synthetic datasets, batch and depth sweeps, CSV rows.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ans::DEFAULT_P_BITS;
use crate::bitsback::{compress_grids, decompress_batch};
use crate::cvae::{CvaeConfig, CvaeModel, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::geometry::{check_depth, gen_synthetic, voxelize, PointCloud, ShapeKind, VoxelGrid};
use crate::seqcodec::{seq_compress_grids, seq_decompress, seq_overhead_bytes, DEFAULT_BYTES_PER_ENTRY};

pub const CSV_HEADER: &str = "method,d,B,bpp,payload_bytes,decoder_bytes,wall_time_ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    BitsBack,
    Sequential,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::BitsBack => "bitsback",
            Method::Sequential => "sequential",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: Method,
    pub d: u8,
    #[serde(rename = "B")]
    pub batch: usize,
    pub bpp: f64,
    pub payload_bytes: u64,
    pub decoder_bytes: u64,
    pub wall_time_ms: u64,
}

/// A synthetic dataset: `clouds` clouds of `points` points. Without a `kind`
/// the shape families alternate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub kind: Option<ShapeKind>,
    pub clouds: usize,
    pub points: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: None,
            clouds: 200,
            points: 2000,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn generate(&self) -> Result<Vec<PointCloud>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.clouds)
            .map(|i| {
                let kind = self
                    .kind
                    .unwrap_or(ShapeKind::ALL[i % ShapeKind::ALL.len()]);
                gen_synthetic(kind, self.points, rng.random())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub train_set: DatasetSpec,
    pub eval_set: DatasetSpec,
    pub depths: Vec<u8>,
    pub batches: Vec<usize>,
    pub p_bits: u8,
    pub train: TrainConfig,
    pub model_seed: u64,
    pub codec_seed: u64,
    pub bytes_per_entry: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            train_set: DatasetSpec::default(),
            eval_set: DatasetSpec {
                clouds: 100,
                seed: 1,
                ..DatasetSpec::default()
            },
            depths: vec![4],
            batches: vec![1, 10, 100],
            p_bits: DEFAULT_P_BITS,
            train: TrainConfig::default(),
            model_seed: 0,
            codec_seed: 0,
            bytes_per_entry: DEFAULT_BYTES_PER_ENTRY,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depths.is_empty() || self.batches.is_empty() {
            return Err(Error::Config("depth and batch lists must be nonempty".into()));
        }
        for d in &self.depths {
            check_depth(*d)?;
        }
        if self.batches.contains(&0) {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.eval_set.clouds == 0 || self.eval_set.points == 0 {
            return Err(Error::Config("evaluation set is empty".into()));
        }
        Ok(())
    }
}

/// Parses a comma-separated list such as `1,10,100`.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("cannot parse list item {p:?}")))
        })
        .collect()
}

/// Freshly initialized default-schedule model trained on `clouds` voxelized at `depth`.
pub fn train_model(
    depth: u8,
    clouds: &[PointCloud],
    train: &TrainConfig,
    model_seed: u64,
) -> Result<(CvaeModel, TrainReport)> {
    let grids = voxelize_all(clouds, depth)?;
    let mut model = CvaeModel::new(CvaeConfig::new(depth)?, model_seed)?;
    let report = model.train(&grids, train)?;
    Ok((model, report))
}

pub fn voxelize_all(clouds: &[PointCloud], depth: u8) -> Result<Vec<VoxelGrid>> {
    clouds.iter().map(|c| voxelize(c, depth)).collect()
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

/// Compresses `clouds` in consecutive chunks of each batch size with both
/// methods, checking every chunk decodes to its input. Rows are sorted by
/// (method, d, B).
pub fn evaluate(
    model: &CvaeModel,
    clouds: &[PointCloud],
    batches: &[usize],
    p_bits: u8,
    codec_seed: u64,
    bytes_per_entry: u64,
) -> Result<Vec<BenchRow>> {
    if clouds.is_empty() {
        return Err(Error::InvalidInput("no clouds to evaluate".into()));
    }
    let d = model.depth();
    let grids = voxelize_all(clouds, d)?;
    let points: u64 = clouds.iter().map(|c| c.len() as u64).sum();
    let mut rows = Vec::new();
    for &b in batches {
        if b == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        let start = Instant::now();
        let mut payload_bytes = 0u64;
        for (k, (gs, cs)) in grids.chunks(b).zip(clouds.chunks(b)).enumerate() {
            let n = cs.iter().map(|c| c.len() as u64).sum();
            let c = compress_grids(gs, n, model, p_bits, codec_seed.wrapping_add(k as u64))?;
            if decompress_batch(&c.container, model)? != gs {
                return Err(Error::Codec(format!("bits-back chunk {k} at B={b} is not lossless")));
            }
            payload_bytes += 4 * c.container.payload.len() as u64;
        }
        rows.push(BenchRow {
            method: Method::BitsBack,
            d,
            batch: b,
            bpp: 8.0 * payload_bytes as f64 / points as f64,
            payload_bytes,
            decoder_bytes: model.decoder_size_bytes() as u64,
            wall_time_ms: elapsed_ms(start),
        });

        let start = Instant::now();
        let mut payload_bytes = 0u64;
        for gs in grids.chunks(b) {
            let sc = seq_compress_grids(gs, model)?;
            for (out, g) in seq_decompress(&sc).into_iter().zip(gs) {
                if &out? != g {
                    return Err(Error::Codec(format!("sequential chunk at B={b} is not lossless")));
                }
            }
            payload_bytes += sc.payload_bits() / 8;
        }
        rows.push(BenchRow {
            method: Method::Sequential,
            d,
            batch: b,
            bpp: 8.0 * payload_bytes as f64 / points as f64,
            payload_bytes,
            decoder_bytes: seq_overhead_bytes(b as u64, d, bytes_per_entry),
            wall_time_ms: elapsed_ms(start),
        });
    }
    sort_rows(&mut rows);
    Ok(rows)
}

pub fn sort_rows(rows: &mut [BenchRow]) {
    rows.sort_by_key(|r| (r.method, r.d, r.batch));
}

/// bpp against batch size at `config.depths[0]` with `model`.
pub fn sweep_batch(config: &BenchConfig, model: &CvaeModel) -> Result<Vec<BenchRow>> {
    config.validate()?;
    let clouds = config.eval_set.generate()?;
    evaluate(
        model,
        &clouds,
        &config.batches,
        config.p_bits,
        config.codec_seed,
        config.bytes_per_entry,
    )
}

/// Trains one model per depth and evaluates it at every batch size.
pub fn sweep_depth(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    sweep_depth_with(config, |_, _| {})
}

/// As [`sweep_depth`], calling `on_trained(depth, report)` after each model is trained.
pub fn sweep_depth_with(
    config: &BenchConfig,
    mut on_trained: impl FnMut(u8, &TrainReport),
) -> Result<Vec<BenchRow>> {
    config.validate()?;
    let train = config.train_set.generate()?;
    let eval = config.eval_set.generate()?;
    let mut rows = Vec::new();
    for &d in &config.depths {
        let (model, report) = train_model(d, &train, &config.train, config.model_seed)?;
        on_trained(d, &report);
        rows.extend(evaluate(
            &model,
            &eval,
            &config.batches,
            config.p_bits,
            config.codec_seed,
            config.bytes_per_entry,
        )?);
    }
    sort_rows(&mut rows);
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn csv_string(rows: &[BenchRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}
