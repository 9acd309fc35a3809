//! Point clouds, synthetic shape generators, and binary voxel grids.
//!
//! Coordinates live in the closed cube `[-1, 1]^3`. A grid of bit-depth `d`
//! splits every axis into `2^d` equal bins and is flattened in raster order
//! with `x` varying fastest, then `y`, then `z`.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use crate::error::{Error, Result};

pub const MIN_DEPTH: u8 = 1;
pub const MAX_DEPTH: u8 = 8;

pub type Point = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("point cloud has no points".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if let Some(c) = p.iter().find(|c| !in_unit_range(**c)) {
                return Err(Error::InvalidInput(format!(
                    "point {i} has coordinate {c} outside [-1, 1]"
                )));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }
}

fn in_unit_range(c: f64) -> bool {
    (-1.0..=1.0).contains(&c)
}

/// Synthetic shape families standing in for mesh-sampled and scanned datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeKind {
    SphereSurface,
    BoxSurface,
    Plane,
    Cluster,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::SphereSurface,
        ShapeKind::BoxSurface,
        ShapeKind::Plane,
        ShapeKind::Cluster,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::SphereSurface => "sphere-surface",
            ShapeKind::BoxSurface => "box-surface",
            ShapeKind::Plane => "plane",
            ShapeKind::Cluster => "cluster",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown shape kind {s:?}; expected one of sphere-surface, box-surface, plane, cluster"
                ))
            })
    }
}

/// Per-cloud shape parameters, drawn first from the cloud's seeded stream.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapeParams {
    Sphere { radius: f64 },
    Box { half_extent: [f64; 3] },
    Plane { normal: [f64; 3], offset: f64, half_side: f64 },
    Cluster { centers: Vec<[f64; 3]>, spreads: Vec<f64> },
}

fn shape_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn draw_params(kind: ShapeKind, rng: &mut ChaCha8Rng) -> ShapeParams {
    match kind {
        ShapeKind::SphereSurface => ShapeParams::Sphere {
            radius: rng.random_range(0.55..0.95),
        },
        ShapeKind::BoxSurface => ShapeParams::Box {
            half_extent: [
                rng.random_range(0.35..0.95),
                rng.random_range(0.35..0.95),
                rng.random_range(0.35..0.95),
            ],
        },
        ShapeKind::Plane => ShapeParams::Plane {
            normal: UnitSphere.sample(rng),
            offset: rng.random_range(-0.2..0.2),
            half_side: rng.random_range(0.4..0.55),
        },
        ShapeKind::Cluster => {
            let k = rng.random_range(3..=6);
            let centers = (0..k)
                .map(|_| {
                    [
                        rng.random_range(-0.7..0.7),
                        rng.random_range(-0.7..0.7),
                        rng.random_range(-0.7..0.7),
                    ]
                })
                .collect();
            let spreads = (0..k).map(|_| rng.random_range(0.04..0.15)).collect();
            ShapeParams::Cluster { centers, spreads }
        }
    }
}

/// The shape parameters `gen_synthetic(kind, _, seed)` uses.
pub fn shape_params(kind: ShapeKind, seed: u64) -> ShapeParams {
    draw_params(kind, &mut shape_rng(seed))
}

fn orthonormal_basis(n: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if n[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let e1 = normalize(cross(n, helper));
    let e2 = cross(n, e1);
    (e1, e2)
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn clamp_point(p: Point) -> Point {
    p.map(|c| c.clamp(-1.0, 1.0))
}

/// Deterministic synthetic cloud of `n_points` points for a shape family.
pub fn gen_synthetic(kind: ShapeKind, n_points: usize, seed: u64) -> Result<PointCloud> {
    if n_points == 0 {
        return Err(Error::InvalidInput("n_points must be at least 1".into()));
    }
    let mut rng = shape_rng(seed);
    let params = draw_params(kind, &mut rng);
    let mut points = Vec::with_capacity(n_points);
    match &params {
        ShapeParams::Sphere { radius } => {
            for _ in 0..n_points {
                let u: [f64; 3] = UnitSphere.sample(&mut rng);
                points.push(u.map(|c| c * radius));
            }
        }
        ShapeParams::Box { half_extent: h } => {
            let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
            let total: f64 = areas.iter().sum();
            for _ in 0..n_points {
                let pick = rng.random_range(0.0..total);
                let axis = if pick < areas[0] {
                    0
                } else if pick < areas[0] + areas[1] {
                    1
                } else {
                    2
                };
                let mut p = [0.0; 3];
                for (i, c) in p.iter_mut().enumerate() {
                    *c = if i == axis {
                        if rng.random::<bool>() {
                            h[i]
                        } else {
                            -h[i]
                        }
                    } else {
                        rng.random_range(-h[i]..=h[i])
                    };
                }
                points.push(p);
            }
        }
        ShapeParams::Plane {
            normal,
            offset,
            half_side,
        } => {
            let (e1, e2) = orthonormal_basis(*normal);
            for _ in 0..n_points {
                let u = rng.random_range(-half_side..=*half_side);
                let v = rng.random_range(-half_side..=*half_side);
                let p = [0, 1, 2].map(|i| offset * normal[i] + u * e1[i] + v * e2[i]);
                points.push(clamp_point(p));
            }
        }
        ShapeParams::Cluster { centers, spreads } => {
            let unit = Normal::new(0.0, 1.0).expect("unit normal");
            for _ in 0..n_points {
                let k = rng.random_range(0..centers.len());
                let p = [0, 1, 2].map(|i| centers[k][i] + spreads[k] * unit.sample(&mut rng));
                points.push(clamp_point(p));
            }
        }
    }
    PointCloud::new(points)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VoxelGrid {
    depth: u8,
    occupancy: Vec<u8>,
}

pub fn check_depth(d: u8) -> Result<()> {
    if (MIN_DEPTH..=MAX_DEPTH).contains(&d) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "bit-depth {d} outside [{MIN_DEPTH}, {MAX_DEPTH}]"
        )))
    }
}

impl VoxelGrid {
    pub fn new(depth: u8, occupancy: Vec<u8>) -> Result<Self> {
        check_depth(depth)?;
        let expected = 1usize << (3 * depth as usize);
        if occupancy.len() != expected {
            return Err(Error::InvalidInput(format!(
                "occupancy length {} does not match 2^(3*{depth}) = {expected}",
                occupancy.len()
            )));
        }
        if let Some(v) = occupancy.iter().find(|v| **v > 1) {
            return Err(Error::InvalidInput(format!("occupancy value {v} is not binary")));
        }
        Ok(Self { depth, occupancy })
    }

    pub fn empty(depth: u8) -> Result<Self> {
        check_depth(depth)?;
        Ok(Self {
            depth,
            occupancy: vec![0; 1 << (3 * depth as usize)],
        })
    }

    pub fn depth(&self) -> u8 {
        self.depth
    }

    /// Bins per axis, `2^d`.
    pub fn side(&self) -> usize {
        1 << self.depth
    }

    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    pub fn occupancy(&self) -> &[u8] {
        &self.occupancy
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|v| **v == 1).count()
    }

    pub fn raster_index(&self, x: usize, y: usize, z: usize) -> usize {
        let n = self.side();
        x + n * (y + n * z)
    }

    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let n = self.side();
        (index % n, (index / n) % n, index / (n * n))
    }

    pub fn set(&mut self, index: usize, value: bool) {
        self.occupancy[index] = value as u8;
    }
}

/// Bin index along one axis: `floor((c + 1) * 2^(d-1))`, with `c = 1` clamped into the last bin.
pub fn axis_bin(c: f64, depth: u8) -> usize {
    let n = 1usize << depth;
    let scaled = ((c + 1.0) * (n as f64 / 2.0)).floor();
    (scaled.max(0.0) as usize).min(n - 1)
}

pub fn voxelize(pc: &PointCloud, depth: u8) -> Result<VoxelGrid> {
    let mut grid = VoxelGrid::empty(depth)?;
    for p in pc.points() {
        let idx = grid.raster_index(
            axis_bin(p[0], depth),
            axis_bin(p[1], depth),
            axis_bin(p[2], depth),
        );
        grid.occupancy[idx] = 1;
    }
    Ok(grid)
}

/// One point per occupied voxel, placed at the voxel center, in raster order.
pub fn devoxelize(grid: &VoxelGrid) -> Result<PointCloud> {
    let n = grid.side();
    let width = 2.0 / n as f64;
    let center = |i: usize| -1.0 + (i as f64 + 0.5) * width;
    let points: Vec<Point> = grid
        .occupancy()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v == 1)
        .map(|(idx, _)| {
            let (x, y, z) = grid.coords(idx);
            [center(x), center(y), center(z)]
        })
        .collect();
    if points.is_empty() {
        return Err(Error::EmptyOutput("grid has no occupied voxels".into()));
    }
    PointCloud::new(points)
}

/// Parse the plain-text `x y z` format, one point per line. Blank lines are skipped.
pub fn parse_points(text: &str, path: &Path) -> Result<PointCloud> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(
                line_no,
                format!("expected 3 coordinates, found {}", fields.len()),
            ));
        }
        let mut p = [0.0; 3];
        for (slot, field) in p.iter_mut().zip(&fields) {
            let c: f64 = field
                .parse()
                .map_err(|_| parse_err(line_no, format!("invalid coordinate {field:?}")))?;
            if !in_unit_range(c) {
                return Err(parse_err(line_no, format!("coordinate {c} outside [-1, 1]")));
            }
            *slot = c;
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(parse_err(0, "file contains no points".into()));
    }
    PointCloud::new(points)
}

pub fn load_points(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_points(&text, path)
}

/// Formats with 9 significant digits.
pub fn format_points(pc: &PointCloud) -> String {
    let mut out = String::with_capacity(pc.len() * 48);
    for p in pc.points() {
        out.push_str(&format!("{:.8e} {:.8e} {:.8e}\n", p[0], p[1], p[2]));
    }
    out
}

pub fn save_points(pc: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(format_points(pc).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn single_sphere_point_sits_on_the_radius() {
        let pc = gen_synthetic(ShapeKind::SphereSurface, 1, 0).unwrap();
        let ShapeParams::Sphere { radius } = shape_params(ShapeKind::SphereSurface, 0) else {
            panic!("wrong params");
        };
        let p = pc.points()[0];
        let r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
        assert!((r2 - radius * radius).abs() < 1e-6);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_synthetic(ShapeKind::Cluster, 20_000, 7).unwrap();
        let b = gen_synthetic(ShapeKind::Cluster, 20_000, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn box_points_stay_in_range() {
        let pc = gen_synthetic(ShapeKind::BoxSurface, 5000, 3).unwrap();
        for axis in 0..3 {
            let lo = pc.points().iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
            let hi = pc.points().iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
            assert!(lo >= -1.0 && hi <= 1.0, "axis {axis}: [{lo}, {hi}]");
        }
    }

    #[test]
    fn every_family_respects_the_unit_cube() {
        for kind in ShapeKind::ALL {
            for seed in 0..20 {
                let pc = gen_synthetic(kind, 500, seed).unwrap();
                assert!(pc.points().iter().flatten().all(|c| (-1.0..=1.0).contains(c)));
            }
        }
    }

    #[test]
    fn unknown_kind_and_zero_points_are_rejected() {
        assert!(matches!("torus".parse::<ShapeKind>(), Err(Error::InvalidInput(_))));
        assert!(gen_synthetic(ShapeKind::Plane, 0, 1).is_err());
    }

    #[test]
    fn corner_points_land_in_first_and_last_voxel() {
        let lo = PointCloud::new(vec![[-1.0, -1.0, -1.0]]).unwrap();
        let g = voxelize(&lo, 2).unwrap();
        assert_eq!(g.occupancy().iter().position(|v| *v == 1), Some(0));
        assert_eq!(g.occupied_count(), 1);

        let hi = PointCloud::new(vec![[1.0, 1.0, 1.0]]).unwrap();
        let g = voxelize(&hi, 2).unwrap();
        assert_eq!(g.occupancy().iter().position(|v| *v == 1), Some(63));
        assert_eq!(g.occupied_count(), 1);
    }

    #[test]
    fn depth_out_of_range_is_rejected() {
        let pc = PointCloud::new(vec![[0.0; 3]]).unwrap();
        assert!(voxelize(&pc, 0).is_err());
        assert!(voxelize(&pc, 9).is_err());
    }

    #[test]
    fn occupied_voxels_match_brute_force_binning() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points: Vec<Point> = (0..20_000)
            .map(|_| [0; 3].map(|_: i32| rng.random_range(-1.0..=1.0)))
            .collect();
        let pc = PointCloud::new(points.clone()).unwrap();
        let g = voxelize(&pc, 5).unwrap();

        // Independent binning: search the bin whose interval contains each coordinate.
        let bins = 32usize;
        let bin_of = |c: f64| {
            (0..bins)
                .find(|&i| {
                    let lo = -1.0 + 2.0 * i as f64 / bins as f64;
                    let hi = -1.0 + 2.0 * (i + 1) as f64 / bins as f64;
                    c >= lo && (c < hi || i == bins - 1)
                })
                .unwrap()
        };
        let expected: BTreeSet<(usize, usize, usize)> = points
            .iter()
            .map(|p| (bin_of(p[0]), bin_of(p[1]), bin_of(p[2])))
            .collect();
        let actual: BTreeSet<(usize, usize, usize)> = g
            .occupancy()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v == 1)
            .map(|(i, _)| g.coords(i))
            .collect();
        assert_eq!(actual, expected);
        assert!(g.occupied_count() <= pc.len().min(g.len()));
    }

    #[test]
    fn devoxelize_centers() {
        let mut g = VoxelGrid::empty(1).unwrap();
        g.set(0, true);
        let pc = devoxelize(&g).unwrap();
        assert_eq!(pc.points(), &[[-0.5, -0.5, -0.5]]);
        assert!(matches!(
            devoxelize(&VoxelGrid::empty(3).unwrap()),
            Err(Error::EmptyOutput(_))
        ));
    }

    #[test]
    fn random_grid_devoxelizes_to_one_point_per_voxel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = VoxelGrid::empty(4).unwrap();
        while g.occupied_count() < 100 {
            let i = rng.random_range(0..g.len());
            g.set(i, true);
        }
        let pc = devoxelize(&g).unwrap();
        assert_eq!(pc.len(), 100);
        assert_eq!(voxelize(&pc, 4).unwrap(), g);
    }

    #[test]
    fn parse_origin_and_reject_out_of_range() {
        let pc = parse_points("0 0 0\n", Path::new("a.txt")).unwrap();
        assert_eq!(pc.points(), &[[0.0, 0.0, 0.0]]);
        match parse_points("2.0 0 0\n", Path::new("b.txt")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_points("0 0 0\n0.1 x 0\n", Path::new("c.txt")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn save_load_preserves_nine_digits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.txt");
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let points: Vec<Point> = (0..1000)
            .map(|_| [0; 3].map(|_: i32| rng.random_range(-1.0..=1.0)))
            .collect();
        let pc = PointCloud::new(points).unwrap();
        save_points(&pc, &path).unwrap();
        let back = load_points(&path).unwrap();
        let max_delta = pc
            .points()
            .iter()
            .zip(back.points())
            .flat_map(|(a, b)| (0..3).map(move |i| (a[i] - b[i]).abs()))
            .fold(0.0, f64::max);
        assert!(max_delta < 1e-8, "max delta {max_delta}");
    }
}
