use super::*;
use crate::cvae::CvaeConfig;
use crate::geometry::{gen_synthetic, ShapeKind};

fn model(seed: u64) -> CvaeModel {
    CvaeModel::new(CvaeConfig::new(3).unwrap(), seed).unwrap()
}

fn clouds(n: usize, seed: u64) -> Vec<PointCloud> {
    (0..n)
        .map(|i| {
            let kind = ShapeKind::ALL[i % ShapeKind::ALL.len()];
            gen_synthetic(kind, 300, seed + i as u64).unwrap()
        })
        .collect()
}

fn grids(n: usize, seed: u64) -> Vec<VoxelGrid> {
    clouds(n, seed).iter().map(|c| voxelize(c, 3).unwrap()).collect()
}

#[test]
fn seed_words_cover_the_worst_case() {
    assert_eq!(seed_word_count(50), 27);
    assert_eq!(seed_word_count(1), 3);
    assert_eq!(seed_words(4, 10), seed_words(4, 10));
    assert_ne!(seed_words(4, 10), seed_words(5, 10));
}

#[test]
fn decode_inverts_encode_bitwise() {
    let m = model(1);
    let buckets = GaussianBuckets::new(12).unwrap();
    let mut counters = TableCounters::default();
    let mut state = AnsState::from_seed_words(&seed_words(0, seed_word_count(50)));
    for g in grids(3, 10) {
        let before = state.clone();
        bb_encode_one(&mut state, &g, &m, &buckets, &mut counters).unwrap();
        let mut copy = state.clone();
        assert_eq!(bb_decode_one(&mut copy, &m, &buckets, &mut counters).unwrap(), g);
        assert_eq!(copy, before);
    }
}

#[test]
fn uniform_model_costs_one_bit_per_voxel() {
    let m = CvaeModel::<f32>::zeros(CvaeConfig::new(3).unwrap()).unwrap();
    let buckets = GaussianBuckets::new(12).unwrap();
    let mut state = AnsState::from_seed_words(&seed_words(1, 27));
    let mut counters = TableCounters::default();
    let g = &grids(1, 3)[0];
    let before = state.information_bits();
    bb_encode_one(&mut state, g, &m, &buckets, &mut counters).unwrap();
    let net = state.information_bits() - before;
    assert!((net - 512.0).abs() < 0.05, "{net}");
}

#[test]
fn empty_message_cannot_lend_bits() {
    let m = model(2);
    let buckets = GaussianBuckets::new(12).unwrap();
    let err = bb_encode_one(
        &mut AnsState::new(),
        &grids(1, 4)[0],
        &m,
        &buckets,
        &mut TableCounters::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::InsufficientInitialBits(_)));
}

#[test]
fn batches_roundtrip() {
    let m = model(3);
    for b in [1, 7, 64] {
        let cs = clouds(b, 100);
        let c = compress_batch(&cs, &m, 3, 12, 9).unwrap();
        assert_eq!(c.container.model_hash, m.hash());
        assert_eq!(c.container.batch as usize, b);
        let expected: Vec<VoxelGrid> = cs.iter().map(|c| voxelize(c, 3).unwrap()).collect();
        assert_eq!(decompress_batch(&c.container, &m).unwrap(), expected);
        let bytes = c.container.to_bytes();
        assert_eq!(bytes.len(), HEADER_BYTES + 4 * c.container.payload.len());
        assert_eq!(Container::from_bytes(&bytes).unwrap(), c.container);
    }
}

#[test]
fn decoder_builds_only_model_tables() {
    let m = model(4);
    let gs = grids(10, 20);
    let c = compress_grids(&gs, 3000, &m, 12, 1).unwrap();
    let mut counters = TableCounters::default();
    decompress_batch_counted(&c.container, &m, &mut counters).unwrap();
    assert_eq!(
        counters,
        TableCounters {
            prior: 10 * 50,
            posterior: 10 * 50,
            likelihood: 10 * 512,
        }
    );
}

#[test]
fn damaged_inputs_fail_cleanly() {
    let m = model(5);
    let c = compress_grids(&grids(4, 30), 1200, &m, 12, 2).unwrap().container;

    let other = model(6);
    assert!(matches!(decompress_batch(&c, &other), Err(Error::Codec(_))));

    let mut truncated = c.clone();
    truncated.payload.drain(..3);
    assert!(decompress_batch(&truncated, &m).is_err());

    let bytes = c.to_bytes();
    assert!(Container::from_bytes(&bytes[..bytes.len() - 4]).is_err());
    assert!(Container::from_bytes(&bytes[..10]).is_err());
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(Container::from_bytes(&bad_magic).is_err());
}

#[test]
fn mixed_depths_are_rejected() {
    let m = model(7);
    let mut gs = grids(2, 40);
    gs.push(voxelize(&clouds(1, 50)[0], 4).unwrap());
    assert!(matches!(compress_grids(&gs, 900, &m, 12, 0), Err(Error::Config(_))));
    assert!(matches!(compress_batch(&clouds(1, 1), &m, 4, 12, 0), Err(Error::Config(_))));
}

#[test]
fn chaining_amortizes_initial_bits() {
    let m = model(8);
    let gs = grids(10, 60);
    let together = compress_grids(&gs, 3000, &m, 12, 0).unwrap().report().total_bits;
    let separate: u64 = gs
        .iter()
        .map(|g| compress_grids(std::slice::from_ref(g), 300, &m, 12, 0).unwrap().report().total_bits)
        .sum();
    assert!(together < separate + 64 * 10, "{together} vs {separate}");
    assert!(together < separate);
}

#[test]
fn report_accounting() {
    let m = model(9);
    let c = compress_grids(&grids(5, 70), 1500, &m, 12, 3).unwrap();
    let r = c.report();
    assert_eq!(r.total_bits, 32 * c.container.payload.len() as u64);
    assert_eq!(r.initial_bits, 32 * 27);
    assert_eq!(r.net_bits, r.total_bits - r.initial_bits);
    assert_eq!(r.bpp, r.total_bits as f64 / 1500.0);
    assert_eq!(r.per_cloud_bits.len(), 5);
    let sum: f64 = r.per_cloud_bits.iter().sum();
    assert!(sum < r.total_bits as f64);

    // 800 clouds of 20 000 points at 1.56 bpp occupy 3.12 MB.
    let words = (800u64 * 20_000 * 156 / 100 / 32) as usize;
    let big = Container {
        payload: vec![0; words],
        total_points: 800 * 20_000,
        ..c.container
    };
    let r = report(&big);
    assert!((r.bpp - 1.56).abs() < 1e-12);
    assert_eq!(r.total_bits / 8, 3_120_000);
}
