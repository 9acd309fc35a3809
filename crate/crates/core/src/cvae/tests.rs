use super::*;
use crate::geometry::{gen_synthetic, voxelize, ShapeKind};
use crate::nncore::{finite_diff_check, Coverage};
use rand_distr::StandardNormal;

fn small(depth: u8) -> CvaeConfig {
    CvaeConfig::with_sizes(depth, 3, 6, [2, 3, 4]).unwrap()
}

fn grid(depth: u8, seed: u64) -> VoxelGrid {
    let pc = gen_synthetic(ShapeKind::SphereSurface, 400, seed).unwrap();
    voxelize(&pc, depth).unwrap()
}

#[test]
fn schedules_close_for_every_depth() {
    for d in 1..=8 {
        let c = CvaeConfig::new(d).unwrap();
        assert_eq!(c.spatial().unwrap()[0], 1 << d);
    }
    assert_eq!(CvaeConfig::new(5).unwrap().flat().unwrap(), 2048);
    assert_eq!(CvaeConfig::new(4).unwrap().flat().unwrap(), 256);
    assert!(CvaeConfig::new(0).is_err());
    assert!(CvaeConfig::new(9).is_err());
    let mut bad = CvaeConfig::new(5).unwrap();
    bad.encoder[0] = ConvGeometry::new(3, 2, 0);
    assert!(bad.spatial().is_err());
}

#[test]
fn weight_file_size_is_monotone_in_depth() {
    let sizes: Vec<usize> = (1..=8)
        .map(|d| CvaeConfig::new(d).unwrap().weight_file_bytes().unwrap())
        .collect();
    assert!(sizes.windows(2).all(|w| w[0] <= w[1]), "{sizes:?}");
    assert!(sizes[4] < 50 << 20);
}

#[test]
fn zero_weights_pass_biases() {
    let mut m = CvaeModel::<f32>::zeros(small(3)).unwrap();
    {
        let mut p = m.params_mut();
        *p[2 * MU + 1] = Tensor::vector(vec![0.5, -1.0, 2.0]);
        *p[2 * LOG_VAR + 1] = Tensor::vector(vec![0.1, 0.2, -0.3]);
        *p[2 * DEC[2] + 1] = Tensor::vector(vec![0.7]);
    }
    let pp = m.posterior(&grid(3, 1)).unwrap();
    assert_eq!(pp.mu, vec![0.5f32 as f64, -1.0, 2.0]);
    assert_eq!(pp.log_var, vec![0.1f32 as f64, 0.2f32 as f64, -0.3f32 as f64]);
    let probs = m.likelihood(&[0.3, 0.1, -4.0]).unwrap();
    assert_eq!(probs.p.len(), 512);
    let expected = sigmoid(0.7f32 as f64);
    assert!(probs.p.iter().all(|p| *p == expected));
}

#[test]
fn posterior_is_deterministic_and_input_sensitive() {
    let m = CvaeModel::<f32>::new(CvaeConfig::new(3).unwrap(), 9).unwrap();
    let g = grid(3, 2);
    let a = m.posterior(&g).unwrap();
    assert_eq!(a, m.posterior(&g).unwrap());
    let mut h = g.clone();
    let occupied = g.occupancy().iter().position(|v| *v == 1).unwrap();
    h.set(occupied, false);
    let b = m.posterior(&h).unwrap();
    let linf = a.mu.iter().zip(&b.mu).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(linf > 0.0);
}

#[test]
fn depth_mismatch_is_a_config_error() {
    let m = CvaeModel::<f32>::zeros(small(3)).unwrap();
    assert!(matches!(m.posterior(&grid(4, 1)), Err(Error::Config(_))));
    assert!(matches!(m.likelihood(&[0.0; 4]), Err(Error::Shape(_))));
}

#[test]
fn reparameterized_samples() {
    let pp = PosteriorParams {
        mu: vec![0.5, -2.0],
        log_var: vec![0.0, 0.0],
    };
    assert_eq!(pp.sample(&[0.0, 0.0]).unwrap(), pp.mu);
    assert_eq!(pp.sample(&[1.0, 0.0]).unwrap(), vec![1.5, -2.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let mut mean = [0.0; 2];
    for _ in 0..n {
        let noise: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
        let z = pp.sample(&noise).unwrap();
        mean[0] += z[0] / n as f64;
        mean[1] += z[1] / n as f64;
    }
    assert!((mean[0] - 0.5).abs() < 0.02 && (mean[1] + 2.0).abs() < 0.02, "{mean:?}");
}

#[test]
fn elbo_closed_forms() {
    let mut m = CvaeModel::<f32>::zeros(small(3)).unwrap();
    let g = grid(3, 3);
    let e = m.elbo(&g, &[0.3, -0.2, 1.0]).unwrap();
    assert_eq!(e.kl, 0.0);
    assert!((e.recon_ll + 512.0 * std::f64::consts::LN_2).abs() < 1e-9);
    assert!((e.loss_bits() - 512.0).abs() < 1e-9);
    m.params_mut()[2 * MU + 1].data_mut()[0] = 1.0;
    let e = m.elbo(&g, &[0.0; 3]).unwrap();
    assert!((e.kl - 0.5).abs() < 1e-12);
}

#[test]
fn elbo_matches_tape_loss() {
    let m = CvaeModel::<f64>::new(small(3), 4).unwrap();
    let g = grid(3, 4);
    let noise = [0.4, -1.1, 0.2];
    let direct = m.elbo(&g, &noise).unwrap().loss;
    let (taped, grads) = m.loss_and_grads(&g, &noise).unwrap();
    assert!((direct - taped).abs() < 1e-9 * direct.abs());
    assert_eq!(grads.len(), m.params().len());
}

#[test]
fn elbo_gradients_match_finite_differences() {
    for seed in 0..10u64 {
        let config = small(if seed % 2 == 0 { 3 } else { 2 });
        let m = CvaeModel::<f64>::new(config, seed).unwrap();
        let g = grid(config.depth, 100 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..config.latent_dim).map(|_| rng.sample(StandardNormal)).collect();
        let noise = Tensor::vector(noise);
        let target = CvaeModel::<f64>::grid_values(&g);
        let point: Vec<Tensor<f64>> = m.params().into_iter().cloned().collect();
        let report = finite_diff_check(
            &point,
            1e-5,
            Coverage::Sample { n: 12, seed },
            |tape, vars| config.elbo_graph(tape, vars, &target, &noise),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
    }
}

#[test]
fn zero_epochs_leave_the_model_unchanged() {
    let mut m = CvaeModel::<f32>::new(small(3), 1).unwrap();
    let before = m.clone();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let report = m.train(&[grid(3, 1)], &cfg).unwrap();
    assert!(report.epoch_loss_bits.is_empty());
    assert_eq!(m, before);
    assert!(m.train(&[], &cfg).is_err());
}

#[test]
fn overfits_a_single_grid_deterministically() {
    let config = CvaeConfig::with_sizes(3, 8, 64, [4, 8, 16]).unwrap();
    let target = grid(3, 7);
    let data = vec![target.clone(); 20];
    let cfg = TrainConfig {
        epochs: 50,
        lr: 3e-3,
        batch_size: 4,
        seed: 11,
    };
    let run = || {
        let mut m = CvaeModel::<f32>::new(config, 3).unwrap();
        let report = m.train(&data, &cfg).unwrap();
        (m, report)
    };
    let (m, report) = run();
    let trace = &report.epoch_loss_bits;
    assert_eq!(trace.len(), 50);
    assert!(trace[49] < trace[0], "{trace:?}");
    let pp = m.posterior(&target).unwrap();
    let p = m.likelihood(&pp.mu).unwrap().p;
    let err: f64 = p
        .iter()
        .zip(target.occupancy())
        .map(|(p, x)| (p - *x as f64).abs())
        .sum::<f64>()
        / p.len() as f64;
    assert!(err < 0.1, "mean |p - x| = {err}");
    let (m2, report2) = run();
    assert_eq!(report, report2);
    assert_eq!(m.to_bytes(), m2.to_bytes());
}

#[test]
fn weight_file_roundtrip() {
    let m = CvaeModel::<f32>::new(CvaeConfig::new(3).unwrap(), 2).unwrap();
    let bytes = m.to_bytes();
    assert_eq!(bytes.len(), m.decoder_size_bytes());
    assert_eq!(bytes.len(), m.config().weight_file_bytes().unwrap());
    let back = CvaeModel::from_bytes(&bytes).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(m.hash(), u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.cvae");
    m.save(&path).unwrap();
    assert_eq!(CvaeModel::load(&path).unwrap(), m);
    assert!(matches!(CvaeModel::load(""), Err(Error::Io { .. })));
    assert!(matches!(m.save(""), Err(Error::Io { .. })));
}

#[test]
fn corrupt_weight_files_are_rejected() {
    let m = CvaeModel::<f32>::new(small(3), 2).unwrap();
    let bytes = m.to_bytes();
    let mut flipped = bytes.clone();
    flipped[HEADER_OFFSET_PARAMS + 5] ^= 1;
    assert!(matches!(CvaeModel::from_bytes(&flipped), Err(Error::Format(_))));
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(CvaeModel::from_bytes(&version), Err(Error::Format(_))));
    assert!(matches!(CvaeModel::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
    assert!(matches!(CvaeModel::from_bytes(b"NOPE"), Err(Error::Format(_))));
}

const HEADER_OFFSET_PARAMS: usize = 36;
