//! Central finite-difference checks for tape gradients (64-bit only).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Which coordinates of each input to perturb.
#[derive(Debug, Clone, Copy)]
pub enum Coverage {
    All,
    /// Up to `n` coordinates per input, chosen with `seed`.
    Sample { n: usize, seed: u64 },
}

/// Relative error with the denominator floored at `1e-3`, so near-zero gradients
/// are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compares tape gradients of the scalar built by `build` against central differences
/// with step `h` at `point`.
pub fn finite_diff_check<F>(
    point: &[Tensor<f64>],
    h: f64,
    coverage: Coverage,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let v = tape.value(out)?;
        if v.len() != 1 {
            return Err(Error::Shape(format!("gradient check needs a scalar, got {:?}", v.shape())));
        }
        Ok(v.data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward_scalar(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    let mut probe: Vec<Tensor<f64>> = point.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let n = point[i].len();
        let coords: Vec<usize> = match coverage {
            Coverage::All => (0..n).collect(),
            Coverage::Sample { n: k, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
                let mut idx = sample(&mut rng, n, k.min(n)).into_vec();
                idx.sort_unstable();
                idx
            }
        };
        for j in coords {
            let analytic = grads.get(*var).map_or(0.0, |g| g.data()[j]);
            let x0 = point[i].data()[j];
            probe[i].data_mut()[j] = x0 + h;
            let fp = eval(&probe)?;
            probe[i].data_mut()[j] = x0 - h;
            let fm = eval(&probe)?;
            probe[i].data_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            report.max_abs_error = report.max_abs_error.max((analytic - numeric).abs());
            report.max_rel_error = report.max_rel_error.max(relative_error(analytic, numeric));
            report.checked += 1;
        }
    }
    Ok(report)
}
