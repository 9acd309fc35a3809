use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::cdf::{QuantizedCdf, PRECISION, TOTAL};
use crate::error::{Error, Result};

pub const DEFAULT_P_BITS: u8 = 12;
/// Every bucket keeps frequency >= 1, so at most half the mass is reserved.
pub const MAX_P_BITS: u8 = 15;

// Beyond this many standard deviations both tails are far below f64 resolution
// relative to the bucket masses that matter.
const WINDOW: f64 = 40.0;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal upper tail `1 - normal_cdf(x)`, accurate for large `x`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Standard normal quantile, accurate to a few ulps over `(0, 1)`.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -lower_quantile(1.0 - p);
    }
    lower_quantile(p)
}

/// Rational approximation (relative error ~1e-9) followed by one Halley step.
fn lower_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let x = if p < 0.02425 {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Partition of the real line into `2^p_bits` buckets of equal standard-normal mass.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBuckets {
    p_bits: u8,
    /// `n + 1` edges, from `-inf` to `+inf`.
    boundaries: Vec<f64>,
    /// Per-bucket median under the standard normal.
    centres: Vec<f64>,
    prior: QuantizedCdf,
}

impl GaussianBuckets {
    pub fn new(p_bits: u8) -> Result<Self> {
        if !(1..=MAX_P_BITS).contains(&p_bits) {
            return Err(Error::Config(format!(
                "p_bits must be in 1..={MAX_P_BITS}, got {p_bits}"
            )));
        }
        let n = 1usize << p_bits;
        let boundaries = (0..=n)
            .map(|i| inverse_normal_cdf(i as f64 / n as f64))
            .collect();
        let centres = (0..n)
            .map(|i| inverse_normal_cdf((i as f64 + 0.5) / n as f64))
            .collect();
        Ok(Self {
            p_bits,
            boundaries,
            centres,
            prior: QuantizedCdf::uniform(n)?,
        })
    }

    pub fn p_bits(&self) -> u8 {
        self.p_bits
    }

    pub fn len(&self) -> usize {
        self.centres.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centres.is_empty()
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn centres(&self) -> &[f64] {
        &self.centres
    }

    pub fn centre(&self, bucket: usize) -> f64 {
        self.centres[bucket]
    }

    /// Bucket containing `z` (half-open on the right).
    pub fn bucket_of(&self, z: f64) -> usize {
        let i = self.boundaries.partition_point(|b| *b <= z);
        i.clamp(1, self.len()) - 1
    }

    /// The standard-normal prior: every bucket has frequency `2^(16 - p_bits)`.
    pub fn prior_cdf(&self) -> &QuantizedCdf {
        &self.prior
    }

    /// Mass of `N(mu, sigma^2)` in each bucket, computed from whichever tail is
    /// more accurate. Buckets far outside `mu +- 40 sigma` are exactly zero.
    pub fn posterior_masses(&self, mu: f64, sigma: f64) -> Result<Vec<f64>> {
        if !mu.is_finite() || !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::Numeric(format!(
                "posterior needs finite mu and sigma > 0, got N({mu}, {sigma}^2)"
            )));
        }
        let n = self.len();
        let lo = self
            .boundaries
            .partition_point(|b| *b < mu - WINDOW * sigma)
            .saturating_sub(1);
        let hi = self
            .boundaries
            .partition_point(|b| *b <= mu + WINDOW * sigma)
            .min(n);
        // (value, upper) where value is the lower tail for t < 0, else the upper tail.
        let tail = |b: f64| {
            let t = (b - mu) / sigma;
            if t < 0.0 {
                (normal_cdf(t), false)
            } else {
                (normal_sf(t), true)
            }
        };
        let mut masses = vec![0.0; n];
        let mut left = tail(self.boundaries[lo]);
        for (i, m) in masses.iter_mut().enumerate().take(hi).skip(lo) {
            let right = tail(self.boundaries[i + 1]);
            *m = match (left.1, right.1) {
                (false, false) => right.0 - left.0,
                (true, true) => left.0 - right.0,
                (false, true) => 1.0 - left.0 - right.0,
                (true, false) => 0.0,
            }
            .max(0.0);
            left = right;
        }
        Ok(masses)
    }

    /// Quantized `N(mu, sigma^2)` over the buckets.
    pub fn posterior_cdf(&self, mu: f64, sigma: f64) -> Result<QuantizedCdf> {
        quantize_masses(&self.posterior_masses(mu, sigma)?)
    }
}

/// Reserves frequency 1 per symbol, shares the remaining `2^16 - n` in
/// proportion to the normalized masses by floor, then hands leftover units to the
/// largest remainders (ties to the lower index).
pub fn quantize_masses(masses: &[f64]) -> Result<QuantizedCdf> {
    let n = masses.len();
    if n == 0 || n > TOTAL as usize {
        return Err(Error::Codec(format!("cannot quantize {n} symbols to {PRECISION} bits")));
    }
    if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return Err(Error::Numeric("masses must be finite and non-negative".into()));
    }
    let available = (TOTAL as usize - n) as f64;
    let total: f64 = masses.iter().sum();
    let mut freqs = vec![1u32; n];
    let mut assigned = 0u64;
    let mut remainders = Vec::new();
    if total > 0.0 {
        for (i, m) in masses.iter().enumerate() {
            let scaled = m / total * available;
            let whole = scaled.floor();
            freqs[i] += whole as u32;
            assigned += whole as u64;
            if scaled > whole {
                remainders.push((scaled - whole, i));
            }
        }
    }
    let mut deficit = (available as u64).saturating_sub(assigned) as usize;
    // (remainder desc, index asc) is a total order, so the selected set is unique.
    let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if deficit < remainders.len() {
        remainders.select_nth_unstable_by(deficit, order);
    }
    for (_, i) in remainders.iter().take(deficit) {
        freqs[*i] += 1;
    }
    deficit = deficit.saturating_sub(remainders.len());
    // Only reached when all mass underflowed or rounding left units over.
    let mut i = 0;
    while deficit > 0 {
        freqs[i % n] += 1;
        deficit -= 1;
        i += 1;
    }
    QuantizedCdf::from_frequencies(&freqs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Simpson's rule on the density from 0 to |x|.
    fn simpson_cdf(x: f64) -> f64 {
        let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * PI).sqrt();
        let steps = 2000;
        let h = x.abs() / steps as f64;
        let mut acc = pdf(0.0) + pdf(x.abs());
        for k in 1..steps {
            acc += pdf(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        let half = acc * h / 3.0;
        if x >= 0.0 {
            0.5 + half
        } else {
            0.5 - half
        }
    }

    #[test]
    fn cdf_matches_quadrature() {
        for i in 0..=160 {
            let x = -8.0 + 0.1 * i as f64;
            let err = (normal_cdf(x) - simpson_cdf(x)).abs();
            assert!(err < 1e-7, "x={x} err={err}");
            assert!((normal_cdf(x) + normal_sf(x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for k in 1..1000 {
            let p = k as f64 / 1000.0;
            let x = inverse_normal_cdf(p);
            assert!((normal_cdf(x) - p).abs() < 1e-14, "p={p}");
        }
        for e in 1..300 {
            let p = 10f64.powi(-e);
            let x = inverse_normal_cdf(p);
            assert!(((normal_cdf(x) - p) / p).abs() < 1e-12, "p={p}");
        }
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
        assert_eq!(inverse_normal_cdf(0.0), f64::NEG_INFINITY);
        assert!(inverse_normal_cdf(1.5).is_nan());
    }

    #[test]
    fn buckets_are_symmetric_and_ordered() {
        let b = GaussianBuckets::new(DEFAULT_P_BITS).unwrap();
        let n = b.len();
        assert_eq!(n, 4096);
        assert!(b.boundaries().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(b.boundaries()[n / 2], 0.0);
        for i in 0..n {
            assert_eq!(b.centre(i), -b.centre(n - 1 - i));
            assert!(b.boundaries()[i] < b.centre(i) && b.centre(i) < b.boundaries()[i + 1]);
            assert_eq!(b.bucket_of(b.centre(i)), i);
        }
        assert_eq!(b.bucket_of(f64::NEG_INFINITY), 0);
        assert_eq!(b.bucket_of(1e300), n - 1);
        assert!(b.prior_cdf().frequencies().iter().all(|f| *f == 16));
        assert!(GaussianBuckets::new(0).is_err());
        assert!(GaussianBuckets::new(16).is_err());
    }

    #[test]
    fn standard_posterior_is_the_prior() {
        for p_bits in [4, 8, 12] {
            let b = GaussianBuckets::new(p_bits).unwrap();
            assert_eq!(&b.posterior_cdf(0.0, 1.0).unwrap(), b.prior_cdf());
        }
    }

    #[test]
    fn concentrated_posterior_peaks_at_the_mean_bucket() {
        let b = GaussianBuckets::new(DEFAULT_P_BITS).unwrap();
        let mu = 0.37;
        let freqs = b.posterior_cdf(mu, 1e-3).unwrap().frequencies();
        let argmax = (0..freqs.len()).max_by_key(|i| (freqs[*i], usize::MAX - i)).unwrap();
        assert_eq!(argmax, b.bucket_of(mu));
        assert!(freqs[argmax] >= 1 << 13);
    }

    #[test]
    fn quantization_rules() {
        let cdf = quantize_masses(&[0.5, 0.5, 0.0]).unwrap();
        assert_eq!(cdf.frequencies(), vec![32768, 32767, 1]);
        let cdf = quantize_masses(&[0.0, 0.0]).unwrap();
        assert_eq!(cdf.frequencies(), vec![32768, 32768]);
        assert!(quantize_masses(&[]).is_err());
        assert!(quantize_masses(&[f64::NAN]).is_err());
        assert!(quantize_masses(&[-1.0, 2.0]).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        let b = GaussianBuckets::new(8).unwrap();
        assert!(b.posterior_cdf(0.0, 0.0).is_err());
        assert!(b.posterior_cdf(f64::NAN, 1.0).is_err());
        assert!(b.posterior_cdf(0.0, f64::INFINITY).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn posterior_tables_are_valid(
            mu in -20.0f64..20.0,
            log_sigma in -6.0f64..6.0,
            p_bits in 1u8..=MAX_P_BITS,
        ) {
            let b = GaussianBuckets::new(p_bits).unwrap();
            let sigma = 10f64.powf(log_sigma);
            let cdf = b.posterior_cdf(mu, sigma).unwrap();
            let freqs = cdf.frequencies();
            prop_assert_eq!(freqs.len(), b.len());
            prop_assert!(freqs.iter().all(|f| *f >= 1));
            prop_assert_eq!(freqs.iter().map(|f| *f as u64).sum::<u64>(), TOTAL as u64);
        }

        #[test]
        fn masses_sum_to_one(mu in -5.0f64..5.0, log_sigma in -3.0f64..2.0) {
            let b = GaussianBuckets::new(10).unwrap();
            let total: f64 = b.posterior_masses(mu, 10f64.powf(log_sigma)).unwrap().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "{}", total);
        }
    }
}
