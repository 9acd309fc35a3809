use crate::error::{Error, Result};

/// Probability precision in bits; every table sums to `2^PRECISION`.
pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;

/// Cumulative frequency table over `n` symbols with total `2^16`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedCdf {
    /// `cumulative[s]` is the start of symbol `s`; the last entry is `TOTAL`.
    cumulative: Vec<u32>,
}

impl QuantizedCdf {
    pub fn from_frequencies(freqs: &[u32]) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::Codec("distribution has no symbols".into()));
        }
        let mut cumulative = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u64;
        cumulative.push(0);
        for (s, f) in freqs.iter().enumerate() {
            if *f == 0 {
                return Err(Error::Codec(format!("symbol {s} has zero frequency")));
            }
            acc += *f as u64;
            if acc > TOTAL as u64 {
                break;
            }
            cumulative.push(acc as u32);
        }
        if acc != TOTAL as u64 {
            return Err(Error::Codec(format!(
                "frequencies sum to {acc}, expected {TOTAL}"
            )));
        }
        Ok(Self { cumulative })
    }

    /// Uniform table; `n` must divide `2^16`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 || TOTAL as usize % n != 0 {
            return Err(Error::Codec(format!("cannot split {TOTAL} uniformly into {n}")));
        }
        let f = TOTAL / n as u32;
        Ok(Self {
            cumulative: (0..=n as u32).map(|i| i * f).collect(),
        })
    }

    pub fn symbols(&self) -> usize {
        self.cumulative.len() - 1
    }

    pub fn frequency(&self, symbol: usize) -> u32 {
        self.cumulative[symbol + 1] - self.cumulative[symbol]
    }

    pub fn start(&self, symbol: usize) -> u32 {
        self.cumulative[symbol]
    }

    pub fn frequencies(&self) -> Vec<u32> {
        self.cumulative.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cumulative
    }

    /// The symbol whose interval contains `slot < 2^16`.
    pub fn symbol_for(&self, slot: u32) -> usize {
        self.cumulative.partition_point(|c| *c <= slot) - 1
    }

    /// Ideal code length of `symbol` in bits.
    pub fn bits(&self, symbol: usize) -> f64 {
        PRECISION as f64 - (self.frequency(symbol) as f64).log2()
    }
}

/// Two-symbol table for `P(x = 1) = p`, with `p` clamped to `[2^-16, 1 - 2^-16]`.
pub fn bernoulli_cdf(p: f64) -> Result<QuantizedCdf> {
    if p.is_nan() {
        return Err(Error::Numeric("Bernoulli probability is NaN".into()));
    }
    let eps = 1.0 / TOTAL as f64;
    let p = p.clamp(eps, 1.0 - eps);
    let one = ((p * TOTAL as f64).round() as u32).clamp(1, TOTAL - 1);
    Ok(QuantizedCdf {
        cumulative: vec![0, TOTAL - one, TOTAL],
    })
}
