use super::cdf::{QuantizedCdf, PRECISION};
use crate::error::{Error, Result};

const HEAD_MIN: u64 = 1 << 32;

/// rANS message: a head register in `[2^32, 2^64)` and a word stack whose last
/// element is the most recently emitted word.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AnsState {
    head: u64,
    stack: Vec<u32>,
}

impl Default for AnsState {
    fn default() -> Self {
        Self::new()
    }
}

impl AnsState {
    /// The minimal state: head `2^32`, empty stack.
    pub fn new() -> Self {
        Self {
            head: HEAD_MIN,
            stack: Vec::new(),
        }
    }

    /// Head from the first two words (top bit forced so the head is valid), the
    /// remaining words on the stack in order. Accounts `64 + 32 * (k - 2)` bits for `k >= 2`.
    pub fn from_seed_words(words: &[u32]) -> Self {
        match words {
            [] => Self::new(),
            [hi] => Self {
                head: ((*hi | 0x8000_0000) as u64) << 32,
                stack: Vec::new(),
            },
            [hi, lo, rest @ ..] => Self {
                head: (((*hi | 0x8000_0000) as u64) << 32) | *lo as u64,
                stack: rest.to_vec(),
            },
        }
    }

    pub fn head(&self) -> u64 {
        self.head
    }

    pub fn stack(&self) -> &[u32] {
        &self.stack
    }

    /// Bits needed to store the state: `32 * len(flush())`.
    pub fn total_bits(&self) -> u64 {
        32 * (self.stack.len() as u64 + 2)
    }

    /// Fractional message length `32 * stack + log2(head)`, which changes by the ideal
    /// code length on push and pop.
    pub fn information_bits(&self) -> f64 {
        32.0 * self.stack.len() as f64 + (self.head as f64).log2()
    }

    pub fn push(&mut self, symbol: usize, cdf: &QuantizedCdf) -> Result<()> {
        if symbol >= cdf.symbols() {
            return Err(Error::Codec(format!(
                "symbol {symbol} outside a {}-symbol distribution",
                cdf.symbols()
            )));
        }
        let freq = cdf.frequency(symbol) as u64;
        let start = cdf.start(symbol) as u64;
        if self.head >= freq << (64 - PRECISION) {
            self.stack.push(self.head as u32);
            self.head >>= 32;
        }
        self.head = ((self.head / freq) << PRECISION) + (self.head % freq) + start;
        Ok(())
    }

    /// Decodes one symbol; on error the state is left untouched.
    pub fn pop(&mut self, cdf: &QuantizedCdf) -> Result<usize> {
        let mask = (1u64 << PRECISION) - 1;
        let slot = (self.head & mask) as u32;
        let symbol = cdf.symbol_for(slot);
        let freq = cdf.frequency(symbol) as u64;
        let start = cdf.start(symbol) as u64;
        let head = freq * (self.head >> PRECISION) + slot as u64 - start;
        if head < HEAD_MIN {
            let word = self.stack.pop().ok_or(Error::MessageExhausted)?;
            self.head = (head << 32) | word as u64;
        } else {
            self.head = head;
        }
        Ok(symbol)
    }

    /// Stack words bottom to top, then the head as (low, high).
    pub fn flush(&self) -> Vec<u32> {
        let mut words = Vec::with_capacity(self.stack.len() + 2);
        words.extend_from_slice(&self.stack);
        words.push(self.head as u32);
        words.push((self.head >> 32) as u32);
        words
    }

    pub fn restore(words: &[u32]) -> Result<Self> {
        let [stack @ .., lo, hi] = words else {
            return Err(Error::Codec(format!(
                "a message needs at least 2 words, got {}",
                words.len()
            )));
        };
        let head = ((*hi as u64) << 32) | *lo as u64;
        if head < HEAD_MIN {
            return Err(Error::Codec(format!("invalid head {head:#x}")));
        }
        Ok(Self {
            head,
            stack: stack.to_vec(),
        })
    }
}
