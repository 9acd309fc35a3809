//! Container: `"BBPC"`, version `u16`, depth `u8`, p_bits `u8`, latent_dim `u16`,
//! batch `u32`, total_points `u64`, seed `u64`, seed word count `u32`, model hash
//! `u64`, payload length `u32`, then the payload words. All little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 4] = b"BBPC";
pub const CONTAINER_VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 46;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Container {
    pub depth: u8,
    pub p_bits: u8,
    pub latent_dim: u16,
    pub batch: u32,
    pub total_points: u64,
    pub seed: u64,
    pub seed_words: u32,
    pub model_hash: u64,
    /// Flushed message: stack words bottom to top, then the head as (low, high).
    pub payload: Vec<u32>,
}

impl Container {
    pub fn byte_len(&self) -> usize {
        HEADER_BYTES + 4 * self.payload.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.push(self.depth);
        out.push(self.p_bits);
        out.extend_from_slice(&self.latent_dim.to_le_bytes());
        out.extend_from_slice(&self.batch.to_le_bytes());
        out.extend_from_slice(&self.total_points.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.seed_words.to_le_bytes());
        out.extend_from_slice(&self.model_hash.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        for w in &self.payload {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_BYTES {
            return Err(Error::Format(format!(
                "container is {} bytes, shorter than its header",
                bytes.len()
            )));
        }
        if &bytes[..4] != CONTAINER_MAGIC {
            return Err(Error::Format("not a BBPC container".into()));
        }
        let le = |range: std::ops::Range<usize>| {
            let mut buf = [0u8; 8];
            buf[..range.len()].copy_from_slice(&bytes[range]);
            u64::from_le_bytes(buf)
        };
        let version = le(4..6) as u16;
        if version != CONTAINER_VERSION {
            return Err(Error::Format(format!(
                "container version {version}, expected {CONTAINER_VERSION}"
            )));
        }
        let words = le(42..46) as usize;
        if bytes.len() != HEADER_BYTES + 4 * words {
            return Err(Error::Format(format!(
                "header declares {words} payload words but {} bytes follow",
                bytes.len() - HEADER_BYTES
            )));
        }
        let container = Self {
            depth: bytes[6],
            p_bits: bytes[7],
            latent_dim: le(8..10) as u16,
            batch: le(10..14) as u32,
            total_points: le(14..22),
            seed: le(22..30),
            seed_words: le(30..34) as u32,
            model_hash: le(34..42),
            payload: bytes[HEADER_BYTES..]
                .chunks_exact(4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        };
        if container.batch == 0 || container.payload.len() < 2 {
            return Err(Error::Format("container holds no message".into()));
        }
        Ok(container)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
