//! Weight file: `"CVAE"`, version `u16`, depth `u8`, latent_dim `u16`, hidden `u32`,
//! channels `3 x u16`, encoder geometry `3 x (kernel, stride, padding)` as `u8`,
//! parameter count `u64`, parameters as `f32`, then a `u64` content hash of all
//! preceding bytes. Integers and floats are little-endian.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{CvaeConfig, CvaeModel};
use crate::error::{Error, Result};
use crate::nncore::{ConvGeometry, Tensor};

pub const MAGIC: &[u8; 4] = b"CVAE";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_BYTES: usize = 4 + 2 + 1 + 2 + 4 + 6 + 9 + 8;

/// First 8 bytes of SHA-256, little-endian.
pub fn content_hash(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("weight file truncated at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl CvaeConfig {
    /// Exact size of the weight file for this configuration.
    pub fn weight_file_bytes(&self) -> Result<usize> {
        Ok(HEADER_BYTES + 4 * self.param_count()? + 8)
    }
}

impl CvaeModel<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(HEADER_BYTES + 4 * self.param_count() + 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(c.depth);
        out.extend_from_slice(&(c.latent_dim as u16).to_le_bytes());
        out.extend_from_slice(&(c.hidden as u32).to_le_bytes());
        for ch in c.channels {
            out.extend_from_slice(&(ch as u16).to_le_bytes());
        }
        for g in c.encoder {
            out.extend_from_slice(&[g.kernel as u8, g.stride as u8, g.padding as u8]);
        }
        out.extend_from_slice(&(self.param_count() as u64).to_le_bytes());
        for p in self.params() {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let hash = content_hash(&out);
        out.extend_from_slice(&hash.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a CVAE weight file".into()));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "weight file version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let depth = r.u8()?;
        let latent_dim = r.u16()? as usize;
        let hidden = r.u32()? as usize;
        let mut channels = [0usize; 3];
        for c in &mut channels {
            *c = r.u16()? as usize;
        }
        let mut encoder = [ConvGeometry::new(0, 0, 0); 3];
        for g in &mut encoder {
            *g = ConvGeometry::new(r.u8()? as usize, r.u8()? as usize, r.u8()? as usize);
        }
        let config = CvaeConfig {
            depth,
            latent_dim,
            hidden,
            channels,
            encoder,
        };
        let expected = config
            .param_count()
            .map_err(|e| Error::Format(format!("invalid layer schedule: {e}")))?;
        let count = r.u64()?;
        if count != expected as u64 {
            return Err(Error::Format(format!(
                "header declares {count} parameters, schedule needs {expected}"
            )));
        }
        let body_end = r.pos + 4 * expected;
        if bytes.len() != body_end + 8 {
            return Err(Error::Format(format!(
                "weight file is {} bytes, expected {}",
                bytes.len(),
                body_end + 8
            )));
        }
        let stored = u64::from_le_bytes(bytes[body_end..].try_into().unwrap());
        if stored != content_hash(&bytes[..body_end]) {
            return Err(Error::Format("weight file hash mismatch".into()));
        }
        let mut params = Vec::new();
        for shape in CvaeModel::<f32>::zeros(config)?.params().iter().map(|p| p.shape().to_vec()) {
            let n: usize = shape.iter().product();
            let data = r
                .take(4 * n)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            params.push(Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?);
        }
        CvaeModel::from_params(config, params)
    }

    /// Hash stored in the trailer of [`Self::to_bytes`].
    pub fn hash(&self) -> u64 {
        let bytes = self.to_bytes();
        content_hash(&bytes[..bytes.len() - 8])
    }

    /// Size of the serialized weight file.
    pub fn decoder_size_bytes(&self) -> usize {
        HEADER_BYTES + 4 * self.param_count() + 8
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
