//! Binary network checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic          8 bytes  "PIRLQNET"
//! version        u32      = 1
//! config hash    32 bytes (all zero when unknown)
//! layer count    u32      = number of sizes
//! sizes          u32 × layer count
//! param count    u64
//! params         f64 × param count, per layer row-major weights then biases
//! ```
//!
//! Floats are stored as raw bits, so a load reproduces the saved network
//! bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::QNetwork;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PIRLQNET";
pub const FORMAT_VERSION: u32 = 1;

pub type ConfigHash = [u8; 32];

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: ConfigHash,
    pub net: QNetwork,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let sizes = self.net.sizes();
        let params = self.net.params();
        let mut out = Vec::with_capacity(56 + 4 * sizes.len() + 8 * params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for s in sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a network checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (this build reads {FORMAT_VERSION})"
            )));
        }
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(r.take(32)?);
        let count = r.u32()? as usize;
        if !(2..=64).contains(&count) {
            return Err(Error::Checkpoint(format!("implausible layer count {count}")));
        }
        let sizes = (0..count).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let nparams = r.u64()? as usize;
        if nparams > (bytes.len() - r.pos) / 8 {
            return Err(Error::Checkpoint("truncated parameter block".into()));
        }
        let params = (0..nparams)
            .map(|_| r.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())))
            .collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let net = QNetwork::from_parts(sizes, params).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Self { config_hash, net })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips_bit_exactly(seed in any::<u64>(), hidden in 1usize..40, hash in any::<[u8; 32]>()) {
            let net = QNetwork::glorot(&[3, hidden, hidden, 5], &mut stream_rng(seed, 0));
            let ckpt = Checkpoint { config_hash: hash, net };
            let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
            prop_assert_eq!(back.config_hash, ckpt.config_hash);
            prop_assert_eq!(back.net.sizes(), ckpt.net.sizes());
            let same_bits = back.net.params().iter().zip(ckpt.net.params()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same_bits);
        }
    }

    #[test]
    fn rejects_wrong_version_and_truncation() {
        let ckpt = Checkpoint { config_hash: [7; 32], net: QNetwork::zeros(&[3, 4, 5]) };
        let mut bytes = ckpt.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        bytes[8] = 2;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
        assert!(Checkpoint::from_bytes(b"NOTANET!").is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.qnet");
        let ckpt = Checkpoint { config_hash: [1; 32], net: QNetwork::glorot(&[3, 32, 32, 32, 5], &mut stream_rng(9, 0)) };
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    }
}
