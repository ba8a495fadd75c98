//! Binary particle checkpoints and the run manifest.
//!
//! Record layout (little-endian): step `u64`, particle count `u64`, then per
//! particle position `f64 x 3`, velocity `f64 x 3`, source index `u32`
//! (`u32::MAX` for particles without a source Gaussian).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{MaterialParams, SimConfig, SimError};

pub const NO_SOURCE: u32 = u32::MAX;
const RECORD_BYTES: usize = 6 * 8 + 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub positions: Vec<Vector3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    pub sources: Vec<Option<u32>>,
}

impl Checkpoint {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.len() * RECORD_BYTES);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for ((x, v), s) in self.positions.iter().zip(&self.velocities).zip(&self.sources) {
            for c in x.iter().chain(v.iter()) {
                out.extend_from_slice(&c.to_le_bytes());
            }
            out.extend_from_slice(&s.unwrap_or(NO_SOURCE).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SimError> {
        let bad = |m: String| SimError::Checkpoint(m);
        if bytes.len() < 16 {
            return Err(bad(format!("{} bytes is shorter than the 16-byte header", bytes.len())));
        }
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let step = u64_at(0);
        let count = u64_at(8) as usize;
        let expected = count
            .checked_mul(RECORD_BYTES)
            .and_then(|n| n.checked_add(16))
            .ok_or_else(|| bad(format!("particle count {count} overflows")))?;
        if bytes.len() != expected {
            return Err(bad(format!("expected {expected} bytes for {count} particles, found {}", bytes.len())));
        }
        let mut cp = Checkpoint {
            step,
            positions: Vec::with_capacity(count),
            velocities: Vec::with_capacity(count),
            sources: Vec::with_capacity(count),
        };
        for i in 0..count {
            let o = 16 + i * RECORD_BYTES;
            cp.positions.push(Vector3::new(f64_at(o), f64_at(o + 8), f64_at(o + 16)));
            cp.velocities.push(Vector3::new(f64_at(o + 24), f64_at(o + 32), f64_at(o + 40)));
            let s = u32::from_le_bytes(bytes[o + 48..o + 52].try_into().unwrap());
            cp.sources.push((s != NO_SOURCE).then_some(s));
        }
        Ok(cp)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), SimError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, SimError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

pub fn checkpoint_file_name(step: u64) -> String {
    format!("checkpoint_{step:08}.bin")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub step: u64,
    pub time: f64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimManifest {
    pub config: SimConfig,
    pub material: MaterialParams,
    pub dt: f64,
    pub particles: usize,
    pub rejected: usize,
    pub escaped: usize,
    pub checkpoints: Vec<CheckpointEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            step: 42,
            positions: vec![Vector3::new(1.0, -2.5, 3.25), Vector3::new(0.1, 0.2, 0.3)],
            velocities: vec![Vector3::new(0.0, 0.0, -9.8), Vector3::new(1e-300, -0.0, 7.0)],
            sources: vec![Some(17), None],
        }
    }

    #[test]
    fn round_trip() {
        let cp = sample();
        let bytes = cp.to_bytes();
        assert_eq!(bytes.len(), 16 + 2 * 52);
        assert_eq!(&bytes[0..8], &42u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &1.0f64.to_le_bytes());
        assert_eq!(&bytes[64..68], &17u32.to_le_bytes());
        assert_eq!(&bytes[116..120], &u32::MAX.to_le_bytes());
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), cp);
    }

    #[test]
    fn truncated_is_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(checkpoint_file_name(42));
        sample().write_file(&path).unwrap();
        assert_eq!(Checkpoint::read_file(&path).unwrap(), sample());
        assert!(path.ends_with("checkpoint_00000042.bin"));
    }
}
