//! UQV1: a minimal little-endian container for volumes.
//!
//! ```text
//! offset size  field
//!      0    4  magic "UQV1"
//!      4    2  version (u16, = 1)
//!      6    1  dtype (0 = f32, 1 = u8 label)
//!      7    1  flags (= 0)
//!      8   12  dims x, y, z (u32 each)
//!     20    4  channels (u32)
//!     24   12  spacing x, y, z in mm (f32 each)
//!     36    .  payload, channel-slowest then z, y, x-fastest
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio;
use crate::uncertainty::{ScalarVolume, UncertaintyMap};
use crate::volume::{GridMeta, LabelVolume, ProbVolume};

pub const MAGIC: &[u8; 4] = b"UQV1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    U8 = 1,
}

impl DType {
    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::U8),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A decoded UQV1 file before any semantic validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawVolume {
    pub meta: GridMeta,
    pub payload: Payload,
}

impl RawVolume {
    pub fn encode(&self) -> Vec<u8> {
        let m = &self.meta;
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len() * self.payload.dtype().width());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.payload.dtype() as u8);
        out.push(0);
        for d in m.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(m.channels as u32).to_le_bytes());
        for s in m.spacing {
            out.extend_from_slice(&(s as f32).to_le_bytes());
        }
        match &self.payload {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    /// `origin` is only used in error messages.
    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(origin, msg);
        if bytes.len() < HEADER_LEN {
            return Err(bad("truncated header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(bad("bad magic, expected UQV1"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::format(origin, format!("unsupported version {version}")));
        }
        let dtype = DType::from_code(bytes[6])
            .ok_or_else(|| Error::format(origin, format!("unknown dtype {}", bytes[6])))?;
        if bytes[7] != 0 {
            return Err(Error::format(origin, format!("unknown flags {:#x}", bytes[7])));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
        let dims = [u32_at(8), u32_at(12), u32_at(16)];
        let channels = u32_at(20);
        let spacing = [f32_at(24), f32_at(28), f32_at(32)];
        let meta = GridMeta::new(dims, spacing, channels)
            .map_err(|e| Error::format(origin, e.to_string()))?;

        let body = &bytes[HEADER_LEN..];
        let expected = meta
            .len()
            .checked_mul(dtype.width())
            .ok_or_else(|| bad("grid size overflows"))?;
        if body.len() != expected {
            return Err(Error::format(
                origin,
                format!("payload is {} bytes, header implies {expected}", body.len()),
            ));
        }
        let payload = match dtype {
            DType::F32 => Payload::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U8 => Payload::U8(body.to_vec()),
        };
        Ok(RawVolume { meta, payload })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fsio::write_atomic(path, &self.encode())
    }

    fn into_f32(self, origin: &Path) -> Result<(GridMeta, Vec<f32>)> {
        match self.payload {
            Payload::F32(v) => Ok((self.meta, v)),
            Payload::U8(_) => Err(Error::format(origin, "expected float payload, found labels")),
        }
    }
}

pub fn read_prob_volume(path: &Path) -> Result<ProbVolume> {
    let (meta, data) = RawVolume::read(path)?.into_f32(path)?;
    ProbVolume::new(meta, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_prob_volume(path: &Path, vol: &ProbVolume) -> Result<()> {
    RawVolume {
        meta: vol.meta().clone(),
        payload: Payload::F32(vol.data().to_vec()),
    }
    .write(path)
}

pub fn read_label_volume(path: &Path) -> Result<LabelVolume> {
    let raw = RawVolume::read(path)?;
    match raw.payload {
        Payload::U8(v) => LabelVolume::new(raw.meta, v).map_err(|e| Error::format(path, e.to_string())),
        Payload::F32(_) => Err(Error::format(path, "expected label payload, found floats")),
    }
}

pub fn write_label_volume(path: &Path, vol: &LabelVolume) -> Result<()> {
    RawVolume {
        meta: vol.meta().clone(),
        payload: Payload::U8(vol.data().to_vec()),
    }
    .write(path)
}

/// Heatmaps do not carry their sample count on disk; the caller supplies it.
pub fn read_uncertainty_map(path: &Path, n_samples: usize) -> Result<UncertaintyMap> {
    let (meta, data) = RawVolume::read(path)?.into_f32(path)?;
    UncertaintyMap::new(meta, data, n_samples).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_uncertainty_map(path: &Path, map: &UncertaintyMap) -> Result<()> {
    RawVolume {
        meta: map.meta().clone(),
        payload: Payload::F32(map.data().to_vec()),
    }
    .write(path)
}

pub fn read_scalar_volume(path: &Path) -> Result<ScalarVolume> {
    let (meta, data) = RawVolume::read(path)?.into_f32(path)?;
    ScalarVolume::new(meta, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_scalar_volume(path: &Path, vol: &ScalarVolume) -> Result<()> {
    RawVolume {
        meta: vol.meta().clone(),
        payload: Payload::F32(vol.data().to_vec()),
    }
    .write(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn origin() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn header_layout_is_fixed() {
        let meta = GridMeta::new([2, 3, 4], [1.0, 0.5, 2.0], 1).unwrap();
        let raw = RawVolume {
            meta,
            payload: Payload::U8((0..24).collect()),
        };
        let b = raw.encode();
        assert_eq!(b.len(), HEADER_LEN + 24);
        assert_eq!(&b[0..4], b"UQV1");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(b[6], 1);
        assert_eq!(b[7], 0);
        assert_eq!(&b[8..12], &[2, 0, 0, 0]);
        assert_eq!(&b[16..20], &[4, 0, 0, 0]);
        assert_eq!(&b[20..24], &[1, 0, 0, 0]);
        assert_eq!(&b[28..32], &0.5f32.to_le_bytes());
        assert_eq!(b[HEADER_LEN + 23], 23);
    }

    #[test]
    fn rejects_bad_magic_version_and_length() {
        let meta = GridMeta::cube(2, 1).unwrap();
        let good = RawVolume {
            meta,
            payload: Payload::F32(vec![0.25; 8]),
        }
        .encode();
        let mut b = good.clone();
        b[0] = b'X';
        assert!(RawVolume::decode(&b, origin()).is_err());
        let mut b = good.clone();
        b[4] = 2;
        assert!(RawVolume::decode(&b, origin()).unwrap_err().to_string().contains("version"));
        let mut b = good.clone();
        b[6] = 9;
        assert!(RawVolume::decode(&b, origin()).is_err());
        assert!(RawVolume::decode(&good[..good.len() - 1], origin()).is_err());
        assert!(RawVolume::decode(&good[..10], origin()).is_err());
        assert!(RawVolume::decode(&good, origin()).is_ok());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            dims in prop::array::uniform3(1usize..5),
            channels in 1usize..4,
            seed in any::<u32>(),
        ) {
            let meta = GridMeta::new(dims, [1.0, 1.5, 0.75], channels).unwrap();
            let values: Vec<f32> = (0..meta.len())
                .map(|i| ((i as u32).wrapping_mul(2654435761).wrapping_add(seed) as f32) / u32::MAX as f32)
                .collect();
            let raw = RawVolume { meta, payload: Payload::F32(values) };
            let back = RawVolume::decode(&raw.encode(), origin()).unwrap();
            prop_assert_eq!(back, raw);
        }
    }
}
