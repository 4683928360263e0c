//! RMLC coded-image container.
//!
//! ```text
//! "RMLC" | u8 version | u8 mode | u32 width | u32 height | u16 patch size
//! u16 blade model | u16 background model
//! [u64 seed | u32 patches per run]          lossless modes only
//! u32 mask length | mask bytes
//! u32 stream count | u32 length per stream | streams
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! All integers are little-endian. A `patches per run` of zero marks the
//! single PRNG-seeded chain.

use crate::error::{corrupt, Result};

pub const CONTAINER_MAGIC: &[u8; 4] = b"RMLC";
pub const CONTAINER_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Blade and background both lossy, with different models.
    LossyLossy = 0,
    /// Lossy background, bits-back lossless blade.
    LossyLossless = 1,
    /// Whole image with one lossy model.
    SingleLossy = 2,
    /// Whole image with the lossless model.
    SingleLossless = 3,
}

impl Mode {
    pub fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            0 => Mode::LossyLossy,
            1 => Mode::LossyLossless,
            2 => Mode::SingleLossy,
            3 => Mode::SingleLossless,
            _ => return Err(corrupt(format!("unknown container mode {v}"))),
        })
    }

    pub fn is_lossless(self) -> bool {
        matches!(self, Mode::LossyLossless | Mode::SingleLossless)
    }

    pub fn has_mask(self) -> bool {
        matches!(self, Mode::LossyLossy | Mode::LossyLossless)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedContainer {
    pub mode: Mode,
    pub width: u32,
    pub height: u32,
    pub patch_size: u16,
    pub blade_model: u16,
    pub background_model: u16,
    /// Meaningful only in lossless modes.
    pub seed: u64,
    pub patches_per_run: u32,
    pub mask: Vec<u8>,
    pub streams: Vec<Vec<u8>>,
}

impl CodedContainer {
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.streams.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(48 + self.mask.len() + 4 * self.streams.len() + payload);
        out.extend_from_slice(CONTAINER_MAGIC);
        out.push(CONTAINER_VERSION);
        out.push(self.mode as u8);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.patch_size.to_le_bytes());
        out.extend_from_slice(&self.blade_model.to_le_bytes());
        out.extend_from_slice(&self.background_model.to_le_bytes());
        if self.mode.is_lossless() {
            out.extend_from_slice(&self.seed.to_le_bytes());
            out.extend_from_slice(&self.patches_per_run.to_le_bytes());
        }
        out.extend_from_slice(&(self.mask.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.mask);
        out.extend_from_slice(&(self.streams.len() as u32).to_le_bytes());
        for s in &self.streams {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        }
        for s in &self.streams {
            out.extend_from_slice(s);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 4 || &bytes[..4] != CONTAINER_MAGIC {
            return Err(corrupt("not an RMLC container"));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body).to_le_bytes() != crc {
            return Err(corrupt("container checksum mismatch"));
        }
        let mut r = Cursor { data: body, pos: 4 };
        let version = r.u8()?;
        if version != CONTAINER_VERSION {
            return Err(corrupt(format!("unsupported container version {version}")));
        }
        let mode = Mode::from_u8(r.u8()?)?;
        let width = r.u32()?;
        let height = r.u32()?;
        let patch_size = r.u16()?;
        let blade_model = r.u16()?;
        let background_model = r.u16()?;
        if width == 0 || height == 0 || patch_size == 0 {
            return Err(corrupt("container declares an empty image or patch"));
        }
        let (seed, patches_per_run) = if mode.is_lossless() {
            (r.u64()?, r.u32()?)
        } else {
            (0, 0)
        };
        let mask_len = r.u32()? as usize;
        if !mode.has_mask() && mask_len != 0 {
            return Err(corrupt("single-region container carries a mask"));
        }
        let mask = r.take(mask_len)?.to_vec();
        let count = r.u32()? as usize;
        if count > r.remaining() / 4 {
            return Err(corrupt("stream table larger than the container"));
        }
        let lens: Vec<usize> = (0..count).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        let total: u64 = lens.iter().map(|&l| l as u64).sum();
        if total != r.remaining() as u64 {
            return Err(corrupt("stream lengths do not add up to the container size"));
        }
        let streams = lens.iter().map(|&l| r.take(l).map(<[u8]>::to_vec)).collect::<Result<_>>()?;
        Ok(Self {
            mode,
            width,
            height,
            patch_size,
            blade_model,
            background_model,
            seed,
            patches_per_run,
            mask,
            streams,
        })
    }

    /// Container size minus the stream payload, in bytes.
    pub fn overhead_bytes(&self) -> usize {
        self.to_bytes().len() - self.streams.iter().map(Vec::len).sum::<usize>()
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(corrupt("container truncated"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("length checked")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("length checked")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("length checked")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(mode: Mode) -> CodedContainer {
        CodedContainer {
            mode,
            width: 100,
            height: 60,
            patch_size: 32,
            blade_model: 2,
            background_model: 1,
            seed: if mode.is_lossless() { 0xdead_beef } else { 0 },
            patches_per_run: if mode.is_lossless() { 2 } else { 0 },
            mask: if mode.has_mask() { vec![3, 1, 2] } else { vec![] },
            streams: vec![vec![1, 2, 3], vec![], vec![9; 40]],
        }
    }

    #[test]
    fn round_trips_every_mode() {
        for mode in [Mode::LossyLossy, Mode::LossyLossless, Mode::SingleLossy, Mode::SingleLossless] {
            let c = sample(mode);
            let bytes = c.to_bytes();
            assert_eq!(CodedContainer::from_bytes(&bytes).unwrap(), c);
            assert_eq!(c.overhead_bytes() + 43, bytes.len());
        }
    }

    #[test]
    fn header_layout() {
        let b = sample(Mode::LossyLossless).to_bytes();
        assert_eq!(&b[..4], b"RMLC");
        assert_eq!(b[4], CONTAINER_VERSION);
        assert_eq!(b[5], 1);
        assert_eq!(u32::from_le_bytes(b[6..10].try_into().unwrap()), 100);
        assert_eq!(u32::from_le_bytes(b[10..14].try_into().unwrap()), 60);
        assert_eq!(u16::from_le_bytes([b[14], b[15]]), 32);
        assert_eq!(u64::from_le_bytes(b[20..28].try_into().unwrap()), 0xdead_beef);
    }

    #[test]
    fn damage_is_reported_as_corruption() {
        let bytes = sample(Mode::LossyLossless).to_bytes();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let mut b = bytes.clone();
            if rng.gen_bool(0.5) {
                b.truncate(rng.gen_range(0..b.len()));
            } else {
                let i = rng.gen_range(0..b.len());
                b[i] ^= 1 << rng.gen_range(0..8);
            }
            assert!(matches!(CodedContainer::from_bytes(&b), Err(Error::Corrupt(_))));
        }
    }
}
