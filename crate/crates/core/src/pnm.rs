//! Binary PPM (P6) and PGM (P5) images, 8 or 16 bits per sample.

use std::path::Path;

use crate::error::{corrupt, Error, Result};
use crate::hierarchy::TensorMap;
use crate::mask::{BinaryMask, ProbabilityMask};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Interleaved samples in raster order.
    pub samples: Vec<u16>,
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(corrupt("image header truncated")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    std::str::from_utf8(header_token(bytes, pos)?)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| corrupt("bad number in image header"))
}

impl Pnm {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let channels = match header_token(bytes, &mut pos)? {
            b"P6" => 3,
            b"P5" => 1,
            _ => return Err(corrupt("only binary PPM (P6) and PGM (P5) are supported")),
        };
        let width = header_number(bytes, &mut pos)?;
        let height = header_number(bytes, &mut pos)?;
        let maxval = header_number(bytes, &mut pos)?;
        if width == 0 || height == 0 || !(1..=65535).contains(&maxval) {
            return Err(corrupt("image header out of range"));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let wide = maxval > 255;
        let count = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| corrupt("image dimensions overflow"))?;
        let need = count * if wide { 2 } else { 1 };
        let raster = bytes
            .get(pos..)
            .filter(|r| r.len() >= need)
            .ok_or_else(|| corrupt("image raster truncated"))?;
        let samples: Vec<u16> = if wide {
            raster[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        } else {
            raster[..need].iter().map(|&b| b as u16).collect()
        };
        if samples.iter().any(|&s| s as usize > maxval) {
            return Err(corrupt("sample exceeds maxval"));
        }
        Ok(Self {
            channels,
            width,
            height,
            maxval: maxval as u16,
            samples,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval > 255 {
            for s in &self.samples {
                out.extend_from_slice(&s.to_be_bytes());
            }
        } else {
            out.extend(self.samples.iter().map(|&s| s as u8));
        }
        out
    }

    /// Planar tensor with the raw sample values.
    pub fn to_tensor(&self) -> Result<TensorMap> {
        let (c, h, w) = (self.channels, self.height, self.width);
        let mut data = vec![0f32; c * h * w];
        for (i, &s) in self.samples.iter().enumerate() {
            let (p, ch) = (i / c, i % c);
            data[ch * h * w + p] = s as f32;
        }
        TensorMap::new(c, h, w, data)
    }

    /// 8-bit image from a planar tensor; values are rounded and clamped.
    pub fn from_tensor(t: &TensorMap) -> Result<Self> {
        let (c, h, w) = t.shape();
        if c != 1 && c != 3 {
            return Err(Error::Config(format!("cannot store {c} channels as PNM")));
        }
        let mut samples = Vec::with_capacity(c * h * w);
        for p in 0..h * w {
            for ch in 0..c {
                samples.push(t.data()[ch * h * w + p].round().clamp(0.0, 255.0) as u16);
            }
        }
        Ok(Self {
            channels: c,
            width: w,
            height: h,
            maxval: 255,
            samples,
        })
    }

    fn require_gray(&self) -> Result<()> {
        if self.channels != 1 {
            return Err(Error::Config("expected a grayscale (PGM) image".into()));
        }
        Ok(())
    }

    /// Nonzero samples are blade.
    pub fn to_mask(&self) -> Result<BinaryMask> {
        self.require_gray()?;
        BinaryMask::new(self.height, self.width, self.samples.iter().map(|&s| (s != 0) as u8).collect())
    }

    pub fn from_mask(m: &BinaryMask) -> Self {
        Self {
            channels: 1,
            width: m.width(),
            height: m.height(),
            maxval: 255,
            samples: m.to_gray().into_iter().map(u16::from).collect(),
        }
    }

    /// Samples scaled by `maxval`, so both 8- and 16-bit maps are accepted.
    pub fn to_probability(&self) -> Result<ProbabilityMask> {
        self.require_gray()?;
        let m = self.maxval as f32;
        ProbabilityMask::new(self.height, self.width, self.samples.iter().map(|&s| s as f32 / m).collect())
    }

    pub fn from_probability(p: &ProbabilityMask) -> Self {
        Self {
            channels: 1,
            width: p.width(),
            height: p.height(),
            maxval: 65535,
            samples: p.to_u16(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}
