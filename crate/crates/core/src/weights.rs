//! RMLW weight files shared with the trainer.
//!
//! ```text
//! "RMLW" | u8 version | u8 kind (0 bitswap, 1 hyperprior) | u8 depth
//! u16 patch size | u16 transform count
//! per transform: u16 layer count, then per layer:
//!     u8 layer kind | u16 dims... | u32 weight count | f32 weights...
//! trailer, bitswap:    u8 image channels | u8 grid bits | f32 grid lo | f32 grid hi
//! trailer, hyperprior: f32 quality | u16 cdf count,
//!                      per cdf: u32 knot count | f32 knots... | f32 values...
//! ```
//!
//! Layer kinds and their dims: 0 conv and 1 transposed conv (in, out,
//! kernel, stride, padding); 2 ELU (none); 3 EASN (channels); 4 residual
//! block (channels, kernel); 5 squeeze and 6 unsqueeze (factor). Bit-swap
//! files list the `depth` inference transforms followed by the `depth`
//! generative ones; hyperprior files list analysis, synthesis,
//! hyper-analysis and hyper-synthesis. All integers are little-endian.

use std::path::Path;

use crate::discretize::{BinGrid, TabulatedCdf};
use crate::error::{corrupt, Error, Result};
use crate::hierarchy::{HierarchicalModel, HyperpriorModel, LayerSpec};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"RMLW";
pub const WEIGHTS_VERSION: u8 = 1;

const KIND_BITSWAP: u8 = 0;
const KIND_HYPERPRIOR: u8 = 1;

#[derive(Debug, Clone)]
pub enum ModelFile {
    Bitswap(HierarchicalModel),
    Hyperprior(HyperpriorModel),
}

impl ModelFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        match self {
            ModelFile::Bitswap(m) => save_bitswap(m),
            ModelFile::Hyperprior(m) => save_hyperprior(m),
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u16(&mut self, v: usize) -> Result<()> {
        let v = u16::try_from(v).map_err(|_| Error::Config(format!("{v} does not fit in 16 bits")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Config(format!("{v} does not fit in 32 bits")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn header(&mut self, kind: u8, depth: usize, patch_size: usize, transforms: usize) -> Result<()> {
        self.0.extend_from_slice(WEIGHTS_MAGIC);
        self.u8(WEIGHTS_VERSION);
        self.u8(kind);
        self.u8(u8::try_from(depth).map_err(|_| Error::Config("depth exceeds 255".into()))?);
        self.u16(patch_size)?;
        self.u16(transforms)
    }

    fn transform(&mut self, layers: &[LayerSpec]) -> Result<()> {
        self.u16(layers.len())?;
        for layer in layers {
            let (kind, dims): (u8, Vec<usize>) = match *layer {
                LayerSpec::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    padding,
                    ..
                } => (0, vec![in_ch, out_ch, kernel, stride, padding]),
                LayerSpec::ConvTranspose {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    padding,
                    ..
                } => (1, vec![in_ch, out_ch, kernel, stride, padding]),
                LayerSpec::Elu => (2, vec![]),
                LayerSpec::Easn { channels, .. } => (3, vec![channels]),
                LayerSpec::Residual {
                    channels, kernel, ..
                } => (4, vec![channels, kernel]),
                LayerSpec::Squeeze { factor } => (5, vec![factor]),
                LayerSpec::Unsqueeze { factor } => (6, vec![factor]),
            };
            self.u8(kind);
            for d in dims {
                self.u16(d)?;
            }
            self.u32(layer.weights().len())?;
            for &w in layer.weights() {
                self.f32(w);
            }
        }
        Ok(())
    }
}

pub fn save_bitswap(m: &HierarchicalModel) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.header(KIND_BITSWAP, m.depth(), m.patch_size(), 2 * m.depth())?;
    for t in m.inference().iter().chain(m.generative()) {
        w.transform(t)?;
    }
    w.u8(m.image_shape().0 as u8);
    w.u8(m.grid().precision_bits as u8);
    w.f32(m.grid().lo as f32);
    w.f32(m.grid().hi as f32);
    Ok(w.0)
}

pub fn save_hyperprior(m: &HyperpriorModel) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.header(KIND_HYPERPRIOR, 2, m.patch_size(), 4)?;
    for t in [m.analysis(), m.synthesis(), m.hyper_analysis(), m.hyper_synthesis()] {
        w.transform(t)?;
    }
    w.f32(m.quality());
    w.u16(m.z2_cdfs().len())?;
    for cdf in m.z2_cdfs() {
        w.u32(cdf.knots().len())?;
        for &k in cdf.knots() {
            w.f32(k as f32);
        }
        for &v in cdf.values() {
            w.f32(v as f32);
        }
    }
    Ok(w.0)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| corrupt("weight file truncated"))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<usize> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]) as usize)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| corrupt("weight count overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn transform(&mut self) -> Result<Vec<LayerSpec>> {
        let n = self.u16()?;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let kind = self.u8()?;
            let layer = match kind {
                0 | 1 => {
                    let (in_ch, out_ch, kernel, stride, padding) =
                        (self.u16()?, self.u16()?, self.u16()?, self.u16()?, self.u16()?);
                    let count = self.u32()?;
                    let weights = self.f32s(count)?;
                    if kind == 0 {
                        LayerSpec::Conv {
                            in_ch,
                            out_ch,
                            kernel,
                            stride,
                            padding,
                            weights,
                        }
                    } else {
                        LayerSpec::ConvTranspose {
                            in_ch,
                            out_ch,
                            kernel,
                            stride,
                            padding,
                            weights,
                        }
                    }
                }
                2 => {
                    self.no_weights()?;
                    LayerSpec::Elu
                }
                3 => {
                    let channels = self.u16()?;
                    let count = self.u32()?;
                    LayerSpec::Easn {
                        channels,
                        weights: self.f32s(count)?,
                    }
                }
                4 => {
                    let (channels, kernel) = (self.u16()?, self.u16()?);
                    let count = self.u32()?;
                    LayerSpec::Residual {
                        channels,
                        kernel,
                        weights: self.f32s(count)?,
                    }
                }
                5 | 6 => {
                    let factor = self.u16()?;
                    self.no_weights()?;
                    if kind == 5 {
                        LayerSpec::Squeeze { factor }
                    } else {
                        LayerSpec::Unsqueeze { factor }
                    }
                }
                k => return Err(corrupt(format!("unknown layer kind {k}"))),
            };
            layer.validate()?;
            layers.push(layer);
        }
        Ok(layers)
    }

    fn no_weights(&mut self) -> Result<()> {
        if self.u32()? != 0 {
            return Err(corrupt("weightless layer carries weights"));
        }
        Ok(())
    }
}

pub fn load(bytes: &[u8]) -> Result<ModelFile> {
    let mut r = Reader { data: bytes, pos: 0 };
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(corrupt("not an RMLW weight file"));
    }
    let version = r.u8()?;
    if version != WEIGHTS_VERSION {
        return Err(corrupt(format!("unsupported weight file version {version}")));
    }
    let kind = r.u8()?;
    let depth = r.u8()? as usize;
    let patch_size = r.u16()?;
    let count = r.u16()?;
    let mut transforms = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        transforms.push(r.transform()?);
    }
    let model = match kind {
        KIND_BITSWAP => {
            if count != 2 * depth {
                return Err(corrupt("bit-swap file needs two transforms per level"));
            }
            let image_channels = r.u8()? as usize;
            let bits = r.u8()? as u32;
            let (lo, hi) = (r.f32()? as f64, r.f32()? as f64);
            let generative = transforms.split_off(depth);
            ModelFile::Bitswap(HierarchicalModel::new(
                patch_size,
                image_channels,
                transforms,
                generative,
                BinGrid::new(bits, lo, hi)?,
            )?)
        }
        KIND_HYPERPRIOR => {
            if count != 4 {
                return Err(corrupt("hyperprior file needs four transforms"));
            }
            let quality = r.f32()?;
            let n = r.u16()?;
            let mut cdfs = Vec::with_capacity(n);
            for _ in 0..n {
                let k = r.u32()?;
                let knots = r.f32s(k)?.into_iter().map(f64::from).collect();
                let values = r.f32s(k)?.into_iter().map(f64::from).collect();
                cdfs.push(TabulatedCdf::new(knots, values)?);
            }
            let mut t = transforms.into_iter();
            let mut next = || t.next().unwrap_or_default();
            let (a, s, ha, hs) = (next(), next(), next(), next());
            ModelFile::Hyperprior(HyperpriorModel::new(patch_size, quality, a, s, ha, hs, cdfs)?)
        }
        k => return Err(corrupt(format!("unknown model kind {k}"))),
    };
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes after weight file"));
    }
    Ok(model)
}

pub fn read_file(path: &Path) -> Result<ModelFile> {
    load(&std::fs::read(path)?)
}

pub fn write_file(path: &Path, model: &ModelFile) -> Result<()> {
    std::fs::write(path, model.to_bytes()?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{toy_hyperprior, toy_model, TensorMap};

    #[test]
    fn bitswap_file_round_trip_is_byte_identical() {
        let m = toy_model(3, 32, 4).unwrap();
        let bytes = save_bitswap(&m).unwrap();
        let ModelFile::Bitswap(back) = load(&bytes).unwrap() else {
            panic!("wrong kind")
        };
        assert_eq!(save_bitswap(&back).unwrap(), bytes);
        let x = TensorMap::filled(3, 32, 32, 77.0);
        let xn = m.normalize(&x);
        assert_eq!(m.posterior(1, &xn).unwrap(), back.posterior(1, &xn).unwrap());
    }

    #[test]
    fn hyperprior_file_round_trip_is_byte_identical() {
        let m = toy_hyperprior(16, 12.0).unwrap();
        let bytes = save_hyperprior(&m).unwrap();
        let ModelFile::Hyperprior(back) = load(&bytes).unwrap() else {
            panic!("wrong kind")
        };
        assert_eq!(save_hyperprior(&back).unwrap(), bytes);
        for c in 0..4 {
            assert_eq!(m.z2_table(c), back.z2_table(c));
        }
        let x = TensorMap::filled(3, 16, 16, 99.0);
        assert_eq!(m.analyze(&x).unwrap(), back.analyze(&x).unwrap());
    }

    #[test]
    fn header_layout() {
        let bytes = save_bitswap(&toy_model(2, 64, 0).unwrap()).unwrap();
        assert_eq!(&bytes[..4], b"RMLW");
        assert_eq!(bytes[4], WEIGHTS_VERSION);
        assert_eq!(bytes[5], 0);
        assert_eq!(bytes[6], 2);
        assert_eq!(u16::from_le_bytes([bytes[7], bytes[8]]), 64);
        assert_eq!(u16::from_le_bytes([bytes[9], bytes[10]]), 4);
        // First layer: one conv 3 -> 6, kernel 2, stride 2, padding 0.
        assert_eq!(u16::from_le_bytes([bytes[11], bytes[12]]), 1);
        assert_eq!(bytes[13], 0);
        let dims: Vec<u16> = (0..5).map(|i| u16::from_le_bytes([bytes[14 + 2 * i], bytes[15 + 2 * i]])).collect();
        assert_eq!(dims, vec![3, 6, 2, 2, 0]);
    }

    #[test]
    fn truncated_and_garbled_files_are_rejected() {
        let bytes = save_hyperprior(&toy_hyperprior(8, 16.0).unwrap()).unwrap();
        for cut in [0, 3, 4, 11, bytes.len() / 2, bytes.len() - 1] {
            assert!(load(&bytes[..cut]).is_err());
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(load(&bad), Err(Error::Corrupt(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(load(&extra), Err(Error::Corrupt(_))));
    }
}
