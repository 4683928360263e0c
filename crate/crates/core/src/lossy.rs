//! Hyperprior lossy codec for single patches.
//!
//! Stream layout (little-endian):
//!
//! ```text
//! u16 model id | u16 valid height | u16 valid width
//! u32 z2 byte length | u32 z1 byte length | z2 stream | z1 stream
//! ```
//!
//! Each of the two latent streams is a serialized rANS state started from
//! empty. `z_2` comes first because the scales of `z_1` derive from it.

use crate::discretize::{gaussian_cdf, Cdf, PMF_FLOOR};
use crate::error::{corrupt, Error, Result};
use crate::hierarchy::hyperprior::{gaussian_table, scale_index, HyperpriorModel};
use crate::hierarchy::TensorMap;
use crate::rans::AnsState;

const SIDE_INFO_BYTES: usize = 14;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossyStream {
    pub model_id: u16,
    /// Dimensions of the region inside the patch that holds real pixels;
    /// the rest is mirror padding.
    pub valid_height: u16,
    pub valid_width: u16,
    pub z2: Vec<u8>,
    pub z1: Vec<u8>,
}

impl LossyStream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SIDE_INFO_BYTES + self.z2.len() + self.z1.len());
        out.extend_from_slice(&self.model_id.to_le_bytes());
        out.extend_from_slice(&self.valid_height.to_le_bytes());
        out.extend_from_slice(&self.valid_width.to_le_bytes());
        out.extend_from_slice(&(self.z2.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.z1.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.z2);
        out.extend_from_slice(&self.z1);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < SIDE_INFO_BYTES {
            return Err(corrupt("lossy stream shorter than its header"));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]) as usize;
        let (n2, n1) = (u32_at(6), u32_at(10));
        if SIDE_INFO_BYTES as u64 + n2 as u64 + n1 as u64 != bytes.len() as u64 {
            return Err(corrupt("lossy stream lengths do not match its size"));
        }
        let z2_end = SIDE_INFO_BYTES + n2;
        Ok(Self {
            model_id: u16_at(0),
            valid_height: u16_at(2),
            valid_width: u16_at(4),
            z2: bytes[SIDE_INFO_BYTES..z2_end].to_vec(),
            z1: bytes[z2_end..].to_vec(),
        })
    }

    pub fn total_bits(&self) -> u64 {
        8 * (SIDE_INFO_BYTES + self.z2.len() + self.z1.len()) as u64
    }

    /// Bits spent on everything but the main latent.
    pub fn side_info_bits(&self) -> u64 {
        8 * (SIDE_INFO_BYTES + self.z2.len()) as u64
    }
}

#[derive(Debug, Clone)]
pub struct LossyEncoded {
    pub stream: LossyStream,
    /// Quantized latents after clamping to their alphabets.
    pub z1: Vec<i32>,
    pub z2: Vec<i32>,
    /// What the decoder will output.
    pub reconstruction: TensorMap,
    /// Model cross-entropy of each stream, in bits.
    pub z2_model_bits: f64,
    pub z1_model_bits: f64,
}

fn latent_tensor(shape: (usize, usize, usize), values: &[i32]) -> Result<TensorMap> {
    TensorMap::new(shape.0, shape.1, shape.2, values.iter().map(|&v| v as f32).collect())
}

/// Encodes one full patch; `valid` records the unpadded extent.
pub fn lossy_encode(
    model: &HyperpriorModel,
    model_id: u16,
    x: &TensorMap,
    valid: (usize, usize),
) -> Result<LossyEncoded> {
    let ps = model.patch_size();
    if valid.0 == 0 || valid.1 == 0 || valid.0 > ps || valid.1 > ps {
        return Err(Error::Config(format!("valid region {valid:?} in {ps}x{ps} patch")));
    }
    let y = model.analyze(x)?;
    let z1_raw: Vec<i32> = y.data().iter().map(|&v| v.round() as i32).collect();

    let z2_cont = model.hyper_analyze(&latent_tensor(model.z1_shape(), &z1_raw)?)?;
    let (c2, h2, w2) = model.z2_shape();
    let plane2 = h2 * w2;
    let mut z2 = Vec::with_capacity(c2 * plane2);
    for (i, &v) in z2_cont.data().iter().enumerate() {
        z2.push(model.z2_prior(i / plane2).clamp(v.round() as i64) as i32);
    }
    let sigmas = model.scales(&latent_tensor(model.z2_shape(), &z2)?)?;
    let tables: Vec<usize> = sigmas.iter().map(|&s| scale_index(s)).collect();
    let z1: Vec<i32> = z1_raw
        .iter()
        .zip(&tables)
        .map(|(&v, &t)| gaussian_table(t).prior.clamp(v as i64) as i32)
        .collect();

    let mut s2 = AnsState::new();
    let mut z2_model_bits = 0.0;
    for i in (0..z2.len()).rev() {
        let ch = i / plane2;
        let sym = model.z2_prior(ch).symbol(z2[i] as i64);
        let table = model.z2_table(ch);
        z2_model_bits += table.cost_bits(sym);
        s2.encode(sym, table);
    }
    let mut s1 = AnsState::new();
    let mut z1_model_bits = 0.0;
    for i in (0..z1.len()).rev() {
        let t = gaussian_table(tables[i]);
        let sym = t.prior.symbol(z1[i] as i64);
        z1_model_bits += t.table.cost_bits(sym);
        s1.encode(sym, &t.table);
    }
    let reconstruction = round_pixels(&model.synthesize(&latent_tensor(model.z1_shape(), &z1)?)?);
    Ok(LossyEncoded {
        stream: LossyStream {
            model_id,
            valid_height: valid.0 as u16,
            valid_width: valid.1 as u16,
            z2: s2.to_bytes(),
            z1: s1.to_bytes(),
        },
        z1,
        z2,
        reconstruction,
        z2_model_bits,
        z1_model_bits,
    })
}

fn round_pixels(x: &TensorMap) -> TensorMap {
    x.map(|v| v.round().clamp(0.0, 255.0))
}

/// Decodes the full (padded) patch.
pub fn lossy_decode(model: &HyperpriorModel, stream: &LossyStream) -> Result<TensorMap> {
    let (c2, h2, w2) = model.z2_shape();
    let plane2 = h2 * w2;
    let mut s2 = AnsState::from_bytes(&stream.z2)?;
    let mut z2 = Vec::with_capacity(c2 * plane2);
    for i in 0..c2 * plane2 {
        let ch = i / plane2;
        let sym = s2.decode(model.z2_table(ch)).map_err(exhausted)?;
        z2.push(model.z2_prior(ch).value(sym) as i32);
    }
    if !s2.is_empty_state() {
        return Err(corrupt("trailing data in hyper-latent stream"));
    }
    let sigmas = model.scales(&latent_tensor(model.z2_shape(), &z2)?)?;
    let mut s1 = AnsState::from_bytes(&stream.z1)?;
    let mut z1 = Vec::with_capacity(sigmas.len());
    for &s in &sigmas {
        let t = gaussian_table(scale_index(s));
        let sym = s1.decode(&t.table).map_err(exhausted)?;
        z1.push(t.prior.value(sym) as i32);
    }
    if !s1.is_empty_state() {
        return Err(corrupt("trailing data in latent stream"));
    }
    Ok(round_pixels(&model.synthesize(&latent_tensor(model.z1_shape(), &z1)?)?))
}

fn exhausted(e: Error) -> Error {
    match e {
        Error::InitialBitsExhausted { .. } => corrupt("lossy stream ended early"),
        other => other,
    }
}

/// Decodes and crops to the valid region.
pub fn lossy_decode_cropped(model: &HyperpriorModel, stream: &LossyStream) -> Result<TensorMap> {
    let full = lossy_decode(model, stream)?;
    let (h, w) = (stream.valid_height as usize, stream.valid_width as usize);
    if h == 0 || w == 0 || h > full.height() || w > full.width() {
        return Err(corrupt("valid region exceeds the patch"));
    }
    Ok(full.crop_mirrored(0, 0, h, w))
}

/// Peak signal-to-noise ratio on the 0..255 scale; infinite for identical inputs.
pub fn psnr(a: &TensorMap, b: &TensorMap) -> Result<f64> {
    if a.shape() != b.shape() || a.is_empty() {
        return Err(Error::Config(format!("psnr of shapes {:?} and {:?}", a.shape(), b.shape())));
    }
    let mse = mse(a, b);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

fn mse(a: &TensorMap, b: &TensorMap) -> f64 {
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&u, &v)| {
            let d = u as f64 - v as f64;
            d * d
        })
        .sum();
    sum / a.len() as f64
}

/// Uniform noise realizations for both latents, each in `(-1/2, 1/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RdNoise {
    pub z1: Vec<f32>,
    pub z2: Vec<f32>,
}

impl RdNoise {
    pub fn zeros(model: &HyperpriorModel) -> Self {
        let (a, b, c) = model.z1_shape();
        let (d, e, f) = model.z2_shape();
        Self {
            z1: vec![0.0; a * b * c],
            z2: vec![0.0; d * e * f],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdLoss {
    pub rate_bits: f64,
    pub rate_bpp: f64,
    /// Mean squared error on the 0..255 scale.
    pub distortion: f64,
    pub loss: f64,
}

/// Rate under the noisy priors for continuous latent values.
pub fn noisy_rate_bits(model: &HyperpriorModel, z1: &TensorMap, z2: &TensorMap) -> Result<f64> {
    if z1.shape() != model.z1_shape() || z2.shape() != model.z2_shape() {
        return Err(Error::Config("latent shapes do not match the model".into()));
    }
    let (_, h2, w2) = model.z2_shape();
    let plane2 = h2 * w2;
    let mut bits = 0.0;
    for (i, &v) in z2.data().iter().enumerate() {
        let cdf = &model.z2_cdfs()[i / plane2];
        let p = cdf.cdf(v as f64 + 0.5) - cdf.cdf(v as f64 - 0.5);
        bits -= p.max(PMF_FLOOR).log2();
    }
    let sigmas = model.scales(z2)?;
    for (&v, &s) in z1.data().iter().zip(&sigmas) {
        let s = s as f64;
        let p = gaussian_cdf((v as f64 + 0.5) / s) - gaussian_cdf((v as f64 - 0.5) / s);
        bits -= p.max(PMF_FLOOR).log2();
    }
    Ok(bits)
}

/// The relaxed rate-distortion objective at one noise realization.
pub fn relaxed_rd_loss(model: &HyperpriorModel, x: &TensorMap, noise: &RdNoise) -> Result<RdLoss> {
    let y = model.analyze(x)?;
    if noise.z1.len() != y.len() {
        return Err(Error::Config("noise does not match latent size".into()));
    }
    let mut z1 = y.clone();
    for (v, &u) in z1.data_mut().iter_mut().zip(&noise.z1) {
        *v += u;
    }
    let mut z2 = model.hyper_analyze(&y)?;
    if noise.z2.len() != z2.len() {
        return Err(Error::Config("noise does not match hyper-latent size".into()));
    }
    for (v, &u) in z2.data_mut().iter_mut().zip(&noise.z2) {
        *v += u;
    }
    let rate_bits = noisy_rate_bits(model, &z1, &z2)?;
    let pixels = (x.height() * x.width()) as f64;
    let distortion = mse(&model.synthesize(&z1)?, x);
    let rate_bpp = rate_bits / pixels;
    Ok(RdLoss {
        rate_bits,
        rate_bpp,
        distortion,
        loss: rate_bpp + model.quality() as f64 * distortion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{discretize_unit_bins, Gaussian};
    use crate::hierarchy::hyperprior::toy_hyperprior;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(rng: &mut ChaCha8Rng, size: usize) -> TensorMap {
        let mut d = Vec::with_capacity(3 * size * size);
        for c in 0..3 {
            for y in 0..size {
                for x in 0..size {
                    let v = 90.0 + 40.0 * c as f32 + 30.0 * ((x as f32) / 5.0).sin() + 20.0 * ((y as f32) / 7.0).cos();
                    d.push((v + rng.gen_range(-10.0..10.0f32)).round().clamp(0.0, 255.0));
                }
            }
        }
        TensorMap::new(3, size, size, d).unwrap()
    }

    #[test]
    fn decode_matches_encoder_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = toy_hyperprior(32, 16.0).unwrap();
        let x = textured(&mut rng, 32);
        let e = lossy_encode(&m, 3, &x, (32, 32)).unwrap();
        let bytes = e.stream.to_bytes();
        let s = LossyStream::from_bytes(&bytes).unwrap();
        assert_eq!(s, e.stream);
        let a = lossy_decode(&m, &s).unwrap();
        let b = lossy_decode(&m, &s).unwrap();
        assert_eq!(a, e.reconstruction);
        assert_eq!(a, b);
    }

    #[test]
    fn measured_bits_track_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = toy_hyperprior(32, 8.0).unwrap();
        let e = lossy_encode(&m, 0, &textured(&mut rng, 32), (32, 32)).unwrap();
        let got2 = 8.0 * e.stream.z2.len() as f64;
        let got1 = 8.0 * e.stream.z1.len() as f64;
        assert!((got2 - e.z2_model_bits).abs() <= 80.0, "{got2} vs {}", e.z2_model_bits);
        assert!((got1 - e.z1_model_bits).abs() <= 80.0, "{got1} vs {}", e.z1_model_bits);
        assert!(e.stream.side_info_bits() < e.stream.total_bits() / 4);
    }

    #[test]
    fn toy_reconstruction_within_half_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = toy_hyperprior(32, 16.0).unwrap();
        let x = textured(&mut rng, 32);
        let e = lossy_encode(&m, 0, &x, (32, 32)).unwrap();
        for (a, b) in x.data().iter().zip(e.reconstruction.data()) {
            assert!((a - b).abs() <= 8.5, "{a} vs {b}");
        }
    }

    #[test]
    fn cropping_restores_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = toy_hyperprior(32, 16.0).unwrap();
        let src = textured(&mut rng, 32).crop_mirrored(0, 0, 20, 27);
        let padded = src.crop_mirrored(0, 0, 32, 32);
        let e = lossy_encode(&m, 0, &padded, (20, 27)).unwrap();
        let out = lossy_decode_cropped(&m, &e.stream).unwrap();
        assert_eq!(out.shape(), (3, 20, 27));
    }

    #[test]
    fn truncation_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = toy_hyperprior(32, 16.0).unwrap();
        let bytes = lossy_encode(&m, 0, &textured(&mut rng, 32), (32, 32)).unwrap().stream.to_bytes();
        for cut in [0, 5, 13, bytes.len() - 1] {
            assert!(matches!(LossyStream::from_bytes(&bytes[..cut]), Err(Error::Corrupt(_))));
        }
    }

    #[test]
    fn psnr_by_hand() {
        let a = TensorMap::new(1, 2, 2, vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        let b = TensorMap::new(1, 2, 2, vec![12.0, 20.0, 27.0, 40.0]).unwrap();
        // MSE = (4 + 0 + 9 + 0) / 4.
        let expected = 10.0 * (65025.0f64 / 3.25).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let z = TensorMap::zeros(1, 1, 1);
        let f = TensorMap::filled(1, 1, 1, 255.0);
        assert!(psnr(&z, &f).unwrap().abs() < 1e-12);
    }

    #[test]
    fn psnr_matches_independent_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 300;
        let u: Vec<f32> = (0..n).map(|_| rng.gen_range(0..256) as f32).collect();
        let v: Vec<f32> = (0..n).map(|_| rng.gen_range(0..256) as f32).collect();
        let mut acc = 0.0f64;
        for i in 0..n {
            acc += ((u[i] - v[i]) as f64).powi(2);
        }
        let oracle = 20.0 * 255.0f64.log10() - 10.0 * (acc / n as f64).log10();
        let a = TensorMap::new(3, 10, 10, u).unwrap();
        let b = TensorMap::new(3, 10, 10, v).unwrap();
        assert!((psnr(&a, &b).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn noisy_rate_at_integers_equals_unit_bin_bits() {
        let m = toy_hyperprior(8, 16.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (a, b, c) = m.z1_shape();
        let (d, e, f) = m.z2_shape();
        let z1 = TensorMap::new(a, b, c, (0..a * b * c).map(|_| rng.gen_range(-3..=3) as f32).collect()).unwrap();
        let z2 = TensorMap::new(d, e, f, (0..d * e * f).map(|_| rng.gen_range(0..=4) as f32).collect()).unwrap();
        let got = noisy_rate_bits(&m, &z1, &z2).unwrap();
        let mut expected = 0.0;
        for (i, &v) in z2.data().iter().enumerate() {
            expected -= m.z2_prior(i / (e * f)).probability(v as i64).log2();
        }
        for (&v, &s) in z1.data().iter().zip(&m.scales(&z2).unwrap()) {
            let half = (6.0 * s as f64).ceil() as i64 + 1;
            let p = discretize_unit_bins(&Gaussian { mu: 0.0, sigma: s as f64 }, 0.0, half, half).unwrap();
            expected -= p.probability(v as i64).log2();
        }
        // Equal up to the renormalization that follows the pmf floor.
        assert!((got - expected).abs() < 1e-5, "{got} vs {expected}");
    }

    #[test]
    fn zero_quality_leaves_rate_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut m = toy_hyperprior(8, 16.0).unwrap();
        let x = textured(&mut rng, 8);
        let noise = RdNoise::zeros(&m);
        let full = relaxed_rd_loss(&m, &x, &noise).unwrap();
        assert!(full.loss > full.rate_bpp);
        m = zero_quality(m);
        let r = relaxed_rd_loss(&m, &x, &noise).unwrap();
        assert_eq!(r.loss, r.rate_bpp);
    }

    fn zero_quality(m: HyperpriorModel) -> HyperpriorModel {
        HyperpriorModel::new(
            m.patch_size(),
            0.0,
            m.analysis().to_vec(),
            m.synthesis().to_vec(),
            m.hyper_analysis().to_vec(),
            m.hyper_synthesis().to_vec(),
            m.z2_cdfs().to_vec(),
        )
        .unwrap()
    }
}
