//! Two-level hyperprior autoencoder for the lossy path.

use std::sync::OnceLock;

use super::layers::{forward, output_shape, softplus, LayerSpec};
use super::tensor::TensorMap;
use crate::discretize::{
    discretize_unit_bins, gaussian_cdf, layer_window, tail_quantiles, Gaussian, Logistic, TabulatedCdf,
    UnitBinPrior, TAIL_MASS,
};
use crate::error::{Error, Result};
use crate::rans::CodingTable;

/// Coder precision of the lossy path.
pub const LOSSY_PRECISION: u32 = 16;

/// Lower clamp of Gaussian scales.
pub const SCALE_FLOOR: f32 = 0.01;

const SCALE_CEIL: f64 = 64.0;
const SCALE_LEVELS: usize = 64;

/// Log-spaced scales available to the coder.
pub fn scale_table() -> &'static [f64] {
    static SCALES: OnceLock<Vec<f64>> = OnceLock::new();
    SCALES.get_or_init(|| {
        let lo = (SCALE_FLOOR as f64).ln();
        let hi = SCALE_CEIL.ln();
        (0..SCALE_LEVELS)
            .map(|i| (lo + (hi - lo) * i as f64 / (SCALE_LEVELS - 1) as f64).exp())
            .collect()
    })
}

/// Index of the smallest table scale not below `sigma`.
pub fn scale_index(sigma: f32) -> usize {
    let s = scale_table();
    s.partition_point(|&v| v < sigma as f64 * (1.0 - 1e-12)).min(s.len() - 1)
}

/// Distance from the mean of a unit Gaussian to its tail quantile.
fn unit_gaussian_tail() -> f64 {
    static Q: OnceLock<f64> = OnceLock::new();
    *Q.get_or_init(|| {
        tail_quantiles(&|t| gaussian_cdf(t), TAIL_MASS)
            .map(|(_, hi)| hi)
            .unwrap_or(6.0)
    })
}

/// Zero-mean Gaussian unit-bin table for one scale.
#[derive(Debug, Clone)]
pub struct ScaleTable {
    pub prior: UnitBinPrior,
    pub table: CodingTable,
}

fn gaussian_tables() -> &'static [ScaleTable] {
    static TABLES: OnceLock<Vec<ScaleTable>> = OnceLock::new();
    TABLES.get_or_init(|| {
        scale_table()
            .iter()
            .map(|&s| {
                let half = (unit_gaussian_tail() * s).ceil() as i64;
                let prior = discretize_unit_bins(&Gaussian { mu: 0.0, sigma: s }, 0.0, half, half)
                    .expect("Gaussian cdf is monotone");
                let table = prior.to_table(LOSSY_PRECISION).expect("alphabet fits in 16 bits");
                ScaleTable { prior, table }
            })
            .collect()
    })
}

pub fn gaussian_table(index: usize) -> &'static ScaleTable {
    &gaussian_tables()[index]
}

#[derive(Debug, Clone)]
pub struct HyperpriorModel {
    patch_size: usize,
    quality: f32,
    analysis: Vec<LayerSpec>,
    synthesis: Vec<LayerSpec>,
    hyper_analysis: Vec<LayerSpec>,
    hyper_synthesis: Vec<LayerSpec>,
    z2_cdfs: Vec<TabulatedCdf>,
    z1_shape: (usize, usize, usize),
    z2_shape: (usize, usize, usize),
    z2_priors: Vec<UnitBinPrior>,
    z2_tables: Vec<CodingTable>,
}

impl HyperpriorModel {
    pub fn new(
        patch_size: usize,
        quality: f32,
        analysis: Vec<LayerSpec>,
        synthesis: Vec<LayerSpec>,
        hyper_analysis: Vec<LayerSpec>,
        hyper_synthesis: Vec<LayerSpec>,
        z2_cdfs: Vec<TabulatedCdf>,
    ) -> Result<Self> {
        for layer in analysis
            .iter()
            .chain(&synthesis)
            .chain(&hyper_analysis)
            .chain(&hyper_synthesis)
        {
            layer.validate()?;
        }
        let image = (3, patch_size, patch_size);
        let z1_shape = output_shape(&analysis, image)?;
        let z2_shape = output_shape(&hyper_analysis, z1_shape)?;
        if output_shape(&hyper_synthesis, z2_shape)? != z1_shape {
            return Err(Error::Config("hyper-synthesis does not produce one scale per latent".into()));
        }
        if output_shape(&synthesis, z1_shape)? != image {
            return Err(Error::Config("synthesis does not restore the patch shape".into()));
        }
        if z2_cdfs.len() != z2_shape.0 {
            return Err(Error::Config(format!(
                "{} prior cdfs for {} hyper-latent channels",
                z2_cdfs.len(),
                z2_shape.0
            )));
        }
        let mut z2_priors = Vec::with_capacity(z2_cdfs.len());
        let mut z2_tables = Vec::with_capacity(z2_cdfs.len());
        for cdf in &z2_cdfs {
            let med = cdf.median();
            let (z_min, z_max) = layer_window(&[(cdf.clone(), med)], TAIL_MASS)?;
            let prior = discretize_unit_bins(cdf, med, z_min, z_max)?;
            z2_tables.push(prior.to_table(LOSSY_PRECISION)?);
            z2_priors.push(prior);
        }
        Ok(Self {
            patch_size,
            quality,
            analysis,
            synthesis,
            hyper_analysis,
            hyper_synthesis,
            z2_cdfs,
            z1_shape,
            z2_shape,
            z2_priors,
            z2_tables,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn quality(&self) -> f32 {
        self.quality
    }

    pub fn analysis(&self) -> &[LayerSpec] {
        &self.analysis
    }

    pub fn synthesis(&self) -> &[LayerSpec] {
        &self.synthesis
    }

    pub fn hyper_analysis(&self) -> &[LayerSpec] {
        &self.hyper_analysis
    }

    pub fn hyper_synthesis(&self) -> &[LayerSpec] {
        &self.hyper_synthesis
    }

    pub fn z2_cdfs(&self) -> &[TabulatedCdf] {
        &self.z2_cdfs
    }

    pub fn z1_shape(&self) -> (usize, usize, usize) {
        self.z1_shape
    }

    pub fn z2_shape(&self) -> (usize, usize, usize) {
        self.z2_shape
    }

    pub fn z2_prior(&self, channel: usize) -> &UnitBinPrior {
        &self.z2_priors[channel]
    }

    pub fn z2_table(&self, channel: usize) -> &CodingTable {
        &self.z2_tables[channel]
    }

    /// Continuous latents `h(x / 255)` of a pixel patch.
    pub fn analyze(&self, x: &TensorMap) -> Result<TensorMap> {
        if x.shape() != (3, self.patch_size, self.patch_size) {
            return Err(Error::Config(format!(
                "patch shape {:?}, model expects 3x{}x{}",
                x.shape(),
                self.patch_size,
                self.patch_size
            )));
        }
        forward(&self.analysis, &x.map(|v| v / 255.0))
    }

    pub fn hyper_analyze(&self, z1: &TensorMap) -> Result<TensorMap> {
        forward(&self.hyper_analysis, z1)
    }

    /// Gaussian scale of every `z_1` element, clamped below.
    pub fn scales(&self, z2: &TensorMap) -> Result<Vec<f32>> {
        let out = forward(&self.hyper_synthesis, z2)?;
        Ok(out.data().iter().map(|&r| softplus(r).max(SCALE_FLOOR)).collect())
    }

    /// Reconstruction on the 0..255 scale, neither rounded nor clipped.
    pub fn synthesize(&self, z1: &TensorMap) -> Result<TensorMap> {
        Ok(forward(&self.synthesis, z1)?.map(|v| v * 255.0))
    }
}

/// Hand-built hyperprior with a near-identity main path.
///
/// The analysis squeezes 2x2 blocks into channels and scales by `255 / step`
/// around mid-gray, so rounding is a uniform quantizer with step `step`
/// gray levels; EASN with a closed gate passes values through. The hyper
/// path estimates mean magnitudes of 3-channel 2x2 groups via
/// `elu(y) + elu(-y) + 1`; scales grow linearly with that estimate.
pub fn toy_hyperprior(patch_size: usize, step: f32) -> Result<HyperpriorModel> {
    if patch_size == 0 || !patch_size.is_multiple_of(4) {
        return Err(Error::Config(format!("toy hyperprior patch size {patch_size} not a multiple of 4")));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("quantizer step {step}")));
    }
    let a = 255.0 / step;
    let c = 12;
    let eye = |scale: f32, bias: f32| {
        let mut w = vec![0.0f32; c * c + c];
        for i in 0..c {
            w[i * c + i] = scale;
        }
        w[c * c..].iter_mut().for_each(|b| *b = bias);
        w
    };
    let mut easn = eye(1.0, 0.0);
    easn.extend(std::iter::repeat_n(0.0, c * c));
    easn.extend(std::iter::repeat_n(-30.0, c));
    let analysis = vec![
        LayerSpec::Squeeze { factor: 2 },
        pointwise(c, c, eye(a, -a / 2.0)),
        LayerSpec::Easn {
            channels: c,
            weights: easn,
        },
    ];
    let synthesis = vec![pointwise(c, c, eye(1.0 / a, 0.5)), LayerSpec::Unsqueeze { factor: 2 }];

    let mut split = vec![0.0f32; 2 * c * c + 2 * c];
    for i in 0..c {
        split[i * c + i] = 1.0;
        split[(c + i) * c + i] = -1.0;
    }
    let groups = 4;
    let per = c / groups;
    let mut pool = vec![0.0f32; groups * 8 * c + groups];
    for g in 0..groups {
        for ch in g * per..(g + 1) * per {
            for d in 0..4 {
                pool[g * 8 * c + ch * 4 + d] = 1.0 / (per * 4) as f32;
                pool[g * 8 * c + (c + ch) * 4 + d] = 1.0 / (per * 4) as f32;
            }
        }
        pool[groups * 8 * c + g] = 1.0;
    }
    let hyper_analysis = vec![
        pointwise(c, 2 * c, split),
        LayerSpec::Elu,
        LayerSpec::Squeeze { factor: 2 },
        pointwise(8 * c, groups, pool),
    ];
    let mut up = vec![0.0f32; groups * c * 4 + c];
    for g in 0..groups {
        for ch in g * per..(g + 1) * per {
            for t in 0..4 {
                up[(g * c + ch) * 4 + t] = 1.5;
            }
        }
    }
    up[groups * c * 4..].iter_mut().for_each(|b| *b = 1.0);
    let hyper_synthesis = vec![LayerSpec::ConvTranspose {
        in_ch: groups,
        out_ch: c,
        kernel: 2,
        stride: 2,
        padding: 0,
        weights: up,
    }];
    let knots: Vec<f64> = (-40..=60).map(|k| k as f64 * 0.5).collect();
    let prior = Logistic { mu: 1.5, scale: 1.0 };
    let cdfs = (0..groups)
        .map(|_| TabulatedCdf::sample(&prior, knots.clone()))
        .collect::<Result<Vec<_>>>()?;
    HyperpriorModel::new(
        patch_size,
        1.0 / (step * step),
        analysis,
        synthesis,
        hyper_analysis,
        hyper_synthesis,
        cdfs,
    )
}

fn pointwise(in_ch: usize, out_ch: usize, weights: Vec<f32>) -> LayerSpec {
    LayerSpec::Conv {
        in_ch,
        out_ch,
        kernel: 1,
        stride: 1,
        padding: 0,
        weights,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_shapes() {
        let m = toy_hyperprior(64, 16.0).unwrap();
        assert_eq!(m.z1_shape(), (12, 32, 32));
        assert_eq!(m.z2_shape(), (4, 16, 16));
        assert!(toy_hyperprior(62, 16.0).is_err());
    }

    #[test]
    fn toy_analysis_is_a_uniform_quantizer() {
        let m = toy_hyperprior(8, 16.0).unwrap();
        let x = TensorMap::filled(3, 8, 8, 200.0);
        let y = m.analyze(&x).unwrap();
        let expected = (200.0 - 127.5) / 16.0;
        assert!(y.data().iter().all(|&v| (v - expected).abs() < 1e-4));
        let back = m.synthesize(&y).unwrap();
        assert!(back.data().iter().all(|&v| (v - 200.0).abs() < 1e-2));
    }

    #[test]
    fn hyper_path_tracks_magnitude() {
        let m = toy_hyperprior(8, 16.0).unwrap();
        let small = m.hyper_analyze(&TensorMap::filled(12, 4, 4, 0.0)).unwrap();
        let large = m.hyper_analyze(&TensorMap::filled(12, 4, 4, 6.0)).unwrap();
        assert!(small.data()[0] < large.data()[0]);
        assert!((large.data()[0] - 6.0).abs() < 0.05);
        let s_small = m.scales(&small.map(|v| v.round())).unwrap();
        let s_large = m.scales(&large.map(|v| v.round())).unwrap();
        assert!(s_small[0] < s_large[0]);
    }

    #[test]
    fn scale_quantization_rounds_up() {
        let s = scale_table();
        assert_eq!(s.len(), SCALE_LEVELS);
        assert!((s[0] - 0.01).abs() < 1e-8 && (s[SCALE_LEVELS - 1] - 64.0).abs() < 1e-9);
        for sigma in [0.01f32, 0.5, 1.0, 3.7, 63.0] {
            let i = scale_index(sigma);
            assert!(s[i] >= sigma as f64 * (1.0 - 1e-9));
            if i > 0 {
                assert!(s[i - 1] < sigma as f64);
            }
        }
        assert_eq!(scale_index(1e6), SCALE_LEVELS - 1);
    }

    #[test]
    fn gaussian_tables_cover_tail_window() {
        let t = gaussian_table(scale_index(1.0));
        let half = t.prior.highest() - 1;
        assert!(half as f64 >= 5.99 * scale_table()[scale_index(1.0)]);
        assert_eq!(t.prior.median(), 0);
        assert_eq!(t.prior.lowest(), -t.prior.highest());
    }

    #[test]
    fn z2_priors_use_tabulated_cdf_windows() {
        let m = toy_hyperprior(8, 16.0).unwrap();
        let p = m.z2_prior(0);
        assert_eq!(p.median(), 2);
        assert!(p.lowest() >= -21 && p.highest() <= 31);
        assert!(p.pmf().iter().all(|&v| v >= 1e-9));
    }
}
