//! Markov-chain latent model `z_L -> ... -> z_1 -> x` for lossless coding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{forward, output_shape, parameter_count, softplus, softplus_inverse, LayerSpec};
use super::tensor::TensorMap;
use crate::discretize::{BinGrid, LogisticBins, DEFAULT_GRID_BITS};
use crate::error::{Error, Result};
use crate::rans::SymbolModel;

/// Coder precision of every lossless table.
pub const LOSSLESS_PRECISION: u32 = 16;

/// Smallest scale a transform may emit.
const SIGMA_FLOOR: f32 = 1e-6;

/// Per-element logistic parameters of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub mu: Vec<f32>,
    pub sigma: Vec<f32>,
}

impl Params {
    /// Splits a `2C`-channel transform output into means and softplus scales.
    fn from_output(out: TensorMap) -> Result<Self> {
        let (c2, h, w) = out.shape();
        let n = c2 / 2 * h * w;
        let data = out.into_data();
        let mu = data[..n].to_vec();
        let sigma: Vec<f32> = data[n..].iter().map(|&r| softplus(r).max(SIGMA_FLOOR)).collect();
        if mu.iter().chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite distribution parameters".into()));
        }
        Ok(Self { mu, sigma })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

/// Realized discrete latents: bin indices of `z_1 ..= z_L`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Latents {
    pub levels: Vec<Vec<u16>>,
}

#[derive(Debug, Clone)]
pub struct HierarchicalModel {
    depth: usize,
    patch_size: usize,
    /// `inference[l - 1]` maps `z_{l-1}` to the parameters of `q(z_l | z_{l-1})`.
    inference: Vec<Vec<LayerSpec>>,
    /// `generative[l - 1]` maps `z_l` to the parameters of `p(z_{l-1} | z_l)`.
    generative: Vec<Vec<LayerSpec>>,
    grid: BinGrid,
    /// `shapes[0]` is the image; `shapes[l]` is `z_l`.
    shapes: Vec<(usize, usize, usize)>,
    prior: LogisticBins,
}

impl HierarchicalModel {
    pub fn new(
        patch_size: usize,
        image_channels: usize,
        inference: Vec<Vec<LayerSpec>>,
        generative: Vec<Vec<LayerSpec>>,
        grid: BinGrid,
    ) -> Result<Self> {
        let depth = inference.len();
        if depth == 0 || generative.len() != depth {
            return Err(Error::Config(format!(
                "need matching nonempty transform lists, got {} and {}",
                depth,
                generative.len()
            )));
        }
        for layer in inference.iter().chain(&generative).flatten() {
            layer.validate()?;
        }
        let mut shapes = vec![(image_channels, patch_size, patch_size)];
        for (l, t) in inference.iter().enumerate() {
            let (c2, h, w) = output_shape(t, shapes[l])?;
            if c2 % 2 != 0 {
                return Err(Error::Config(format!("inference {} emits odd channel count", l + 1)));
            }
            shapes.push((c2 / 2, h, w));
        }
        for (l, t) in generative.iter().enumerate() {
            let (c, h, w) = shapes[l];
            let got = output_shape(t, shapes[l + 1])?;
            if got != (2 * c, h, w) {
                return Err(Error::Config(format!(
                    "generative {} emits {got:?}, expected {:?}",
                    l + 1,
                    (2 * c, h, w)
                )));
            }
        }
        let prior = LogisticBins::on_grid(0.0, 1.0, &grid, LOSSLESS_PRECISION)?;
        Ok(Self {
            depth,
            patch_size,
            inference,
            generative,
            grid,
            shapes,
            prior,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn grid(&self) -> &BinGrid {
        &self.grid
    }

    pub fn inference(&self) -> &[Vec<LayerSpec>] {
        &self.inference
    }

    pub fn generative(&self) -> &[Vec<LayerSpec>] {
        &self.generative
    }

    /// Shape of level `l` (0 = image).
    pub fn shape(&self, level: usize) -> (usize, usize, usize) {
        self.shapes[level]
    }

    pub fn level_len(&self, level: usize) -> usize {
        let (c, h, w) = self.shapes[level];
        c * h * w
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.shapes[0]
    }

    /// Parameters of `q(z_l | z_{l-1})`; `input` is the normalized image for `l = 1`.
    pub fn posterior(&self, level: usize, input: &TensorMap) -> Result<Params> {
        self.check_level(level)?;
        if input.shape() != self.shapes[level - 1] {
            return Err(Error::Config(format!(
                "posterior {level} input {:?}, expected {:?}",
                input.shape(),
                self.shapes[level - 1]
            )));
        }
        Params::from_output(forward(&self.inference[level - 1], input)?)
    }

    /// Parameters of `p(z_{l-1} | z_l)`.
    pub fn likelihood(&self, level: usize, z: &TensorMap) -> Result<Params> {
        self.check_level(level)?;
        if z.shape() != self.shapes[level] {
            return Err(Error::Config(format!(
                "likelihood {level} input {:?}, expected {:?}",
                z.shape(),
                self.shapes[level]
            )));
        }
        Params::from_output(forward(&self.generative[level - 1], z)?)
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level == 0 || level > self.depth {
            return Err(Error::Config(format!("level {level} outside 1..={}", self.depth)));
        }
        Ok(())
    }

    /// Model of a latent element.
    pub fn latent_bins(&self, mu: f32, sigma: f32) -> Result<LogisticBins> {
        LogisticBins::on_grid(mu as f64, sigma as f64, &self.grid, LOSSLESS_PRECISION)
    }

    /// Model of a pixel element.
    pub fn pixel_bins(&self, mu: f32, sigma: f32) -> Result<LogisticBins> {
        LogisticBins::pixels(mu as f64, sigma as f64, LOSSLESS_PRECISION)
    }

    /// Model of element `i` of level `l - 1` given `p(z_{l-1} | z_l)` parameters.
    pub fn generative_bins(&self, level: usize, params: &Params, i: usize) -> Result<LogisticBins> {
        if level == 1 {
            self.pixel_bins(params.mu[i], params.sigma[i])
        } else {
            self.latent_bins(params.mu[i], params.sigma[i])
        }
    }

    /// Standard logistic prior of the deepest level.
    pub fn prior(&self) -> &LogisticBins {
        &self.prior
    }

    /// Bin centroids of `z_l` as a tensor.
    pub fn latent_values(&self, level: usize, bins: &[u16]) -> Result<TensorMap> {
        let (c, h, w) = self.shapes[level];
        TensorMap::new(
            c,
            h,
            w,
            bins.iter().map(|&k| self.grid.centroid(k as usize) as f32).collect(),
        )
    }

    /// Pixels scaled into `[0, 1]`.
    pub fn normalize(&self, x: &TensorMap) -> TensorMap {
        x.map(|v| v / 255.0)
    }

    /// Checks `x` is an image patch of integers in `0..=255` and returns the symbols.
    pub fn pixel_symbols(&self, x: &TensorMap) -> Result<Vec<u16>> {
        if x.shape() != self.shapes[0] {
            return Err(Error::Config(format!(
                "patch shape {:?}, model expects {:?}",
                x.shape(),
                self.shapes[0]
            )));
        }
        x.data()
            .iter()
            .map(|&v| {
                if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                    Ok(v as u16)
                } else {
                    Err(Error::Config(format!("pixel value {v} is not an 8-bit integer")))
                }
            })
            .collect()
    }

    /// Exact code costs of every layer for given realized latents.
    pub fn layer_costs(&self, x: &TensorMap, latents: &Latents) -> Result<LayerCosts> {
        let pixels = self.pixel_symbols(x)?;
        if latents.levels.len() != self.depth {
            return Err(Error::Accounting(format!(
                "{} latent levels for a depth-{} model",
                latents.levels.len(),
                self.depth
            )));
        }
        let bins = self.grid.bins();
        for (l, z) in latents.levels.iter().enumerate() {
            if z.len() != self.level_len(l + 1) || z.iter().any(|&k| k as usize >= bins) {
                return Err(Error::Accounting(format!("latent level {} off the grid", l + 1)));
            }
        }
        let mut q = Vec::with_capacity(self.depth);
        let mut p = Vec::with_capacity(self.depth);
        let mut below = self.normalize(x);
        for l in 1..=self.depth {
            let z = &latents.levels[l - 1];
            let post = self.posterior(l, &below)?;
            let mut cq = 0.0;
            for (i, &k) in z.iter().enumerate() {
                cq += self.latent_bins(post.mu[i], post.sigma[i])?.cost_bits(k as usize);
            }
            q.push(cq);
            let zt = self.latent_values(l, z)?;
            let lik = self.likelihood(l, &zt)?;
            let mut cp = 0.0;
            if l == 1 {
                for (i, &v) in pixels.iter().enumerate() {
                    cp += self.generative_bins(1, &lik, i)?.cost_bits(v as usize);
                }
            } else {
                for (i, &k) in latents.levels[l - 2].iter().enumerate() {
                    cp += self.generative_bins(l, &lik, i)?.cost_bits(k as usize);
                }
            }
            p.push(cp);
            below = zt;
        }
        let prior = latents.levels[self.depth - 1]
            .iter()
            .map(|&k| self.prior.cost_bits(k as usize))
            .sum();
        Ok(LayerCosts { q, p, prior })
    }

    /// Net code length of a bits-back coder for these latents.
    pub fn negative_elbo(&self, x: &TensorMap, latents: &Latents) -> Result<f64> {
        Ok(self.layer_costs(x, latents)?.negative_elbo())
    }

    pub fn inference_parameters(&self, level: usize) -> usize {
        parameter_count(&self.inference[level - 1])
    }

    pub fn generative_parameters(&self, level: usize) -> usize {
        parameter_count(&self.generative[level - 1])
    }
}

/// Code costs in bits per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCosts {
    /// `q[l - 1]`: `-log2 q(z_l | z_{l-1})`.
    pub q: Vec<f64>,
    /// `p[l - 1]`: `-log2 p(z_{l-1} | z_l)`.
    pub p: Vec<f64>,
    /// `-log2 p(z_L)`.
    pub prior: f64,
}

impl LayerCosts {
    pub fn negative_elbo(&self) -> f64 {
        self.p.iter().sum::<f64>() + self.prior - self.q.iter().sum::<f64>()
    }

    /// Upper bound on the initial bits the interleaved schedule needs.
    pub fn chi(&self) -> f64 {
        let mut chi = self.q[0];
        for l in 1..self.q.len() {
            chi += (self.q[l] - self.p[l - 1]).max(0.0);
        }
        chi
    }

    /// Initial bits of the schedule that decodes every latent first.
    pub fn recursive_init(&self) -> f64 {
        self.q.iter().sum()
    }

    /// Largest deficit of the interleaved schedule, at layer granularity.
    pub fn interleaved_init(&self) -> f64 {
        let mut acc = 0.0f64;
        let mut worst = 0.0f64;
        for l in 0..self.q.len() {
            acc -= self.q[l];
            worst = worst.min(acc);
            acc += self.p[l];
        }
        -worst
    }
}

/// Scales of the toy model's conditionals, in normalized units.
pub const TOY_SIGMA_Q: f32 = 0.15;
pub const TOY_SIGMA_P: f32 = 0.3;
pub const TOY_SIGMA_X: f32 = 0.03;
const TOY_CHANNELS: usize = 3;
const TOY_GAIN: f32 = 6.0;

/// Analytically defined model that needs no training.
///
/// Every level has three channels at half the resolution of the level
/// below. Inference means are 2x2 box averages passed through a seeded,
/// diagonally dominant channel mix (the first level mapping `[0, 1]` pixels
/// to `[-3, 3]`); generative means undo the mix and repeat each value over
/// its 2x2 block. Scales are constant per level.
pub fn toy_model(depth: usize, patch_size: usize, seed: u64) -> Result<HierarchicalModel> {
    if !(1..=4).contains(&depth) {
        return Err(Error::Config(format!("toy depth {depth} outside 1..=4")));
    }
    if patch_size == 0 || !patch_size.is_multiple_of(1 << depth) {
        return Err(Error::Config(format!(
            "patch size {patch_size} not a multiple of {}",
            1 << depth
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = TOY_CHANNELS;
    let mut inference = Vec::with_capacity(depth);
    let mut generative = Vec::with_capacity(depth);
    for l in 1..=depth {
        let mix = random_mix(&mut rng);
        let inv = invert3(&mix);
        let (gain, offset) = if l == 1 { (TOY_GAIN, -TOY_GAIN / 2.0) } else { (1.0, 0.0) };
        let sigma_down = softplus_inverse(TOY_SIGMA_Q);
        let sigma_up = softplus_inverse(if l == 1 { TOY_SIGMA_X } else { TOY_SIGMA_P });

        // conv 3 -> 6, k2 s2: weights [o][i][ky][kx].
        let mut w = vec![0.0f32; 2 * c * c * 4 + 2 * c];
        for o in 0..c {
            for i in 0..c {
                for t in 0..4 {
                    w[(o * c + i) * 4 + t] = gain * mix[o][i] as f32 / 4.0;
                }
            }
        }
        let bias = 2 * c * c * 4;
        for o in 0..c {
            w[bias + o] = offset;
            w[bias + c + o] = sigma_down;
        }
        inference.push(vec![LayerSpec::Conv {
            in_ch: c,
            out_ch: 2 * c,
            kernel: 2,
            stride: 2,
            padding: 0,
            weights: w,
        }]);

        // transposed conv 3 -> 6, k2 s2: weights [i][o][ky][kx].
        let mut w = vec![0.0f32; c * 2 * c * 4 + 2 * c];
        for i in 0..c {
            for o in 0..c {
                for t in 0..4 {
                    w[(i * 2 * c + o) * 4 + t] = inv[o][i] as f32 / gain;
                }
            }
        }
        let bias = c * 2 * c * 4;
        for o in 0..c {
            let shift: f64 = (0..c).map(|i| inv[o][i] * offset as f64).sum();
            w[bias + o] = (-shift / gain as f64) as f32;
            w[bias + c + o] = sigma_up;
        }
        generative.push(vec![LayerSpec::ConvTranspose {
            in_ch: c,
            out_ch: 2 * c,
            kernel: 2,
            stride: 2,
            padding: 0,
            weights: w,
        }]);
    }
    let grid = BinGrid::around(0.0, 1.0, DEFAULT_GRID_BITS)?;
    HierarchicalModel::new(patch_size, c, inference, generative, grid)
}

/// Row-stochastic 3x3 mix: half identity, half random convex weights.
fn random_mix(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for (o, row) in m.iter_mut().enumerate() {
        let r: [f64; 3] = [rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)];
        let s: f64 = r.iter().sum();
        for i in 0..3 {
            row[i] = 0.5 * r[i] / s + if i == o { 0.5 } else { 0.0 };
        }
    }
    m
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            // Cofactor of m[j][i].
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, d) = ((i + 1) % 3, (i + 2) % 3);
            *v = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
        }
    }
    inv
}
