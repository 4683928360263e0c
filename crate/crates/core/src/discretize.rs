//! Turning continuous densities into coding alphabets.
//!
//! Two schemes are used:
//!
//! * **Unit bins** for integer-quantized latents of the lossy codec. The pmf
//!   of integer `k` is `c(k + 1/2) - c(k - 1/2)`, evaluated on a window around
//!   the median; the mass outside the window goes to two sentinel symbols.
//! * **A uniform bin grid** of `2^P` equal-width bins for the lossless
//!   hierarchy. The outermost bins absorb the tails.
//!
//! Every pmf leaves here with no entry below [`PMF_FLOOR`] and summing to 1,
//! which guarantees nonzero frequencies once quantized into a
//! [`CodingTable`].

use crate::error::{Error, Result};
use crate::rans::{CodingTable, SymbolModel};

/// Minimum probability of any symbol.
pub const PMF_FLOOR: f64 = 1e-9;

/// Tail mass left outside the unit-bin window.
pub const TAIL_MASS: f64 = 1e-9;

/// Default grid precision for the lossless hierarchy.
pub const DEFAULT_GRID_BITS: u32 = 10;

/// A cumulative distribution function.
pub trait Cdf {
    fn cdf(&self, x: f64) -> f64;
}

impl<F: Fn(f64) -> f64> Cdf for F {
    fn cdf(&self, x: f64) -> f64 {
        self(x)
    }
}

#[inline]
pub fn logistic_cdf(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Standard normal cdf.
#[inline]
pub fn gaussian_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Logistic {
    pub mu: f64,
    pub scale: f64,
}

impl Cdf for Logistic {
    fn cdf(&self, x: f64) -> f64 {
        logistic_cdf((x - self.mu) / self.scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mu: f64,
    pub sigma: f64,
}

impl Cdf for Gaussian {
    fn cdf(&self, x: f64) -> f64 {
        gaussian_cdf((x - self.mu) / self.sigma)
    }
}

/// Piecewise-linear monotone cdf through tabulated knots.
///
/// Below the first knot the cdf is 0 and above the last it is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedCdf {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl TabulatedCdf {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::Model(format!(
                "tabulated cdf needs matching knots/values, got {} and {}",
                knots.len(),
                values.len()
            )));
        }
        if knots.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite tabulated cdf".into()));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Model("cdf knots must be strictly increasing".into()));
        }
        if values.windows(2).any(|w| w[1] < w[0]) || values[0] < 0.0 || values[values.len() - 1] > 1.0 {
            return Err(Error::Model("tabulated cdf is not monotone in [0, 1]".into()));
        }
        Ok(Self { knots, values })
    }

    /// Samples `cdf` at `knots`, pinning the end values to exactly 0 and 1.
    ///
    /// Knots and values are rounded to single precision, the resolution of
    /// the weight file.
    pub fn sample(cdf: &impl Cdf, knots: Vec<f64>) -> Result<Self> {
        let knots: Vec<f64> = knots.into_iter().map(|k| k as f32 as f64).collect();
        let mut values: Vec<f64> = knots.iter().map(|&k| cdf.cdf(k) as f32 as f64).collect();
        if let Some(first) = values.first_mut() {
            *first = 0.0;
        }
        if let Some(last) = values.last_mut() {
            *last = 1.0;
        }
        Self::new(knots, values)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Smallest x with cdf(x) >= 1/2.
    pub fn median(&self) -> f64 {
        let i = self.values.partition_point(|&v| v < 0.5);
        if i == 0 {
            return self.knots[0];
        }
        if i == self.values.len() {
            return self.knots[self.knots.len() - 1];
        }
        let (x0, x1) = (self.knots[i - 1], self.knots[i]);
        let (y0, y1) = (self.values[i - 1], self.values[i]);
        if y1 == y0 {
            x0
        } else {
            x0 + (0.5 - y0) * (x1 - x0) / (y1 - y0)
        }
    }
}

impl Cdf for TabulatedCdf {
    fn cdf(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if x <= self.knots[0] {
            return if x == self.knots[0] { self.values[0] } else { 0.0 };
        }
        if x >= self.knots[n - 1] {
            return 1.0;
        }
        let i = self.knots.partition_point(|&k| k <= x);
        let (x0, x1) = (self.knots[i - 1], self.knots[i]);
        let (y0, y1) = (self.values[i - 1], self.values[i]);
        y0 + (x - x0) * (y1 - y0) / (x1 - x0)
    }
}

/// Clamps every entry to at least [`PMF_FLOOR`] and rescales the rest so
/// the pmf sums to 1.
pub fn floor_and_normalize(pmf: &mut [f64]) {
    let n = pmf.len();
    if n == 0 {
        return;
    }
    let mut floored = vec![false; n];
    loop {
        let mut free_mass = 0.0;
        let mut fixed = 0usize;
        for (p, &f) in pmf.iter().zip(&floored) {
            if f {
                fixed += 1;
            } else {
                free_mass += *p;
            }
        }
        let target = 1.0 - fixed as f64 * PMF_FLOOR;
        if free_mass <= 0.0 {
            let v = 1.0 / n as f64;
            pmf.iter_mut().for_each(|p| *p = v);
            return;
        }
        let scale = target / free_mass;
        let mut changed = false;
        for (p, f) in pmf.iter_mut().zip(floored.iter_mut()) {
            if *f {
                *p = PMF_FLOOR;
            } else if *p * scale < PMF_FLOOR {
                *f = true;
                *p = PMF_FLOOR;
                changed = true;
            }
        }
        if !changed {
            for (p, &f) in pmf.iter_mut().zip(&floored) {
                if !f {
                    *p *= scale;
                }
            }
            return;
        }
    }
}

/// The "noisy" prior density at `z`: the cdf integrated over a unit bin.
#[inline]
pub fn noisy_prior(cdf: &impl Cdf, z: f64) -> f64 {
    cdf.cdf(z + 0.5) - cdf.cdf(z - 0.5)
}

/// Integer alphabet `{lo - 1, ..., hi + 1}` with `lo = med - z_min` and
/// `hi = med + z_max`; the two outer values are sentinels for outliers.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitBinPrior {
    median: i64,
    z_min: i64,
    z_max: i64,
    pmf: Vec<f64>,
}

impl UnitBinPrior {
    pub fn lowest(&self) -> i64 {
        self.median - self.z_min - 1
    }

    pub fn highest(&self) -> i64 {
        self.median + self.z_max + 1
    }

    pub fn median(&self) -> i64 {
        self.median
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    /// Clamps `value` into the alphabet (outliers land on a sentinel).
    pub fn clamp(&self, value: i64) -> i64 {
        value.clamp(self.lowest(), self.highest())
    }

    pub fn symbol(&self, value: i64) -> usize {
        (self.clamp(value) - self.lowest()) as usize
    }

    pub fn value(&self, symbol: usize) -> i64 {
        self.lowest() + symbol as i64
    }

    pub fn probability(&self, value: i64) -> f64 {
        self.pmf[self.symbol(value)]
    }

    pub fn to_table(&self, precision: u32) -> Result<CodingTable> {
        CodingTable::from_pmf(&self.pmf, precision)
    }
}

/// Unit-bin discretization around `median` (rounded to the nearest integer).
pub fn discretize_unit_bins(
    cdf: &impl Cdf,
    median: f64,
    z_min: i64,
    z_max: i64,
) -> Result<UnitBinPrior> {
    if !median.is_finite() || z_min < 0 || z_max < 0 {
        return Err(Error::Model(format!(
            "bad unit-bin window: median {median}, z_min {z_min}, z_max {z_max}"
        )));
    }
    let med = median.round() as i64;
    let lo = med - z_min;
    let hi = med + z_max;
    // Edges lo - 1/2, lo + 1/2, ..., hi + 1/2.
    let edges: Vec<f64> = (lo..=hi + 1).map(|k| cdf.cdf(k as f64 - 0.5)).collect();
    for w in edges.windows(2) {
        if !(w[0].is_finite() && w[1].is_finite()) || w[1] < w[0] {
            return Err(Error::Model("cdf is not monotone on the unit-bin window".into()));
        }
    }
    if edges[0] < 0.0 || edges[edges.len() - 1] > 1.0 {
        return Err(Error::Model("cdf leaves [0, 1]".into()));
    }
    let mut pmf = Vec::with_capacity(edges.len() + 1);
    pmf.push(edges[0]);
    pmf.extend(edges.windows(2).map(|w| w[1] - w[0]));
    pmf.push(1.0 - edges[edges.len() - 1]);
    floor_and_normalize(&mut pmf);
    Ok(UnitBinPrior {
        median: med,
        z_min,
        z_max,
        pmf,
    })
}

/// `2^P` equal-width bins covering `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinGrid {
    pub precision_bits: u32,
    pub lo: f64,
    pub hi: f64,
}

impl BinGrid {
    pub fn new(precision_bits: u32, lo: f64, hi: f64) -> Result<Self> {
        if !(1..=crate::rans::MAX_PRECISION).contains(&precision_bits) {
            return Err(Error::Config(format!("grid precision {precision_bits}")));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::Config(format!("grid range [{lo}, {hi})")));
        }
        Ok(Self {
            precision_bits,
            lo,
            hi,
        })
    }

    /// Grid spanning eight scales either side of `mu`.
    pub fn around(mu: f64, sigma: f64, precision_bits: u32) -> Result<Self> {
        Self::new(precision_bits, mu - 8.0 * sigma, mu + 8.0 * sigma)
    }

    pub fn bins(&self) -> usize {
        1 << self.precision_bits
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    pub fn edge(&self, k: usize) -> f64 {
        self.lo + k as f64 * self.width()
    }

    pub fn centroid(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.width()
    }

    /// Index of the bin containing `z`, clamping into `[lo, hi)`.
    pub fn bin(&self, z: f64) -> usize {
        let k = ((z - self.lo) / self.width()).floor();
        if k.is_nan() || k < 0.0 {
            0
        } else {
            (k as usize).min(self.bins() - 1)
        }
    }
}

fn check_scale(mu: f64, sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite() && mu.is_finite()) {
        return Err(Error::Model(format!("invalid logistic parameters mu={mu}, sigma={sigma}")));
    }
    Ok(())
}

/// Logistic(mu, sigma) integrated over each grid bin, outer bins absorbing the tails.
pub fn discretize_logistic_on_grid(mu: f64, sigma: f64, grid: &BinGrid) -> Result<Vec<f64>> {
    let mut pmf = vec![0.0; grid.bins()];
    logistic_grid_into(mu, sigma, grid, &mut pmf)?;
    Ok(pmf)
}

fn logistic_grid_into(mu: f64, sigma: f64, grid: &BinGrid, pmf: &mut [f64]) -> Result<()> {
    check_scale(mu, sigma)?;
    let n = grid.bins();
    let inv = 1.0 / sigma;
    let w = grid.width();
    let mut prev = 0.0;
    for (k, p) in pmf.iter_mut().enumerate().take(n - 1) {
        let c = logistic_cdf((grid.lo + (k + 1) as f64 * w - mu) * inv);
        *p = c - prev;
        prev = c;
    }
    pmf[n - 1] = 1.0 - prev;
    floor_and_normalize(pmf);
    Ok(())
}

/// Coding table of a logistic on a grid.
pub fn logistic_grid_table(mu: f64, sigma: f64, grid: &BinGrid, precision: u32) -> Result<CodingTable> {
    let mut pmf = vec![0.0; grid.bins()];
    logistic_grid_into(mu, sigma, grid, &mut pmf)?;
    CodingTable::from_pmf(&pmf, precision)
}

/// Logistic over `n` contiguous bins whose inner edges sit at
/// `origin + k * step` for `k = 1..n`; the outer bins absorb the tails.
///
/// Slots come from the quantized cdf `B_k = k + floor(C_k (M - n))`, which
/// gives every bin at least one slot and is evaluated on demand. Decoding a
/// symbol costs a binary search over at most `log2(n)` cdf evaluations, so
/// no per-element table is ever materialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticBins {
    n: u32,
    origin: f64,
    step: f64,
    mu: f64,
    inv_sigma: f64,
    precision: u32,
    spare: f64,
}

impl LogisticBins {
    pub fn new(mu: f64, sigma: f64, n: usize, origin: f64, step: f64, precision: u32) -> Result<Self> {
        check_scale(mu, sigma)?;
        crate::rans::check_precision(precision)?;
        let m = 1usize << precision;
        if n == 0 || n > m {
            return Err(Error::Capacity {
                alphabet: n,
                precision,
            });
        }
        Ok(Self {
            n: n as u32,
            origin,
            step,
            mu,
            inv_sigma: 1.0 / sigma,
            precision,
            spare: (m - n) as f64,
        })
    }

    pub fn on_grid(mu: f64, sigma: f64, grid: &BinGrid, precision: u32) -> Result<Self> {
        Self::new(mu, sigma, grid.bins(), grid.lo, grid.width(), precision)
    }

    /// 8-bit pixel values with `v` at `v / 255`.
    pub fn pixels(mu: f64, sigma: f64, precision: u32) -> Result<Self> {
        Self::new(mu, sigma, 256, -0.5 / 255.0, 1.0 / 255.0, precision)
    }

    pub fn alphabet_size(&self) -> usize {
        self.n as usize
    }

    #[inline]
    fn cum(&self, k: u32) -> u32 {
        if k == 0 {
            0
        } else if k >= self.n {
            1 << self.precision
        } else {
            let t = (self.origin + k as f64 * self.step - self.mu) * self.inv_sigma;
            k + (logistic_cdf(t) * self.spare).floor() as u32
        }
    }

    /// Probabilities the coder assigns.
    pub fn pmf(&self) -> Vec<f64> {
        let m = (1u64 << self.precision) as f64;
        (0..self.n)
            .map(|k| (self.cum(k + 1) - self.cum(k)) as f64 / m)
            .collect()
    }
}

impl SymbolModel for LogisticBins {
    fn precision(&self) -> u32 {
        self.precision
    }

    #[inline]
    fn span(&self, symbol: usize) -> (u32, u32) {
        let k = symbol as u32;
        let b = self.cum(k);
        (b, self.cum(k + 1) - b)
    }

    fn locate(&self, slot: u32) -> (usize, u32, u32) {
        let (mut lo, mut hi) = (0u32, self.n);
        let mut b_lo = 0u32;
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            let b = self.cum(mid);
            if b <= slot {
                lo = mid;
                b_lo = b;
            } else {
                hi = mid;
            }
        }
        (lo as usize, b_lo, self.cum(lo + 1) - b_lo)
    }
}

/// Discretized logistic over 8-bit pixel values.
///
/// `mu` and `sigma` are in normalized units where pixel `v` sits at `v / 255`;
/// values 0 and 255 absorb the tails.
pub fn logistic_pixel_pmf(mu: f64, sigma: f64) -> Result<Vec<f64>> {
    check_scale(mu, sigma)?;
    let inv = 1.0 / sigma;
    let mut pmf = vec![0.0; 256];
    let mut prev = 0.0;
    for (v, p) in pmf.iter_mut().enumerate().take(255) {
        let c = logistic_cdf(((v as f64 + 0.5) / 255.0 - mu) * inv);
        *p = c - prev;
        prev = c;
    }
    pmf[255] = 1.0 - prev;
    floor_and_normalize(&mut pmf);
    Ok(pmf)
}

/// Finds `z` with `cdf(z) = target` by bisection.
fn bisect(cdf: &impl Cdf, target: f64) -> Result<f64> {
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    let mut expand = 0;
    while cdf.cdf(lo) > target {
        lo *= 2.0;
        expand += 1;
        if expand > 1100 {
            return Err(Error::Model("no lower bracket for quantile".into()));
        }
    }
    while cdf.cdf(hi) < target {
        hi *= 2.0;
        expand += 1;
        if expand > 1100 {
            return Err(Error::Model("no upper bracket for quantile".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-12 * mid.abs().max(1.0) {
            return Ok(mid);
        }
        let c = cdf.cdf(mid);
        if !c.is_finite() {
            return Err(Error::Model("non-finite cdf during bisection".into()));
        }
        if c < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Model("quantile bisection did not converge".into()))
}

/// Points where the cdf reaches `tail_mass` and `1 - tail_mass`.
pub fn tail_quantiles(cdf: &impl Cdf, tail_mass: f64) -> Result<(f64, f64)> {
    if !(tail_mass > 0.0 && tail_mass < 0.5) {
        return Err(Error::Model(format!("tail mass {tail_mass}")));
    }
    Ok((bisect(cdf, tail_mass)?, bisect(cdf, 1.0 - tail_mass)?))
}

/// Per-layer window `(z_min, z_max)`: the largest median-to-quantile
/// distances over the layer's channels, rounded up.
pub fn layer_window<C: Cdf>(channels: &[(C, f64)], tail_mass: f64) -> Result<(i64, i64)> {
    let mut z_min = 0i64;
    let mut z_max = 0i64;
    for (cdf, median) in channels {
        let (lo, hi) = tail_quantiles(cdf, tail_mass)?;
        z_min = z_min.max((median - lo).ceil() as i64);
        z_max = z_max.max((hi - median).ceil() as i64);
    }
    Ok((z_min, z_max))
}
