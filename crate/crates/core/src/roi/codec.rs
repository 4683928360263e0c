//! Region coding of whole images into containers.

use std::collections::BTreeMap;

use crate::bitsback::{decode_sequence, encode_patch, Schedule};
use crate::container::{CodedContainer, Mode};
use crate::error::{corrupt, Error, Result};
use crate::hierarchy::{HierarchicalModel, HyperpriorModel, TensorMap};
use crate::lossy::{lossy_decode, lossy_encode, LossyStream};
use crate::mask::BinaryMask;
use crate::par::{self, Parallelism};
use crate::rans::{AnsState, SeedSource};
use crate::weights::ModelFile;

use super::layout::{build_layout, RoiLayout};
use super::plan::{patches_per_run, plan_with_width, ParallelPlan};
use super::rle::{decode_mask, encode_mask};

/// Models addressable by the 16-bit ids stored in containers.
#[derive(Debug, Clone, Default)]
pub struct ModelRegistry {
    models: BTreeMap<u16, ModelFile>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: u16, model: ModelFile) -> Option<ModelFile> {
        self.models.insert(id, model)
    }

    pub fn get(&self, id: u16) -> Option<&ModelFile> {
        self.models.get(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = u16> + '_ {
        self.models.keys().copied()
    }

    pub fn lossy(&self, id: u16) -> Result<&HyperpriorModel> {
        match self.models.get(&id) {
            Some(ModelFile::Hyperprior(m)) => Ok(m),
            Some(_) => Err(Error::Model(format!("model {id} is not a lossy model"))),
            None => Err(Error::Model(format!("unknown model id {id}"))),
        }
    }

    pub fn lossless(&self, id: u16) -> Result<&HierarchicalModel> {
        match self.models.get(&id) {
            Some(ModelFile::Bitswap(m)) => Ok(m),
            Some(_) => Err(Error::Model(format!("model {id} is not a lossless model"))),
            None => Err(Error::Model(format!("unknown model id {id}"))),
        }
    }

    fn patch_size(&self, id: u16) -> Result<usize> {
        match self.models.get(&id) {
            Some(ModelFile::Hyperprior(m)) => Ok(m.patch_size()),
            Some(ModelFile::Bitswap(m)) => Ok(m.patch_size()),
            None => Err(Error::Model(format!("unknown model id {id}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoiOptions {
    pub parallelism: Parallelism,
    /// Seeds the PRNG chain when no background can supply initial bits.
    pub seed: u64,
}

impl Default for RoiOptions {
    fn default() -> Self {
        Self {
            parallelism: Parallelism::Sequential,
            seed: 0x5eed,
        }
    }
}

/// Bit and pixel counts per region; pixels exclude padding.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RoiStats {
    pub blade_pixels: usize,
    pub background_pixels: usize,
    pub blade_bits: u64,
    pub background_bits: u64,
    /// Header, mask, stream table and checksum.
    pub overhead_bits: u64,
}

impl RoiStats {
    pub fn total_bits(&self) -> u64 {
        self.blade_bits + self.background_bits + self.overhead_bits
    }

    pub fn bpp(&self) -> f64 {
        self.total_bits() as f64 / (self.blade_pixels + self.background_pixels).max(1) as f64
    }

    pub fn blade_bpp(&self) -> f64 {
        self.blade_bits as f64 / self.blade_pixels.max(1) as f64
    }

    pub fn background_bpp(&self) -> f64 {
        self.background_bits as f64 / self.background_pixels.max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct RoiEncoded {
    pub container: CodedContainer,
    pub layout: RoiLayout,
    pub plan: Option<ParallelPlan>,
    pub stats: RoiStats,
}

/// Which model codes the blade region and which the background.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelChoice {
    pub blade: u16,
    pub background: u16,
}

fn patch(image: &TensorMap, layout: &RoiLayout, index: usize) -> TensorMap {
    let (y, x) = layout.origin(index);
    image.crop_mirrored(y, x, layout.patch_size, layout.patch_size)
}

fn encode_lossy_patches(
    image: &TensorMap,
    layout: &RoiLayout,
    indices: &[usize],
    model: &HyperpriorModel,
    id: u16,
) -> Result<Vec<Vec<u8>>> {
    par::try_map_range(indices.len(), |k| {
        let i = indices[k];
        Ok(lossy_encode(model, id, &patch(image, layout, i), layout.valid(i))?
            .stream
            .to_bytes())
    })
}

fn encode_run(model: &HierarchicalModel, patches: &[TensorMap], seed: SeedSource) -> Result<Vec<u8>> {
    let mut state = AnsState::seeded(seed)?;
    for x in patches {
        state = encode_patch(model, x, state, Schedule::Interleaved)?.state;
    }
    Ok(state.to_bytes())
}

fn decode_run(model: &HierarchicalModel, stream: &[u8], count: usize, seed: &SeedSource) -> Result<Vec<TensorMap>> {
    let (patches, residual) = decode_sequence(model, AnsState::from_bytes(stream)?, count, Schedule::Interleaved)?;
    if !seed.matches_residual(&residual) {
        return Err(corrupt("lossless run did not restore its initial bits"));
    }
    Ok(patches)
}

fn run_seed(plan: &ParallelPlan, run: usize, background_streams: &[Vec<u8>], prng_seed: u64) -> SeedSource {
    if plan.is_prng_chain() {
        SeedSource::prng(prng_seed)
    } else {
        SeedSource::bytes(background_streams[plan.runs[run].seed_patches.clone()].concat())
    }
}

/// Largest initial-bit draw of a single blade patch, from PRNG-seeded
/// trial encodes; includes the chunk that forms the head.
fn required_init_bits(model: &HierarchicalModel, patches: &[TensorMap], seed: u64) -> Result<u64> {
    let draws = par::try_map_range(patches.len(), |k| {
        let state = AnsState::seeded(SeedSource::prng(seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)))?;
        Ok(encode_patch(model, &patches[k], state, Schedule::Interleaved)?.consumed_initial + 4)
    })?;
    Ok(8 * draws.into_iter().max().unwrap_or(4) as u64)
}

/// Codes blade patches in runs seeded by background streams. The run width
/// starts from the trial estimate and grows until every run's seed suffices.
fn encode_lossless_runs(
    model: &HierarchicalModel,
    blade: &[TensorMap],
    background_streams: &[Vec<u8>],
    prng_seed: u64,
) -> Result<(ParallelPlan, Vec<Vec<u8>>)> {
    let mut ppr = if background_streams.is_empty() || blade.is_empty() {
        0
    } else {
        let mean = background_streams.iter().map(|s| 8 * s.len() as u64).sum::<u64>() / background_streams.len() as u64;
        patches_per_run(required_init_bits(model, blade, prng_seed)?, mean.max(1))?
    };
    loop {
        let plan = plan_with_width(background_streams.len(), blade.len(), ppr);
        let streams = par::try_map_range(plan.runs.len(), |r| {
            let patches: Vec<TensorMap> = plan.runs[r].blade.iter().map(|&k| blade[k].clone()).collect();
            encode_run(model, &patches, run_seed(&plan, r, background_streams, prng_seed))
        });
        match streams {
            Ok(streams) => return Ok((plan, streams)),
            Err(Error::InitialBitsExhausted { .. }) if !plan.is_prng_chain() => ppr += 1,
            Err(e) => return Err(e),
        }
    }
}

fn valid_pixels(layout: &RoiLayout, indices: &[usize]) -> usize {
    indices
        .iter()
        .map(|&i| {
            let (h, w) = layout.valid(i);
            h * w
        })
        .sum()
}

fn bits(streams: &[Vec<u8>]) -> u64 {
    streams.iter().map(|s| 8 * s.len() as u64).sum()
}

/// Compresses `image` (3 x H x W, 8-bit samples) into a container.
///
/// Region modes need `mask`; single-region modes ignore it and use
/// `models.blade` for every patch. Output bytes do not depend on
/// `options.parallelism`.
pub fn roi_compress(
    image: &TensorMap,
    mask: Option<&BinaryMask>,
    mode: Mode,
    registry: &ModelRegistry,
    models: ModelChoice,
    options: RoiOptions,
) -> Result<RoiEncoded> {
    par::with_parallelism(options.parallelism, || {
        compress_inner(image, mask, mode, registry, models, options.seed)
    })?
}

fn compress_inner(
    image: &TensorMap,
    mask: Option<&BinaryMask>,
    mode: Mode,
    registry: &ModelRegistry,
    models: ModelChoice,
    seed: u64,
) -> Result<RoiEncoded> {
    let (h, w) = (image.height(), image.width());
    let ps = registry.patch_size(models.blade)?;
    let background_id = if mode.has_mask() { models.background } else { models.blade };
    if registry.patch_size(background_id)? != ps {
        return Err(Error::Config("blade and background models use different patch sizes".into()));
    }
    let layout = match (mode, mask) {
        (Mode::SingleLossy, _) => RoiLayout::uniform(h, w, ps, false)?,
        (Mode::SingleLossless, _) => RoiLayout::uniform(h, w, ps, true)?,
        (_, Some(m)) if m.shape() == (h, w) => build_layout(m, ps)?,
        (_, Some(_)) => return Err(Error::Config("mask and image differ in shape".into())),
        (_, None) => return Err(Error::Config("region modes need a mask".into())),
    };
    let blade_idx = layout.blade_indices();
    let background_idx = layout.background_indices();

    let background_streams = if background_idx.is_empty() {
        Vec::new()
    } else {
        encode_lossy_patches(image, &layout, &background_idx, registry.lossy(background_id)?, background_id)?
    };
    let (plan, blade_streams) = if mode.is_lossless() {
        let model = registry.lossless(models.blade)?;
        if model.image_shape() != (image.channels(), ps, ps) {
            return Err(Error::Config("lossless model does not match the image channels".into()));
        }
        let patches: Vec<TensorMap> = blade_idx.iter().map(|&i| patch(image, &layout, i)).collect();
        let (plan, streams) = encode_lossless_runs(model, &patches, &background_streams, seed)?;
        (Some(plan), streams)
    } else if blade_idx.is_empty() {
        (None, Vec::new())
    } else {
        let streams = encode_lossy_patches(image, &layout, &blade_idx, registry.lossy(models.blade)?, models.blade)?;
        (None, streams)
    };

    let mut stats = RoiStats {
        blade_pixels: valid_pixels(&layout, &blade_idx),
        background_pixels: valid_pixels(&layout, &background_idx),
        blade_bits: bits(&blade_streams),
        background_bits: bits(&background_streams),
        overhead_bits: 0,
    };
    let streams = match mode {
        Mode::LossyLossless => [background_streams, blade_streams].concat(),
        Mode::SingleLossless => blade_streams,
        Mode::SingleLossy => background_streams,
        Mode::LossyLossy => {
            let mut bg = background_streams.into_iter();
            let mut bl = blade_streams.into_iter();
            layout
                .labels
                .iter()
                .map(|&b| if b { bl.next() } else { bg.next() }.expect("one stream per patch"))
                .collect()
        }
    };
    let container = CodedContainer {
        mode,
        width: u32::try_from(w).map_err(|_| Error::Config("image too wide".into()))?,
        height: u32::try_from(h).map_err(|_| Error::Config("image too tall".into()))?,
        patch_size: u16::try_from(ps).map_err(|_| Error::Config("patch size exceeds 16 bits".into()))?,
        blade_model: models.blade,
        background_model: background_id,
        seed: if mode.is_lossless() { seed } else { 0 },
        patches_per_run: plan.as_ref().map_or(0, |p| p.patches_per_run as u32),
        mask: if mode.has_mask() { encode_mask(&layout.labels) } else { Vec::new() },
        streams,
    };
    stats.overhead_bits = 8 * container.overhead_bytes() as u64;
    Ok(RoiEncoded {
        container,
        layout,
        plan,
        stats,
    })
}

/// Rebuilds the patch layout a container describes.
pub fn container_layout(c: &CodedContainer) -> Result<RoiLayout> {
    let (h, w, ps) = (c.height as usize, c.width as usize, c.patch_size as usize);
    let (rows, cols) = super::layout::grid_dims(h, w, ps).map_err(|e| corrupt(e.to_string()))?;
    if !c.mode.is_lossless() && c.streams.len() != rows * cols {
        return Err(corrupt("stream count does not match the patch grid"));
    }
    match c.mode {
        Mode::SingleLossy => RoiLayout::uniform(h, w, ps, false),
        Mode::SingleLossless => RoiLayout::uniform(h, w, ps, true),
        _ => RoiLayout::from_labels(h, w, ps, decode_mask(&c.mask, rows * cols)?),
    }
}

fn decode_lossy(model: &HyperpriorModel, id: u16, layout: &RoiLayout, index: usize, bytes: &[u8]) -> Result<TensorMap> {
    let stream = LossyStream::from_bytes(bytes)?;
    let (vh, vw) = layout.valid(index);
    if stream.model_id != id || (stream.valid_height as usize, stream.valid_width as usize) != (vh, vw) {
        return Err(corrupt(format!("lossy stream {index} does not match its patch")));
    }
    lossy_decode(model, &stream)
}

pub fn roi_decompress(container: &CodedContainer, registry: &ModelRegistry, parallelism: Parallelism) -> Result<TensorMap> {
    par::with_parallelism(parallelism, || decompress_inner(container, registry))?
}

fn decompress_inner(c: &CodedContainer, registry: &ModelRegistry) -> Result<TensorMap> {
    let layout = container_layout(c)?;
    for id in [c.blade_model, c.background_model] {
        if registry.patch_size(id)? != layout.patch_size {
            return Err(corrupt(format!("model {id} does not match the container patch size")));
        }
    }
    let blade_idx = layout.blade_indices();
    let background_idx = layout.background_indices();
    let n_bg = background_idx.len();

    let mut decoded: Vec<(usize, TensorMap)> = Vec::with_capacity(layout.patch_count());
    match c.mode {
        Mode::SingleLossy | Mode::LossyLossy => {
            if c.streams.len() != layout.patch_count() {
                return Err(corrupt("stream count does not match the patch grid"));
            }
            let blade_model = if blade_idx.is_empty() { None } else { Some(registry.lossy(c.blade_model)?) };
            let bg_model = if n_bg == 0 { None } else { Some(registry.lossy(c.background_model)?) };
            let patches = par::try_map_range(layout.patch_count(), |i| {
                let (model, id) = if layout.labels[i] {
                    (blade_model, c.blade_model)
                } else {
                    (bg_model, c.background_model)
                };
                decode_lossy(model.expect("model resolved for region"), id, &layout, i, &c.streams[i])
            })?;
            decoded.extend(patches.into_iter().enumerate());
        }
        Mode::LossyLossless | Mode::SingleLossless => {
            let model = registry.lossless(c.blade_model)?;
            let plan = plan_with_width(n_bg, blade_idx.len(), c.patches_per_run as usize);
            if c.streams.len() != n_bg + plan.runs.len() {
                return Err(corrupt("stream count does not match the run plan"));
            }
            let (bg_streams, run_streams) = c.streams.split_at(n_bg);
            if n_bg > 0 {
                let bg_model = registry.lossy(c.background_model)?;
                let patches = par::try_map_range(n_bg, |k| {
                    decode_lossy(bg_model, c.background_model, &layout, background_idx[k], &bg_streams[k])
                })?;
                decoded.extend(background_idx.iter().copied().zip(patches));
            }
            let runs = par::try_map_range(plan.runs.len(), |r| {
                let seed = run_seed(&plan, r, bg_streams, c.seed);
                decode_run(model, &run_streams[r], plan.runs[r].blade.len(), &seed)
            })?;
            for (run, patches) in plan.runs.iter().zip(runs) {
                decoded.extend(run.blade.iter().map(|&k| blade_idx[k]).zip(patches));
            }
        }
    }
    let channels = decoded.first().map_or(3, |(_, p)| p.channels());
    let mut out = TensorMap::zeros(channels, layout.height, layout.width);
    for (i, p) in &decoded {
        let (y, x) = layout.origin(*i);
        out.paste(p, y, x);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{toy_hyperprior, toy_model};

    fn registry(ps: usize) -> ModelRegistry {
        let mut r = ModelRegistry::new();
        r.insert(1, ModelFile::Hyperprior(toy_hyperprior(ps, 24.0).unwrap()));
        r.insert(2, ModelFile::Hyperprior(toy_hyperprior(ps, 4.0).unwrap()));
        r.insert(3, ModelFile::Bitswap(toy_model(2, ps, 7).unwrap()));
        r
    }

    fn image(h: usize, w: usize) -> TensorMap {
        let mut t = TensorMap::zeros(3, h, w);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    t.set(c, y, x, ((x * 3 + y * 2 + c * 40) % 200 + 20) as f32);
                }
            }
        }
        t
    }

    #[test]
    fn lossless_blade_is_exact_and_background_matches_lossy() {
        let reg = registry(16);
        let img = image(40, 50);
        let mask = BinaryMask::from_fn(40, 50, |y, x| (12..26).contains(&y) && x > 3);
        let models = ModelChoice { blade: 3, background: 1 };
        let enc = roi_compress(&img, Some(&mask), Mode::LossyLossless, &reg, models, RoiOptions::default()).unwrap();
        let bytes = enc.container.to_bytes();
        let back = roi_decompress(&CodedContainer::from_bytes(&bytes).unwrap(), &reg, Parallelism::Sequential).unwrap();
        assert_eq!(back.shape(), img.shape());
        let layout = &enc.layout;
        for i in 0..layout.patch_count() {
            let (y0, x0) = layout.origin(i);
            let (vh, vw) = layout.valid(i);
            let expected = if layout.labels[i] {
                img.crop_mirrored(y0, x0, vh, vw)
            } else {
                let full = lossy_encode(reg.lossy(1).unwrap(), 1, &patch(&img, layout, i), (vh, vw)).unwrap();
                full.reconstruction.crop_mirrored(0, 0, vh, vw)
            };
            assert_eq!(back.crop_mirrored(y0, x0, vh, vw), expected, "patch {i}");
        }
        assert!(!enc.plan.unwrap().is_prng_chain());
    }

    #[test]
    fn single_lossless_is_exact() {
        let reg = registry(16);
        let img = image(20, 33);
        let models = ModelChoice { blade: 3, background: 3 };
        let enc = roi_compress(&img, None, Mode::SingleLossless, &reg, models, RoiOptions::default()).unwrap();
        assert!(enc.plan.as_ref().unwrap().is_prng_chain());
        assert_eq!(enc.container.streams.len(), 1);
        let back = roi_decompress(&enc.container, &reg, Parallelism::Sequential).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn lossy_lossy_uses_both_models() {
        let reg = registry(16);
        let img = image(32, 32);
        let mask = BinaryMask::from_fn(32, 32, |y, _| y < 16);
        let models = ModelChoice { blade: 2, background: 1 };
        let enc = roi_compress(&img, Some(&mask), Mode::LossyLossy, &reg, models, RoiOptions::default()).unwrap();
        assert_eq!(enc.container.streams.len(), 4);
        assert!(enc.stats.blade_bpp() > enc.stats.background_bpp());
        let back = roi_decompress(&enc.container, &reg, Parallelism::Sequential).unwrap();
        assert_eq!(back.shape(), img.shape());
    }

    #[test]
    fn unknown_model_and_wrong_kind() {
        let reg = registry(16);
        let img = image(16, 16);
        let bad = ModelChoice { blade: 9, background: 1 };
        assert!(matches!(
            roi_compress(&img, None, Mode::SingleLossy, &reg, bad, RoiOptions::default()),
            Err(Error::Model(_))
        ));
        let wrong = ModelChoice { blade: 1, background: 1 };
        assert!(roi_compress(&img, None, Mode::SingleLossless, &reg, wrong, RoiOptions::default()).is_err());
        assert!(roi_compress(&img, None, Mode::LossyLossless, &reg, ModelChoice { blade: 3, background: 1 }, RoiOptions::default()).is_err());
    }
}
