//! Assignment of background streams as initial bits for parallel runs.

use std::ops::Range;

use crate::error::{Error, Result};

/// One independent bits-back chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Run {
    /// Positions in the raster-ordered background list whose streams,
    /// concatenated, seed this run. Empty for the PRNG chain.
    pub seed_patches: Range<usize>,
    /// Positions in the raster-ordered blade list, in coding order.
    pub blade: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelPlan {
    /// Zero when there is too little background and a single PRNG-seeded
    /// chain carries every blade patch.
    pub patches_per_run: usize,
    pub runs: Vec<Run>,
}

impl ParallelPlan {
    pub fn is_prng_chain(&self) -> bool {
        self.patches_per_run == 0
    }
}

/// Whole background patches needed to cover `required_bits`.
pub fn patches_per_run(required_bits: u64, bits_per_patch: u64) -> Result<usize> {
    if bits_per_patch == 0 {
        return Err(Error::Config("background patches carry no bits".into()));
    }
    Ok(required_bits.div_ceil(bits_per_patch).max(1) as usize)
}

pub fn max_runs(background_count: usize, patches_per_run: usize) -> usize {
    background_count.checked_div(patches_per_run).unwrap_or(0)
}

/// Plan for a given run width. Blade patches are dealt round-robin over
/// `min(max_runs, blade_count)` runs; run `r` is seeded by background
/// positions `r * ppr .. (r + 1) * ppr`, so no stream feeds two runs.
pub fn plan_with_width(background_count: usize, blade_count: usize, ppr: usize) -> ParallelPlan {
    let runs = if ppr == 0 { 0 } else { max_runs(background_count, ppr).min(blade_count) };
    if blade_count > 0 && runs == 0 {
        return ParallelPlan {
            patches_per_run: 0,
            runs: vec![Run {
                seed_patches: 0..0,
                blade: (0..blade_count).collect(),
            }],
        };
    }
    let mut out: Vec<Run> = (0..runs)
        .map(|r| Run {
            seed_patches: r * ppr..(r + 1) * ppr,
            blade: Vec::new(),
        })
        .collect();
    for k in 0..blade_count {
        out[k % runs].blade.push(k);
    }
    ParallelPlan {
        patches_per_run: ppr,
        runs: out,
    }
}

/// Run width from the mean background stream size.
pub fn plan_parallel(background_bits: &[u64], blade_count: usize, required_init_bits: u64) -> Result<ParallelPlan> {
    if background_bits.is_empty() {
        return Ok(plan_with_width(0, blade_count, 0));
    }
    let mean = background_bits.iter().sum::<u64>() / background_bits.len() as u64;
    let ppr = patches_per_run(required_init_bits, mean.max(1))?;
    Ok(plan_with_width(background_bits.len(), blade_count, ppr))
}
