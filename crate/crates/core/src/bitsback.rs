//! Bits-back coding over a [`HierarchicalModel`].
//!
//! Two schedules are offered. [`Schedule::Recursive`] decodes every latent
//! before encoding anything, so it needs initial bits for all posteriors at
//! once. [`Schedule::Interleaved`] encodes each level as soon as the next
//! latent has been decoded, which caps the deficit at the worst
//! single-level shortfall.
//!
//! Within a level, elements are decoded in index order and encoded in
//! reverse index order, so every encode is undone by a forward decode.

use crate::error::{Error, Result};
use crate::hierarchy::{HierarchicalModel, LayerCosts, Latents, TensorMap};
use crate::rans::{AnsState, SymbolModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Schedule {
    Interleaved,
    Recursive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// Latent drawn from the stream under the posterior.
    DecodePosterior,
    /// Level `l - 1` encoded under `p(z_{l-1} | z_l)`; level 1 is the image.
    EncodeLikelihood,
    EncodePrior,
}

/// One layer-sized coder operation.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub kind: StepKind,
    pub level: usize,
    /// Change of the state's bit length.
    pub measured: f64,
    /// Model cost, negative for decodes.
    pub ideal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitBitsReport {
    pub schedule: Schedule,
    pub steps: Vec<Step>,
    /// Largest cumulative deficit of the measured deltas, at least 0.
    pub init_bits_required: f64,
    /// Sum of the measured deltas.
    pub net_bits: f64,
    /// Sum of the ideal costs: the negative ELBO of the realized latents.
    pub ideal_net_bits: f64,
}

impl InitBitsReport {
    fn from_steps(schedule: Schedule, steps: Vec<Step>) -> Self {
        let mut acc = 0.0f64;
        let mut worst = 0.0f64;
        for s in &steps {
            acc += s.measured;
            worst = worst.min(acc);
        }
        let ideal_net_bits = steps.iter().map(|s| s.ideal).sum();
        Self {
            schedule,
            steps,
            init_bits_required: -worst,
            net_bits: acc,
            ideal_net_bits,
        }
    }

    /// Running sum of measured deltas after each step.
    pub fn cumulative(&self) -> Vec<f64> {
        self.steps
            .iter()
            .scan(0.0, |acc, s| {
                *acc += s.measured;
                Some(*acc)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PatchCodeResult {
    pub state: AnsState,
    pub report: InitBitsReport,
    pub latents: Latents,
    /// Seed bytes drawn while coding this patch.
    pub consumed_initial: usize,
}

impl PatchCodeResult {
    pub fn stream(&self) -> Vec<u8> {
        self.state.to_bytes()
    }
}

/// χ together with the initial-bit figures it bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiReport {
    pub chi: f64,
    /// `sum_l -log2 q(z_l | z_{l-1})`, what the recursive schedule needs.
    pub recursive_bound: f64,
    /// Deficit of the interleaved schedule at layer granularity.
    pub interleaved_bound: f64,
    pub costs: LayerCosts,
}

pub fn chi_bound(model: &HierarchicalModel, x: &TensorMap, latents: &Latents) -> Result<ChiReport> {
    let costs = model.layer_costs(x, latents)?;
    Ok(ChiReport {
        chi: costs.chi(),
        recursive_bound: costs.recursive_init(),
        interleaved_bound: costs.interleaved_init(),
        costs,
    })
}

struct Coder<'a> {
    model: &'a HierarchicalModel,
    state: &'a mut AnsState,
    steps: Vec<Step>,
}

impl Coder<'_> {
    fn record(&mut self, kind: StepKind, level: usize, before: f64, ideal: f64) {
        let measured = self.state.bit_length() - before;
        self.steps.push(Step {
            kind,
            level,
            measured,
            ideal,
        });
    }

    fn pop(&mut self, m: &impl SymbolModel) -> Result<usize> {
        self.state.decode(m)
    }

    fn pop_posterior(&mut self, level: usize, below: &TensorMap) -> Result<Vec<u16>> {
        let params = self.model.posterior(level, below)?;
        let before = self.state.bit_length();
        let mut cost = 0.0;
        let mut z = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let m = self.model.latent_bins(params.mu[i], params.sigma[i])?;
            let k = self.pop(&m)?;
            cost += m.cost_bits(k);
            z.push(k as u16);
        }
        self.record(StepKind::DecodePosterior, level, before, -cost);
        Ok(z)
    }

    fn push_posterior(&mut self, level: usize, below: &TensorMap, z: &[u16]) -> Result<()> {
        let params = self.model.posterior(level, below)?;
        let before = self.state.bit_length();
        let mut cost = 0.0;
        for i in (0..params.len()).rev() {
            let m = self.model.latent_bins(params.mu[i], params.sigma[i])?;
            cost += m.cost_bits(z[i] as usize);
            self.state.encode(z[i] as usize, &m);
        }
        self.record(StepKind::DecodePosterior, level, before, cost);
        Ok(())
    }

    /// Encodes level `level - 1` symbols given `z_level` values.
    fn push_likelihood(&mut self, level: usize, z: &TensorMap, symbols: &[u16]) -> Result<()> {
        let params = self.model.likelihood(level, z)?;
        let before = self.state.bit_length();
        let mut cost = 0.0;
        for i in (0..params.len()).rev() {
            let m = self.model.generative_bins(level, &params, i)?;
            cost += m.cost_bits(symbols[i] as usize);
            self.state.encode(symbols[i] as usize, &m);
        }
        self.record(StepKind::EncodeLikelihood, level, before, cost);
        Ok(())
    }

    fn pop_likelihood(&mut self, level: usize, z: &TensorMap) -> Result<Vec<u16>> {
        let params = self.model.likelihood(level, z)?;
        let mut out = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let m = self.model.generative_bins(level, &params, i)?;
            out.push(self.pop(&m)? as u16);
        }
        Ok(out)
    }

    fn push_prior(&mut self, z: &[u16]) {
        let prior = *self.model.prior();
        let before = self.state.bit_length();
        let mut cost = 0.0;
        for &k in z.iter().rev() {
            cost += prior.cost_bits(k as usize);
            self.state.encode(k as usize, &prior);
        }
        self.record(StepKind::EncodePrior, self.model.depth(), before, cost);
    }

    fn pop_prior(&mut self) -> Result<Vec<u16>> {
        let prior = *self.model.prior();
        let n = self.model.level_len(self.model.depth());
        (0..n).map(|_| Ok(self.pop(&prior)? as u16)).collect()
    }
}

/// Encodes `x` on top of `state` with the chosen schedule.
pub fn encode_patch(
    model: &HierarchicalModel,
    x: &TensorMap,
    mut state: AnsState,
    schedule: Schedule,
) -> Result<PatchCodeResult> {
    let pixels = model.pixel_symbols(x)?;
    let depth = model.depth();
    let drawn_before = state.seed_bytes_drawn();
    let mut coder = Coder {
        model,
        state: &mut state,
        steps: Vec::with_capacity(2 * depth + 1),
    };
    let mut levels: Vec<Vec<u16>> = Vec::with_capacity(depth);
    let mut values: Vec<TensorMap> = Vec::with_capacity(depth + 1);
    values.push(model.normalize(x));
    match schedule {
        Schedule::Interleaved => {
            for l in 1..=depth {
                let z = coder.pop_posterior(l, &values[l - 1])?;
                values.push(model.latent_values(l, &z)?);
                let below: &[u16] = if l == 1 { &pixels } else { &levels[l - 2] };
                coder.push_likelihood(l, &values[l], below)?;
                levels.push(z);
            }
        }
        Schedule::Recursive => {
            for l in 1..=depth {
                let z = coder.pop_posterior(l, &values[l - 1])?;
                values.push(model.latent_values(l, &z)?);
                levels.push(z);
            }
            for l in 1..=depth {
                let below: &[u16] = if l == 1 { &pixels } else { &levels[l - 2] };
                coder.push_likelihood(l, &values[l], below)?;
            }
        }
    }
    coder.push_prior(&levels[depth - 1]);
    let steps = std::mem::take(&mut coder.steps);
    let consumed_initial = state.seed_bytes_drawn() - drawn_before;
    Ok(PatchCodeResult {
        state,
        report: InitBitsReport::from_steps(schedule, steps),
        latents: Latents { levels },
        consumed_initial,
    })
}

/// Inverse of [`encode_patch`]; returns the patch and the state beneath it.
pub fn decode_patch(
    model: &HierarchicalModel,
    mut state: AnsState,
    schedule: Schedule,
) -> Result<(TensorMap, AnsState)> {
    let x = decode_in_place(model, &mut state, schedule).map_err(|e| match e {
        Error::InitialBitsExhausted { .. } => Error::Corrupt("lossless stream ended early".into()),
        other => other,
    })?;
    Ok((x, state))
}

fn decode_in_place(model: &HierarchicalModel, state: &mut AnsState, schedule: Schedule) -> Result<TensorMap> {
    let depth = model.depth();
    let mut coder = Coder {
        model,
        state,
        steps: Vec::new(),
    };
    let mut levels: Vec<Vec<u16>> = vec![Vec::new(); depth + 1];
    let mut values: Vec<Option<TensorMap>> = vec![None; depth + 1];
    levels[depth] = coder.pop_prior()?;
    values[depth] = Some(model.latent_values(depth, &levels[depth])?);
    let pixels;
    match schedule {
        Schedule::Interleaved => {
            for l in (1..depth).rev() {
                let above = values[l + 1].take().ok_or_else(|| Error::Model("missing level".into()))?;
                levels[l] = coder.pop_likelihood(l + 1, &above)?;
                let v = model.latent_values(l, &levels[l])?;
                coder.push_posterior(l + 1, &v, &levels[l + 1])?;
                values[l] = Some(v);
            }
            let v1 = values[1].take().ok_or_else(|| Error::Model("missing level".into()))?;
            pixels = coder.pop_likelihood(1, &v1)?;
            let x = pixel_tensor(model, &pixels)?;
            coder.push_posterior(1, &model.normalize(&x), &levels[1])?;
            return Ok(x);
        }
        Schedule::Recursive => {
            for l in (1..depth).rev() {
                let above = values[l + 1].clone().ok_or_else(|| Error::Model("missing level".into()))?;
                levels[l] = coder.pop_likelihood(l + 1, &above)?;
                values[l] = Some(model.latent_values(l, &levels[l])?);
            }
            let v1 = values[1].clone().ok_or_else(|| Error::Model("missing level".into()))?;
            pixels = coder.pop_likelihood(1, &v1)?;
        }
    }
    let x = pixel_tensor(model, &pixels)?;
    for l in (1..=depth).rev() {
        let below = if l == 1 {
            model.normalize(&x)
        } else {
            values[l - 1].clone().ok_or_else(|| Error::Model("missing level".into()))?
        };
        coder.push_posterior(l, &below, &levels[l])?;
    }
    Ok(x)
}

fn pixel_tensor(model: &HierarchicalModel, pixels: &[u16]) -> Result<TensorMap> {
    let (c, h, w) = model.image_shape();
    TensorMap::new(c, h, w, pixels.iter().map(|&v| v as f32).collect())
}

pub fn bitswap_encode(model: &HierarchicalModel, x: &TensorMap, state: AnsState) -> Result<PatchCodeResult> {
    encode_patch(model, x, state, Schedule::Interleaved)
}

pub fn bitswap_decode(model: &HierarchicalModel, state: AnsState) -> Result<(TensorMap, AnsState)> {
    decode_patch(model, state, Schedule::Interleaved)
}

pub fn recursive_encode(model: &HierarchicalModel, x: &TensorMap, state: AnsState) -> Result<PatchCodeResult> {
    encode_patch(model, x, state, Schedule::Recursive)
}

pub fn recursive_decode(model: &HierarchicalModel, state: AnsState) -> Result<(TensorMap, AnsState)> {
    decode_patch(model, state, Schedule::Recursive)
}

/// Decodes a serialized stream holding a single patch.
pub fn decode_stream(
    model: &HierarchicalModel,
    stream: &[u8],
    schedule: Schedule,
) -> Result<(TensorMap, AnsState)> {
    decode_patch(model, AnsState::from_bytes(stream)?, schedule)
}

/// Chains patches on one state: each patch's bits seed the next.
pub fn encode_sequence(
    model: &HierarchicalModel,
    patches: &[TensorMap],
    mut state: AnsState,
    schedule: Schedule,
) -> Result<(AnsState, Vec<PatchCodeResult>)> {
    let mut results = Vec::with_capacity(patches.len());
    for x in patches {
        let r = encode_patch(model, x, state, schedule)?;
        state = r.state.clone();
        results.push(r);
    }
    Ok((state, results))
}

/// Inverse of [`encode_sequence`]; patches come back in encode order.
pub fn decode_sequence(
    model: &HierarchicalModel,
    mut state: AnsState,
    count: usize,
    schedule: Schedule,
) -> Result<(Vec<TensorMap>, AnsState)> {
    let mut out = Vec::new();
    for _ in 0..count {
        let (x, rest) = decode_patch(model, state, schedule)?;
        out.push(x);
        state = rest;
    }
    out.reverse();
    Ok((out, state))
}
