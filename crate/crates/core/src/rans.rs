//! Streaming rANS with stack (last-in first-out) semantics.
//!
//! The coder state is a 64-bit head kept in `[2^32, 2^64)` plus a byte stack
//! holding renormalized 32-bit chunks. Encoding a symbol with frequency `f`
//! under multiplier `M` grows the state by `log2(M / f)` bits; decoding is the
//! exact inverse and pops symbols in reverse encode order.
//!
//! Decoding can also run "from fresh bits": when the tail runs dry during a
//! refill, chunks are drawn from an attached [`SeedSource`]. This is how the
//! bits-back coder samples latents before any payload exists. Without a seed
//! an empty tail is an [`Error::InitialBitsExhausted`].

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{corrupt, Error, Result};

/// Lower bound of the renormalization interval.
pub const RANS_L: u64 = 1 << 32;

/// Largest supported table precision.
pub const MAX_PRECISION: u32 = 16;

/// A discretized probability model over `0..alphabet_size`.
///
/// Invariants: every frequency is at least 1 and the frequencies sum to
/// `2^precision` exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodingTable {
    freqs: Vec<u32>,
    cumfreqs: Vec<u32>,
    precision: u32,
}

impl CodingTable {
    /// Builds a table from explicit frequencies.
    pub fn from_freqs(freqs: Vec<u32>, precision: u32) -> Result<Self> {
        check_precision(precision)?;
        if freqs.is_empty() {
            return Err(Error::Empty("coding table alphabet"));
        }
        let m = 1u64 << precision;
        if freqs.len() as u64 > m {
            return Err(Error::Capacity {
                alphabet: freqs.len(),
                precision,
            });
        }
        if freqs.contains(&0) {
            return Err(Error::Model("zero-frequency symbol".into()));
        }
        let total: u64 = freqs.iter().map(|&f| f as u64).sum();
        if total != m {
            return Err(Error::Model(format!(
                "frequencies sum to {total}, expected {m}"
            )));
        }
        let mut cumfreqs = Vec::with_capacity(freqs.len());
        let mut acc = 0u32;
        for &f in &freqs {
            cumfreqs.push(acc);
            acc += f;
        }
        Ok(Self {
            freqs,
            cumfreqs,
            precision,
        })
    }

    /// Quantizes a pmf to integer frequencies summing to `2^precision`.
    ///
    /// Each symbol first receives `max(1, floor(M p_i))`. A shortfall is handed
    /// out one unit at a time to the largest fractional remainders (ties go to
    /// the lower index); an excess caused by the minimum of 1 is taken back from
    /// the currently largest frequencies.
    pub fn from_pmf(pmf: &[f64], precision: u32) -> Result<Self> {
        check_precision(precision)?;
        if pmf.is_empty() {
            return Err(Error::Empty("pmf"));
        }
        let m = 1u64 << precision;
        if pmf.len() as u64 > m {
            return Err(Error::Capacity {
                alphabet: pmf.len(),
                precision,
            });
        }
        let mut sum = 0.0;
        for &p in pmf {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::Model(format!("invalid probability {p}")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Model(format!("pmf sums to {sum}")));
        }

        let scale = m as f64 / sum;
        let mut freqs = Vec::with_capacity(pmf.len());
        let mut remainders = Vec::with_capacity(pmf.len());
        let mut total = 0u64;
        for &p in pmf {
            let q = p * scale;
            let f = (q.floor() as u64).max(1);
            total += f;
            freqs.push(f as u32);
            remainders.push(q - f as f64);
        }

        if total < m {
            let deficit = (m - total) as usize;
            let mut order: Vec<u32> = (0..pmf.len() as u32).collect();
            let by_remainder = |a: &u32, b: &u32| {
                remainders[*b as usize]
                    .total_cmp(&remainders[*a as usize])
                    .then(a.cmp(b))
            };
            if deficit < order.len() {
                order.select_nth_unstable_by(deficit, by_remainder);
            }
            for &i in &order[..deficit] {
                freqs[i as usize] += 1;
            }
        } else if total > m {
            let mut heap: std::collections::BinaryHeap<(u32, std::cmp::Reverse<usize>)> = freqs
                .iter()
                .enumerate()
                .filter(|(_, &f)| f > 1)
                .map(|(i, &f)| (f, std::cmp::Reverse(i)))
                .collect();
            for _ in 0..(total - m) {
                let (f, std::cmp::Reverse(i)) = heap
                    .pop()
                    .ok_or_else(|| Error::Model("cannot apportion frequencies".into()))?;
                freqs[i] = f - 1;
                if f - 1 > 1 {
                    heap.push((f - 1, std::cmp::Reverse(i)));
                }
            }
        }
        Self::from_freqs(freqs, precision)
    }

    pub fn alphabet_size(&self) -> usize {
        self.freqs.len()
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    pub fn multiplier(&self) -> u64 {
        1 << self.precision
    }

    pub fn freqs(&self) -> &[u32] {
        &self.freqs
    }

    pub fn cumfreqs(&self) -> &[u32] {
        &self.cumfreqs
    }

    pub fn freq(&self, symbol: usize) -> u32 {
        self.freqs[symbol]
    }

    /// Probability the coder actually assigns to `symbol`.
    pub fn probability(&self, symbol: usize) -> f64 {
        self.freqs[symbol] as f64 / self.multiplier() as f64
    }

    /// Ideal code length of `symbol` in bits, `log2(M / f)`.
    pub fn cost_bits(&self, symbol: usize) -> f64 {
        self.precision as f64 - (self.freqs[symbol] as f64).log2()
    }

    /// Symbol whose slot range contains `r`, for `r < M`.
    pub fn symbol_for_slot(&self, r: u32) -> usize {
        self.cumfreqs.partition_point(|&b| b <= r) - 1
    }
}

/// Anything that maps symbols to slot ranges of `[0, 2^precision)`.
///
/// Ranges must be disjoint, nonempty and cover every slot. A model may
/// compute ranges on demand instead of storing a table.
pub trait SymbolModel {
    fn precision(&self) -> u32;

    /// `(start, freq)` of `symbol`.
    fn span(&self, symbol: usize) -> (u32, u32);

    /// `(symbol, start, freq)` of the range containing `slot`.
    fn locate(&self, slot: u32) -> (usize, u32, u32);

    /// Ideal code length of `symbol` in bits.
    fn cost_bits(&self, symbol: usize) -> f64 {
        self.precision() as f64 - (self.span(symbol).1 as f64).log2()
    }
}

impl SymbolModel for CodingTable {
    fn precision(&self) -> u32 {
        self.precision
    }

    fn span(&self, symbol: usize) -> (u32, u32) {
        (self.cumfreqs[symbol], self.freqs[symbol])
    }

    fn locate(&self, slot: u32) -> (usize, u32, u32) {
        let s = self.symbol_for_slot(slot);
        (s, self.cumfreqs[s], self.freqs[s])
    }

    fn cost_bits(&self, symbol: usize) -> f64 {
        CodingTable::cost_bits(self, symbol)
    }
}

pub(crate) fn check_precision(precision: u32) -> Result<()> {
    if precision == 0 || precision > MAX_PRECISION {
        return Err(Error::Config(format!(
            "table precision {precision} outside 1..={MAX_PRECISION}"
        )));
    }
    Ok(())
}

/// One rANS encode step without renormalization:
/// `s' = M * floor(s / f) + B + (s mod f)`.
pub fn encode_step(state: u64, symbol: usize, table: &CodingTable) -> u64 {
    let f = table.freqs[symbol] as u64;
    let b = table.cumfreqs[symbol] as u64;
    ((state / f) << table.precision) + b + state % f
}

/// One rANS decode step without renormalization; returns `(symbol, s')`.
pub fn decode_step(state: u64, table: &CodingTable) -> (usize, u64) {
    let mask = table.multiplier() - 1;
    let r = (state & mask) as u32;
    let symbol = table.symbol_for_slot(r);
    let f = table.freqs[symbol] as u64;
    let b = table.cumfreqs[symbol] as u64;
    (symbol, f * (state >> table.precision) + r as u64 - b)
}

/// Where fresh bits come from when a decode refill finds the tail empty.
///
/// Conceptually a seed is an infinitely deep tail below the real one. Chunks
/// are drawn in a fixed order, so the bits consumed can later be checked
/// with [`SeedSource::matches_residual`].
#[derive(Debug, Clone)]
pub enum SeedSource {
    /// Deterministic pseudo-random bits.
    Prng { seed: u64, rng: ChaCha8Rng },
    /// A finite byte string (for instance copied background streams).
    Bytes { data: Vec<u8>, pos: usize },
}

impl SeedSource {
    pub fn prng(seed: u64) -> Self {
        SeedSource::Prng {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn bytes(data: Vec<u8>) -> Self {
        SeedSource::Bytes { data, pos: 0 }
    }

    /// A fresh copy positioned at the first chunk.
    pub fn rewound(&self) -> Self {
        match self {
            SeedSource::Prng { seed, .. } => SeedSource::prng(*seed),
            SeedSource::Bytes { data, .. } => SeedSource::bytes(data.clone()),
        }
    }

    /// Total bits this source can provide, `None` when unbounded.
    pub fn capacity_bits(&self) -> Option<u64> {
        match self {
            SeedSource::Prng { .. } => None,
            SeedSource::Bytes { data, .. } => Some((data.len() / 4) as u64 * 32),
        }
    }

    fn next_chunk(&mut self) -> Option<u32> {
        match self {
            SeedSource::Prng { rng, .. } => Some(rng.next_u32()),
            SeedSource::Bytes { data, pos } => {
                let bytes = data.get(*pos..*pos + 4)?;
                *pos += 4;
                Some(u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]))
            }
        }
    }

    /// Rebuilds the state a decoder must end in after paying back every bit
    /// drawn from this seed: the seeded head plus `tail_chunks` chunks.
    pub fn replay(&self, tail_chunks: usize) -> Option<AnsState> {
        let mut src = self.rewound();
        let head = RANS_L | src.next_chunk()? as u64;
        let mut chunks = Vec::with_capacity(tail_chunks);
        for _ in 0..tail_chunks {
            chunks.push(src.next_chunk()?);
        }
        let mut tail = Vec::with_capacity(tail_chunks * 4);
        for c in chunks.iter().rev() {
            tail.extend_from_slice(&c.to_le_bytes());
        }
        Some(AnsState {
            head,
            tail,
            seed: None,
            drawn: 0,
            refills: 0,
        })
    }

    /// Whether `residual` is exactly the seed state restored by a decoder.
    pub fn matches_residual(&self, residual: &AnsState) -> bool {
        if !residual.tail.len().is_multiple_of(4) {
            return false;
        }
        match self.replay(residual.tail.len() / 4) {
            Some(expected) => expected.head == residual.head && expected.tail == residual.tail,
            None => false,
        }
    }
}

/// Entropy coder state: head word plus byte stack.
#[derive(Debug, Clone)]
pub struct AnsState {
    head: u64,
    tail: Vec<u8>,
    seed: Option<SeedSource>,
    /// Chunks drawn from the seed, including the one that formed the head.
    drawn: usize,
    /// Chunks drawn by decode refills only.
    refills: usize,
}

impl Default for AnsState {
    fn default() -> Self {
        Self::new()
    }
}

impl PartialEq for AnsState {
    fn eq(&self, other: &Self) -> bool {
        self.head == other.head && self.tail == other.tail
    }
}

impl AnsState {
    /// Empty state (head at the bottom of the renormalization interval).
    pub fn new() -> Self {
        Self {
            head: RANS_L,
            tail: Vec::new(),
            seed: None,
            drawn: 0,
            refills: 0,
        }
    }

    /// State whose head and refills come from `seed`.
    pub fn seeded(mut seed: SeedSource) -> Result<Self> {
        let c0 = seed
            .next_chunk()
            .ok_or(Error::InitialBitsExhausted { drawn_bytes: 0 })?;
        Ok(Self {
            head: RANS_L | c0 as u64,
            tail: Vec::new(),
            seed: Some(seed),
            drawn: 1,
            refills: 0,
        })
    }

    /// Attaches a seed that feeds refills once the tail is empty.
    pub fn with_seed(mut self, seed: SeedSource) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn head(&self) -> u64 {
        self.head
    }

    pub fn tail(&self) -> &[u8] {
        &self.tail
    }

    pub fn seed(&self) -> Option<&SeedSource> {
        self.seed.as_ref()
    }

    /// Bytes drawn from the attached seed so far.
    pub fn seed_bytes_drawn(&self) -> usize {
        self.drawn * 4
    }

    /// Information content of the state in bits, net of refill draws.
    ///
    /// Differences of this quantity across an operation equal the operation's
    /// code length up to a rounding error below `2^-15` bits.
    pub fn bit_length(&self) -> f64 {
        (self.head as f64).log2() + 8.0 * self.tail.len() as f64 - 32.0 * self.refills as f64
    }

    /// Size of [`AnsState::to_bytes`] in bits.
    pub fn serialized_bits(&self) -> u64 {
        64 + 8 * self.tail.len() as u64
    }

    pub fn encode(&mut self, symbol: usize, model: &impl SymbolModel) {
        let (start, freq) = model.span(symbol);
        let precision = model.precision();
        let x_max = ((RANS_L >> precision) as u128 * freq as u128) << 32;
        while self.head as u128 >= x_max {
            self.tail
                .extend_from_slice(&(self.head as u32).to_le_bytes());
            self.head >>= 32;
        }
        let f = freq as u64;
        self.head = ((self.head / f) << precision) + start as u64 + self.head % f;
    }

    pub fn decode(&mut self, model: &impl SymbolModel) -> Result<usize> {
        let precision = model.precision();
        let slot = (self.head & ((1u64 << precision) - 1)) as u32;
        let (symbol, start, freq) = model.locate(slot);
        self.head = freq as u64 * (self.head >> precision) + (slot - start) as u64;
        while self.head < RANS_L {
            let chunk = self.pop_chunk()?;
            self.head = (self.head << 32) | chunk as u64;
        }
        Ok(symbol)
    }

    fn pop_chunk(&mut self) -> Result<u32> {
        let n = self.tail.len();
        if n >= 4 {
            let c = u32::from_le_bytes([
                self.tail[n - 4],
                self.tail[n - 3],
                self.tail[n - 2],
                self.tail[n - 1],
            ]);
            self.tail.truncate(n - 4);
            return Ok(c);
        }
        if n != 0 {
            return Err(corrupt("tail is not chunk aligned"));
        }
        let drawn_bytes = self.seed_bytes_drawn();
        let seed = self
            .seed
            .as_mut()
            .ok_or(Error::InitialBitsExhausted { drawn_bytes })?;
        let c = seed
            .next_chunk()
            .ok_or(Error::InitialBitsExhausted { drawn_bytes })?;
        self.drawn += 1;
        self.refills += 1;
        Ok(c)
    }

    /// Big-endian head followed by tail bytes in pop order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.tail.len());
        out.extend_from_slice(&self.head.to_be_bytes());
        out.extend(self.tail.iter().rev());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(corrupt("ans stream shorter than its head"));
        }
        let head = u64::from_be_bytes(bytes[..8].try_into().expect("8 bytes"));
        if head < RANS_L {
            return Err(corrupt("ans head below renormalization interval"));
        }
        let rest = &bytes[8..];
        if !rest.len().is_multiple_of(4) {
            return Err(corrupt("ans tail is not chunk aligned"));
        }
        Ok(Self {
            head,
            tail: rest.iter().rev().copied().collect(),
            seed: None,
            drawn: 0,
            refills: 0,
        })
    }

    /// Whether this is the untouched empty state.
    pub fn is_empty_state(&self) -> bool {
        self.head == RANS_L && self.tail.is_empty()
    }
}
