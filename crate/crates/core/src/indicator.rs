//! Simple Bloom filter indicators and their advertisement wire formats.
//!
//! An [`Indicator`] summarizes the keys held by one cache. Caches advertise
//! either the whole bit array or a [`DeltaUpdate`] listing the positions that
//! flipped since the previous advertisement.
//!
//! Wire formats, all big-endian and packed MSB-first:
//!
//! ```text
//! full:  [size_bits: u32][num_hashes: u8][hash_seed: u64][bit array, zero-padded]
//! delta: [count: u32][count x position fields of ceil(log2(size_bits)) bits, zero-padded]
//! ```
//!
//! Message lengths are reported in bits without the trailing pad.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use twox_hash::XxHash64;

/// Upper bound on the number of probes per key.
pub const MAX_HASHES: u32 = 16;

/// Header bits of a full advertisement (size, hash count, seed).
pub const FULL_HEADER_BITS: u64 = 32 + 8 + 64;

/// Count prefix of a delta update.
pub const DELTA_COUNT_BITS: u64 = 32;

const SECOND_HASH_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IndicatorError {
    #[error("indicator size {size} bits is outside the configured range [{min}, {max}]")]
    SizeOutOfRange { size: usize, min: usize, max: usize },
    #[error("indicator size must be between 1 and 2^32-1 bits, got {0}")]
    InvalidSize(usize),
    #[error("hash count {0} is outside [1, {MAX_HASHES}]")]
    InvalidHashCount(u32),
    #[error("indicator size mismatch: {expected} bits expected, {actual} bits given")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("delta position {position} is out of range for a {size}-bit indicator")]
    PositionOutOfRange { position: u32, size: usize },
    #[error("delta positions must be strictly increasing (at index {0})")]
    UnorderedPositions(usize),
    #[error("message truncated: {needed} bits needed, {available} available")]
    Truncated { needed: u64, available: u64 },
}

/// Inclusive bounds on feasible indicator sizes, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeRange {
    pub min: usize,
    pub max: usize,
}

impl SizeRange {
    pub fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, size: usize) -> bool {
        (self.min..=self.max).contains(&size)
    }

    pub fn clamp(&self, size: usize) -> usize {
        size.clamp(self.min, self.max)
    }

    pub fn check(&self, size: usize) -> Result<(), IndicatorError> {
        if self.contains(size) {
            Ok(())
        } else {
            Err(IndicatorError::SizeOutOfRange {
                size,
                min: self.min,
                max: self.max,
            })
        }
    }
}

/// `round(bits_per_element * ln 2)`, kept within `[1, MAX_HASHES]`.
pub fn optimal_hash_count(bits_per_element: f64) -> u32 {
    let k = (bits_per_element * std::f64::consts::LN_2).round();
    if k.is_nan() || k < 1.0 {
        1
    } else if k > MAX_HASHES as f64 {
        MAX_HASHES
    } else {
        k as u32
    }
}

/// Width in bits of one encoded position for an indicator of `size` bits,
/// i.e. `ceil(log2(size))`.
pub fn position_width(size: usize) -> u32 {
    if size <= 1 {
        0
    } else {
        usize::BITS - (size - 1).leading_zeros()
    }
}

/// Seeded double hashing: probe `i` lands on `(h1 + i * h2) mod size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashFamily {
    size_bits: usize,
    num_hashes: u32,
    seed: u64,
}

impl HashFamily {
    pub fn new(size_bits: usize, num_hashes: u32, seed: u64) -> Result<Self, IndicatorError> {
        if size_bits == 0 || size_bits > u32::MAX as usize {
            return Err(IndicatorError::InvalidSize(size_bits));
        }
        if !(1..=MAX_HASHES).contains(&num_hashes) {
            return Err(IndicatorError::InvalidHashCount(num_hashes));
        }
        Ok(Self {
            size_bits,
            num_hashes,
            seed,
        })
    }

    pub fn size_bits(&self) -> usize {
        self.size_bits
    }

    pub fn num_hashes(&self) -> u32 {
        self.num_hashes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn positions(&self, key: u64) -> impl Iterator<Item = usize> {
        let bytes = key.to_le_bytes();
        let h1 = XxHash64::oneshot(self.seed, &bytes);
        let h2 = XxHash64::oneshot(self.seed ^ SECOND_HASH_SALT, &bytes) | 1;
        let size = self.size_bits as u64;
        (0..self.num_hashes as u64).map(move |i| (h1.wrapping_add(i.wrapping_mul(h2)) % size) as usize)
    }
}

/// A fixed-size Bloom filter over 64-bit keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Indicator {
    family: HashFamily,
    words: Vec<u64>,
}

impl Indicator {
    /// An indicator with every bit cleared.
    pub fn empty(size_bits: usize, num_hashes: u32, hash_seed: u64) -> Result<Self, IndicatorError> {
        let family = HashFamily::new(size_bits, num_hashes, hash_seed)?;
        Ok(Self::with_family(family))
    }

    fn with_family(family: HashFamily) -> Self {
        Self {
            words: vec![0; family.size_bits.div_ceil(64)],
            family,
        }
    }

    /// Builds an indicator of `size_bits` bits from `items`; the size must lie in `range`.
    pub fn build<I>(
        items: I,
        size_bits: usize,
        num_hashes: u32,
        hash_seed: u64,
        range: SizeRange,
    ) -> Result<Self, IndicatorError>
    where
        I: IntoIterator<Item = u64>,
    {
        range.check(size_bits)?;
        let mut ind = Self::empty(size_bits, num_hashes, hash_seed)?;
        for key in items {
            ind.insert(key);
        }
        Ok(ind)
    }

    /// An indicator whose set bits are exactly `positions`.
    pub fn from_positions<I>(
        size_bits: usize,
        num_hashes: u32,
        hash_seed: u64,
        positions: I,
    ) -> Result<Self, IndicatorError>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut ind = Self::empty(size_bits, num_hashes, hash_seed)?;
        for p in positions {
            if p >= size_bits {
                return Err(IndicatorError::PositionOutOfRange {
                    position: p as u32,
                    size: size_bits,
                });
            }
            ind.set(p);
        }
        Ok(ind)
    }

    pub fn family(&self) -> HashFamily {
        self.family
    }

    pub fn size_bits(&self) -> usize {
        self.family.size_bits
    }

    pub fn num_hashes(&self) -> u32 {
        self.family.num_hashes
    }

    pub fn hash_seed(&self) -> u64 {
        self.family.seed
    }

    pub fn insert(&mut self, key: u64) {
        let family = self.family;
        for p in family.positions(key) {
            self.set(p);
        }
    }

    /// True iff every probed bit for `key` is set.
    pub fn query(&self, key: u64) -> bool {
        self.family.positions(key).all(|p| self.get(p))
    }

    pub fn get(&self, pos: usize) -> bool {
        self.words[pos / 64] >> (pos % 64) & 1 == 1
    }

    fn set(&mut self, pos: usize) {
        self.words[pos / 64] |= 1 << (pos % 64);
    }

    fn toggle(&mut self, pos: usize) {
        self.words[pos / 64] ^= 1 << (pos % 64);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn check_same_size(&self, other: &Indicator) -> Result<(), IndicatorError> {
        if self.size_bits() != other.size_bits() {
            return Err(IndicatorError::SizeMismatch {
                expected: self.size_bits(),
                actual: other.size_bits(),
            });
        }
        Ok(())
    }

    /// Number of positions where `self` and `other` differ.
    pub fn diff_count(&self, other: &Indicator) -> Result<usize, IndicatorError> {
        self.check_same_size(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// The positions that must be toggled to turn `self` (stale) into `fresh`.
    pub fn diff(&self, fresh: &Indicator) -> Result<DeltaUpdate, IndicatorError> {
        self.check_same_size(fresh)?;
        let mut positions = Vec::new();
        for (w, (a, b)) in self.words.iter().zip(&fresh.words).enumerate() {
            let mut x = a ^ b;
            while x != 0 {
                let bit = x.trailing_zeros() as usize;
                positions.push((w * 64 + bit) as u32);
                x &= x - 1;
            }
        }
        Ok(DeltaUpdate {
            positions,
            reference_size: self.size_bits() as u32,
        })
    }

    /// Toggles every position listed in `delta`.
    pub fn apply_delta(&mut self, delta: &DeltaUpdate) -> Result<(), IndicatorError> {
        if delta.reference_size() != self.size_bits() {
            return Err(IndicatorError::SizeMismatch {
                expected: self.size_bits(),
                actual: delta.reference_size(),
            });
        }
        for &p in &delta.positions {
            self.toggle(p as usize);
        }
        Ok(())
    }

    pub fn with_delta(&self, delta: &DeltaUpdate) -> Result<Indicator, IndicatorError> {
        let mut out = self.clone();
        out.apply_delta(delta)?;
        Ok(out)
    }

    /// Bit length of the full advertisement, header included.
    pub fn encoded_bits(&self) -> u64 {
        FULL_HEADER_BITS + self.size_bits() as u64
    }

    pub fn encode(&self) -> EncodedMessage {
        let mut w = BitWriter::default();
        w.push(self.size_bits() as u64, 32);
        w.push(self.num_hashes() as u64, 8);
        w.push(self.hash_seed(), 64);
        for i in 0..self.size_bits() {
            w.push(self.get(i) as u64, 1);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Indicator, IndicatorError> {
        let mut r = BitReader::new(bytes);
        let size = r.take(32)? as usize;
        let hashes = r.take(8)? as u32;
        let seed = r.take(64)?;
        let mut ind = Indicator::empty(size, hashes, seed)?;
        r.ensure(size as u64)?;
        for i in 0..size {
            if r.take(1)? == 1 {
                ind.set(i);
            }
        }
        Ok(ind)
    }
}

/// Positions flipped between two equal-size indicators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaUpdate {
    positions: Vec<u32>,
    reference_size: u32,
}

impl DeltaUpdate {
    pub fn new(positions: Vec<u32>, reference_size: usize) -> Result<Self, IndicatorError> {
        if reference_size == 0 || reference_size > u32::MAX as usize {
            return Err(IndicatorError::InvalidSize(reference_size));
        }
        for (i, &p) in positions.iter().enumerate() {
            if p as usize >= reference_size {
                return Err(IndicatorError::PositionOutOfRange {
                    position: p,
                    size: reference_size,
                });
            }
            if i > 0 && positions[i - 1] >= p {
                return Err(IndicatorError::UnorderedPositions(i));
            }
        }
        Ok(Self {
            positions,
            reference_size: reference_size as u32,
        })
    }

    pub fn empty(reference_size: usize) -> Result<Self, IndicatorError> {
        Self::new(Vec::new(), reference_size)
    }

    pub fn positions(&self) -> &[u32] {
        &self.positions
    }

    pub fn reference_size(&self) -> usize {
        self.reference_size as usize
    }

    /// Number of flipped bits.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `len * ceil(log2(reference_size))`, the priced part of the message.
    pub fn payload_bits(&self) -> u64 {
        self.positions.len() as u64 * position_width(self.reference_size()) as u64
    }

    pub fn encoded_bits(&self) -> u64 {
        DELTA_COUNT_BITS + self.payload_bits()
    }

    pub fn encode(&self) -> EncodedMessage {
        let width = position_width(self.reference_size());
        let mut w = BitWriter::default();
        w.push(self.positions.len() as u64, 32);
        for &p in &self.positions {
            w.push(p as u64, width);
        }
        w.finish()
    }

    /// Decodes a delta addressed at a `reference_size`-bit indicator; the
    /// size is not carried on the wire.
    pub fn decode(bytes: &[u8], reference_size: usize) -> Result<DeltaUpdate, IndicatorError> {
        let width = position_width(reference_size);
        let mut r = BitReader::new(bytes);
        let count = r.take(32)?;
        r.ensure(count * width as u64)?;
        let positions = (0..count)
            .map(|_| r.take(width).map(|v| v as u32))
            .collect::<Result<Vec<_>, _>>()?;
        DeltaUpdate::new(positions, reference_size)
    }
}

/// A serialized advertisement: bytes padded to a byte boundary plus the
/// exact unpadded bit length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedMessage {
    pub bytes: Vec<u8>,
    pub bit_len: u64,
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    bit_len: u64,
}

impl BitWriter {
    fn push(&mut self, value: u64, width: u32) {
        for i in (0..width).rev() {
            let bit = (value >> i) & 1;
            let offset = (self.bit_len % 8) as u32;
            if offset == 0 {
                self.bytes.push(0);
            }
            if bit == 1 {
                *self.bytes.last_mut().unwrap() |= 0x80 >> offset;
            }
            self.bit_len += 1;
        }
    }

    fn finish(self) -> EncodedMessage {
        EncodedMessage {
            bytes: self.bytes,
            bit_len: self.bit_len,
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn available(&self) -> u64 {
        self.bytes.len() as u64 * 8 - self.pos
    }

    fn ensure(&self, bits: u64) -> Result<(), IndicatorError> {
        if bits > self.available() {
            return Err(IndicatorError::Truncated {
                needed: bits,
                available: self.available(),
            });
        }
        Ok(())
    }

    fn take(&mut self, width: u32) -> Result<u64, IndicatorError> {
        self.ensure(width as u64)?;
        let mut v = 0u64;
        for _ in 0..width {
            let byte = self.bytes[(self.pos / 8) as usize];
            let bit = (byte >> (7 - (self.pos % 8))) & 1;
            v = (v << 1) | bit as u64;
            self.pos += 1;
        }
        Ok(v)
    }
}

/// Tracks the indicator a cache would build from its current contents,
/// updated incrementally on every insertion and eviction.
///
/// Each bit carries the number of resident keys probing it, so removals clear
/// exactly the bits a rebuild would leave clear.
#[derive(Debug, Clone)]
pub struct LiveIndicator {
    counts: Vec<u32>,
    bits: Indicator,
}

impl LiveIndicator {
    pub fn new(family: HashFamily) -> Self {
        Self {
            counts: vec![0; family.size_bits()],
            bits: Indicator::with_family(family),
        }
    }

    pub fn from_items<I: IntoIterator<Item = u64>>(family: HashFamily, items: I) -> Self {
        let mut live = Self::new(family);
        for key in items {
            live.add(key);
        }
        live
    }

    pub fn family(&self) -> HashFamily {
        self.bits.family
    }

    pub fn add(&mut self, key: u64) {
        let family = self.bits.family;
        for p in family.positions(key) {
            self.counts[p] += 1;
            if self.counts[p] == 1 {
                self.bits.set(p);
            }
        }
    }

    pub fn remove(&mut self, key: u64) {
        let family = self.bits.family;
        for p in family.positions(key) {
            debug_assert!(self.counts[p] > 0, "removing a key that was never added");
            self.counts[p] -= 1;
            if self.counts[p] == 0 {
                self.bits.toggle(p);
            }
        }
    }

    pub fn current(&self) -> &Indicator {
        &self.bits
    }
}
