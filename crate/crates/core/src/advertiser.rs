//! Per-cache advertisement state machine.
//!
//! In full-indicator mode a cache advertises its whole indicator, scaling the
//! indicator up when positive indications are unreliable and down (advertising
//! more often) when negative indications are. Before each advertisement it
//! checks whether switching to delta updates would cost fewer bits over the
//! next synchronization period. In delta mode it sends the flipped bits every
//! `min_interval` insertions and a full synchronization indicator every
//! `sync_factor * u` insertions, where `u` is the full-mode interval in force
//! when delta mode was entered, resizing the indicator so the
//! estimated bandwidth approaches the budget, or returning to full mode when
//! even the smallest indicator would exceed it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::LruCache;
use crate::estimator::ExclusionEstimates;
use crate::indicator::{
    optimal_hash_count, position_width, DeltaUpdate, HashFamily, Indicator, IndicatorError, LiveIndicator, SizeRange,
    DELTA_COUNT_BITS, FULL_HEADER_BITS,
};

/// Multiplicative step of one scale-up or scale-down.
pub const SCALE_STEP: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdvertiserError {
    #[error(transparent)]
    Indicator(#[from] IndicatorError),
    #[error("{name} must be {requirement}, got {value}")]
    InvalidParameter {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    Delta,
}

/// How a cache decides when and what to advertise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvertisePolicy {
    /// Size, interval and mode all adapt to the workload.
    Adaptive,
    /// A full indicator of constant size every `interval` insertions.
    Fixed { interval: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvertiserParams {
    /// Bandwidth budget `B` in advertised bits per insertion.
    pub budget: f64,
    pub min_interval: u64,
    pub sync_factor: u64,
    pub clamp_factor: u64,
    pub mrone_threshold: f64,
    pub mrzero_threshold: f64,
    pub size_range: SizeRange,
    /// Cache capacity in items; sets bits per element for the hash count.
    pub capacity: usize,
    pub hash_seed: u64,
}

impl AdvertiserParams {
    pub fn validate(&self) -> Result<(), AdvertiserError> {
        let bad = |name, requirement, value: f64| Err(AdvertiserError::InvalidParameter { name, requirement, value });
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return bad("budget", "positive", self.budget);
        }
        if self.min_interval == 0 {
            return bad("min_interval", "at least 1", 0.0);
        }
        if self.sync_factor == 0 {
            return bad("sync_factor", "at least 1", 0.0);
        }
        if self.clamp_factor == 0 {
            return bad("clamp_factor", "at least 1", 0.0);
        }
        if self.capacity == 0 {
            return bad("capacity", "positive", 0.0);
        }
        if self.size_range.min < 2 || self.size_range.min > self.size_range.max {
            return bad("size_range.min", "at least 2 and at most size_range.max", self.size_range.min as f64);
        }
        if self.size_range.max > u32::MAX as usize {
            return bad("size_range.max", "below 2^32", self.size_range.max as f64);
        }
        Ok(())
    }

    /// Hash count for an indicator of `size_bits` bits over a full cache.
    pub fn hashes_for(&self, size_bits: usize) -> u32 {
        optimal_hash_count(size_bits as f64 / self.capacity as f64)
    }

    /// `floor(size / B)`, at least 1.
    pub fn interval_for(&self, size_bits: usize) -> u64 {
        ((size_bits as f64 / self.budget).floor() as u64).max(1)
    }
}

/// Why a full indicator went out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FullReason {
    ScaleUp,
    ScaleDown,
    Clamp,
    Sync,
    Interval,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Advertisement {
    Full {
        indicator: Indicator,
        reason: FullReason,
    },
    Delta {
        update: DeltaUpdate,
        /// First delta after leaving full mode.
        entering: bool,
    },
}

impl Advertisement {
    /// Bits charged against the budget.
    pub fn payload_bits(&self) -> u64 {
        match self {
            Advertisement::Full { indicator, .. } => indicator.size_bits() as u64,
            Advertisement::Delta { update, .. } => update.payload_bits(),
        }
    }

    pub fn framing_bits(&self) -> u64 {
        match self {
            Advertisement::Full { .. } => FULL_HEADER_BITS,
            Advertisement::Delta { .. } => DELTA_COUNT_BITS,
        }
    }

    pub fn is_full(&self) -> bool {
        matches!(self, Advertisement::Full { .. })
    }
}

/// Running totals of advertised bits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitsLedger {
    pub full_bits: u64,
    pub delta_payload_bits: u64,
    pub framing_bits: u64,
    pub full_count: u64,
    pub delta_count: u64,
}

impl BitsLedger {
    /// Bits counted against the budget: full indicators plus delta payloads.
    pub fn budget_bits(&self) -> u64 {
        self.full_bits + self.delta_payload_bits
    }

    pub fn advertisement_count(&self) -> u64 {
        self.full_count + self.delta_count
    }

    fn charge(&mut self, ad: &Advertisement) {
        match ad {
            Advertisement::Full { indicator, .. } => {
                self.full_bits += indicator.size_bits() as u64;
                self.full_count += 1;
            }
            Advertisement::Delta { update, .. } => {
                self.delta_payload_bits += update.payload_bits();
                self.delta_count += 1;
            }
        }
        self.framing_bits += ad.framing_bits();
    }
}

/// True iff `R * D * ceil(log2 I) + I < R * I`: one synchronization period of
/// delta updates plus one full indicator beats `R` full indicators.
pub fn xmt_delta_is_cheaper(size_bits: usize, diff: usize, sync_factor: u64) -> bool {
    let size = size_bits as u128;
    let r = sync_factor as u128;
    let width = position_width(size_bits) as u128;
    r * diff as u128 * width + size < r * size
}

/// Estimated bits per insertion of running delta mode with a
/// `candidate`-bit indicator when the current indicator has `current` bits
/// and delta updates have averaged `avg_diff` flipped bits:
/// `(I_j / (I * u_min)) * D * ceil(log2 I_j) + I_j / (R * u)`.
pub fn estimated_bw(
    candidate: usize,
    current: usize,
    avg_diff: f64,
    min_interval: u64,
    sync_factor: u64,
    update_interval: u64,
) -> f64 {
    let ij = candidate as f64;
    let i = current as f64;
    let width = position_width(candidate) as f64;
    (ij / (i * min_interval as f64)) * avg_diff * width + ij / (sync_factor as f64 * update_interval as f64)
}

/// Geometric ladder `min * 1.1^k` capped at `max`, as integers without repeats.
pub fn candidate_sizes(range: SizeRange) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    let mut k = 0;
    loop {
        let size = (range.min as f64 * SCALE_STEP.powi(k)).round() as usize;
        if size >= range.max {
            break;
        }
        if out.last() != Some(&size) {
            out.push(size);
        }
        k += 1;
    }
    out.push(range.max);
    out
}

/// The candidate whose bandwidth is closest to `budget`; ties go to the smaller size.
pub fn closest_to_budget(candidates: &[usize], budget: f64, bw: impl Fn(usize) -> f64) -> usize {
    let mut best = candidates[0];
    let mut best_gap = (bw(best) - budget).abs();
    for &c in &candidates[1..] {
        let gap = (bw(c) - budget).abs();
        if gap < best_gap || (gap == best_gap && c < best) {
            best = c;
            best_gap = gap;
        }
    }
    best
}

pub fn scale_up(size_bits: usize, range: SizeRange) -> usize {
    range.clamp(((size_bits as f64 * SCALE_STEP).round() as usize).min(range.max))
}

pub fn scale_down(size_bits: usize, range: SizeRange) -> usize {
    range.clamp(((size_bits as f64 / SCALE_STEP).round() as usize).max(range.min))
}

#[derive(Debug, Clone)]
pub struct Advertiser {
    params: AdvertiserParams,
    policy: AdvertisePolicy,
    mode: Mode,
    size_bits: usize,
    update_interval: u64,
    sync_interval: u64,
    ins_cnt: u64,
    period_ins_cnt: u64,
    stale: Indicator,
    live: LiveIndicator,
    ledger: BitsLedger,
    period_diff_sum: u64,
    period_diff_count: u64,
    last_full_mode_diff: usize,
}

impl Advertiser {
    /// Starts with an empty cache whose empty indicator clients already hold.
    pub fn new(
        params: AdvertiserParams,
        policy: AdvertisePolicy,
        initial_size: usize,
        initial_interval: u64,
    ) -> Result<Self, AdvertiserError> {
        params.validate()?;
        params.size_range.check(initial_size)?;
        if initial_interval == 0 {
            return Err(AdvertiserError::InvalidParameter {
                name: "initial_interval",
                requirement: "at least 1",
                value: 0.0,
            });
        }
        if let AdvertisePolicy::Fixed { interval: 0 } = policy {
            return Err(AdvertiserError::InvalidParameter {
                name: "fixed interval",
                requirement: "at least 1",
                value: 0.0,
            });
        }
        let family = HashFamily::new(initial_size, params.hashes_for(initial_size), params.hash_seed)?;
        let live = LiveIndicator::new(family);
        let update_interval = match policy {
            AdvertisePolicy::Adaptive => initial_interval,
            AdvertisePolicy::Fixed { interval } => interval,
        };
        Ok(Self {
            params,
            policy,
            mode: Mode::Full,
            size_bits: initial_size,
            update_interval,
            sync_interval: update_interval,
            ins_cnt: 0,
            period_ins_cnt: 0,
            stale: live.current().clone(),
            live,
            ledger: BitsLedger::default(),
            period_diff_sum: 0,
            period_diff_count: 0,
            last_full_mode_diff: 0,
        })
    }

    pub fn params(&self) -> &AdvertiserParams {
        &self.params
    }

    pub fn policy(&self) -> AdvertisePolicy {
        self.policy
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn size_bits(&self) -> usize {
        self.size_bits
    }

    pub fn update_interval(&self) -> u64 {
        self.update_interval
    }

    /// The full-mode update interval: the current one in full mode, the one in
    /// force when delta mode was entered otherwise. A synchronization period
    /// lasts `sync_factor` of these.
    pub fn full_interval(&self) -> u64 {
        match self.mode {
            Mode::Full => self.update_interval,
            Mode::Delta => self.sync_interval,
        }
    }

    /// Insertions since the last advertisement.
    pub fn ins_cnt(&self) -> u64 {
        self.ins_cnt
    }

    pub fn period_ins_cnt(&self) -> u64 {
        self.period_ins_cnt
    }

    /// The last advertised indicator.
    pub fn stale_indicator(&self) -> &Indicator {
        &self.stale
    }

    /// The indicator the cache's current contents would produce.
    pub fn current_indicator(&self) -> &Indicator {
        self.live.current()
    }

    pub fn ledger(&self) -> &BitsLedger {
        &self.ledger
    }

    /// Bits flipped since the last advertisement.
    pub fn current_diff(&self) -> usize {
        self.stale
            .diff_count(self.live.current())
            .expect("stale and live indicators always share a size")
    }

    /// Handles a new item entering the cache (and the item it displaced).
    ///
    /// `cache` must already reflect the insertion.
    pub fn on_insertion(
        &mut self,
        key: u64,
        evicted: Option<u64>,
        cache: &LruCache,
        est: &mut ExclusionEstimates,
    ) -> Result<Vec<Advertisement>, AdvertiserError> {
        if let Some(old) = evicted {
            self.live.remove(old);
        }
        self.live.add(key);
        self.ins_cnt += 1;
        match (self.policy, self.mode) {
            (AdvertisePolicy::Fixed { interval }, _) => {
                if self.ins_cnt >= interval {
                    return Ok(vec![self.advertise_full(cache, est, FullReason::Interval)?]);
                }
                Ok(Vec::new())
            }
            (AdvertisePolicy::Adaptive, Mode::Full) => self.on_insert_full(cache, est),
            (AdvertisePolicy::Adaptive, Mode::Delta) => {
                self.period_ins_cnt += 1;
                self.on_insert_delta(cache, est)
            }
        }
    }

    fn on_insert_full(
        &mut self,
        cache: &LruCache,
        est: &mut ExclusionEstimates,
    ) -> Result<Vec<Advertisement>, AdvertiserError> {
        if self.ins_cnt == self.update_interval {
            let diff = self.current_diff();
            if xmt_delta_is_cheaper(self.size_bits, diff, self.params.sync_factor) {
                self.mode = Mode::Delta;
                self.sync_interval = self.update_interval;
                self.update_interval = self.params.min_interval;
                self.last_full_mode_diff = diff;
                let ad = self.emit_delta(true)?;
                self.ins_cnt = 0;
                self.period_ins_cnt = 0;
                self.period_diff_sum = 0;
                self.period_diff_count = 0;
                return Ok(vec![ad]);
            }
        } else if self.ins_cnt > self.params.clamp_factor * self.update_interval {
            return Ok(vec![self.advertise_full(cache, est, FullReason::Clamp)?]);
        }
        Ok(Vec::new())
    }

    fn on_insert_delta(
        &mut self,
        cache: &LruCache,
        est: &mut ExclusionEstimates,
    ) -> Result<Vec<Advertisement>, AdvertiserError> {
        let p = &self.params;
        if self.period_ins_cnt == p.sync_factor * self.sync_interval {
            let avg = self.average_delta_diff();
            let bw_at = |candidate| {
                estimated_bw(candidate, self.size_bits, avg, p.min_interval, p.sync_factor, self.sync_interval)
            };
            if bw_at(p.size_range.min) <= p.budget {
                self.size_bits = closest_to_budget(&candidate_sizes(p.size_range), p.budget, bw_at);
            } else {
                self.mode = Mode::Full;
                self.update_interval = p.interval_for(self.size_bits);
            }
            self.period_ins_cnt = 0;
            self.period_diff_sum = 0;
            self.period_diff_count = 0;
            return Ok(vec![self.advertise_full(cache, est, FullReason::Sync)?]);
        }
        if self.ins_cnt.is_multiple_of(p.min_interval) {
            let ad = self.emit_delta(false)?;
            if let Advertisement::Delta { update, .. } = &ad {
                self.period_diff_sum += update.len() as u64;
                self.period_diff_count += 1;
            }
            return Ok(vec![ad]);
        }
        Ok(Vec::new())
    }

    /// Mean flipped bits per delta over the current period, falling back to
    /// the diff measured when delta mode was entered.
    pub fn average_delta_diff(&self) -> f64 {
        if self.period_diff_count > 0 {
            self.period_diff_sum as f64 / self.period_diff_count as f64
        } else {
            self.last_full_mode_diff as f64
        }
    }

    /// Handles a client access to this cache for a request with `k` positive
    /// indications. Only acts in adaptive full mode.
    pub fn on_access(
        &mut self,
        k: usize,
        cache: &LruCache,
        est: &mut ExclusionEstimates,
    ) -> Result<Option<Advertisement>, AdvertiserError> {
        if self.policy != AdvertisePolicy::Adaptive || self.mode != Mode::Full {
            return Ok(None);
        }
        if self.ins_cnt <= self.update_interval {
            return Ok(None);
        }
        let range = self.params.size_range;
        let reason = if est.mrone()[k] > self.params.mrone_threshold {
            self.size_bits = scale_up(self.size_bits, range);
            FullReason::ScaleUp
        } else if est.mrzero()[k] < self.params.mrzero_threshold {
            self.size_bits = scale_down(self.size_bits, range);
            FullReason::ScaleDown
        } else {
            return Ok(None);
        };
        self.update_interval = self.params.interval_for(self.size_bits);
        self.advertise_full(cache, est, reason).map(Some)
    }

    fn emit_delta(&mut self, entering: bool) -> Result<Advertisement, AdvertiserError> {
        let update = self.stale.diff(self.live.current())?;
        self.stale = self.live.current().clone();
        let ad = Advertisement::Delta { update, entering };
        self.ledger.charge(&ad);
        Ok(ad)
    }

    /// Rebuilds the indicator from `cache` at the current size and advertises it.
    pub fn advertise_full(
        &mut self,
        cache: &LruCache,
        est: &mut ExclusionEstimates,
        reason: FullReason,
    ) -> Result<Advertisement, AdvertiserError> {
        let hashes = self.params.hashes_for(self.size_bits);
        let fresh = Indicator::build(cache.iter(), self.size_bits, hashes, self.params.hash_seed, self.params.size_range)?;
        if fresh.family() != self.live.family() {
            self.live = LiveIndicator::from_items(fresh.family(), cache.iter());
        }
        debug_assert_eq!(self.live.current(), &fresh, "live indicator drifted from cache contents");
        self.stale = fresh.clone();
        self.ins_cnt = 0;
        est.reset_staleness_counters();
        let ad = Advertisement::Full { indicator: fresh, reason };
        self.ledger.charge(&ad);
        Ok(ad)
    }
}
