//! Windowed EWMA estimation of exclusion probabilities.
//!
//! A cache keeps one positive (`mrone`) and one negative (`mrzero`) estimate
//! per number of positive indications the client saw for the request,
//! `0..=N`. Regular accesses (positive indication) feed `mrone`, speculative
//! accesses (negative indication) feed `mrzero`. Once a counter reaches the
//! window size the estimate moves toward the window's observed miss ratio:
//!
//! ```text
//! est[i] <- delta * misses[i] / accesses[i] + (1 - delta) * est[i]
//! ```
//!
//! `mrzero` is periodically clamped to its initial value so that clients keep
//! an incentive to access speculatively.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Clamp epochs last this many update intervals, measured in insertions.
pub const CLAMP_EPOCH_INTERVALS: u64 = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("positive-indication count {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("{name} must lie in {range}, got {value}")]
    InvalidParameter {
        name: &'static str,
        range: &'static str,
        value: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorParams {
    pub delta_mrone: f64,
    pub delta_mrzero: f64,
    pub mrone_init: f64,
    pub mrzero_init: f64,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        Self {
            delta_mrone: 0.5,
            delta_mrzero: 0.25,
            mrone_init: 0.001,
            mrzero_init: 0.08,
        }
    }
}

impl EstimatorParams {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let open = |name, value: f64| {
            if value > 0.0 && value < 1.0 {
                Ok(())
            } else {
                Err(EstimatorError::InvalidParameter { name, range: "(0, 1)", value })
            }
        };
        let closed = |name, value: f64| {
            if (0.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(EstimatorError::InvalidParameter { name, range: "[0, 1]", value })
            }
        };
        open("delta_mrone", self.delta_mrone)?;
        open("delta_mrzero", self.delta_mrzero)?;
        closed("mrone_init", self.mrone_init)?;
        closed("mrzero_init", self.mrzero_init)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateKind {
    Positive,
    Negative,
}

/// A changed estimate, broadcast to clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateUpdate {
    pub kind: EstimateKind,
    pub index: usize,
    pub value: f64,
}

/// Window length for an update interval: `ceil(0.1 * u)`, at least 1.
pub fn window_for_interval(update_interval: u64) -> u64 {
    update_interval.div_ceil(10).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExclusionEstimates {
    mrone: Vec<f64>,
    mrzero: Vec<f64>,
    reg_accs: Vec<u64>,
    fp: Vec<u64>,
    spec_accs: Vec<u64>,
    tn: Vec<u64>,
    window: u64,
    params: EstimatorParams,
    since_clamp: u64,
}

impl ExclusionEstimates {
    /// Estimates for a system of `num_caches` caches (indices `0..=num_caches`).
    pub fn new(num_caches: usize, params: EstimatorParams, update_interval: u64) -> Result<Self, EstimatorError> {
        params.validate()?;
        let n = num_caches + 1;
        Ok(Self {
            mrone: vec![params.mrone_init; n],
            mrzero: vec![params.mrzero_init; n],
            reg_accs: vec![0; n],
            fp: vec![0; n],
            spec_accs: vec![0; n],
            tn: vec![0; n],
            window: window_for_interval(update_interval),
            params,
            since_clamp: 0,
        })
    }

    pub fn mrone(&self) -> &[f64] {
        &self.mrone
    }

    pub fn mrzero(&self) -> &[f64] {
        &self.mrzero
    }

    pub fn window_size(&self) -> u64 {
        self.window
    }

    pub fn params(&self) -> &EstimatorParams {
        &self.params
    }

    pub fn regular_counts(&self) -> (&[u64], &[u64]) {
        (&self.reg_accs, &self.fp)
    }

    pub fn speculative_counts(&self) -> (&[u64], &[u64]) {
        (&self.spec_accs, &self.tn)
    }

    fn check_index(&self, i: usize) -> Result<(), EstimatorError> {
        if i >= self.mrone.len() {
            return Err(EstimatorError::IndexOutOfRange { index: i, max: self.mrone.len() - 1 });
        }
        Ok(())
    }

    /// Adopts the window for a new update interval. Pending counters carry
    /// over; any that already fill the shorter window are folded in now.
    pub fn set_update_interval(&mut self, update_interval: u64) -> Vec<EstimateUpdate> {
        self.window = window_for_interval(update_interval);
        let mut out = Vec::new();
        for i in 0..self.mrone.len() {
            if self.reg_accs[i] >= self.window {
                out.push(self.fold_positive(i));
            }
            if self.spec_accs[i] >= self.window {
                out.push(self.fold_negative(i));
            }
        }
        out
    }

    pub fn record_regular_access(&mut self, i: usize, was_miss: bool) -> Result<Option<EstimateUpdate>, EstimatorError> {
        self.check_index(i)?;
        self.reg_accs[i] += 1;
        self.fp[i] += was_miss as u64;
        Ok((self.reg_accs[i] >= self.window).then(|| self.fold_positive(i)))
    }

    pub fn record_speculative_access(
        &mut self,
        i: usize,
        was_true_negative: bool,
    ) -> Result<Option<EstimateUpdate>, EstimatorError> {
        self.check_index(i)?;
        self.spec_accs[i] += 1;
        self.tn[i] += was_true_negative as u64;
        Ok((self.spec_accs[i] >= self.window).then(|| self.fold_negative(i)))
    }

    fn fold_positive(&mut self, i: usize) -> EstimateUpdate {
        let ratio = self.fp[i] as f64 / self.reg_accs[i] as f64;
        let d = self.params.delta_mrone;
        self.mrone[i] = d * ratio + (1.0 - d) * self.mrone[i];
        self.reg_accs[i] = 0;
        self.fp[i] = 0;
        EstimateUpdate { kind: EstimateKind::Positive, index: i, value: self.mrone[i] }
    }

    fn fold_negative(&mut self, i: usize) -> EstimateUpdate {
        let ratio = self.tn[i] as f64 / self.spec_accs[i] as f64;
        let d = self.params.delta_mrzero;
        self.mrzero[i] = d * ratio + (1.0 - d) * self.mrzero[i];
        self.spec_accs[i] = 0;
        self.tn[i] = 0;
        EstimateUpdate { kind: EstimateKind::Negative, index: i, value: self.mrzero[i] }
    }

    /// `mrzero[i] <- min(mrzero[i], mrzero_init)` for every `i`; returns the
    /// entries that changed.
    pub fn clamp(&mut self) -> Vec<EstimateUpdate> {
        let init = self.params.mrzero_init;
        let mut out = Vec::new();
        for (i, v) in self.mrzero.iter_mut().enumerate() {
            if *v > init {
                *v = init;
                out.push(EstimateUpdate { kind: EstimateKind::Negative, index: i, value: init });
            }
        }
        out
    }

    /// Counts one insertion toward the clamp epoch of
    /// `CLAMP_EPOCH_INTERVALS * update_interval` insertions, clamping when it
    /// completes.
    pub fn on_insertion(&mut self, update_interval: u64) -> Option<Vec<EstimateUpdate>> {
        self.since_clamp += 1;
        if self.since_clamp >= CLAMP_EPOCH_INTERVALS * update_interval.max(1) {
            self.since_clamp = 0;
            Some(self.clamp())
        } else {
            None
        }
    }

    /// Zeroes the speculative-access counters, which measure staleness of an
    /// indicator that was just replaced.
    pub fn reset_staleness_counters(&mut self) {
        self.spec_accs.iter_mut().for_each(|c| *c = 0);
        self.tn.iter_mut().for_each(|c| *c = 0);
    }

    /// A copy of both estimate vectors, as sent to clients.
    pub fn snapshot(&self) -> EstimateTable {
        EstimateTable { mrone: self.mrone.clone(), mrzero: self.mrzero.clone() }
    }
}

/// Client-side copy of one cache's estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateTable {
    pub mrone: Vec<f64>,
    pub mrzero: Vec<f64>,
}

impl EstimateTable {
    pub fn apply(&mut self, update: &EstimateUpdate) {
        match update.kind {
            EstimateKind::Positive => self.mrone[update.index] = update.value,
            EstimateKind::Negative => self.mrzero[update.index] = update.value,
        }
    }
}
