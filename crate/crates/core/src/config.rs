//! System configuration.
//!
//! Per-cache vectors left out of a config are derived from the capacities:
//! initial indicator size `14 * C`, initial interval `0.1 * C` (rounded),
//! size range `[4 * C, 28 * C]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advertiser::{AdvertisePolicy, AdvertiserParams};
use crate::estimator::EstimatorParams;
use crate::indicator::SizeRange;
use crate::selection::{SelectionAlgorithm, EXHAUSTIVE_LIMIT};

pub const INITIAL_BITS_PER_ITEM: usize = 14;
pub const SIZE_MIN_BITS_PER_ITEM: usize = 4;
pub const SIZE_MAX_BITS_PER_ITEM: usize = 28;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid config: {field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Adaptive size, interval and delta mode.
    #[default]
    Salsa2,
    /// Initial size and interval forever, full indicators only.
    Static,
}

/// How the client picks caches for a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientMode {
    /// Minimum expected cost subset.
    #[default]
    Selection,
    /// Every positive cache plus one uniformly random negative cache, with
    /// ground-truth estimate tracking for comparison.
    Testbed,
}

fn d_mrone() -> f64 {
    0.5
}
fn d_mrzero() -> f64 {
    0.25
}
fn mrone_th() -> f64 {
    0.01
}
fn mrzero_th() -> f64 {
    0.88
}
fn mrone_init() -> f64 {
    0.001
}
fn mrzero_init() -> f64 {
    0.08
}
fn clamp_factor() -> u64 {
    2
}
fn sync_factor() -> u64 {
    10
}
fn budget() -> f64 {
    140.0
}
fn one() -> u64 {
    1
}
fn check_sync() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub num_caches: usize,
    /// Items per cache.
    pub capacities: Vec<usize>,
    pub access_costs: Vec<f64>,
    pub miss_penalty: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_size_bits: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_interval: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_min: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_max: Option<Vec<usize>>,
    /// Bits per insertion, per cache.
    #[serde(default = "budget")]
    pub budget: f64,
    #[serde(default = "one")]
    pub min_interval: u64,
    #[serde(default = "d_mrone")]
    pub delta_mrone: f64,
    #[serde(default = "d_mrzero")]
    pub delta_mrzero: f64,
    #[serde(default = "mrone_th")]
    pub mrone_threshold: f64,
    #[serde(default = "mrzero_th")]
    pub mrzero_threshold: f64,
    #[serde(default = "mrone_init")]
    pub mrone_init: f64,
    #[serde(default = "mrzero_init")]
    pub mrzero_init: f64,
    #[serde(default = "clamp_factor")]
    pub clamp_factor: u64,
    #[serde(default = "sync_factor")]
    pub sync_factor: u64,
    #[serde(default)]
    pub delta_loss_probability: f64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub selection: SelectionAlgorithm,
    #[serde(default)]
    pub policy: Policy,
    #[serde(default)]
    pub client: ClientMode,
    /// Compare client copies with the advertised indicators after every
    /// delivered advertisement.
    #[serde(default = "check_sync")]
    pub check_sync: bool,
}

impl SystemConfig {
    /// A config with every optional field at its default.
    pub fn new(capacities: Vec<usize>, access_costs: Vec<f64>, miss_penalty: f64) -> Self {
        Self {
            num_caches: capacities.len(),
            capacities,
            access_costs,
            miss_penalty,
            initial_size_bits: None,
            initial_interval: None,
            size_min: None,
            size_max: None,
            budget: budget(),
            min_interval: 1,
            delta_mrone: d_mrone(),
            delta_mrzero: d_mrzero(),
            mrone_threshold: mrone_th(),
            mrzero_threshold: mrzero_th(),
            mrone_init: mrone_init(),
            mrzero_init: mrzero_init(),
            clamp_factor: clamp_factor(),
            sync_factor: sync_factor(),
            delta_loss_probability: 0.0,
            rng_seed: 0,
            selection: SelectionAlgorithm::Exhaustive,
            policy: Policy::Salsa2,
            client: ClientMode::Selection,
            check_sync: true,
        }
    }

    /// Fills every derived per-cache vector.
    pub fn resolved(&self) -> Self {
        let caps = &self.capacities;
        let per = |v: &Option<Vec<usize>>, f: &dyn Fn(usize) -> usize| {
            Some(v.clone().unwrap_or_else(|| caps.iter().map(|&c| f(c)).collect()))
        };
        Self {
            initial_size_bits: per(&self.initial_size_bits, &|c| INITIAL_BITS_PER_ITEM * c),
            size_min: per(&self.size_min, &|c| SIZE_MIN_BITS_PER_ITEM * c),
            size_max: per(&self.size_max, &|c| SIZE_MAX_BITS_PER_ITEM * c),
            initial_interval: Some(
                self.initial_interval
                    .clone()
                    .unwrap_or_else(|| caps.iter().map(|&c| ((c as f64 * 0.1).round() as u64).max(1)).collect()),
            ),
            ..self.clone()
        }
    }

    pub fn estimator_params(&self) -> EstimatorParams {
        EstimatorParams {
            delta_mrone: self.delta_mrone,
            delta_mrzero: self.delta_mrzero,
            mrone_init: self.mrone_init,
            mrzero_init: self.mrzero_init,
        }
    }

    pub fn initial_size(&self, j: usize) -> usize {
        match &self.initial_size_bits {
            Some(v) => v[j],
            None => INITIAL_BITS_PER_ITEM * self.capacities[j],
        }
    }

    pub fn initial_interval_of(&self, j: usize) -> u64 {
        match &self.initial_interval {
            Some(v) => v[j],
            None => ((self.capacities[j] as f64 * 0.1).round() as u64).max(1),
        }
    }

    pub fn size_range(&self, j: usize) -> SizeRange {
        let c = self.capacities[j];
        let min = self.size_min.as_ref().map_or(SIZE_MIN_BITS_PER_ITEM * c, |v| v[j]);
        let max = self.size_max.as_ref().map_or(SIZE_MAX_BITS_PER_ITEM * c, |v| v[j]);
        SizeRange::new(min, max)
    }

    /// Advertiser parameters of cache `j`. Each cache hashes with its own seed.
    pub fn advertiser_params(&self, j: usize) -> AdvertiserParams {
        AdvertiserParams {
            budget: self.budget,
            min_interval: self.min_interval,
            sync_factor: self.sync_factor,
            clamp_factor: self.clamp_factor,
            mrone_threshold: self.mrone_threshold,
            mrzero_threshold: self.mrzero_threshold,
            size_range: self.size_range(j),
            capacity: self.capacities[j],
            hash_seed: self.rng_seed.wrapping_add(j as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        }
    }

    pub fn advertise_policy(&self, j: usize) -> AdvertisePolicy {
        match self.policy {
            Policy::Salsa2 => AdvertisePolicy::Adaptive,
            Policy::Static => AdvertisePolicy::Fixed { interval: self.initial_interval_of(j) },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.num_caches;
        if n == 0 {
            return Err(ConfigError::new("num_caches", "must be at least 1"));
        }
        if self.selection == SelectionAlgorithm::Exhaustive && n > EXHAUSTIVE_LIMIT {
            return Err(ConfigError::new(
                "num_caches",
                format!("exhaustive selection supports at most {EXHAUSTIVE_LIMIT} caches"),
            ));
        }
        let check_len = |field: &str, len: Option<usize>| match len {
            Some(l) if l != n => Err(ConfigError::new(field, format!("expected {n} entries, got {l}"))),
            _ => Ok(()),
        };
        check_len("capacities", Some(self.capacities.len()))?;
        check_len("access_costs", Some(self.access_costs.len()))?;
        check_len("initial_size_bits", self.initial_size_bits.as_ref().map(Vec::len))?;
        check_len("initial_interval", self.initial_interval.as_ref().map(Vec::len))?;
        check_len("size_min", self.size_min.as_ref().map(Vec::len))?;
        check_len("size_max", self.size_max.as_ref().map(Vec::len))?;
        if let Some(j) = self.capacities.iter().position(|&c| c == 0) {
            return Err(ConfigError::new(format!("capacities[{j}]"), "must be positive"));
        }
        if let Some(j) = self.access_costs.iter().position(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(ConfigError::new(format!("access_costs[{j}]"), "must be positive"));
        }
        let max_cost = self.access_costs.iter().copied().fold(0.0, f64::max);
        if !(self.miss_penalty > max_cost && self.miss_penalty.is_finite()) {
            return Err(ConfigError::new(
                "miss_penalty",
                format!("must exceed the largest access cost {max_cost}, got {}", self.miss_penalty),
            ));
        }
        if let Some(j) = self.initial_interval.iter().flatten().position(|&u| u == 0) {
            return Err(ConfigError::new(format!("initial_interval[{j}]"), "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.delta_loss_probability) {
            return Err(ConfigError::new("delta_loss_probability", "must lie in [0, 1]"));
        }
        for (field, v) in [("mrone_threshold", self.mrone_threshold), ("mrzero_threshold", self.mrzero_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::new(field, "must lie in [0, 1]"));
            }
        }
        self.estimator_params().validate().map_err(|e| match e {
            crate::estimator::EstimatorError::InvalidParameter { name, .. } => ConfigError::new(name, e.to_string()),
            other => ConfigError::new("estimator", other.to_string()),
        })?;
        for j in 0..n {
            let params = self.advertiser_params(j);
            params.validate().map_err(|e| ConfigError::new(format!("cache {j}"), e.to_string()))?;
            let size = self.initial_size(j);
            if !params.size_range.contains(size) {
                return Err(ConfigError::new(
                    format!("initial_size_bits[{j}]"),
                    format!("{size} outside [{}, {}]", params.size_range.min, params.size_range.max),
                ));
            }
        }
        Ok(())
    }
}
