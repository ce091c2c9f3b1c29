//! Simulation reports and tidy CSV output.
//!
//! `report.json` holds the whole [`SimReport`] including the resolved config,
//! so a run can be repeated from its report. The CSV forms are flat: a
//! summary row per run, and one row per event for the optional logs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::advertiser::{FullReason, Mode};
use crate::config::SystemConfig;
use crate::sim::{AdKind, AdRecord, RequestRecord, TestbedSample};
use crate::trace::TraceSource;

/// Full advertisements by trigger.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FullCounts {
    pub scale_up: u64,
    pub scale_down: u64,
    pub clamp: u64,
    pub sync: u64,
    pub interval: u64,
}

impl FullCounts {
    pub fn add(&mut self, reason: FullReason) {
        match reason {
            FullReason::ScaleUp => self.scale_up += 1,
            FullReason::ScaleDown => self.scale_down += 1,
            FullReason::Clamp => self.clamp += 1,
            FullReason::Sync => self.sync += 1,
            FullReason::Interval => self.interval += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.scale_up + self.scale_down + self.clamp + self.sync + self.interval
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheReport {
    pub index: usize,
    pub full_ads: FullCounts,
    pub delta_ads: u64,
    pub dropped_deltas: u64,
    /// Fraction of requests after which the cache was in delta mode.
    pub delta_mode_fraction: f64,
    pub budget_bits: u64,
    pub framing_bits: u64,
    pub insertions: u64,
    pub final_mode: Mode,
    pub final_size_bits: usize,
    pub final_update_interval: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SystemConfig,
    pub trace: Option<TraceSource>,
    pub request_count: u64,
    /// Realized cost per request: access costs plus the penalty on a miss.
    pub mean_service_cost: f64,
    /// Same metric for the perfect-indicator replica.
    pub oracle_mean_service_cost: f64,
    pub normalized_service_cost: f64,
    /// Full indicator bits plus delta payload bits, over all caches, per request.
    pub bits_per_request: f64,
    pub framing_bits_per_request: f64,
    pub budget_bits: u64,
    pub framing_bits: u64,
    pub hits: u64,
    pub misses: u64,
    /// Positive indications for absent keys, over all caches and requests.
    pub false_positives: u64,
    /// Negative indications for cached keys, over all caches and requests.
    pub false_negatives: u64,
    pub insertions: u64,
    /// Advertisement events after which a client copy differed from the
    /// cache's last advertised indicator.
    pub sync_violations: u64,
    pub caches: Vec<CacheReport>,
}

pub const SUMMARY_COLUMNS: &[&str] = &[
    "request_count",
    "mean_service_cost",
    "oracle_mean_service_cost",
    "normalized_service_cost",
    "bits_per_request",
    "framing_bits_per_request",
    "budget_bits",
    "framing_bits",
    "hits",
    "misses",
    "false_positives",
    "false_negatives",
    "insertions",
    "full_ads",
    "delta_ads",
    "dropped_deltas",
    "sync_violations",
];

impl SimReport {
    pub fn with_trace(mut self, source: TraceSource) -> Self {
        self.trace = Some(source);
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn summary_values(&self) -> Vec<String> {
        let full: u64 = self.caches.iter().map(|c| c.full_ads.total()).sum();
        let delta: u64 = self.caches.iter().map(|c| c.delta_ads).sum();
        let dropped: u64 = self.caches.iter().map(|c| c.dropped_deltas).sum();
        vec![
            self.request_count.to_string(),
            self.mean_service_cost.to_string(),
            self.oracle_mean_service_cost.to_string(),
            self.normalized_service_cost.to_string(),
            self.bits_per_request.to_string(),
            self.framing_bits_per_request.to_string(),
            self.budget_bits.to_string(),
            self.framing_bits.to_string(),
            self.hits.to_string(),
            self.misses.to_string(),
            self.false_positives.to_string(),
            self.false_negatives.to_string(),
            self.insertions.to_string(),
            full.to_string(),
            delta.to_string(),
            dropped.to_string(),
            self.sync_violations.to_string(),
        ]
    }

    /// Summary row followed by one row per cache.
    pub fn to_csv(&self) -> String {
        let mut s = SUMMARY_COLUMNS.join(",");
        s.push('\n');
        s.push_str(&self.summary_values().join(","));
        s.push_str("\n\ncache,full_scale_up,full_scale_down,full_clamp,full_sync,full_interval,delta_ads,dropped_deltas,delta_mode_fraction,budget_bits,framing_bits,insertions,final_mode,final_size_bits,final_update_interval\n");
        for c in &self.caches {
            let f = &c.full_ads;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.index,
                f.scale_up,
                f.scale_down,
                f.clamp,
                f.sync,
                f.interval,
                c.delta_ads,
                c.dropped_deltas,
                c.delta_mode_fraction,
                c.budget_bits,
                c.framing_bits,
                c.insertions,
                mode_name(c.final_mode),
                c.final_size_bits,
                c.final_update_interval
            );
        }
        s
    }
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Full => "full",
        Mode::Delta => "delta",
    }
}

fn reason_name(r: Option<FullReason>) -> &'static str {
    match r {
        None => "",
        Some(FullReason::ScaleUp) => "scale_up",
        Some(FullReason::ScaleDown) => "scale_down",
        Some(FullReason::Clamp) => "clamp",
        Some(FullReason::Sync) => "sync",
        Some(FullReason::Interval) => "interval",
    }
}

pub fn requests_csv(records: &[RequestRecord]) -> String {
    let mut s = String::from("index,key,positives,accessed,hit,cost,pif_cost\n");
    for r in records {
        let accessed: Vec<String> = r.accessed.iter().map(usize::to_string).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.index,
            r.key,
            r.positives,
            accessed.join(";"),
            r.hit as u8,
            r.cost,
            r.pif_cost
        );
    }
    s
}

pub fn ads_csv(records: &[AdRecord]) -> String {
    let mut s = String::from("request,cache,kind,reason,size_bits,flipped,payload_bits,framing_bits,delivered,insertions\n");
    for r in records {
        let kind = match r.kind {
            AdKind::Full => "full",
            AdKind::Delta => "delta",
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.request,
            r.cache,
            kind,
            reason_name(r.reason),
            r.size_bits,
            r.flipped,
            r.payload_bits,
            r.framing_bits,
            r.delivered as u8,
            r.insertions
        );
    }
    s
}

/// One row per (window, cache, estimate kind, positive count).
pub fn testbed_csv(samples: &[TestbedSample]) -> String {
    let mut s = String::from("request,cache,kind,positives,full_know,estimate\n");
    for t in samples {
        for (i, (fk, est)) in t.full_know.mrone.iter().zip(&t.estimate.mrone).enumerate() {
            let _ = writeln!(s, "{},{},mrone,{},{},{}", t.request, t.cache, i, fk, est);
        }
        for (i, (fk, est)) in t.full_know.mrzero.iter().zip(&t.estimate.mrzero).enumerate() {
            let _ = writeln!(s, "{},{},mrzero,{},{},{}", t.request, t.cache, i, fk, est);
        }
    }
    s
}
