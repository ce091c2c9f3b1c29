//! Simulation library for multi-cache systems whose caches advertise Bloom
//! filter indicators to clients.
//!
//! Clients learn how often indications are wrong, pick the cache subset with
//! the lowest expected service cost, and caches adapt indicator size, update
//! interval and advertisement mode to a bandwidth budget.

pub mod advertiser;
pub mod cache;
pub mod config;
pub mod estimator;
pub mod indicator;
pub mod report;
pub mod selection;
pub mod sim;
pub mod trace;
