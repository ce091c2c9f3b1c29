//! Request traces: file ingestion, synthetic Zipf workloads and summary stats.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use twox_hash::XxHash64;

/// Seed of the token-to-id hash. Changing it changes every file trace.
const KEY_HASH_SEED: u64 = 0x7472_6163_655f_6964;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read trace {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("trace {0} contains no requests")]
    Empty(String),
    #[error("invalid zipf parameters: {0}")]
    InvalidZipf(String),
}

/// Where a trace comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceSource {
    File {
        path: PathBuf,
    },
    Zipf {
        universe: u64,
        exponent: f64,
        length: usize,
        seed: u64,
    },
}

impl TraceSource {
    pub fn load(&self) -> Result<Vec<u64>, TraceError> {
        match self {
            TraceSource::File { path } => parse_trace(path),
            TraceSource::Zipf { universe, exponent, length, seed } => {
                generate_zipf(*universe, *exponent, *length, *seed)
            }
        }
    }
}

impl fmt::Display for TraceSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceSource::File { path } => write!(f, "file:{}", path.display()),
            TraceSource::Zipf { universe, exponent, length, seed } => {
                write!(f, "zipf:{universe},{exponent},{length},{seed}")
            }
        }
    }
}

/// Stable 64-bit id of a trace token.
pub fn key_id(token: &str) -> u64 {
    XxHash64::oneshot(KEY_HASH_SEED, token.as_bytes())
}

/// Parses trace text: one key per line, trimmed; blank lines and lines
/// starting with `#` are skipped.
pub fn parse_trace_str(text: &str) -> Vec<u64> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(key_id)
        .collect()
}

pub fn parse_trace(path: &Path) -> Result<Vec<u64>, TraceError> {
    let text = std::fs::read_to_string(path).map_err(|source| TraceError::Io { path: path.to_path_buf(), source })?;
    let keys = parse_trace_str(&text);
    if keys.is_empty() {
        return Err(TraceError::Empty(path.display().to_string()));
    }
    Ok(keys)
}

/// `length` i.i.d. ranks in `1..=universe` with `P(r)` proportional to `r^-exponent`.
pub fn generate_zipf(universe: u64, exponent: f64, length: usize, seed: u64) -> Result<Vec<u64>, TraceError> {
    if universe == 0 {
        return Err(TraceError::InvalidZipf("universe must be at least 1".into()));
    }
    if !(exponent > 0.0 && exponent.is_finite()) {
        return Err(TraceError::InvalidZipf(format!("exponent must be positive, got {exponent}")));
    }
    if length == 0 {
        return Err(TraceError::InvalidZipf("length must be at least 1".into()));
    }
    let dist = Zipf::new(universe as f64, exponent).map_err(|e| TraceError::InvalidZipf(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..length).map(|_| dist.sample(&mut rng) as u64).collect())
}

/// A trace with strong temporal locality: with probability `reuse` a request
/// repeats the one `r` steps back, `r` uniform in `1..=window`; otherwise it
/// asks for a key never seen before.
pub fn generate_recency(length: usize, reuse: f64, window: usize, seed: u64) -> Vec<u64> {
    assert!((0.0..=1.0).contains(&reuse) && window >= 1, "invalid recency parameters");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<u64> = Vec::with_capacity(length);
    let mut fresh = 0u64;
    for i in 0..length {
        if i > 0 && rng.random_bool(reuse) {
            let back = rng.random_range(1..=window.min(i));
            out.push(out[i - back]);
        } else {
            fresh += 1;
            out.push(fresh);
        }
    }
    out
}

/// Inter-arrival statistics over keys requested at least twice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub length: usize,
    pub distinct: usize,
    /// `None` when no key repeats.
    pub mean_inter_arrival: Option<f64>,
    /// Population standard deviation; `None` when no key repeats.
    pub stdev_inter_arrival: Option<f64>,
    /// Fraction of requests for keys that occur exactly once.
    pub singular_ratio: f64,
}

pub fn trace_stats(trace: &[u64]) -> TraceStats {
    let mut last: HashMap<u64, usize> = HashMap::new();
    let mut count: HashMap<u64, usize> = HashMap::new();
    let (mut n, mut sum, mut sum_sq) = (0u64, 0f64, 0f64);
    for (i, &k) in trace.iter().enumerate() {
        if let Some(prev) = last.insert(k, i) {
            let gap = (i - prev) as f64;
            n += 1;
            sum += gap;
            sum_sq += gap * gap;
        }
        *count.entry(k).or_default() += 1;
    }
    let singles = count.values().filter(|&&c| c == 1).count();
    let (mean, stdev) = if n == 0 {
        (None, None)
    } else {
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        (Some(mean), Some(var.sqrt()))
    };
    TraceStats {
        length: trace.len(),
        distinct: count.len(),
        mean_inter_arrival: mean,
        stdev_inter_arrival: stdev,
        singular_ratio: if trace.is_empty() { 0.0 } else { singles as f64 / trace.len() as f64 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::io::Write;

    #[test]
    fn three_lines_two_ids() {
        let t = parse_trace_str("a\nb\na");
        assert_eq!(t.len(), 3);
        assert_eq!(t[0], t[2]);
        assert_ne!(t[0], t[1]);
    }

    #[test]
    fn whitespace_comments_and_blanks() {
        let t = parse_trace_str("  a \n\n# note\n\tb\n#\na\n");
        assert_eq!(t, vec![key_id("a"), key_id("b"), key_id("a")]);
    }

    #[test]
    fn comment_only_file_is_empty_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# one\n# two\n\n").unwrap();
        assert!(matches!(parse_trace(f.path()), Err(TraceError::Empty(_))));
    }

    #[test]
    fn missing_file_reports_path() {
        let err = parse_trace(Path::new("/nonexistent/trace.txt")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/trace.txt"));
    }

    #[test]
    fn million_lines_distinct_count_matches_set() {
        let mut text = String::new();
        for i in 0..1_000_000u64 {
            text.push_str(&format!("item-{}\n", (i * 7919) % 250_013));
        }
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        let t = parse_trace(f.path()).unwrap();
        assert_eq!(t.len(), 1_000_000);
        let tokens: HashSet<&str> = text.lines().collect();
        let ids: HashSet<u64> = t.iter().copied().collect();
        assert_eq!(ids.len(), tokens.len());
    }

    #[test]
    fn zipf_universe_one_is_constant() {
        let t = generate_zipf(1, 1.2, 100, 3).unwrap();
        assert!(t.iter().all(|&k| k == 1));
    }

    #[test]
    fn zipf_rank_one_frequency() {
        let t = generate_zipf(10, 1.0, 1_000_000, 11).unwrap();
        let h10: f64 = (1..=10).map(|r| 1.0 / r as f64).sum();
        let freq = t.iter().filter(|&&k| k == 1).count() as f64 / t.len() as f64;
        assert!((freq - 1.0 / h10).abs() <= 0.01, "{freq} vs {}", 1.0 / h10);
        assert!(t.iter().all(|&k| (1..=10).contains(&k)));
    }

    #[test]
    fn zipf_is_seed_deterministic() {
        assert_eq!(generate_zipf(1000, 0.9, 5000, 8).unwrap(), generate_zipf(1000, 0.9, 5000, 8).unwrap());
        assert_ne!(generate_zipf(1000, 0.9, 5000, 8).unwrap(), generate_zipf(1000, 0.9, 5000, 9).unwrap());
    }

    #[test]
    fn zipf_rejects_bad_parameters() {
        assert!(generate_zipf(0, 1.0, 10, 0).is_err());
        assert!(generate_zipf(10, 0.0, 10, 0).is_err());
        assert!(generate_zipf(10, 1.0, 0, 0).is_err());
    }

    #[test]
    fn recency_trace_repeats_recent_keys() {
        let t = generate_recency(100_000, 0.7, 500, 4);
        assert_eq!(t, generate_recency(100_000, 0.7, 500, 4));
        let s = trace_stats(&t);
        // roughly 30% of requests introduce a key, and repeats come back fast
        assert!((s.distinct as f64 / 1e5 - 0.3).abs() < 0.01, "{}", s.distinct);
        assert!(s.mean_inter_arrival.unwrap() < 500.0);
        assert_eq!(generate_recency(10, 0.0, 5, 1), (1..=10).collect::<Vec<u64>>());
    }

    #[test]
    fn stats_abab() {
        let s = trace_stats(&parse_trace_str("a\nb\na\nb"));
        assert_eq!(s.mean_inter_arrival, Some(2.0));
        assert_eq!(s.stdev_inter_arrival, Some(0.0));
        assert_eq!(s.singular_ratio, 0.0);
    }

    #[test]
    fn stats_all_distinct() {
        let s = trace_stats(&[1, 2, 3, 4]);
        assert_eq!(s.mean_inter_arrival, None);
        assert_eq!(s.stdev_inter_arrival, None);
        assert_eq!(s.singular_ratio, 1.0);
    }

    #[test]
    fn stats_aaa() {
        let s = trace_stats(&[5, 5, 5]);
        assert_eq!(s.mean_inter_arrival, Some(1.0));
        assert_eq!(s.singular_ratio, 0.0);
    }

    #[test]
    fn stats_mixed_against_hand_count() {
        // a x b a c b: gaps a=3, b=3; x and c single
        let s = trace_stats(&parse_trace_str("a\nx\nb\na\nc\nb"));
        assert_eq!(s.mean_inter_arrival, Some(3.0));
        assert!((s.singular_ratio - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(s.distinct, 4);
    }

    #[test]
    fn source_display_and_json() {
        let z = TraceSource::Zipf { universe: 100, exponent: 0.9, length: 10, seed: 1 };
        assert_eq!(z.to_string(), "zipf:100,0.9,10,1");
        let back: TraceSource = serde_json::from_str(&serde_json::to_string(&z).unwrap()).unwrap();
        assert_eq!(back, z);
    }
}
