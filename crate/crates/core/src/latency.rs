//! Latency and throughput summaries for the online query path.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};

use crate::corpus::nearest_rank_sorted;

/// How queries were driven during the timed phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveMode {
    /// One query in flight at a time.
    Sequential,
    /// A fixed number of concurrent in-flight queries.
    Concurrent,
}

impl fmt::Display for DriveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriveMode::Sequential => f.write_str("sequential"),
            DriveMode::Concurrent => f.write_str("concurrent"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub qps: f64,
    /// Successfully timed queries.
    pub n_queries: usize,
    pub warmup_count: usize,
    pub failures: usize,
    pub mode: DriveMode,
    pub concurrency: usize,
    /// Wall time of the timed phase.
    pub wall_ms: f64,
    /// Per-query latencies in completion order.
    pub latencies_ms: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failure_messages: Vec<String>,
}

/// Nearest-rank percentile of unsorted samples; `0.0` when empty.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    nearest_rank_sorted(&sorted, p)
}

impl LatencyReport {
    /// Summarises a timed phase. `wall_ms` covers the timed phase only.
    pub fn from_samples(
        latencies_ms: Vec<f64>,
        wall_ms: f64,
        warmup_count: usize,
        failure_messages: Vec<String>,
        mode: DriveMode,
        concurrency: usize,
    ) -> Self {
        let n = latencies_ms.len();
        let qps = if wall_ms > 0.0 {
            n as f64 / (wall_ms / 1000.0)
        } else {
            0.0
        };
        Self {
            p50_ms: percentile(&latencies_ms, 50.0),
            p95_ms: percentile(&latencies_ms, 95.0),
            qps,
            n_queries: n,
            warmup_count,
            failures: failure_messages.len(),
            mode,
            concurrency,
            wall_ms,
            latencies_ms,
            failure_messages,
        }
    }

    pub fn is_partial(&self) -> bool {
        self.failures > 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn single_sample() {
        let r = LatencyReport::from_samples(vec![42.0], 42.0, 5, vec![], DriveMode::Sequential, 1);
        assert_eq!((r.p50_ms, r.p95_ms), (42.0, 42.0));
    }

    #[test]
    fn qps_definition() {
        let r = LatencyReport::from_samples(vec![500.0; 10], 5000.0, 0, vec![], DriveMode::Sequential, 1);
        assert_eq!(r.qps, 2.0);
    }

    #[test]
    fn nearest_rank_values() {
        let s: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&s, 50.0), 10.0);
        assert_eq!(percentile(&s, 95.0), 19.0);
        assert_eq!(percentile(&s, 100.0), 20.0);
    }

    proptest! {
        #[test]
        fn ordered_and_recomputable(s in prop::collection::vec(0.0f64..1e4, 1..200)) {
            let r = LatencyReport::from_samples(s.clone(), 1.0, 0, vec![], DriveMode::Sequential, 1);
            prop_assert!(r.p50_ms <= r.p95_ms);
            prop_assert_eq!(percentile(&r.latencies_ms, 50.0), r.p50_ms);
            prop_assert_eq!(percentile(&r.latencies_ms, 95.0), r.p95_ms);
        }
    }
}
