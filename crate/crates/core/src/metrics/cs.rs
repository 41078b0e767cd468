use std::collections::HashMap;

use super::{acquisitions, quantile, MetricsError};
use crate::clock;
use crate::runtime::Trace;
use crate::sync::PrimitiveId;

/// Histogram bucket covering `[lo_ns, hi_ns)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HistogramBucket {
    pub lo_ns: u64,
    pub hi_ns: u64,
    pub count: usize,
}

/// Distribution of critical-section durations.
#[derive(Clone, Debug, PartialEq)]
pub struct CsLengthStats {
    pub count: usize,
    pub median_ns: f64,
    pub p95_ns: f64,
    /// Power-of-two buckets from the first to the last non-empty one.
    pub histogram: Vec<HistogramBucket>,
}

fn bucket_index(ns: u64) -> usize {
    (u64::BITS - ns.leading_zeros()) as usize
}

fn bucket_bounds(i: usize) -> (u64, u64) {
    match i {
        0 => (0, 1),
        64 => (1 << 63, u64::MAX),
        i => (1 << (i - 1), 1 << i),
    }
}

impl CsLengthStats {
    pub fn from_durations(mut durations: Vec<u64>) -> Result<Self, MetricsError> {
        if durations.is_empty() {
            return Err(MetricsError::NoCsEvents);
        }
        durations.sort_unstable();
        let mut counts = [0usize; 65];
        for &d in &durations {
            counts[bucket_index(d)] += 1;
        }
        let first = bucket_index(durations[0]);
        let last = bucket_index(*durations.last().unwrap());
        let histogram = (first..=last)
            .map(|i| {
                let (lo_ns, hi_ns) = bucket_bounds(i);
                HistogramBucket {
                    lo_ns,
                    hi_ns,
                    count: counts[i],
                }
            })
            .collect();
        Ok(CsLengthStats {
            count: durations.len(),
            median_ns: quantile(&durations, 0.5),
            p95_ns: quantile(&durations, 0.95),
            histogram,
        })
    }
}

/// Enter-to-exit durations of every acquisition of `prims` (all primitives
/// if empty), minus the clock's read overhead.
///
/// Only primitives that record the exiting holder's own acquisition number
/// can be paired, i.e. mutexes and reader-writer mutexes.
pub fn cs_length_stats(trace: &Trace, prims: &[PrimitiveId]) -> Result<CsLengthStats, MetricsError> {
    let overhead = clock::overhead_ns();
    let mut durations = Vec::new();
    let acq: HashMap<_, _> = acquisitions(trace)
        .into_iter()
        .filter(|((p, _), _)| prims.is_empty() || prims.contains(p))
        .collect();
    for ((prim, epoch), a) in acq {
        match (a.enter, a.exit) {
            (Some(enter), Some(exit)) => {
                durations.push(exit.t_ns.saturating_sub(enter.t_ns).saturating_sub(overhead))
            }
            (None, None) => {}
            (Some(_), None) => {
                return Err(MetricsError::Unmatched {
                    prim,
                    epoch,
                    kind: "enter",
                })
            }
            (None, Some(_)) => {
                return Err(MetricsError::Unmatched {
                    prim,
                    epoch,
                    kind: "exit",
                })
            }
        }
    }
    CsLengthStats::from_durations(durations)
}
