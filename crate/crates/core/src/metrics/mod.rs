//! Post-run analysis of execution traces.
//!
//! Sync events are grouped by `(primitive, epoch)`, where the epoch is the
//! acquisition number granted under the primitive's guard. Grouping this way
//! pairs a release with the entry it enabled without relying on timestamps
//! taken on different workers being ordered.

mod affinity;
mod cs;
mod delay;

use std::collections::HashMap;

pub use self::affinity::{validate_affinity, AffinityEntry, AffinityReport, AffinityTrace, ResourceAffinity};
pub use self::cs::{cs_length_stats, CsLengthStats, HistogramBucket};
pub use self::delay::{handoff_gaps, measure_queuing_delay, DelayReport, DelaySample};

use crate::runtime::{SyncEvent, SyncEventKind, Trace};
use crate::sync::PrimitiveId;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("trace contains no dispatch events; was the run traced with the dispatch policy?")]
    NoDispatchEvents,
    #[error("trace contains no critical-section events")]
    NoCsEvents,
    #[error("primitive {prim}: acquisition {epoch} has an {kind} event without its counterpart")]
    Unmatched {
        prim: PrimitiveId,
        epoch: u64,
        kind: &'static str,
    },
}

/// Events of one acquisition of one primitive.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Acquisition<'a> {
    pub(crate) enter: Option<&'a SyncEvent>,
    pub(crate) exit: Option<&'a SyncEvent>,
    pub(crate) dispatch: Option<&'a SyncEvent>,
    pub(crate) handoff: Option<&'a SyncEvent>,
}

impl Acquisition<'_> {
    /// Ownership was passed to a queued waiter rather than taken on a free
    /// primitive.
    pub(crate) fn contended(&self) -> bool {
        self.dispatch.is_some() || self.handoff.is_some()
    }
}

/// Index of all acquisitions in a trace, keyed by `(primitive, epoch)`.
pub(crate) fn acquisitions(trace: &Trace) -> HashMap<(PrimitiveId, u64), Acquisition<'_>> {
    let mut map: HashMap<(PrimitiveId, u64), Acquisition<'_>> = HashMap::new();
    for e in trace.sync_events() {
        if e.kind == SyncEventKind::Enq {
            continue;
        }
        let a = map.entry((e.prim, e.epoch)).or_default();
        match e.kind {
            SyncEventKind::Enter => a.enter = Some(e),
            SyncEventKind::Exit => a.exit = Some(e),
            SyncEventKind::Dispatch => a.dispatch = Some(e),
            SyncEventKind::Handoff => a.handoff = Some(e),
            SyncEventKind::Enq => unreachable!(),
        }
    }
    map
}

/// Linearly interpolated quantile of sorted data, `q` in `[0, 1]`.
pub fn quantile(sorted: &[u64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0] as f64,
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            sorted[lo] as f64 + (sorted[hi] as f64 - sorted[lo] as f64) * frac
        }
    }
}

/// Median of unsorted data; NaN when empty.
pub fn median(values: &[u64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    quantile(&v, 0.5)
}
