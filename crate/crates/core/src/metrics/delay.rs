use std::collections::HashMap;
use std::io;
use std::path::Path;

use serde::Serialize;

use super::{acquisitions, quantile, MetricsError};
use crate::runtime::{SyncEvent, SyncEventKind, Trace};
use crate::sync::PrimitiveId;
use crate::task::TaskId;

/// Delays around one dispatched hand-over.
///
/// `t_sync` runs from the releasing task's exit to the waiter being
/// scheduled; `t_queue` from being scheduled to entering the critical
/// section. `delta_t_opt` is their sum, the time the section stood empty
/// although a waiter existed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DelaySample {
    pub mutex_id: PrimitiveId,
    pub task_id: TaskId,
    pub t_sync_ns: u64,
    pub t_queue_ns: u64,
    pub delta_t_opt_ns: u64,
}

#[derive(Clone, Debug)]
pub struct DelayReport {
    pub samples: Vec<DelaySample>,
    pub median_t_queue_ns: f64,
    pub p95_t_queue_ns: f64,
    pub max_t_queue_ns: u64,
    pub median_t_sync_ns: f64,
    pub median_delta_t_opt_ns: f64,
}

#[derive(Serialize)]
struct DelayRow {
    mutex_id: PrimitiveId,
    task_id: TaskId,
    t_sync_ns: u64,
    t_queue_ns: u64,
}

impl DelayReport {
    fn from_samples(samples: Vec<DelaySample>) -> Self {
        let mut q: Vec<u64> = samples.iter().map(|s| s.t_queue_ns).collect();
        let mut sync: Vec<u64> = samples.iter().map(|s| s.t_sync_ns).collect();
        let mut opt: Vec<u64> = samples.iter().map(|s| s.delta_t_opt_ns).collect();
        q.sort_unstable();
        sync.sort_unstable();
        opt.sort_unstable();
        DelayReport {
            median_t_queue_ns: quantile(&q, 0.5),
            p95_t_queue_ns: quantile(&q, 0.95),
            max_t_queue_ns: q.last().copied().unwrap_or(0),
            median_t_sync_ns: quantile(&sync, 0.5),
            median_delta_t_opt_ns: quantile(&opt, 0.5),
            samples,
        }
    }

    /// Writes `mutex_id,task_id,t_sync_ns,t_queue_ns`.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(["mutex_id", "task_id", "t_sync_ns", "t_queue_ns"])?;
        for s in &self.samples {
            w.serialize(DelayRow {
                mutex_id: s.mutex_id,
                task_id: s.task_id,
                t_sync_ns: s.t_sync_ns,
                t_queue_ns: s.t_queue_ns,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> csv::Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// For every event of `kind`, the most recent exit from the same primitive
/// on the same worker, in that worker's program order.
fn preceding_exits<'a>(trace: &'a Trace, kind: SyncEventKind) -> Vec<(&'a SyncEvent, Option<&'a SyncEvent>)> {
    let mut by_worker: HashMap<usize, Vec<&SyncEvent>> = HashMap::new();
    for e in trace.sync_events() {
        by_worker.entry(e.worker).or_default().push(e);
    }
    let mut out = Vec::new();
    for events in by_worker.values_mut() {
        events.sort_by_key(|e| e.seq);
        let mut last_exit: HashMap<PrimitiveId, &SyncEvent> = HashMap::new();
        for e in events.iter() {
            if e.kind == SyncEventKind::Exit {
                last_exit.insert(e.prim, e);
            } else if e.kind == kind {
                out.push((*e, last_exit.get(&e.prim).copied()));
            }
        }
    }
    out.sort_by_key(|(e, _)| (e.t_ns, e.worker, e.seq));
    out
}

/// One sample per dispatched hand-over in a traced run.
pub fn measure_queuing_delay(trace: &Trace) -> Result<DelayReport, MetricsError> {
    let acq = acquisitions(trace);
    let dispatches = preceding_exits(trace, SyncEventKind::Dispatch);
    if dispatches.is_empty() {
        return Err(MetricsError::NoDispatchEvents);
    }
    let mut samples = Vec::with_capacity(dispatches.len());
    for (d, exit) in dispatches {
        let exit = exit.ok_or(MetricsError::Unmatched {
            prim: d.prim,
            epoch: d.epoch,
            kind: "dispatch",
        })?;
        let enter = acq
            .get(&(d.prim, d.epoch))
            .and_then(|a| a.enter)
            .ok_or(MetricsError::Unmatched {
                prim: d.prim,
                epoch: d.epoch,
                kind: "dispatch",
            })?;
        let t_sync_ns = d.t_ns.saturating_sub(exit.t_ns);
        let t_queue_ns = enter.t_ns.saturating_sub(d.t_ns);
        samples.push(DelaySample {
            mutex_id: d.prim,
            task_id: d.task,
            t_sync_ns,
            t_queue_ns,
            delta_t_opt_ns: t_sync_ns + t_queue_ns,
        });
    }
    Ok(DelayReport::from_samples(samples))
}

/// Exit-to-entry gap of every same-worker hand-over (`Ces`, `Inline`).
pub fn handoff_gaps(trace: &Trace) -> Result<Vec<u64>, MetricsError> {
    let acq = acquisitions(trace);
    let mut gaps = Vec::new();
    for (h, exit) in preceding_exits(trace, SyncEventKind::Handoff) {
        let unmatched = MetricsError::Unmatched {
            prim: h.prim,
            epoch: h.epoch,
            kind: "handoff",
        };
        let exit = exit.ok_or_else(|| unmatched.clone())?;
        let enter = acq.get(&(h.prim, h.epoch)).and_then(|a| a.enter).ok_or(unmatched)?;
        gaps.push(enter.t_ns.saturating_sub(exit.t_ns));
    }
    Ok(gaps)
}
