use std::collections::HashMap;
use std::io;
use std::path::Path;

use serde::Serialize;

use super::{acquisitions, MetricsError};
use crate::runtime::Trace;
use crate::sync::PrimitiveId;

/// One critical-section execution on a resource.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AffinityEntry {
    pub worker: usize,
    pub t_ns: u64,
    /// Ownership was handed over from a previous holder to a queued waiter.
    pub contended: bool,
}

/// Per resource, the workers that executed its critical sections in
/// acquisition order.
#[derive(Clone, Debug, Default)]
pub struct AffinityTrace {
    pub resources: Vec<(PrimitiveId, Vec<AffinityEntry>)>,
}

#[derive(Serialize)]
struct AffinityRow {
    resource_id: usize,
    seq: usize,
    worker_id: usize,
    contended: u8,
}

impl AffinityTrace {
    /// Extracts the entries of `resources` (numbered by position) from a
    /// traced run.
    pub fn from_trace(trace: &Trace, resources: &[PrimitiveId]) -> Result<Self, MetricsError> {
        let mut grouped: HashMap<PrimitiveId, Vec<(u64, AffinityEntry)>> = HashMap::new();
        for ((prim, epoch), a) in acquisitions(trace) {
            if let Some(e) = a.enter {
                grouped.entry(prim).or_default().push((
                    epoch,
                    AffinityEntry {
                        worker: e.worker,
                        t_ns: e.t_ns,
                        contended: a.contended(),
                    },
                ));
            }
        }
        let mut out = Vec::with_capacity(resources.len());
        let mut any = false;
        for &prim in resources {
            let mut entries = grouped.remove(&prim).unwrap_or_default();
            entries.sort_by_key(|(epoch, _)| *epoch);
            any |= !entries.is_empty();
            out.push((prim, entries.into_iter().map(|(_, e)| e).collect()));
        }
        if !any {
            return Err(MetricsError::NoCsEvents);
        }
        Ok(AffinityTrace { resources: out })
    }

    pub fn total_entries(&self) -> usize {
        self.resources.iter().map(|(_, e)| e.len()).sum()
    }

    /// Writes `resource_id,seq,worker_id,contended`.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(["resource_id", "seq", "worker_id", "contended"])?;
        for (resource_id, (_, entries)) in self.resources.iter().enumerate() {
            for (seq, e) in entries.iter().enumerate() {
                w.serialize(AffinityRow {
                    resource_id,
                    seq,
                    worker_id: e.worker,
                    contended: e.contended as u8,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> csv::Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResourceAffinity {
    pub resource: PrimitiveId,
    pub executions: usize,
    pub contended_handoffs: usize,
    /// Contended hand-overs whose entry ran on the same worker as the
    /// previous entry.
    pub same_worker: usize,
    /// Consecutive entries on different workers, contended or not.
    pub worker_changes: usize,
}

impl ResourceAffinity {
    pub fn same_worker_fraction(&self) -> Option<f64> {
        (self.contended_handoffs > 0).then(|| self.same_worker as f64 / self.contended_handoffs as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffinityReport {
    pub per_resource: Vec<ResourceAffinity>,
}

impl AffinityReport {
    pub fn contended_handoffs(&self) -> usize {
        self.per_resource.iter().map(|r| r.contended_handoffs).sum()
    }

    pub fn worker_changes(&self) -> usize {
        self.per_resource.iter().map(|r| r.worker_changes).sum()
    }

    /// Same-worker fraction over all contended hand-overs; `None` if there
    /// were none.
    pub fn same_worker_fraction(&self) -> Option<f64> {
        let contended = self.contended_handoffs();
        let same: usize = self.per_resource.iter().map(|r| r.same_worker).sum();
        (contended > 0).then(|| same as f64 / contended as f64)
    }
}

/// Summarizes how critical sections moved between workers.
pub fn validate_affinity(trace: &AffinityTrace) -> Result<AffinityReport, MetricsError> {
    if trace.total_entries() == 0 {
        return Err(MetricsError::NoCsEvents);
    }
    let per_resource = trace
        .resources
        .iter()
        .map(|(prim, entries)| {
            let mut r = ResourceAffinity {
                resource: *prim,
                executions: entries.len(),
                contended_handoffs: 0,
                same_worker: 0,
                worker_changes: 0,
            };
            for pair in entries.windows(2) {
                let same = pair[0].worker == pair[1].worker;
                if !same {
                    r.worker_changes += 1;
                }
                if pair[1].contended {
                    r.contended_handoffs += 1;
                    r.same_worker += same as usize;
                }
            }
            r
        })
        .collect();
    Ok(AffinityReport { per_resource })
}
