//! Execution traces.
//!
//! Events are appended to a per-worker buffer while the executor runs and are
//! merged once the run is over, so recording never contends across workers.
//! Recording is off unless [`ExecutorConfig::trace`](super::ExecutorConfig)
//! is set.

use std::fmt;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::sync::PrimitiveId;
use crate::task::TaskId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskEventKind {
    Resume,
    Suspend,
    Complete,
}

/// Per-acquisition events emitted by the synchronization primitives.
///
/// `Handoff` and `Dispatch` are emitted by the releasing task and name the
/// waiter that received ownership: `Handoff` when the waiter is resumed on the
/// releasing worker (inline or direct-resume), `Dispatch` when it is pushed to
/// the injector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SyncEventKind {
    Enq,
    Enter,
    Exit,
    Handoff,
    Dispatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskEvent {
    pub kind: TaskEventKind,
    pub task: TaskId,
    pub worker: usize,
    pub t_ns: u64,
    /// Position in the recording worker's buffer.
    pub seq: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyncEvent {
    pub kind: SyncEventKind,
    pub prim: PrimitiveId,
    /// Acquisition sequence number on `prim`. `Enter`, `Handoff` and
    /// `Dispatch` carry the number of the acquisition they start; `Exit`
    /// carries the number of the acquisition it ends (0 for semaphores).
    /// `Enq` instead carries the waiter's enqueue ticket, which counts
    /// enqueues on `prim` from 1.
    pub epoch: u64,
    pub task: TaskId,
    pub worker: usize,
    pub t_ns: u64,
    pub seq: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceEvent {
    Task(TaskEvent),
    Sync(SyncEvent),
}

impl TraceEvent {
    pub fn t_ns(&self) -> u64 {
        match self {
            TraceEvent::Task(e) => e.t_ns,
            TraceEvent::Sync(e) => e.t_ns,
        }
    }

    pub fn worker(&self) -> usize {
        match self {
            TraceEvent::Task(e) => e.worker,
            TraceEvent::Sync(e) => e.worker,
        }
    }

    pub fn seq(&self) -> u64 {
        match self {
            TraceEvent::Task(e) => e.seq,
            TraceEvent::Sync(e) => e.seq,
        }
    }
}

/// Merged trace of one run, ordered by timestamp; ties keep per-worker order.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

#[derive(Serialize)]
struct TaskRow {
    event: TaskEventKind,
    task_id: TaskId,
    worker_id: usize,
    timestamp_ns: u64,
}

#[derive(Serialize)]
struct SyncRow {
    primitive_id: u64,
    task_id: TaskId,
    worker_id: usize,
    event: SyncEventKind,
    t_ns: u64,
}

impl Trace {
    pub(crate) fn merge(buffers: Vec<Vec<TraceEvent>>) -> Trace {
        let mut events: Vec<TraceEvent> = buffers.into_iter().flatten().collect();
        events.sort_by_key(|e| (e.t_ns(), e.worker(), e.seq()));
        Trace { events }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn task_events(&self) -> impl Iterator<Item = &TaskEvent> + '_ {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Task(t) => Some(t),
            TraceEvent::Sync(_) => None,
        })
    }

    pub fn sync_events(&self) -> impl Iterator<Item = &SyncEvent> + '_ {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Sync(s) => Some(s),
            TraceEvent::Task(_) => None,
        })
    }

    /// Events recorded by one worker, in recording order.
    pub fn worker_events(&self, worker: usize) -> Vec<TraceEvent> {
        let mut evs: Vec<TraceEvent> = self
            .events
            .iter()
            .filter(|e| e.worker() == worker)
            .copied()
            .collect();
        evs.sort_by_key(|e| e.seq());
        evs
    }

    /// Writes task events as `event,task_id,worker_id,timestamp_ns`.
    pub fn write_task_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut any = false;
        for e in self.task_events() {
            any = true;
            w.serialize(TaskRow {
                event: e.kind,
                task_id: e.task,
                worker_id: e.worker,
                timestamp_ns: e.t_ns,
            })?;
        }
        if !any {
            w.write_record(["event", "task_id", "worker_id", "timestamp_ns"])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes sync events as `primitive_id,task_id,worker_id,event,t_ns`.
    pub fn write_sync_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut any = false;
        for e in self.sync_events() {
            any = true;
            w.serialize(SyncRow {
                primitive_id: e.prim.as_u64(),
                task_id: e.task,
                worker_id: e.worker,
                event: e.kind,
                t_ns: e.t_ns,
            })?;
        }
        if !any {
            w.write_record(["primitive_id", "task_id", "worker_id", "event", "t_ns"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_task_csv(&self, path: impl AsRef<Path>) -> csv::Result<()> {
        self.write_task_csv(std::fs::File::create(path)?)
    }
}

impl fmt::Display for TaskEventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskEventKind::Resume => "resume",
            TaskEventKind::Suspend => "suspend",
            TaskEventKind::Complete => "complete",
        })
    }
}
