//! Task-aware synchronization primitives.
//!
//! Every primitive shares the same acquisition path: a test-and-set spinlock
//! guards the state word and an intrusive FIFO of suspended waiters. They
//! differ only in how a release hands ownership to waiters, selected by
//! [`Policy`]:
//!
//! | policy     | waiter resumed by            | releasing task            |
//! |------------|------------------------------|---------------------------|
//! | `Inline`   | nested call on this worker   | blocked until it returns  |
//! | `Dispatch` | injector, any worker         | continues                 |
//! | `Ces`      | direct-resume slot, this worker | suspends, to the injector |
//!
//! Ownership is granted under the guard at release time, so a waiter that has
//! been selected can never be overtaken. Uncontended operations never
//! suspend under any policy.
//!
//! When several waiters become runnable at once (reader batches, semaphore
//! releases, `notify_all`), `Ces` resumes the first one on the releasing
//! worker and schedules the rest.

mod condvar;
mod mutex;
mod rwlock;
mod semaphore;
mod spin;
mod waitlist;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;

pub use self::condvar::CondVar;
pub use self::mutex::{Mutex, MutexGuard, RawMutex};
pub use self::rwlock::{RawRwLock, RwLock, RwLockReadGuard, RwLockWriteGuard};
pub use self::semaphore::{Semaphore, SemaphoreError};

use self::waitlist::{WaitList, Waiter};
use crate::runtime::{self, record_sync, ScheduleError, SyncEventKind};
use crate::task::Continuation;

/// How a release hands ownership to a waiting task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Combine-and-exchange: resume the waiter on this worker, move the
    /// releasing task to the injector.
    Ces,
    /// Push the waiter onto the injector; the releasing task continues.
    Dispatch,
    /// Resume the waiter as a nested call; the releasing task continues
    /// once the waiter suspends or completes.
    Inline,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Ces, Policy::Dispatch, Policy::Inline];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Ces => "ces",
            Policy::Dispatch => "dispatch",
            Policy::Inline => "inline",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("unknown policy `{0}` (expected one of: ces, dispatch, inline)")]
pub struct ParsePolicyError(pub String);

impl FromStr for Policy {
    type Err = ParsePolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ces" => Ok(Policy::Ces),
            "dispatch" => Ok(Policy::Dispatch),
            "inline" => Ok(Policy::Inline),
            other => Err(ParsePolicyError(other.to_string())),
        }
    }
}

/// Process-unique identifier of a primitive instance, used in traces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct PrimitiveId(u64);

impl PrimitiveId {
    pub(crate) fn next() -> Self {
        static NEXT: AtomicU64 = AtomicU64::new(1);
        PrimitiveId(NEXT.fetch_add(1, Ordering::Relaxed))
    }

    /// Rebuilds an id from its raw value, e.g. for synthetic traces.
    pub const fn from_raw(raw: u64) -> Self {
        PrimitiveId(raw)
    }

    pub fn as_u64(self) -> u64 {
        self.0
    }
}

impl fmt::Display for PrimitiveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Stores the acquisition number a waiter was granted. Called by the
/// releasing task while the waiter is still suspended.
fn grant(w: &Continuation, epoch: u64) {
    unsafe { *w.link().granted.get() = epoch };
}

fn granted(w: &Continuation) -> u64 {
    unsafe { *w.link().granted.get() }
}

/// Acquisition number handed to the current task by whoever resumed it.
fn own_grant() -> u64 {
    runtime::current().map(|c| granted(&c)).unwrap_or(0)
}

fn current_id_or_zero() -> crate::task::TaskId {
    runtime::current_task_id().unwrap_or_else(|| crate::task::TaskId::from_raw(0))
}

fn dispatch(prim: PrimitiveId, w: Continuation) {
    record_sync(SyncEventKind::Dispatch, prim, granted(&w), w.id());
    match runtime::schedule(w) {
        Ok(()) | Err(ScheduleError::ShutDown) => {}
        Err(e) => panic!("granted waiter could not be scheduled: {e}"),
    }
}

fn run_inline(prim: PrimitiveId, w: Continuation) {
    record_sync(SyncEventKind::Handoff, prim, granted(&w), w.id());
    if let Err(e) = runtime::resume_inline(w.clone()) {
        // Outside a worker (e.g. a guard dropped on a plain thread) fall
        // back to the injector.
        match e {
            crate::task::StateError::NoContext => {
                let _ = runtime::schedule(w);
            }
            e => panic!("granted waiter could not be resumed: {e}"),
        }
    }
}

/// Hands ownership to already-granted waiters without suspending the
/// caller. `Ces` falls back to dispatching; it is only used this way from
/// destructors, which cannot suspend.
fn wake_without_suspending(policy: Policy, prim: PrimitiveId, first: Waiter, mut rest: WaitList) {
    match policy {
        Policy::Inline => {
            run_inline(prim, first.cont);
            while let Some(w) = rest.pop_front() {
                run_inline(prim, w.cont);
            }
        }
        Policy::Dispatch | Policy::Ces => {
            dispatch(prim, first.cont);
            while let Some(w) = rest.pop_front() {
                dispatch(prim, w.cont);
            }
        }
    }
}

/// Hands ownership to already-granted waiters according to `policy`.
/// Under `Ces` the caller suspends and `first` runs next on this worker.
async fn wake(policy: Policy, prim: PrimitiveId, first: Waiter, mut rest: WaitList) {
    if policy != Policy::Ces {
        return wake_without_suspending(policy, prim, first, rest);
    }
    while let Some(w) = rest.pop_front() {
        dispatch(prim, w.cont);
    }
    record_sync(SyncEventKind::Handoff, prim, granted(&first.cont), first.cont.id());
    if let Err(e) = runtime::switch_to(first.cont.clone()).await {
        match e {
            crate::task::StateError::NoContext => dispatch(prim, first.cont),
            e => panic!("granted waiter could not be resumed: {e}"),
        }
    }
}
