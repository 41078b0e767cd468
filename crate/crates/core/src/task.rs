//! Tasks and continuations.
//!
//! A task is a boxed future plus an atomic state word. A [`Continuation`] is a
//! reference-counted handle to a task; whoever holds a continuation of a
//! suspended task may resume it exactly once, and the atomic state transition
//! in [`Continuation::claim`] is what enforces "exactly once".

use std::cell::UnsafeCell;
use std::fmt;
use std::future::Future;
use std::pin::Pin;
use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};
use std::sync::{Arc, Condvar, Mutex as StdMutex};
use std::task::{Context, Poll, Wake, Waker};

use serde::Serialize;
use thiserror::Error;

use crate::runtime::Shared;

pub(crate) type BoxFuture = Pin<Box<dyn Future<Output = ()> + Send + 'static>>;

/// Process-unique task identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct TaskId(u64);

impl TaskId {
    pub(crate) fn next() -> Self {
        static NEXT: AtomicU64 = AtomicU64::new(1);
        TaskId(NEXT.fetch_add(1, Ordering::Relaxed))
    }

    pub fn as_u64(self) -> u64 {
        self.0
    }

    /// Rebuilds an id from its raw value, e.g. for synthetic traces.
    pub const fn from_raw(raw: u64) -> Self {
        TaskId(raw)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Lifecycle state of a task.
///
/// `Created` tasks have been spawned but never polled. `Scheduled` tasks sit in
/// a run queue (or a direct-resume slot) after having been resumed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TaskState {
    Created,
    Scheduled,
    Running,
    Suspended,
    Completed,
}

const CREATED: u8 = 0;
const SCHEDULED: u8 = 1;
const RUNNING: u8 = 2;
const SUSPENDED: u8 = 3;
const COMPLETED: u8 = 4;
const STATE_MASK: u8 = 0x0f;
/// Suspended by a runtime primitive. Such a task only becomes runnable
/// through an explicit resume; wakers are ignored.
const PARKED: u8 = 0x10;
/// A waker fired while the task was running.
const NOTIFIED: u8 = 0x20;

fn decode(word: u8) -> TaskState {
    match word & STATE_MASK {
        CREATED => TaskState::Created,
        SCHEDULED => TaskState::Scheduled,
        RUNNING => TaskState::Running,
        SUSPENDED => TaskState::Suspended,
        _ => TaskState::Completed,
    }
}

/// Error returned when resuming a continuation that is not suspended.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum StateError {
    #[error("task {0} already completed")]
    Completed(TaskId),
    #[error("task {id} is {state:?}, only a suspended task can be resumed")]
    NotSuspended { id: TaskId, state: TaskState },
    #[error("not called from a task running on an executor worker")]
    NoContext,
}

/// Intrusive waiter node embedded in every task.
///
/// A task waits on at most one primitive at a time, and every field is only
/// touched while holding the guard of the primitive whose queue the task is
/// in (or by the task itself after it has been granted and resumed).
pub(crate) struct WaitLink {
    pub(crate) next: UnsafeCell<Option<Continuation>>,
    pub(crate) tag: UnsafeCell<u64>,
    pub(crate) enqueued_ns: UnsafeCell<u64>,
    /// Acquisition sequence number handed over by the releasing task.
    pub(crate) granted: UnsafeCell<u64>,
}

impl WaitLink {
    fn new() -> Self {
        WaitLink {
            next: UnsafeCell::new(None),
            tag: UnsafeCell::new(0),
            enqueued_ns: UnsafeCell::new(0),
            granted: UnsafeCell::new(0),
        }
    }
}

pub(crate) struct Task {
    id: TaskId,
    state: AtomicU8,
    future: UnsafeCell<Option<BoxFuture>>,
    pub(crate) link: WaitLink,
    pub(crate) shared: Arc<Shared>,
}

// The future is only touched by the worker that moved the state to RUNNING;
// the wait link is serialized by primitive guards.
unsafe impl Sync for Task {}
unsafe impl Send for Task {}

impl Task {
    pub(crate) fn new(id: TaskId, future: BoxFuture, shared: Arc<Shared>) -> Arc<Task> {
        Arc::new(Task {
            id,
            state: AtomicU8::new(CREATED),
            future: UnsafeCell::new(Some(future)),
            link: WaitLink::new(),
            shared,
        })
    }

    pub(crate) fn state(&self) -> TaskState {
        decode(self.state.load(Ordering::Acquire))
    }

    /// `Created | Scheduled -> Running`.
    pub(crate) fn begin_run(&self) {
        let prev = self.state.swap(RUNNING, Ordering::AcqRel);
        debug_assert!(
            matches!(prev & STATE_MASK, CREATED | SCHEDULED),
            "task {} started from {:?}",
            self.id,
            decode(prev)
        );
    }

    /// `Running -> Scheduled`, for suspensions that requeue the task directly.
    pub(crate) fn requeue(&self) {
        self.state.store(SCHEDULED, Ordering::Release);
    }

    /// `Running -> Suspended`. Returns true when a waker fired during the
    /// poll and the task was not parked, in which case the task has already
    /// been moved to `Scheduled` and the caller must enqueue it.
    pub(crate) fn suspend(&self, parked: bool) -> bool {
        let target = if parked { SUSPENDED | PARKED } else { SUSPENDED };
        let prev = self.state.swap(target, Ordering::AcqRel);
        debug_assert_eq!(prev & STATE_MASK, RUNNING);
        if prev & NOTIFIED != 0 && !parked {
            return self
                .state
                .compare_exchange(target, SCHEDULED, Ordering::AcqRel, Ordering::Acquire)
                .is_ok();
        }
        false
    }

    pub(crate) fn complete(&self) {
        self.state.store(COMPLETED, Ordering::Release);
    }

    /// # Safety
    /// The caller must have moved the task to `Running`.
    pub(crate) unsafe fn poll(&self, cx: &mut Context<'_>) -> Poll<()> {
        match &mut *self.future.get() {
            Some(fut) => fut.as_mut().poll(cx),
            None => Poll::Ready(()),
        }
    }

    /// # Safety
    /// The caller must have exclusive access (task running or never to be
    /// run again).
    pub(crate) unsafe fn drop_future(&self) {
        drop((*self.future.get()).take());
    }
}

impl Wake for Task {
    fn wake(self: Arc<Self>) {
        self.wake_by_ref();
    }

    fn wake_by_ref(self: &Arc<Self>) {
        let mut cur = self.state.load(Ordering::Acquire);
        loop {
            let next = match cur & STATE_MASK {
                RUNNING => cur | NOTIFIED,
                SUSPENDED if cur & PARKED == 0 => SCHEDULED,
                _ => return,
            };
            match self
                .state
                .compare_exchange(cur, next, Ordering::AcqRel, Ordering::Acquire)
            {
                Ok(_) => {
                    if next == SCHEDULED {
                        let _ = self.shared.push_injector(Continuation(self.clone()));
                    }
                    return;
                }
                Err(actual) => cur = actual,
            }
        }
    }
}

/// Handle to a task that can be resumed once per suspension.
#[derive(Clone)]
pub struct Continuation(pub(crate) Arc<Task>);

impl Continuation {
    pub fn id(&self) -> TaskId {
        self.0.id
    }

    pub fn state(&self) -> TaskState {
        self.0.state()
    }

    /// Atomically moves a suspended task to `Scheduled`. Exactly one caller
    /// wins for every suspension.
    pub(crate) fn claim(&self) -> Result<(), StateError> {
        let mut cur = self.0.state.load(Ordering::Acquire);
        loop {
            match cur & STATE_MASK {
                SUSPENDED => {}
                COMPLETED => return Err(StateError::Completed(self.id())),
                _ => {
                    return Err(StateError::NotSuspended {
                        id: self.id(),
                        state: decode(cur),
                    })
                }
            }
            match self.0.state.compare_exchange(
                cur,
                SCHEDULED,
                Ordering::AcqRel,
                Ordering::Acquire,
            ) {
                Ok(_) => return Ok(()),
                Err(actual) => cur = actual,
            }
        }
    }

    /// Fails unless the task is currently suspended.
    pub(crate) fn check_suspended(&self) -> Result<(), StateError> {
        match self.state() {
            TaskState::Suspended => Ok(()),
            TaskState::Completed => Err(StateError::Completed(self.id())),
            state => Err(StateError::NotSuspended {
                id: self.id(),
                state,
            }),
        }
    }

    pub(crate) fn link(&self) -> &WaitLink {
        &self.0.link
    }
}

impl fmt::Debug for Continuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Continuation")
            .field("id", &self.id())
            .field("state", &self.state())
            .finish()
    }
}

impl PartialEq for Continuation {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl Eq for Continuation {}

/// How a task left the executor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeStatus {
    Ok,
    Panicked,
    /// Dropped from a run queue at shutdown.
    Cancelled,
}

/// One record per task that finished or was dropped by the executor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TaskOutcome {
    pub task: TaskId,
    pub finished_ns: u64,
    pub status: OutcomeStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum JoinError {
    #[error("task {0} panicked")]
    Panicked(TaskId),
    #[error("task {0} was dropped before completing")]
    Cancelled(TaskId),
}

struct JoinInner<T> {
    result: Option<Result<T, JoinError>>,
    waker: Option<Waker>,
}

pub(crate) struct JoinSlot<T> {
    inner: StdMutex<JoinInner<T>>,
    done: Condvar,
}

impl<T> JoinSlot<T> {
    fn new() -> Arc<Self> {
        Arc::new(JoinSlot {
            inner: StdMutex::new(JoinInner {
                result: None,
                waker: None,
            }),
            done: Condvar::new(),
        })
    }

    fn complete(&self, result: Result<T, JoinError>) {
        let waker = {
            let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
            if inner.result.is_some() {
                return;
            }
            inner.result = Some(result);
            inner.waker.take()
        };
        self.done.notify_all();
        if let Some(w) = waker {
            w.wake();
        }
    }
}

/// Sets the join result when the task body is dropped without finishing.
struct Completer<T> {
    id: TaskId,
    slot: Arc<JoinSlot<T>>,
}

impl<T> Drop for Completer<T> {
    fn drop(&mut self) {
        let err = if std::thread::panicking() {
            JoinError::Panicked(self.id)
        } else {
            JoinError::Cancelled(self.id)
        };
        self.slot.complete(Err(err));
    }
}

/// Wraps a user future so its output lands in a join slot.
pub(crate) fn wrap<F>(id: TaskId, future: F) -> (BoxFuture, JoinHandle<F::Output>)
where
    F: Future + Send + 'static,
    F::Output: Send + 'static,
{
    let slot = JoinSlot::new();
    let completer = Completer {
        id,
        slot: slot.clone(),
    };
    let body = async move {
        let completer = completer;
        let value = future.await;
        completer.slot.complete(Ok(value));
    };
    (Box::pin(body), JoinHandle { id, slot })
}

/// Owned handle for the result of a spawned task.
///
/// [`JoinHandle::join`] blocks the calling OS thread and must not be used from
/// inside a task; await the handle instead.
pub struct JoinHandle<T> {
    id: TaskId,
    slot: Arc<JoinSlot<T>>,
}

impl<T> JoinHandle<T> {
    pub fn id(&self) -> TaskId {
        self.id
    }

    pub fn is_finished(&self) -> bool {
        self.slot.inner.lock().unwrap().result.is_some()
    }

    /// Takes the result if the task has finished.
    pub fn try_join(&mut self) -> Option<Result<T, JoinError>> {
        self.slot.inner.lock().unwrap().result.take()
    }

    /// Blocks the current OS thread until the task finishes.
    pub fn join(self) -> Result<T, JoinError> {
        let mut inner = self.slot.inner.lock().unwrap();
        loop {
            if let Some(r) = inner.result.take() {
                return r;
            }
            inner = self.slot.done.wait(inner).unwrap();
        }
    }
}

impl<T> Future for JoinHandle<T> {
    type Output = Result<T, JoinError>;

    fn poll(self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<Self::Output> {
        let mut inner = self.slot.inner.lock().unwrap();
        match inner.result.take() {
            Some(r) => Poll::Ready(r),
            None => {
                inner.waker = Some(cx.waker().clone());
                Poll::Pending
            }
        }
    }
}

impl<T> fmt::Debug for JoinHandle<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JoinHandle").field("id", &self.id).finish()
    }
}
