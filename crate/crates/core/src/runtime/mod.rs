//! Work-stealing executor.
//!
//! A [`Runtime`] owns a fixed pool of `threads` workers. Each worker has a
//! FIFO deque that other workers may steal from and a direct-resume slot that
//! only the owner reads or writes. A shared injector receives spawned tasks
//! and everything passed to [`schedule`].
//!
//! Worker loop priority: direct-resume slot, local deque, injector, then a
//! random victim's deque. Idle workers back off and finally park on a condvar
//! until new work is pushed.

mod trace;
mod worker;

use std::future::Future;
use std::marker::PhantomPinned;
use std::pin::Pin;
use std::sync::atomic::{AtomicBool, AtomicU8, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex as StdMutex, OnceLock};
use std::task::{Context, Poll};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_deque::{Injector, Stealer, Worker as Deque};
use thiserror::Error;

pub use self::trace::{
    SyncEvent, SyncEventKind, TaskEvent, TaskEventKind, Trace, TraceEvent,
};
pub use self::worker::WorkerStats;
pub(crate) use self::worker::{record_sync, tracing_enabled, with_context};
use self::worker::{set_suspension, ParkHook, Suspension};
use crate::task::{self, Continuation, OutcomeStatus, StateError, Task, TaskId, TaskOutcome};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StealStrategy {
    /// Uniformly random first victim, then a sweep over the others.
    #[default]
    RandomVictim,
}

#[derive(Clone, Debug)]
pub struct ExecutorConfig {
    pub threads: usize,
    pub steal: StealStrategy,
    pub seed: u64,
    /// Record task and synchronization events.
    pub trace: bool,
    /// Native stack size of each worker thread.
    pub stack_size: usize,
    /// Upper bound on how long an idle worker sleeps before re-checking.
    pub park_timeout: Duration,
}

impl ExecutorConfig {
    pub fn with_threads(threads: usize) -> Self {
        ExecutorConfig {
            threads,
            ..Default::default()
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn trace(mut self, on: bool) -> Self {
        self.trace = on;
        self
    }

    pub fn stack_size(mut self, bytes: usize) -> Self {
        self.stack_size = bytes;
        self
    }
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            threads: 1,
            steal: StealStrategy::RandomVictim,
            seed: 0x5eed,
            trace: false,
            // Inline unlocking nests one poll per queued waiter.
            stack_size: 256 << 20,
            park_timeout: Duration::from_millis(1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("thread count must be at least 1")]
    ZeroThreads,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SpawnError {
    #[error("executor has shut down")]
    ShutDown,
    #[error("no executor is running on this thread")]
    NoRuntime,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("executor has already been run")]
    AlreadyRun,
    #[error("failed to start worker thread: {0}")]
    Spawn(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error("executor has shut down")]
    ShutDown,
}

/// Returned by `yield_now` outside of a task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
#[error("not called from a task running on an executor worker")]
pub struct ContextError;

const IDLE: u8 = 0;
const RUNNING: u8 = 1;
const SHUT_DOWN: u8 = 2;

pub(crate) struct Shared {
    pub(crate) config: ExecutorConfig,
    pub(crate) injector: Injector<Continuation>,
    stealers: OnceLock<Vec<Stealer<Continuation>>>,
    phase: AtomicU8,
    stop: AtomicBool,
    live: AtomicUsize,
    spawned: AtomicUsize,
    sleeping: AtomicUsize,
    sleep_lock: StdMutex<()>,
    sleep_cv: Condvar,
}

impl Shared {
    pub(crate) fn stealers(&self) -> &[Stealer<Continuation>] {
        self.stealers.get().map(Vec::as_slice).unwrap_or(&[])
    }

    pub(crate) fn push_injector(&self, task: Continuation) -> Result<(), ScheduleError> {
        if self.phase.load(Ordering::Acquire) == SHUT_DOWN {
            return Err(ScheduleError::ShutDown);
        }
        self.injector.push(task);
        self.notify_one();
        Ok(())
    }

    pub(crate) fn notify_one(&self) {
        if self.sleeping.load(Ordering::SeqCst) > 0 {
            let _g = self.sleep_lock.lock().unwrap();
            self.sleep_cv.notify_one();
        }
    }

    fn notify_all(&self) {
        let _g = self.sleep_lock.lock().unwrap();
        self.sleep_cv.notify_all();
    }

    pub(crate) fn should_stop(&self) -> bool {
        self.stop.load(Ordering::Acquire) || self.live.load(Ordering::Acquire) == 0
    }

    pub(crate) fn task_finished(&self) {
        if self.live.fetch_sub(1, Ordering::AcqRel) == 1 {
            self.notify_all();
        }
    }

    fn has_visible_work(&self) -> bool {
        !self.injector.is_empty() || self.stealers().iter().any(|s| !s.is_empty())
    }

    pub(crate) fn park_idle(&self) {
        let guard = self.sleep_lock.lock().unwrap();
        self.sleeping.fetch_add(1, Ordering::SeqCst);
        if !self.should_stop() && !self.has_visible_work() {
            let _ = self
                .sleep_cv
                .wait_timeout(guard, self.config.park_timeout)
                .unwrap();
        }
        self.sleeping.fetch_sub(1, Ordering::SeqCst);
    }

    fn spawn_task<F>(self: &Arc<Self>, future: F) -> Result<task::JoinHandle<F::Output>, SpawnError>
    where
        F: Future + Send + 'static,
        F::Output: Send + 'static,
    {
        if self.phase.load(Ordering::Acquire) == SHUT_DOWN {
            return Err(SpawnError::ShutDown);
        }
        let id = TaskId::next();
        let (body, handle) = task::wrap(id, future);
        let task = Task::new(id, body, self.clone());
        self.live.fetch_add(1, Ordering::AcqRel);
        self.spawned.fetch_add(1, Ordering::Relaxed);
        self.injector.push(Continuation(task));
        self.notify_one();
        Ok(handle)
    }
}

/// Summary of one [`Runtime::run`].
#[derive(Clone, Debug)]
pub struct RunReport {
    pub threads: usize,
    pub spawned: usize,
    pub completed: usize,
    /// Tasks that had not completed when the executor stopped.
    pub pending: usize,
    pub wall: Duration,
    pub per_worker: Vec<WorkerStats>,
    pub outcomes: Vec<TaskOutcome>,
    pub trace: Trace,
}

impl RunReport {
    pub fn panicked(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.status == OutcomeStatus::Panicked)
            .count()
    }
}

/// The executor. Spawn tasks, then call [`Runtime::run`] once.
pub struct Runtime {
    shared: Arc<Shared>,
}

impl Runtime {
    pub fn new(config: ExecutorConfig) -> Result<Self, ConfigError> {
        if config.threads == 0 {
            return Err(ConfigError::ZeroThreads);
        }
        Ok(Runtime {
            shared: Arc::new(Shared {
                config,
                injector: Injector::new(),
                stealers: OnceLock::new(),
                phase: AtomicU8::new(IDLE),
                stop: AtomicBool::new(false),
                live: AtomicUsize::new(0),
                spawned: AtomicUsize::new(0),
                sleeping: AtomicUsize::new(0),
                sleep_lock: StdMutex::new(()),
                sleep_cv: Condvar::new(),
            }),
        })
    }

    pub fn config(&self) -> &ExecutorConfig {
        &self.shared.config
    }

    /// Enqueues a new task on the injector. Tasks may be spawned before
    /// `run` and from any thread while it runs.
    pub fn spawn<F>(&self, future: F) -> Result<task::JoinHandle<F::Output>, SpawnError>
    where
        F: Future + Send + 'static,
        F::Output: Send + 'static,
    {
        self.shared.spawn_task(future)
    }

    pub fn handle(&self) -> Handle {
        Handle {
            shared: self.shared.clone(),
        }
    }

    /// Runs all workers until every spawned task has completed or
    /// [`Handle::shutdown`] is called.
    pub fn run(&self) -> Result<RunReport, RunError> {
        let shared = &self.shared;
        if shared
            .phase
            .compare_exchange(IDLE, RUNNING, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            return Err(RunError::AlreadyRun);
        }
        let threads = shared.config.threads;
        let deques: Vec<Deque<Continuation>> = (0..threads).map(|_| Deque::new_fifo()).collect();
        let _ = shared
            .stealers
            .set(deques.iter().map(Deque::stealer).collect());

        let started = Instant::now();
        let mut joins = Vec::with_capacity(threads);
        let mut spawn_error = None;
        for (index, deque) in deques.into_iter().enumerate() {
            let s = shared.clone();
            let res = thread::Builder::new()
                .name(format!("ces-worker-{index}"))
                .stack_size(shared.config.stack_size)
                .spawn(move || worker::worker_main(index, deque, s));
            match res {
                Ok(j) => joins.push(j),
                Err(e) => {
                    spawn_error = Some(RunError::Spawn(e.to_string()));
                    shared.stop.store(true, Ordering::Release);
                    break;
                }
            }
        }
        let summaries: Vec<_> = joins
            .into_iter()
            .map(|j| j.join().expect("worker thread panicked"))
            .collect();
        let wall = started.elapsed();
        shared.phase.store(SHUT_DOWN, Ordering::Release);
        if let Some(e) = spawn_error {
            return Err(e);
        }

        let mut outcomes = Vec::new();
        let mut per_worker = Vec::with_capacity(threads);
        let mut traces = Vec::with_capacity(threads);
        for s in summaries {
            per_worker.push(s.stats);
            traces.push(s.trace);
            outcomes.extend(s.outcomes);
        }
        let now = crate::clock::now_ns();
        while let Some(task) = steal_any(&shared.injector) {
            unsafe { task.0.drop_future() };
            task.0.complete();
            outcomes.push(TaskOutcome {
                task: task.id(),
                finished_ns: now,
                status: OutcomeStatus::Cancelled,
            });
        }
        let completed = per_worker.iter().map(|w| w.completed as usize).sum();
        let spawned = shared.spawned.load(Ordering::Acquire);
        Ok(RunReport {
            threads,
            spawned,
            completed,
            pending: spawned - completed,
            wall,
            per_worker,
            outcomes,
            trace: Trace::merge(traces),
        })
    }
}

fn steal_any(injector: &Injector<Continuation>) -> Option<Continuation> {
    loop {
        match injector.steal() {
            crossbeam_deque::Steal::Success(t) => return Some(t),
            crossbeam_deque::Steal::Retry => continue,
            crossbeam_deque::Steal::Empty => return None,
        }
    }
}

/// Cloneable handle for spawning and stopping from other threads.
#[derive(Clone)]
pub struct Handle {
    shared: Arc<Shared>,
}

impl Handle {
    pub fn spawn<F>(&self, future: F) -> Result<task::JoinHandle<F::Output>, SpawnError>
    where
        F: Future + Send + 'static,
        F::Output: Send + 'static,
    {
        self.shared.spawn_task(future)
    }

    /// Asks the workers to stop after their current task. Pending tasks are
    /// reported, not run.
    pub fn shutdown(&self) {
        self.shared.stop.store(true, Ordering::Release);
        self.shared.notify_all();
    }
}

/// Spawns onto the executor running the current task.
pub fn spawn<F>(future: F) -> Result<task::JoinHandle<F::Output>, SpawnError>
where
    F: Future + Send + 'static,
    F::Output: Send + 'static,
{
    let shared = with_context(|ctx| ctx.current().map(|c| c.0.shared.clone()))
        .flatten()
        .ok_or(SpawnError::NoRuntime)?;
    shared.spawn_task(future)
}

/// Continuation of the task currently running on this thread.
pub fn current() -> Option<Continuation> {
    with_context(|ctx| ctx.current()).flatten()
}

pub fn current_task_id() -> Option<TaskId> {
    with_context(|ctx| ctx.current_id()).flatten()
}

/// Index of the worker this thread runs, if it is a worker.
pub fn current_worker() -> Option<usize> {
    with_context(|ctx| ctx.index)
}

/// Bytes of native stack in use below the worker's entry frame.
pub fn stack_depth() -> Option<usize> {
    let here = 0u8;
    let addr = std::hint::black_box(&here) as *const u8 as usize;
    with_context(|ctx| ctx.stack_depth(addr))
}

/// Makes a suspended task runnable on any worker by pushing it onto the
/// injector. Never places it in the caller's direct-resume slot.
pub fn schedule(c: Continuation) -> Result<(), ScheduleError> {
    c.claim()?;
    let shared = c.0.shared.clone();
    shared.push_injector(c)
}

/// Runs `next` on the current worker's stack until it suspends or
/// completes, then returns. The caller does not suspend.
pub fn resume_inline(next: Continuation) -> Result<(), StateError> {
    worker::resume_inline(next)
}

/// Suspends the current task, pushes it onto the injector and makes `next`
/// the very next task this worker runs.
pub fn switch_to(next: Continuation) -> SwitchTo {
    SwitchTo {
        next: Some(next),
        suspended: false,
    }
}

pub struct SwitchTo {
    next: Option<Continuation>,
    suspended: bool,
}

impl Future for SwitchTo {
    type Output = Result<(), StateError>;

    fn poll(mut self: Pin<&mut Self>, _cx: &mut Context<'_>) -> Poll<Self::Output> {
        if self.suspended {
            return Poll::Ready(Ok(()));
        }
        let next = self.next.take().expect("SwitchTo polled after completion");
        if current().is_none() {
            return Poll::Ready(Err(StateError::NoContext));
        }
        if let Err(e) = next.check_suspended() {
            return Poll::Ready(Err(e));
        }
        self.suspended = true;
        set_suspension(Suspension::Transfer(next));
        Poll::Pending
    }
}

/// Suspends the current task and moves it to the back of its worker's
/// local deque.
pub fn yield_now() -> YieldNow {
    YieldNow { yielded: false }
}

pub struct YieldNow {
    yielded: bool,
}

impl Future for YieldNow {
    type Output = Result<(), ContextError>;

    fn poll(mut self: Pin<&mut Self>, _cx: &mut Context<'_>) -> Poll<Self::Output> {
        if self.yielded {
            return Poll::Ready(Ok(()));
        }
        if current().is_none() {
            return Poll::Ready(Err(ContextError));
        }
        self.yielded = true;
        set_suspension(Suspension::Yield);
        Poll::Pending
    }
}

/// Suspends the current task and passes its continuation to `f` once the
/// task is fully suspended. If `f` returns a continuation, that task is
/// resumed next on this worker.
///
/// `f` runs on the worker outside the task, so it may hand the continuation
/// to another thread without racing the task's own poll. The future
/// completes when someone resumes the continuation.
pub fn suspend<F>(f: F) -> Suspend<F>
where
    F: FnOnce(Continuation) -> Option<Continuation> + Send,
{
    Suspend {
        hook: Some(f),
        registered: false,
        _pin: PhantomPinned,
    }
}

pub struct Suspend<F> {
    hook: Option<F>,
    registered: bool,
    _pin: PhantomPinned,
}

unsafe fn call_hook<F>(data: *mut (), me: Continuation) -> Option<Continuation>
where
    F: FnOnce(Continuation) -> Option<Continuation>,
{
    let f = (*(data as *mut Option<F>))
        .take()
        .expect("suspension hook already consumed");
    f(me)
}

impl<F> Future for Suspend<F>
where
    F: FnOnce(Continuation) -> Option<Continuation> + Send,
{
    type Output = ();

    fn poll(self: Pin<&mut Self>, _cx: &mut Context<'_>) -> Poll<()> {
        // Never moved out of; the hook pointer targets pinned memory.
        let this = unsafe { self.get_unchecked_mut() };
        if this.registered {
            debug_assert!(this.hook.is_none(), "suspended task resumed before its hook ran");
            return Poll::Ready(());
        }
        this.registered = true;
        set_suspension(Suspension::Park(ParkHook {
            data: &mut this.hook as *mut Option<F> as *mut (),
            call: call_hook::<F>,
        }));
        Poll::Pending
    }
}
