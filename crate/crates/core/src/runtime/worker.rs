use std::cell::{Cell, RefCell};
use std::panic::{self, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;
use std::task::{Context, Poll, Waker};

use crossbeam_deque::{Steal, Worker as Deque};
use crossbeam_utils::Backoff;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::trace::{SyncEvent, SyncEventKind, TaskEvent, TaskEventKind, TraceEvent};
use super::Shared;
use crate::clock;
use crate::sync::PrimitiveId;
use crate::task::{Continuation, OutcomeStatus, StateError, TaskId, TaskOutcome};

/// Type-erased post-suspension callback.
///
/// `data` points at an `Option<F>` inside a pinned, suspended future. The
/// worker calls `call` right after the poll that registered it returned
/// `Pending`; the callback moves the closure out before running it, so the
/// future's memory is never touched after the continuation is published.
pub(crate) struct ParkHook {
    pub(crate) data: *mut (),
    pub(crate) call: unsafe fn(*mut (), Continuation) -> Option<Continuation>,
}

/// What a task asked the worker to do with it once its poll returns.
pub(crate) enum Suspension {
    /// Back of the local deque.
    Yield,
    /// Self to the injector, `next` to the direct-resume slot.
    Transfer(Continuation),
    /// Hand self to the hook; a returned continuation goes to the slot.
    Park(ParkHook),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WorkerStats {
    /// Number of times this worker resumed (polled) a task.
    pub resumed: u64,
    /// Number of tasks that completed on this worker.
    pub completed: u64,
    /// Successful steals from other workers.
    pub steals: u64,
}

pub(crate) struct WorkerSummary {
    pub(crate) stats: WorkerStats,
    pub(crate) trace: Vec<TraceEvent>,
    pub(crate) outcomes: Vec<TaskOutcome>,
}

pub(crate) struct WorkerContext {
    pub(crate) index: usize,
    shared: Arc<Shared>,
    local: Deque<Continuation>,
    slot: Cell<Option<Continuation>>,
    pending: Cell<Option<Suspension>>,
    current: RefCell<Option<Continuation>>,
    tracing: bool,
    trace: RefCell<Vec<TraceEvent>>,
    seq: Cell<u64>,
    tick: Cell<u32>,
    stats: Cell<WorkerStats>,
    outcomes: RefCell<Vec<TaskOutcome>>,
    rng: RefCell<ChaCha8Rng>,
    stack_base: usize,
}

/// Local-deque pops between forced injector checks.
const INJECTOR_INTERVAL: u32 = 61;

thread_local! {
    static CONTEXT: Cell<*const WorkerContext> = const { Cell::new(ptr::null()) };
}

/// Runs `f` with the current worker's context, if this thread is a worker.
pub(crate) fn with_context<R>(f: impl FnOnce(&WorkerContext) -> R) -> Option<R> {
    CONTEXT.with(|c| {
        let p = c.get();
        if p.is_null() {
            None
        } else {
            // The context outlives every task poll on this thread.
            Some(f(unsafe { &*p }))
        }
    })
}

/// Registers what to do with the running task after its poll returns.
///
/// Panics outside a worker: the futures calling this are only meaningful
/// inside a task.
pub(crate) fn set_suspension(s: Suspension) {
    with_context(|ctx| {
        let prev = ctx.pending.replace(Some(s));
        debug_assert!(prev.is_none(), "two suspensions registered in one poll");
    })
    .expect("suspension point reached outside of an executor task");
}

pub(crate) fn record_sync(kind: SyncEventKind, prim: PrimitiveId, epoch: u64, task: TaskId) {
    with_context(|ctx| {
        if ctx.tracing {
            ctx.push_event(|seq, worker| {
                TraceEvent::Sync(SyncEvent {
                    kind,
                    prim,
                    epoch,
                    task,
                    worker,
                    t_ns: clock::now_ns(),
                    seq,
                })
            });
        }
    });
}

pub(crate) fn tracing_enabled() -> bool {
    with_context(|ctx| ctx.tracing).unwrap_or(false)
}

impl WorkerContext {
    fn push_event(&self, make: impl FnOnce(u64, usize) -> TraceEvent) {
        let seq = self.seq.get();
        self.seq.set(seq + 1);
        self.trace.borrow_mut().push(make(seq, self.index));
    }

    fn record_task(&self, kind: TaskEventKind, task: TaskId) {
        if self.tracing {
            self.push_event(|seq, worker| {
                TraceEvent::Task(TaskEvent {
                    kind,
                    task,
                    worker,
                    t_ns: clock::now_ns(),
                    seq,
                })
            });
        }
    }

    fn bump(&self, f: impl FnOnce(&mut WorkerStats)) {
        let mut s = self.stats.get();
        f(&mut s);
        self.stats.set(s);
    }

    pub(crate) fn current(&self) -> Option<Continuation> {
        self.current.borrow().clone()
    }

    pub(crate) fn current_id(&self) -> Option<TaskId> {
        self.current.borrow().as_ref().map(|c| c.id())
    }

    pub(crate) fn stack_depth(&self, here: usize) -> usize {
        self.stack_base.saturating_sub(here)
    }

    fn put_slot(&self, next: Continuation) {
        // Only nested inline resumption can find the slot occupied.
        if let Some(prev) = self.slot.replace(Some(next)) {
            self.local.push(prev);
            self.shared.notify_one();
        }
    }

    /// Resumes a claimed continuation on this thread's stack.
    pub(crate) fn run_nested(&self, next: Continuation) {
        self.run_task(next);
    }

    fn run_task(&self, task: Continuation) {
        task.0.begin_run();
        let id = task.id();
        self.bump(|s| s.resumed += 1);
        self.record_task(TaskEventKind::Resume, id);

        let prev_current = self.current.replace(Some(task.clone()));
        let prev_pending = self.pending.take();
        let waker = Waker::from(task.0.clone());
        let mut cx = Context::from_waker(&waker);
        let result = panic::catch_unwind(AssertUnwindSafe(|| unsafe { task.0.poll(&mut cx) }));
        let pending = self.pending.replace(prev_pending);
        *self.current.borrow_mut() = prev_current;

        match result {
            Ok(Poll::Ready(())) => self.finish(&task, OutcomeStatus::Ok),
            Err(_) => self.finish(&task, OutcomeStatus::Panicked),
            Ok(Poll::Pending) => {
                self.record_task(TaskEventKind::Suspend, id);
                match pending {
                    None => {
                        if task.0.suspend(false) {
                            self.local.push(task);
                            self.shared.notify_one();
                        }
                    }
                    Some(Suspension::Yield) => {
                        task.0.requeue();
                        // Everything already injected runs before the
                        // yielder again, else a yielding task could starve it.
                        while !self.shared.injector.steal_batch(&self.local).is_empty() {}
                        self.local.push(task);
                        self.shared.notify_one();
                    }
                    Some(Suspension::Transfer(next)) => {
                        match next.claim() {
                            Ok(()) => self.put_slot(next),
                            // Checked before suspending; only a racing
                            // resume of the same continuation gets here.
                            Err(e) => panic!("switch_to target lost: {e}"),
                        }
                        task.0.requeue();
                        let _ = self.shared.push_injector(task);
                    }
                    Some(Suspension::Park(hook)) => {
                        task.0.suspend(true);
                        if let Some(next) = unsafe { (hook.call)(hook.data, task) } {
                            next.claim().expect("resumed continuation was not suspended");
                            self.put_slot(next);
                        }
                    }
                }
            }
        }
    }

    fn finish(&self, task: &Continuation, status: OutcomeStatus) {
        task.0.complete();
        // Destructors of the task body may panic too; the task is done either way.
        let _ = panic::catch_unwind(AssertUnwindSafe(|| unsafe { task.0.drop_future() }));
        self.record_task(TaskEventKind::Complete, task.id());
        self.bump(|s| s.completed += 1);
        self.outcomes.borrow_mut().push(TaskOutcome {
            task: task.id(),
            finished_ns: clock::now_ns(),
            status,
        });
        self.shared.task_finished();
    }

    fn find_task(&self) -> Option<Continuation> {
        let tick = self.tick.get().wrapping_add(1);
        self.tick.set(tick);
        if tick % INJECTOR_INTERVAL == 0 {
            if let Steal::Success(t) = self.shared.injector.steal_batch_and_pop(&self.local) {
                return Some(t);
            }
        }
        if let Some(t) = self.local.pop() {
            return Some(t);
        }
        loop {
            match self.shared.injector.steal_batch_and_pop(&self.local) {
                Steal::Success(t) => return Some(t),
                Steal::Retry => continue,
                Steal::Empty => break,
            }
        }
        let stealers = self.shared.stealers();
        let n = stealers.len();
        if n < 2 {
            return None;
        }
        let start = self.rng.borrow_mut().gen_range(0..n);
        let mut retry = true;
        while retry {
            retry = false;
            for i in 0..n {
                let victim = (start + i) % n;
                if victim == self.index {
                    continue;
                }
                match stealers[victim].steal_batch_and_pop(&self.local) {
                    Steal::Success(t) => {
                        self.bump(|s| s.steals += 1);
                        return Some(t);
                    }
                    Steal::Retry => retry = true,
                    Steal::Empty => {}
                }
            }
        }
        None
    }

    fn main_loop(&self) {
        let backoff = Backoff::new();
        loop {
            if let Some(t) = self.slot.take() {
                self.run_task(t);
                continue;
            }
            if self.shared.should_stop() {
                break;
            }
            if let Some(t) = self.find_task() {
                backoff.reset();
                self.run_task(t);
                continue;
            }
            if backoff.is_completed() {
                self.shared.park_idle();
                backoff.reset();
            } else {
                backoff.snooze();
            }
        }
    }

    /// Drops everything still queued locally, recording a cancelled outcome.
    fn drain(&self) {
        let now = clock::now_ns();
        let mut outcomes = self.outcomes.borrow_mut();
        let slot = self.slot.take();
        for task in slot.into_iter().chain(std::iter::from_fn(|| self.local.pop())) {
            unsafe { task.0.drop_future() };
            task.0.complete();
            outcomes.push(TaskOutcome {
                task: task.id(),
                finished_ns: now,
                status: OutcomeStatus::Cancelled,
            });
        }
    }
}

pub(crate) fn worker_main(index: usize, local: Deque<Continuation>, shared: Arc<Shared>) -> WorkerSummary {
    let base = 0u8;
    let stack_base = std::hint::black_box(&base) as *const u8 as usize;
    let tracing = shared.config.trace;
    let seed = shared.config.seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let ctx = WorkerContext {
        index,
        shared,
        local,
        slot: Cell::new(None),
        pending: Cell::new(None),
        current: RefCell::new(None),
        tracing,
        trace: RefCell::new(if tracing { Vec::with_capacity(1 << 16) } else { Vec::new() }),
        seq: Cell::new(0),
        tick: Cell::new(0),
        stats: Cell::new(WorkerStats::default()),
        outcomes: RefCell::new(Vec::new()),
        rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        stack_base,
    };
    CONTEXT.with(|c| c.set(&ctx));
    ctx.main_loop();
    CONTEXT.with(|c| c.set(ptr::null()));
    ctx.drain();
    WorkerSummary {
        stats: ctx.stats.get(),
        trace: ctx.trace.take(),
        outcomes: ctx.outcomes.take(),
    }
}

/// Claims `next` and runs it on the calling worker's stack.
pub(crate) fn resume_inline(next: Continuation) -> Result<(), StateError> {
    with_context(|ctx| {
        next.claim()?;
        ctx.run_nested(next);
        Ok(())
    })
    .unwrap_or(Err(StateError::NoContext))
}
