use std::cell::UnsafeCell;
use std::fmt;
use std::ops::{Deref, DerefMut};

use super::spin::SpinLock;
use super::waitlist::{WaitList, Waiter};
use super::{current_id_or_zero, grant, own_grant, wake, wake_without_suspending, Policy, PrimitiveId};
use crate::clock;
use crate::runtime::{self, record_sync, SyncEventKind};
use crate::task::{Continuation, TaskId};

struct MutexState {
    locked: bool,
    /// Number of acquisitions granted so far.
    epoch: u64,
    waiters: WaitList,
    #[cfg(debug_assertions)]
    owner: Option<TaskId>,
}

impl MutexState {
    fn take(&mut self, _who: Option<TaskId>) -> u64 {
        self.locked = true;
        self.epoch += 1;
        #[cfg(debug_assertions)]
        {
            self.owner = _who;
        }
        self.epoch
    }
}

/// Two-state task-aware mutex without a payload.
///
/// `lock` is identical for every policy; the `unlock_*` methods implement the
/// three hand-over rules and [`RawMutex::unlock`] picks the one configured at
/// construction. The mutex is not reentrant. Debug builds track the owner and
/// panic on reentrant locking or on unlocking by a non-owner.
pub struct RawMutex {
    id: PrimitiveId,
    policy: Policy,
    state: SpinLock<MutexState>,
}

impl RawMutex {
    pub fn new(policy: Policy) -> Self {
        RawMutex {
            id: PrimitiveId::next(),
            policy,
            state: SpinLock::new(MutexState {
                locked: false,
                epoch: 0,
                waiters: WaitList::new(),
                #[cfg(debug_assertions)]
                owner: None,
            }),
        }
    }

    pub fn id(&self) -> PrimitiveId {
        self.id
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn is_locked(&self) -> bool {
        self.state.lock().locked
    }

    /// Number of suspended waiters.
    pub fn waiters(&self) -> usize {
        self.state.lock().waiters.len()
    }

    pub fn try_lock(&self) -> bool {
        let epoch = {
            let mut st = self.state.lock();
            if st.locked {
                return false;
            }
            st.take(runtime::current_task_id())
        };
        record_sync(SyncEventKind::Enter, self.id, epoch, current_id_or_zero());
        true
    }

    /// Enters immediately if the mutex is unlocked; otherwise suspends the
    /// task at the back of the waiter queue until ownership is handed to it.
    pub async fn lock(&self) {
        if self.try_lock() {
            return;
        }
        runtime::suspend(|me| self.park(me)).await;
        if runtime::tracing_enabled() {
            record_sync(SyncEventKind::Enter, self.id, own_grant(), current_id_or_zero());
        }
    }

    /// Runs on the worker right after the locking task suspended.
    fn park(&self, me: Continuation) -> Option<Continuation> {
        let mut st = self.state.lock();
        if !st.locked {
            let epoch = st.take(Some(me.id()));
            grant(&me, epoch);
            return Some(me);
        }
        #[cfg(debug_assertions)]
        assert_ne!(st.owner, Some(me.id()), "reentrant lock of mutex {}", self.id);
        let id = me.id();
        let ticket = st.waiters.push_back(me, 0, clock::now_ns());
        record_sync(SyncEventKind::Enq, self.id, ticket, id);
        None
    }

    /// Ends the current critical section. Either unlocks, or pops the head
    /// waiter and grants it ownership (the mutex stays locked).
    fn release(&self, releaser: Option<TaskId>) -> Option<Waiter> {
        let mut st = self.state.lock();
        debug_assert!(st.locked, "unlock of unlocked mutex {}", self.id);
        #[cfg(debug_assertions)]
        if let (Some(owner), Some(me)) = (st.owner, releaser) {
            assert_eq!(owner, me, "mutex {} unlocked by a task that does not own it", self.id);
        }
        let exit_task = releaser.unwrap_or(TaskId::from_raw(0));
        record_sync(SyncEventKind::Exit, self.id, st.epoch, exit_task);
        match st.waiters.pop_front() {
            None => {
                st.locked = false;
                #[cfg(debug_assertions)]
                {
                    st.owner = None;
                }
                None
            }
            Some(w) => {
                let epoch = st.take(Some(w.cont.id()));
                grant(&w.cont, epoch);
                Some(w)
            }
        }
    }

    /// Inline hand-over: the head waiter runs nested on this worker and this
    /// call returns once it suspends or completes.
    pub fn unlock_inline(&self) {
        if let Some(w) = self.release(runtime::current_task_id()) {
            wake_without_suspending(Policy::Inline, self.id, w, WaitList::new());
        }
    }

    /// Dispatch hand-over: the head waiter goes to the injector; the caller
    /// never suspends.
    pub fn unlock_dispatch(&self) {
        if let Some(w) = self.release(runtime::current_task_id()) {
            wake_without_suspending(Policy::Dispatch, self.id, w, WaitList::new());
        }
    }

    /// CES hand-over: with waiters, the caller suspends and is pushed to the
    /// injector while the head waiter resumes next on this worker. Without
    /// waiters the mutex is unlocked and the caller continues.
    pub async fn unlock_ces(&self) {
        if let Some(w) = self.release(runtime::current_task_id()) {
            wake(Policy::Ces, self.id, w, WaitList::new()).await;
        }
    }

    /// Unlocks with the configured policy.
    pub async fn unlock(&self) {
        match self.policy {
            Policy::Ces => self.unlock_ces().await,
            Policy::Dispatch => self.unlock_dispatch(),
            Policy::Inline => self.unlock_inline(),
        }
    }

    /// Unlocks without suspending (`Ces` degrades to dispatch).
    pub(crate) fn unlock_now(&self) {
        match self.policy {
            Policy::Inline => self.unlock_inline(),
            Policy::Dispatch | Policy::Ces => self.unlock_dispatch(),
        }
    }

    /// Release on behalf of a condition-variable waiter that has already
    /// suspended. Returns the task to run next on this worker, if any.
    pub(crate) fn release_suspended(&self, me: TaskId) -> Option<Continuation> {
        let w = self.release(Some(me))?;
        match self.policy {
            Policy::Ces => {
                record_sync(SyncEventKind::Handoff, self.id, super::granted(&w.cont), w.cont.id());
                Some(w.cont)
            }
            p => {
                wake_without_suspending(p, self.id, w, WaitList::new());
                None
            }
        }
    }

    /// Gives a notified condition-variable waiter the mutex if it is free,
    /// otherwise appends it to the waiter queue without resuming it. Returns
    /// the waiter back when it now owns the mutex.
    pub(crate) fn acquire_or_enqueue(&self, w: Continuation) -> Option<Continuation> {
        let mut st = self.state.lock();
        if !st.locked {
            let epoch = st.take(Some(w.id()));
            grant(&w, epoch);
            return Some(w);
        }
        let id = w.id();
        let ticket = st.waiters.push_back(w, 0, clock::now_ns());
        record_sync(SyncEventKind::Enq, self.id, ticket, id);
        None
    }

    /// Like [`acquire_or_enqueue`](Self::acquire_or_enqueue) for a batch.
    pub(crate) fn acquire_or_enqueue_all(&self, mut batch: WaitList) -> Option<Continuation> {
        let mut st = self.state.lock();
        let first = if st.locked {
            None
        } else {
            batch.pop_front().map(|w| {
                let epoch = st.take(Some(w.cont.id()));
                grant(&w.cont, epoch);
                w.cont
            })
        };
        let now = clock::now_ns();
        while let Some(w) = batch.pop_front() {
            let id = w.cont.id();
            let ticket = st.waiters.push_back(w.cont, 0, now);
            record_sync(SyncEventKind::Enq, self.id, ticket, id);
        }
        first
    }
}

impl Default for RawMutex {
    fn default() -> Self {
        RawMutex::new(Policy::Ces)
    }
}

impl fmt::Debug for RawMutex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let st = self.state.lock();
        f.debug_struct("RawMutex")
            .field("id", &self.id)
            .field("policy", &self.policy)
            .field("locked", &st.locked)
            .field("waiters", &st.waiters.len())
            .finish()
    }
}

/// Task-aware mutex protecting a value.
pub struct Mutex<T: ?Sized> {
    raw: RawMutex,
    value: UnsafeCell<T>,
}

unsafe impl<T: ?Sized + Send> Send for Mutex<T> {}
unsafe impl<T: ?Sized + Send> Sync for Mutex<T> {}

impl<T> Mutex<T> {
    pub fn new(policy: Policy, value: T) -> Self {
        Mutex {
            raw: RawMutex::new(policy),
            value: UnsafeCell::new(value),
        }
    }

    pub fn into_inner(self) -> T {
        self.value.into_inner()
    }
}

impl<T: ?Sized> Mutex<T> {
    pub fn raw(&self) -> &RawMutex {
        &self.raw
    }

    pub fn id(&self) -> PrimitiveId {
        self.raw.id
    }

    pub fn policy(&self) -> Policy {
        self.raw.policy
    }

    pub async fn lock(&self) -> MutexGuard<'_, T> {
        self.raw.lock().await;
        MutexGuard {
            mutex: self,
            held: true,
        }
    }

    pub fn try_lock(&self) -> Option<MutexGuard<'_, T>> {
        self.raw.try_lock().then_some(MutexGuard {
            mutex: self,
            held: true,
        })
    }

    pub fn get_mut(&mut self) -> &mut T {
        self.value.get_mut()
    }
}

impl<T: ?Sized + fmt::Debug> fmt::Debug for Mutex<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mutex").field("raw", &self.raw).finish_non_exhaustive()
    }
}

/// Proof of ownership of a [`Mutex`].
///
/// Release with [`MutexGuard::unlock`], which may suspend under `Ces`.
/// Dropping the guard instead releases without suspending, so a `Ces`
/// mutex then hands over by dispatch.
#[must_use = "dropping the guard unlocks the mutex"]
pub struct MutexGuard<'a, T: ?Sized> {
    pub(crate) mutex: &'a Mutex<T>,
    held: bool,
}

// The guard is moved between workers when its task migrates.
unsafe impl<T: ?Sized + Send> Send for MutexGuard<'_, T> {}
unsafe impl<T: ?Sized + Send + Sync> Sync for MutexGuard<'_, T> {}

impl<'a, T: ?Sized> MutexGuard<'a, T> {
    pub async fn unlock(mut self) {
        self.held = false;
        self.mutex.raw.unlock().await;
    }

    /// Forgets the guard without releasing; the caller takes over the
    /// release.
    pub(crate) fn into_mutex(mut self) -> &'a Mutex<T> {
        self.held = false;
        self.mutex
    }

    pub(crate) fn reacquired(mutex: &'a Mutex<T>) -> Self {
        MutexGuard { mutex, held: true }
    }
}

impl<T: ?Sized> Deref for MutexGuard<'_, T> {
    type Target = T;
    fn deref(&self) -> &T {
        unsafe { &*self.mutex.value.get() }
    }
}

impl<T: ?Sized> DerefMut for MutexGuard<'_, T> {
    fn deref_mut(&mut self) -> &mut T {
        unsafe { &mut *self.mutex.value.get() }
    }
}

impl<T: ?Sized> Drop for MutexGuard<'_, T> {
    fn drop(&mut self) {
        if self.held {
            self.mutex.raw.unlock_now();
        }
    }
}

impl<T: ?Sized + fmt::Debug> fmt::Debug for MutexGuard<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(&**self, f)
    }
}
