use std::fmt;
use std::ptr;

use super::mutex::{MutexGuard, RawMutex};
use super::spin::SpinLock;
use super::waitlist::{WaitList, Waiter};
use super::{current_id_or_zero, own_grant, wake, wake_without_suspending};
use crate::clock;
use crate::runtime::{self, record_sync, SyncEventKind};

struct CvState {
    waiters: WaitList,
    /// Mutex the current waiters released; null while nobody waits.
    mutex: *const RawMutex,
}

/// Condition variable used together with a [`Mutex`](super::Mutex).
///
/// Notification never resumes a waiter just to have it block on the mutex:
/// if the mutex is held, the waiter moves straight to the mutex's queue.
/// If the mutex is free, the notified task takes it and is handed over
/// according to the mutex's policy. There are no spurious wakeups.
///
/// All tasks waiting at the same time must use the same mutex.
pub struct CondVar {
    state: SpinLock<CvState>,
}

unsafe impl Send for CondVar {}
unsafe impl Sync for CondVar {}

impl CondVar {
    pub fn new() -> Self {
        CondVar {
            state: SpinLock::new(CvState {
                waiters: WaitList::new(),
                mutex: ptr::null(),
            }),
        }
    }

    pub fn waiters(&self) -> usize {
        self.state.lock().waiters.len()
    }

    /// Releases the mutex and suspends until notified; returns once the
    /// task owns the mutex again.
    pub async fn wait<'a, T: ?Sized>(&self, guard: MutexGuard<'a, T>) -> MutexGuard<'a, T> {
        let mutex = guard.into_mutex();
        let raw = mutex.raw();
        runtime::suspend(|me| {
            let id = me.id();
            {
                let mut st = self.state.lock();
                assert!(
                    st.mutex.is_null() || ptr::eq(st.mutex, raw),
                    "condition variable used with two different mutexes"
                );
                st.mutex = raw;
                let _ = st.waiters.push_back(me, 0, clock::now_ns());
            }
            // Enqueued before the release: a notifier that checks its
            // predicate under the mutex always sees this waiter.
            raw.release_suspended(id)
        })
        .await;
        record_sync(SyncEventKind::Enter, raw.id(), own_grant(), current_id_or_zero());
        MutexGuard::reacquired(mutex)
    }

    fn pop_one(&self) -> Option<(Waiter, &RawMutex)> {
        let mut st = self.state.lock();
        let w = st.waiters.pop_front()?;
        let raw = unsafe { &*st.mutex };
        if st.waiters.is_empty() {
            st.mutex = ptr::null();
        }
        Some((w, raw))
    }

    fn pop_all(&self) -> Option<(WaitList, &RawMutex)> {
        let mut st = self.state.lock();
        if st.waiters.is_empty() {
            return None;
        }
        let mut all = WaitList::new();
        all.append(&mut st.waiters);
        let raw = unsafe { &*st.mutex };
        st.mutex = ptr::null();
        Some((all, raw))
    }

    /// Wakes the longest waiter. If the mutex is free the waiter takes it
    /// and, under `Ces`, runs next on this worker while the caller suspends.
    pub async fn notify_one(&self) {
        let Some((w, raw)) = self.pop_one() else { return };
        if let Some(cont) = raw.acquire_or_enqueue(w.cont) {
            let first = Waiter { cont, tag: 0, enqueued_ns: 0 };
            wake(raw.policy(), raw.id(), first, WaitList::new()).await;
        }
    }

    /// Wakes every waiter. With a free mutex the first one takes it and the
    /// rest join the mutex queue; otherwise all join the queue and the
    /// caller continues.
    pub async fn notify_all(&self) {
        let Some((all, raw)) = self.pop_all() else { return };
        if let Some(cont) = raw.acquire_or_enqueue_all(all) {
            let first = Waiter { cont, tag: 0, enqueued_ns: 0 };
            wake(raw.policy(), raw.id(), first, WaitList::new()).await;
        }
    }

    /// [`notify_one`](Self::notify_one) without suspending the caller.
    pub fn notify_one_now(&self) {
        let Some((w, raw)) = self.pop_one() else { return };
        if let Some(cont) = raw.acquire_or_enqueue(w.cont) {
            let first = Waiter { cont, tag: 0, enqueued_ns: 0 };
            wake_without_suspending(raw.policy(), raw.id(), first, WaitList::new());
        }
    }

    /// [`notify_all`](Self::notify_all) without suspending the caller.
    pub fn notify_all_now(&self) {
        let Some((all, raw)) = self.pop_all() else { return };
        if let Some(cont) = raw.acquire_or_enqueue_all(all) {
            let first = Waiter { cont, tag: 0, enqueued_ns: 0 };
            wake_without_suspending(raw.policy(), raw.id(), first, WaitList::new());
        }
    }
}

impl Default for CondVar {
    fn default() -> Self {
        CondVar::new()
    }
}

impl fmt::Debug for CondVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CondVar").field("waiters", &self.waiters()).finish()
    }
}
