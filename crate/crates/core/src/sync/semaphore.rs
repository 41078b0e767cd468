use std::fmt;

use super::spin::SpinLock;
use super::waitlist::WaitList;
use super::{current_id_or_zero, grant, own_grant, wake, wake_without_suspending, Policy, PrimitiveId};
use crate::clock;
use crate::runtime::{self, record_sync, SyncEventKind};
use crate::task::Continuation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SemaphoreError {
    #[error("permit count must be at least 1")]
    ZeroPermits,
}

struct SemState {
    permits: u64,
    epoch: u64,
    /// Waiter tags hold the number of permits requested.
    waiters: WaitList,
}

/// Counting semaphore with strict FIFO admission.
///
/// A waiter that asks for more permits than are available blocks every
/// waiter behind it, even those that could be satisfied.
pub struct Semaphore {
    id: PrimitiveId,
    policy: Policy,
    state: SpinLock<SemState>,
}

impl Semaphore {
    pub fn new(policy: Policy, permits: u64) -> Self {
        Semaphore {
            id: PrimitiveId::next(),
            policy,
            state: SpinLock::new(SemState {
                permits,
                epoch: 0,
                waiters: WaitList::new(),
            }),
        }
    }

    pub fn id(&self) -> PrimitiveId {
        self.id
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn available_permits(&self) -> u64 {
        self.state.lock().permits
    }

    pub fn waiters(&self) -> usize {
        self.state.lock().waiters.len()
    }

    fn try_take(&self, n: u64) -> Option<u64> {
        let mut st = self.state.lock();
        if !st.waiters.is_empty() || st.permits < n {
            return None;
        }
        st.permits -= n;
        st.epoch += 1;
        Some(st.epoch)
    }

    pub fn try_acquire(&self, n: u64) -> Result<bool, SemaphoreError> {
        if n == 0 {
            return Err(SemaphoreError::ZeroPermits);
        }
        Ok(self
            .try_take(n)
            .map(|e| record_sync(SyncEventKind::Enter, self.id, e, current_id_or_zero()))
            .is_some())
    }

    /// Takes `n` permits, suspending until they are granted.
    pub async fn acquire(&self, n: u64) -> Result<(), SemaphoreError> {
        if n == 0 {
            return Err(SemaphoreError::ZeroPermits);
        }
        let epoch = match self.try_take(n) {
            Some(e) => e,
            None => {
                runtime::suspend(|me| self.park(me, n)).await;
                own_grant()
            }
        };
        record_sync(SyncEventKind::Enter, self.id, epoch, current_id_or_zero());
        Ok(())
    }

    fn park(&self, me: Continuation, n: u64) -> Option<Continuation> {
        let mut st = self.state.lock();
        if st.waiters.is_empty() && st.permits >= n {
            st.permits -= n;
            st.epoch += 1;
            grant(&me, st.epoch);
            return Some(me);
        }
        let id = me.id();
        let ticket = st.waiters.push_back(me, n, clock::now_ns());
        record_sync(SyncEventKind::Enq, self.id, ticket, id);
        None
    }

    /// Returns `n` permits and grants them to as many head waiters as they
    /// satisfy.
    fn give(&self, n: u64) -> WaitList {
        let mut st = self.state.lock();
        // Permits are not tied to an acquisition, so exits carry 0.
        record_sync(SyncEventKind::Exit, self.id, 0, current_id_or_zero());
        st.permits += n;
        let mut woken = WaitList::new();
        while let Some(need) = st.waiters.front_tag() {
            if need > st.permits {
                break;
            }
            let w = st.waiters.pop_front().expect("front tag implies a waiter");
            st.permits -= need;
            st.epoch += 1;
            grant(&w.cont, st.epoch);
            let _ = woken.push_back(w.cont, w.tag, w.enqueued_ns);
        }
        woken
    }

    /// Returns `n` permits. Under `Ces`, if any waiter was satisfied the
    /// first one resumes on this worker and the caller suspends; the rest
    /// are scheduled.
    pub async fn release(&self, n: u64) -> Result<(), SemaphoreError> {
        if n == 0 {
            return Err(SemaphoreError::ZeroPermits);
        }
        let mut woken = self.give(n);
        if let Some(first) = woken.pop_front() {
            wake(self.policy, self.id, first, woken).await;
        }
        Ok(())
    }

    /// Like [`release`](Self::release) but never suspends the caller;
    /// `Ces` hands over by dispatch.
    pub fn release_now(&self, n: u64) -> Result<(), SemaphoreError> {
        if n == 0 {
            return Err(SemaphoreError::ZeroPermits);
        }
        let mut woken = self.give(n);
        if let Some(first) = woken.pop_front() {
            wake_without_suspending(self.policy, self.id, first, woken);
        }
        Ok(())
    }
}

impl fmt::Debug for Semaphore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let st = self.state.lock();
        f.debug_struct("Semaphore")
            .field("id", &self.id)
            .field("policy", &self.policy)
            .field("permits", &st.permits)
            .field("waiters", &st.waiters.len())
            .finish()
    }
}
