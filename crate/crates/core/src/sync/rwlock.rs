use std::cell::UnsafeCell;
use std::fmt;
use std::ops::{Deref, DerefMut};

use super::spin::SpinLock;
use super::waitlist::{WaitList, Waiter};
use super::{current_id_or_zero, grant, own_grant, wake, wake_without_suspending, Policy, PrimitiveId};
use crate::clock;
use crate::runtime::{self, record_sync, SyncEventKind};
use crate::task::Continuation;

const READER: u64 = 0;
const WRITER: u64 = 1;

struct RwState {
    readers: usize,
    writer: bool,
    epoch: u64,
    waiters: WaitList,
}

impl RwState {
    fn next_epoch(&mut self) -> u64 {
        self.epoch += 1;
        self.epoch
    }

    /// A new reader may join unless a writer holds the lock or is queued.
    fn admits_reader(&self) -> bool {
        !self.writer && self.waiters.is_empty()
    }

    fn admits_writer(&self) -> bool {
        !self.writer && self.readers == 0 && self.waiters.is_empty()
    }
}

/// Ownership handed over by an unlock, granted under the guard.
struct Wakeup {
    first: Waiter,
    rest: WaitList,
}

/// Fair reader-writer mutex: FIFO admission, with consecutive readers at the
/// head of the queue admitted together.
///
/// A reader arriving while a writer is queued waits behind that writer.
pub struct RawRwLock {
    id: PrimitiveId,
    policy: Policy,
    state: SpinLock<RwState>,
}

impl RawRwLock {
    pub fn new(policy: Policy) -> Self {
        RawRwLock {
            id: PrimitiveId::next(),
            policy,
            state: SpinLock::new(RwState {
                readers: 0,
                writer: false,
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

    /// `(active readers, writer active, queued waiters)`.
    pub fn snapshot(&self) -> (usize, bool, usize) {
        let st = self.state.lock();
        (st.readers, st.writer, st.waiters.len())
    }

    fn try_read_epoch(&self) -> Option<u64> {
        let mut st = self.state.lock();
        if !st.admits_reader() {
            return None;
        }
        st.readers += 1;
        Some(st.next_epoch())
    }

    fn try_write_epoch(&self) -> Option<u64> {
        let mut st = self.state.lock();
        if !st.admits_writer() {
            return None;
        }
        st.writer = true;
        Some(st.next_epoch())
    }

    pub fn try_read(&self) -> bool {
        self.try_read_epoch()
            .map(|e| record_sync(SyncEventKind::Enter, self.id, e, current_id_or_zero()))
            .is_some()
    }

    pub fn try_write(&self) -> bool {
        self.try_write_epoch()
            .map(|e| record_sync(SyncEventKind::Enter, self.id, e, current_id_or_zero()))
            .is_some()
    }

    /// Returns the acquisition number.
    pub(crate) async fn read(&self) -> u64 {
        if let Some(e) = self.try_read_epoch() {
            record_sync(SyncEventKind::Enter, self.id, e, current_id_or_zero());
            return e;
        }
        runtime::suspend(|me| self.park(me, READER)).await;
        let e = own_grant();
        record_sync(SyncEventKind::Enter, self.id, e, current_id_or_zero());
        e
    }

    pub(crate) async fn write(&self) -> u64 {
        if let Some(e) = self.try_write_epoch() {
            record_sync(SyncEventKind::Enter, self.id, e, current_id_or_zero());
            return e;
        }
        runtime::suspend(|me| self.park(me, WRITER)).await;
        let e = own_grant();
        record_sync(SyncEventKind::Enter, self.id, e, current_id_or_zero());
        e
    }

    fn park(&self, me: Continuation, kind: u64) -> Option<Continuation> {
        let mut st = self.state.lock();
        let admitted = if kind == READER {
            st.admits_reader()
        } else {
            st.admits_writer()
        };
        if admitted {
            if kind == READER {
                st.readers += 1;
            } else {
                st.writer = true;
            }
            let e = st.next_epoch();
            grant(&me, e);
            return Some(me);
        }
        let id = me.id();
        let ticket = st.waiters.push_back(me, kind, clock::now_ns());
        record_sync(SyncEventKind::Enq, self.id, ticket, id);
        None
    }

    fn release_read(&self, epoch: u64) -> Option<Wakeup> {
        let mut st = self.state.lock();
        debug_assert!(st.readers > 0 && !st.writer, "read unlock without a read lock");
        record_sync(SyncEventKind::Exit, self.id, epoch, current_id_or_zero());
        st.readers -= 1;
        if st.readers > 0 || st.waiters.front_tag() != Some(WRITER) {
            return None;
        }
        let w = st.waiters.pop_front().expect("front tag implies a waiter");
        st.writer = true;
        let e = st.next_epoch();
        grant(&w.cont, e);
        Some(Wakeup {
            first: w,
            rest: WaitList::new(),
        })
    }

    fn release_write(&self, epoch: u64) -> Option<Wakeup> {
        let mut st = self.state.lock();
        debug_assert!(st.writer && st.readers == 0, "write unlock without the write lock");
        record_sync(SyncEventKind::Exit, self.id, epoch, current_id_or_zero());
        st.writer = false;
        let first = st.waiters.pop_front()?;
        let e = st.next_epoch();
        grant(&first.cont, e);
        let mut rest = WaitList::new();
        if first.tag == WRITER {
            st.writer = true;
        } else {
            st.readers = 1;
            while st.waiters.front_tag() == Some(READER) {
                let r = st.waiters.pop_front().expect("front tag implies a waiter");
                let e = st.next_epoch();
                grant(&r.cont, e);
                st.readers += 1;
                let _ = rest.push_back(r.cont, READER, r.enqueued_ns);
            }
        }
        Some(Wakeup { first, rest })
    }

    /// Releases a read lock. Only the last reader hands over, and only to a
    /// queued writer.
    pub(crate) async fn unlock_read(&self, epoch: u64) {
        if let Some(w) = self.release_read(epoch) {
            wake(self.policy, self.id, w.first, w.rest).await;
        }
    }

    /// Releases the write lock, handing over to the next writer or to the
    /// whole batch of readers at the head of the queue.
    pub(crate) async fn unlock_write(&self, epoch: u64) {
        if let Some(w) = self.release_write(epoch) {
            wake(self.policy, self.id, w.first, w.rest).await;
        }
    }

    fn unlock_read_now(&self, epoch: u64) {
        if let Some(w) = self.release_read(epoch) {
            wake_without_suspending(self.policy, self.id, w.first, w.rest);
        }
    }

    fn unlock_write_now(&self, epoch: u64) {
        if let Some(w) = self.release_write(epoch) {
            wake_without_suspending(self.policy, self.id, w.first, w.rest);
        }
    }
}

impl fmt::Debug for RawRwLock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (readers, writer, waiting) = self.snapshot();
        f.debug_struct("RawRwLock")
            .field("id", &self.id)
            .field("policy", &self.policy)
            .field("readers", &readers)
            .field("writer", &writer)
            .field("waiters", &waiting)
            .finish()
    }
}

/// Task-aware reader-writer mutex protecting a value.
pub struct RwLock<T: ?Sized> {
    raw: RawRwLock,
    value: UnsafeCell<T>,
}

unsafe impl<T: ?Sized + Send> Send for RwLock<T> {}
unsafe impl<T: ?Sized + Send + Sync> Sync for RwLock<T> {}

impl<T> RwLock<T> {
    pub fn new(policy: Policy, value: T) -> Self {
        RwLock {
            raw: RawRwLock::new(policy),
            value: UnsafeCell::new(value),
        }
    }

    pub fn into_inner(self) -> T {
        self.value.into_inner()
    }
}

impl<T: ?Sized> RwLock<T> {
    pub fn raw(&self) -> &RawRwLock {
        &self.raw
    }

    pub fn id(&self) -> PrimitiveId {
        self.raw.id
    }

    pub async fn read(&self) -> RwLockReadGuard<'_, T> {
        let epoch = self.raw.read().await;
        RwLockReadGuard {
            lock: self,
            epoch,
            held: true,
        }
    }

    pub async fn write(&self) -> RwLockWriteGuard<'_, T> {
        let epoch = self.raw.write().await;
        RwLockWriteGuard {
            lock: self,
            epoch,
            held: true,
        }
    }

    pub fn get_mut(&mut self) -> &mut T {
        self.value.get_mut()
    }
}

#[must_use = "dropping the guard unlocks the lock"]
pub struct RwLockReadGuard<'a, T: ?Sized> {
    lock: &'a RwLock<T>,
    epoch: u64,
    held: bool,
}

unsafe impl<T: ?Sized + Sync> Send for RwLockReadGuard<'_, T> {}
unsafe impl<T: ?Sized + Sync> Sync for RwLockReadGuard<'_, T> {}

impl<T: ?Sized> RwLockReadGuard<'_, T> {
    pub async fn unlock(mut self) {
        self.held = false;
        self.lock.raw.unlock_read(self.epoch).await;
    }
}

impl<T: ?Sized> Deref for RwLockReadGuard<'_, T> {
    type Target = T;
    fn deref(&self) -> &T {
        unsafe { &*self.lock.value.get() }
    }
}

impl<T: ?Sized> Drop for RwLockReadGuard<'_, T> {
    fn drop(&mut self) {
        if self.held {
            self.lock.raw.unlock_read_now(self.epoch);
        }
    }
}

#[must_use = "dropping the guard unlocks the lock"]
pub struct RwLockWriteGuard<'a, T: ?Sized> {
    lock: &'a RwLock<T>,
    epoch: u64,
    held: bool,
}

unsafe impl<T: ?Sized + Send> Send for RwLockWriteGuard<'_, T> {}
unsafe impl<T: ?Sized + Send + Sync> Sync for RwLockWriteGuard<'_, T> {}

impl<T: ?Sized> RwLockWriteGuard<'_, T> {
    pub async fn unlock(mut self) {
        self.held = false;
        self.lock.raw.unlock_write(self.epoch).await;
    }
}

impl<T: ?Sized> Deref for RwLockWriteGuard<'_, T> {
    type Target = T;
    fn deref(&self) -> &T {
        unsafe { &*self.lock.value.get() }
    }
}

impl<T: ?Sized> DerefMut for RwLockWriteGuard<'_, T> {
    fn deref_mut(&mut self) -> &mut T {
        unsafe { &mut *self.lock.value.get() }
    }
}

impl<T: ?Sized> Drop for RwLockWriteGuard<'_, T> {
    fn drop(&mut self) {
        if self.held {
            self.lock.raw.unlock_write_now(self.epoch);
        }
    }
}
