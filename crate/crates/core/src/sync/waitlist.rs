use std::ptr;

use crate::task::{Continuation, Task};

/// A dequeued waiter and the bookkeeping it carried in its node.
pub(crate) struct Waiter {
    pub(crate) cont: Continuation,
    pub(crate) tag: u64,
    pub(crate) enqueued_ns: u64,
}

/// FIFO of suspended tasks linked through the `WaitLink` embedded in each
/// task, so enqueueing never allocates.
///
/// Must only be used under the owning primitive's guard.
pub(crate) struct WaitList {
    head: Option<Continuation>,
    tail: *const Task,
    len: usize,
    /// Total `push_back` calls, used as enqueue tickets.
    pushed: u64,
}

unsafe impl Send for WaitList {}

impl WaitList {
    pub(crate) const fn new() -> Self {
        WaitList {
            head: None,
            tail: ptr::null(),
            len: 0,
            pushed: 0,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.len
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends a waiter and returns its enqueue ticket (1 for the first
    /// push on this list).
    pub(crate) fn push_back(&mut self, cont: Continuation, tag: u64, enqueued_ns: u64) -> u64 {
        let raw = &*cont.0 as *const Task;
        unsafe {
            let link = cont.link();
            debug_assert!((*link.next.get()).is_none(), "task already queued");
            *link.tag.get() = tag;
            *link.enqueued_ns.get() = enqueued_ns;
        }
        if self.tail.is_null() {
            self.head = Some(cont);
        } else {
            // The tail is kept alive by its predecessor's link (or `head`).
            unsafe { *(*self.tail).link.next.get() = Some(cont) };
        }
        self.tail = raw;
        self.len += 1;
        self.pushed += 1;
        self.pushed
    }

    pub(crate) fn pop_front(&mut self) -> Option<Waiter> {
        let cont = self.head.take()?;
        let link = cont.link();
        unsafe {
            self.head = (*link.next.get()).take();
            if self.head.is_none() {
                self.tail = ptr::null();
            }
            self.len -= 1;
            Some(Waiter {
                tag: *link.tag.get(),
                enqueued_ns: *link.enqueued_ns.get(),
                cont,
            })
        }
    }

    pub(crate) fn front_tag(&self) -> Option<u64> {
        self.head
            .as_ref()
            .map(|c| unsafe { *c.link().tag.get() })
    }

    /// Moves every node of `other` to the back of `self`.
    pub(crate) fn append(&mut self, other: &mut WaitList) {
        if other.is_empty() {
            return;
        }
        let head = other.head.take();
        if self.tail.is_null() {
            self.head = head;
        } else {
            unsafe { *(*self.tail).link.next.get() = head };
        }
        self.tail = other.tail;
        self.len += other.len;
        other.tail = ptr::null();
        other.len = 0;
    }
}

impl Drop for WaitList {
    fn drop(&mut self) {
        // Iterative: dropping the head would otherwise recurse through links.
        while self.pop_front().is_some() {}
    }
}
