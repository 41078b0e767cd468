//! Cooperative task runtime with combine-and-exchange scheduling (CES) locks.
//!
//! Tasks are stackless futures driven by a work-stealing executor. Every worker
//! owns a stealable FIFO deque and a single-slot *direct-resume* register that
//! is consumed before anything else on the next loop iteration. The
//! synchronization primitives in [`sync`] use the two scheduling verbs built on
//! top of that:
//!
//! - [`runtime::schedule`]: push a suspended task onto the shared injector so
//!   any worker may pick it up.
//! - [`runtime::switch_to`]: suspend the running task, push it onto the
//!   injector and make another suspended task the very next thing this worker
//!   runs.
//!
//! A contended CES unlock hands the lock to the head waiter with `switch_to`,
//! so successive critical sections run back to back on one worker while the
//! tasks that left the critical section migrate to other workers. The
//! [`sync::Policy::Inline`] and [`sync::Policy::Dispatch`] baselines use
//! [`runtime::resume_inline`] and [`runtime::schedule`] instead.
//!
//! ```
//! use std::sync::Arc;
//! use ces::runtime::{ExecutorConfig, Runtime};
//! use ces::sync::{Mutex, Policy};
//!
//! let rt = Runtime::new(ExecutorConfig::with_threads(2)).unwrap();
//! let counter = Arc::new(Mutex::new(Policy::Ces, 0u64));
//! for _ in 0..8 {
//!     let counter = counter.clone();
//!     rt.spawn(async move {
//!         for _ in 0..100 {
//!             let mut guard = counter.lock().await;
//!             *guard += 1;
//!             guard.unlock().await;
//!         }
//!     })
//!     .unwrap();
//! }
//! let report = rt.run().unwrap();
//! assert_eq!(report.completed, 8);
//! assert_eq!(counter.try_lock().map(|g| *g), Some(800));
//! ```

pub mod bench;
pub mod clock;
pub mod metrics;
pub mod runtime;
pub mod sync;
pub mod task;

pub use runtime::{ExecutorConfig, RunReport, Runtime};
pub use sync::Policy;
pub use task::{Continuation, JoinHandle, TaskId, TaskState};
