//! Process-wide monotonic nanosecond clock and calibrated busy-waiting.

use std::hint;
use std::sync::OnceLock;
use std::time::Instant;

fn origin() -> Instant {
    static ORIGIN: OnceLock<Instant> = OnceLock::new();
    *ORIGIN.get_or_init(Instant::now)
}

/// Nanoseconds since the first use of the clock in this process.
///
/// Backed by the OS monotonic clock, so readings taken on different threads
/// are comparable.
#[inline]
pub fn now_ns() -> u64 {
    origin().elapsed().as_nanos() as u64
}

/// Median cost of one back-to-back pair of [`now_ns`] readings.
///
/// Subtracted from measured critical-section lengths. Computed once.
pub fn overhead_ns() -> u64 {
    static OVERHEAD: OnceLock<u64> = OnceLock::new();
    *OVERHEAD.get_or_init(|| {
        let mut samples: Vec<u64> = (0..2001)
            .map(|_| {
                let a = now_ns();
                let b = now_ns();
                b - a
            })
            .collect();
        samples.sort_unstable();
        samples[samples.len() / 2]
    })
}

/// Busy-waits for at least `ns` nanoseconds of wall time.
///
/// Never yields the OS thread. `spin_for(0)` returns immediately.
#[inline]
pub fn spin_for(ns: u64) {
    if ns == 0 {
        return;
    }
    let start = now_ns();
    while now_ns().wrapping_sub(start) < ns {
        hint::spin_loop();
    }
}
