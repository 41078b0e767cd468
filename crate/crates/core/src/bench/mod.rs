//! Microbenchmark workloads.
//!
//! Every benchmark task loops `iters` times: draw a prime, enter a critical
//! section on a shared structure, optionally busy-wait `cs_ns` inside it,
//! leave, then factorize the prime by trial division outside of it. The
//! draws depend only on the seed and the task index, so every policy sees
//! the same accesses.

mod primes;
mod workloads;

use std::fmt;
use std::io;
use std::str::FromStr;

use serde::Serialize;

pub use self::primes::{factors, primes, PRIME_COUNT};
pub use self::workloads::{
    access_plan, affinity_workload, mutex_workload, mutex_workload_traced, queuing_delay_workload, run, rw_workload,
    semaphore_workload, Access, AffinityRun, DelayRun,
};

use crate::metrics::MetricsError;
use crate::runtime::WorkerStats;
use crate::sync::Policy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchKind {
    Mutex,
    Rwlock,
    Semaphore,
    Affinity,
    QueuingDelay,
}

impl BenchKind {
    pub const ALL: [BenchKind; 5] = [
        BenchKind::Mutex,
        BenchKind::Rwlock,
        BenchKind::Semaphore,
        BenchKind::Affinity,
        BenchKind::QueuingDelay,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchKind::Mutex => "mutex",
            BenchKind::Rwlock => "rwlock",
            BenchKind::Semaphore => "semaphore",
            BenchKind::Affinity => "affinity",
            BenchKind::QueuingDelay => "queuing-delay",
        }
    }
}

impl fmt::Display for BenchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("unknown benchmark `{0}` (expected one of: mutex, rwlock, semaphore, affinity, queuing-delay)")]
pub struct ParseBenchError(pub String);

impl FromStr for BenchKind {
    type Err = ParseBenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BenchKind::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| ParseBenchError(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub bench: BenchKind,
    pub policy: Policy,
    pub threads: usize,
    pub tasks: usize,
    pub iters: usize,
    /// Busy-wait inside every critical section.
    pub cs_ns: u64,
    /// Percentage of write accesses; rwlock only.
    pub writer_pct: Option<f64>,
    /// Mutexes for the affinity benchmark, permits for the semaphore one.
    pub resources: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            bench: BenchKind::Mutex,
            policy: Policy::Ces,
            threads: 8,
            tasks: 5000,
            iters: 1000,
            cs_ns: 0,
            writer_pct: None,
            resources: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("benchmark invalid: {0}")]
    Invalid(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl BenchConfig {
    pub fn new(bench: BenchKind, policy: Policy) -> Self {
        BenchConfig {
            bench,
            policy,
            writer_pct: (bench == BenchKind::Rwlock).then_some(50.0),
            ..BenchConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let fail = |m: &str| Err(BenchError::Config(m.to_string()));
        if self.threads == 0 || self.tasks == 0 || self.iters == 0 {
            return fail("threads, tasks and iters must be at least 1");
        }
        match (self.bench, self.writer_pct) {
            (BenchKind::Rwlock, None) => return fail("rwlock benchmark needs a writer percentage"),
            (BenchKind::Rwlock, Some(p)) if !(p > 0.0 && p <= 100.0) => {
                return fail("writer percentage must be in (0, 100]")
            }
            (BenchKind::Rwlock, Some(_)) => {}
            (_, Some(_)) => return fail("writer percentage only applies to the rwlock benchmark"),
            (_, None) => {}
        }
        if matches!(self.bench, BenchKind::Affinity | BenchKind::Semaphore) && self.resources == 0 {
            return fail("resources must be at least 1");
        }
        if self.bench == BenchKind::QueuingDelay && self.policy != Policy::Dispatch {
            return fail("the queuing-delay benchmark requires the dispatch policy");
        }
        Ok(())
    }

    pub fn total_iters(&self) -> u64 {
        self.tasks as u64 * self.iters as u64
    }
}

/// Outcome of one benchmark run, or the median of several.
#[derive(Clone, Debug)]
pub struct BenchRecord {
    pub config: BenchConfig,
    pub wall_ns: u64,
    pub completed_iters: u64,
    /// `completed_iters / wall`; `None` when the run failed validation.
    pub throughput_ops_s: Option<f64>,
    pub per_worker: Vec<WorkerStats>,
    pub invalid: Option<String>,
}

impl BenchRecord {
    pub(crate) fn new(config: BenchConfig, wall_ns: u64, completed_iters: u64, per_worker: Vec<WorkerStats>) -> Self {
        BenchRecord {
            throughput_ops_s: Some(completed_iters as f64 / (wall_ns.max(1) as f64 * 1e-9)),
            config,
            wall_ns,
            completed_iters,
            per_worker,
            invalid: None,
        }
    }

    pub fn invalid(config: BenchConfig, reason: String) -> Self {
        BenchRecord {
            config,
            wall_ns: 0,
            completed_iters: 0,
            throughput_ops_s: None,
            per_worker: Vec::new(),
            invalid: Some(reason),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.invalid.is_none()
    }
}

/// Column order of benchmark CSV files.
pub const CSV_HEADER: [&str; 11] = [
    "bench",
    "policy",
    "threads",
    "tasks",
    "iters",
    "cs_ns",
    "writer_pct",
    "resources",
    "seed",
    "throughput_ops_s",
    "wall_ns",
];

#[derive(Serialize)]
struct CsvRow {
    bench: BenchKind,
    policy: Policy,
    threads: usize,
    tasks: usize,
    iters: usize,
    cs_ns: u64,
    writer_pct: Option<f64>,
    resources: usize,
    seed: u64,
    throughput_ops_s: Option<f64>,
    wall_ns: Option<u64>,
}

/// Writes records with [`CSV_HEADER`]. Invalid runs leave throughput and
/// wall time empty.
pub fn write_csv<W: io::Write>(records: &[BenchRecord], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        let c = &r.config;
        w.serialize(CsvRow {
            bench: c.bench,
            policy: c.policy,
            threads: c.threads,
            tasks: c.tasks,
            iters: c.iters,
            cs_ns: c.cs_ns,
            writer_pct: c.writer_pct,
            resources: c.resources,
            seed: c.seed,
            throughput_ops_s: r.throughput_ops_s.map(|t| (t * 1000.0).round() / 1000.0),
            wall_ns: r.is_valid().then_some(r.wall_ns),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Runs one discarded warmup, then `repeat` measured runs, and returns the
/// run with the median throughput. Any failing run makes the result
/// invalid.
pub fn run_repeated(config: &BenchConfig, repeat: usize) -> BenchRecord {
    if let Err(e) = config.validate() {
        return BenchRecord::invalid(config.clone(), e.to_string());
    }
    let mut runs = Vec::with_capacity(repeat.max(1));
    for i in 0..=repeat.max(1) {
        match run(config) {
            Ok(r) if i > 0 => runs.push(r),
            Ok(_) => {}
            Err(e) => return BenchRecord::invalid(config.clone(), e.to_string()),
        }
    }
    // Lower middle for even counts.
    runs.sort_by_key(|r| r.wall_ns);
    let mid = (runs.len() - 1) / 2;
    runs.swap_remove(mid)
}

/// Runs every configuration with [`run_repeated`]. Failing cells are
/// recorded as invalid instead of aborting the sweep.
pub fn sweep(configs: &[BenchConfig], repeat: usize) -> Vec<BenchRecord> {
    configs.iter().map(|c| run_repeated(c, repeat)).collect()
}

/// Cross product of policies, thread counts and critical-section lengths.
pub fn sweep_grid(base: &BenchConfig, policies: &[Policy], threads: &[usize], cs_ns: &[u64]) -> Vec<BenchConfig> {
    let mut out = Vec::with_capacity(policies.len() * threads.len() * cs_ns.len());
    for &policy in policies {
        for &t in threads {
            for &cs in cs_ns {
                out.push(BenchConfig {
                    policy,
                    threads: t,
                    cs_ns: cs,
                    ..base.clone()
                });
            }
        }
    }
    out
}
