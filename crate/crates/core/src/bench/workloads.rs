use std::collections::{HashMap, HashSet};
use std::hint::black_box;
use std::sync::atomic::{AtomicI64, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::primes::{factorize, primes, PRIME_COUNT};
use super::{BenchConfig, BenchError, BenchKind, BenchRecord};
use crate::clock;
use crate::metrics::{
    cs_length_stats, measure_queuing_delay, validate_affinity, AffinityReport, AffinityTrace, CsLengthStats,
    DelayReport,
};
use crate::runtime::{ExecutorConfig, RunReport, Runtime};
use crate::sync::{Mutex, Policy, PrimitiveId, RwLock, Semaphore};

/// One loop iteration of a benchmark task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Access {
    pub prime_idx: usize,
    pub resource: usize,
    pub write: bool,
}

/// The accesses task `task` performs. Depends only on the seed, the task
/// index, `iters`, `resources` and `writer_pct`, never on the policy or the
/// thread count.
pub fn access_plan(config: &BenchConfig, task: usize) -> impl Iterator<Item = Access> + Send + 'static {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(task as u64);
    let resources = config.resources.max(1);
    let write_frac = config.writer_pct.unwrap_or(100.0) / 100.0;
    (0..config.iters).map(move |_| {
        let prime_idx = rng.gen_range(0..PRIME_COUNT);
        let resource = rng.gen_range(0..resources);
        let write = rng.gen::<f64>() < write_frac;
        Access {
            prime_idx,
            resource,
            write,
        }
    })
}

/// The work outside the critical section.
fn parallel_section(p: u64) {
    let mut acc = 0u64;
    factorize(black_box(p), |d| acc = acc.wrapping_add(d));
    black_box(acc);
}

fn critical_section_wait(cs_ns: u64) {
    if cs_ns > 0 {
        clock::spin_for(cs_ns);
    }
}

fn runtime_for(config: &BenchConfig, trace: bool) -> Result<Runtime, BenchError> {
    let exec = ExecutorConfig::with_threads(config.threads).seed(config.seed).trace(trace);
    Runtime::new(exec).map_err(|e| BenchError::Config(e.to_string()))
}

fn spawn_all<F, Fut>(rt: &Runtime, config: &BenchConfig, mut body: F) -> Result<(), BenchError>
where
    F: FnMut(usize) -> Fut,
    Fut: std::future::Future<Output = ()> + Send + 'static,
{
    for t in 0..config.tasks {
        rt.spawn(body(t)).map_err(|e| BenchError::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn finish(config: &BenchConfig, report: &RunReport) -> Result<BenchRecord, BenchError> {
    if report.panicked() > 0 {
        return Err(BenchError::Invalid(format!("{} task(s) panicked", report.panicked())));
    }
    if report.completed != config.tasks {
        return Err(BenchError::Invalid(format!(
            "{} of {} tasks completed",
            report.completed, config.tasks
        )));
    }
    Ok(BenchRecord::new(
        config.clone(),
        report.wall.as_nanos() as u64,
        config.total_iters(),
        report.per_worker.clone(),
    ))
}

fn expected_keys(config: &BenchConfig, only_writes: bool) -> (HashSet<u64>, u64) {
    let p = primes();
    let mut keys = HashSet::new();
    let mut writes = 0;
    for t in 0..config.tasks {
        for a in access_plan(config, t) {
            if !only_writes || a.write {
                keys.insert(p[a.prime_idx]);
                writes += 1;
            }
        }
    }
    (keys, writes)
}

struct MapState {
    map: HashMap<u64, u64>,
    inserts: u64,
}

impl MapState {
    fn new() -> Self {
        MapState {
            map: HashMap::with_capacity(PRIME_COUNT),
            inserts: 0,
        }
    }

    fn check(&self, keys: &HashSet<u64>, inserts: u64) -> Result<(), BenchError> {
        if self.inserts != inserts {
            return Err(BenchError::Invalid(format!(
                "{} inserts recorded, {} performed",
                self.inserts, inserts
            )));
        }
        if self.map.len() != keys.len() || !self.map.iter().all(|(k, v)| k == v && keys.contains(k)) {
            return Err(BenchError::Invalid("shared map does not match the drawn primes".into()));
        }
        Ok(())
    }
}

fn mutex_run(config: &BenchConfig, trace: bool) -> Result<(BenchRecord, RunReport, PrimitiveId), BenchError> {
    let rt = runtime_for(config, trace)?;
    let shared = Arc::new(Mutex::new(config.policy, MapState::new()));
    let p = primes();
    let cs_ns = config.cs_ns;
    spawn_all(&rt, config, |t| {
        let shared = shared.clone();
        let plan = access_plan(config, t);
        async move {
            for a in plan {
                let prime = p[a.prime_idx];
                let mut g = shared.lock().await;
                g.map.insert(prime, prime);
                g.inserts += 1;
                critical_section_wait(cs_ns);
                g.unlock().await;
                parallel_section(prime);
            }
        }
    })?;
    let report = rt.run().map_err(|e| BenchError::Runtime(e.to_string()))?;
    let record = finish(config, &report)?;
    let (keys, inserts) = expected_keys(config, false);
    shared
        .try_lock()
        .ok_or_else(|| BenchError::Invalid("mutex still held after the run".into()))?
        .check(&keys, inserts)?;
    Ok((record, report, shared.id()))
}

/// Prime-insert benchmark: every iteration inserts its prime into a shared
/// map under the mutex.
pub fn mutex_workload(config: &BenchConfig) -> Result<BenchRecord, BenchError> {
    mutex_run(config, false).map(|(r, _, _)| r)
}

/// The prime-insert benchmark with tracing enabled; returns the run report
/// with its trace and the mutex id.
pub fn mutex_workload_traced(config: &BenchConfig) -> Result<(BenchRecord, RunReport, PrimitiveId), BenchError> {
    mutex_run(config, true)
}

/// Prime-insert benchmark on a reader-writer mutex. Writes insert, reads
/// look the prime up.
pub fn rw_workload(config: &BenchConfig) -> Result<BenchRecord, BenchError> {
    let rt = runtime_for(config, false)?;
    let shared = Arc::new(RwLock::new(config.policy, MapState::new()));
    // Readers count up, a writer holds -1.
    let occupancy = Arc::new(AtomicI64::new(0));
    let violations = Arc::new(AtomicU64::new(0));
    let p = primes();
    let cs_ns = config.cs_ns;
    spawn_all(&rt, config, |t| {
        let (shared, occupancy, violations) = (shared.clone(), occupancy.clone(), violations.clone());
        let plan = access_plan(config, t);
        async move {
            for a in plan {
                let prime = p[a.prime_idx];
                if a.write {
                    let mut g = shared.write().await;
                    if occupancy.compare_exchange(0, -1, Ordering::AcqRel, Ordering::Acquire).is_err() {
                        violations.fetch_add(1, Ordering::Relaxed);
                    }
                    g.map.insert(prime, prime);
                    g.inserts += 1;
                    critical_section_wait(cs_ns);
                    occupancy.store(0, Ordering::Release);
                    g.unlock().await;
                } else {
                    let g = shared.read().await;
                    if occupancy.fetch_add(1, Ordering::AcqRel) < 0 {
                        violations.fetch_add(1, Ordering::Relaxed);
                    }
                    black_box(g.map.get(&prime));
                    critical_section_wait(cs_ns);
                    occupancy.fetch_sub(1, Ordering::AcqRel);
                    g.unlock().await;
                }
                parallel_section(prime);
            }
        }
    })?;
    let report = rt.run().map_err(|e| BenchError::Runtime(e.to_string()))?;
    let record = finish(config, &report)?;
    let v = violations.load(Ordering::Relaxed);
    if v > 0 {
        return Err(BenchError::Invalid(format!("{v} reader-writer exclusion violations")));
    }
    let (keys, writes) = expected_keys(config, true);
    let shared = Arc::try_unwrap(shared).map_err(|_| BenchError::Invalid("lock still shared".into()))?;
    shared.into_inner().check(&keys, writes)?;
    Ok(record)
}

/// Every iteration holds one of `resources` semaphore permits for its
/// critical section.
pub fn semaphore_workload(config: &BenchConfig) -> Result<BenchRecord, BenchError> {
    let rt = runtime_for(config, false)?;
    let permits = config.resources as u64;
    let sem = Arc::new(Semaphore::new(config.policy, permits));
    let inside = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let done = Arc::new(AtomicU64::new(0));
    let p = primes();
    let cs_ns = config.cs_ns;
    spawn_all(&rt, config, |t| {
        let (sem, inside, peak, done) = (sem.clone(), inside.clone(), peak.clone(), done.clone());
        let plan = access_plan(config, t);
        async move {
            for a in plan {
                let prime = p[a.prime_idx];
                sem.acquire(1).await.expect("one permit");
                let now = inside.fetch_add(1, Ordering::AcqRel) + 1;
                peak.fetch_max(now, Ordering::AcqRel);
                critical_section_wait(cs_ns);
                done.fetch_add(1, Ordering::Relaxed);
                inside.fetch_sub(1, Ordering::AcqRel);
                sem.release(1).await.expect("one permit");
                parallel_section(prime);
            }
        }
    })?;
    let report = rt.run().map_err(|e| BenchError::Runtime(e.to_string()))?;
    let record = finish(config, &report)?;
    let peak = peak.load(Ordering::Relaxed);
    if peak as u64 > permits {
        return Err(BenchError::Invalid(format!("{peak} holders with {permits} permits")));
    }
    if done.load(Ordering::Relaxed) != config.total_iters() || sem.available_permits() != permits {
        return Err(BenchError::Invalid("permits or iterations lost".into()));
    }
    Ok(record)
}

/// Result of the affinity benchmark.
#[derive(Clone, Debug)]
pub struct AffinityRun {
    pub record: BenchRecord,
    pub trace: AffinityTrace,
    pub report: AffinityReport,
}

/// Each iteration increments one of `resources` mutex-guarded counters,
/// chosen uniformly at random. Traced.
pub fn affinity_workload(config: &BenchConfig) -> Result<AffinityRun, BenchError> {
    let rt = runtime_for(config, true)?;
    let counters: Arc<Vec<Mutex<u64>>> = Arc::new((0..config.resources).map(|_| Mutex::new(config.policy, 0)).collect());
    let p = primes();
    let cs_ns = config.cs_ns;
    spawn_all(&rt, config, |t| {
        let counters = counters.clone();
        let plan = access_plan(config, t);
        async move {
            for a in plan {
                let mut g = counters[a.resource].lock().await;
                *g += 1;
                critical_section_wait(cs_ns);
                g.unlock().await;
                parallel_section(p[a.prime_idx]);
            }
        }
    })?;
    let report = rt.run().map_err(|e| BenchError::Runtime(e.to_string()))?;
    let record = finish(config, &report)?;
    let mut expected = vec![0u64; config.resources];
    for t in 0..config.tasks {
        for a in access_plan(config, t) {
            expected[a.resource] += 1;
        }
    }
    for (i, m) in counters.iter().enumerate() {
        let got = m.try_lock().map(|g| *g);
        if got != Some(expected[i]) {
            return Err(BenchError::Invalid(format!(
                "resource {i}: {got:?} increments, expected {}",
                expected[i]
            )));
        }
    }
    let ids: Vec<PrimitiveId> = counters.iter().map(|m| m.id()).collect();
    let trace = AffinityTrace::from_trace(&report.trace, &ids)?;
    let affinity = validate_affinity(&trace)?;
    Ok(AffinityRun {
        record,
        trace,
        report: affinity,
    })
}

/// Result of the queuing-delay benchmark.
#[derive(Clone, Debug)]
pub struct DelayRun {
    pub record: BenchRecord,
    pub delay: DelayReport,
    pub cs: CsLengthStats,
}

/// Traced prime-insert benchmark under the dispatch policy, reduced to
/// per-hand-over delay samples.
pub fn queuing_delay_workload(config: &BenchConfig) -> Result<DelayRun, BenchError> {
    if config.policy != Policy::Dispatch {
        return Err(BenchError::Config(
            "the queuing-delay benchmark requires the dispatch policy".into(),
        ));
    }
    let (record, report, id) = mutex_workload_traced(config)?;
    let delay = measure_queuing_delay(&report.trace)?;
    let cs = cs_length_stats(&report.trace, &[id])?;
    Ok(DelayRun { record, delay, cs })
}

/// Runs the benchmark selected by `config.bench` once.
pub fn run(config: &BenchConfig) -> Result<BenchRecord, BenchError> {
    config.validate()?;
    match config.bench {
        BenchKind::Mutex => mutex_workload(config),
        BenchKind::Rwlock => rw_workload(config),
        BenchKind::Semaphore => semaphore_workload(config),
        BenchKind::Affinity => affinity_workload(config).map(|r| r.record),
        BenchKind::QueuingDelay => queuing_delay_workload(config).map(|r| r.record),
    }
}
