//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria marked as needing parallel hardware compare throughput or
//! queuing behavior that only exists when workers run simultaneously. On a
//! host with fewer than 8 hardware threads they are still measured and
//! reported, but do not decide the exit status.

use std::cell::UnsafeCell;
use std::collections::{HashMap, HashSet};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex as StdMutex};
use std::thread;
use std::time::{Duration, Instant};

use ces::bench::{self, affinity_workload, mutex_workload_traced, queuing_delay_workload, BenchConfig, BenchKind};
use ces::clock;
use ces::metrics::{handoff_gaps, median};
use ces::runtime::{self, ExecutorConfig, Runtime, SyncEvent, SyncEventKind, TaskEventKind, Trace, TraceEvent};
use ces::sync::{CondVar, Mutex, Policy, PrimitiveId, RwLock, Semaphore};
use ces::task::TaskId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PARALLEL_HW: usize = 8;
const REPEAT: usize = 5;

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
    needs_parallel_hw: bool,
}

fn verdict(name: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict {
        name,
        pass,
        detail,
        needs_parallel_hw: false,
    }
}

fn hw_verdict(name: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict {
        needs_parallel_hw: true,
        ..verdict(name, pass, detail)
    }
}

struct Racy(UnsafeCell<u64>);
unsafe impl Sync for Racy {}
unsafe impl Send for Racy {}

fn traced(threads: usize, seed: u64) -> Runtime {
    Runtime::new(ExecutorConfig::with_threads(threads).seed(seed).trace(true)).unwrap()
}

async fn wait_until(ready: impl Fn() -> bool) {
    while !ready() {
        runtime::yield_now().await.unwrap();
    }
}

fn sync_events(trace: &Trace, prim: PrimitiveId, kind: SyncEventKind) -> Vec<SyncEvent> {
    trace.sync_events().filter(|e| e.prim == prim && e.kind == kind).copied().collect()
}

fn next_resume_after(trace: &Trace, h: &SyncEvent) -> Option<TaskId> {
    trace.worker_events(h.worker).into_iter().filter(|e| e.seq() > h.seq).find_map(|e| match e {
        TraceEvent::Task(t) if t.kind == TaskEventKind::Resume => Some(t.task),
        _ => None,
    })
}

fn mutual_exclusion() -> Verdict {
    const N: usize = 64;
    const M: usize = 10_000;
    let mut details = Vec::new();
    let mut pass = true;
    for policy in Policy::ALL {
        let rt = Runtime::new(ExecutorConfig::with_threads(8).seed(1)).unwrap();
        let m = Arc::new(Mutex::new(policy, ()));
        let racy = Arc::new(Racy(UnsafeCell::new(0)));
        for _ in 0..N {
            let (m, racy) = (m.clone(), racy.clone());
            rt.spawn(async move {
                for _ in 0..M {
                    let g = m.lock().await;
                    unsafe { *racy.0.get() += 1 };
                    g.unlock().await;
                }
            })
            .unwrap();
        }
        let start = Instant::now();
        let report = rt.run().unwrap();
        let secs = start.elapsed().as_secs_f64();
        let total = unsafe { *racy.0.get() };
        pass &= total == (N * M) as u64 && report.completed == N && secs < 30.0;
        details.push(format!("{policy}={total} in {secs:.2}s"));
    }
    verdict("mutual-exclusion", pass, details.join(", "))
}

/// Pairs each enqueue ticket with the acquisition the task then entered.
fn tickets_and_grants(trace: &Trace, prim: PrimitiveId) -> Option<Vec<(u64, u64)>> {
    let mut open: HashMap<TaskId, u64> = HashMap::new();
    let mut out = Vec::new();
    let mut events: Vec<_> = trace.sync_events().filter(|e| e.prim == prim).copied().collect();
    events.sort_by_key(|e| (e.t_ns, e.worker, e.seq));
    for e in events {
        match e.kind {
            SyncEventKind::Enq => {
                if open.insert(e.task, e.epoch).is_some() {
                    return None;
                }
            }
            SyncEventKind::Enter => {
                if let Some(ticket) = open.remove(&e.task) {
                    out.push((ticket, e.epoch));
                }
            }
            _ => {}
        }
    }
    open.is_empty().then_some(out)
}

fn fifo_admission() -> Verdict {
    const RUNS: u64 = 1_000;
    let mut contended = 0usize;
    let mut in_order = 0usize;
    let mut bad_runs = 0;
    for seed in 0..RUNS {
        let policy = Policy::ALL[(seed % 3) as usize];
        let rt = traced(2, seed);
        let m = Arc::new(Mutex::new(policy, ()));
        for t in 0..3u64 {
            let m = m.clone();
            rt.spawn(async move {
                let mut rng = ChaCha8Rng::seed_from_u64(seed * 3 + t);
                for _ in 0..10 {
                    let g = m.lock().await;
                    if rng.gen_bool(0.5) {
                        runtime::yield_now().await.unwrap();
                    }
                    g.unlock().await;
                    if rng.gen_bool(0.3) {
                        runtime::yield_now().await.unwrap();
                    }
                }
            })
            .unwrap();
        }
        let report = rt.run().unwrap();
        let Some(mut pairs) = tickets_and_grants(&report.trace, m.id()) else {
            bad_runs += 1;
            continue;
        };
        pairs.sort_by_key(|&(_, grant)| grant);
        contended += pairs.len();
        // A waiter is admitted in order if no earlier grant carries a later ticket.
        let mut max_ticket = 0;
        for (ticket, _) in pairs {
            if ticket > max_ticket {
                in_order += 1;
                max_ticket = ticket;
            }
        }
    }
    verdict(
        "fifo-admission",
        bad_runs == 0 && contended > 0 && in_order == contended,
        format!("{in_order}/{contended} contended entries in enqueue order over {RUNS} runs"),
    )
}

fn ces_same_worker_handoff() -> Verdict {
    let high = BenchConfig {
        threads: 16,
        tasks: 1000,
        iters: 100,
        resources: 4,
        seed: 5,
        ..BenchConfig::new(BenchKind::Affinity, Policy::Ces)
    };
    let low = BenchConfig { resources: 1000, ..high.clone() };
    let (h, l) = match (affinity_workload(&high), affinity_workload(&low)) {
        (Ok(h), Ok(l)) => (h, l),
        (h, l) => {
            return verdict(
                "ces-same-worker-handoff",
                false,
                format!("run failed: {:?} / {:?}", h.err(), l.err()),
            )
        }
    };
    let frac = h.report.same_worker_fraction();
    let changes = l.report.worker_changes();
    verdict(
        "ces-same-worker-handoff",
        frac == Some(1.0) && changes >= 1,
        format!(
            "R=4: same-worker {:?} over {} contended handoffs; R=N: {} worker changes",
            frac,
            h.report.contended_handoffs(),
            changes
        ),
    )
}

/// Post-section workers of a fully contended convoy of `k` tasks.
fn convoy_post_workers(policy: Policy, threads: usize, k: usize) -> HashSet<usize> {
    let rt = Runtime::new(ExecutorConfig::with_threads(threads).seed(3)).unwrap();
    let m = Arc::new(Mutex::new(policy, ()));
    let posts = Arc::new(StdMutex::new(HashSet::new()));
    {
        let m = m.clone();
        rt.spawn(async move {
            let g = m.lock().await;
            wait_until(|| m.raw().waiters() == k).await;
            g.unlock().await;
        })
        .unwrap();
    }
    for _ in 0..k {
        let (m, posts) = (m.clone(), posts.clone());
        rt.spawn(async move {
            m.lock().await.unlock().await;
            posts.lock().unwrap().insert(runtime::current_worker().unwrap());
            clock::spin_for(100_000);
        })
        .unwrap();
    }
    rt.run().unwrap();
    let out = posts.lock().unwrap().clone();
    out
}

fn mutex_config(policy: Policy, threads: usize, cs_ns: u64, iters: usize) -> BenchConfig {
    BenchConfig {
        threads,
        tasks: 5000,
        iters,
        cs_ns,
        seed: 1,
        ..BenchConfig::new(BenchKind::Mutex, policy)
    }
}

struct Throughputs {
    cache: HashMap<(Policy, usize, u64, usize), Result<f64, String>>,
}

impl Throughputs {
    fn get(&mut self, policy: Policy, threads: usize, cs_ns: u64, iters: usize) -> Result<f64, String> {
        self.cache
            .entry((policy, threads, cs_ns, iters))
            .or_insert_with(|| {
                let r = bench::run_repeated(&mutex_config(policy, threads, cs_ns, iters), REPEAT);
                r.throughput_ops_s.ok_or_else(|| r.invalid.unwrap_or_default())
            })
            .clone()
    }
}

fn collapse(tp: &mut Throughputs) -> Verdict {
    let posts = convoy_post_workers(Policy::Inline, 8, 100);
    let t = (|| -> Result<(f64, f64, f64), String> {
        Ok((
            tp.get(Policy::Inline, 1, 250, 1000)?,
            tp.get(Policy::Inline, 8, 250, 1000)?,
            tp.get(Policy::Ces, 8, 250, 1000)?,
        ))
    })();
    let (inl1, inl8, ces8) = match t {
        Ok(t) => t,
        Err(e) => return hw_verdict("collapse-of-parallelism", false, format!("run invalid: {e}")),
    };
    let flat = inl1.max(inl8) / inl1.min(inl8);
    let speedup = ces8 / inl8;
    hw_verdict(
        "collapse-of-parallelism",
        posts.len() == 1 && flat <= 1.3 && speedup >= 2.0,
        format!(
            "inline convoy post-sections on {} worker(s); inline T8/T1 spread {flat:.2}x (<=1.3); ces/inline at T8 {speedup:.2}x (>=2)",
            posts.len()
        ),
    )
}

fn queuing_delay() -> Verdict {
    let dispatch = BenchConfig {
        threads: 8,
        tasks: 5000,
        iters: 20,
        cs_ns: 250,
        seed: 2,
        ..BenchConfig::new(BenchKind::QueuingDelay, Policy::Dispatch)
    };
    let d = match queuing_delay_workload(&dispatch) {
        Ok(d) => d,
        Err(e) => return hw_verdict("queuing-delay-direction", false, format!("dispatch run failed: {e}")),
    };
    let ces = BenchConfig {
        bench: BenchKind::Mutex,
        policy: Policy::Ces,
        ..dispatch.clone()
    };
    let gaps = match mutex_workload_traced(&ces).map_err(|e| e.to_string()).and_then(|(_, report, _)| {
        handoff_gaps(&report.trace).map_err(|e| e.to_string())
    }) {
        Ok(g) => g,
        Err(e) => return hw_verdict("queuing-delay-direction", false, format!("ces run failed: {e}")),
    };
    let gap = median(&gaps);
    let t_queue = d.delay.median_t_queue_ns;
    let cs = d.cs.median_ns;
    hw_verdict(
        "queuing-delay-direction",
        t_queue >= 5.0 * cs && gap <= t_queue / 5.0,
        format!(
            "dispatch median t_queue {t_queue:.0} ns vs 5 x median cs {cs:.0} ns; ces median handoff gap {gap:.0} ns vs t_queue/5 ({} samples, {} gaps)",
            d.delay.samples.len(),
            gaps.len()
        ),
    )
}

fn throughput_ordering(tp: &mut Throughputs) -> Verdict {
    let t = (|| -> Result<_, String> {
        let ces = tp.get(Policy::Ces, 8, 250, 1000)?;
        let dis = tp.get(Policy::Dispatch, 8, 250, 1000)?;
        let inl = tp.get(Policy::Inline, 8, 250, 1000)?;
        let mut speedups = Vec::new();
        for cs in [250, 1_000, 7_500] {
            speedups.push((cs, tp.get(Policy::Ces, 8, cs, 200)? / tp.get(Policy::Dispatch, 8, cs, 200)?));
        }
        Ok((ces, dis, inl, speedups))
    })();
    let (ces, dis, inl, speedups) = match t {
        Ok(t) => t,
        Err(e) => return hw_verdict("throughput-ordering", false, format!("run invalid: {e}")),
    };
    let ordered = ces >= 1.5 * dis && dis >= inl;
    // Each step may rise by at most 10%.
    let trend = speedups.windows(2).all(|w| w[1].1 <= w[0].1 * 1.1);
    let sweep: Vec<_> = speedups.iter().map(|(cs, s)| format!("{cs}ns:{s:.2}x")).collect();
    hw_verdict(
        "throughput-ordering",
        ordered && trend,
        format!(
            "ops/s ces {ces:.0}, dispatch {dis:.0}, inline {inl:.0} (need ces>=1.5*dispatch>=inline); ces/dispatch by cs [{}]",
            sweep.join(", ")
        ),
    )
}

fn rw_trends() -> Verdict {
    let tp = |policy, pct| {
        let c = BenchConfig {
            threads: 8,
            tasks: 5000,
            iters: 200,
            cs_ns: 250,
            writer_pct: Some(pct),
            seed: 4,
            ..BenchConfig::new(BenchKind::Rwlock, policy)
        };
        let r = bench::run_repeated(&c, REPEAT);
        r.throughput_ops_s.ok_or_else(|| r.invalid.unwrap_or_default())
    };
    let t = (|| -> Result<_, String> {
        Ok((
            tp(Policy::Ces, 50.0)?,
            tp(Policy::Ces, 6.25)?,
            tp(Policy::Dispatch, 50.0)?,
            tp(Policy::Dispatch, 6.25)?,
        ))
    })();
    let (c50, c6, d50, d6) = match t {
        Ok(t) => t,
        Err(e) => return hw_verdict("rw-mutex-trends", false, format!("run invalid: {e}")),
    };
    let (s50, s6) = (c50 / d50, c6 / d6);
    hw_verdict(
        "rw-mutex-trends",
        c6 > c50 && s6 <= s50,
        format!("ces ops/s 50%: {c50:.0} -> 6.25%: {c6:.0}; ces/dispatch 50%: {s50:.2}x, 6.25%: {s6:.2}x"),
    )
}

fn semaphore_release_three() -> Verdict {
    const RUNS: u64 = 1_000;
    let mut ok = 0;
    let mut first_failure = None;
    for seed in 0..RUNS {
        match semaphore_once(seed) {
            Ok(()) => ok += 1,
            Err(e) => {
                first_failure.get_or_insert(format!("seed {seed}: {e}"));
            }
        }
    }
    verdict(
        "semaphore-release",
        ok == RUNS,
        match first_failure {
            None => format!("{ok}/{RUNS} runs admitted exactly 3 with one same-worker handoff"),
            Some(f) => format!("{ok}/{RUNS} runs correct; first failure {f}"),
        },
    )
}

fn semaphore_once(seed: u64) -> Result<(), String> {
    let rt = traced(2, seed);
    let s = Arc::new(Semaphore::new(Policy::Ces, 0));
    let after = Arc::new(StdMutex::new(None));
    for _ in 0..5 {
        let s = s.clone();
        rt.spawn(async move { s.acquire(1).await.unwrap() }).unwrap();
    }
    let releaser = {
        let (s, after) = (s.clone(), after.clone());
        rt.spawn(async move {
            wait_until(|| s.waiters() == 5).await;
            s.release(3).await.unwrap();
            *after.lock().unwrap() = Some(s.waiters());
            s.release(2).await.unwrap();
        })
        .unwrap()
    };
    let report = rt.run().unwrap();
    let t = &report.trace;
    if *after.lock().unwrap() != Some(2) {
        return Err(format!("{:?} waiters left after release(3)", after.lock().unwrap()));
    }
    let exit = sync_events(t, s.id(), SyncEventKind::Exit)
        .into_iter()
        .find(|e| e.task == releaser.id())
        .ok_or("no release recorded")?;
    let granted: Vec<_> = t
        .sync_events()
        .filter(|e| e.prim == s.id() && (1..=3).contains(&e.epoch))
        .filter(|e| matches!(e.kind, SyncEventKind::Handoff | SyncEventKind::Dispatch))
        .copied()
        .collect();
    let entered = sync_events(t, s.id(), SyncEventKind::Enter)
        .iter()
        .filter(|e| (1..=3).contains(&e.epoch))
        .count();
    let handoffs: Vec<_> = granted.iter().filter(|e| e.kind == SyncEventKind::Handoff).collect();
    if granted.len() != 3 || entered != 3 || handoffs.len() != 1 {
        return Err(format!("{} granted, {entered} entered, {} handoffs", granted.len(), handoffs.len()));
    }
    let h = handoffs[0];
    if h.worker != exit.worker || next_resume_after(t, h) != Some(h.task) {
        return Err("handoff did not resume on the releasing worker".into());
    }
    Ok(())
}

fn liveness() -> Verdict {
    const TASKS: usize = 200;
    const OPS: usize = 5_000;
    const TOTAL: u64 = (TASKS * OPS) as u64;

    struct Prims {
        mutexes: Vec<Mutex<u64>>,
        rws: Vec<RwLock<u64>>,
        sems: Vec<Semaphore>,
        cvs: Vec<(Mutex<u64>, CondVar)>,
    }
    let prims = Arc::new(Prims {
        mutexes: Policy::ALL.iter().map(|&p| Mutex::new(p, 0)).collect(),
        rws: Policy::ALL.iter().map(|&p| RwLock::new(p, 0)).collect(),
        sems: Policy::ALL.iter().map(|&p| Semaphore::new(p, 3)).collect(),
        cvs: Policy::ALL.iter().map(|&p| (Mutex::new(p, 0), CondVar::new())).collect(),
    });
    let acquisitions = Arc::new(AtomicU64::new(0));
    let rt = Runtime::new(ExecutorConfig::with_threads(8).seed(9)).unwrap();
    for t in 0..TASKS {
        let (prims, acq) = (prims.clone(), acquisitions.clone());
        rt.spawn(async move {
            let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
            // Tasks 2k and 2k+1 share a condition variable; one produces
            // what the other consumes.
            let (cm, cv) = &prims.cvs[(t / 2) % 3];
            for i in 0..OPS {
                let pause = rng.gen_bool(0.1);
                let which = rng.gen_range(0..3);
                if i % 10 == 0 {
                    let mut g = cm.lock().await;
                    if t % 2 == 0 {
                        *g += 1;
                        cv.notify_one().await;
                    } else {
                        while *g == 0 {
                            g = cv.wait(g).await;
                        }
                        *g -= 1;
                    }
                    g.unlock().await;
                } else {
                    match rng.gen_range(0..4) {
                        0 => {
                            let mut g = prims.mutexes[which].lock().await;
                            *g += 1;
                            if pause {
                                runtime::yield_now().await.unwrap();
                            }
                            g.unlock().await;
                        }
                        1 => {
                            let g = prims.rws[which].read().await;
                            if pause {
                                runtime::yield_now().await.unwrap();
                            }
                            g.unlock().await;
                        }
                        2 => {
                            let mut g = prims.rws[which].write().await;
                            *g += 1;
                            if pause {
                                runtime::yield_now().await.unwrap();
                            }
                            g.unlock().await;
                        }
                        _ => {
                            let n = rng.gen_range(1..=2);
                            prims.sems[which].acquire(n).await.unwrap();
                            if pause {
                                runtime::yield_now().await.unwrap();
                            }
                            prims.sems[which].release(n).await.unwrap();
                        }
                    }
                }
                acq.fetch_add(1, Ordering::Relaxed);
            }
        })
        .unwrap();
    }
    // Stop a hung run instead of blocking the acceptance pass forever.
    let done = Arc::new(AtomicBool::new(false));
    let watchdog = {
        let (done, handle) = (done.clone(), rt.handle());
        thread::spawn(move || {
            let start = Instant::now();
            while !done.load(Ordering::Acquire) {
                if start.elapsed() > Duration::from_secs(300) {
                    handle.shutdown();
                    return;
                }
                thread::sleep(Duration::from_millis(10));
            }
        })
    };
    let start = Instant::now();
    let report = rt.run().unwrap();
    done.store(true, Ordering::Release);
    watchdog.join().unwrap();
    let waiting: usize = prims.mutexes.iter().map(|m| m.raw().waiters()).sum::<usize>()
        + prims.rws.iter().map(|l| l.raw().snapshot().2).sum::<usize>()
        + prims.sems.iter().map(|s| s.waiters()).sum::<usize>()
        + prims.cvs.iter().map(|(m, cv)| m.raw().waiters() + cv.waiters()).sum::<usize>();
    let n = acquisitions.load(Ordering::Relaxed);
    verdict(
        "no-lost-wakeups",
        n == TOTAL && report.pending == 0 && waiting == 0 && report.panicked() == 0,
        format!(
            "{n}/{TOTAL} acquisitions in {:.1}s, {} pending tasks, {waiting} queued waiters",
            start.elapsed().as_secs_f64(),
            report.pending
        ),
    )
}

/// Largest native stack depth seen inside a fully contended CES convoy.
fn convoy_stack_depth(k: usize) -> (usize, usize) {
    let rt = Runtime::new(ExecutorConfig::with_threads(4).seed(6)).unwrap();
    let m = Arc::new(Mutex::new(Policy::Ces, ()));
    let deepest = Arc::new(AtomicUsize::new(0));
    {
        let m = m.clone();
        rt.spawn(async move {
            let g = m.lock().await;
            wait_until(|| m.raw().waiters() == k).await;
            g.unlock().await;
        })
        .unwrap();
    }
    for _ in 0..k {
        let (m, deepest) = (m.clone(), deepest.clone());
        rt.spawn(async move {
            let g = m.lock().await;
            deepest.fetch_max(runtime::stack_depth().unwrap(), Ordering::Relaxed);
            g.unlock().await;
        })
        .unwrap();
    }
    let report = rt.run().unwrap();
    (deepest.load(Ordering::Relaxed), report.completed)
}

fn stack_boundedness() -> Verdict {
    let (bound, _) = convoy_stack_depth(10);
    // One extra frame per link would add far more than this over 10,000 links.
    let bound = bound + 1024;
    let (depth, completed) = convoy_stack_depth(10_000);
    verdict(
        "stack-boundedness",
        completed == 10_001 && depth <= bound,
        format!("10,000-task convoy: deepest {depth} B, bound {bound} B"),
    )
}

fn main() -> ExitCode {
    let hw = thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    println!("acceptance: {hw} hardware thread(s)");
    let mut tp = Throughputs { cache: HashMap::new() };
    let checks: Vec<Box<dyn FnOnce(&mut Throughputs) -> Verdict>> = vec![
        Box::new(|_| mutual_exclusion()),
        Box::new(|_| fifo_admission()),
        Box::new(|_| ces_same_worker_handoff()),
        Box::new(collapse),
        Box::new(|_| queuing_delay()),
        Box::new(throughput_ordering),
        Box::new(|_| rw_trends()),
        Box::new(|_| semaphore_release_three()),
        Box::new(|_| liveness()),
        Box::new(|_| stack_boundedness()),
    ];
    let mut decisive_failures = 0;
    for check in checks {
        let start = Instant::now();
        let v = check(&mut tp);
        let mut note = String::new();
        if !v.pass {
            if v.needs_parallel_hw && hw < PARALLEL_HW {
                note = format!(" [host has {hw} hardware thread(s), criterion assumes >= {PARALLEL_HW}]");
            } else {
                decisive_failures += 1;
            }
        }
        println!(
            "{} {:<26} {}{} ({:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.name,
            v.detail,
            note,
            start.elapsed().as_secs_f64()
        );
    }
    if decisive_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
