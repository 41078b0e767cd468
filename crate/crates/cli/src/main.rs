//! `ces-bench`: run one lock benchmark and write its results as CSV.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

use ces::bench::{self, affinity_workload, queuing_delay_workload, AffinityRun, BenchConfig, BenchError, BenchKind, BenchRecord, DelayRun};
use ces::Policy;

#[derive(Parser, Debug)]
#[command(name = "ces-bench", version, about = "Lock scheduling microbenchmarks")]
struct Cli {
    /// Benchmark: mutex, rwlock, semaphore, affinity or queuing-delay.
    #[arg(long, default_value = "mutex")]
    bench: BenchKind,

    /// Unlock policy: ces, dispatch or inline.
    #[arg(long, default_value = "ces")]
    policy: Policy,

    /// Worker threads.
    #[arg(long, env = "CES_THREADS", default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,

    /// Concurrent tasks.
    #[arg(long, default_value_t = 5000, value_parser = clap::value_parser!(u32).range(1..))]
    tasks: u32,

    /// Loop iterations per task.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u32).range(1..))]
    iters: u32,

    /// Busy-wait inside every critical section, in nanoseconds.
    #[arg(long, default_value_t = 0)]
    cs_ns: u64,

    /// Percentage of write accesses (rwlock only; default 50).
    #[arg(long)]
    writer_pct: Option<f64>,

    /// Mutexes (affinity) or permits (semaphore).
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    resources: u32,

    #[arg(long, env = "CES_SEED", default_value_t = 0)]
    seed: u64,

    /// Benchmark CSV; extra outputs go next to it.
    #[arg(long, default_value = "bench.csv")]
    out: PathBuf,

    /// Measured runs after one warmup; the median is reported.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    repeat: u32,

    /// Only print errors.
    #[arg(short, long)]
    quiet: bool,

    /// Print the benchmarks and policies, then exit.
    #[arg(long)]
    list: bool,
}

impl Cli {
    fn config(&self) -> BenchConfig {
        let base = BenchConfig::new(self.bench, self.policy);
        BenchConfig {
            threads: self.threads as usize,
            tasks: self.tasks as usize,
            iters: self.iters as usize,
            cs_ns: self.cs_ns,
            writer_pct: self.writer_pct.or(base.writer_pct),
            resources: self.resources as usize,
            seed: self.seed,
            ..base
        }
    }
}

/// Extra per-benchmark output of the reported run.
enum Extra {
    None,
    Affinity(AffinityRun),
    Delay(DelayRun),
}

/// Runs one warmup and `repeat` measured runs; keeps the median run by wall
/// time together with its extra output.
fn median_run(
    repeat: usize,
    mut once: impl FnMut() -> Result<(BenchRecord, Extra), BenchError>,
) -> Result<(BenchRecord, Extra), BenchError> {
    once()?;
    let mut runs = (0..repeat).map(|_| once()).collect::<Result<Vec<_>, _>>()?;
    runs.sort_by_key(|(r, _)| r.wall_ns);
    Ok(runs.swap_remove((runs.len() - 1) / 2))
}

fn execute(config: &BenchConfig, repeat: usize) -> (BenchRecord, Extra) {
    let result = match config.bench {
        BenchKind::Affinity => median_run(repeat, || {
            affinity_workload(config).map(|r| (r.record.clone(), Extra::Affinity(r)))
        }),
        BenchKind::QueuingDelay => median_run(repeat, || {
            queuing_delay_workload(config).map(|r| (r.record.clone(), Extra::Delay(r)))
        }),
        _ => Ok((bench::run_repeated(config, repeat), Extra::None)),
    };
    result.unwrap_or_else(|e| (BenchRecord::invalid(config.clone(), e.to_string()), Extra::None))
}

/// Writes through a temporary file in the target directory, then renames
/// it over `path`.
fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.with_file_name(name)
}

fn write_outputs(out: &Path, record: &BenchRecord, extra: &Extra) -> io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    write_atomic(out, |w| Ok(bench::write_csv(std::slice::from_ref(record), w)?))?;
    written.push(out.to_path_buf());
    match extra {
        Extra::None => {}
        Extra::Affinity(a) => {
            let p = sibling(out, "affinity.csv");
            write_atomic(&p, |w| Ok(a.trace.write_csv(w)?))?;
            written.push(p);
        }
        Extra::Delay(d) => {
            let p = sibling(out, "delay.csv");
            write_atomic(&p, |w| Ok(d.delay.write_csv(w)?))?;
            written.push(p);
        }
    }
    Ok(written)
}

fn summary(record: &BenchRecord, extra: &Extra, repeat: usize) -> String {
    let c = &record.config;
    let mut s = format!(
        "bench={} policy={} threads={} tasks={} iters={} cs_ns={} resources={} seed={}",
        c.bench, c.policy, c.threads, c.tasks, c.iters, c.cs_ns, c.resources, c.seed
    );
    if let Some(p) = c.writer_pct {
        s += &format!(" writer_pct={p}");
    }
    s.push('\n');
    match (&record.throughput_ops_s, &record.invalid) {
        (Some(t), _) => {
            s += &format!(
                "throughput {:.0} ops/s, wall {:.3} s (median of {repeat})\n",
                t,
                record.wall_ns as f64 * 1e-9
            );
            let tasks: Vec<_> = record.per_worker.iter().map(|w| w.completed.to_string()).collect();
            s += &format!("tasks completed per worker: [{}]\n", tasks.join(", "));
        }
        (None, reason) => s += &format!("INVALID: {}\n", reason.as_deref().unwrap_or("unknown")),
    }
    match extra {
        Extra::None => {}
        Extra::Affinity(a) => {
            let r = &a.report;
            s += &format!(
                "contended handoffs {}, same-worker fraction {}, worker changes {}\n",
                r.contended_handoffs(),
                r.same_worker_fraction().map_or("n/a".to_string(), |f| format!("{f:.4}")),
                r.worker_changes()
            );
        }
        Extra::Delay(d) => {
            s += &format!(
                "t_queue median {:.0} ns, p95 {:.0} ns, max {} ns; cs median {:.0} ns; {} samples\n",
                d.delay.median_t_queue_ns,
                d.delay.p95_t_queue_ns,
                d.delay.max_t_queue_ns,
                d.cs.median_ns,
                d.delay.samples.len()
            );
        }
    }
    s
}

fn list() {
    let benches: Vec<_> = BenchKind::ALL.iter().map(|b| b.as_str()).collect();
    let policies: Vec<_> = Policy::ALL.iter().map(|p| p.as_str()).collect();
    println!("benchmarks: {}", benches.join(", "));
    println!("policies: {}", policies.join(", "));
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list {
        list();
        return ExitCode::SUCCESS;
    }
    let config = cli.config();
    if let Err(e) = config.validate() {
        let msg = match e {
            BenchError::Config(m) => m,
            other => other.to_string(),
        };
        Cli::command().error(ErrorKind::ArgumentConflict, msg).exit();
    }
    if let Some(dir) = cli.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        if let Err(e) = fs::create_dir_all(dir) {
            eprintln!("error: cannot create {}: {e}", dir.display());
            return ExitCode::FAILURE;
        }
    }
    let repeat = cli.repeat as usize;
    let (record, extra) = execute(&config, repeat);
    let written = match write_outputs(&cli.out, &record, &extra) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("error: cannot write {}: {e}", cli.out.display());
            return ExitCode::FAILURE;
        }
    };
    if !cli.quiet {
        print!("{}", summary(&record, &extra, repeat));
        for p in written {
            println!("wrote {}", p.display());
        }
    }
    if let Some(reason) = &record.invalid {
        eprintln!("error: benchmark invalid: {reason}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
