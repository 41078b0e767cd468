use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str = "bench,policy,threads,tasks,iters,cs_ns,writer_pct,resources,seed,throughput_ops_s,wall_ns";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ces-bench"))
        .args(args)
        .env_remove("CES_THREADS")
        .env_remove("CES_SEED")
        .output()
        .unwrap()
}

fn small<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["--threads", "2", "--tasks", "20", "--iters", "20", "--repeat", "1", "--out", out];
    v.extend_from_slice(extra);
    v
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn mutex_bench_writes_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.csv");
    let o = run(&small(out.to_str().unwrap(), &["--bench", "mutex", "--policy", "ces"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(HEADER));
    let row: Vec<_> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..9], ["mutex", "ces", "2", "20", "20", "0", "", "4", "0"]);
    assert!(row[9].parse::<f64>().unwrap() > 0.0);
    assert!(row[10].parse::<u64>().unwrap() > 0);
    assert!(lines.next().is_none());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("ops/s"), "{stdout}");
}

#[test]
fn full_size_flags_parse() {
    // Parse only: an unwritable output directory fails after validation.
    let o = run(&["--bench", "mutex", "--policy", "ces", "--threads", "8", "--tasks", "5000", "--iters", "1000", "--list"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn unknown_policy_is_a_usage_error() {
    let o = run(&["--policy", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    for p in ["ces", "dispatch", "inline"] {
        assert!(e.contains(p), "{e}");
    }
}

#[test]
fn unknown_bench_is_a_usage_error() {
    let o = run(&["--bench", "barrier"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("queuing-delay"));
}

#[test]
fn zero_threads_is_a_usage_error() {
    assert_eq!(run(&["--threads", "0"]).status.code(), Some(2));
}

#[test]
fn writer_pct_needs_rwlock() {
    let o = run(&["--bench", "mutex", "--writer-pct", "25"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rwlock"));
}

#[test]
fn rwlock_with_low_writer_pct_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rw.csv");
    let o = run(&small(out.to_str().unwrap(), &["--bench", "rwlock", "--writer-pct", "6.25"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let r = rows(&out);
    assert_eq!(r[1][0], "rwlock");
    assert_eq!(r[1][6], "6.25");
}

#[test]
fn queuing_delay_requires_dispatch() {
    let o = run(&["--bench", "queuing-delay", "--policy", "ces"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dispatch"));
}

#[test]
fn affinity_writes_two_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("aff.csv");
    let o = run(&small(out.to_str().unwrap(), &["--bench", "affinity", "--resources", "3"]));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(rows(&out)[0].join(","), HEADER);
    let a = rows(&dir.path().join("affinity.csv"));
    assert_eq!(a[0], ["resource_id", "seq", "worker_id", "contended"]);
    // One row per critical section.
    assert_eq!(a.len() - 1, 20 * 20);
    assert!(a[1..].iter().all(|r| ["0", "1", "2"].contains(&r[0].as_str())));
}

#[test]
fn queuing_delay_writes_delay_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("qd.csv");
    // Long critical sections on four workers make preemption inside them,
    // and so contention, near certain even on one core.
    let o = run(&[
        "--bench", "queuing-delay", "--policy", "dispatch", "--threads", "4", "--tasks", "100", "--iters", "100",
        "--cs-ns", "50000", "--repeat", "1", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let d = rows(&dir.path().join("delay.csv"));
    assert_eq!(d[0], ["mutex_id", "task_id", "t_sync_ns", "t_queue_ns"]);
    assert!(d.len() > 1);
}

#[test]
fn unwritable_output_fails_with_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = blocker.join("x.csv");
    let o = run(&small(out.to_str().unwrap(), &[]));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error"));
}

#[test]
fn environment_sets_threads_and_seed_but_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("env.csv");
    let base = ["--tasks", "10", "--iters", "10", "--repeat", "1", "--out", out.to_str().unwrap()];
    let o = Command::new(env!("CARGO_BIN_EXE_ces-bench"))
        .args(base)
        .env("CES_THREADS", "3")
        .env("CES_SEED", "77")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let r = rows(&out);
    assert_eq!((r[1][2].as_str(), r[1][8].as_str()), ("3", "77"));

    let o = Command::new(env!("CARGO_BIN_EXE_ces-bench"))
        .args(base)
        .args(["--threads", "2", "--seed", "5"])
        .env("CES_THREADS", "3")
        .env("CES_SEED", "77")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let r = rows(&out);
    assert_eq!((r[1][2].as_str(), r[1][8].as_str()), ("2", "5"));
}

#[test]
fn rerun_replaces_output_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    for _ in 0..2 {
        let o = run(&small(out.to_str().unwrap(), &["--bench", "semaphore"]));
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(rows(&out).len(), 2);
    // No temporary files left behind.
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}
