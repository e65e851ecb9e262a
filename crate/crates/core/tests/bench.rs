mod common;

use std::process::{Command, Stdio};
use std::sync::{mpsc, Mutex, MutexGuard};
use std::time::Duration;

use common::broker;
use zerocast::bench::{bridge_overheads, load, read_csv, summarize, TransportKind};
use zerocast::{Context, MessageHandle, PointCloud, Summary64};

const BENCH: &str = env!("CARGO_BIN_EXE_zerocast-bench");

/// These tests measure CPU time and timing; running them concurrently would
/// perturb each other.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn bench(args: &[&str]) -> zerocast::bench::Dataset {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.csv");
    let status = Command::new(BENCH)
        .args(args)
        .arg("--out")
        .arg(&out)
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success(), "zerocast-bench {args:?}: {status}");
    read_csv(std::fs::File::open(out).unwrap()).unwrap()
}

#[test]
fn calibrated_load_is_near_target() {
    let _serial = serial();
    let measured = load::calibrate(50, Duration::from_secs(3)).unwrap();
    assert!((measured - 50.0).abs() <= 10.0, "measured {measured:.1}%");
}

#[test]
fn warmup_is_excluded_per_cell() {
    let _serial = serial();
    let d = bench(&[
        "latency", "--sizes", "1K,10K", "--count", "12", "--warmup", "10", "--period-ms", "5",
    ]);
    let summary = summarize(&d).unwrap();
    assert_eq!(summary.len(), 4);
    assert!(summary.values().all(|s| s.count == 2), "{summary:?}");
    assert!(d.samples.iter().all(|s| s.seq >= 10));
}

#[test]
fn empty_messages_cross_both_bridge_routes() {
    let _serial = serial();
    let d = bench(&["bridge", "--sizes", "0", "--count", "40", "--period-ms", "5"]);
    let summary = summarize(&d).unwrap();
    for t in [TransportKind::Baseline, TransportKind::BridgeZcToBaseline, TransportKind::BridgeBaselineToZc] {
        assert!(summary.keys().any(|k| k.transport == t), "{t} missing");
    }
    let overheads = bridge_overheads(&summary);
    assert_eq!(overheads.len(), 2);
    assert!(overheads.values().all(|v| *v >= 0.0), "{overheads:?}");
}

/// The publisher worker embeds its send time; consecutive stamps are the
/// inter-publish intervals. Uses the suites' default period: on a shared
/// single-vCPU host, hypervisor stalls of several ms would dominate a
/// shorter one.
#[test]
fn publish_schedule_holds_its_period() {
    let _serial = serial();
    let b = broker();
    let ctx = Context::connect(b.path()).unwrap();
    let (tx, rx) = mpsc::channel();
    let _sub = ctx
        .create_subscription::<PointCloud, _>("sched", move |m: &MessageHandle<PointCloud>| tx.send(m.stamp_ns).unwrap())
        .unwrap();
    let mut child = Command::new(BENCH)
        .args(["worker", "pub", "--transport", "zerocopy", "--topic", "sched"])
        .args(["--size", "1024", "--count", "50", "--period-us", "100000", "--broker"])
        .arg(b.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let stamps: Vec<u64> = (0..50).map(|_| rx.recv_timeout(Duration::from_secs(10)).unwrap()).collect();
    drop(child.stdin.take());
    child.wait().unwrap();
    let errors: Vec<f64> = stamps
        .windows(2)
        .map(|w| ((w[1] - w[0]) as f64 - 100e6).abs() / 100e6)
        .collect();
    let p95 = Summary64::of(&errors).unwrap().p95;
    assert!(p95 <= 0.2, "p95 relative interval error {p95:.3}");
}
