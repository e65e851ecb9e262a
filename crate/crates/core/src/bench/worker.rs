//! Worker roles. Each prints `READY <prio>` once registered; the subscriber
//! then prints `S <seq> <latency_ns>` per callback and ends with `DONE` or
//! `TIMEOUT`. Closing a worker's stdin tells it the cell is over.

use std::io::Read;
use std::path::Path;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use super::cli::{Side, WorkerCommand};
use super::{CALLBACK_PRIORITY, FIFO_PRIORITY};
use crate::bridge::{start_bridge, BridgeConfig, Direction};
use crate::client::{ClientError, Context, MessageHandle};
use crate::clock::{monotonic_ns, set_realtime_priority};
use crate::message::{Detached, PointCloud};
use crate::protocol::ErrorCode;

/// Extra wait for the first message: the publisher starts after the
/// subscriber reports ready.
const STARTUP_GRACE: Duration = Duration::from_secs(30);

pub fn run(cmd: &WorkerCommand) -> Result<(), ClientError> {
    match cmd {
        WorkerCommand::Sub {
            transport,
            topic,
            count,
            timeout_ms,
            broker,
            realtime,
        } => subscriber(*transport, topic, *count, Duration::from_millis(*timeout_ms), broker, *realtime),
        WorkerCommand::Pub {
            transport,
            topic,
            size,
            count,
            period_us,
            broker,
            realtime,
        } => publisher(*transport, topic, *size, *count, Duration::from_micros(*period_us), broker, *realtime),
        WorkerCommand::Bridge {
            topic,
            direction,
            broker,
            realtime,
        } => bridge(topic, *direction, broker, *realtime),
    }
}

/// Must run before the context exists so its threads inherit the policy.
fn elevate(realtime: bool, priority: i32) -> &'static str {
    if realtime && set_realtime_priority(priority) {
        "fifo"
    } else {
        "default"
    }
}

fn wait_for_stdin_close() {
    let mut sink = [0u8; 64];
    let mut stdin = std::io::stdin();
    while matches!(stdin.read(&mut sink), Ok(n) if n > 0) {}
}

fn subscriber(
    side: Side,
    topic: &str,
    count: usize,
    timeout: Duration,
    broker: &Path,
    realtime: bool,
) -> Result<(), ClientError> {
    let prio = elevate(realtime, CALLBACK_PRIORITY);
    let ctx = Context::connect(broker)?;
    let (tx, rx) = mpsc::channel::<(u64, u64)>();
    let _sub = match side {
        Side::Zerocopy => ctx.create_subscription::<PointCloud, _>(topic, move |h: &MessageHandle<PointCloud>| {
            let now = monotonic_ns();
            let _ = tx.send((h.seq, now.saturating_sub(h.stamp_ns)));
        })?,
        // Deserialization happens before the callback, so it is measured.
        Side::Baseline => ctx.create_baseline_subscription::<PointCloud, _>(topic, move |_, m: Detached<PointCloud>| {
            let now = monotonic_ns();
            let _ = tx.send((m.seq, now.saturating_sub(m.stamp_ns)));
        })?,
    };
    println!("READY {prio}");
    let mut wait = timeout + STARTUP_GRACE;
    for _ in 0..count {
        match rx.recv_timeout(wait) {
            Ok((seq, lat)) => println!("S {seq} {lat}"),
            Err(_) => {
                println!("TIMEOUT");
                return Ok(());
            }
        }
        wait = timeout;
    }
    println!("DONE");
    Ok(())
}

fn publisher(
    side: Side,
    topic: &str,
    size: usize,
    count: usize,
    period: Duration,
    broker: &Path,
    realtime: bool,
) -> Result<(), ClientError> {
    let prio = elevate(realtime, FIFO_PRIORITY);
    let ctx = Context::connect(broker)?;
    enum Sender {
        Zc(crate::client::Publisher<PointCloud>),
        Bl(crate::baseline::BaselinePublisher<PointCloud>, Detached<PointCloud>),
    }
    let mut sender = match side {
        Side::Zerocopy => Sender::Zc(ctx.create_publisher(topic)?),
        Side::Baseline => {
            let mut msg = Detached::<PointCloud>::new();
            let (m, store) = msg.parts_mut();
            m.data.resize(store, size, 0)?;
            fill_header(m, size);
            Sender::Bl(ctx.create_baseline_publisher(topic)?, msg)
        }
    };
    println!("READY {prio}");

    let start = Instant::now();
    for i in 0..count {
        let due = start + period * i as u32;
        if let Some(d) = due.checked_duration_since(Instant::now()) {
            std::thread::sleep(d);
        }
        match &mut sender {
            Sender::Zc(p) => {
                let mut loan = p.loan()?;
                {
                    let (m, store) = loan.parts_mut();
                    m.data.resize(store, size, i as u8)?;
                    fill_header(m, size);
                    m.seq = i as u64;
                }
                loan.stamp_ns = monotonic_ns();
                loop {
                    match p.publish(loan) {
                        Ok(_) => break,
                        Err(e) if e.error.code() == Some(ErrorCode::QueueFull) => {
                            loan = e.loan;
                            std::thread::sleep(Duration::from_micros(200));
                        }
                        Err(e) => return Err(e.error),
                    }
                }
            }
            Sender::Bl(p, msg) => {
                let (m, _) = msg.parts_mut();
                m.seq = i as u64;
                m.stamp_ns = monotonic_ns();
                p.publish(msg)?;
            }
        }
    }
    println!("DONE");
    wait_for_stdin_close();
    // Exiting with entries still referenced would cancel their deliveries.
    let deadline = Instant::now() + Duration::from_secs(5);
    while ctx.outstanding_entries() > 0 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(2));
    }
    Ok(())
}

fn fill_header(m: &mut PointCloud, size: usize) {
    m.height = 1;
    m.width = size as u32;
    m.point_step = 1;
    m.row_step = size as u32;
    m.is_dense = 1;
}

fn bridge(topic: &str, direction: Direction, broker: &Path, realtime: bool) -> Result<(), ClientError> {
    let prio = elevate(realtime, FIFO_PRIORITY);
    let running = start_bridge::<PointCloud>(&BridgeConfig {
        topic: topic.to_owned(),
        direction,
        broker: broker.to_path_buf(),
    })?;
    println!("READY {prio}");
    wait_for_stdin_close();
    let stats = running.stop();
    log::info!("bridge {topic:?} finished: {stats:?}");
    Ok(())
}
