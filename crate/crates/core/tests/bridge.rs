mod common;

use std::sync::mpsc;
use std::time::Duration;

use common::{broker, wait_until, TestBroker};
use zerocast::bridge::{start_bridge, BridgeConfig, Direction, RunningBridge};
use zerocast::{Context, Detached, MessageHandle, PointCloud};

const T: Duration = Duration::from_secs(5);
const QUIET: Duration = Duration::from_millis(300);

fn bridge(b: &TestBroker, topic: &str, direction: Direction) -> RunningBridge {
    start_bridge::<PointCloud>(&BridgeConfig {
        topic: topic.into(),
        direction,
        broker: b.path(),
    })
    .unwrap()
}

fn payload(n: usize) -> Vec<u8> {
    (0..n).map(|i| (i * 31 % 251) as u8).collect()
}

#[test]
fn zero_copy_publish_reaches_baseline_subscriber_intact() {
    let b = broker();
    let running = bridge(&b, "a", Direction::ZcToBaseline);
    let ctx = Context::connect(b.path()).unwrap();
    let (tx, rx) = mpsc::channel();
    let _sub = ctx
        .create_baseline_subscription::<PointCloud, _>("a", move |origin, m| {
            tx.send((origin, m.seq, m.data.as_slice().to_vec())).unwrap()
        })
        .unwrap();
    let p = ctx.create_publisher::<PointCloud>("a").unwrap();
    let mut loan = p.loan().unwrap();
    loan.seq = 4;
    loan.seq_extend(|m| &mut m.data, &payload(5000)).unwrap();
    p.publish(loan).unwrap();

    let (origin, seq, data) = rx.recv_timeout(T).unwrap();
    assert_eq!(origin, running.identities().baseline_publisher.unwrap());
    assert_eq!((seq, data), (4, payload(5000)));
    assert!(rx.recv_timeout(QUIET).is_err());
    assert_eq!(running.stop().zc_to_baseline, 1);
}

#[test]
fn baseline_publish_arrives_in_the_bridge_arena() {
    let b = broker();
    let running = bridge(&b, "b", Direction::BaselineToZc);
    let ctx = Context::connect(b.path()).unwrap();
    let (tx, rx) = mpsc::channel();
    let _sub = ctx
        .create_subscription::<PointCloud, _>("b", move |h: &MessageHandle<PointCloud>| {
            tx.send((h.entry().publisher, h.arena_base(), h.address(), h.data.as_slice().to_vec())).unwrap()
        })
        .unwrap();
    let p = ctx.create_baseline_publisher::<PointCloud>("b").unwrap();
    let mut msg = Detached::<PointCloud>::new();
    let (m, store) = msg.parts_mut();
    m.data.extend_from_slice(store, &payload(777)).unwrap();
    p.publish(&msg).unwrap();

    let (publisher, base, address, data) = rx.recv_timeout(T).unwrap();
    assert_eq!(publisher, running.identities().zc_publisher.unwrap());
    // Bridge and test share a process, hence an arena.
    let pid = std::process::id();
    let arena = b.handle.with_state(move |s| s.arena_assignment(pid)).expect("bridge arena");
    assert_eq!(base as u64, arena.base);
    assert!(address as u64 >= arena.base && (address as u64) < arena.base + arena.capacity);
    assert_eq!(data, payload(777));
    running.stop();
}

#[test]
fn both_directions_do_not_echo() {
    let b = broker();
    let running = bridge(&b, "c", Direction::Both);
    let ctx = Context::connect(b.path()).unwrap();
    let (ztx, zrx) = mpsc::channel();
    let (btx, brx) = mpsc::channel();
    let _zs = ctx
        .create_subscription::<PointCloud, _>("c", move |h: &MessageHandle<PointCloud>| ztx.send(h.seq).unwrap())
        .unwrap();
    let _bs = ctx
        .create_baseline_subscription::<PointCloud, _>("c", move |_, m| btx.send(m.seq).unwrap())
        .unwrap();
    let p = ctx.create_publisher::<PointCloud>("c").unwrap();
    let mut loan = p.loan().unwrap();
    loan.seq = 1;
    p.publish(loan).unwrap();

    assert_eq!(zrx.recv_timeout(T), Ok(1));
    assert_eq!(brx.recv_timeout(T), Ok(1));
    assert!(zrx.recv_timeout(QUIET).is_err());
    assert!(brx.recv_timeout(QUIET).is_err());
    let stats = running.stop();
    assert_eq!((stats.zc_to_baseline, stats.baseline_to_zc), (1, 0));
    assert_eq!(stats.suppressed, 1);
}

#[test]
fn empty_message_crosses_both_ways() {
    let b = broker();
    let running = bridge(&b, "e", Direction::Both);
    let ctx = Context::connect(b.path()).unwrap();
    let (ztx, zrx) = mpsc::channel();
    let (btx, brx) = mpsc::channel();
    let _zs = ctx
        .create_subscription::<PointCloud, _>("e", move |h: &MessageHandle<PointCloud>| {
            ztx.send((h.seq, h.data.len(), h.data.data_address())).unwrap()
        })
        .unwrap();
    let _bs = ctx
        .create_baseline_subscription::<PointCloud, _>("e", move |_, m| btx.send((m.seq, m.data.len())).unwrap())
        .unwrap();
    let zp = ctx.create_publisher::<PointCloud>("e").unwrap();
    let bp = ctx.create_baseline_publisher::<PointCloud>("e").unwrap();
    let mut loan = zp.loan().unwrap();
    loan.seq = 1;
    zp.publish(loan).unwrap();
    let mut msg = Detached::<PointCloud>::new();
    msg.parts_mut().0.seq = 2;
    bp.publish(&msg).unwrap();

    let mut z: Vec<_> = (0..2).map(|_| zrx.recv_timeout(T).unwrap()).collect();
    let mut bl: Vec<_> = (0..2).map(|_| brx.recv_timeout(T).unwrap()).collect();
    z.sort();
    bl.sort();
    assert_eq!(z, [(1, 0, 0), (2, 0, 0)]);
    assert_eq!(bl, [(1, 0), (2, 0)]);
    running.stop();
}

#[test]
fn two_bridges_duplicate_but_suppress_only_themselves() {
    let b = broker();
    let first = bridge(&b, "d", Direction::ZcToBaseline);
    let second = bridge(&b, "d", Direction::ZcToBaseline);
    let ctx = Context::connect(b.path()).unwrap();
    let (tx, rx) = mpsc::channel();
    let _sub = ctx
        .create_baseline_subscription::<PointCloud, _>("d", move |origin, _| tx.send(origin).unwrap())
        .unwrap();
    let p = ctx.create_publisher::<PointCloud>("d").unwrap();
    p.publish(p.loan().unwrap()).unwrap();

    let mut origins = vec![rx.recv_timeout(T).unwrap(), rx.recv_timeout(T).unwrap()];
    origins.sort();
    let mut expected = vec![
        first.identities().baseline_publisher.unwrap(),
        second.identities().baseline_publisher.unwrap(),
    ];
    expected.sort();
    assert_eq!(origins, expected);
    assert!(rx.recv_timeout(QUIET).is_err());
    assert!(wait_until(T, || ctx.outstanding_entries() == 0));
    first.stop();
    second.stop();
}
