mod common;

use std::io::{Read, Write};
use std::os::unix::net::{UnixListener, UnixStream};
use std::sync::mpsc;
use std::time::Duration;

use common::{broker, unique_config, wait_until};
use zerocast::broker::{Broker, ServeError};
use zerocast::protocol::{Request, Transport};
use zerocast::{Context, Fixed128, MessageHandle};

const T: Duration = Duration::from_secs(5);

fn assert_hung_up(mut s: UnixStream) {
    s.set_read_timeout(Some(T)).unwrap();
    let mut sink = Vec::new();
    match s.read_to_end(&mut sink) {
        Ok(_) => {}
        Err(e) => assert_eq!(e.kind(), std::io::ErrorKind::ConnectionReset, "{e}"),
    }
}

#[test]
fn unknown_opcode_closes_only_that_session() {
    let b = broker();
    let ctx = Context::connect(b.path()).unwrap();
    let (tx, rx) = mpsc::channel();
    let _sub = ctx
        .create_subscription::<Fixed128, _>("ok", move |m: &MessageHandle<Fixed128>| tx.send(m.seq).unwrap())
        .unwrap();
    let publisher = ctx.create_publisher::<Fixed128>("ok").unwrap();
    let healthy = b.handle.session_count();

    let mut rogue = UnixStream::connect(b.path()).unwrap();
    rogue.write_all(&[1, 0, 0, 0, 0x42]).unwrap();
    assert_hung_up(rogue);
    assert!(wait_until(T, || b.handle.session_count() == healthy));

    let mut loan = publisher.loan().unwrap();
    loan.seq = 9;
    publisher.publish(loan).unwrap();
    assert_eq!(rx.recv_timeout(T), Ok(9));
}

#[test]
fn frame_cut_by_disconnect_is_not_applied() {
    let b = broker();
    let before = b.handle.dump();
    let frame = Request::RegisterPublisher {
        topic: "never".into(),
        process_id: std::process::id(),
        transport: Transport::ZeroCopy,
    }
    .encode();
    let mut s = UnixStream::connect(b.path()).unwrap();
    s.write_all(&frame[..frame.len() - 1]).unwrap();
    assert!(wait_until(T, || b.handle.session_count() == 1));
    drop(s);
    assert!(wait_until(T, || b.handle.session_count() == 0));
    assert_eq!(b.handle.dump(), before);

    // The same frame, complete, does change state.
    let mut s = UnixStream::connect(b.path()).unwrap();
    s.write_all(&frame).unwrap();
    assert!(wait_until(T, || b.handle.dump() != before));
}

#[test]
fn stale_socket_is_replaced() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broker.sock");
    // A bound-then-abandoned socket file nobody listens on.
    drop(UnixListener::bind(&path).unwrap());
    assert!(path.exists());
    let handle = Broker::bind(unique_config(), &path).unwrap().spawn();
    let ctx = Context::connect(&path).unwrap();
    assert!(ctx.is_connected());
    drop(ctx);
    handle.shutdown();
    assert!(!path.exists());
}

#[test]
fn live_broker_is_not_displaced() {
    let b = broker();
    match Broker::bind(unique_config(), b.path()) {
        Err(ServeError::AlreadyRunning(p)) => assert_eq!(p, b.path()),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("second broker bound a live socket"),
    }
    assert!(Context::connect(b.path()).is_ok());
}

#[test]
fn concurrent_publishers_serialize() {
    let b = broker();
    let sub_ctx = Context::connect(b.path()).unwrap();
    let (tx, rx) = mpsc::channel();
    let _sub = sub_ctx
        .create_subscription::<Fixed128, _>("race", move |m: &MessageHandle<Fixed128>| {
            tx.send((m.entry().publisher, m.entry().entry, m.seq)).unwrap()
        })
        .unwrap();
    const N: u64 = 200;
    let path = b.path();
    let workers: Vec<_> = (0..2)
        .map(|_| {
            let path = path.clone();
            std::thread::spawn(move || {
                let ctx = Context::connect(&path).unwrap();
                let p = ctx.create_publisher::<Fixed128>("race").unwrap();
                for i in 0..N {
                    let mut loan = p.loan().unwrap();
                    loan.seq = i;
                    let mut pending = Some(loan);
                    assert!(wait_until(T, || match p.publish(pending.take().unwrap()) {
                        Ok(_) => true,
                        Err(e) => {
                            pending = Some(e.loan);
                            false
                        }
                    }));
                }
                assert!(wait_until(T, || ctx.outstanding_entries() == 0));
            })
        })
        .collect();
    let mut per_publisher = std::collections::BTreeMap::<_, Vec<_>>::new();
    for _ in 0..2 * N {
        let (publisher, entry, seq) = rx.recv_timeout(T).unwrap();
        per_publisher.entry(publisher).or_default().push((entry, seq));
    }
    for w in workers {
        w.join().unwrap();
    }
    assert_eq!(per_publisher.len(), 2);
    for seen in per_publisher.values() {
        assert!(seen.windows(2).all(|w| w[0].0 < w[1].0), "entry ids out of order");
        assert_eq!(seen.iter().map(|s| s.1).collect::<Vec<_>>(), (0..N).collect::<Vec<_>>());
    }
    assert!(wait_until(T, || b.handle.with_state(|s| s.entries().is_empty())));
}
