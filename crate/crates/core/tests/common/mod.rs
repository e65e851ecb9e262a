//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use zerocast::broker::{Broker, BrokerConfig, BrokerHandle};

pub mod alloc_oracle;
pub mod alloc_trace;
pub mod lifetime_model;

static NEXT: AtomicUsize = AtomicUsize::new(0);

const REGION_START: usize = 0x1000_0000_0000;
const REGION_SLOTS: usize = 6144;
const REGION_SLOT: usize = 16 << 30;

/// A broker with its own socket, shm prefix and arena pool, so tests in this
/// process and in concurrently running test binaries never collide.
pub struct TestBroker {
    pub handle: BrokerHandle,
    pub config: BrokerConfig,
    _dir: tempfile::TempDir,
}

impl TestBroker {
    pub fn path(&self) -> PathBuf {
        self.handle.path().to_path_buf()
    }
}

pub fn unique_config() -> BrokerConfig {
    let n = NEXT.fetch_add(1, Ordering::Relaxed);
    let pid = std::process::id() as usize;
    let slot = (pid * 64 + n) % REGION_SLOTS;
    BrokerConfig {
        pool_start: REGION_START + slot * REGION_SLOT,
        arena_capacity: 16 << 20,
        slot_stride: 32 << 20,
        max_slots: (REGION_SLOT / (32 << 20)),
        shm_prefix: format!("zc-test.{pid}.{n}"),
        ..BrokerConfig::default()
    }
}

pub fn broker() -> TestBroker {
    broker_with(|_| {})
}

pub fn broker_with(adjust: impl FnOnce(&mut BrokerConfig)) -> TestBroker {
    let mut config = unique_config();
    adjust(&mut config);
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("broker.sock");
    let handle = Broker::bind(config.clone(), &path).expect("bind broker").spawn();
    TestBroker {
        handle,
        config,
        _dir: dir,
    }
}

/// Polls `cond` until it holds or `timeout` passes.
pub fn wait_until(timeout: Duration, mut cond: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + timeout;
    loop {
        if cond() {
            return true;
        }
        if Instant::now() >= deadline {
            return false;
        }
        std::thread::sleep(Duration::from_millis(1));
    }
}

/// A private arena that unlinks itself when dropped.
pub fn scratch_arena(capacity: usize) -> zerocast::OwnedArena {
    let config = unique_config();
    let name = format!("{}.scratch", config.shm_prefix);
    let mut arena = zerocast::arena::create_arena(&name, config.pool_start, capacity).expect("create arena");
    arena.set_unlink_on_drop(true);
    arena
}
