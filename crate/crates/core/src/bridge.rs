//! Relay between the zero-copy and copy-based domains of one topic.
//!
//! The bridge is an ordinary client holding up to two publishers and two
//! subscriptions. Deliveries from both sides feed one queue drained by a
//! single relay loop. A delivery whose origin is one of the bridge's own
//! publishers is never relayed, which is what keeps two active directions
//! from echoing each other.

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::baseline::BaselinePublisher;
use crate::client::{ClientError, Context, MessageHandle, Publisher, Subscription};
use crate::ids::EndpointId;
use crate::message::Message;
use crate::protocol::ErrorCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Both,
    ZcToBaseline,
    BaselineToZc,
}

impl Direction {
    fn zc_to_baseline(self) -> bool {
        matches!(self, Direction::Both | Direction::ZcToBaseline)
    }

    fn baseline_to_zc(self) -> bool {
        matches!(self, Direction::Both | Direction::BaselineToZc)
    }
}

impl FromStr for Direction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "both" => Ok(Direction::Both),
            "zc-to-baseline" => Ok(Direction::ZcToBaseline),
            "baseline-to-zc" => Ok(Direction::BaselineToZc),
            other => Err(format!("unknown direction {other:?} (both|zc-to-baseline|baseline-to-zc)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BridgeConfig {
    pub topic: String,
    pub direction: Direction,
    pub broker: PathBuf,
}

/// The bridge's own endpoints; anything they produced is not relayed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BridgeIdentities {
    pub zc_publisher: Option<EndpointId>,
    pub baseline_publisher: Option<EndpointId>,
}

pub fn should_relay(origin: EndpointId, own: &BridgeIdentities) -> bool {
    own.zc_publisher != Some(origin) && own.baseline_publisher != Some(origin)
}

#[derive(Debug, Default)]
pub struct BridgeCounters {
    pub zc_to_baseline: AtomicU64,
    pub baseline_to_zc: AtomicU64,
    pub suppressed: AtomicU64,
    /// Messages lost to arena exhaustion or a persistently full queue.
    pub dropped: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BridgeStats {
    pub zc_to_baseline: u64,
    pub baseline_to_zc: u64,
    pub suppressed: u64,
    pub dropped: u64,
}

impl BridgeCounters {
    pub fn snapshot(&self) -> BridgeStats {
        BridgeStats {
            zc_to_baseline: self.zc_to_baseline.load(Ordering::Relaxed),
            baseline_to_zc: self.baseline_to_zc.load(Ordering::Relaxed),
            suppressed: self.suppressed.load(Ordering::Relaxed),
            dropped: self.dropped.load(Ordering::Relaxed),
        }
    }
}

enum Item<M: Message> {
    ZeroCopy(MessageHandle<M>),
    Baseline(EndpointId, Vec<u8>),
}

/// How long a relay into a full zero-copy queue is retried before the message
/// is dropped.
const QUEUE_FULL_PATIENCE: Duration = Duration::from_secs(1);

/// A bridge connected and registered, relaying on its own thread.
pub struct RunningBridge {
    identities: BridgeIdentities,
    counters: Arc<BridgeCounters>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<Result<(), ClientError>>>,
}

impl RunningBridge {
    pub fn identities(&self) -> BridgeIdentities {
        self.identities
    }

    pub fn stats(&self) -> BridgeStats {
        self.counters.snapshot()
    }

    /// Blocks until the relay loop ends. It ends on `stop` or when the broker
    /// connection is lost, which is reported as an error.
    pub fn wait(mut self) -> Result<(), ClientError> {
        self.thread.take().unwrap().join().unwrap_or(Err(ClientError::SessionLost))
    }

    pub fn stop(mut self) -> BridgeStats {
        self.stop.store(true, Ordering::Release);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        self.counters.snapshot()
    }
}

impl Drop for RunningBridge {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Connects, registers the bridge's endpoints, and starts relaying.
/// Publishers are registered before subscriptions so the suppression set is
/// complete before the first delivery.
pub fn start_bridge<M: Message>(config: &BridgeConfig) -> Result<RunningBridge, ClientError> {
    let ctx = Context::connect(&config.broker)?;
    let topic = config.topic.as_str();
    let zc_pub: Option<Publisher<M>> = config.direction.baseline_to_zc().then(|| ctx.create_publisher(topic)).transpose()?;
    let bl_pub: Option<BaselinePublisher<M>> = config
        .direction
        .zc_to_baseline()
        .then(|| ctx.create_baseline_publisher(topic))
        .transpose()?;
    let identities = BridgeIdentities {
        zc_publisher: zc_pub.as_ref().map(|p| p.id()),
        baseline_publisher: bl_pub.as_ref().map(|p| p.id()),
    };
    let counters = Arc::new(BridgeCounters::default());

    let (tx, rx) = mpsc::channel::<Item<M>>();
    let mut subs: Vec<Subscription> = Vec::new();
    if config.direction.zc_to_baseline() {
        let tx = tx.clone();
        let c = counters.clone();
        subs.push(ctx.create_subscription::<M, _>(topic, move |h: &MessageHandle<M>| {
            if should_relay(h.entry().publisher, &identities) {
                let _ = tx.send(Item::ZeroCopy(h.clone()));
            } else {
                c.suppressed.fetch_add(1, Ordering::Relaxed);
            }
        })?);
    }
    if config.direction.baseline_to_zc() {
        let tx = tx.clone();
        let c = counters.clone();
        subs.push(ctx.create_baseline_subscription_raw(topic, move |d| {
            if should_relay(d.origin, &identities) {
                let _ = tx.send(Item::Baseline(d.origin, d.payload));
            } else {
                c.suppressed.fetch_add(1, Ordering::Relaxed);
            }
        })?);
    }
    drop(tx);
    log::info!(
        "pid={} topic={topic:?} bridge up ({:?}), own ids {:?}",
        ctx.process_id(),
        config.direction,
        identities
    );

    let stop = Arc::new(AtomicBool::new(false));
    let thread = {
        let stop = stop.clone();
        let counters = counters.clone();
        let topic = topic.to_owned();
        std::thread::Builder::new()
            .name("zerocast-bridge".into())
            .spawn(move || {
                let relay = Relay {
                    ctx: &ctx,
                    topic: &topic,
                    zc_pub: zc_pub.as_ref(),
                    bl_pub: bl_pub.as_ref(),
                    counters: &counters,
                };
                let result = relay.run(&rx, &stop);
                drop(subs);
                result
            })
            .expect("spawn bridge thread")
    };
    Ok(RunningBridge {
        identities,
        counters,
        stop,
        thread: Some(thread),
    })
}

/// Runs a bridge until the broker goes away.
pub fn run_bridge<M: Message>(config: &BridgeConfig) -> Result<(), ClientError> {
    start_bridge::<M>(config)?.wait()
}

struct Relay<'a, M: Message> {
    ctx: &'a Context,
    topic: &'a str,
    zc_pub: Option<&'a Publisher<M>>,
    bl_pub: Option<&'a BaselinePublisher<M>>,
    counters: &'a BridgeCounters,
}

impl<M: Message> Relay<'_, M> {
    fn run(&self, rx: &mpsc::Receiver<Item<M>>, stop: &AtomicBool) -> Result<(), ClientError> {
        while !stop.load(Ordering::Acquire) {
            match rx.recv_timeout(Duration::from_millis(50)) {
                Ok(Item::ZeroCopy(h)) => self.to_baseline(&h)?,
                Ok(Item::Baseline(origin, bytes)) => self.to_zero_copy(origin, &bytes)?,
                Err(RecvTimeoutError::Timeout) => {
                    if !self.ctx.is_connected() {
                        return Err(ClientError::SessionLost);
                    }
                }
                Err(RecvTimeoutError::Disconnected) => return Err(ClientError::SessionLost),
            }
        }
        Ok(())
    }

    fn to_baseline(&self, h: &MessageHandle<M>) -> Result<(), ClientError> {
        let Some(publisher) = self.bl_pub else { return Ok(()) };
        match publisher.publish(h) {
            Ok(()) => {
                self.counters.zc_to_baseline.fetch_add(1, Ordering::Relaxed);
                Ok(())
            }
            Err(ClientError::PayloadTooLarge { len, max }) => {
                log::warn!("topic={:?} entry={} dropped: {len} bytes > {max}", self.topic, h.entry());
                self.counters.dropped.fetch_add(1, Ordering::Relaxed);
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    /// Deserializes straight into a fresh arena message: the one copy this
    /// direction costs.
    fn to_zero_copy(&self, origin: EndpointId, bytes: &[u8]) -> Result<(), ClientError> {
        let Some(publisher) = self.zc_pub else { return Ok(()) };
        let loan = publisher.loan().and_then(|mut loan| {
            let (m, store) = loan.parts_mut();
            m.decode_from(bytes, store)?;
            Ok(loan)
        });
        let mut loan = match loan {
            Ok(l) => l,
            Err(e @ (ClientError::Alloc(_) | ClientError::Codec(_) | ClientError::Message(_))) => {
                log::warn!("topic={:?} origin={origin} dropped: {e}", self.topic);
                self.counters.dropped.fetch_add(1, Ordering::Relaxed);
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let deadline = Instant::now() + QUEUE_FULL_PATIENCE;
        loop {
            match publisher.publish(loan) {
                Ok(_) => {
                    self.counters.baseline_to_zc.fetch_add(1, Ordering::Relaxed);
                    return Ok(());
                }
                Err(e) if e.error.code() == Some(ErrorCode::QueueFull) && Instant::now() < deadline => {
                    loan = e.loan;
                    std::thread::sleep(Duration::from_millis(1));
                }
                Err(e) if e.error.code() == Some(ErrorCode::QueueFull) => {
                    log::warn!("topic={:?} origin={origin} dropped: queue full", self.topic);
                    self.counters.dropped.fetch_add(1, Ordering::Relaxed);
                    return Ok(());
                }
                Err(e) => return Err(e.error),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_own_identities_are_suppressed() {
        let own = BridgeIdentities {
            zc_publisher: Some(EndpointId(4)),
            baseline_publisher: Some(EndpointId(5)),
        };
        assert!(!should_relay(EndpointId(4), &own));
        assert!(!should_relay(EndpointId(5), &own));
        assert!(should_relay(EndpointId(6), &own));
        // A second bridge only knows its own ids, so it relays the first one's output.
        let other = BridgeIdentities {
            zc_publisher: Some(EndpointId(7)),
            baseline_publisher: None,
        };
        assert!(should_relay(EndpointId(4), &other));
    }

    #[test]
    fn direction_parses_cli_spelling() {
        assert_eq!("both".parse::<Direction>(), Ok(Direction::Both));
        assert_eq!("zc-to-baseline".parse::<Direction>(), Ok(Direction::ZcToBaseline));
        assert_eq!("baseline-to-zc".parse::<Direction>(), Ok(Direction::BaselineToZc));
        assert!("sideways".parse::<Direction>().is_err());
    }
}
