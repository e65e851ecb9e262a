//! Broker metadata and its transition rules.
//!
//! `BrokerState` is a plain state machine: every method applies one request
//! to completion and queues the resulting effects (frames to send, sessions to
//! close, shared-memory names to unlink). The server drains the queue after
//! each request, so effects leave the broker in apply order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::arena::{ARENA_METADATA, DEFAULT_ARENA_CAPACITY};
use crate::clock::monotonic_ns;
use crate::ids::{EndpointId, EntryId, EntryRef, SessionId};
use crate::protocol::{encode_baseline_delivery, ArenaInfo, ErrorCode, Notice, Transport, DEFAULT_MAX_PAYLOAD};

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    /// Base of arena slot 0.
    pub pool_start: usize,
    /// Capacity of every arena.
    pub arena_capacity: usize,
    /// Distance between consecutive slot bases.
    pub slot_stride: usize,
    pub max_slots: usize,
    pub queue_capacity: usize,
    pub max_topics: usize,
    pub max_endpoints_per_topic: usize,
    /// Shared-memory names are `<shm_prefix>.<pid>`.
    pub shm_prefix: String,
    pub max_payload: usize,
    /// `SCHED_FIFO` priority for broker threads, when permitted.
    pub realtime_priority: Option<i32>,
}

pub const DEFAULT_POOL_START: usize = 0x2000_0000_0000;

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            pool_start: DEFAULT_POOL_START,
            arena_capacity: DEFAULT_ARENA_CAPACITY,
            slot_stride: 2 * DEFAULT_ARENA_CAPACITY,
            max_slots: 4096,
            queue_capacity: 16,
            max_topics: 4096,
            max_endpoints_per_topic: 1024,
            shm_prefix: "zerocast".into(),
            max_payload: DEFAULT_MAX_PAYLOAD,
            realtime_priority: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BrokerError {
    #[error("limit exceeded: {0}")]
    LimitExceeded(&'static str),
    #[error("session already registered as process {bound}, not {requested}")]
    ConflictingArena { bound: u32, requested: u32 },
    #[error("unknown publisher {0}")]
    UnknownPublisher(EndpointId),
    #[error("address {0:#x} is outside the publisher's arena")]
    AddressOutsideArena(u64),
    #[error("publisher queue is full")]
    QueueFull,
    #[error("protocol violation: {0}")]
    Violation(String),
    #[error("payload of {0} bytes exceeds the configured maximum")]
    PayloadTooLarge(usize),
    #[error("endpoint {0} uses the other transport")]
    WrongTransport(EndpointId),
}

impl BrokerError {
    pub fn code(&self) -> ErrorCode {
        match self {
            BrokerError::LimitExceeded(_) => ErrorCode::LimitExceeded,
            BrokerError::ConflictingArena { .. } => ErrorCode::ConflictingArena,
            BrokerError::UnknownPublisher(_) => ErrorCode::UnknownPublisher,
            BrokerError::AddressOutsideArena(_) => ErrorCode::AddressOutsideArena,
            BrokerError::QueueFull => ErrorCode::QueueFull,
            BrokerError::Violation(_) => ErrorCode::ProtocolViolation,
            BrokerError::PayloadTooLarge(_) => ErrorCode::PayloadTooLarge,
            BrokerError::WrongTransport(_) => ErrorCode::WrongTransport,
        }
    }

    /// Violations end the offending session; other errors are just replied.
    pub fn is_fatal(&self) -> bool {
        matches!(self, BrokerError::Violation(_) | BrokerError::PayloadTooLarge(_))
    }

    pub fn to_notice(&self) -> Notice {
        Notice::Error {
            code: self.code(),
            message: self.to_string(),
        }
    }
}

/// Side effects of applying a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    Send { session: SessionId, notice: Notice },
    /// Pre-encoded frame (baseline fan-out).
    SendFrame { session: SessionId, frame: Vec<u8> },
    Close(SessionId),
    Unlink(String),
}

#[derive(Debug, Clone, Default)]
struct SessionRecord {
    process_id: Option<u32>,
    publishers: BTreeSet<EndpointId>,
    subscribers: BTreeSet<EndpointId>,
}

#[derive(Debug, Clone, Default)]
struct TopicRecord {
    publishers: BTreeSet<EndpointId>,
    subscribers: BTreeSet<EndpointId>,
}

#[derive(Debug, Clone)]
struct PublisherRecord {
    topic: String,
    session: SessionId,
    process_id: u32,
    transport: Transport,
    queue: VecDeque<QueueEntry>,
    next_entry: u64,
    /// False once the owning session is gone; the record lingers while
    /// delivered entries are still held.
    alive: bool,
}

#[derive(Debug, Clone)]
struct SubscriberRecord {
    topic: String,
    session: SessionId,
    transport: Transport,
}

#[derive(Debug, Clone)]
struct ArenaRecord {
    name: String,
    base: usize,
    capacity: usize,
}

/// Per-message record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueEntry {
    pub entry_id: EntryId,
    pub message_address: u64,
    pub ref_count: u32,
    pub unreceived_count: u32,
    /// Subscribers snapshotted at publish time that have not been sent the
    /// entry yet, in send order.
    pub pending: VecDeque<EndpointId>,
    pub delivered_to: BTreeSet<EndpointId>,
    pub holder_refs: BTreeMap<EndpointId, u32>,
    pub published_at: u64,
}

impl QueueEntry {
    fn reclaimable(&self) -> bool {
        self.ref_count == 0 && self.unreceived_count == 0
    }
}

/// What a successful publisher registration hands back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublisherGrant {
    pub publisher_id: EndpointId,
    pub arena: Option<ArenaInfo>,
    pub subscriber_count: u32,
}

#[derive(Debug, Default)]
pub struct BrokerState {
    config: BrokerConfig,
    next_session: u64,
    next_endpoint: u64,
    next_slot: usize,
    sessions: BTreeMap<SessionId, SessionRecord>,
    topics: BTreeMap<String, TopicRecord>,
    publishers: BTreeMap<EndpointId, PublisherRecord>,
    subscribers: BTreeMap<EndpointId, SubscriberRecord>,
    arenas: BTreeMap<u32, ArenaRecord>,
    effects: Vec<Effect>,
}

impl BrokerState {
    pub fn new(config: BrokerConfig) -> Self {
        BrokerState {
            config,
            next_session: 1,
            next_endpoint: 1,
            ..Default::default()
        }
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.config
    }

    pub fn take_effects(&mut self) -> Vec<Effect> {
        std::mem::take(&mut self.effects)
    }

    fn send(&mut self, session: SessionId, notice: Notice) {
        self.effects.push(Effect::Send { session, notice });
    }

    /// Queues a reply frame for `session`.
    pub fn reply(&mut self, session: SessionId, notice: Notice) {
        self.send(session, notice);
    }

    /// Queues the end of `session` after the frames already queued for it.
    pub fn close(&mut self, session: SessionId) {
        self.effects.push(Effect::Close(session));
    }

    pub fn open_session(&mut self) -> SessionId {
        let id = SessionId(self.next_session);
        self.next_session += 1;
        self.sessions.insert(id, SessionRecord::default());
        id
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    pub fn has_session(&self, session: SessionId) -> bool {
        self.sessions.contains_key(&session)
    }

    /// A session speaks for one process; it may not switch identities.
    fn check_process(&self, session: SessionId, process_id: u32) -> Result<(), BrokerError> {
        let record = self
            .sessions
            .get(&session)
            .ok_or_else(|| BrokerError::Violation(format!("unknown session {session}")))?;
        match record.process_id {
            Some(bound) if bound != process_id => Err(BrokerError::ConflictingArena {
                bound,
                requested: process_id,
            }),
            _ => Ok(()),
        }
    }

    fn check_topic_room(&self, topic: &str) -> Result<(), BrokerError> {
        match self.topics.get(topic) {
            Some(t) if t.publishers.len() + t.subscribers.len() >= self.config.max_endpoints_per_topic => {
                Err(BrokerError::LimitExceeded("endpoints per topic"))
            }
            None if self.topics.len() >= self.config.max_topics => Err(BrokerError::LimitExceeded("topics")),
            _ => Ok(()),
        }
    }

    fn new_endpoint(&mut self) -> EndpointId {
        let id = EndpointId(self.next_endpoint);
        self.next_endpoint += 1;
        id
    }

    fn arena_info(&self, process_id: u32) -> Option<ArenaInfo> {
        self.arenas.get(&process_id).map(|a| ArenaInfo {
            name: a.name.clone(),
            base: a.base as u64,
            capacity: a.capacity as u64,
            owner_process: process_id,
        })
    }

    /// Arena placements of the live zero-copy publishers on `topic`, one per
    /// owning process.
    fn topic_arenas(&self, topic: &str) -> Vec<ArenaInfo> {
        let Some(t) = self.topics.get(topic) else {
            return Vec::new();
        };
        let pids: BTreeSet<u32> = t
            .publishers
            .iter()
            .filter_map(|id| self.publishers.get(id))
            .filter(|p| p.transport == Transport::ZeroCopy)
            .map(|p| p.process_id)
            .collect();
        pids.into_iter().filter_map(|pid| self.arena_info(pid)).collect()
    }

    fn subscribers_of(&self, topic: &str, transport: Transport) -> Vec<EndpointId> {
        self.topics
            .get(topic)
            .map(|t| {
                t.subscribers
                    .iter()
                    .copied()
                    .filter(|s| self.subscribers.get(s).map(|r| r.transport) == Some(transport))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn register_publisher(
        &mut self,
        session: SessionId,
        topic: &str,
        process_id: u32,
        transport: Transport,
    ) -> Result<PublisherGrant, BrokerError> {
        self.check_process(session, process_id)?;
        self.check_topic_room(topic)?;
        let new_arena = transport == Transport::ZeroCopy && !self.arenas.contains_key(&process_id);
        if new_arena && self.next_slot >= self.config.max_slots {
            return Err(BrokerError::LimitExceeded("arena slots"));
        }
        self.sessions.get_mut(&session).unwrap().process_id = Some(process_id);

        let already_on_topic = self.topic_arenas(topic).iter().any(|a| a.owner_process == process_id);
        if new_arena {
            let slot = self.next_slot;
            self.next_slot += 1;
            self.arenas.insert(
                process_id,
                ArenaRecord {
                    name: format!("{}.{}", self.config.shm_prefix, process_id),
                    base: self.config.pool_start + slot * self.config.slot_stride,
                    capacity: self.config.arena_capacity,
                },
            );
        }

        let id = self.new_endpoint();
        self.publishers.insert(
            id,
            PublisherRecord {
                topic: topic.to_owned(),
                session,
                process_id,
                transport,
                queue: VecDeque::new(),
                next_entry: 1,
                alive: true,
            },
        );
        self.topics.entry(topic.to_owned()).or_default().publishers.insert(id);
        self.sessions.get_mut(&session).unwrap().publishers.insert(id);

        let arena = match transport {
            Transport::ZeroCopy => self.arena_info(process_id),
            Transport::Baseline => None,
        };
        let subscribers = self.subscribers_of(topic, transport);
        if let (Some(info), false) = (&arena, already_on_topic) {
            for sub in &subscribers {
                let target = self.subscribers[sub].session;
                self.send(
                    target,
                    Notice::ArenaAnnounce {
                        subscriber_id: *sub,
                        arena: info.clone(),
                    },
                );
            }
        }
        log::debug!("registered publisher {id} on {topic:?} for pid {process_id} ({transport:?})");
        Ok(PublisherGrant {
            publisher_id: id,
            arena,
            subscriber_count: subscribers.len() as u32,
        })
    }

    pub fn register_subscriber(
        &mut self,
        session: SessionId,
        topic: &str,
        process_id: u32,
        transport: Transport,
    ) -> Result<(EndpointId, Vec<ArenaInfo>), BrokerError> {
        self.check_process(session, process_id)?;
        self.check_topic_room(topic)?;
        self.sessions.get_mut(&session).unwrap().process_id = Some(process_id);
        let id = self.new_endpoint();
        self.subscribers.insert(
            id,
            SubscriberRecord {
                topic: topic.to_owned(),
                session,
                transport,
            },
        );
        self.topics.entry(topic.to_owned()).or_default().subscribers.insert(id);
        self.sessions.get_mut(&session).unwrap().subscribers.insert(id);
        let arenas = match transport {
            Transport::ZeroCopy => self.topic_arenas(topic),
            Transport::Baseline => Vec::new(),
        };
        log::debug!("registered subscriber {id} on {topic:?} for pid {process_id} ({transport:?})");
        Ok((id, arenas))
    }

    fn owned_publisher(&self, session: SessionId, publisher_id: EndpointId) -> Result<&PublisherRecord, BrokerError> {
        match self.publishers.get(&publisher_id) {
            Some(p) if p.alive && p.session == session => Ok(p),
            _ => Err(BrokerError::UnknownPublisher(publisher_id)),
        }
    }

    /// Records a new entry with every current zero-copy subscriber of the
    /// topic pending. Deliveries are made by [`deliver_pending`].
    ///
    /// [`deliver_pending`]: BrokerState::deliver_pending
    pub fn publish_entry(
        &mut self,
        session: SessionId,
        publisher_id: EndpointId,
        address: u64,
    ) -> Result<EntryRef, BrokerError> {
        let publisher = self.owned_publisher(session, publisher_id)?;
        if publisher.transport != Transport::ZeroCopy {
            return Err(BrokerError::WrongTransport(publisher_id));
        }
        let arena = &self.arenas[&publisher.process_id];
        let heap_start = (arena.base + ARENA_METADATA) as u64;
        let end = (arena.base + arena.capacity) as u64;
        if address < heap_start || address >= end {
            return Err(BrokerError::AddressOutsideArena(address));
        }
        if publisher.queue.len() >= self.config.queue_capacity {
            return Err(BrokerError::QueueFull);
        }
        let pending: VecDeque<EndpointId> = self.subscribers_of(&publisher.topic.clone(), Transport::ZeroCopy).into();
        let publisher = self.publishers.get_mut(&publisher_id).unwrap();
        let entry_id = EntryId(publisher.next_entry);
        publisher.next_entry += 1;
        publisher.queue.push_back(QueueEntry {
            entry_id,
            message_address: address,
            ref_count: 0,
            unreceived_count: pending.len() as u32,
            pending,
            delivered_to: BTreeSet::new(),
            holder_refs: BTreeMap::new(),
            published_at: monotonic_ns(),
        });
        Ok(EntryRef {
            publisher: publisher_id,
            entry: entry_id,
        })
    }

    fn entry_mut(&mut self, entry: EntryRef) -> Option<&mut QueueEntry> {
        self.publishers
            .get_mut(&entry.publisher)?
            .queue
            .iter_mut()
            .find(|e| e.entry_id == entry.entry)
    }

    pub fn entry(&self, entry: EntryRef) -> Option<&QueueEntry> {
        self.publishers
            .get(&entry.publisher)?
            .queue
            .iter()
            .find(|e| e.entry_id == entry.entry)
    }

    /// Sends the entry to its next pending subscriber, crediting that
    /// subscriber one reference. Returns false when nothing was pending.
    pub fn deliver_one(&mut self, entry: EntryRef) -> bool {
        let Some(owner) = self.publishers.get(&entry.publisher).map(|p| p.process_id) else {
            return false;
        };
        let arena_name = self.arenas.get(&owner).map(|a| a.name.clone()).unwrap_or_default();
        let Some(e) = self.entry_mut(entry) else {
            return false;
        };
        let Some(sub) = e.pending.pop_front() else {
            return false;
        };
        e.unreceived_count -= 1;
        e.delivered_to.insert(sub);
        e.ref_count += 1;
        *e.holder_refs.entry(sub).or_insert(0) += 1;
        let address = e.message_address;
        let session = self.subscribers[&sub].session;
        self.send(
            session,
            Notice::Delivery {
                subscriber_id: sub,
                entry,
                arena: arena_name,
                address,
            },
        );
        true
    }

    /// Delivers the entry to all pending subscribers, then reclaims it if no
    /// subscriber was registered.
    pub fn deliver_pending(&mut self, entry: EntryRef) {
        while self.deliver_one(entry) {}
        self.try_reclaim(entry);
    }

    fn holder_check(&self, session: SessionId, subscriber_id: EndpointId, entry: EntryRef) -> Result<(), BrokerError> {
        match self.subscribers.get(&subscriber_id) {
            Some(s) if s.session == session => {}
            _ => {
                return Err(BrokerError::Violation(format!(
                    "subscriber {subscriber_id} does not belong to this session"
                )))
            }
        }
        let held = self
            .entry(entry)
            .ok_or_else(|| BrokerError::Violation(format!("unknown entry {entry}")))?
            .holder_refs
            .get(&subscriber_id)
            .copied()
            .unwrap_or(0);
        if held == 0 {
            return Err(BrokerError::Violation(format!("{subscriber_id} holds no reference to {entry}")));
        }
        Ok(())
    }

    pub fn incr_ref(&mut self, session: SessionId, subscriber_id: EndpointId, entry: EntryRef) -> Result<(), BrokerError> {
        self.holder_check(session, subscriber_id, entry)?;
        let e = self.entry_mut(entry).unwrap();
        e.ref_count += 1;
        *e.holder_refs.get_mut(&subscriber_id).unwrap() += 1;
        Ok(())
    }

    pub fn decr_ref(&mut self, session: SessionId, subscriber_id: EndpointId, entry: EntryRef) -> Result<(), BrokerError> {
        self.holder_check(session, subscriber_id, entry)?;
        let e = self.entry_mut(entry).unwrap();
        e.ref_count -= 1;
        let held = e.holder_refs.get_mut(&subscriber_id).unwrap();
        *held -= 1;
        if *held == 0 {
            e.holder_refs.remove(&subscriber_id);
        }
        self.try_reclaim(entry);
        Ok(())
    }

    /// Removes the entry once both counters are zero. A live publisher gets a
    /// reclaim notice; a dead publisher's record is discarded.
    fn try_reclaim(&mut self, entry: EntryRef) {
        let Some(publisher) = self.publishers.get_mut(&entry.publisher) else {
            return;
        };
        let Some(pos) = publisher.queue.iter().position(|e| e.entry_id == entry.entry) else {
            return;
        };
        if !publisher.queue[pos].reclaimable() {
            return;
        }
        publisher.queue.remove(pos);
        if publisher.alive {
            let session = publisher.session;
            log::debug!("reclaim {entry}");
            self.send(session, Notice::Reclaim { entry });
        } else {
            log::debug!("discarded {entry} of exited publisher");
            if publisher.queue.is_empty() {
                let pid = publisher.process_id;
                self.publishers.remove(&entry.publisher);
                self.maybe_unlink(pid);
            }
        }
    }

    pub fn baseline_publish(&mut self, session: SessionId, origin_id: EndpointId, payload: &[u8]) -> Result<usize, BrokerError> {
        if payload.len() > self.config.max_payload {
            return Err(BrokerError::PayloadTooLarge(payload.len()));
        }
        let publisher = self.owned_publisher(session, origin_id)?;
        if publisher.transport != Transport::Baseline {
            return Err(BrokerError::WrongTransport(origin_id));
        }
        let targets = self.subscribers_of(&publisher.topic.clone(), Transport::Baseline);
        for sub in &targets {
            let session = self.subscribers[sub].session;
            let frame = encode_baseline_delivery(*sub, origin_id, payload);
            self.effects.push(Effect::SendFrame { session, frame });
        }
        Ok(targets.len())
    }

    /// Applies the effects of a session ending, as if its process had dropped
    /// every handle and deregistered every endpoint. Idempotent.
    pub fn process_exit(&mut self, session: SessionId) {
        let Some(record) = self.sessions.remove(&session) else {
            return;
        };
        let dead_subs = &record.subscribers;

        let mut touched = Vec::new();
        for (pub_id, publisher) in self.publishers.iter_mut() {
            for e in publisher.queue.iter_mut() {
                for sub in dead_subs {
                    if let Some(n) = e.holder_refs.remove(sub) {
                        e.ref_count -= n;
                    }
                }
                let before = e.pending.len();
                e.pending.retain(|s| !dead_subs.contains(s));
                e.unreceived_count -= (before - e.pending.len()) as u32;
                if record.publishers.contains(pub_id) {
                    // No further deliveries from an exited publisher.
                    e.unreceived_count -= e.pending.len() as u32;
                    e.pending.clear();
                }
                touched.push(EntryRef {
                    publisher: *pub_id,
                    entry: e.entry_id,
                });
            }
        }

        for sub in dead_subs {
            if let Some(s) = self.subscribers.remove(sub) {
                if let Some(t) = self.topics.get_mut(&s.topic) {
                    t.subscribers.remove(sub);
                }
            }
        }
        let mut emptied_pids = BTreeSet::new();
        for pub_id in &record.publishers {
            let Some(p) = self.publishers.get_mut(pub_id) else {
                continue;
            };
            p.alive = false;
            let topic = p.topic.clone();
            emptied_pids.insert(p.process_id);
            if p.queue.is_empty() {
                self.publishers.remove(pub_id);
            }
            if let Some(t) = self.topics.get_mut(&topic) {
                t.publishers.remove(pub_id);
            }
        }
        self.topics.retain(|_, t| !t.publishers.is_empty() || !t.subscribers.is_empty());

        for entry in touched {
            self.try_reclaim(entry);
        }
        if let Some(pid) = record.process_id {
            emptied_pids.insert(pid);
        }
        for pid in emptied_pids {
            self.maybe_unlink(pid);
        }
        log::debug!("session {session} exited");
    }

    /// Drops a process's arena once no session of that process remains and no
    /// entry in the arena is still held.
    fn maybe_unlink(&mut self, pid: u32) {
        if !self.arenas.contains_key(&pid) {
            return;
        }
        let process_alive = self.sessions.values().any(|s| s.process_id == Some(pid));
        let referenced = self
            .publishers
            .values()
            .any(|p| p.process_id == pid && p.transport == Transport::ZeroCopy && (p.alive || !p.queue.is_empty()));
        if !process_alive && !referenced {
            let arena = self.arenas.remove(&pid).unwrap();
            self.effects.push(Effect::Unlink(arena.name));
        }
    }

    /// Forgets every arena and emits an unlink for each, for broker
    /// shutdown. Processes keep their existing mappings.
    pub fn unlink_all_arenas(&mut self) {
        for (_, arena) in std::mem::take(&mut self.arenas) {
            self.effects.push(Effect::Unlink(arena.name));
        }
    }

    /// Every queued entry, in publisher then entry order.
    pub fn entries(&self) -> Vec<(EntryRef, &QueueEntry)> {
        self.publishers
            .iter()
            .flat_map(|(id, p)| {
                p.queue.iter().map(move |e| {
                    (
                        EntryRef {
                            publisher: *id,
                            entry: e.entry_id,
                        },
                        e,
                    )
                })
            })
            .collect()
    }

    pub fn publisher_alive(&self, id: EndpointId) -> bool {
        self.publishers.get(&id).is_some_and(|p| p.alive)
    }

    pub fn arena_assignment(&self, process_id: u32) -> Option<ArenaInfo> {
        self.arena_info(process_id)
    }

    /// Canonical serialization of the pub/sub metadata (topics, endpoints,
    /// entries, arenas, id counters). Connection bookkeeping is left out, so
    /// a session that connects and leaves without effect does not change it.
    pub fn dump(&self) -> Vec<u8> {
        let mut out = String::new();
        let _ = writeln!(out, "next_endpoint={} next_slot={}", self.next_endpoint, self.next_slot);
        for (name, t) in &self.topics {
            let _ = writeln!(out, "topic {name:?} pubs={:?} subs={:?}", t.publishers, t.subscribers);
        }
        for (pid, a) in &self.arenas {
            let _ = writeln!(out, "arena pid={pid} {} {:#x}+{:#x}", a.name, a.base, a.capacity);
        }
        for (id, s) in &self.subscribers {
            let _ = writeln!(out, "sub {id} topic={:?} session={} {:?}", s.topic, s.session, s.transport);
        }
        for (id, p) in &self.publishers {
            let _ = writeln!(
                out,
                "pub {id} topic={:?} session={} pid={} {:?} next={} alive={}",
                p.topic, p.session, p.process_id, p.transport, p.next_entry, p.alive
            );
            for e in &p.queue {
                let _ = writeln!(
                    out,
                    "  entry {} addr={:#x} ref={} unrecv={} pending={:?} delivered={:?} holders={:?} at={}",
                    e.entry_id.0, e.message_address, e.ref_count, e.unreceived_count, e.pending, e.delivered_to, e.holder_refs, e.published_at
                );
            }
        }
        out.into_bytes()
    }
}
