//! Brute-force reference for message lifetimes: every handle is an explicit
//! element of a multiset, every undelivered subscriber an explicit list item.
//! Traces are replayed against `BrokerState` and both are compared after every
//! step.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use zerocast::broker::{BrokerConfig, BrokerState, Effect};
use zerocast::arena::ARENA_METADATA;
use zerocast::ids::{EndpointId, EntryRef, SessionId};
use zerocast::protocol::{Notice, Transport};

pub const MAX_PROCS: usize = 4;
pub const MAX_ENTRIES: usize = 3;

#[derive(Debug, Clone, Copy)]
pub enum Step {
    Publish(usize),
    Deliver(usize),
    Clone(usize),
    Drop(usize),
    Kill(usize),
}

#[derive(Debug, Clone)]
struct Proc {
    session: SessionId,
    publisher: Option<EndpointId>,
    subscriber: Option<EndpointId>,
    alive: bool,
}

#[derive(Debug, Clone)]
struct Entry {
    entry: EntryRef,
    owner: usize,
    pending: Vec<EndpointId>,
    handles: Vec<EndpointId>,
}

pub struct Model {
    pub broker: BrokerState,
    procs: Vec<Proc>,
    entries: Vec<Entry>,
    sub_owner: BTreeMap<EndpointId, usize>,
    pub premature_reclaims: usize,
    pub steps: usize,
}

impl Model {
    /// `roles[i]` = (has publisher, has subscriber) for process i.
    pub fn new(roles: &[(bool, bool)]) -> Model {
        let mut broker = BrokerState::new(BrokerConfig {
            queue_capacity: MAX_ENTRIES,
            ..BrokerConfig::default()
        });
        let mut procs = Vec::new();
        let mut sub_owner = BTreeMap::new();
        for (i, &(p, s)) in roles.iter().enumerate() {
            let session = broker.open_session();
            let pid = 1000 + i as u32;
            let publisher = p.then(|| {
                broker
                    .register_publisher(session, "t", pid, Transport::ZeroCopy)
                    .unwrap()
                    .publisher_id
            });
            let subscriber = s.then(|| broker.register_subscriber(session, "t", pid, Transport::ZeroCopy).unwrap().0);
            if let Some(sub) = subscriber {
                sub_owner.insert(sub, i);
            }
            procs.push(Proc {
                session,
                publisher,
                subscriber,
                alive: true,
            });
        }
        broker.take_effects();
        Model {
            broker,
            procs,
            entries: Vec::new(),
            sub_owner,
            premature_reclaims: 0,
            steps: 0,
        }
    }

    pub fn random(rng: &mut impl Rng) -> Model {
        let n = rng.gen_range(1..=MAX_PROCS);
        let roles: Vec<(bool, bool)> = (0..n).map(|_| (rng.gen_bool(0.6), rng.gen_bool(0.7))).collect();
        Model::new(&roles)
    }

    pub fn random_step(&self, rng: &mut impl Rng) -> Step {
        let k = rng.gen_range(0..100);
        let x = rng.gen_range(0..64);
        match k {
            0..=24 => Step::Publish(x),
            25..=49 => Step::Deliver(x),
            50..=64 => Step::Clone(x),
            65..=92 => Step::Drop(x),
            _ => Step::Kill(x),
        }
    }

    fn all_handles(&self) -> Vec<(usize, usize)> {
        self.entries
            .iter()
            .enumerate()
            .flat_map(|(e, en)| (0..en.handles.len()).map(move |h| (e, h)))
            .collect()
    }

    /// Applies one step to both sides and checks them against each other.
    pub fn apply(&mut self, step: Step) {
        self.steps += 1;
        let mut expected_reclaims: BTreeSet<EntryRef> = BTreeSet::new();
        match step {
            Step::Publish(x) => {
                let publishers: Vec<usize> = (0..self.procs.len())
                    .filter(|&i| self.procs[i].alive && self.procs[i].publisher.is_some())
                    .collect();
                if publishers.is_empty() || self.entries.len() >= MAX_ENTRIES {
                    return self.check(&expected_reclaims);
                }
                let i = publishers[x % publishers.len()];
                let p = &self.procs[i];
                let pid = 1000 + i as u32;
                let base = self.broker.arena_assignment(pid).unwrap().base;
                let entry = self
                    .broker
                    .publish_entry(p.session, p.publisher.unwrap(), base + ARENA_METADATA as u64 + 16)
                    .unwrap();
                let pending: Vec<EndpointId> = self
                    .procs
                    .iter()
                    .filter(|q| q.alive)
                    .filter_map(|q| q.subscriber)
                    .collect();
                if pending.is_empty() {
                    self.broker.deliver_pending(entry);
                    expected_reclaims.insert(entry);
                } else {
                    self.entries.push(Entry {
                        entry,
                        owner: i,
                        pending,
                        handles: Vec::new(),
                    });
                }
            }
            Step::Deliver(x) => {
                let ready: Vec<usize> = (0..self.entries.len()).filter(|&e| !self.entries[e].pending.is_empty()).collect();
                if !ready.is_empty() {
                    let e = &mut self.entries[ready[x % ready.len()]];
                    assert!(self.broker.deliver_one(e.entry));
                    let sub = e.pending.remove(0);
                    e.handles.push(sub);
                }
            }
            Step::Clone(x) => {
                let hs = self.all_handles();
                if !hs.is_empty() {
                    let (e, h) = hs[x % hs.len()];
                    let en = &mut self.entries[e];
                    let sub = en.handles[h];
                    let session = self.procs[self.sub_owner[&sub]].session;
                    self.broker.incr_ref(session, sub, en.entry).unwrap();
                    en.handles.push(sub);
                }
            }
            Step::Drop(x) => {
                let hs = self.all_handles();
                if !hs.is_empty() {
                    let (e, h) = hs[x % hs.len()];
                    let en = &mut self.entries[e];
                    let sub = en.handles.swap_remove(h);
                    let session = self.procs[self.sub_owner[&sub]].session;
                    self.broker.decr_ref(session, sub, en.entry).unwrap();
                }
            }
            Step::Kill(x) => {
                let alive: Vec<usize> = (0..self.procs.len()).filter(|&i| self.procs[i].alive).collect();
                if !alive.is_empty() {
                    let i = alive[x % alive.len()];
                    self.procs[i].alive = false;
                    self.broker.process_exit(self.procs[i].session);
                    let dead_sub = self.procs[i].subscriber;
                    for en in &mut self.entries {
                        en.handles.retain(|s| Some(*s) != dead_sub);
                        en.pending.retain(|s| Some(*s) != dead_sub);
                        if en.owner == i {
                            en.pending.clear();
                        }
                    }
                }
            }
        }
        let procs = &self.procs;
        self.entries.retain(|en| {
            let done = en.handles.is_empty() && en.pending.is_empty();
            if done && procs[en.owner].alive {
                expected_reclaims.insert(en.entry);
            }
            !done
        });
        self.check(&expected_reclaims);
    }

    fn check(&mut self, expected_reclaims: &BTreeSet<EntryRef>) {
        let mut reclaims = BTreeSet::new();
        for effect in self.broker.take_effects() {
            if let Effect::Send {
                notice: Notice::Reclaim { entry },
                ..
            } = effect
            {
                reclaims.insert(entry);
                if self.entries.iter().any(|e| e.entry == entry) {
                    self.premature_reclaims += 1;
                }
            }
        }
        assert_eq!(&reclaims, expected_reclaims, "reclaim notices at step {}", self.steps);

        let broker_entries: BTreeMap<EntryRef, (u32, u32, BTreeMap<EndpointId, u32>)> = self
            .broker
            .entries()
            .into_iter()
            .map(|(r, e)| (r, (e.ref_count, e.unreceived_count, e.holder_refs.clone())))
            .collect();
        let oracle_entries: BTreeMap<EntryRef, (u32, u32, BTreeMap<EndpointId, u32>)> = self
            .entries
            .iter()
            .map(|en| {
                let mut holders = BTreeMap::new();
                for h in &en.handles {
                    *holders.entry(*h).or_insert(0) += 1;
                }
                (en.entry, (en.handles.len() as u32, en.pending.len() as u32, holders))
            })
            .collect();
        assert_eq!(broker_entries, oracle_entries, "entry state at step {}", self.steps);
        for (r, e) in self.broker.entries() {
            assert_eq!(e.ref_count, e.holder_refs.values().sum::<u32>(), "{r}");
        }
    }

    /// Drops every handle and ends every process; nothing may remain.
    pub fn finish(&mut self) {
        while !self.all_handles().is_empty() {
            self.apply(Step::Drop(0));
        }
        for i in 0..self.procs.len() {
            if self.procs[i].alive {
                self.apply(Step::Kill(0));
            }
        }
        assert!(self.broker.entries().is_empty(), "leaked entries: {:?}", self.broker.entries());
        assert!(self.entries.is_empty());
    }
}
