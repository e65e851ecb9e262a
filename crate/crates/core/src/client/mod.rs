//! Client side of the zero-copy transport.
//!
//! A [`Context`] is one broker session. It runs two threads: a reader that
//! matches replies to requests, and a dispatcher that runs subscription
//! callbacks one at a time and frees reclaimed messages.

mod handles;
pub(crate) mod registry;
mod session;

use std::collections::HashMap;
use std::marker::PhantomData;
use std::os::unix::net::UnixStream;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use thiserror::Error;

pub use handles::{Loan, MessageHandle};
pub use registry::ArenaRef;
pub(crate) use session::Session;

use crate::alloc::AllocError;
use crate::arena::{AddressRange, ArenaError, OwnedArena};
use crate::ids::{EndpointId, EntryId, EntryRef};
use crate::message::{CodecError, Message, MessageError};
use crate::protocol::{self, ArenaInfo, ErrorCode, Notice, Request, Transport};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot connect to broker at {path}: {source}")]
    Connect {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("broker session lost")]
    SessionLost,
    #[error("broker refused request ({code:?}): {message}")]
    Broker { code: ErrorCode, message: String },
    #[error("unexpected reply from broker: {0}")]
    UnexpectedReply(String),
    #[error(transparent)]
    Arena(#[from] ArenaError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Message(#[from] MessageError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("loan belongs to publisher {loan}, not {publisher}")]
    WrongPublisher { loan: EndpointId, publisher: EndpointId },
    #[error("payload of {len} bytes exceeds the {max} byte limit")]
    PayloadTooLarge { len: usize, max: usize },
}

impl ClientError {
    /// The broker's error code, if the broker refused the request.
    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            ClientError::Broker { code, .. } => Some(*code),
            _ => None,
        }
    }
}

/// A failed publish. The loan comes back untouched so it can be retried or
/// dropped.
#[derive(Error)]
#[error("{error}")]
pub struct PublishError<M: Message> {
    pub loan: Loan<M>,
    #[source]
    pub error: ClientError,
}

impl<M: Message> std::fmt::Debug for PublishError<M> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PublishError").field("error", &self.error).finish_non_exhaustive()
    }
}

/// A zero-copy delivery before it is typed.
pub(crate) struct RawDelivery {
    pub subscriber: EndpointId,
    pub entry: EntryRef,
    pub address: usize,
    pub arena: ArenaRef,
}

/// A copy-based delivery.
#[derive(Debug, Clone)]
pub struct BaselineDelivery {
    pub subscriber: EndpointId,
    /// Publisher (or bridge) that produced the bytes.
    pub origin: EndpointId,
    pub payload: Vec<u8>,
}

pub(crate) type ZeroCopyCallback = Box<dyn FnMut(RawDelivery) + Send>;
pub(crate) type BaselineCallback = Box<dyn FnMut(BaselineDelivery) + Send>;

pub(crate) enum Route {
    ZeroCopy(Arc<Mutex<ZeroCopyCallback>>),
    Baseline(Arc<Mutex<BaselineCallback>>),
}

/// Published entry waiting for its reclaim notice.
struct Outstanding {
    arena: Arc<OwnedArena>,
    buffers: Vec<usize>,
}

#[derive(Default)]
struct ClientState {
    routes: HashMap<EndpointId, Route>,
    arenas: HashMap<String, ArenaInfo>,
    mapped: HashMap<String, ArenaRef>,
    outstanding: HashMap<EntryRef, Outstanding>,
}

/// Delivery bookkeeping of one context.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ContextStats {
    pub deliveries: u64,
    /// Deliveries whose arena could not be mapped or whose address was not
    /// inside it; their reference was released unread.
    pub delivery_errors: u64,
    /// Deliveries to a subscription that no longer exists in this process.
    pub unrouted: u64,
    pub reclaimed: u64,
}

#[derive(Default)]
struct Counters {
    deliveries: AtomicU64,
    delivery_errors: AtomicU64,
    unrouted: AtomicU64,
    reclaimed: AtomicU64,
}

pub(crate) struct Shared {
    pub(crate) session: Arc<Session>,
    state: Arc<Mutex<ClientState>>,
    counters: Counters,
    pid: u32,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Shared {
    pub(crate) fn request(&self, req: &Request, hook: Option<session::ReplyHook>) -> Result<Notice, ClientError> {
        self.session.request(req, hook)
    }

    fn release(&self, subscriber: EndpointId, entry: EntryRef) {
        let _ = self.session.send(
            &Request::DecrRef {
                subscriber_id: subscriber,
                entry,
            }
            .encode(),
        );
    }

    fn resolve_arena(&self, name: &str) -> Result<ArenaRef, String> {
        let mut st = lock(&self.state);
        if let Some(a) = st.mapped.get(name) {
            return Ok(a.clone());
        }
        let info = st.arenas.get(name).cloned().ok_or_else(|| format!("arena {name} was never announced"))?;
        let arena = registry::attach(&info).map_err(|e| e.to_string())?;
        st.mapped.insert(name.to_owned(), arena.clone());
        Ok(arena)
    }

    fn dispatch(&self, notice: Notice) {
        match notice {
            Notice::Delivery {
                subscriber_id,
                entry,
                arena,
                address,
            } => {
                self.counters.deliveries.fetch_add(1, Ordering::Relaxed);
                let route = match lock(&self.state).routes.get(&subscriber_id) {
                    Some(Route::ZeroCopy(cb)) => Some(cb.clone()),
                    _ => None,
                };
                let Some(cb) = route else {
                    self.counters.unrouted.fetch_add(1, Ordering::Relaxed);
                    self.release(subscriber_id, entry);
                    return;
                };
                let arena = match self.resolve_arena(&arena) {
                    Ok(a) => a,
                    Err(e) => {
                        log::error!("pid={} entry={entry} cannot map arena: {e}", self.pid);
                        self.counters.delivery_errors.fetch_add(1, Ordering::Relaxed);
                        self.release(subscriber_id, entry);
                        return;
                    }
                };
                (lock(&cb))(RawDelivery {
                    subscriber: subscriber_id,
                    entry,
                    address: address as usize,
                    arena,
                });
            }
            Notice::BaselineDelivery {
                subscriber_id,
                origin_id,
                payload,
            } => {
                self.counters.deliveries.fetch_add(1, Ordering::Relaxed);
                let route = match lock(&self.state).routes.get(&subscriber_id) {
                    Some(Route::Baseline(cb)) => Some(cb.clone()),
                    _ => None,
                };
                match route {
                    Some(cb) => (lock(&cb))(BaselineDelivery {
                        subscriber: subscriber_id,
                        origin: origin_id,
                        payload,
                    }),
                    None => {
                        self.counters.unrouted.fetch_add(1, Ordering::Relaxed);
                    }
                }
            }
            Notice::ArenaAnnounce { arena, .. } => {
                lock(&self.state).arenas.insert(arena.name.clone(), arena);
            }
            Notice::Reclaim { entry } => {
                let Some(out) = lock(&self.state).outstanding.remove(&entry) else {
                    log::error!("pid={} entry={entry} reclaim notice for an unknown entry", self.pid);
                    return;
                };
                for addr in out.buffers.iter().rev() {
                    if let Err(e) = out.arena.dealloc(*addr) {
                        log::error!("pid={} entry={entry} freeing {addr:#x}: {e}", self.pid);
                    }
                }
                self.counters.reclaimed.fetch_add(1, Ordering::Relaxed);
                log::trace!("pid={} entry={entry} reclaimed", self.pid);
            }
            other => log::warn!("pid={} unexpected notice {other:?}", self.pid),
        }
    }

    fn dispatch_loop(self: Arc<Self>, events: Receiver<Notice>) {
        for notice in events {
            self.dispatch(notice);
        }
        // Callbacks may own publishers that point back here.
        let routes = std::mem::take(&mut lock(&self.state).routes);
        drop(routes);
    }
}

/// One session with the broker.
pub struct Context {
    shared: Arc<Shared>,
    reader: Option<JoinHandle<()>>,
    dispatcher: Option<JoinHandle<()>>,
}

impl Context {
    /// Connects to the broker at [`protocol::broker_path`].
    pub fn connect_default() -> Result<Context, ClientError> {
        Self::connect(protocol::broker_path())
    }

    pub fn connect(path: impl AsRef<Path>) -> Result<Context, ClientError> {
        let path = path.as_ref();
        let stream = UnixStream::connect(path).map_err(|source| ClientError::Connect {
            path: path.to_path_buf(),
            source,
        })?;
        let read_half = stream.try_clone().map_err(|source| ClientError::Connect {
            path: path.to_path_buf(),
            source,
        })?;
        let session = Arc::new(Session::new(stream));
        let shared = Arc::new(Shared {
            session: session.clone(),
            state: Default::default(),
            counters: Counters::default(),
            pid: std::process::id(),
        });
        let (tx, rx) = mpsc::channel();
        let reader = thread::Builder::new()
            .name("zerocast-reader".into())
            .spawn(move || session.read_loop(read_half, tx))
            .expect("spawn reader thread");
        let dispatch_shared = shared.clone();
        let dispatcher = thread::Builder::new()
            .name("zerocast-dispatch".into())
            .spawn(move || dispatch_shared.dispatch_loop(rx))
            .expect("spawn dispatch thread");
        Ok(Context {
            shared,
            reader: Some(reader),
            dispatcher: Some(dispatcher),
        })
    }

    pub fn process_id(&self) -> u32 {
        self.shared.pid
    }

    pub fn is_connected(&self) -> bool {
        !self.shared.session.is_lost()
    }

    pub fn stats(&self) -> ContextStats {
        let c = &self.shared.counters;
        ContextStats {
            deliveries: c.deliveries.load(Ordering::Relaxed),
            delivery_errors: c.delivery_errors.load(Ordering::Relaxed),
            unrouted: c.unrouted.load(Ordering::Relaxed),
            reclaimed: c.reclaimed.load(Ordering::Relaxed),
        }
    }

    /// Number of published entries not yet reclaimed.
    pub fn outstanding_entries(&self) -> usize {
        lock(&self.shared.state).outstanding.len()
    }

    pub(crate) fn shared(&self) -> &Arc<Shared> {
        &self.shared
    }

    /// Registers a zero-copy publisher. The first one in a process also maps
    /// the process's arena at the address the broker assigns.
    pub fn create_publisher<M: Message>(&self, topic: &str) -> Result<Publisher<M>, ClientError> {
        let reply = self.shared.request(
            &Request::RegisterPublisher {
                topic: topic.to_owned(),
                process_id: self.shared.pid,
                transport: Transport::ZeroCopy,
            },
            None,
        )?;
        let (id, info) = match reply {
            Notice::PublisherRegistered {
                publisher_id,
                arena: Some(info),
                ..
            } => (publisher_id, info),
            other => return Err(ClientError::UnexpectedReply(format!("{other:?}"))),
        };
        let arena = registry::owned(&info)?;
        lock(&self.shared.state).arenas.insert(info.name.clone(), info);
        log::info!("pid={} topic={topic:?} publisher {id} ready", self.shared.pid);
        Ok(Publisher {
            shared: self.shared.clone(),
            id,
            topic: topic.to_owned(),
            arena,
            _msg: PhantomData,
        })
    }

    /// Registers a zero-copy subscriber. `callback` runs on the dispatch
    /// thread with a handle valid for the call; clone it to keep the message.
    pub fn create_subscription<M, F>(&self, topic: &str, mut callback: F) -> Result<Subscription, ClientError>
    where
        M: Message,
        F: FnMut(&MessageHandle<M>) + Send + 'static,
    {
        let shared = self.shared.clone();
        let pid = self.shared.pid;
        let route: ZeroCopyCallback = Box::new(move |d: RawDelivery| {
            let valid = d.address % std::mem::align_of::<M>() == 0
                && d.address >= d.arena.base() + crate::arena::ARENA_METADATA
                && d.arena.contains_span(d.address, std::mem::size_of::<M>());
            let (entry, address) = (d.entry, d.address);
            // Adopting first means the credit is released on every path.
            let handle = MessageHandle::<M>::adopt(shared.session.clone(), d.subscriber, d.entry, d.address, d.arena);
            if !valid {
                log::error!("pid={pid} entry={entry} address {address:#x} is not a message in its arena");
                shared.counters.delivery_errors.fetch_add(1, Ordering::Relaxed);
                return;
            }
            callback(&handle);
        });
        self.subscribe(topic, Transport::ZeroCopy, Route::ZeroCopy(Arc::new(Mutex::new(route))))
    }

    pub(crate) fn subscribe(&self, topic: &str, transport: Transport, route: Route) -> Result<Subscription, ClientError> {
        let state = self.shared.state.clone();
        let hook: session::ReplyHook = Box::new(move |n: &Notice| {
            if let Notice::SubscriberRegistered { subscriber_id, arenas } = n {
                let mut st = lock(&state);
                for a in arenas {
                    st.arenas.insert(a.name.clone(), a.clone());
                }
                st.routes.insert(*subscriber_id, route);
            }
        });
        let reply = self.shared.request(
            &Request::RegisterSubscriber {
                topic: topic.to_owned(),
                process_id: self.shared.pid,
                transport,
            },
            Some(hook),
        )?;
        match reply {
            Notice::SubscriberRegistered { subscriber_id, .. } => {
                log::info!("pid={} topic={topic:?} subscriber {subscriber_id} ready", self.shared.pid);
                Ok(Subscription {
                    shared: self.shared.clone(),
                    id: subscriber_id,
                    topic: topic.to_owned(),
                })
            }
            other => Err(ClientError::UnexpectedReply(format!("{other:?}"))),
        }
    }
}

impl Drop for Context {
    fn drop(&mut self) {
        self.shared.session.shutdown();
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
        if let Some(d) = self.dispatcher.take() {
            if d.thread().id() != thread::current().id() {
                let _ = d.join();
            }
        }
        lock(&self.shared.state).routes.clear();
    }
}

/// A zero-copy publisher on one topic.
pub struct Publisher<M: Message> {
    shared: Arc<Shared>,
    id: EndpointId,
    topic: String,
    arena: Arc<OwnedArena>,
    _msg: PhantomData<fn(M)>,
}

impl<M: Message> Publisher<M> {
    pub fn id(&self) -> EndpointId {
        self.id
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn arena(&self) -> &OwnedArena {
        &self.arena
    }

    /// Allocates an empty message in this process's arena.
    pub fn loan(&self) -> Result<Loan<M>, ClientError> {
        Ok(Loan::new(self.arena.clone(), self.id)?)
    }

    /// Hands the message to the broker. On success the message belongs to the
    /// subscribers until the broker reports it reclaimed.
    pub fn publish(&self, loan: Loan<M>) -> Result<EntryId, PublishError<M>> {
        if loan.publisher() != self.id {
            let error = ClientError::WrongPublisher {
                loan: loan.publisher(),
                publisher: self.id,
            };
            return Err(PublishError { loan, error });
        }
        let buffers = loan.buffers();
        if let Some(&foreign) = buffers.iter().find(|a| !self.arena.contains(**a)) {
            let error = MessageError::ForeignBuffer(foreign).into();
            return Err(PublishError { loan, error });
        }
        let (arena, root, publisher) = loan.into_raw();
        let state = self.shared.state.clone();
        let record = Outstanding {
            arena: arena.clone(),
            buffers,
        };
        let hook: session::ReplyHook = Box::new(move |n: &Notice| {
            if let Notice::EntryPublished { entry } = n {
                lock(&state).outstanding.insert(*entry, record);
            }
        });
        let req = Request::PublishEntry {
            publisher_id: self.id,
            address: root as u64,
        };
        match self.shared.request(&req, Some(hook)) {
            Ok(Notice::EntryPublished { entry }) => {
                log::trace!("pid={} topic={:?} entry={entry} published", self.shared.pid, self.topic);
                Ok(entry.entry)
            }
            Ok(other) => Err(PublishError {
                loan: Loan::from_raw(arena, root, publisher),
                error: ClientError::UnexpectedReply(format!("{other:?}")),
            }),
            Err(error) => Err(PublishError {
                loan: Loan::from_raw(arena, root, publisher),
                error,
            }),
        }
    }
}

/// A registered subscriber. Dropping it stops callbacks; deliveries that
/// still arrive are released without being read.
pub struct Subscription {
    shared: Arc<Shared>,
    id: EndpointId,
    topic: String,
}

impl Subscription {
    pub fn id(&self) -> EndpointId {
        self.id
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        let route = lock(&self.shared.state).routes.remove(&self.id);
        drop(route);
    }
}
