//! Socket front end of the broker.
//!
//! Each connection gets a reader thread (decodes complete frames) and a writer
//! thread (drains the session's outgoing buffer). All state changes happen on
//! one apply thread that consumes events in arrival order, which makes every
//! request atomic and the resulting history serial.

use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter, Write};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use thiserror::Error;

use super::state::{BrokerConfig, BrokerError, BrokerState, Effect};
use crate::arena;
use crate::clock::set_realtime_priority;
use crate::ids::SessionId;
use crate::protocol::{read_frame, ErrorCode, Notice, Request};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("a broker is already listening on {0}")]
    AlreadyRunning(PathBuf),
    #[error("cannot bind {path}: {source}")]
    Bind {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

type Control = Box<dyn FnOnce(&mut BrokerState) + Send>;

enum Event {
    Open(SessionId, Sender<Vec<u8>>, UnixStream),
    Request(SessionId, Request),
    Malformed(SessionId, String),
    Disconnect(SessionId),
    Control(Control),
    Shutdown,
}

/// A bound, not yet serving broker.
pub struct Broker {
    config: BrokerConfig,
    path: PathBuf,
    listener: UnixListener,
}

impl Broker {
    /// Binds the endpoint. A stale socket file with nobody listening is
    /// replaced; a live one is an error.
    pub fn bind(config: BrokerConfig, path: impl AsRef<Path>) -> Result<Broker, ServeError> {
        let path = path.as_ref().to_path_buf();
        if path.exists() {
            if UnixStream::connect(&path).is_ok() {
                return Err(ServeError::AlreadyRunning(path));
            }
            let _ = std::fs::remove_file(&path);
        }
        let listener = UnixListener::bind(&path).map_err(|source| ServeError::Bind {
            path: path.clone(),
            source,
        })?;
        Ok(Broker { config, path, listener })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Serves on the calling thread until the process ends.
    pub fn serve(self) {
        let handle = self.spawn();
        handle.join();
    }

    /// Serves on background threads.
    pub fn spawn(self) -> BrokerHandle {
        let (events_tx, events_rx) = mpsc::channel::<Event>();
        let stopping = Arc::new(AtomicBool::new(false));
        let priority = self.config.realtime_priority;
        let state = BrokerState::new(self.config);

        let apply = thread::Builder::new()
            .name("zerocast-apply".into())
            .spawn(move || {
                if let Some(p) = priority {
                    set_realtime_priority(p);
                }
                apply_loop(state, events_rx)
            })
            .expect("spawn apply thread");

        let accept_events = events_tx.clone();
        let accept_stop = stopping.clone();
        let listener = self.listener;
        let accept = thread::Builder::new()
            .name("zerocast-accept".into())
            .spawn(move || accept_loop(listener, accept_events, accept_stop, priority))
            .expect("spawn accept thread");

        log::info!("broker listening on {}", self.path.display());
        BrokerHandle {
            path: self.path,
            events: events_tx,
            stopping,
            threads: vec![apply, accept],
        }
    }
}

/// Control over a running broker.
pub struct BrokerHandle {
    path: PathBuf,
    events: Sender<Event>,
    stopping: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl BrokerHandle {
    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Runs `f` on the apply thread between two requests and returns its
    /// result.
    pub fn with_state<R: Send + 'static>(&self, f: impl FnOnce(&mut BrokerState) -> R + Send + 'static) -> R {
        let (tx, rx) = mpsc::channel();
        let control: Control = Box::new(move |state| {
            let _ = tx.send(f(state));
        });
        self.events
            .send(Event::Control(control))
            .expect("broker apply thread is gone");
        rx.recv().expect("broker apply thread is gone")
    }

    pub fn dump(&self) -> Vec<u8> {
        self.with_state(|s| s.dump())
    }

    pub fn session_count(&self) -> usize {
        self.with_state(|s| s.session_count())
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if self.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = self.events.send(Event::Shutdown);
        // Wake the accept loop.
        let _ = UnixStream::connect(&self.path);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        let _ = std::fs::remove_file(&self.path);
    }

    fn join(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for BrokerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: UnixListener, events: Sender<Event>, stopping: Arc<AtomicBool>, priority: Option<i32>) {
    let mut next = 1u64;
    for stream in listener.incoming() {
        if stopping.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let session = SessionId(next);
        next += 1;
        let (out_tx, out_rx) = mpsc::channel::<Vec<u8>>();
        let Ok(write_half) = stream.try_clone() else {
            continue;
        };
        let Ok(close_half) = stream.try_clone() else {
            continue;
        };
        if events.send(Event::Open(session, out_tx, close_half)).is_err() {
            break;
        }
        let reader_events = events.clone();
        let spawned = thread::Builder::new()
            .name(format!("zerocast-rd-{}", session.0))
            .spawn(move || {
                if let Some(p) = priority {
                    set_realtime_priority(p);
                }
                reader_loop(session, stream, reader_events)
            })
            .and_then(|_| {
                thread::Builder::new()
                    .name(format!("zerocast-wr-{}", session.0))
                    .spawn(move || {
                        if let Some(p) = priority {
                            set_realtime_priority(p);
                        }
                        writer_loop(write_half, out_rx)
                    })
            });
        if let Err(e) = spawned {
            log::error!("cannot start session threads: {e}");
            let _ = events.send(Event::Disconnect(session));
        }
    }
}

fn reader_loop(session: SessionId, stream: UnixStream, events: Sender<Event>) {
    let mut reader = BufReader::with_capacity(64 * 1024, stream);
    loop {
        match read_frame(&mut reader) {
            Ok(Some((opcode, payload))) => match Request::decode(opcode, &payload) {
                Ok(req) => {
                    if events.send(Event::Request(session, req)).is_err() {
                        return;
                    }
                }
                Err(e) => {
                    let _ = events.send(Event::Malformed(session, e.to_string()));
                    return;
                }
            },
            Ok(None) => break,
            Err(e) if e.kind() == io::ErrorKind::InvalidData => {
                let _ = events.send(Event::Malformed(session, e.to_string()));
                return;
            }
            // Partial frame or reset: the fragment is dropped unapplied.
            Err(_) => break,
        }
    }
    let _ = events.send(Event::Disconnect(session));
}

fn writer_loop(stream: UnixStream, frames: Receiver<Vec<u8>>) {
    let mut writer = BufWriter::with_capacity(64 * 1024, stream);
    while let Ok(frame) = frames.recv() {
        if writer.write_all(&frame).is_err() {
            break;
        }
        // Batch whatever is already queued before flushing.
        let mut failed = false;
        while let Ok(more) = frames.try_recv() {
            if writer.write_all(&more).is_err() {
                failed = true;
                break;
            }
        }
        if failed || writer.flush().is_err() {
            break;
        }
    }
    let _ = writer.flush();
    let _ = writer.get_ref().shutdown(std::net::Shutdown::Both);
}

struct Session {
    out: Sender<Vec<u8>>,
    stream: UnixStream,
}

fn apply_loop(mut state: BrokerState, events: Receiver<Event>) {
    let mut sessions: HashMap<SessionId, Session> = HashMap::new();
    // Wire session ids are assigned by the accept thread; the state machine
    // keeps its own. Map one to the other.
    let mut ids: HashMap<SessionId, SessionId> = HashMap::new();

    while let Ok(event) = events.recv() {
        match event {
            Event::Open(wire, out, stream) => {
                let id = state.open_session();
                ids.insert(wire, id);
                sessions.insert(id, Session { out, stream });
            }
            Event::Request(wire, req) => {
                let Some(&id) = ids.get(&wire) else { continue };
                if !sessions.contains_key(&id) {
                    continue;
                }
                apply_request(&mut state, id, req);
            }
            Event::Malformed(wire, reason) => {
                let Some(id) = ids.remove(&wire) else { continue };
                log::warn!("session {id}: malformed frame ({reason}); closing");
                state.reply(
                    id,
                    Notice::Error {
                        code: ErrorCode::Malformed,
                        message: reason,
                    },
                );
                state.process_exit(id);
                state.close(id);
            }
            Event::Disconnect(wire) => {
                let Some(id) = ids.remove(&wire) else { continue };
                state.process_exit(id);
                sessions.remove(&id);
            }
            Event::Control(f) => f(&mut state),
            Event::Shutdown => break,
        }
        run_effects(&mut state, &mut sessions);
    }
    state.unlink_all_arenas();
    run_effects(&mut state, &mut sessions);
    for (_, s) in sessions.drain() {
        let _ = s.stream.shutdown(std::net::Shutdown::Both);
    }
}

fn apply_request(state: &mut BrokerState, session: SessionId, req: Request) {
    let result: Result<Option<Notice>, BrokerError> = match req {
        Request::RegisterPublisher {
            topic,
            process_id,
            transport,
        } => state
            .register_publisher(session, &topic, process_id, transport)
            .map(|grant| {
                Some(Notice::PublisherRegistered {
                    publisher_id: grant.publisher_id,
                    arena: grant.arena,
                    subscriber_count: grant.subscriber_count,
                })
            }),
        Request::RegisterSubscriber {
            topic,
            process_id,
            transport,
        } => state
            .register_subscriber(session, &topic, process_id, transport)
            .map(|(subscriber_id, arenas)| Some(Notice::SubscriberRegistered { subscriber_id, arenas })),
        Request::PublishEntry { publisher_id, address } => match state.publish_entry(session, publisher_id, address) {
            Ok(entry) => {
                // Deliveries go out before the reply so they do not wait on
                // the publisher's wakeup. A reclaim must still follow the
                // reply: the publisher records the reclaim closure when the
                // reply arrives. Other reclaims need a later DecrRef, which
                // the per-session queue orders after this reply.
                while state.deliver_one(entry) {}
                state.reply(session, Notice::EntryPublished { entry });
                state.deliver_pending(entry);
                Ok(None)
            }
            Err(e) => Err(e),
        },
        Request::IncrRef { subscriber_id, entry } => state.incr_ref(session, subscriber_id, entry).map(|_| None),
        Request::DecrRef { subscriber_id, entry } => state.decr_ref(session, subscriber_id, entry).map(|_| None),
        Request::BaselinePublish { origin_id, payload } => state.baseline_publish(session, origin_id, &payload).map(|_| None),
    };
    match result {
        Ok(Some(reply)) => state.reply(session, reply),
        Ok(None) => {}
        Err(e) => {
            log::debug!("session {session}: {e}");
            state.reply(session, e.to_notice());
            if e.is_fatal() {
                state.process_exit(session);
                state.close(session);
            }
        }
    }
}

fn run_effects(state: &mut BrokerState, sessions: &mut HashMap<SessionId, Session>) {
    for effect in state.take_effects() {
        match effect {
            Effect::Send { session, notice } => {
                if let Some(s) = sessions.get(&session) {
                    let _ = s.out.send(notice.encode());
                }
            }
            Effect::SendFrame { session, frame } => {
                if let Some(s) = sessions.get(&session) {
                    let _ = s.out.send(frame);
                }
            }
            Effect::Close(session) => {
                // Dropping the sender lets the writer flush what is queued
                // (the error frame) and then shut the socket down.
                sessions.remove(&session);
            }
            Effect::Unlink(name) => match arena::unlink(&name) {
                Ok(()) => log::debug!("unlinked arena {name}"),
                Err(e) => log::debug!("unlink {name}: {e}"),
            },
        }
    }
}
