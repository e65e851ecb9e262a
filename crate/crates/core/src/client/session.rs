//! One connection to the broker.
//!
//! Requests are serialized: at most one awaits a reply, so the next reply
//! frame always belongs to it. The reply hook runs on the reader thread before
//! any later frame is looked at, which lets callers record state that later
//! notifications depend on.

use std::io::{BufReader, Write};
use std::net::Shutdown;
use std::os::unix::net::UnixStream;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Sender, SyncSender};
use std::sync::{Arc, Mutex};

use super::ClientError;
use crate::protocol::{read_frame, Notice, Request};

pub(crate) type ReplyHook = Box<dyn FnOnce(&Notice) + Send>;

struct Pending {
    hook: Option<ReplyHook>,
    done: SyncSender<Result<Notice, ClientError>>,
}

pub(crate) struct Session {
    writer: Mutex<UnixStream>,
    request: Mutex<()>,
    pending: Mutex<Option<Pending>>,
    lost: AtomicBool,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Session {
    pub fn new(stream: UnixStream) -> Session {
        Session {
            writer: Mutex::new(stream),
            request: Mutex::new(()),
            pending: Mutex::new(None),
            lost: AtomicBool::new(false),
        }
    }

    pub fn is_lost(&self) -> bool {
        self.lost.load(Ordering::Acquire)
    }

    /// Writes one encoded frame.
    pub fn send(&self, frame: &[u8]) -> Result<(), ClientError> {
        if self.is_lost() {
            return Err(ClientError::SessionLost);
        }
        let mut w = lock(&self.writer);
        w.write_all(frame).map_err(|e| {
            log::warn!("broker connection write failed: {e}");
            self.lost.store(true, Ordering::Release);
            ClientError::SessionLost
        })
    }

    /// Sends `req` and waits for its reply. An `Error` reply becomes
    /// `ClientError::Broker`; `hook` sees only successful replies.
    pub fn request(&self, req: &Request, hook: Option<ReplyHook>) -> Result<Notice, ClientError> {
        let _serial = lock(&self.request);
        let (done, wait) = mpsc::sync_channel(1);
        *lock(&self.pending) = Some(Pending { hook, done });
        if let Err(e) = self.send(&req.encode()) {
            lock(&self.pending).take();
            return Err(e);
        }
        wait.recv().unwrap_or(Err(ClientError::SessionLost))
    }

    pub fn shutdown(&self) {
        self.lost.store(true, Ordering::Release);
        let _ = lock(&self.writer).shutdown(Shutdown::Both);
    }

    fn fail_pending(&self) {
        if let Some(p) = lock(&self.pending).take() {
            let _ = p.done.send(Err(ClientError::SessionLost));
        }
    }

    /// Reader thread body: completes requests and forwards everything else to
    /// `events` in arrival order.
    pub fn read_loop(self: Arc<Self>, stream: UnixStream, events: Sender<Notice>) {
        let mut reader = BufReader::with_capacity(1 << 16, stream);
        loop {
            let frame = match read_frame(&mut reader) {
                Ok(Some(f)) => f,
                Ok(None) => break,
                Err(e) => {
                    if !self.is_lost() {
                        log::warn!("broker connection read failed: {e}");
                    }
                    break;
                }
            };
            let notice = match Notice::decode(frame.0, &frame.1) {
                Ok(n) => n,
                Err(e) => {
                    log::error!("undecodable frame from broker (opcode {:#04x}): {e}", frame.0);
                    break;
                }
            };
            if notice.is_reply() {
                let Some(p) = lock(&self.pending).take() else {
                    log::warn!("unsolicited reply from broker: {notice:?}");
                    continue;
                };
                let result = match notice {
                    Notice::Error { code, message } => Err(ClientError::Broker { code, message }),
                    n => {
                        if let Some(hook) = p.hook {
                            hook(&n);
                        }
                        Ok(n)
                    }
                };
                let _ = p.done.send(result);
            } else if events.send(notice).is_err() {
                break;
            }
        }
        self.lost.store(true, Ordering::Release);
        self.fail_pending();
    }
}
