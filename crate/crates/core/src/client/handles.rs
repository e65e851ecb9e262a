//! The two ways to hold a message.
//!
//! A [`Loan`] is the exclusive, writable message a publisher is filling in.
//! Publishing consumes it, so the publisher cannot touch the message again. A
//! [`MessageHandle`] is a shared, read-only reference to a published message;
//! each live handle is one reference counted by the broker.
//!
//! ```compile_fail
//! # use zerocast::{MessageHandle, Fixed128};
//! fn mutate(h: &MessageHandle<Fixed128>) {
//!     h.seq = 1; // handles only deref immutably
//! }
//! ```
//!
//! ```compile_fail
//! # use zerocast::{Publisher, Fixed128};
//! fn reuse(p: &Publisher<Fixed128>) {
//!     let mut loan = p.loan().unwrap();
//!     p.publish(loan).unwrap();
//!     loan.seq = 1; // the loan was moved into publish
//! }
//! ```

use std::marker::PhantomData;
use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use super::registry::ArenaRef;
use super::session::Session;
use crate::arena::{AddressRange, OwnedArena};
use crate::ids::{EndpointId, EntryRef};
use crate::message::{DynSeq, Message, MessageError, Plain, SeqStore};
use crate::protocol::Request;

/// A message allocated in this process's arena and not yet published.
///
/// Dropping an unpublished loan frees it.
pub struct Loan<M: Message> {
    arena: Arc<OwnedArena>,
    root: usize,
    publisher: EndpointId,
    _msg: PhantomData<M>,
}

impl<M: Message> Loan<M> {
    pub(crate) fn new(arena: Arc<OwnedArena>, publisher: EndpointId) -> Result<Self, crate::alloc::AllocError> {
        let root = arena.alloc(std::mem::size_of::<M>(), std::mem::align_of::<M>())?;
        // SAFETY: fresh, suitably aligned block of size_of::<M>() bytes.
        unsafe { (root as *mut M).write(M::empty()) };
        Ok(Loan {
            arena,
            root,
            publisher,
            _msg: PhantomData,
        })
    }

    pub(crate) fn from_raw(arena: Arc<OwnedArena>, root: usize, publisher: EndpointId) -> Self {
        Loan {
            arena,
            root,
            publisher,
            _msg: PhantomData,
        }
    }

    /// Gives up ownership without freeing anything.
    pub(crate) fn into_raw(self) -> (Arc<OwnedArena>, usize, EndpointId) {
        let this = std::mem::ManuallyDrop::new(self);
        // SAFETY: `this` is never used or dropped again.
        let arena = unsafe { std::ptr::read(&this.arena) };
        (arena, this.root, this.publisher)
    }

    /// Address of the message in the arena; identical in every process.
    pub fn address(&self) -> usize {
        self.root
    }

    pub fn publisher(&self) -> EndpointId {
        self.publisher
    }

    pub fn arena(&self) -> &OwnedArena {
        &self.arena
    }

    /// The fields together with the store sequence operations must use.
    pub fn parts_mut(&mut self) -> (&mut M, &dyn SeqStore) {
        // SAFETY: the loan exclusively owns the initialized message at root.
        let msg = unsafe { &mut *(self.root as *mut M) };
        (msg, &*self.arena)
    }

    /// Appends to the sequence selected by `field`.
    pub fn seq_push<T: Plain>(&mut self, field: impl FnOnce(&mut M) -> &mut DynSeq<T>, value: T) -> Result<(), MessageError> {
        let (msg, store) = self.parts_mut();
        field(msg).push(store, value)
    }

    /// Appends a slice to the sequence selected by `field`.
    pub fn seq_extend<T: Plain>(
        &mut self,
        field: impl FnOnce(&mut M) -> &mut DynSeq<T>,
        values: &[T],
    ) -> Result<(), MessageError> {
        let (msg, store) = self.parts_mut();
        field(msg).extend_from_slice(store, values)
    }

    /// Every buffer the message owns, root first.
    pub(crate) fn buffers(&self) -> Vec<usize> {
        let mut out = vec![self.root];
        self.deref().for_each_buffer(&mut |a| out.push(a));
        out
    }
}

impl<M: Message> Deref for Loan<M> {
    type Target = M;
    fn deref(&self) -> &M {
        // SAFETY: see parts_mut.
        unsafe { &*(self.root as *const M) }
    }
}

impl<M: Message> DerefMut for Loan<M> {
    fn deref_mut(&mut self) -> &mut M {
        self.parts_mut().0
    }
}

impl<M: Message> Drop for Loan<M> {
    fn drop(&mut self) {
        for addr in self.buffers().into_iter().rev() {
            if self.arena.contains(addr) {
                if let Err(e) = self.arena.dealloc(addr) {
                    log::error!("freeing unpublished message buffer {addr:#x}: {e}");
                }
            }
        }
    }
}

/// Delivery credit plus the mapping that keeps the message readable.
struct Credit {
    session: Arc<Session>,
    subscriber: EndpointId,
    entry: EntryRef,
    root: usize,
    arena: ArenaRef,
}

impl Credit {
    fn send(&self, req: Request) {
        if let Err(e) = self.session.send(&req.encode()) {
            log::debug!("reference update for {} not sent: {e}", self.entry);
        }
    }
}

/// Shared read-only reference to a published message.
///
/// Cloning adds a reference at the broker; dropping removes one. The message
/// is reclaimed once every handle everywhere is gone.
pub struct MessageHandle<M: Message> {
    credit: Credit,
    _msg: PhantomData<fn() -> M>,
}

impl<M: Message> MessageHandle<M> {
    /// Takes over the reference the broker credited for one delivery.
    pub(crate) fn adopt(session: Arc<Session>, subscriber: EndpointId, entry: EntryRef, root: usize, arena: ArenaRef) -> Self {
        MessageHandle {
            credit: Credit {
                session,
                subscriber,
                entry,
                root,
                arena,
            },
            _msg: PhantomData,
        }
    }

    pub fn entry(&self) -> EntryRef {
        self.credit.entry
    }

    pub fn subscriber(&self) -> EndpointId {
        self.credit.subscriber
    }

    /// Address of the message; the same value the publisher's loan had.
    pub fn address(&self) -> usize {
        self.credit.root
    }

    pub fn arena_base(&self) -> usize {
        self.credit.arena.base()
    }
}

impl<M: Message> Deref for MessageHandle<M> {
    type Target = M;
    fn deref(&self) -> &M {
        // SAFETY: the broker keeps the message allocated while this reference
        // is counted, the mapping is held by `arena`, and published messages
        // are never written again.
        unsafe { &*(self.credit.root as *const M) }
    }
}

impl<M: Message> Clone for MessageHandle<M> {
    fn clone(&self) -> Self {
        let c = &self.credit;
        c.send(Request::IncrRef {
            subscriber_id: c.subscriber,
            entry: c.entry,
        });
        MessageHandle {
            credit: Credit {
                session: c.session.clone(),
                subscriber: c.subscriber,
                entry: c.entry,
                root: c.root,
                arena: c.arena.clone(),
            },
            _msg: PhantomData,
        }
    }
}

impl Drop for Credit {
    fn drop(&mut self) {
        self.send(Request::DecrRef {
            subscriber_id: self.subscriber,
            entry: self.entry,
        });
    }
}

impl<M: Message + std::fmt::Debug> std::fmt::Debug for MessageHandle<M> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MessageHandle")
            .field("entry", &self.credit.entry)
            .field("message", self.deref())
            .finish()
    }
}
