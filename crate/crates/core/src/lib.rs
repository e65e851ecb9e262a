//! Zero-copy publish/subscribe over shared-memory arenas mapped at identical
//! virtual addresses in every process, plus a copy-based baseline transport,
//! a bridge between the two, and a benchmark harness.

pub mod alloc;
pub mod arena;
pub mod baseline;
pub mod bench;
pub mod bridge;
pub mod broker;
pub mod client;
pub mod clock;
pub mod ids;
pub mod message;
pub mod protocol;

pub use alloc::{AllocError, AllocStats, FreeListAllocator};
pub use arena::{AddressRange, ArenaDescriptor, ArenaError, ArenaView, OwnedArena};
pub use ids::{EndpointId, EntryId, EntryRef, SessionId};
pub use message::{CodecError, Detached, DynSeq, Fixed128, Message, MessageError, PointCloud, SeqStore};
pub use protocol::{ErrorCode, Transport};
pub use client::{BaselineDelivery, ClientError, Context, ContextStats, Loan, MessageHandle, PublishError, Publisher, Subscription};
pub use baseline::BaselinePublisher;
pub use bench::{Summary, Summary32, Summary64};
