//! Metadata broker: topics, endpoints, per-publisher entry queues and
//! cross-process reference counts, applied one request at a time.

mod server;
mod state;

pub use server::{Broker, BrokerHandle, ServeError};
pub use state::{BrokerConfig, BrokerError, BrokerState, Effect, PublisherGrant, QueueEntry, DEFAULT_POOL_START};
