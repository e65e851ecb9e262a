//! Copy-based transport for comparison.
//!
//! The publisher serializes the message into a frame, the broker copies the
//! frame to every baseline subscriber, and each subscriber deserializes into
//! its own heap. Same topics and broker as the zero-copy path.

use std::marker::PhantomData;
use std::sync::{Arc, Mutex};

use crate::client::{BaselineDelivery, ClientError, Context, Route, Shared, Subscription};
use crate::ids::EndpointId;
use crate::message::{CodecError, Detached, Message};
use crate::protocol::{encode_baseline_publish_into, Notice, Request, Transport, DEFAULT_MAX_PAYLOAD};

/// Serializes a message into a standalone byte buffer.
pub fn serialize<M: Message>(msg: &M) -> Vec<u8> {
    msg.to_bytes()
}

/// Rebuilds a message from [`serialize`] output. Truncated or overlong input is
/// an error.
pub fn deserialize<M: Message>(bytes: &[u8]) -> Result<Detached<M>, CodecError> {
    Detached::decode(bytes)
}

/// Publisher on the copy-based path. Its id doubles as the origin recorded in
/// every delivery it causes.
pub struct BaselinePublisher<M: Message> {
    shared: Arc<Shared>,
    id: EndpointId,
    topic: String,
    max_payload: usize,
    /// Reused frame buffer; a fresh large allocation per publish costs page
    /// faults comparable to the copy itself.
    frame: Mutex<Vec<u8>>,
    _msg: PhantomData<fn(M)>,
}

impl<M: Message> BaselinePublisher<M> {
    pub fn id(&self) -> EndpointId {
        self.id
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    /// Serializes `msg` directly into the outgoing frame and sends it.
    pub fn publish(&self, msg: &M) -> Result<(), ClientError> {
        self.check_len(msg.encoded_len())?;
        self.send_with(|out| msg.encode(out))
    }

    /// Sends an already serialized message.
    pub fn publish_bytes(&self, payload: &[u8]) -> Result<(), ClientError> {
        self.check_len(payload.len())?;
        self.send_with(|out| out.extend_from_slice(payload))
    }

    fn check_len(&self, len: usize) -> Result<(), ClientError> {
        if len > self.max_payload {
            return Err(ClientError::PayloadTooLarge {
                len,
                max: self.max_payload,
            });
        }
        Ok(())
    }

    fn send_with(&self, payload: impl FnOnce(&mut Vec<u8>)) -> Result<(), ClientError> {
        let mut frame = self.frame.lock().unwrap_or_else(|e| e.into_inner());
        encode_baseline_publish_into(&mut frame, self.id, payload);
        self.shared.session.send(&frame)
    }
}

impl Context {
    /// Registers a copy-based publisher.
    pub fn create_baseline_publisher<M: Message>(&self, topic: &str) -> Result<BaselinePublisher<M>, ClientError> {
        let reply = self.shared().request(
            &Request::RegisterPublisher {
                topic: topic.to_owned(),
                process_id: self.process_id(),
                transport: Transport::Baseline,
            },
            None,
        )?;
        match reply {
            Notice::PublisherRegistered { publisher_id, .. } => Ok(BaselinePublisher {
                shared: self.shared().clone(),
                id: publisher_id,
                topic: topic.to_owned(),
                max_payload: DEFAULT_MAX_PAYLOAD,
                frame: Mutex::new(Vec::new()),
                _msg: PhantomData,
            }),
            other => Err(ClientError::UnexpectedReply(format!("{other:?}"))),
        }
    }

    /// Registers a copy-based subscriber that receives raw payloads.
    pub fn create_baseline_subscription_raw<F>(&self, topic: &str, callback: F) -> Result<Subscription, ClientError>
    where
        F: FnMut(BaselineDelivery) + Send + 'static,
    {
        let route = Route::Baseline(Arc::new(Mutex::new(Box::new(callback))));
        self.subscribe(topic, Transport::Baseline, route)
    }

    /// Registers a copy-based subscriber. Each delivery is deserialized into a
    /// private copy; payloads that fail to decode are logged and skipped.
    pub fn create_baseline_subscription<M, F>(&self, topic: &str, mut callback: F) -> Result<Subscription, ClientError>
    where
        M: Message,
        F: FnMut(EndpointId, Detached<M>) + Send + 'static,
    {
        let topic_name = topic.to_owned();
        self.create_baseline_subscription_raw(topic, move |d| match deserialize::<M>(&d.payload) {
            Ok(msg) => callback(d.origin, msg),
            Err(e) => log::error!("topic={topic_name:?} origin={} undecodable baseline payload: {e}", d.origin),
        })
    }
}
