//! Broker wire protocol.
//!
//! Every frame is `[u32 LE length][u8 opcode][payload]` where `length` counts
//! the opcode byte and the payload. Integers are little-endian fixed width,
//! text is `[u16 LE length][UTF-8]`, byte strings are `[u32 LE length][bytes]`
//! and addresses are `u64`.
//!
//! Requests and their replies share an opcode; the reply payload differs from
//! the request payload. Notifications (`ReclaimNotice`, `Delivery`,
//! `ArenaAnnounce`, `BaselineDelivery`) are pushed by the broker at any time.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::ids::{EntryId, EntryRef, EndpointId};

pub const OP_REGISTER_PUBLISHER: u8 = 0x01;
pub const OP_REGISTER_SUBSCRIBER: u8 = 0x02;
pub const OP_PUBLISH_ENTRY: u8 = 0x03;
pub const OP_INCR_REF: u8 = 0x04;
pub const OP_DECR_REF: u8 = 0x05;
pub const OP_RECLAIM_NOTICE: u8 = 0x06;
pub const OP_DELIVERY: u8 = 0x07;
pub const OP_ARENA_ANNOUNCE: u8 = 0x08;
pub const OP_BASELINE_PUBLISH: u8 = 0x09;
pub const OP_BASELINE_DELIVERY: u8 = 0x0a;
pub const OP_ERROR: u8 = 0x7f;

/// Largest baseline payload accepted by default.
pub const DEFAULT_MAX_PAYLOAD: usize = 16 << 20;
/// Largest frame either side will read; leaves room for the frame fields
/// around a maximal payload.
pub const MAX_FRAME_LEN: usize = DEFAULT_MAX_PAYLOAD + 4096;

pub const DEFAULT_BROKER_PATH: &str = "/tmp/zerocast.sock";
pub const BROKER_ENV: &str = "ZEROCAST_BROKER";

/// Endpoint path: `ZEROCAST_BROKER` if set, else the default.
pub fn broker_path() -> std::path::PathBuf {
    std::env::var_os(BROKER_ENV)
        .map(Into::into)
        .unwrap_or_else(|| DEFAULT_BROKER_PATH.into())
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("payload truncated")]
    Truncated,
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error("text field is not UTF-8")]
    BadUtf8,
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("unknown transport {0}")]
    UnknownTransport(u8),
    #[error("frame length {0} out of bounds")]
    BadLength(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Transport {
    ZeroCopy,
    Baseline,
}

impl Transport {
    fn code(self) -> u8 {
        match self {
            Transport::ZeroCopy => 0,
            Transport::Baseline => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self, DecodeError> {
        match code {
            0 => Ok(Transport::ZeroCopy),
            1 => Ok(Transport::Baseline),
            other => Err(DecodeError::UnknownTransport(other)),
        }
    }
}

/// Error codes carried by `0x7F Error` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum ErrorCode {
    LimitExceeded = 1,
    ConflictingArena = 2,
    UnknownPublisher = 3,
    AddressOutsideArena = 4,
    QueueFull = 5,
    ProtocolViolation = 6,
    Malformed = 7,
    PayloadTooLarge = 8,
    WrongTransport = 9,
    Other = 0xffff,
}

impl ErrorCode {
    pub fn from_u16(code: u16) -> ErrorCode {
        match code {
            1 => ErrorCode::LimitExceeded,
            2 => ErrorCode::ConflictingArena,
            3 => ErrorCode::UnknownPublisher,
            4 => ErrorCode::AddressOutsideArena,
            5 => ErrorCode::QueueFull,
            6 => ErrorCode::ProtocolViolation,
            7 => ErrorCode::Malformed,
            8 => ErrorCode::PayloadTooLarge,
            9 => ErrorCode::WrongTransport,
            _ => ErrorCode::Other,
        }
    }
}

/// Arena placement as carried on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArenaInfo {
    pub name: String,
    pub base: u64,
    pub capacity: u64,
    pub owner_process: u32,
}

/// Client → broker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    RegisterPublisher {
        topic: String,
        process_id: u32,
        transport: Transport,
    },
    RegisterSubscriber {
        topic: String,
        process_id: u32,
        transport: Transport,
    },
    PublishEntry {
        publisher_id: EndpointId,
        address: u64,
    },
    IncrRef {
        subscriber_id: EndpointId,
        entry: EntryRef,
    },
    DecrRef {
        subscriber_id: EndpointId,
        entry: EntryRef,
    },
    BaselinePublish {
        origin_id: EndpointId,
        payload: Vec<u8>,
    },
}

/// Broker → client: replies and pushed notifications.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Notice {
    PublisherRegistered {
        publisher_id: EndpointId,
        arena: Option<ArenaInfo>,
        subscriber_count: u32,
    },
    SubscriberRegistered {
        subscriber_id: EndpointId,
        arenas: Vec<ArenaInfo>,
    },
    EntryPublished {
        entry: EntryRef,
    },
    Reclaim {
        entry: EntryRef,
    },
    Delivery {
        subscriber_id: EndpointId,
        entry: EntryRef,
        arena: String,
        address: u64,
    },
    ArenaAnnounce {
        subscriber_id: EndpointId,
        arena: ArenaInfo,
    },
    BaselineDelivery {
        subscriber_id: EndpointId,
        origin_id: EndpointId,
        payload: Vec<u8>,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl Notice {
    /// Replies answer a request; everything else is pushed.
    pub fn is_reply(&self) -> bool {
        matches!(
            self,
            Notice::PublisherRegistered { .. }
                | Notice::SubscriberRegistered { .. }
                | Notice::EntryPublished { .. }
                | Notice::Error { .. }
        )
    }
}

/// Frame builder. Reserves the length prefix up front so a frame is one
/// contiguous buffer.
pub struct FrameWriter {
    buf: Vec<u8>,
}

impl FrameWriter {
    pub fn new(opcode: u8) -> Self {
        Self::with_capacity(opcode, 32)
    }

    pub fn with_capacity(opcode: u8, payload: usize) -> Self {
        let mut buf = Vec::with_capacity(payload + 5);
        buf.extend_from_slice(&[0, 0, 0, 0, opcode]);
        FrameWriter { buf }
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }
    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn text(&mut self, s: &str) -> &mut Self {
        let len = u16::try_from(s.len()).expect("text field longer than 65535 bytes");
        self.u16(len);
        self.buf.extend_from_slice(s.as_bytes());
        self
    }
    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
        self
    }
    fn arena(&mut self, a: &ArenaInfo) -> &mut Self {
        self.text(&a.name).u64(a.base).u64(a.capacity).u32(a.owner_process)
    }

    pub fn finish(mut self) -> Vec<u8> {
        let len = (self.buf.len() - 4) as u32;
        self.buf[0..4].copy_from_slice(&len.to_le_bytes());
        self.buf
    }
}

/// Cursor over a frame payload.
pub struct PayloadReader<'a> {
    rest: &'a [u8],
}

impl<'a> PayloadReader<'a> {
    pub fn new(payload: &'a [u8]) -> Self {
        PayloadReader { rest: payload }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.rest.len() < n {
            return Err(DecodeError::Truncated);
        }
        let (head, tail) = self.rest.split_at(n);
        self.rest = tail;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn text(&mut self) -> Result<String, DecodeError> {
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        std::str::from_utf8(raw).map(str::to_owned).map_err(|_| DecodeError::BadUtf8)
    }
    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.u32()? as usize;
        self.take(len)
    }
    fn arena(&mut self) -> Result<ArenaInfo, DecodeError> {
        Ok(ArenaInfo {
            name: self.text()?,
            base: self.u64()?,
            capacity: self.u64()?,
            owner_process: self.u32()?,
        })
    }
    fn entry(&mut self) -> Result<EntryRef, DecodeError> {
        Ok(EntryRef {
            publisher: EndpointId(self.u64()?),
            entry: EntryId(self.u64()?),
        })
    }
    fn id(&mut self) -> Result<EndpointId, DecodeError> {
        Ok(EndpointId(self.u64()?))
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(DecodeError::Trailing(self.rest.len()))
        }
    }
}

impl Request {
    pub fn opcode(&self) -> u8 {
        match self {
            Request::RegisterPublisher { .. } => OP_REGISTER_PUBLISHER,
            Request::RegisterSubscriber { .. } => OP_REGISTER_SUBSCRIBER,
            Request::PublishEntry { .. } => OP_PUBLISH_ENTRY,
            Request::IncrRef { .. } => OP_INCR_REF,
            Request::DecrRef { .. } => OP_DECR_REF,
            Request::BaselinePublish { .. } => OP_BASELINE_PUBLISH,
        }
    }

    /// Whether the broker answers this request with a reply frame.
    pub fn expects_reply(&self) -> bool {
        matches!(
            self,
            Request::RegisterPublisher { .. } | Request::RegisterSubscriber { .. } | Request::PublishEntry { .. }
        )
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            Request::RegisterPublisher { topic, process_id, transport }
            | Request::RegisterSubscriber { topic, process_id, transport } => {
                let mut w = FrameWriter::new(self.opcode());
                w.text(topic).u32(*process_id).u8(transport.code());
                w.finish()
            }
            Request::PublishEntry { publisher_id, address } => {
                let mut w = FrameWriter::new(OP_PUBLISH_ENTRY);
                w.u64(publisher_id.0).u64(*address);
                w.finish()
            }
            Request::IncrRef { subscriber_id, entry } | Request::DecrRef { subscriber_id, entry } => {
                let mut w = FrameWriter::new(self.opcode());
                w.u64(subscriber_id.0).u64(entry.publisher.0).u64(entry.entry.0);
                w.finish()
            }
            Request::BaselinePublish { origin_id, payload } => encode_baseline_publish(*origin_id, payload),
        }
    }

    pub fn decode(opcode: u8, payload: &[u8]) -> Result<Request, DecodeError> {
        let mut r = PayloadReader::new(payload);
        let req = match opcode {
            OP_REGISTER_PUBLISHER | OP_REGISTER_SUBSCRIBER => {
                let topic = r.text()?;
                let process_id = r.u32()?;
                let transport = Transport::from_code(r.u8()?)?;
                if opcode == OP_REGISTER_PUBLISHER {
                    Request::RegisterPublisher { topic, process_id, transport }
                } else {
                    Request::RegisterSubscriber { topic, process_id, transport }
                }
            }
            OP_PUBLISH_ENTRY => Request::PublishEntry {
                publisher_id: r.id()?,
                address: r.u64()?,
            },
            OP_INCR_REF => Request::IncrRef {
                subscriber_id: r.id()?,
                entry: r.entry()?,
            },
            OP_DECR_REF => Request::DecrRef {
                subscriber_id: r.id()?,
                entry: r.entry()?,
            },
            OP_BASELINE_PUBLISH => Request::BaselinePublish {
                origin_id: r.id()?,
                payload: r.bytes()?.to_vec(),
            },
            other => return Err(DecodeError::UnknownOpcode(other)),
        };
        r.finish()?;
        Ok(req)
    }
}

/// Encodes a baseline publish without first building a `Request`, so the
/// payload is copied exactly once into the frame.
pub fn encode_baseline_publish(origin_id: EndpointId, payload: &[u8]) -> Vec<u8> {
    let mut frame = Vec::with_capacity(payload.len() + 17);
    encode_baseline_publish_into(&mut frame, origin_id, |out| out.extend_from_slice(payload));
    frame
}

/// Builds a baseline publish frame in `frame`, reusing its allocation.
/// `payload` appends the payload bytes, letting a serializer write straight
/// into the frame.
pub fn encode_baseline_publish_into(frame: &mut Vec<u8>, origin_id: EndpointId, payload: impl FnOnce(&mut Vec<u8>)) {
    const PAYLOAD_AT: usize = 17;
    frame.clear();
    frame.extend_from_slice(&[0, 0, 0, 0, OP_BASELINE_PUBLISH]);
    frame.extend_from_slice(&origin_id.0.to_le_bytes());
    frame.extend_from_slice(&[0; 4]);
    payload(frame);
    let payload_len = (frame.len() - PAYLOAD_AT) as u32;
    frame[PAYLOAD_AT - 4..PAYLOAD_AT].copy_from_slice(&payload_len.to_le_bytes());
    let len = (frame.len() - 4) as u32;
    frame[0..4].copy_from_slice(&len.to_le_bytes());
}

impl Notice {
    pub fn opcode(&self) -> u8 {
        match self {
            Notice::PublisherRegistered { .. } => OP_REGISTER_PUBLISHER,
            Notice::SubscriberRegistered { .. } => OP_REGISTER_SUBSCRIBER,
            Notice::EntryPublished { .. } => OP_PUBLISH_ENTRY,
            Notice::Reclaim { .. } => OP_RECLAIM_NOTICE,
            Notice::Delivery { .. } => OP_DELIVERY,
            Notice::ArenaAnnounce { .. } => OP_ARENA_ANNOUNCE,
            Notice::BaselineDelivery { .. } => OP_BASELINE_DELIVERY,
            Notice::Error { .. } => OP_ERROR,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            Notice::PublisherRegistered { publisher_id, arena, subscriber_count } => {
                let mut w = FrameWriter::new(OP_REGISTER_PUBLISHER);
                w.u64(publisher_id.0);
                match arena {
                    Some(a) => w.u8(1).arena(a),
                    None => w.u8(0),
                };
                w.u32(*subscriber_count);
                w.finish()
            }
            Notice::SubscriberRegistered { subscriber_id, arenas } => {
                let mut w = FrameWriter::new(OP_REGISTER_SUBSCRIBER);
                w.u64(subscriber_id.0).u32(arenas.len() as u32);
                for a in arenas {
                    w.arena(a);
                }
                w.finish()
            }
            Notice::EntryPublished { entry } | Notice::Reclaim { entry } => {
                let mut w = FrameWriter::new(self.opcode());
                w.u64(entry.publisher.0).u64(entry.entry.0);
                w.finish()
            }
            Notice::Delivery { subscriber_id, entry, arena, address } => {
                let mut w = FrameWriter::new(OP_DELIVERY);
                w.u64(subscriber_id.0)
                    .u64(entry.publisher.0)
                    .u64(entry.entry.0)
                    .text(arena)
                    .u64(*address);
                w.finish()
            }
            Notice::ArenaAnnounce { subscriber_id, arena } => {
                let mut w = FrameWriter::new(OP_ARENA_ANNOUNCE);
                w.u64(subscriber_id.0).arena(arena);
                w.finish()
            }
            Notice::BaselineDelivery { subscriber_id, origin_id, payload } => {
                encode_baseline_delivery(*subscriber_id, *origin_id, payload)
            }
            Notice::Error { code, message } => {
                let mut w = FrameWriter::new(OP_ERROR);
                w.u16(*code as u16).text(message);
                w.finish()
            }
        }
    }

    pub fn decode(opcode: u8, payload: &[u8]) -> Result<Notice, DecodeError> {
        let mut r = PayloadReader::new(payload);
        let notice = match opcode {
            OP_REGISTER_PUBLISHER => {
                let publisher_id = r.id()?;
                let arena = match r.u8()? {
                    0 => None,
                    _ => Some(r.arena()?),
                };
                Notice::PublisherRegistered {
                    publisher_id,
                    arena,
                    subscriber_count: r.u32()?,
                }
            }
            OP_REGISTER_SUBSCRIBER => {
                let subscriber_id = r.id()?;
                let n = r.u32()?;
                let mut arenas = Vec::new();
                for _ in 0..n {
                    arenas.push(r.arena()?);
                }
                Notice::SubscriberRegistered { subscriber_id, arenas }
            }
            OP_PUBLISH_ENTRY => Notice::EntryPublished { entry: r.entry()? },
            OP_RECLAIM_NOTICE => Notice::Reclaim { entry: r.entry()? },
            OP_DELIVERY => Notice::Delivery {
                subscriber_id: r.id()?,
                entry: r.entry()?,
                arena: r.text()?,
                address: r.u64()?,
            },
            OP_ARENA_ANNOUNCE => Notice::ArenaAnnounce {
                subscriber_id: r.id()?,
                arena: r.arena()?,
            },
            OP_BASELINE_DELIVERY => Notice::BaselineDelivery {
                subscriber_id: r.id()?,
                origin_id: r.id()?,
                payload: r.bytes()?.to_vec(),
            },
            OP_ERROR => Notice::Error {
                code: ErrorCode::from_u16(r.u16()?),
                message: r.text()?,
            },
            other => return Err(DecodeError::UnknownOpcode(other)),
        };
        r.finish()?;
        Ok(notice)
    }
}

pub fn encode_baseline_delivery(subscriber_id: EndpointId, origin_id: EndpointId, payload: &[u8]) -> Vec<u8> {
    let mut w = FrameWriter::with_capacity(OP_BASELINE_DELIVERY, payload.len() + 20);
    w.u64(subscriber_id.0).u64(origin_id.0).bytes(payload);
    w.finish()
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream at a frame
/// boundary; a stream that ends inside a frame is an `UnexpectedEof` error and
/// the partial frame is discarded.
pub fn read_frame<R: Read>(reader: &mut R) -> io::Result<Option<(u8, Vec<u8>)>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match reader.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_le_bytes(len) as usize;
    if len == 0 || len > MAX_FRAME_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, DecodeError::BadLength(len)));
    }
    let mut opcode = [0u8; 1];
    reader.read_exact(&mut opcode)?;
    let mut payload = vec![0u8; len - 1];
    reader.read_exact(&mut payload)?;
    Ok(Some((opcode[0], payload)))
}

pub fn write_frame<W: Write>(writer: &mut W, frame: &[u8]) -> io::Result<()> {
    writer.write_all(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn split(frame: &[u8]) -> (u8, &[u8]) {
        let len = u32::from_le_bytes(frame[0..4].try_into().unwrap()) as usize;
        assert_eq!(len, frame.len() - 4);
        (frame[4], &frame[5..])
    }

    #[test]
    fn publish_entry_layout() {
        let frame = Request::PublishEntry {
            publisher_id: EndpointId(7),
            address: 0x2000_0000_0050,
        }
        .encode();
        let mut expected = vec![17, 0, 0, 0, 0x03];
        expected.extend_from_slice(&7u64.to_le_bytes());
        expected.extend_from_slice(&0x2000_0000_0050u64.to_le_bytes());
        assert_eq!(frame, expected);
    }

    #[test]
    fn register_layout_uses_short_text() {
        let frame = Request::RegisterSubscriber {
            topic: "pc".into(),
            process_id: 42,
            transport: Transport::Baseline,
        }
        .encode();
        assert_eq!(frame, vec![10, 0, 0, 0, 0x02, 2, 0, b'p', b'c', 42, 0, 0, 0, 1]);
    }

    #[test]
    fn decode_rejects_trailing_and_truncated() {
        let frame = Request::PublishEntry {
            publisher_id: EndpointId(1),
            address: 2,
        }
        .encode();
        let (op, payload) = split(&frame);
        assert_eq!(Request::decode(op, &payload[..15]), Err(DecodeError::Truncated));
        let mut long = payload.to_vec();
        long.push(0);
        assert_eq!(Request::decode(op, &long), Err(DecodeError::Trailing(1)));
        assert_eq!(Request::decode(0x55, payload), Err(DecodeError::UnknownOpcode(0x55)));
    }

    #[test]
    fn read_frame_distinguishes_clean_and_partial_eof() {
        let frame = Request::PublishEntry {
            publisher_id: EndpointId(1),
            address: 2,
        }
        .encode();
        let mut clean: &[u8] = &[];
        assert!(read_frame(&mut clean).unwrap().is_none());
        for cut in 1..frame.len() {
            let mut partial = &frame[..cut];
            let err = read_frame(&mut partial).unwrap_err();
            assert_eq!(err.kind(), io::ErrorKind::UnexpectedEof, "cut at {cut}");
        }
        let mut whole = &frame[..];
        let (op, payload) = read_frame(&mut whole).unwrap().unwrap();
        assert_eq!(op, OP_PUBLISH_ENTRY);
        assert_eq!(payload.len(), 16);
    }

    #[test]
    fn oversized_length_is_refused_without_allocation() {
        let mut bogus: &[u8] = &[0xff, 0xff, 0xff, 0x7f, 0x01];
        let err = read_frame(&mut bogus).unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::InvalidData);
    }

    fn arb_text() -> impl Strategy<Value = String> {
        "[a-z0-9_./]{0,24}"
    }

    fn arb_arena() -> impl Strategy<Value = ArenaInfo> {
        (arb_text(), any::<u64>(), any::<u64>(), any::<u32>()).prop_map(|(name, base, capacity, owner_process)| ArenaInfo {
            name,
            base,
            capacity,
            owner_process,
        })
    }

    fn arb_entry() -> impl Strategy<Value = EntryRef> {
        (any::<u64>(), any::<u64>()).prop_map(|(p, e)| EntryRef {
            publisher: EndpointId(p),
            entry: EntryId(e),
        })
    }

    fn arb_request() -> impl Strategy<Value = Request> {
        let transport = prop_oneof![Just(Transport::ZeroCopy), Just(Transport::Baseline)];
        prop_oneof![
            (arb_text(), any::<u32>(), transport.clone()).prop_map(|(topic, process_id, transport)| {
                Request::RegisterPublisher { topic, process_id, transport }
            }),
            (arb_text(), any::<u32>(), transport).prop_map(|(topic, process_id, transport)| {
                Request::RegisterSubscriber { topic, process_id, transport }
            }),
            (any::<u64>(), any::<u64>()).prop_map(|(p, address)| Request::PublishEntry {
                publisher_id: EndpointId(p),
                address
            }),
            (any::<u64>(), arb_entry()).prop_map(|(s, entry)| Request::IncrRef {
                subscriber_id: EndpointId(s),
                entry
            }),
            (any::<u64>(), arb_entry()).prop_map(|(s, entry)| Request::DecrRef {
                subscriber_id: EndpointId(s),
                entry
            }),
            (any::<u64>(), proptest::collection::vec(any::<u8>(), 0..256)).prop_map(|(o, payload)| {
                Request::BaselinePublish {
                    origin_id: EndpointId(o),
                    payload,
                }
            }),
        ]
    }

    fn arb_notice() -> impl Strategy<Value = Notice> {
        prop_oneof![
            (any::<u64>(), proptest::option::of(arb_arena()), any::<u32>()).prop_map(|(p, arena, subscriber_count)| {
                Notice::PublisherRegistered {
                    publisher_id: EndpointId(p),
                    arena,
                    subscriber_count,
                }
            }),
            (any::<u64>(), proptest::collection::vec(arb_arena(), 0..4)).prop_map(|(s, arenas)| {
                Notice::SubscriberRegistered {
                    subscriber_id: EndpointId(s),
                    arenas,
                }
            }),
            arb_entry().prop_map(|entry| Notice::EntryPublished { entry }),
            arb_entry().prop_map(|entry| Notice::Reclaim { entry }),
            (any::<u64>(), arb_entry(), arb_text(), any::<u64>()).prop_map(|(s, entry, arena, address)| {
                Notice::Delivery {
                    subscriber_id: EndpointId(s),
                    entry,
                    arena,
                    address,
                }
            }),
            (any::<u64>(), arb_arena()).prop_map(|(s, arena)| Notice::ArenaAnnounce {
                subscriber_id: EndpointId(s),
                arena
            }),
            (any::<u64>(), any::<u64>(), proptest::collection::vec(any::<u8>(), 0..256)).prop_map(
                |(s, o, payload)| Notice::BaselineDelivery {
                    subscriber_id: EndpointId(s),
                    origin_id: EndpointId(o),
                    payload,
                }
            ),
            (any::<u16>(), arb_text()).prop_map(|(c, message)| Notice::Error {
                code: ErrorCode::from_u16(c),
                message
            }),
        ]
    }

    proptest! {
        #[test]
        fn requests_round_trip(req in arb_request()) {
            let frame = req.encode();
            let mut cursor = &frame[..];
            let (op, payload) = read_frame(&mut cursor).unwrap().unwrap();
            prop_assert_eq!(Request::decode(op, &payload).unwrap(), req);
        }

        #[test]
        fn notices_round_trip(notice in arb_notice()) {
            let frame = notice.encode();
            let mut cursor = &frame[..];
            let (op, payload) = read_frame(&mut cursor).unwrap().unwrap();
            let decoded = Notice::decode(op, &payload).unwrap();
            // Unknown error codes collapse to `Other`; compare re-encodings.
            prop_assert_eq!(decoded.encode().len(), frame.len());
            if !matches!(notice, Notice::Error { .. }) {
                prop_assert_eq!(decoded, notice);
            }
        }
    }
}
