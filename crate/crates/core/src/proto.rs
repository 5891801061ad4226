//! Wire protocol between edge agents and the cloud coordinator.
//!
//! Binary length-prefixed framing over a reliable byte stream. Every
//! frame is:
//!
//! ```text
//! +----------+-------------------+------------------+
//! | "ESY1"   | payload length    | payload          |
//! | 4 bytes  | u32 little-endian | `length` bytes   |
//! +----------+-------------------+------------------+
//! ```
//!
//! The protocol version is folded into the magic; breaking changes bump
//! it. Payloads start with a one-byte variant tag, then fields in fixed
//! order. Integers are little-endian; floats are IEEE-754 binary64
//! little-endian, so model parameters cross the wire losslessly; strings
//! and vectors are a u32 count followed by their elements.
//!
//! | tag | message      | fields after the tag                                            |
//! |-----|--------------|-----------------------------------------------------------------|
//! | 0   | SampleBatch  | edge_id, window_id u64, count u32, then per sample:             |
//! |     |              | seq u64, timestamp f64, features vec, probs vec, predicted u32 |
//! | 1   | ModelUpdate  | edge_id, version u64, trainable_values vec                      |
//! | 2   | UpdateAck    | edge_id, version u64                                            |
//! | 3   | Register     | edge_id, feature_dim u32, class_count u32, frozen_checksum u64 |
//!
//! Worked example — `UpdateAck { edge_id: "e1", version: 3 }`:
//!
//! ```text
//! 45 53 59 31  0f 00 00 00  02  02 00 00 00  65 31  03 00 00 00 00 00 00 00
//! "E  S  Y  1" len=15       tag edge len=2   "e1"   version=3
//! ```
//!
//! Encoding is canonical (one byte sequence per message), which makes it
//! injective on valid messages and deterministic for byte-level
//! reproducibility checks.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::EdgeId;

pub const MAGIC: [u8; 4] = *b"ESY1";
pub const MAX_PAYLOAD: usize = 64 * 1024 * 1024;
const HEADER_LEN: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum ProtoError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("frame or payload truncated")]
    Truncated,
    #[error("unknown message variant tag {0}")]
    UnknownVariant(u8),
    #[error("trailing bytes after message")]
    TrailingBytes,
    #[error("payload of {0} bytes exceeds the 64 MiB cap")]
    OversizePayload(usize),
    #[error("sample batch must contain at least one sample")]
    EmptyBatch,
    #[error("edge id is not valid UTF-8")]
    BadString,
    #[error("non-finite float on the wire")]
    NonFiniteFloat,
}

/// One uploaded sample as it crosses the wire. Ground truth never does;
/// the cloud reconstructs it from its own copy of the workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSample {
    pub seq: u64,
    pub timestamp: f64,
    pub features: Vec<f64>,
    pub probs: Vec<f64>,
    pub predicted: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Message {
    /// Filtered top-k upload for one window.
    SampleBatch {
        edge_id: EdgeId,
        window_id: u64,
        samples: Vec<WireSample>,
    },
    /// Cloud-to-edge dispatch of the full trainable partition. The
    /// version must be exactly one above the edge's current version.
    ModelUpdate {
        edge_id: EdgeId,
        version: u64,
        trainable_values: Vec<f64>,
    },
    UpdateAck {
        edge_id: EdgeId,
        version: u64,
    },
    /// Connection handshake; the checksum must match the coordinator's
    /// frozen partition.
    Register {
        edge_id: EdgeId,
        feature_dim: u32,
        class_count: u32,
        frozen_checksum: u64,
    },
}

impl Message {
    /// Validating constructor: an empty batch is rejected here and never
    /// reaches the encoder.
    pub fn sample_batch(
        edge_id: EdgeId,
        window_id: u64,
        samples: Vec<WireSample>,
    ) -> Result<Message, ProtoError> {
        if samples.is_empty() {
            return Err(ProtoError::EmptyBatch);
        }
        Ok(Message::SampleBatch {
            edge_id,
            window_id,
            samples,
        })
    }

    pub fn edge_id(&self) -> &EdgeId {
        match self {
            Message::SampleBatch { edge_id, .. }
            | Message::ModelUpdate { edge_id, .. }
            | Message::UpdateAck { edge_id, .. }
            | Message::Register { edge_id, .. } => edge_id,
        }
    }
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_string(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_f64_vec(out: &mut Vec<u8>, v: &[f64]) {
    put_u32(out, v.len() as u32);
    for &x in v {
        put_f64(out, x);
    }
}

/// Serializes a message into one complete frame (magic, length, payload).
pub fn encode(msg: &Message) -> Result<Vec<u8>, ProtoError> {
    let mut payload = Vec::new();
    match msg {
        Message::SampleBatch {
            edge_id,
            window_id,
            samples,
        } => {
            if samples.is_empty() {
                return Err(ProtoError::EmptyBatch);
            }
            payload.push(0);
            put_string(&mut payload, edge_id.as_str());
            put_u64(&mut payload, *window_id);
            put_u32(&mut payload, samples.len() as u32);
            for s in samples {
                put_u64(&mut payload, s.seq);
                put_f64(&mut payload, s.timestamp);
                put_f64_vec(&mut payload, &s.features);
                put_f64_vec(&mut payload, &s.probs);
                put_u32(&mut payload, s.predicted);
            }
        }
        Message::ModelUpdate {
            edge_id,
            version,
            trainable_values,
        } => {
            payload.push(1);
            put_string(&mut payload, edge_id.as_str());
            put_u64(&mut payload, *version);
            put_f64_vec(&mut payload, trainable_values);
        }
        Message::UpdateAck { edge_id, version } => {
            payload.push(2);
            put_string(&mut payload, edge_id.as_str());
            put_u64(&mut payload, *version);
        }
        Message::Register {
            edge_id,
            feature_dim,
            class_count,
            frozen_checksum,
        } => {
            payload.push(3);
            put_string(&mut payload, edge_id.as_str());
            put_u32(&mut payload, *feature_dim);
            put_u32(&mut payload, *class_count);
            put_u64(&mut payload, *frozen_checksum);
        }
    }
    if payload.len() > MAX_PAYLOAD {
        return Err(ProtoError::OversizePayload(payload.len()));
    }
    let mut frame = Vec::with_capacity(HEADER_LEN + payload.len());
    frame.extend_from_slice(&MAGIC);
    put_u32(&mut frame, payload.len() as u32);
    frame.extend_from_slice(&payload);
    Ok(frame)
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtoError> {
        if self.pos + n > self.buf.len() {
            return Err(ProtoError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ProtoError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ProtoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ProtoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ProtoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, ProtoError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| ProtoError::BadString)
    }

    fn f64_vec(&mut self) -> Result<Vec<f64>, ProtoError> {
        let len = self.u32()? as usize;
        // A length claim beyond the remaining bytes is a truncation.
        if len > (self.buf.len() - self.pos) / 8 {
            return Err(ProtoError::Truncated);
        }
        let mut v = Vec::with_capacity(len);
        for _ in 0..len {
            v.push(self.f64()?);
        }
        Ok(v)
    }
}

/// Parses one complete frame. Rejects bad magic, truncation, unknown
/// variant tags, and trailing bytes with distinguishable errors.
pub fn decode(bytes: &[u8]) -> Result<Message, ProtoError> {
    if bytes.len() < HEADER_LEN {
        return Err(ProtoError::Truncated);
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(ProtoError::BadMagic(magic));
    }
    let declared = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if declared > MAX_PAYLOAD {
        return Err(ProtoError::OversizePayload(declared));
    }
    if bytes.len() < HEADER_LEN + declared {
        return Err(ProtoError::Truncated);
    }
    if bytes.len() > HEADER_LEN + declared {
        return Err(ProtoError::TrailingBytes);
    }
    let payload = &bytes[HEADER_LEN..];
    let mut c = Cursor {
        buf: payload,
        pos: 0,
    };
    let msg = match c.u8()? {
        0 => {
            let edge_id = EdgeId::new(c.string()?);
            let window_id = c.u64()?;
            let count = c.u32()? as usize;
            if count == 0 {
                return Err(ProtoError::EmptyBatch);
            }
            let mut samples = Vec::with_capacity(count.min(payload.len()));
            for _ in 0..count {
                samples.push(WireSample {
                    seq: c.u64()?,
                    timestamp: c.f64()?,
                    features: c.f64_vec()?,
                    probs: c.f64_vec()?,
                    predicted: c.u32()?,
                });
            }
            Message::SampleBatch {
                edge_id,
                window_id,
                samples,
            }
        }
        1 => Message::ModelUpdate {
            edge_id: EdgeId::new(c.string()?),
            version: c.u64()?,
            trainable_values: c.f64_vec()?,
        },
        2 => Message::UpdateAck {
            edge_id: EdgeId::new(c.string()?),
            version: c.u64()?,
        },
        3 => Message::Register {
            edge_id: EdgeId::new(c.string()?),
            feature_dim: c.u32()?,
            class_count: c.u32()?,
            frozen_checksum: c.u64()?,
        },
        tag => return Err(ProtoError::UnknownVariant(tag)),
    };
    if c.pos != payload.len() {
        return Err(ProtoError::TrailingBytes);
    }
    Ok(msg)
}

// ---------------------------------------------------------------------------
// Stream framing
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum FrameIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Proto(#[from] ProtoError),
}

/// Reads exactly one frame from a reliable byte stream.
pub fn read_message<R: Read>(r: &mut R) -> Result<Message, FrameIoError> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    let magic: [u8; 4] = header[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(ProtoError::BadMagic(magic).into());
    }
    let len = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(ProtoError::OversizePayload(len).into());
    }
    let mut frame = header.to_vec();
    frame.resize(HEADER_LEN + len, 0);
    r.read_exact(&mut frame[HEADER_LEN..])?;
    Ok(decode(&frame)?)
}

/// Writes one frame to a reliable byte stream.
pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<(), FrameIoError> {
    let frame = encode(msg)?;
    w.write_all(&frame)?;
    Ok(())
}
