//! Frame codec shared by the simulator and the socket transport.
//!
//! ```text
//! offset  size  field
//! 0       2     magic 0x5347, little-endian (bytes 47 53)
//! 2       1     version = 1
//! 3       1     msg_type: 0x01 TENSOR_T, 0x02 BRANCH_SET
//! 4       4     frame_id, little-endian
//! 8       ..    payload
//! end-4   4     CRC-32 (IEEE) of every preceding byte, little-endian
//! ```
//!
//! A TENSOR_T payload is one canonical tensor. A BRANCH_SET payload is a
//! `u8` count followed by that many canonical tensors in branch order.

use thiserror::Error;

use crate::qtensor::{read_canonical, write_canonical, QuantTensor, TensorError};

pub const MAGIC: u16 = 0x5347;
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 8;
pub const TRAILER_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    TensorT = 0x01,
    BranchSet = 0x02,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Tensor(QuantTensor),
    BranchSet(Vec<QuantTensor>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMessage {
    pub frame_id: u32,
    pub payload: Payload,
}

impl FrameMessage {
    pub fn tensor(frame_id: u32, t: QuantTensor) -> Self {
        Self {
            frame_id,
            payload: Payload::Tensor(t),
        }
    }

    pub fn branch_set(frame_id: u32, branches: Vec<QuantTensor>) -> Self {
        Self {
            frame_id,
            payload: Payload::BranchSet(branches),
        }
    }

    pub fn msg_type(&self) -> MsgType {
        match self.payload {
            Payload::Tensor(_) => MsgType::TensorT,
            Payload::BranchSet(_) => MsgType::BranchSet,
        }
    }

    /// Exact encoded length without encoding.
    pub fn encoded_len(&self) -> usize {
        let payload = match &self.payload {
            Payload::Tensor(t) => t.encoded_len(),
            Payload::BranchSet(v) => 1 + v.iter().map(QuantTensor::encoded_len).sum::<usize>(),
        };
        HEADER_LEN + payload + TRAILER_LEN
    }
}

/// Decoding and encoding failures. Every decode failure is channel noise,
/// never evidence of tampering.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("frame truncated: {len} bytes")]
    Truncated { len: usize },
    #[error("crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("bad magic {0:#06x}")]
    BadMagic(u16),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0:#04x}")]
    BadMsgType(u8),
    #[error("malformed payload: {0}")]
    Payload(#[from] TensorError),
    #[error("branch set of {0} tensors exceeds 255")]
    TooManyBranches(usize),
    #[error("{0} bytes after payload")]
    TrailingBytes(usize),
}

pub fn encode_frame(m: &FrameMessage) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(m.encoded_len());
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.push(VERSION);
    out.push(m.msg_type() as u8);
    out.extend_from_slice(&m.frame_id.to_le_bytes());
    match &m.payload {
        Payload::Tensor(t) => write_canonical(t, &mut out)?,
        Payload::BranchSet(v) => {
            let count = u8::try_from(v.len()).map_err(|_| WireError::TooManyBranches(v.len()))?;
            out.push(count);
            for t in v {
                write_canonical(t, &mut out)?;
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_frame(bytes: &[u8]) -> Result<FrameMessage, WireError> {
    if bytes.len() < HEADER_LEN + TRAILER_LEN {
        return Err(WireError::Truncated { len: bytes.len() });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - TRAILER_LEN);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(WireError::CrcMismatch { stored, computed });
    }
    let magic = u16::from_le_bytes([body[0], body[1]]);
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if body[2] != VERSION {
        return Err(WireError::BadVersion(body[2]));
    }
    let frame_id = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
    let mut rest = &body[HEADER_LEN..];
    let payload = match body[3] {
        0x01 => {
            let (t, used) = read_canonical(rest)?;
            rest = &rest[used..];
            Payload::Tensor(t)
        }
        0x02 => {
            let (&count, tail) = rest
                .split_first()
                .ok_or(WireError::Truncated { len: bytes.len() })?;
            rest = tail;
            let mut v = Vec::with_capacity(usize::from(count));
            for _ in 0..count {
                let (t, used) = read_canonical(rest)?;
                rest = &rest[used..];
                v.push(t);
            }
            Payload::BranchSet(v)
        }
        other => return Err(WireError::BadMsgType(other)),
    };
    if !rest.is_empty() {
        return Err(WireError::TrailingBytes(rest.len()));
    }
    Ok(FrameMessage { frame_id, payload })
}
