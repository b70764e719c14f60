//! Length-prefixed frames over a reliable byte stream, e.g. a TCP socket.
//!
//! Each record is a `u32` little-endian length followed by exactly that
//! many bytes of an encoded [`FrameMessage`](super::FrameMessage).

use std::io::{self, Read, Write};

use thiserror::Error;

use super::wire::{decode_frame, encode_frame, FrameMessage, WireError};

/// Largest accepted record; a full-resolution BRANCH_SET is far below this.
pub const MAX_RECORD: usize = 16 << 20;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("record of {0} bytes exceeds limit")]
    TooLarge(usize),
}

pub fn write_message<W: Write>(w: &mut W, m: &FrameMessage) -> Result<(), TransportError> {
    let bytes = encode_frame(m)?;
    if bytes.len() > MAX_RECORD {
        return Err(TransportError::TooLarge(bytes.len()));
    }
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Reads one record. `Ok(None)` on a clean end of stream.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<FrameMessage>, TransportError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_RECORD {
        return Err(TransportError::TooLarge(len));
    }
    let mut buf = vec![0; len];
    r.read_exact(&mut buf)?;
    Ok(Some(decode_frame(&buf)?))
}
