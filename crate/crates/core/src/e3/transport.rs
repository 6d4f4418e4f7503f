//! E3 frames over any byte stream. Framing is identical to the in-process
//! path: a reader pulls the 24-byte header, learns `payload_len`, then pulls
//! exactly that many payload bytes.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::wire::{decode, encode, frame_len, DecodeError, E3Message, EncodeError, HEADER_LEN, MAGIC};

/// Upper bound on a single frame accepted from a byte stream.
pub const MAX_FRAME_LEN: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("frame of {0} bytes exceeds the transport limit")]
    FrameTooLarge(usize),
}

pub fn write_frame<W: Write>(w: &mut W, msg: &E3Message) -> Result<(), TransportError> {
    w.write_all(&encode(msg)?)?;
    Ok(())
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream before any
/// header byte.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<E3Message>, TransportError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => {
                return Err(DecodeError::Truncated {
                    offset: got,
                    expected: HEADER_LEN,
                    actual: got,
                }
                .into())
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    if let Some(i) = (0..4).find(|&i| header[i] != MAGIC[i]) {
        return Err(DecodeError::BadMagic { offset: i }.into());
    }
    let total = frame_len(&header).expect("full header read");
    if total > MAX_FRAME_LEN {
        return Err(TransportError::FrameTooLarge(total));
    }
    let mut frame = vec![0u8; total];
    frame[..HEADER_LEN].copy_from_slice(&header);
    let mut filled = HEADER_LEN;
    while filled < total {
        match r.read(&mut frame[filled..]) {
            Ok(0) => {
                return Err(DecodeError::Truncated {
                    offset: HEADER_LEN,
                    expected: total - HEADER_LEN,
                    actual: filled - HEADER_LEN,
                }
                .into())
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Some(decode(&frame)?))
}
