//! Framing on mesh connections.
//!
//! ```text
//! "LPF\x01"  u8 kind  u32 tag  u64 len  len bytes
//! ```
//!
//! The tag is the hook epoch, so frames never leak from one hook into the next.

use std::io::{self, Read, Write};

pub const FRAME_MAGIC: [u8; 4] = *b"LPF\x01";
pub const HEADER_LEN: usize = 4 + 1 + 4 + 8;
/// Frames longer than this are rejected as corrupt.
pub const MAX_FRAME_LEN: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Data,
    /// The sender has left the current hook.
    Depart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub kind: FrameKind,
    pub tag: u32,
    pub len: u64,
}

pub fn encode_header(h: &FrameHeader) -> [u8; HEADER_LEN] {
    let mut out = [0u8; HEADER_LEN];
    out[..4].copy_from_slice(&FRAME_MAGIC);
    out[4] = match h.kind {
        FrameKind::Data => 0,
        FrameKind::Depart => 1,
    };
    out[5..9].copy_from_slice(&h.tag.to_le_bytes());
    out[9..].copy_from_slice(&h.len.to_le_bytes());
    out
}

pub fn decode_header(buf: &[u8]) -> io::Result<FrameHeader> {
    let invalid = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_owned());
    if buf.len() != HEADER_LEN {
        return Err(invalid("frame header has the wrong length"));
    }
    if buf[..4] != FRAME_MAGIC {
        return Err(invalid("bad frame magic"));
    }
    let kind = match buf[4] {
        0 => FrameKind::Data,
        1 => FrameKind::Depart,
        _ => return Err(invalid("unknown frame kind")),
    };
    let tag = u32::from_le_bytes(buf[5..9].try_into().unwrap());
    let len = u64::from_le_bytes(buf[9..].try_into().unwrap());
    if len > MAX_FRAME_LEN {
        return Err(invalid("frame too long"));
    }
    Ok(FrameHeader { kind, tag, len })
}

pub fn write_frame(w: &mut impl Write, kind: FrameKind, tag: u32, payload: &[u8]) -> io::Result<()> {
    let header = encode_header(&FrameHeader {
        kind,
        tag,
        len: payload.len() as u64,
    });
    w.write_all(&header)?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads the next frame; `Ok(None)` on a clean end of stream between frames.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<(FrameHeader, Vec<u8>)>> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let h = decode_header(&header)?;
    let len = usize::try_from(h.len).map_err(|_| io::Error::from(io::ErrorKind::OutOfMemory))?;
    let mut payload = Vec::new();
    payload
        .try_reserve_exact(len)
        .map_err(|_| io::Error::from(io::ErrorKind::OutOfMemory))?;
    payload.resize(len, 0);
    r.read_exact(&mut payload)?;
    Ok(Some((h, payload)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_round_trip_in_order() {
        let mut buf = Vec::new();
        write_frame(&mut buf, FrameKind::Data, 7, b"abc").unwrap();
        write_frame(&mut buf, FrameKind::Depart, 7, b"").unwrap();
        let mut r: &[u8] = &buf;
        let (h, p) = read_frame(&mut r).unwrap().unwrap();
        assert_eq!((h.kind, h.tag, p.as_slice()), (FrameKind::Data, 7, &b"abc"[..]));
        let (h, p) = read_frame(&mut r).unwrap().unwrap();
        assert_eq!((h.kind, p.len()), (FrameKind::Depart, 0));
        assert!(read_frame(&mut r).unwrap().is_none());
    }

    #[test]
    fn corrupt_headers_are_rejected() {
        let mut h = encode_header(&FrameHeader {
            kind: FrameKind::Data,
            tag: 1,
            len: 4,
        });
        assert!(decode_header(&h).is_ok());
        h[4] = 5;
        assert!(decode_header(&h).is_err());
        let huge = encode_header(&FrameHeader {
            kind: FrameKind::Data,
            tag: 1,
            len: MAX_FRAME_LEN + 1,
        });
        assert!(decode_header(&huge).is_err());
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let mut buf = Vec::new();
        write_frame(&mut buf, FrameKind::Data, 0, b"abcdef").unwrap();
        let mut r: &[u8] = &buf[..buf.len() - 2];
        assert!(read_frame(&mut r).is_err());
        let mut r: &[u8] = &buf[..5];
        assert!(read_frame(&mut r).is_err());
    }
}
