//! Wire formats of the superstep phases.
//!
//! All integers are little-endian. Each phase frame starts with a 4-byte
//! magic whose last byte is the format version.
//!
//! ```text
//! meta block  "LPM\x01" u64 global_registrations  u32 count  count × record
//! record      u32 initiator  u8 kind  (u32 slot, u64 offset) src  (u32 slot, u64 offset) dst
//!             u64 size  u32 attr
//! pull list   "LPQ\x01" u32 count  count × (u32 slot, u64 offset, u64 len)
//! data frame  "LPD\x01" u8 status  bytes
//! ```
//!
//! A record's queue position is its index within the block, which preserves
//! the initiator's queue order among requests sent to the same process.

use crate::error::{Error, Result};
use crate::types::{MsgAttr, Pid, Slot};

pub const META_MAGIC: [u8; 4] = *b"LPM\x01";
pub const PULL_MAGIC: [u8; 4] = *b"LPQ\x01";
pub const DATA_MAGIC: [u8; 4] = *b"LPD\x01";

pub const RECORD_LEN: usize = 4 + 1 + 12 + 12 + 8 + 4;
const META_HEADER: usize = 4 + 8 + 4;
const PULL_ENTRY_LEN: usize = 4 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Put,
    Get,
}

/// A (slot, byte offset) pair on some process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Loc {
    pub slot: Slot,
    pub offset: u64,
}

/// One queued request as seen by the remote party. `src` is where the data
/// is read and `dst` where it is written, independent of `kind`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MetaRecord {
    pub initiator: Pid,
    pub kind: Kind,
    pub src: Loc,
    pub dst: Loc,
    pub size: u64,
    pub attr: MsgAttr,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MetaBlock {
    /// Sender's count of global registrations, compared in debug mode.
    pub global_registrations: u64,
    pub records: Vec<MetaRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PullEntry {
    pub slot: Slot,
    pub offset: u64,
    pub len: u64,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    fn err(&self) -> Error {
        Error::protocol(format!("malformed {} at byte {}", self.what, self.pos))
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.buf.len() => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(self.err()),
        }
    }

    fn magic(&mut self, magic: [u8; 4]) -> Result<()> {
        if self.bytes(4)? != magic {
            return Err(self.err());
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err());
        }
        Ok(())
    }
}

impl MetaRecord {
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.initiator.to_le_bytes());
        out.push(match self.kind {
            Kind::Put => 0,
            Kind::Get => 1,
        });
        for loc in [self.src, self.dst] {
            out.extend_from_slice(&loc.slot.to_raw().to_le_bytes());
            out.extend_from_slice(&loc.offset.to_le_bytes());
        }
        out.extend_from_slice(&self.size.to_le_bytes());
        out.extend_from_slice(&self.attr.to_raw().to_le_bytes());
    }

    pub fn decode(buf: &[u8]) -> Result<MetaRecord> {
        let mut r = Reader::new(buf, "meta record");
        let rec = Self::read(&mut r)?;
        r.finish()?;
        Ok(rec)
    }

    fn read(r: &mut Reader<'_>) -> Result<MetaRecord> {
        let initiator = r.u32()?;
        let kind = match r.u8()? {
            0 => Kind::Put,
            1 => Kind::Get,
            _ => return Err(r.err()),
        };
        let mut loc = || -> Result<Loc> {
            Ok(Loc {
                slot: Slot::from_raw(r.u32()?),
                offset: r.u64()?,
            })
        };
        let src = loc()?;
        let dst = loc()?;
        let size = r.u64()?;
        let attr = MsgAttr::from_raw(r.u32()?);
        Ok(MetaRecord {
            initiator,
            kind,
            src,
            dst,
            size,
            attr,
        })
    }
}

impl MetaBlock {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(META_HEADER + RECORD_LEN * self.records.len());
        out.extend_from_slice(&META_MAGIC);
        out.extend_from_slice(&self.global_registrations.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for rec in &self.records {
            rec.encode_into(&mut out);
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<MetaBlock> {
        let mut r = Reader::new(buf, "meta block");
        r.magic(META_MAGIC)?;
        let global_registrations = r.u64()?;
        let count = r.u32()? as usize;
        if buf.len() - r.pos != count.saturating_mul(RECORD_LEN) {
            return Err(r.err());
        }
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            records.push(MetaRecord::read(&mut r)?);
        }
        r.finish()?;
        Ok(MetaBlock {
            global_registrations,
            records,
        })
    }
}

pub fn encode_pull_list(entries: &[PullEntry]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + PULL_ENTRY_LEN * entries.len());
    out.extend_from_slice(&PULL_MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&e.slot.to_raw().to_le_bytes());
        out.extend_from_slice(&e.offset.to_le_bytes());
        out.extend_from_slice(&e.len.to_le_bytes());
    }
    out
}

pub fn decode_pull_list(buf: &[u8]) -> Result<Vec<PullEntry>> {
    let mut r = Reader::new(buf, "pull list");
    r.magic(PULL_MAGIC)?;
    let count = r.u32()? as usize;
    if buf.len() - r.pos != count.saturating_mul(PULL_ENTRY_LEN) {
        return Err(r.err());
    }
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        entries.push(PullEntry {
            slot: Slot::from_raw(r.u32()?),
            offset: r.u64()?,
            len: r.u64()?,
        });
    }
    r.finish()?;
    Ok(entries)
}

pub const STATUS_OK: u8 = 0;
pub const STATUS_FAILED: u8 = 1;

pub fn data_frame_header(status: u8, payload_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + payload_len);
    out.extend_from_slice(&DATA_MAGIC);
    out.push(status);
    out
}

/// Returns the status byte and the payload.
pub fn decode_data_frame(buf: &[u8]) -> Result<(u8, &[u8])> {
    let mut r = Reader::new(buf, "data frame");
    r.magic(DATA_MAGIC)?;
    let status = r.u8()?;
    if status > STATUS_FAILED {
        return Err(r.err());
    }
    Ok((status, r.rest()))
}
