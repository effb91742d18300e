//! Framed envelope batches for sync transport.
//!
//! All integers are big-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "RSYN"
//! 4       2     version (1)
//! 6       2     sender id length S
//! 8       S     sender replica id, UTF-8
//! 8+S     2     receiver id length R
//! 10+S    R     receiver replica id, UTF-8
//! 10+S+R  4     entry count N
//! then N entries:
//!         4     entry length L (flags byte + envelope bytes)
//!         1     flags; bit 0 = sender knows CENTRAL holds the record
//!         L-1   canonical SignedEnvelope
//! ```
//!
//! Trailing bytes after the last entry are an error.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::SignedEnvelope;

pub const BATCH_MAGIC: &[u8; 4] = b"RSYN";
pub const BATCH_VERSION: u16 = 1;
const FLAG_DURABLE: u8 = 0b0000_0001;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub durable: bool,
    pub envelope: SignedEnvelope,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncBatch {
    pub sender: String,
    pub receiver: String,
    pub entries: Vec<BatchEntry>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BatchError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported batch version {0}")]
    Version(u16),
    #[error("truncated batch at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("field too long: {0}")]
    TooLong(&'static str),
    #[error("invalid replica id: {0}")]
    BadId(String),
    #[error("entry {index}: {reason}")]
    BadEntry { index: usize, reason: String },
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], BatchError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(BatchError::Truncated(self.pos))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, BatchError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, BatchError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn id(&mut self) -> Result<String, BatchError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| BatchError::BadId(e.to_string()))
    }
}

impl SyncBatch {
    pub fn encode(&self) -> Result<Vec<u8>, BatchError> {
        let mut out = Vec::new();
        out.extend_from_slice(BATCH_MAGIC);
        out.extend_from_slice(&BATCH_VERSION.to_be_bytes());
        for id in [&self.sender, &self.receiver] {
            let n = u16::try_from(id.len()).map_err(|_| BatchError::TooLong("replica id"))?;
            out.extend_from_slice(&n.to_be_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        let count = u32::try_from(self.entries.len()).map_err(|_| BatchError::TooLong("entry count"))?;
        out.extend_from_slice(&count.to_be_bytes());
        for e in &self.entries {
            let line = e.envelope.to_line();
            let len = u32::try_from(line.len() + 1).map_err(|_| BatchError::TooLong("envelope"))?;
            out.extend_from_slice(&len.to_be_bytes());
            out.push(if e.durable { FLAG_DURABLE } else { 0 });
            out.extend_from_slice(&line);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, BatchError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != BATCH_MAGIC {
            return Err(BatchError::BadMagic);
        }
        let version = r.u16()?;
        if version != BATCH_VERSION {
            return Err(BatchError::Version(version));
        }
        let sender = r.id()?;
        let receiver = r.id()?;
        let count = r.u32()? as usize;
        // each entry takes at least 5 bytes; bound the allocation
        let mut entries = Vec::with_capacity(count.min(bytes.len() / 5));
        for index in 0..count {
            let len = r.u32()? as usize;
            if len == 0 {
                return Err(BatchError::BadEntry { index, reason: "empty entry".into() });
            }
            let body = r.take(len)?;
            let flags = body[0];
            if flags & !FLAG_DURABLE != 0 {
                return Err(BatchError::BadEntry { index, reason: format!("unknown flags {flags:#04x}") });
            }
            let envelope = SignedEnvelope::from_line(&body[1..])
                .map_err(|e| BatchError::BadEntry { index, reason: e.to_string() })?;
            entries.push(BatchEntry { durable: flags & FLAG_DURABLE != 0, envelope });
        }
        if r.pos != bytes.len() {
            return Err(BatchError::Trailing(bytes.len() - r.pos));
        }
        Ok(Self { sender, receiver, entries })
    }
}
