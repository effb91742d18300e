//! Append-only on-disk storage.
//!
//! Every file here is newline-delimited. A line is durable once `append`
//! returns: the bytes and the newline go out in one write followed by
//! `fsync`. A crash mid-write leaves at most one unterminated tail, which
//! is cut off on the next open. Complete lines are never rewritten.
//!
//! Directory layout:
//!
//! ```text
//! envelopes.log    one canonical SignedEnvelope per line
//! index.snapshot   canonical JSON {log_bytes, entries:[{record_id, offset, len}]}
//! durable.log      record ids confirmed present at CENTRAL
//! quarantine.log   canonical QuarantineEntry per line
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::record::{RecordId, SignedEnvelope};
use super::LedgerError;
use crate::canonical::{from_canonical_slice, to_canonical_vec};

/// Appends between index snapshots.
pub const SNAPSHOT_EVERY: usize = 256;

const ENVELOPES: &str = "envelopes.log";
const INDEX: &str = "index.snapshot";
const DURABLE: &str = "durable.log";
const QUARANTINE: &str = "quarantine.log";

/// A newline-delimited append-only file.
#[derive(Debug)]
pub struct LineFile {
    path: PathBuf,
    file: File,
    len: u64,
}

impl LineFile {
    /// Opens or creates `path`, truncating an unterminated tail. Returns
    /// the complete lines with their byte offsets and the number of bytes
    /// cut.
    pub fn open(path: &Path) -> Result<(Self, Vec<(u64, Vec<u8>)>, u64), LedgerError> {
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut data = Vec::new();
        file.read_to_end(&mut data)?;
        let keep = data.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        let cut = (data.len() - keep) as u64;
        if cut > 0 {
            file.set_len(keep as u64)?;
            file.sync_all()?;
        }
        let mut lines = Vec::new();
        let mut offset = 0u64;
        for line in data[..keep].split_inclusive(|&b| b == b'\n') {
            lines.push((offset, line[..line.len() - 1].to_vec()));
            offset += line.len() as u64;
        }
        Ok((Self { path: path.to_path_buf(), file, len: keep as u64 }, lines, cut))
    }

    /// Appends one line and syncs it. Returns its offset.
    pub fn append(&mut self, line: &[u8]) -> Result<u64, LedgerError> {
        if line.contains(&b'\n') {
            return Err(LedgerError::CorruptLog {
                path: self.path.display().to_string(),
                offset: self.len,
                reason: "line contains a newline".into(),
            });
        }
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line);
        buf.push(b'\n');
        let offset = self.len;
        if let Err(e) = self.file.write_all(&buf).and_then(|_| self.file.sync_data()) {
            // drop whatever part reached the file so the next append starts clean
            let _ = self.file.set_len(offset);
            return Err(e.into());
        }
        self.len += buf.len() as u64;
        Ok(offset)
    }

    pub fn read_at(&self, offset: u64, len: u64) -> Result<Vec<u8>, LedgerError> {
        let mut f = File::open(&self.path)?;
        f.seek(SeekFrom::Start(offset))?;
        let mut buf = vec![0u8; len as usize];
        f.read_exact(&mut buf)?;
        Ok(buf)
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct IndexEntry {
    record_id: RecordId,
    offset: u64,
    len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct IndexSnapshot {
    log_bytes: u64,
    entries: Vec<IndexEntry>,
}

/// The envelope log and its record-id index.
#[derive(Debug)]
pub struct EnvelopeLog {
    dir: PathBuf,
    log: LineFile,
    index: BTreeMap<RecordId, (u64, u64)>,
    order: Vec<RecordId>,
    since_snapshot: usize,
    truncated_bytes: u64,
}

impl EnvelopeLog {
    /// Opens the log in `dir`, creating it if absent, and returns every
    /// envelope in append order. A line that is complete but does not
    /// decode is corruption, not a torn write, and fails the open.
    pub fn open(dir: &Path) -> Result<(Self, Vec<SignedEnvelope>), LedgerError> {
        fs::create_dir_all(dir)?;
        let (log, lines, truncated_bytes) = LineFile::open(&dir.join(ENVELOPES))?;
        let mut index = BTreeMap::new();
        let mut order = Vec::new();
        let mut envelopes = Vec::with_capacity(lines.len());
        for (offset, line) in lines {
            let corrupt = |reason: String| LedgerError::CorruptLog {
                path: log.path().display().to_string(),
                offset,
                reason,
            };
            let env = SignedEnvelope::from_line(&line).map_err(|e| corrupt(e.to_string()))?;
            let id = env.decode_record().map_err(|e| corrupt(e.to_string()))?.record_id;
            if index.insert(id.clone(), (offset, line.len() as u64)).is_some() {
                return Err(corrupt(format!("record {id} appears twice")));
            }
            order.push(id);
            envelopes.push(env);
        }
        let mut this = Self { dir: dir.to_path_buf(), log, index, order, since_snapshot: 0, truncated_bytes };
        if this.snapshot_is_stale() {
            this.snapshot()?;
        }
        Ok((this, envelopes))
    }

    fn snapshot_is_stale(&self) -> bool {
        let Ok(bytes) = fs::read(self.dir.join(INDEX)) else { return true };
        let Ok(snap) = from_canonical_slice::<IndexSnapshot>(&bytes) else { return true };
        snap.log_bytes != self.log.len() || snap.entries.len() != self.index.len()
    }

    /// Appends `env` unless its record id is already present. Returns
    /// `false` for a duplicate.
    pub fn append(&mut self, env: &SignedEnvelope) -> Result<bool, LedgerError> {
        let id = env.decode_record()?.record_id;
        if self.index.contains_key(&id) {
            return Ok(false);
        }
        let line = env.to_line();
        let offset = self.log.append(&line)?;
        self.index.insert(id.clone(), (offset, line.len() as u64));
        self.order.push(id);
        self.since_snapshot += 1;
        if self.since_snapshot >= SNAPSHOT_EVERY {
            self.snapshot()?;
        }
        Ok(true)
    }

    pub fn contains(&self, id: &RecordId) -> bool {
        self.index.contains_key(id)
    }

    /// Reads one envelope back from disk through the index.
    pub fn get(&self, id: &RecordId) -> Result<Option<SignedEnvelope>, LedgerError> {
        match self.index.get(id) {
            None => Ok(None),
            Some(&(offset, len)) => Ok(Some(SignedEnvelope::from_line(&self.log.read_at(offset, len)?)?)),
        }
    }

    /// Record ids in append order.
    pub fn ids(&self) -> &[RecordId] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Bytes cut from an unterminated tail when the log was opened.
    pub fn truncated_bytes(&self) -> u64 {
        self.truncated_bytes
    }

    /// Writes the index atomically (temporary file, fsync, rename).
    pub fn snapshot(&mut self) -> Result<(), LedgerError> {
        let mut entries: Vec<IndexEntry> = self
            .index
            .iter()
            .map(|(id, &(offset, len))| IndexEntry { record_id: id.clone(), offset, len })
            .collect();
        entries.sort_by_key(|e| e.offset);
        let snap = IndexSnapshot { log_bytes: self.log.len(), entries };
        write_atomic(&self.dir.join(INDEX), &to_canonical_vec(&snap)?)?;
        self.since_snapshot = 0;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), LedgerError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(parent) = path.parent() {
        // directory fsync makes the rename durable; not supported everywhere
        if let Ok(d) = File::open(parent) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

/// Record ids known to be present at CENTRAL.
#[derive(Debug)]
pub struct DurableMarks {
    file: LineFile,
    ids: BTreeSet<RecordId>,
}

impl DurableMarks {
    pub fn open(dir: &Path) -> Result<Self, LedgerError> {
        fs::create_dir_all(dir)?;
        let (file, lines, _) = LineFile::open(&dir.join(DURABLE))?;
        let ids = lines
            .into_iter()
            .map(|(_, l)| RecordId(String::from_utf8_lossy(&l).into_owned()))
            .collect();
        Ok(Self { file, ids })
    }

    pub fn mark(&mut self, id: &RecordId) -> Result<bool, LedgerError> {
        if self.ids.contains(id) {
            return Ok(false);
        }
        self.file.append(id.as_str().as_bytes())?;
        self.ids.insert(id.clone());
        Ok(true)
    }

    pub fn contains(&self, id: &RecordId) -> bool {
        self.ids.contains(id)
    }

    pub fn ids(&self) -> &BTreeSet<RecordId> {
        &self.ids
    }
}

/// An envelope that was refused, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    pub received_at: DateTime<Utc>,
    pub source: String,
    pub reason: String,
    pub record_id: Option<RecordId>,
    pub envelope: SignedEnvelope,
}

#[derive(Debug)]
pub struct QuarantineLog {
    file: LineFile,
    entries: Vec<QuarantineEntry>,
}

impl QuarantineLog {
    pub fn open(dir: &Path) -> Result<Self, LedgerError> {
        fs::create_dir_all(dir)?;
        let (file, lines, _) = LineFile::open(&dir.join(QUARANTINE))?;
        let entries = lines
            .into_iter()
            .map(|(offset, l)| {
                from_canonical_slice(&l).map_err(|e| LedgerError::CorruptLog {
                    path: file.path().display().to_string(),
                    offset,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { file, entries })
    }

    pub fn push(&mut self, entry: QuarantineEntry) -> Result<(), LedgerError> {
        self.file.append(&to_canonical_vec(&entry)?)?;
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[QuarantineEntry] {
        &self.entries
    }
}
