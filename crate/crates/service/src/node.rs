//! Persistent replica behind the service.
//!
//! Data directory layout (besides the ledger files described in
//! `radsafe_core::ledger::log`):
//!
//! ```text
//! LOCK              advisory lock held while the directory is open
//! pki.log           certificates and CRLs learned at runtime, one per line
//! upstream.cursor   LOCAL only: pull cursor into the upstream's log
//! staged.log        LOCAL only: patients whose upstream history is staged
//! ```
//!
//! Every write is on disk (fsync) before the in-memory replica changes, so
//! anything acknowledged survives a crash.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Utc};
use radsafe_core::dose::{DoseEngine, LimitPolicy, SubjectKind};
use radsafe_core::ledger::{
    build_profile, default_medium_doses, periodic_report, profile_from_records, whatif, DurableMarks, EnvelopeLog,
    InvestigationRecord, LedgerError, PatientDoseProfile, PatientId, PeriodicReport, Projection, ProposedExam,
    QuarantineEntry, QuarantineLog, RecordId, RecordVerifier, SignedEnvelope,
};
use radsafe_core::pki::{Certificate, EnvelopeVerifier, PkiError, RejectReason, RevocationList, TrustStore};
use radsafe_core::sync::{BatchEntry, ReplicaKind, ReplicaStore};
use radsafe_core::canonical::{from_canonical_slice, to_canonical_vec};
use radsafe_core::ledger::LineFile;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::NodeRole;

const LOCK: &str = "LOCK";
const PKI_LOG: &str = "pki.log";
const UPSTREAM_CURSOR: &str = "upstream.cursor";
const STAGED_LOG: &str = "staged.log";

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("data directory {0} is in use by another process")]
    Locked(PathBuf),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Pki(#[from] PkiError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ingest {
    Inserted(Box<InvestigationRecord>),
    Duplicate(RecordId),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("envelope rejected: {reason}")]
    Rejected { record_id: Option<RecordId>, reason: RejectReason },
    #[error("record id {0} already holds different content")]
    Conflict(RecordId),
    #[error(transparent)]
    Storage(#[from] LedgerError),
}

impl IngestError {
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::Rejected { reason, .. } => reason.code(),
            IngestError::Conflict(_) => "RECORD_ID_CONFLICT",
            IngestError::Storage(_) => "STORAGE_ERROR",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
enum PkiItem {
    Certificate { certificate: Certificate },
    Crl { crl: RevocationList },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub record: InvestigationRecord,
    pub envelope: SignedEnvelope,
    pub durable: bool,
}

/// One page of a patient's history in (performed_at, record_id) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryPage {
    pub patient_id: PatientId,
    pub entries: Vec<HistoryEntry>,
    /// Pass back as `cursor` for the next page; absent on the last page.
    pub next_cursor: Option<String>,
}

/// Envelopes appended after a log position, for peers catching up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PullPage {
    pub sender: String,
    pub entries: Vec<BatchEntry>,
    pub next_cursor: u64,
    /// Signer certificates and intermediates the receiver may lack.
    #[serde(default)]
    pub certificates: Vec<Certificate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCounts {
    pub records: usize,
    pub patients: usize,
    pub durable: usize,
    pub pending_upstream: usize,
    pub quarantined: usize,
}

pub struct Node {
    role: NodeRole,
    dir: PathBuf,
    store: ReplicaStore,
    log: EnvelopeLog,
    durable: DurableMarks,
    quarantine: QuarantineLog,
    pki: LineFile,
    staged_log: LineFile,
    staged: BTreeSet<PatientId>,
    trust: TrustStore,
    engine: DoseEngine,
    policy: LimitPolicy,
    _lock: File,
}

impl std::fmt::Debug for Node {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Node").field("dir", &self.dir).field("role", &self.role).field("records", &self.log.len()).finish()
    }
}

impl Node {
    /// Opens (or creates) the node in `dir`. Every stored envelope is
    /// verified again; one that fails is an integrity error.
    pub fn open(
        dir: &Path,
        role: NodeRole,
        node_id: &str,
        mut trust: TrustStore,
        engine: DoseEngine,
        policy: LimitPolicy,
    ) -> Result<Self, NodeError> {
        fs::create_dir_all(dir).map_err(LedgerError::from)?;
        let lock = File::options().create(true).truncate(false).write(true).open(dir.join(LOCK)).map_err(LedgerError::from)?;
        if lock.try_lock().is_err() {
            return Err(NodeError::Locked(dir.to_path_buf()));
        }
        let (pki, lines, _) = LineFile::open(&dir.join(PKI_LOG))?;
        for (offset, line) in lines {
            let corrupt = |reason: String| LedgerError::CorruptLog { path: pki.path().display().to_string(), offset, reason };
            match from_canonical_slice::<PkiItem>(&line).map_err(|e| corrupt(e.to_string()))? {
                PkiItem::Certificate { certificate } => trust.add_certificate(certificate),
                PkiItem::Crl { crl } => {
                    trust.add_crl(crl).map_err(|e| corrupt(e.to_string()))?;
                }
            }
        }

        let (log, envelopes) = EnvelopeLog::open(dir)?;
        let kind = match role {
            NodeRole::Local => ReplicaKind::Local,
            NodeRole::Central => ReplicaKind::Central,
        };
        let mut store = ReplicaStore::new(kind, node_id);
        {
            let verifier = RecordVerifier { trust: &trust, engine: &engine };
            for env in envelopes {
                let record = verifier.check(&env).map_err(|reason| LedgerError::Integrity {
                    record_id: env.decode_record().ok().map(|r| r.record_id),
                    reason,
                })?;
                let id = record.record_id.clone();
                store.insert_verified(env, &record).map_err(|_| LedgerError::Integrity {
                    record_id: Some(id),
                    reason: RejectReason::MalformedPayload,
                })?;
            }
        }
        let durable = DurableMarks::open(dir)?;
        for id in durable.ids() {
            store.mark_durable(id);
        }
        let quarantine = QuarantineLog::open(dir)?;
        let (staged_log, lines, _) = LineFile::open(&dir.join(STAGED_LOG))?;
        let mut staged = BTreeSet::new();
        for (offset, line) in lines {
            let p: PatientId = from_canonical_slice(&line).map_err(|e| LedgerError::CorruptLog {
                path: staged_log.path().display().to_string(),
                offset,
                reason: e.to_string(),
            })?;
            staged.insert(p);
        }
        Ok(Self {
            role,
            dir: dir.to_path_buf(),
            store,
            log,
            durable,
            quarantine,
            pki,
            staged_log,
            staged,
            trust,
            engine,
            policy,
            _lock: lock,
        })
    }

    pub fn role(&self) -> NodeRole {
        self.role
    }

    pub fn id(&self) -> &str {
        self.store.id()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn trust(&self) -> &TrustStore {
        &self.trust
    }

    pub fn engine(&self) -> &DoseEngine {
        &self.engine
    }

    pub fn policy(&self) -> &LimitPolicy {
        &self.policy
    }

    pub fn store(&self) -> &ReplicaStore {
        &self.store
    }

    pub fn quarantine(&self) -> &[QuarantineEntry] {
        self.quarantine.entries()
    }

    pub fn knows_patient(&self, patient: &PatientId) -> bool {
        self.store.knows_patient(patient)
    }

    /// Whether the patient's upstream history was fetched once. Later
    /// upstream records arrive through the regular pull.
    pub fn is_staged(&self, patient: &PatientId) -> bool {
        self.staged.contains(patient)
    }

    pub fn mark_staged(&mut self, patient: &PatientId) -> Result<(), LedgerError> {
        if !self.staged.contains(patient) {
            self.staged_log.append(&to_canonical_vec(patient)?)?;
            self.staged.insert(patient.clone());
        }
        Ok(())
    }

    /// Known patients whose upstream history has not been fetched, such as
    /// those first recorded while the upstream was unreachable.
    pub fn unstaged_patients(&self) -> Vec<PatientId> {
        let known: BTreeSet<&PatientId> = self.store.ids().filter_map(|id| self.store.patient_of(id)).collect();
        known.into_iter().filter(|p| !self.staged.contains(*p)).cloned().collect()
    }

    pub fn counts(&self) -> NodeCounts {
        let patients: BTreeSet<&PatientId> = self.store.ids().filter_map(|id| self.store.patient_of(id)).collect();
        let durable = self.store.durable_ids().len();
        NodeCounts {
            records: self.store.len(),
            patients: patients.len(),
            durable,
            pending_upstream: if self.role == NodeRole::Local { self.store.len() - durable } else { 0 },
            quarantined: self.quarantine.entries().len(),
        }
    }

    /// Verifies and durably appends `env`. `durable` records that the
    /// sender vouches the record is held by CENTRAL.
    pub fn ingest(&mut self, env: &SignedEnvelope, source: &str, durable: bool, now: DateTime<Utc>) -> Result<Ingest, IngestError> {
        let claimed = env.decode_record().ok();
        if let Some(c) = &claimed {
            if self.store.get(&c.record_id) == Some(env) {
                if durable {
                    self.mark_durable(&c.record_id)?;
                }
                return Ok(Ingest::Duplicate(c.record_id.clone()));
            }
        }
        let verified = RecordVerifier { trust: &self.trust, engine: &self.engine }.check(env);
        let record = match verified {
            Ok(r) => r,
            Err(reason) => {
                let record_id = claimed.map(|c| c.record_id);
                self.push_quarantine(env, record_id.clone(), reason.code(), source, now)?;
                return Err(IngestError::Rejected { record_id, reason });
            }
        };
        if self.store.contains(&record.record_id) {
            self.push_quarantine(env, Some(record.record_id.clone()), "RECORD_ID_CONFLICT", source, now)?;
            return Err(IngestError::Conflict(record.record_id));
        }
        self.log.append(env)?;
        self.store
            .insert_verified(env.clone(), &record)
            .map_err(|_| IngestError::Conflict(record.record_id.clone()))?;
        if durable {
            self.mark_durable(&record.record_id)?;
        }
        Ok(Ingest::Inserted(Box::new(record)))
    }

    fn push_quarantine(
        &mut self,
        env: &SignedEnvelope,
        record_id: Option<RecordId>,
        reason: &str,
        source: &str,
        now: DateTime<Utc>,
    ) -> Result<(), LedgerError> {
        self.quarantine.push(QuarantineEntry {
            received_at: now,
            source: source.to_string(),
            reason: reason.to_string(),
            record_id,
            envelope: env.clone(),
        })
    }

    /// Persists that CENTRAL holds `id`. No-op on CENTRAL.
    pub fn mark_durable(&mut self, id: &RecordId) -> Result<bool, LedgerError> {
        if self.role == NodeRole::Central || self.durable.contains(id) {
            return Ok(false);
        }
        self.durable.mark(id)?;
        Ok(self.store.mark_durable(id))
    }

    /// Registers a certificate after checking it chains to an anchor at
    /// the start of its validity.
    pub fn add_certificate(&mut self, cert: Certificate) -> Result<bool, RejectReason> {
        if self.trust.lookup(cert.id()) == Some(&cert) {
            return Ok(false);
        }
        if self.trust.lookup(cert.id()).is_some() {
            return Err(RejectReason::MalformedPayload);
        }
        let mut candidate = self.trust.clone();
        candidate.add_certificate(cert.clone());
        candidate.verify_chain(cert.id(), cert.body.not_before)?;
        let line = to_canonical_vec(&PkiItem::Certificate { certificate: cert }).map_err(|_| RejectReason::MalformedPayload)?;
        self.pki.append(&line).map_err(|_| RejectReason::MalformedPayload)?;
        self.trust = candidate;
        Ok(true)
    }

    /// Installs a CRL newer than the one held for its issuer.
    pub fn add_crl(&mut self, crl: RevocationList) -> Result<bool, NodeError> {
        let mut candidate = self.trust.clone();
        if !candidate.add_crl(crl.clone())? {
            return Ok(false);
        }
        let line = to_canonical_vec(&PkiItem::Crl { crl }).map_err(LedgerError::from)?;
        self.pki.append(&line)?;
        self.trust = candidate;
        Ok(true)
    }

    fn patient_envelopes(&self, patient: &PatientId) -> Vec<&SignedEnvelope> {
        self.store.envelopes_for(patient)
    }

    /// `None` when the patient has no records here.
    pub fn profile(&self, patient: &PatientId, as_of: DateTime<Utc>) -> Result<Option<PatientDoseProfile>, LedgerError> {
        let envs = self.patient_envelopes(patient);
        if envs.is_empty() {
            return Ok(None);
        }
        let verifier = RecordVerifier { trust: &self.trust, engine: &self.engine };
        build_profile(envs, patient, as_of, &self.policy, &verifier, &self.engine).map(Some)
    }

    /// Projection over the current profile; an unknown patient projects
    /// from an empty history.
    pub fn whatif(&self, patient: &PatientId, as_of: DateTime<Utc>, proposed: &ProposedExam) -> Result<Projection, LedgerError> {
        let profile = match self.profile(patient, as_of)? {
            Some(p) => p,
            None => profile_from_records(&[], patient, as_of, &self.policy, SubjectKind::Patient, &self.engine)?,
        };
        whatif(&profile, proposed, &self.engine, &self.policy)
    }

    pub fn history(&self, patient: &PatientId, cursor: Option<&str>, limit: usize) -> Result<HistoryPage, LedgerError> {
        let after = cursor.map(decode_history_cursor).transpose()?;
        let mut entries: Vec<HistoryEntry> = Vec::new();
        for env in self.patient_envelopes(patient) {
            let record = env.decode_record()?;
            if after.as_ref().is_some_and(|(t, id)| (record.performed_at, &record.record_id) <= (*t, id)) {
                continue;
            }
            let durable = self.store.is_durable(&record.record_id);
            entries.push(HistoryEntry { record, envelope: env.clone(), durable });
        }
        entries.sort_by(|a, b| a.record.sort_key().cmp(&b.record.sort_key()));
        let more = entries.len() > limit;
        entries.truncate(limit);
        let next_cursor = more.then(|| entries.last().map(|e| encode_history_cursor(&e.record))).flatten();
        Ok(HistoryPage { patient_id: patient.clone(), entries, next_cursor })
    }

    /// Report over every record held. Medium doses come from the preceding
    /// period of equal length, with catalog doses as fallback.
    pub fn report(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> Result<PeriodicReport, LedgerError> {
        let records = self.store.envelopes().map(|e| e.decode_record()).collect::<Result<Vec<_>, _>>()?;
        if from > to {
            return Err(LedgerError::InvalidRange(format!("{from} is after {to}")));
        }
        let medium = default_medium_doses(&records, from, to, &self.engine.catalog);
        periodic_report(&records, from, to, &medium)
    }

    /// Envelopes appended after `cursor`, optionally for one patient.
    pub fn pull(&self, cursor: u64, patient: Option<&PatientId>, limit: usize) -> PullPage {
        let (all, end) = self.store.since(cursor);
        let mut entries = Vec::new();
        let mut next = cursor;
        for env in all {
            if entries.len() == limit {
                break;
            }
            next += 1;
            let Ok(record) = env.decode_record() else { continue };
            if patient.is_some_and(|p| *p != record.patient_id) {
                continue;
            }
            entries.push(BatchEntry { durable: self.store.is_durable(&record.record_id), envelope: env.clone() });
        }
        // `since` numbers envelopes consecutively from 1 in append order
        let next_cursor = if entries.len() < limit { end } else { next };
        let certificates = self.certificates_for(entries.iter().map(|e| &e.envelope));
        PullPage { sender: self.id().to_string(), entries, next_cursor, certificates }
    }

    /// Records not yet confirmed at CENTRAL, oldest first.
    pub fn pending_upstream(&self) -> Vec<SignedEnvelope> {
        if self.role == NodeRole::Central {
            return Vec::new();
        }
        let (all, _) = self.store.since(0);
        all.into_iter()
            .filter(|e| e.decode_record().is_ok_and(|r| !self.store.is_durable(&r.record_id)))
            .cloned()
            .collect()
    }

    /// Signer certificates and their issuers up to (excluding) anchors.
    pub fn certificates_for<'a>(&self, envs: impl IntoIterator<Item = &'a SignedEnvelope>) -> Vec<Certificate> {
        let anchors: BTreeSet<_> = self.trust.to_bundle().anchors.into_iter().map(|a| a.id().clone()).collect();
        let mut out: BTreeMap<_, Certificate> = BTreeMap::new();
        for env in envs {
            let mut next = Some(env.signer_cert_id.clone());
            while let Some(id) = next.take() {
                if anchors.contains(&id) || out.contains_key(&id) {
                    break;
                }
                if let Some(cert) = self.trust.lookup(&id) {
                    out.insert(id, cert.clone());
                    if !cert.is_self_signed() {
                        next = Some(cert.body.issuer_id.clone());
                    }
                }
            }
        }
        out.into_values().collect()
    }

    pub fn upstream_cursor(&self) -> u64 {
        fs::read_to_string(self.dir.join(UPSTREAM_CURSOR)).ok().and_then(|s| s.trim().parse().ok()).unwrap_or(0)
    }

    pub fn set_upstream_cursor(&self, cursor: u64) -> Result<(), LedgerError> {
        let tmp = self.dir.join(format!("{UPSTREAM_CURSOR}.tmp"));
        fs::write(&tmp, cursor.to_string())?;
        File::open(&tmp)?.sync_all()?;
        fs::rename(&tmp, self.dir.join(UPSTREAM_CURSOR))?;
        Ok(())
    }

    /// The on-disk envelope log, byte for byte.
    pub fn log_bytes(&self) -> Result<Vec<u8>, LedgerError> {
        Ok(fs::read(self.log.dir().join("envelopes.log"))?)
    }
}

fn encode_history_cursor(r: &InvestigationRecord) -> String {
    URL_SAFE_NO_PAD.encode(format!("{}|{}", r.performed_at.to_rfc3339(), r.record_id))
}

fn decode_history_cursor(c: &str) -> Result<(DateTime<Utc>, RecordId), LedgerError> {
    let bad = || LedgerError::InvalidRange(format!("malformed cursor {c:?}"));
    let raw = URL_SAFE_NO_PAD.decode(c).map_err(|_| bad())?;
    let text = String::from_utf8(raw).map_err(|_| bad())?;
    let (t, id) = text.split_once('|').ok_or_else(bad)?;
    let t = DateTime::parse_from_rfc3339(t).map_err(|_| bad())?.with_timezone(&Utc);
    Ok((t, RecordId(id.to_string())))
}
