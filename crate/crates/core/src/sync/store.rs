//! Replica stores: grow-only sets of signed envelopes keyed by record id.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::ledger::{InvestigationRecord, PatientId, QuarantineEntry, RecordId, SignedEnvelope};
use crate::pki::{EnvelopeVerifier, RejectReason};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReplicaKind {
    Card,
    Local,
    Central,
}

impl ReplicaKind {
    /// Lower is less durable. Anti-entropy is initiated by the less
    /// durable side.
    pub fn durability_rank(self) -> u8 {
        match self {
            ReplicaKind::Card => 0,
            ReplicaKind::Local => 1,
            ReplicaKind::Central => 2,
        }
    }
}

impl fmt::Display for ReplicaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReplicaKind::Card => "CARD",
            ReplicaKind::Local => "LOCAL",
            ReplicaKind::Central => "CENTRAL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Stored {
    envelope: SignedEnvelope,
    performed_at: DateTime<Utc>,
    patient_id: PatientId,
    seq: u64,
}

/// Why an envelope was not added.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fault", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AdmitFault {
    /// Failed verification.
    Rejected { reason: RejectReason },
    /// Same record id already held with different bytes.
    Conflict,
}

impl AdmitFault {
    pub fn code(&self) -> &'static str {
        match self {
            AdmitFault::Rejected { reason } => reason.code(),
            AdmitFault::Conflict => "RECORD_ID_CONFLICT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Admitted {
    Inserted { evicted: Option<RecordId> },
    /// Identical bytes were already present.
    Duplicate,
    /// Belongs to another patient than the store's scope.
    OutOfScope,
    /// Full and nothing older is safe to evict.
    NoCapacity,
}

/// A grow-only envelope set. Cards additionally have a capacity, a patient
/// scope, and may evict their oldest records once CENTRAL has confirmed
/// holding them; such evictions never lose data held elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaStore {
    kind: ReplicaKind,
    id: String,
    envelopes: BTreeMap<RecordId, Stored>,
    durable: BTreeSet<RecordId>,
    capacity: Option<usize>,
    patient_scope: Option<PatientId>,
    quarantine: Vec<QuarantineEntry>,
    next_seq: u64,
}

impl ReplicaStore {
    pub fn new(kind: ReplicaKind, id: impl Into<String>) -> Self {
        Self {
            kind,
            id: id.into(),
            envelopes: BTreeMap::new(),
            durable: BTreeSet::new(),
            capacity: None,
            patient_scope: None,
            quarantine: Vec::new(),
            next_seq: 0,
        }
    }

    /// A card store holding at most `capacity` records of one patient.
    pub fn card(id: impl Into<String>, patient: PatientId, capacity: usize) -> Self {
        Self { capacity: Some(capacity), patient_scope: Some(patient), ..Self::new(ReplicaKind::Card, id) }
    }

    pub fn with_capacity(mut self, capacity: Option<usize>) -> Self {
        self.capacity = capacity;
        self
    }

    pub fn kind(&self) -> ReplicaKind {
        self.kind
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn patient_scope(&self) -> Option<&PatientId> {
        self.patient_scope.as_ref()
    }

    pub fn len(&self) -> usize {
        self.envelopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envelopes.is_empty()
    }

    pub fn contains(&self, id: &RecordId) -> bool {
        self.envelopes.contains_key(id)
    }

    pub fn get(&self, id: &RecordId) -> Option<&SignedEnvelope> {
        self.envelopes.get(id).map(|s| &s.envelope)
    }

    pub fn ids(&self) -> impl Iterator<Item = &RecordId> {
        self.envelopes.keys()
    }

    pub fn id_set(&self) -> BTreeSet<RecordId> {
        self.envelopes.keys().cloned().collect()
    }

    pub fn envelopes(&self) -> impl Iterator<Item = &SignedEnvelope> {
        self.envelopes.values().map(|s| &s.envelope)
    }

    /// Envelopes of `patient`, oldest first.
    pub fn envelopes_for(&self, patient: &PatientId) -> Vec<&SignedEnvelope> {
        let mut v: Vec<&Stored> = self.envelopes.values().filter(|s| &s.patient_id == patient).collect();
        v.sort_by_key(|s| s.performed_at);
        v.into_iter().map(|s| &s.envelope).collect()
    }

    pub fn knows_patient(&self, patient: &PatientId) -> bool {
        self.envelopes.values().any(|s| &s.patient_id == patient)
    }

    /// Envelopes with an insertion sequence number greater than `cursor`,
    /// in insertion order, and the cursor to continue from.
    pub fn since(&self, cursor: u64) -> (Vec<&SignedEnvelope>, u64) {
        let mut v: Vec<&Stored> = self.envelopes.values().filter(|s| s.seq > cursor).collect();
        v.sort_by_key(|s| s.seq);
        let next = v.last().map_or(cursor, |s| s.seq);
        (v.into_iter().map(|s| &s.envelope).collect(), next)
    }

    pub fn is_durable(&self, id: &RecordId) -> bool {
        self.kind == ReplicaKind::Central || self.durable.contains(id)
    }

    pub fn durable_ids(&self) -> BTreeSet<RecordId> {
        match self.kind {
            ReplicaKind::Central => self.id_set(),
            _ => self.durable.iter().filter(|id| self.envelopes.contains_key(*id)).cloned().collect(),
        }
    }

    /// Records that CENTRAL holds `id`. Marks for records not held are kept
    /// so a later arrival is already known durable.
    pub fn mark_durable(&mut self, id: &RecordId) -> bool {
        self.kind != ReplicaKind::Central && self.durable.insert(id.clone())
    }

    pub fn quarantine(&self) -> &[QuarantineEntry] {
        &self.quarantine
    }

    /// Verifies and inserts `envelope`. Verification failures and id
    /// conflicts are quarantined and reported; the store is unchanged.
    pub fn admit(
        &mut self,
        envelope: &SignedEnvelope,
        verifier: &dyn EnvelopeVerifier,
        now: DateTime<Utc>,
        source: &str,
    ) -> Result<Admitted, AdmitFault> {
        // cheap checks before signature work; identical bytes under a held
        // id were verified on first admission
        if let Ok(claimed) = envelope.decode_record() {
            if self.envelopes.get(&claimed.record_id).is_some_and(|s| s.envelope == *envelope) {
                return Ok(Admitted::Duplicate);
            }
            if self.patient_scope.as_ref().is_some_and(|p| *p != claimed.patient_id) {
                return Ok(Admitted::OutOfScope);
            }
        }
        let record = match verifier.check(envelope) {
            Ok(r) => r,
            Err(reason) => {
                let record_id = envelope.decode_record().ok().map(|r| r.record_id);
                self.push_quarantine(envelope, record_id, reason.code(), now, source);
                return Err(AdmitFault::Rejected { reason });
            }
        };
        let out = self.insert_verified(envelope.clone(), &record);
        if out == Err(AdmitFault::Conflict) {
            self.push_quarantine(envelope, Some(record.record_id), AdmitFault::Conflict.code(), now, source);
        }
        out
    }

    fn push_quarantine(
        &mut self,
        envelope: &SignedEnvelope,
        record_id: Option<RecordId>,
        reason: &str,
        now: DateTime<Utc>,
        source: &str,
    ) {
        self.quarantine.push(QuarantineEntry {
            received_at: now,
            source: source.to_string(),
            reason: reason.to_string(),
            record_id,
            envelope: envelope.clone(),
        });
    }

    /// Inserts an envelope whose verification has already been done.
    pub fn insert_verified(
        &mut self,
        envelope: SignedEnvelope,
        record: &InvestigationRecord,
    ) -> Result<Admitted, AdmitFault> {
        if let Some(held) = self.envelopes.get(&record.record_id) {
            return if held.envelope == envelope { Ok(Admitted::Duplicate) } else { Err(AdmitFault::Conflict) };
        }
        if self.patient_scope.as_ref().is_some_and(|p| p != &record.patient_id) {
            return Ok(Admitted::OutOfScope);
        }
        let mut evicted = None;
        if self.capacity.is_some_and(|cap| self.envelopes.len() >= cap) {
            match self.eviction_candidate() {
                Some((id, at)) if (at, &id) < (record.performed_at, &record.record_id) => {
                    self.envelopes.remove(&id);
                    evicted = Some(id);
                }
                _ => return Ok(Admitted::NoCapacity),
            }
        }
        self.next_seq += 1;
        self.envelopes.insert(
            record.record_id.clone(),
            Stored {
                envelope,
                performed_at: record.performed_at,
                patient_id: record.patient_id.clone(),
                seq: self.next_seq,
            },
        );
        Ok(Admitted::Inserted { evicted })
    }

    /// Oldest record that CENTRAL has confirmed.
    fn eviction_candidate(&self) -> Option<(RecordId, DateTime<Utc>)> {
        self.envelopes
            .iter()
            .filter(|(id, _)| self.is_durable(id))
            .map(|(id, s)| (id.clone(), s.performed_at))
            .min_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)))
    }
}

impl ReplicaStore {
    /// Held envelopes ordered newest first by (performed_at, record_id).
    pub fn newest_first(&self) -> Vec<(&RecordId, &SignedEnvelope)> {
        let mut v: Vec<(&RecordId, &Stored)> = self.envelopes.iter().collect();
        v.sort_by(|a, b| (b.1.performed_at, b.0).cmp(&(a.1.performed_at, a.0)));
        v.into_iter().map(|(id, s)| (id, &s.envelope)).collect()
    }

    /// Patient of a held record.
    pub fn patient_of(&self, id: &RecordId) -> Option<&PatientId> {
        self.envelopes.get(id).map(|s| &s.patient_id)
    }
}
