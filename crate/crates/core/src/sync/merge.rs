//! Pairwise anti-entropy, read-source selection and propagation of new
//! records.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::store::{AdmitFault, Admitted, ReplicaKind, ReplicaStore};
use crate::ledger::{PatientId, RecordId, SignedEnvelope};
use crate::pki::EnvelopeVerifier;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncFault {
    /// Store that refused the envelope.
    pub store: String,
    pub record_id: Option<RecordId>,
    pub code: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncOutcome {
    /// Envelopes newly inserted, keyed by receiving store.
    pub transferred: BTreeMap<String, usize>,
    /// Records a card dropped to make room, keyed by card store.
    pub evicted: BTreeMap<String, Vec<RecordId>>,
    /// Envelopes a full card could not take.
    pub skipped_capacity: usize,
    pub resulting_sizes: BTreeMap<String, usize>,
    pub faults: Vec<SyncFault>,
}

impl SyncOutcome {
    fn record(&mut self, store: &ReplicaStore, env: &SignedEnvelope, result: Result<Admitted, AdmitFault>) {
        match result {
            Ok(Admitted::Inserted { evicted }) => {
                *self.transferred.entry(store.id().to_string()).or_default() += 1;
                if let Some(e) = evicted {
                    self.evicted.entry(store.id().to_string()).or_default().push(e);
                }
            }
            Ok(Admitted::NoCapacity) => self.skipped_capacity += 1,
            Ok(Admitted::Duplicate | Admitted::OutOfScope) => {}
            Err(fault) => self.faults.push(SyncFault {
                store: store.id().to_string(),
                record_id: env.decode_record().ok().map(|r| r.record_id),
                code: fault.code().to_string(),
            }),
        }
    }

    pub fn transferred_to(&self, store: &str) -> usize {
        self.transferred.get(store).copied().unwrap_or(0)
    }

    pub fn absorb(&mut self, other: SyncOutcome) {
        for (k, v) in other.transferred {
            *self.transferred.entry(k).or_default() += v;
        }
        for (k, v) in other.evicted {
            self.evicted.entry(k).or_default().extend(v);
        }
        self.skipped_capacity += other.skipped_capacity;
        self.resulting_sizes.extend(other.resulting_sizes);
        self.faults.extend(other.faults);
    }
}

fn push_all(
    from: &ReplicaStore,
    to: &mut ReplicaStore,
    scope: Option<&PatientId>,
    verifier: &dyn EnvelopeVerifier,
    now: DateTime<Utc>,
    out: &mut SyncOutcome,
) {
    // newest first, so a card that fills up keeps the most recent history
    for (id, env) in from.newest_first() {
        if scope.is_some_and(|p| from.patient_of(id) != Some(p)) {
            continue;
        }
        if from.is_durable(id) {
            to.mark_durable(id);
        }
        let result = to.admit(env, verifier, now, from.id());
        out.record(to, env, result);
    }
}

fn propagate_durable(from: &ReplicaStore, to: &mut ReplicaStore) {
    for id in from.durable_ids() {
        to.mark_durable(&id);
    }
}

/// Two-way merge: each side admits every envelope it lacks from the other,
/// and CENTRAL confirmations travel with them. Idempotent; commutative and
/// associative on envelope sets of uncapped stores.
pub fn merge(
    a: &mut ReplicaStore,
    b: &mut ReplicaStore,
    verifier: &dyn EnvelopeVerifier,
    now: DateTime<Utc>,
) -> SyncOutcome {
    merge_scoped(a, b, None, verifier, now)
}

/// As [`merge`], restricted to one patient's records when `scope` is set.
pub fn merge_scoped(
    a: &mut ReplicaStore,
    b: &mut ReplicaStore,
    scope: Option<&PatientId>,
    verifier: &dyn EnvelopeVerifier,
    now: DateTime<Utc>,
) -> SyncOutcome {
    let mut out = SyncOutcome::default();
    // the less durable side initiates and pushes first
    let (first, second) = if a.kind().durability_rank() <= b.kind().durability_rank() { (a, b) } else { (b, a) };
    push_all(first, second, scope, verifier, now, &mut out);
    push_all(second, first, scope, verifier, now, &mut out);
    propagate_durable(second, first);
    propagate_durable(first, second);
    out.resulting_sizes.insert(first.id().to_string(), first.len());
    out.resulting_sizes.insert(second.id().to_string(), second.len());
    out
}

/// One-way copy of `scope`'s records from `from` into `to`.
pub fn pull_scoped(
    from: &ReplicaStore,
    to: &mut ReplicaStore,
    scope: Option<&PatientId>,
    verifier: &dyn EnvelopeVerifier,
    now: DateTime<Utc>,
) -> SyncOutcome {
    let mut out = SyncOutcome::default();
    push_all(from, to, scope, verifier, now, &mut out);
    out.resulting_sizes.insert(to.id().to_string(), to.len());
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConnectivityState {
    pub card_present: bool,
    pub local_reachable: bool,
    pub central_reachable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReadSource {
    Card,
    Local,
    Central,
}

/// Where to read a patient's history from, in priority order.
///
/// | card | local knows patient | reachable     | sources            |
/// |------|---------------------|---------------|--------------------|
/// | yes  | any                 | any           | CARD, then reachable LOCAL, CENTRAL |
/// | no   | yes                 | local         | LOCAL              |
/// | no   | no                  | central       | CENTRAL, staged into LOCAL if reachable |
/// | no   | any                 | nothing       | none               |
pub fn resolve_read_source(conn: ConnectivityState, patient_known_locally: bool) -> Vec<ReadSource> {
    let mut out = Vec::new();
    if conn.card_present {
        out.push(ReadSource::Card);
        if conn.local_reachable {
            out.push(ReadSource::Local);
        }
        if conn.central_reachable {
            out.push(ReadSource::Central);
        }
    } else if patient_known_locally && conn.local_reachable {
        out.push(ReadSource::Local);
    } else if conn.central_reachable {
        out.push(ReadSource::Central);
        if conn.local_reachable {
            out.push(ReadSource::Local);
        }
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SyncError {
    #[error("no store reachable; the investigation cannot be recorded")]
    NoStoreReachable,
    #[error("no reachable store accepted record {record_id}: {reason}")]
    NotStored { record_id: RecordId, reason: String },
}

/// The stores present at a visit. `None` means absent or unreachable.
pub struct Replicas<'a> {
    pub card: Option<&'a mut ReplicaStore>,
    pub local: Option<&'a mut ReplicaStore>,
    pub central: Option<&'a mut ReplicaStore>,
}

/// Appends a new envelope to every reachable store. Unreachable stores get
/// it at their next merge. Fails if no store holds it afterwards.
pub fn record_and_propagate(
    envelope: &SignedEnvelope,
    replicas: Replicas<'_>,
    verifier: &dyn EnvelopeVerifier,
    now: DateTime<Utc>,
) -> Result<SyncOutcome, SyncError> {
    let Replicas { card, local, central } = replicas;
    let mut stores: Vec<&mut ReplicaStore> = [central, local, card].into_iter().flatten().collect();
    if stores.is_empty() {
        return Err(SyncError::NoStoreReachable);
    }
    let record_id = envelope.decode_record().map_err(|e| SyncError::NotStored {
        record_id: RecordId(String::new()),
        reason: e.to_string(),
    })?;
    let record_id = record_id.record_id;
    let mut out = SyncOutcome::default();
    let mut held = false;
    let mut at_central = false;
    for store in stores.iter_mut() {
        if at_central {
            store.mark_durable(&record_id);
        }
        let result = store.admit(envelope, verifier, now, "record");
        if matches!(result, Ok(Admitted::Inserted { .. } | Admitted::Duplicate)) {
            held = true;
            at_central |= store.kind() == ReplicaKind::Central;
        }
        out.record(store, envelope, result);
        out.resulting_sizes.insert(store.id().to_string(), store.len());
    }
    if !held {
        let reason = out.faults.first().map_or_else(|| "capacity".to_string(), |f| f.code.clone());
        return Err(SyncError::NotStored { record_id, reason });
    }
    Ok(out)
}
