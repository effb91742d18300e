//! Deterministic simulation of patient visits across card, hospital and
//! central replicas.
//!
//! A scenario file is TOML:
//!
//! ```toml
//! name = "no-card-online"
//! description = "..."
//!
//! [world]
//! seed = 7                              # drives every key, id and PIN salt
//! start = "2025-01-06T08:00:00Z"        # CA and operator cards valid from here
//! card_capacity = 64                    # optional, default 64
//! facilities = ["HOSP-A", "HOSP-B"]     # each gets a LOCAL store "LOCAL:<name>"
//! patients = [{ id = "P-001", card = true, age = 42 }]
//! operators = [{ id = "dr-a", facility = "HOSP-A" }]
//!
//! [[events]]
//! type = "VISIT"
//! at = "2025-01-06T09:00:00Z"
//! patient = "P-001"
//! facility = "HOSP-A"
//! operator = "dr-a"                     # required with an investigation
//! card_present = false
//! local_reachable = true                # optional, default true
//! central_reachable = true
//! investigation = { exam_type = "chest", input = { kind = "CATALOG", exam = "chest" } }
//!
//! [[events]]
//! type = "SYNC"                         # two-way merge
//! at = "..."
//! a = "LOCAL:HOSP-A"                    # CENTRAL | LOCAL:<facility> | CARD:<patient>
//! b = "CENTRAL"
//! patient = "P-001"                     # optional: only this patient's records
//!
//! [[events]]
//! type = "REPLACE_CARD"                 # lost card: revoke, reissue, refill from CENTRAL
//! at = "..."
//! patient = "P-001"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::merge::{
    merge_scoped, pull_scoped, record_and_propagate, resolve_read_source, ConnectivityState, ReadSource, Replicas,
    SyncError, SyncOutcome,
};
use super::store::{ReplicaKind, ReplicaStore};
use crate::dose::{DoseEngine, DoseInput, LimitPolicy, SubjectKind};
use crate::ledger::{
    create_record, profile_from_records, InvestigationInputs, LedgerError, PatientId, RecordId, RecordKind,
    SignedEnvelope,
};
use crate::pki::{
    personalize_card, replace_card, Algorithm, CardKind, CardRegistry, CertificateAuthority, EmulatedCard, PkiError,
    TrustStore, DEFAULT_CA_VALIDITY_DAYS, DEFAULT_LEAF_VALIDITY_DAYS,
};

pub const DEFAULT_CARD_CAPACITY: usize = 64;
const SIM_PIN: &str = "1234";
const CENTRAL_ID: &str = "CENTRAL";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario file: {0}")]
    Parse(String),
    #[error("scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Pki(#[from] PkiError),
    #[error(transparent)]
    Sync(#[from] SyncError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSpec {
    pub id: PatientId,
    #[serde(default)]
    pub card: bool,
    #[serde(default)]
    pub age: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub id: String,
    pub facility: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub seed: u64,
    pub start: DateTime<Utc>,
    #[serde(default = "default_capacity")]
    pub card_capacity: usize,
    pub facilities: Vec<String>,
    pub patients: Vec<PatientSpec>,
    #[serde(default)]
    pub operators: Vec<OperatorSpec>,
}

fn default_capacity() -> usize {
    DEFAULT_CARD_CAPACITY
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedInvestigation {
    pub exam_type: String,
    pub input: DoseInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub at: DateTime<Utc>,
    pub patient: PatientId,
    pub facility: String,
    #[serde(default)]
    pub operator: Option<String>,
    #[serde(default)]
    pub card_present: bool,
    #[serde(default = "yes")]
    pub local_reachable: bool,
    #[serde(default)]
    pub central_reachable: bool,
    #[serde(default)]
    pub investigation: Option<PlannedInvestigation>,
}

/// `CENTRAL`, `LOCAL:<facility>` or `CARD:<patient>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StoreRef {
    Central,
    Local(String),
    Card(PatientId),
}

impl TryFrom<String> for StoreRef {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == CENTRAL_ID => Ok(StoreRef::Central),
            Some(("LOCAL", f)) if !f.is_empty() => Ok(StoreRef::Local(f.to_string())),
            Some(("CARD", p)) if !p.is_empty() => Ok(StoreRef::Card(PatientId::new(p))),
            _ => Err(format!("bad store reference {s:?}")),
        }
    }
}

impl From<StoreRef> for String {
    fn from(r: StoreRef) -> String {
        r.to_string()
    }
}

impl fmt::Display for StoreRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoreRef::Central => f.write_str(CENTRAL_ID),
            StoreRef::Local(x) => write!(f, "LOCAL:{x}"),
            StoreRef::Card(p) => write!(f, "CARD:{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Event {
    Visit(Visit),
    Sync {
        at: DateTime<Utc>,
        a: StoreRef,
        b: StoreRef,
        #[serde(default)]
        patient: Option<PatientId>,
    },
    ReplaceCard { at: DateTime<Utc>, patient: PatientId },
}

impl Event {
    pub fn at(&self) -> DateTime<Utc> {
        match self {
            Event::Visit(v) => v.at,
            Event::Sync { at, .. } | Event::ReplaceCard { at, .. } => *at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub world: WorldConfig,
    #[serde(default)]
    pub events: Vec<Event>,
}

impl ScenarioFile {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        toml::to_string(self).map_err(|e| ScenarioError::Parse(e.to_string()))
    }
}

/// Scenario files shipped with the crate, by name.
pub const BUILTIN_SCENARIOS: &[(&str, &str)] = &[
    ("no-card-online", include_str!("../../scenarios/no-card-online.toml")),
    ("no-card-offline", include_str!("../../scenarios/no-card-offline.toml")),
    ("card-only", include_str!("../../scenarios/card-only.toml")),
];

pub fn builtin_scenario(name: &str) -> Result<ScenarioFile, ScenarioError> {
    let (_, text) = BUILTIN_SCENARIOS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| ScenarioError::Invalid(format!("no built-in scenario {name:?}")))?;
    ScenarioFile::from_toml(text)
}

/// What the doctor saw at a visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryView {
    pub records: usize,
    pub cumulative_msv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedView {
    pub record_id: RecordId,
    pub exam_type: String,
    pub effective_msv: f64,
    pub stored_in: Vec<String>,
}

/// One transcript entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub at: DateTime<Utc>,
    pub event: String,
    pub read_sources: Option<Vec<ReadSource>>,
    pub history: Option<HistoryView>,
    /// Records copied into LOCAL from CENTRAL or the card before reading.
    pub staged_into_local: usize,
    pub recorded: Option<RecordedView>,
    pub sync: Option<SyncOutcome>,
    /// Per replica: records of the visit's patient (visits, card
    /// replacement) or all records (syncs).
    pub stores: BTreeMap<String, Option<usize>>,
}

/// Every replica plus the PKI around them.
#[derive(Debug, Clone)]
pub struct World {
    pub engine: DoseEngine,
    pub trust: TrustStore,
    ca: CertificateAuthority,
    pub central: ReplicaStore,
    pub locals: BTreeMap<String, ReplicaStore>,
    pub cards: BTreeMap<PatientId, EmulatedCard>,
    operators: BTreeMap<String, (String, EmulatedCard)>,
    pub registry: CardRegistry,
    ages: BTreeMap<PatientId, Option<u32>>,
    rng: ChaCha20Rng,
    card_capacity: usize,
    created: Vec<SignedEnvelope>,
    steps: usize,
}

impl World {
    pub fn new(config: &WorldConfig) -> Result<Self, ScenarioError> {
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let start = config.start;
        let ca = CertificateAuthority::init_root(
            "RadSafe Root CA",
            Algorithm::Ed25519,
            start - Duration::days(1),
            Duration::days(DEFAULT_CA_VALIDITY_DAYS),
            &mut rng,
        );
        let mut trust = TrustStore::new(ca.certificate().clone());
        let locals: BTreeMap<String, ReplicaStore> = config
            .facilities
            .iter()
            .map(|f| (f.clone(), ReplicaStore::new(ReplicaKind::Local, StoreRef::Local(f.clone()).to_string())))
            .collect();
        let validity = Duration::days(DEFAULT_LEAF_VALIDITY_DAYS);
        let mut operators = BTreeMap::new();
        for op in &config.operators {
            if !locals.contains_key(&op.facility) {
                return Err(ScenarioError::Invalid(format!("operator {} at unknown facility {}", op.id, op.facility)));
            }
            let card = personalize_card(&ca, CardKind::Prsc, &op.id, SIM_PIN, 0, start, validity, &mut rng)?;
            trust.add_certificate(card.cert().clone());
            operators.insert(op.id.clone(), (op.facility.clone(), card));
        }
        let mut registry = CardRegistry::default();
        let mut cards = BTreeMap::new();
        let mut ages = BTreeMap::new();
        for p in &config.patients {
            if ages.insert(p.id.clone(), p.age).is_some() {
                return Err(ScenarioError::Invalid(format!("patient {} listed twice", p.id)));
            }
            if p.card {
                let card = personalize_card(
                    &ca,
                    CardKind::Crsc,
                    p.id.as_str(),
                    SIM_PIN,
                    config.card_capacity,
                    start,
                    validity,
                    &mut rng,
                )?;
                trust.add_certificate(card.cert().clone());
                registry.register(&card);
                cards.insert(p.id.clone(), card);
            }
        }
        Ok(Self {
            engine: DoseEngine::builtin(),
            trust,
            ca,
            central: ReplicaStore::new(ReplicaKind::Central, CENTRAL_ID),
            locals,
            cards,
            operators,
            registry,
            ages,
            rng,
            card_capacity: config.card_capacity,
            created: Vec::new(),
            steps: 0,
        })
    }

    /// Every envelope created so far, in creation order.
    pub fn created(&self) -> &[SignedEnvelope] {
        &self.created
    }

    pub fn patients(&self) -> impl Iterator<Item = &PatientId> {
        self.ages.keys()
    }

    pub fn store(&self, r: &StoreRef) -> Option<&ReplicaStore> {
        match r {
            StoreRef::Central => Some(&self.central),
            StoreRef::Local(f) => self.locals.get(f),
            StoreRef::Card(p) => self.cards.get(p).map(|c| c.store()),
        }
    }

    fn store_mut(&mut self, r: &StoreRef) -> Result<&mut ReplicaStore, ScenarioError> {
        match r {
            StoreRef::Central => Ok(&mut self.central),
            StoreRef::Local(f) => self.locals.get_mut(f).ok_or_else(|| ScenarioError::Invalid(format!("no store {r}"))),
            StoreRef::Card(p) => self
                .cards
                .get_mut(p)
                .map(|c| c.store_mut())
                .ok_or_else(|| ScenarioError::Invalid(format!("no store {r}"))),
        }
    }

    fn take(&mut self, r: &StoreRef) -> Result<ReplicaStore, ScenarioError> {
        let s = self.store_mut(r)?;
        Ok(std::mem::replace(s, ReplicaStore::new(s.kind(), "")))
    }

    fn put(&mut self, r: &StoreRef, store: ReplicaStore) {
        *self.store_mut(r).expect("store was taken from here") = store;
    }

    /// Two-way merge between two named stores.
    pub fn sync_pair(
        &mut self,
        a: &StoreRef,
        b: &StoreRef,
        scope: Option<&PatientId>,
        now: DateTime<Utc>,
    ) -> Result<SyncOutcome, ScenarioError> {
        if a == b {
            return Err(ScenarioError::Invalid(format!("cannot sync {a} with itself")));
        }
        let mut sa = self.take(a)?;
        let mut sb = match self.take(b) {
            Ok(s) => s,
            Err(e) => {
                self.put(a, sa);
                return Err(e);
            }
        };
        let out = merge_scoped(&mut sa, &mut sb, scope, &self.trust, now);
        self.put(a, sa);
        self.put(b, sb);
        Ok(out)
    }

    fn patient_counts(&self, patient: &PatientId) -> BTreeMap<String, Option<usize>> {
        let mut out = BTreeMap::new();
        let count = |s: &ReplicaStore| s.envelopes_for(patient).len();
        if let Some(c) = self.cards.get(patient) {
            out.insert(StoreRef::Card(patient.clone()).to_string(), Some(count(c.store())));
        }
        for (f, s) in &self.locals {
            out.insert(StoreRef::Local(f.clone()).to_string(), Some(count(s)));
        }
        out.insert(CENTRAL_ID.to_string(), Some(count(&self.central)));
        out
    }

    fn total_counts(&self) -> BTreeMap<String, Option<usize>> {
        let mut out = BTreeMap::new();
        for (p, c) in &self.cards {
            out.insert(StoreRef::Card(p.clone()).to_string(), Some(c.store().len()));
        }
        for (f, s) in &self.locals {
            out.insert(StoreRef::Local(f.clone()).to_string(), Some(s.len()));
        }
        out.insert(CENTRAL_ID.to_string(), Some(self.central.len()));
        out
    }

    /// Applies one event. Validation happens before any state changes.
    pub fn step(&mut self, event: &Event) -> Result<StepReport, ScenarioError> {
        let report = match event {
            Event::Visit(v) => self.visit(v)?,
            Event::Sync { at, a, b, patient } => {
                let out = self.sync_pair(a, b, patient.as_ref(), *at)?;
                let scope = patient.as_ref().map(|p| format!(" patient={p}")).unwrap_or_default();
                StepReport {
                    step: 0,
                    at: *at,
                    event: format!("SYNC {a} <-> {b}{scope}"),
                    read_sources: None,
                    history: None,
                    staged_into_local: 0,
                    recorded: None,
                    stores: self.total_counts(),
                    sync: Some(out),
                }
            }
            Event::ReplaceCard { at, patient } => {
                if !self.ages.contains_key(patient) {
                    return Err(ScenarioError::Invalid(format!("unknown patient {patient}")));
                }
                let replaced = replace_card(
                    &mut self.registry,
                    &mut self.ca,
                    &self.central,
                    patient.as_str(),
                    SIM_PIN,
                    self.card_capacity,
                    *at,
                    Duration::days(DEFAULT_LEAF_VALIDITY_DAYS),
                    &mut self.rng,
                )?;
                self.trust.add_certificate(replaced.card.cert().clone());
                self.trust.add_crl(replaced.crl)?;
                self.cards.insert(patient.clone(), replaced.card);
                StepReport {
                    step: 0,
                    at: *at,
                    event: format!("REPLACE_CARD patient={patient}"),
                    read_sources: None,
                    history: None,
                    staged_into_local: 0,
                    recorded: None,
                    sync: None,
                    stores: self.patient_counts(patient),
                }
            }
        };
        self.steps += 1;
        Ok(StepReport { step: self.steps, ..report })
    }

    fn visit(&mut self, v: &Visit) -> Result<StepReport, ScenarioError> {
        let age = *self.ages.get(&v.patient).ok_or_else(|| ScenarioError::Invalid(format!("unknown patient {}", v.patient)))?;
        if !self.locals.contains_key(&v.facility) {
            return Err(ScenarioError::Invalid(format!("unknown facility {}", v.facility)));
        }
        if v.card_present && !self.cards.contains_key(&v.patient) {
            return Err(ScenarioError::Invalid(format!("patient {} has no card", v.patient)));
        }
        if let Some(inv) = &v.investigation {
            let op = v.operator.as_ref().ok_or_else(|| ScenarioError::Invalid("investigation without operator".into()))?;
            if !self.operators.contains_key(op) {
                return Err(ScenarioError::Invalid(format!("unknown operator {op}")));
            }
            self.engine.effective_dose(&inv.input).map_err(LedgerError::from)?;
            if !(v.card_present || v.local_reachable || v.central_reachable) {
                return Err(SyncError::NoStoreReachable.into());
            }
        }

        let conn = ConnectivityState {
            card_present: v.card_present,
            local_reachable: v.local_reachable,
            central_reachable: v.central_reachable,
        };
        let local_ref = StoreRef::Local(v.facility.clone());
        let card_ref = StoreRef::Card(v.patient.clone());
        let known = self.locals[&v.facility].knows_patient(&v.patient);
        let sources = resolve_read_source(conn, known);

        let local_before = self.locals[&v.facility].len();
        if v.card_present {
            if v.local_reachable {
                self.sync_pair(&card_ref, &local_ref, Some(&v.patient), v.at)?;
            }
            if v.central_reachable {
                if v.local_reachable {
                    self.sync_pair(&local_ref, &StoreRef::Central, Some(&v.patient), v.at)?;
                }
                self.sync_pair(&card_ref, &StoreRef::Central, Some(&v.patient), v.at)?;
            }
        } else if sources == [ReadSource::Central, ReadSource::Local] {
            let local = self.locals.get_mut(&v.facility).expect("checked above");
            pull_scoped(&self.central, local, Some(&v.patient), &self.trust, v.at);
        }
        let staged = self.locals[&v.facility].len() - local_before;

        let mut seen: BTreeMap<RecordId, SignedEnvelope> = BTreeMap::new();
        for s in &sources {
            let store = match s {
                ReadSource::Card => self.cards[&v.patient].store(),
                ReadSource::Local => &self.locals[&v.facility],
                ReadSource::Central => &self.central,
            };
            for env in store.envelopes_for(&v.patient) {
                let r = env.decode_record()?;
                seen.entry(r.record_id).or_insert_with(|| env.clone());
            }
        }
        let records = seen.values().map(|e| e.decode_record()).collect::<Result<Vec<_>, _>>()?;
        let profile = profile_from_records(
            &records,
            &v.patient,
            v.at,
            &LimitPolicy::default(),
            SubjectKind::Patient,
            &self.engine,
        )?;
        let history = HistoryView { records: records.len(), cumulative_msv: profile.cumulative_total_msv };

        let mut recorded = None;
        if let Some(inv) = &v.investigation {
            let op = v.operator.as_ref().expect("checked above");
            let (_, prsc) = self.operators.get_mut(op).expect("checked above");
            prsc.unlock(SIM_PIN, v.at)?;
            let inputs = InvestigationInputs {
                patient_id: v.patient.clone(),
                patient_age_years: age,
                performed_at: v.at,
                facility_id: v.facility.clone(),
                operator_id: op.clone(),
                exam_type: inv.exam_type.clone(),
                raw_input: inv.input.clone(),
                kind: RecordKind::Original,
            };
            let env = create_record(inputs, &self.engine, prsc, &self.trust, &mut self.rng)?;
            prsc.remove();
            let record = env.decode_record()?;
            let local = v.local_reachable.then(|| self.locals.get_mut(&v.facility).expect("checked above"));
            let card = if v.card_present { self.cards.get_mut(&v.patient).map(|c| c.store_mut()) } else { None };
            let central = v.central_reachable.then_some(&mut self.central);
            let out = record_and_propagate(&env, Replicas { card, local, central }, &self.trust, v.at)?;
            self.created.push(env);
            let mut stored_in: Vec<String> = out.transferred.keys().cloned().collect();
            stored_in.sort();
            recorded = Some(RecordedView {
                record_id: record.record_id,
                exam_type: record.exam_type,
                effective_msv: record.effective_dose.value(),
                stored_in,
            });
        }

        let yn = |b: bool| if b { "yes" } else { "no" };
        let ud = |b: bool| if b { "up" } else { "down" };
        Ok(StepReport {
            step: 0,
            at: v.at,
            event: format!(
                "VISIT patient={} facility={} card={} local={} central={}",
                v.patient,
                v.facility,
                yn(v.card_present),
                ud(v.local_reachable),
                ud(v.central_reachable)
            ),
            read_sources: Some(sources),
            history: Some(history),
            staged_into_local: staged,
            recorded,
            sync: None,
            stores: self.patient_counts(&v.patient),
        })
    }

    /// Pairwise merges over a spanning set: every LOCAL and every card with
    /// CENTRAL, then every LOCAL again so it receives what cards carried in.
    pub fn full_sync(&mut self, now: DateTime<Utc>) -> Result<(), ScenarioError> {
        let locals: Vec<StoreRef> = self.locals.keys().map(|f| StoreRef::Local(f.clone())).collect();
        let cards: Vec<PatientId> = self.cards.keys().cloned().collect();
        for l in &locals {
            self.sync_pair(l, &StoreRef::Central, None, now)?;
        }
        for p in &cards {
            self.sync_pair(&StoreRef::Card(p.clone()), &StoreRef::Central, Some(p), now)?;
        }
        for l in &locals {
            self.sync_pair(l, &StoreRef::Central, None, now)?;
        }
        Ok(())
    }
}

/// Runs `event` against `world` and returns the successor state.
pub fn scenario_step(event: &Event, mut world: World) -> Result<(World, StepReport), ScenarioError> {
    let report = world.step(event)?;
    Ok((world, report))
}

/// Replays a scenario file from its initial world.
pub fn replay(file: &ScenarioFile) -> Result<(World, Vec<StepReport>), ScenarioError> {
    let mut world = World::new(&file.world)?;
    let mut reports = Vec::with_capacity(file.events.len());
    for e in &file.events {
        reports.push(world.step(e)?);
    }
    Ok((world, reports))
}

/// Plain-text transcript; byte-stable for a given scenario file.
pub fn render_transcript(file: &ScenarioFile, reports: &[StepReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# scenario {}", file.name);
    for line in file.description.lines() {
        let _ = writeln!(s, "# {line}");
    }
    for r in reports {
        let _ = writeln!(s, "step {} {} {}", r.step, r.at.to_rfc3339(), r.event);
        if let Some(src) = &r.read_sources {
            let names: Vec<&str> = src
                .iter()
                .map(|x| match x {
                    ReadSource::Card => "CARD",
                    ReadSource::Local => "LOCAL",
                    ReadSource::Central => "CENTRAL",
                })
                .collect();
            let text = if names.is_empty() { "none (no history available)".to_string() } else { names.join(", ") };
            let _ = writeln!(s, "  read_sources: {text}");
        }
        if r.staged_into_local > 0 {
            let _ = writeln!(s, "  staged_into_local: {}", r.staged_into_local);
        }
        if let Some(h) = &r.history {
            let _ = writeln!(s, "  history: {} records, {} mSv", h.records, h.cumulative_msv);
        }
        if let Some(rec) = &r.recorded {
            let _ = writeln!(
                s,
                "  recorded: {} {} {} mSv -> {}",
                rec.record_id,
                rec.exam_type,
                rec.effective_msv,
                rec.stored_in.join(", ")
            );
        }
        if let Some(o) = &r.sync {
            let moved: Vec<String> = o.transferred.iter().map(|(k, v)| format!("{k}+{v}")).collect();
            let _ = writeln!(
                s,
                "  transferred: {}",
                if moved.is_empty() { "none".to_string() } else { moved.join(", ") }
            );
            for f in &o.faults {
                let id = f.record_id.as_ref().map(|r| r.to_string()).unwrap_or_else(|| "?".into());
                let _ = writeln!(s, "  fault: {} {} {}", f.store, id, f.code);
            }
        }
        let stores: Vec<String> = r
            .stores
            .iter()
            .map(|(k, v)| format!("{k}={}", v.map(|n| n.to_string()).unwrap_or_else(|| "-".into())))
            .collect();
        let _ = writeln!(s, "  stores: {}", stores.join(" "));
    }
    s
}

/// A random scenario: visits with random connectivity and card presence,
/// random investigations and ad-hoc syncs. Cards are never lost, so every
/// created record stays held somewhere.
pub fn random_scenario(seed: u64, events: usize) -> ScenarioFile {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let facilities: Vec<String> = (0..rng.random_range(1..=3)).map(|i| format!("H{i}")).collect();
    let patients: Vec<PatientSpec> = (0..rng.random_range(1..=4))
        .map(|i| PatientSpec { id: PatientId::new(format!("P{i}")), card: rng.random_bool(0.7), age: Some(rng.random_range(1..95)) })
        .collect();
    let operators: Vec<OperatorSpec> =
        facilities.iter().map(|f| OperatorSpec { id: format!("op-{f}"), facility: f.clone() }).collect();
    let start = DateTime::parse_from_rfc3339("2025-01-06T08:00:00Z").expect("valid literal").with_timezone(&Utc);
    let exams = ["chest", "head", "abdomen", "spine", "neck"];
    let mut at = start;
    let mut out = Vec::with_capacity(events);
    for _ in 0..events {
        at += Duration::hours(rng.random_range(1..48));
        let p = &patients[rng.random_range(0..patients.len())];
        let f = &facilities[rng.random_range(0..facilities.len())];
        let roll = rng.random_range(0..100);
        if roll < 70 {
            let card_present = p.card && rng.random_bool(0.5);
            let local_reachable = rng.random_bool(0.85);
            let central_reachable = rng.random_bool(0.5);
            let can_record = card_present || local_reachable || central_reachable;
            let investigation = (can_record && rng.random_bool(0.8)).then(|| {
                let exam = exams[rng.random_range(0..exams.len())];
                PlannedInvestigation { exam_type: exam.to_string(), input: DoseInput::Catalog { exam: exam.to_string() } }
            });
            out.push(Event::Visit(Visit {
                at,
                patient: p.id.clone(),
                facility: f.clone(),
                operator: Some(format!("op-{f}")),
                card_present,
                local_reachable,
                central_reachable,
                investigation,
            }));
        } else {
            let mut refs: Vec<StoreRef> = facilities.iter().map(|f| StoreRef::Local(f.clone())).collect();
            refs.push(StoreRef::Central);
            refs.extend(patients.iter().filter(|p| p.card).map(|p| StoreRef::Card(p.id.clone())));
            let a = refs[rng.random_range(0..refs.len())].clone();
            let b = refs[rng.random_range(0..refs.len())].clone();
            if a != b {
                let patient = match (&a, &b) {
                    (StoreRef::Card(p), _) | (_, StoreRef::Card(p)) => Some(p.clone()),
                    _ => None,
                };
                out.push(Event::Sync { at, a, b, patient });
            }
        }
    }
    ScenarioFile {
        name: format!("random-{seed}"),
        description: String::new(),
        world: WorldConfig { seed, start, card_capacity: DEFAULT_CARD_CAPACITY, facilities, patients, operators },
        events: out,
    }
}

/// Record ids held by each replica, keyed by store name.
pub fn replica_sets(world: &World) -> BTreeMap<String, BTreeSet<RecordId>> {
    let mut out = BTreeMap::new();
    out.insert(CENTRAL_ID.to_string(), world.central.id_set());
    for (f, s) in &world.locals {
        out.insert(StoreRef::Local(f.clone()).to_string(), s.id_set());
    }
    for (p, c) in &world.cards {
        out.insert(StoreRef::Card(p.clone()).to_string(), c.store().id_set());
    }
    out
}
