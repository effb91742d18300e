//! Investigation records and their signed envelopes.

use std::fmt;

use chrono::{DateTime, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::LedgerError;
use crate::canonical::{base64_bytes, from_canonical_slice, to_canonical_vec};
use crate::dose::{DoseEngine, DoseInput, DoseQuantity};
use crate::pki::{CertId, RecordSigner, RejectReason, Role, TrustStore};

/// 128-bit random identifier rendered as a UUID (version 4).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordId(pub String);

impl RecordId {
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 16];
        rng.fill_bytes(&mut bytes);
        RecordId(uuid::Builder::from_random_bytes(bytes).into_uuid().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Pseudonymous patient identifier. The mapping to a national identity is
/// held only by the central registry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatientId(pub String);

impl PatientId {
    pub fn new(id: impl Into<String>) -> Self {
        PatientId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PatientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Modality {
    Radiography,
    Ct,
}

impl Modality {
    pub fn of(input: &DoseInput) -> Self {
        match input {
            DoseInput::Radiography(_) => Modality::Radiography,
            DoseInput::CtScan(_) | DoseInput::CtDlp { .. } | DoseInput::Catalog { .. } => Modality::Ct,
        }
    }
}

/// Records are never edited. An erratum is a new record that names the
/// one it replaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RecordKind {
    Original,
    Correction { corrects: RecordId, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvestigationRecord {
    pub record_id: RecordId,
    pub kind: RecordKind,
    pub patient_id: PatientId,
    /// Age at the time of the investigation, if known.
    pub patient_age_years: Option<u32>,
    pub performed_at: DateTime<Utc>,
    pub facility_id: String,
    pub operator_id: String,
    pub exam_type: String,
    pub modality: Modality,
    pub raw_input: DoseInput,
    pub effective_dose: DoseQuantity,
    pub engine_version: String,
}

impl InvestigationRecord {
    pub fn effective_msv(&self) -> f64 {
        self.effective_dose.value()
    }

    pub fn sort_key(&self) -> (DateTime<Utc>, &RecordId) {
        (self.performed_at, &self.record_id)
    }

    /// Recomputes the effective dose from the raw input. `None` when the
    /// record was made by a different engine version.
    pub fn recompute(&self, engine: &DoseEngine) -> Option<Result<DoseQuantity, LedgerError>> {
        (self.engine_version == engine.version()).then(|| engine.effective_dose(&self.raw_input).map_err(LedgerError::from))
    }
}

/// What the operator supplies when an investigation has been performed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvestigationInputs {
    pub patient_id: PatientId,
    #[serde(default)]
    pub patient_age_years: Option<u32>,
    pub performed_at: DateTime<Utc>,
    pub facility_id: String,
    pub operator_id: String,
    pub exam_type: String,
    pub raw_input: DoseInput,
    #[serde(default = "original")]
    pub kind: RecordKind,
}

fn original() -> RecordKind {
    RecordKind::Original
}

/// Canonical record bytes, the signature over them, and the signer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignedEnvelope {
    #[serde(with = "base64_bytes")]
    pub payload: Vec<u8>,
    #[serde(with = "base64_bytes")]
    pub signature: Vec<u8>,
    pub signer_cert_id: CertId,
}

impl SignedEnvelope {
    /// Canonical single-line encoding (no trailing newline).
    pub fn to_line(&self) -> Vec<u8> {
        to_canonical_vec(self).expect("envelope encodes")
    }

    pub fn from_line(line: &[u8]) -> Result<Self, LedgerError> {
        Ok(from_canonical_slice(line)?)
    }

    pub fn decode_record(&self) -> Result<InvestigationRecord, LedgerError> {
        Ok(from_canonical_slice(&self.payload)?)
    }
}

/// Computes the effective dose, encodes the record canonically and has
/// `signer` sign it. The signer's certificate must chain to a trust anchor
/// and be unrevoked at `performed_at`.
pub fn create_record<R: RngCore + ?Sized>(
    inputs: InvestigationInputs,
    engine: &DoseEngine,
    signer: &mut dyn RecordSigner,
    trust: &TrustStore,
    rng: &mut R,
) -> Result<SignedEnvelope, LedgerError> {
    create_record_with_id(RecordId::random(rng), inputs, engine, signer, trust)
}

/// As [`create_record`] with a caller-chosen identifier (idempotent
/// ingestion uses a client-generated id).
pub fn create_record_with_id(
    record_id: RecordId,
    inputs: InvestigationInputs,
    engine: &DoseEngine,
    signer: &mut dyn RecordSigner,
    trust: &TrustStore,
) -> Result<SignedEnvelope, LedgerError> {
    let effective_dose = engine.effective_dose(&inputs.raw_input)?;
    let cert = signer.certificate().clone();
    if !matches!(cert.role(), Role::Professional | Role::Facility) {
        return Err(LedgerError::Unauthorized(RejectReason::SignerNotAuthorized));
    }
    trust.verify_chain(cert.id(), inputs.performed_at).map_err(LedgerError::Unauthorized)?;

    let record = InvestigationRecord {
        record_id,
        kind: inputs.kind,
        patient_id: inputs.patient_id,
        patient_age_years: inputs.patient_age_years,
        performed_at: inputs.performed_at,
        facility_id: inputs.facility_id,
        operator_id: inputs.operator_id,
        exam_type: inputs.exam_type,
        modality: Modality::of(&inputs.raw_input),
        raw_input: inputs.raw_input,
        effective_dose,
        engine_version: engine.version().to_string(),
    };
    let payload = to_canonical_vec(&record)?;
    let signature = signer.sign_payload(&payload, record.performed_at)?;
    Ok(SignedEnvelope { payload, signature, signer_cert_id: cert.id().clone() })
}
