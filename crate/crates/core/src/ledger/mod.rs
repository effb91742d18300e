//! Signed investigation records and everything derived from them.

mod log;
mod profile;
mod record;
mod report;

use std::io;

use thiserror::Error;

pub use log::{DurableMarks, EnvelopeLog, LineFile, QuarantineEntry, QuarantineLog, SNAPSHOT_EVERY};
pub use profile::{
    build_profile, profile_from_records, whatif, AgeAdjustedRisk, BandView, PatientDoseProfile, ProfileEntry,
    Projection, ProposedExam, ACUTE_SCALE_CAVEAT, WINDOW_ALL_TIME, WINDOW_TRAILING_5_YEARS, WINDOW_TRAILING_YEAR,
};
pub use record::{
    create_record, create_record_with_id, InvestigationInputs, InvestigationRecord, Modality, PatientId, RecordId,
    RecordKind, SignedEnvelope,
};
pub use report::{
    catalog_medium_doses, default_medium_doses, medium_doses_from_period, periodic_report, preceding_period, MediumDose,
    MediumDoseSource,
    PeriodicReport, ReportRow, ReportTotals,
};

use crate::canonical::CanonicalError;
use crate::dose::{DoseEngine, DoseError};
use crate::pki::{EnvelopeVerifier, PkiError, RejectReason, TrustStore};

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error(transparent)]
    Dose(#[from] DoseError),
    #[error("signer not authorized: {0}")]
    Unauthorized(RejectReason),
    #[error(transparent)]
    Signing(#[from] PkiError),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error("integrity failure{}: {reason}", record_id.as_ref().map(|r| format!(" in record {r}")).unwrap_or_default())]
    Integrity { record_id: Option<RecordId>, reason: RejectReason },
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("corrupt log {path} at byte {offset}: {reason}")]
    CorruptLog { path: String, offset: u64, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Signature and chain checks, plus a recomputation of the stored dose
/// when the record was made by this engine version.
pub struct RecordVerifier<'a> {
    pub trust: &'a TrustStore,
    pub engine: &'a DoseEngine,
}

/// Recomputed doses may differ from stored ones by float noise only.
const DOSE_RECOMPUTE_TOLERANCE: f64 = 1e-9;

impl EnvelopeVerifier for RecordVerifier<'_> {
    fn check(&self, envelope: &SignedEnvelope) -> Result<InvestigationRecord, RejectReason> {
        let record = self.trust.check(envelope)?;
        match record.recompute(self.engine) {
            None => Ok(record),
            Some(Ok(d)) if d.unit() == record.effective_dose.unit()
                && (d.value() - record.effective_msv()).abs() <= DOSE_RECOMPUTE_TOLERANCE * d.value().abs().max(1.0) =>
            {
                Ok(record)
            }
            Some(_) => Err(RejectReason::DoseMismatch),
        }
    }
}
