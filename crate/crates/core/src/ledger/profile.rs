//! Per-patient dose profiles and what-if projections.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::record::{InvestigationRecord, Modality, PatientId, RecordId, RecordKind, SignedEnvelope};
use super::LedgerError;
use crate::dose::{
    chest_equivalents, check_limits, DoseEngine, DoseError, DoseInput, DoseQuantity, Exposure, LimitFlag, LimitPolicy,
    SubjectKind, AVERAGING_YEARS, YEAR_DAYS,
};
use crate::pki::EnvelopeVerifier;

/// Reported next to every threshold band: the bands describe acute
/// exposure and overstate the effect of dose accumulated over years.
pub const ACUTE_SCALE_CAVEAT: &str = "acute-scale reference";

pub const WINDOW_TRAILING_YEAR: &str = "trailing_365_days";
pub const WINDOW_TRAILING_5_YEARS: &str = "trailing_5_years";
pub const WINDOW_ALL_TIME: &str = "all_time";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandView {
    pub range: String,
    pub effect: String,
    pub caveat: String,
}

impl BandView {
    fn for_total(total_msv: f64, engine: &DoseEngine) -> Result<Self, DoseError> {
        let band = engine.classify_threshold(&DoseQuantity::msv(total_msv)?)?;
        Ok(Self { range: band.range.clone(), effect: band.effect.clone(), caveat: ACUTE_SCALE_CAVEAT.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub record_id: RecordId,
    pub kind: RecordKind,
    pub performed_at: DateTime<Utc>,
    pub facility_id: String,
    pub exam_type: String,
    pub modality: Modality,
    pub effective_msv: f64,
    pub chest_equivalents: f64,
    /// Replaced by a correction; excluded from totals.
    pub superseded: bool,
}

/// Dose weighted by the age-at-exposure risk multiplier. A display
/// figure only; stored doses are never scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeAdjustedRisk {
    pub risk_weighted_msv: f64,
    pub records_without_age: usize,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientDoseProfile {
    pub patient_id: PatientId,
    pub as_of: DateTime<Utc>,
    pub subject: SubjectKind,
    /// Ordered by (performed_at, record_id).
    pub records: Vec<ProfileEntry>,
    pub cumulative_total_msv: f64,
    pub chest_equivalents: f64,
    pub window_sums: BTreeMap<String, f64>,
    pub threshold_band: BandView,
    pub age_adjusted_risk: AgeAdjustedRisk,
    pub limit_flags: Vec<LimitFlag>,
}

impl PatientDoseProfile {
    fn exposures(&self) -> Vec<Exposure> {
        self.records
            .iter()
            .filter(|e| !e.superseded)
            .map(|e| Exposure { at: e.performed_at, msv: e.effective_msv })
            .collect()
    }
}

/// Records replaced by a correction. When several corrections name the
/// same record, only the latest counts and the others are superseded too.
pub(crate) fn superseded_ids<'a>(records: impl IntoIterator<Item = &'a InvestigationRecord>) -> BTreeSet<RecordId> {
    let mut latest: BTreeMap<&RecordId, &InvestigationRecord> = BTreeMap::new();
    let mut out = BTreeSet::new();
    for r in records {
        if let RecordKind::Correction { corrects, .. } = &r.kind {
            out.insert(corrects.clone());
            match latest.get(corrects) {
                Some(prev) if prev.sort_key() >= r.sort_key() => {
                    out.insert(r.record_id.clone());
                }
                Some(prev) => {
                    out.insert(prev.record_id.clone());
                    latest.insert(corrects, r);
                }
                None => {
                    latest.insert(corrects, r);
                }
            }
        }
    }
    out
}

/// Verifies every envelope, then builds the profile of `patient_id` from
/// the records performed at or before `as_of`.
pub fn build_profile<'a>(
    envelopes: impl IntoIterator<Item = &'a SignedEnvelope>,
    patient_id: &PatientId,
    as_of: DateTime<Utc>,
    policy: &LimitPolicy,
    verifier: &dyn EnvelopeVerifier,
    engine: &DoseEngine,
) -> Result<PatientDoseProfile, LedgerError> {
    let mut records = Vec::new();
    for env in envelopes {
        match verifier.check(env) {
            Ok(r) => records.push(r),
            Err(reason) => {
                let record_id = env.decode_record().ok().map(|r| r.record_id);
                return Err(LedgerError::Integrity { record_id, reason });
            }
        }
    }
    profile_from_records(&records, patient_id, as_of, policy, SubjectKind::Patient, engine)
}

/// Builds a profile from already-verified records.
pub fn profile_from_records(
    records: &[InvestigationRecord],
    patient_id: &PatientId,
    as_of: DateTime<Utc>,
    policy: &LimitPolicy,
    subject: SubjectKind,
    engine: &DoseEngine,
) -> Result<PatientDoseProfile, LedgerError> {
    let mut mine: Vec<&InvestigationRecord> = records
        .iter()
        .filter(|r| &r.patient_id == patient_id && r.performed_at <= as_of)
        .collect();
    mine.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    mine.dedup_by(|a, b| a.record_id == b.record_id);
    let superseded = superseded_ids(mine.iter().copied());

    let mut entries = Vec::with_capacity(mine.len());
    let mut cumulative = 0.0;
    let mut risk_weighted = 0.0;
    let mut without_age = 0;
    for r in &mine {
        let is_superseded = superseded.contains(&r.record_id);
        let msv = r.effective_msv();
        if !is_superseded {
            cumulative += msv;
            match r.patient_age_years {
                Some(age) => risk_weighted += msv * engine.age_risk_multiplier(i64::from(age))?,
                None => without_age += 1,
            }
        }
        entries.push(ProfileEntry {
            record_id: r.record_id.clone(),
            kind: r.kind.clone(),
            performed_at: r.performed_at,
            facility_id: r.facility_id.clone(),
            exam_type: r.exam_type.clone(),
            modality: r.modality,
            effective_msv: msv,
            chest_equivalents: chest_equivalents(&r.effective_dose)?,
            superseded: is_superseded,
        });
    }

    let mut profile = PatientDoseProfile {
        patient_id: patient_id.clone(),
        as_of,
        subject,
        records: entries,
        cumulative_total_msv: cumulative,
        chest_equivalents: chest_equivalents(&DoseQuantity::msv(cumulative)?)?,
        window_sums: BTreeMap::new(),
        threshold_band: BandView::for_total(cumulative, engine)?,
        age_adjusted_risk: AgeAdjustedRisk {
            risk_weighted_msv: risk_weighted,
            records_without_age: without_age,
            note: "dose weighted by age-at-exposure risk multiplier relative to age 30; display only".to_string(),
        },
        limit_flags: Vec::new(),
    };
    let exposures = profile.exposures();
    profile.window_sums = window_sums(&exposures, as_of);
    profile.limit_flags = check_limits(&exposures, subject, policy, as_of);
    Ok(profile)
}

fn window_sums(exposures: &[Exposure], as_of: DateTime<Utc>) -> BTreeMap<String, f64> {
    let sum_since = |start: DateTime<Utc>| exposures.iter().filter(|e| e.at > start).fold(0.0, |acc, e| acc + e.msv);
    let year = Duration::days(YEAR_DAYS);
    BTreeMap::from([
        (WINDOW_TRAILING_YEAR.to_string(), sum_since(as_of - year)),
        (WINDOW_TRAILING_5_YEARS.to_string(), sum_since(as_of - year * AVERAGING_YEARS as i32)),
        (WINDOW_ALL_TIME.to_string(), exposures.iter().fold(0.0, |acc, e| acc + e.msv)),
    ])
}

/// A candidate investigation. Without machine inputs the catalog dose of
/// `exam_type` is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposedExam {
    pub exam_type: String,
    #[serde(default)]
    pub input: Option<DoseInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub patient_id: PatientId,
    pub as_of: DateTime<Utc>,
    pub exam_type: String,
    pub proposed_dose_msv: f64,
    pub current_cumulative_msv: f64,
    pub new_cumulative: f64,
    pub new_band: BandView,
    pub new_flags: Vec<LimitFlag>,
    pub new_window_sums: BTreeMap<String, f64>,
    pub chest_equivalents_delta: f64,
}

/// Projects the profile as if `proposed` were performed at `profile.as_of`.
/// Nothing is recorded.
pub fn whatif(
    profile: &PatientDoseProfile,
    proposed: &ProposedExam,
    engine: &DoseEngine,
    policy: &LimitPolicy,
) -> Result<Projection, LedgerError> {
    let dose = match &proposed.input {
        Some(input) => engine.effective_dose(input)?,
        None => engine.ct_reference_dose(&proposed.exam_type)?,
    };
    let mut exposures = profile.exposures();
    exposures.push(Exposure { at: profile.as_of, msv: dose.value() });
    let new_cumulative = profile.cumulative_total_msv + dose.value();
    Ok(Projection {
        patient_id: profile.patient_id.clone(),
        as_of: profile.as_of,
        exam_type: proposed.exam_type.clone(),
        proposed_dose_msv: dose.value(),
        current_cumulative_msv: profile.cumulative_total_msv,
        new_cumulative,
        new_band: BandView::for_total(new_cumulative, engine)?,
        new_flags: check_limits(&exposures, profile.subject, policy, profile.as_of),
        new_window_sums: window_sums(&exposures, profile.as_of),
        chest_equivalents_delta: chest_equivalents(&dose)?,
    })
}
