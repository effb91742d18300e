//! Dose conversions: DLP from CT parameters, effective dose from DLP or
//! DAP, age-risk multipliers, threshold bands and chest-radiograph
//! equivalents.

use serde::{Deserialize, Serialize};

use super::registry::{AgeRiskBand, AgeRiskTable, CtCatalog, KFactorTable, ThresholdBand, ThresholdTable, TissueRegistry};
use super::units::{DoseQuantity, DoseUnit};
use super::DoseError;

/// Effective dose of one PA chest radiograph, mSv. Every catalog row pairs
/// its dose with a radiograph count at this ratio (2 mSv ↔ 100).
pub const PA_CHEST_MSV: f64 = 0.02;

/// Radiation weighting factor applied to organ absorbed dose. Diagnostic
/// X-rays are photons, so 1 mGy of organ dose is 1 mSv of equivalent dose.
pub const PHOTON_RADIATION_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtScanParameters {
    /// Volume CT dose index, mGy.
    pub ctdi_vol: DoseQuantity,
    /// Slice thickness × number of slices, cm.
    pub scan_length_cm: f64,
    /// Exam/anatomy key used to select the DLP conversion factor.
    pub anatomy: String,
}

impl CtScanParameters {
    pub fn validate(&self) -> Result<(), DoseError> {
        self.ctdi_vol.expect_unit(DoseUnit::Mgy)?;
        if !(self.scan_length_cm.is_finite() && self.scan_length_cm > 0.0) {
            return Err(DoseError::Domain(format!("scan length must be > 0 cm, got {}", self.scan_length_cm)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiographyParameters {
    /// Dose-area product, mGy·cm².
    pub dap: DoseQuantity,
    pub irradiated_area_cm2: f64,
    pub exposed_tissues: Vec<String>,
}

impl RadiographyParameters {
    pub fn validate(&self, tissues: &TissueRegistry) -> Result<(), DoseError> {
        self.dap.expect_unit(DoseUnit::MgyCm2)?;
        if !(self.irradiated_area_cm2.is_finite() && self.irradiated_area_cm2 > 0.0) {
            return Err(DoseError::Domain(format!(
                "irradiated area must be > 0 cm², got {}",
                self.irradiated_area_cm2
            )));
        }
        tissues.weight_sum(&self.exposed_tissues)?;
        Ok(())
    }
}

/// Raw machine output (or catalog reference) an investigation's effective
/// dose is derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DoseInput {
    Radiography(RadiographyParameters),
    CtScan(CtScanParameters),
    /// DLP as read from the CT console.
    CtDlp { dlp: DoseQuantity, anatomy: String },
    /// No machine dose available; typical dose of a catalog exam.
    Catalog { exam: String },
}

/// DLP = CTDI_vol × scan length.
pub fn compute_dlp(params: &CtScanParameters) -> Result<DoseQuantity, DoseError> {
    params.validate()?;
    DoseQuantity::mgy_cm(params.ctdi_vol.value() * params.scan_length_cm)
}

/// Effective dose = DLP × k(anatomy). Unknown anatomies are an error.
pub fn effective_dose_from_dlp(
    dlp: &DoseQuantity,
    anatomy: &str,
    k_table: &KFactorTable,
) -> Result<DoseQuantity, DoseError> {
    let value = dlp.expect_unit(DoseUnit::MgyCm)?;
    let k = k_table
        .get(anatomy)
        .ok_or_else(|| DoseError::MissingFactor(format!("k-factor for anatomy {anatomy}")))?;
    DoseQuantity::msv(value * k.k)
}

/// Skin dose = DAP / area; effective dose = skin dose × w_R × Σ w_T over
/// the exposed tissues. No intermediate rounding.
pub fn effective_dose_from_dap(
    params: &RadiographyParameters,
    tissues: &TissueRegistry,
) -> Result<DoseQuantity, DoseError> {
    params.validate(tissues)?;
    let skin_dose_mgy = params.dap.value() / params.irradiated_area_cm2;
    let weight = tissues.weight_sum(&params.exposed_tissues)?;
    DoseQuantity::msv(skin_dose_mgy * PHOTON_RADIATION_WEIGHT * weight)
}

pub fn age_risk_multiplier(age_years: i64, table: &AgeRiskTable) -> Result<f64, DoseError> {
    Ok(age_risk_band(age_years, table)?.multiplier)
}

pub fn age_risk_band(age_years: i64, table: &AgeRiskTable) -> Result<&AgeRiskBand, DoseError> {
    if age_years < 0 {
        return Err(DoseError::Domain(format!("age must be >= 0, got {age_years}")));
    }
    let age = u32::try_from(age_years).unwrap_or(u32::MAX);
    Ok(table.band_for(age))
}

pub fn classify_threshold<'t>(total: &DoseQuantity, table: &'t ThresholdTable) -> Result<&'t ThresholdBand, DoseError> {
    let msv = total.expect_unit(DoseUnit::Msv)?;
    Ok(table
        .bands()
        .iter()
        .find(|b| b.contains(msv))
        .expect("validated bands cover [0, inf)"))
}

/// Number of PA chest radiographs delivering the same effective dose.
pub fn chest_equivalents(effective: &DoseQuantity) -> Result<f64, DoseError> {
    Ok(effective.expect_unit(DoseUnit::Msv)? / PA_CHEST_MSV)
}

pub fn ct_reference_dose(exam: &str, catalog: &CtCatalog) -> Result<DoseQuantity, DoseError> {
    let entry = catalog
        .get(exam)
        .ok_or_else(|| DoseError::MissingCatalogEntry(exam.to_string()))?;
    DoseQuantity::msv(entry.effective_msv)
}
