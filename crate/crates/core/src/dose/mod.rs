//! Radiological dose arithmetic.
//!
//! Converts raw machine output (DAP for radiography, DLP or CTDI_vol and
//! scan length for CT) into effective dose, and places doses against the
//! reference tables: tissue weights, age-risk multipliers, indicative
//! effect bands, the CT catalog and dose limits.
//!
//! Everything here is a pure function of its inputs. [`DoseEngine`] only
//! bundles the loaded tables.

mod engine;
mod limits;
mod registry;
mod units;

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use engine::{
    age_risk_band, age_risk_multiplier, chest_equivalents, classify_threshold, compute_dlp, ct_reference_dose,
    effective_dose_from_dap, effective_dose_from_dlp, CtScanParameters, DoseInput, RadiographyParameters,
    PA_CHEST_MSV, PHOTON_RADIATION_WEIGHT,
};
pub use limits::{check_limits, Exposure, LimitFlag, LimitKind, LimitPolicy, SubjectKind, AVERAGING_YEARS, YEAR_DAYS};
pub use registry::{
    AgeRiskBand, AgeRiskTable, CtCatalog, CtCatalogEntry, ExamTissueMap, KFactor, KFactorTable, ThresholdBand,
    ThresholdTable, TissueFactor, TissueRegistry,
};
pub use units::{DoseQuantity, DoseUnit};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DoseError {
    #[error("unit mismatch: expected {expected}, found {found}")]
    UnitMismatch { expected: DoseUnit, found: DoseUnit },
    #[error("unknown unit {0:?}")]
    UnknownUnit(String),
    #[error("dose must be non-negative, got {0}")]
    Negative(f64),
    #[error("dose must be finite")]
    NonFinite,
    #[error("{0}")]
    Domain(String),
    #[error("missing factor: {0}")]
    MissingFactor(String),
    #[error("no catalog entry for exam {0:?}")]
    MissingCatalogEntry(String),
    #[error("tissue listed more than once: {0}")]
    DuplicateTissue(String),
    #[error("invalid {table} table: {reason}")]
    InvalidTable { table: String, reason: String },
}

/// The loaded reference tables plus the operations that need them.
#[derive(Debug, Clone)]
pub struct DoseEngine {
    pub tissues: TissueRegistry,
    pub age_bands: AgeRiskTable,
    pub thresholds: ThresholdTable,
    pub catalog: CtCatalog,
    pub k_factors: KFactorTable,
    pub exam_tissues: ExamTissueMap,
    version: String,
}

impl Default for DoseEngine {
    fn default() -> Self {
        Self::builtin()
    }
}

impl DoseEngine {
    pub fn builtin() -> Self {
        let tissues = TissueRegistry::builtin();
        let exam_tissues = ExamTissueMap::builtin(&tissues);
        Self::from_parts(
            tissues,
            AgeRiskTable::builtin(),
            ThresholdTable::builtin(),
            CtCatalog::builtin(),
            KFactorTable::builtin(),
            exam_tissues,
        )
    }

    /// Loads every table found in `dir` (`tissues.toml`, `age_bands.toml`,
    /// `thresholds.toml`, `ct_catalog.toml`, `k_factors.toml`,
    /// `exam_tissues.toml`); missing files fall back to the built-ins.
    pub fn load_dir(dir: &Path) -> Result<Self, DoseError> {
        let file = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        let tissues = match file("tissues.toml") {
            Some(p) => TissueRegistry::load(&p)?,
            None => TissueRegistry::builtin(),
        };
        let exam_tissues = match file("exam_tissues.toml") {
            Some(p) => ExamTissueMap::load(&p, &tissues)?,
            None => ExamTissueMap::builtin(&tissues),
        };
        Ok(Self::from_parts(
            tissues,
            file("age_bands.toml").map(|p| AgeRiskTable::load(&p)).transpose()?.unwrap_or_else(AgeRiskTable::builtin),
            file("thresholds.toml").map(|p| ThresholdTable::load(&p)).transpose()?.unwrap_or_else(ThresholdTable::builtin),
            file("ct_catalog.toml").map(|p| CtCatalog::load(&p)).transpose()?.unwrap_or_else(CtCatalog::builtin),
            file("k_factors.toml").map(|p| KFactorTable::load(&p)).transpose()?.unwrap_or_else(KFactorTable::builtin),
            exam_tissues,
        ))
    }

    pub fn with_k_factors(self, k_factors: KFactorTable) -> Self {
        Self::from_parts(self.tissues, self.age_bands, self.thresholds, self.catalog, k_factors, self.exam_tissues)
    }

    fn from_parts(
        tissues: TissueRegistry,
        age_bands: AgeRiskTable,
        thresholds: ThresholdTable,
        catalog: CtCatalog,
        k_factors: KFactorTable,
        exam_tissues: ExamTissueMap,
    ) -> Self {
        let mut h = Sha256::new();
        h.update(k_factors.fingerprint().as_bytes());
        for f in tissues.factors() {
            h.update(f.key.as_bytes());
            h.update(f.weight.to_bits().to_be_bytes());
            for m in &f.members {
                h.update(m.as_bytes());
            }
        }
        for e in catalog.entries() {
            h.update(e.key.as_bytes());
            h.update(e.effective_msv.to_bits().to_be_bytes());
        }
        let digest = h.finalize();
        let tag: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
        let version = format!("radsafe-dose/{}+{tag}", env!("CARGO_PKG_VERSION"));
        Self { tissues, age_bands, thresholds, catalog, k_factors, exam_tissues, version }
    }

    /// Identifies the conversion code together with the tables it uses. Two
    /// engines with equal versions compute identical doses.
    pub fn version(&self) -> &str {
        &self.version
    }

    /// Effective dose for any supported raw input.
    pub fn effective_dose(&self, input: &DoseInput) -> Result<DoseQuantity, DoseError> {
        match input {
            DoseInput::Radiography(p) => effective_dose_from_dap(p, &self.tissues),
            DoseInput::CtScan(p) => effective_dose_from_dlp(&compute_dlp(p)?, &p.anatomy, &self.k_factors),
            DoseInput::CtDlp { dlp, anatomy } => effective_dose_from_dlp(dlp, anatomy, &self.k_factors),
            DoseInput::Catalog { exam } => ct_reference_dose(exam, &self.catalog),
        }
    }

    pub fn age_risk_multiplier(&self, age_years: i64) -> Result<f64, DoseError> {
        age_risk_multiplier(age_years, &self.age_bands)
    }

    pub fn classify_threshold(&self, total: &DoseQuantity) -> Result<&ThresholdBand, DoseError> {
        classify_threshold(total, &self.thresholds)
    }

    pub fn ct_reference_dose(&self, exam: &str) -> Result<DoseQuantity, DoseError> {
        ct_reference_dose(exam, &self.catalog)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_tracks_tables() {
        let a = DoseEngine::builtin();
        let b = DoseEngine::builtin();
        assert_eq!(a.version(), b.version());
        let k = KFactorTable::from_toml("[[factor]]\nanatomy = \"head\"\nk = 0.0021\n").unwrap();
        let c = DoseEngine::builtin().with_k_factors(k);
        assert_ne!(a.version(), c.version());
    }

    #[test]
    fn load_dir_overrides_only_present_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("k_factors.toml"), "[[factor]]\nanatomy = \"knee\"\nk = 0.0001\n").unwrap();
        let e = DoseEngine::load_dir(dir.path()).unwrap();
        assert!(e.k_factors.get("knee").is_some());
        assert!(e.k_factors.get("head").is_none());
        assert_eq!(e.catalog.entries().len(), 11);
    }

    #[test]
    fn effective_dose_dispatch() {
        let e = DoseEngine::builtin();
        let catalog = e.effective_dose(&DoseInput::Catalog { exam: "head".into() }).unwrap();
        assert_eq!(catalog.value(), 2.0);
        let scan = DoseInput::CtScan(CtScanParameters {
            ctdi_vol: DoseQuantity::mgy(50.0).unwrap(),
            scan_length_cm: 20.0,
            anatomy: "head".into(),
        });
        assert!((e.effective_dose(&scan).unwrap().value() - 2.0).abs() < 1e-12);
    }
}
