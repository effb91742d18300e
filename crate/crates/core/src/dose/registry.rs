//! Reference tables loaded from structured text files.
//!
//! Every table ships with a built-in default (the files under `data/`) and
//! can be replaced at runtime by a file with the same schema, so a
//! physicist can amend factors without rebuilding. Each loader validates
//! the structural invariants of its table before handing it out.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DoseError;

pub const DEFAULT_TISSUES: &str = include_str!("../../data/tissues.toml");
pub const DEFAULT_AGE_BANDS: &str = include_str!("../../data/age_bands.toml");
pub const DEFAULT_THRESHOLDS: &str = include_str!("../../data/thresholds.toml");
pub const DEFAULT_CT_CATALOG: &str = include_str!("../../data/ct_catalog.toml");
pub const DEFAULT_K_FACTORS: &str = include_str!("../../data/k_factors.toml");
pub const DEFAULT_EXAM_TISSUES: &str = include_str!("../../data/exam_tissues.toml");

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

fn parse_toml<T: for<'de> Deserialize<'de>>(table: &str, text: &str) -> Result<T, DoseError> {
    toml::from_str(text).map_err(|e| DoseError::InvalidTable { table: table.to_string(), reason: e.to_string() })
}

fn read_file(table: &str, path: &Path) -> Result<String, DoseError> {
    std::fs::read_to_string(path).map_err(|e| DoseError::InvalidTable {
        table: table.to_string(),
        reason: format!("{}: {e}", path.display()),
    })
}

fn invalid(table: &str, reason: impl Into<String>) -> DoseError {
    DoseError::InvalidTable { table: table.to_string(), reason: reason.into() }
}

// ---------------------------------------------------------------------------
// Tissue weighting factors

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueFactor {
    pub key: String,
    pub name: String,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<String>,
}

#[derive(Deserialize)]
struct TissueFile {
    tissue: Vec<TissueFactor>,
}

/// Tissue weighting factors keyed by tissue.
#[derive(Debug, Clone)]
pub struct TissueRegistry {
    factors: Vec<TissueFactor>,
    /// member key -> index of the grouped entry that owns it
    member_of: BTreeMap<String, usize>,
}

impl TissueRegistry {
    pub fn builtin() -> Self {
        Self::from_toml(DEFAULT_TISSUES).expect("built-in tissue table is valid")
    }

    pub fn load(path: &Path) -> Result<Self, DoseError> {
        Self::from_toml(&read_file("tissues", path)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, DoseError> {
        let file: TissueFile = parse_toml("tissues", text)?;
        Self::new(file.tissue)
    }

    pub fn new(factors: Vec<TissueFactor>) -> Result<Self, DoseError> {
        let mut seen = BTreeSet::new();
        let mut member_of = BTreeMap::new();
        for (idx, f) in factors.iter().enumerate() {
            if !(0.0..=1.0).contains(&f.weight) {
                return Err(invalid("tissues", format!("weight of {} outside [0, 1]", f.key)));
            }
            if !seen.insert(f.key.clone()) {
                return Err(invalid("tissues", format!("duplicate tissue {}", f.key)));
            }
            for m in &f.members {
                if !seen.insert(m.clone()) {
                    return Err(invalid("tissues", format!("duplicate tissue {m}")));
                }
                member_of.insert(m.clone(), idx);
            }
        }
        let total: f64 = factors.iter().map(|f| f.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(invalid("tissues", format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { factors, member_of })
    }

    pub fn factors(&self) -> &[TissueFactor] {
        &self.factors
    }

    pub fn total_weight(&self) -> f64 {
        self.factors.iter().map(|f| f.weight).sum()
    }

    /// Every tissue key the registry accepts, grouped entries and members alike.
    pub fn tissue_keys(&self) -> BTreeSet<String> {
        self.factors
            .iter()
            .flat_map(|f| std::iter::once(f.key.clone()).chain(f.members.iter().cloned()))
            .collect()
    }

    /// Weight attributed to a single tissue. Members of a grouped entry
    /// share the group weight equally.
    pub fn weight_of(&self, tissue: &str) -> Result<f64, DoseError> {
        if let Some(f) = self.factors.iter().find(|f| f.key == tissue) {
            return Ok(f.weight);
        }
        match self.member_of.get(tissue) {
            Some(&idx) => {
                let group = &self.factors[idx];
                Ok(group.weight / group.members.len() as f64)
            }
            None => Err(DoseError::MissingFactor(format!("tissue {tissue}"))),
        }
    }

    /// Σ w_T over a list of exposed tissues. Duplicates, and a group listed
    /// together with one of its own members, are rejected.
    pub fn weight_sum(&self, tissues: &[String]) -> Result<f64, DoseError> {
        if tissues.is_empty() {
            return Err(DoseError::Domain("exposed tissue list is empty".into()));
        }
        let mut seen = BTreeSet::new();
        let mut sum = 0.0;
        for t in tissues {
            let w = self.weight_of(t)?;
            if !seen.insert(t.as_str()) {
                return Err(DoseError::DuplicateTissue(t.clone()));
            }
            sum += w;
        }
        for (member, &idx) in &self.member_of {
            if seen.contains(member.as_str()) && seen.contains(self.factors[idx].key.as_str()) {
                return Err(DoseError::DuplicateTissue(member.clone()));
            }
        }
        Ok(sum)
    }
}

// ---------------------------------------------------------------------------
// Age risk bands

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeRiskBand {
    pub lower: u32,
    #[serde(default)]
    pub upper: Option<u32>,
    pub multiplier: f64,
    pub label: String,
}

impl AgeRiskBand {
    pub fn contains(&self, age: u32) -> bool {
        age >= self.lower && self.upper.is_none_or(|u| age < u)
    }
}

#[derive(Deserialize)]
struct AgeFile {
    band: Vec<AgeRiskBand>,
}

#[derive(Debug, Clone)]
pub struct AgeRiskTable {
    bands: Vec<AgeRiskBand>,
}

impl AgeRiskTable {
    pub fn builtin() -> Self {
        Self::from_toml(DEFAULT_AGE_BANDS).expect("built-in age table is valid")
    }

    pub fn load(path: &Path) -> Result<Self, DoseError> {
        Self::from_toml(&read_file("age_bands", path)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, DoseError> {
        let file: AgeFile = parse_toml("age_bands", text)?;
        Self::new(file.band)
    }

    pub fn new(mut bands: Vec<AgeRiskBand>) -> Result<Self, DoseError> {
        bands.sort_by_key(|b| b.lower);
        let mut expected = 0u32;
        for (i, b) in bands.iter().enumerate() {
            if b.lower != expected {
                return Err(invalid("age_bands", format!("gap or overlap at age {expected}")));
            }
            if !(b.multiplier.is_finite() && b.multiplier >= 0.0) {
                return Err(invalid("age_bands", format!("bad multiplier in band {}", b.label)));
            }
            match b.upper {
                Some(u) if u <= b.lower => return Err(invalid("age_bands", format!("empty band {}", b.label))),
                Some(u) => expected = u,
                None if i + 1 != bands.len() => {
                    return Err(invalid("age_bands", "only the last band may be open"));
                }
                None => return Ok(Self { bands }),
            }
        }
        Err(invalid("age_bands", "last band must be open-ended"))
    }

    pub fn bands(&self) -> &[AgeRiskBand] {
        &self.bands
    }

    pub fn band_for(&self, age: u32) -> &AgeRiskBand {
        self.bands
            .iter()
            .find(|b| b.contains(age))
            .expect("validated bands cover every age")
    }
}

// ---------------------------------------------------------------------------
// Threshold bands

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBand {
    pub lower_msv: f64,
    #[serde(default)]
    pub upper_msv: Option<f64>,
    pub range: String,
    pub effect: String,
}

impl ThresholdBand {
    pub fn contains(&self, msv: f64) -> bool {
        msv >= self.lower_msv && self.upper_msv.is_none_or(|u| msv < u)
    }
}

#[derive(Deserialize)]
struct ThresholdFile {
    band: Vec<ThresholdBand>,
}

#[derive(Debug, Clone)]
pub struct ThresholdTable {
    bands: Vec<ThresholdBand>,
}

impl ThresholdTable {
    pub fn builtin() -> Self {
        Self::from_toml(DEFAULT_THRESHOLDS).expect("built-in threshold table is valid")
    }

    pub fn load(path: &Path) -> Result<Self, DoseError> {
        Self::from_toml(&read_file("thresholds", path)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, DoseError> {
        let file: ThresholdFile = parse_toml("thresholds", text)?;
        Self::new(file.band)
    }

    pub fn new(mut bands: Vec<ThresholdBand>) -> Result<Self, DoseError> {
        bands.sort_by(|a, b| a.lower_msv.total_cmp(&b.lower_msv));
        let mut expected = 0.0f64;
        for (i, b) in bands.iter().enumerate() {
            if b.lower_msv != expected {
                return Err(invalid("thresholds", format!("gap or overlap at {expected} mSv")));
            }
            match b.upper_msv {
                Some(u) if !(u > b.lower_msv) => {
                    return Err(invalid("thresholds", format!("empty band {}", b.range)))
                }
                Some(u) => expected = u,
                None if i + 1 != bands.len() => {
                    return Err(invalid("thresholds", "only the last band may be open"));
                }
                None => return Ok(Self { bands }),
            }
        }
        Err(invalid("thresholds", "last band must be open-ended"))
    }

    pub fn bands(&self) -> &[ThresholdBand] {
        &self.bands
    }
}

// ---------------------------------------------------------------------------
// CT reference catalog

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtCatalogEntry {
    pub key: String,
    pub name: String,
    pub effective_msv: f64,
    pub chest_equivalents: u32,
}

#[derive(Deserialize)]
struct CatalogFile {
    exam: Vec<CtCatalogEntry>,
}

#[derive(Debug, Clone)]
pub struct CtCatalog {
    entries: Vec<CtCatalogEntry>,
}

impl CtCatalog {
    pub fn builtin() -> Self {
        Self::from_toml(DEFAULT_CT_CATALOG).expect("built-in CT catalog is valid")
    }

    pub fn load(path: &Path) -> Result<Self, DoseError> {
        Self::from_toml(&read_file("ct_catalog", path)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, DoseError> {
        let file: CatalogFile = parse_toml("ct_catalog", text)?;
        let mut keys = BTreeSet::new();
        for e in &file.exam {
            if !keys.insert(e.key.as_str()) {
                return Err(invalid("ct_catalog", format!("duplicate exam {}", e.key)));
            }
            if !(e.effective_msv.is_finite() && e.effective_msv >= 0.0) {
                return Err(invalid("ct_catalog", format!("bad dose for {}", e.key)));
            }
        }
        Ok(Self { entries: file.exam })
    }

    pub fn entries(&self) -> &[CtCatalogEntry] {
        &self.entries
    }

    pub fn get(&self, exam: &str) -> Option<&CtCatalogEntry> {
        self.entries.iter().find(|e| e.key == exam)
    }
}

// ---------------------------------------------------------------------------
// DLP conversion factors

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KFactor {
    pub anatomy: String,
    pub k: f64,
    #[serde(default)]
    pub reference_dlp: Option<f64>,
}

#[derive(Deserialize)]
struct KFile {
    factor: Vec<KFactor>,
}

/// Anatomy → effective dose per unit DLP, mSv/(mGy·cm).
#[derive(Debug, Clone)]
pub struct KFactorTable {
    factors: BTreeMap<String, KFactor>,
    fingerprint: String,
}

impl KFactorTable {
    pub fn builtin() -> Self {
        Self::from_toml(DEFAULT_K_FACTORS).expect("built-in k-factor table is valid")
    }

    pub fn load(path: &Path) -> Result<Self, DoseError> {
        Self::from_toml(&read_file("k_factors", path)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, DoseError> {
        let file: KFile = parse_toml("k_factors", text)?;
        Self::new(file.factor)
    }

    pub fn new(list: Vec<KFactor>) -> Result<Self, DoseError> {
        let mut factors = BTreeMap::new();
        for f in list {
            if !(f.k.is_finite() && f.k > 0.0) {
                return Err(invalid("k_factors", format!("k for {} must be > 0", f.anatomy)));
            }
            let anatomy = f.anatomy.clone();
            if factors.insert(anatomy.clone(), f).is_some() {
                return Err(invalid("k_factors", format!("duplicate anatomy {anatomy}")));
            }
        }
        // Fingerprint over the parsed values so formatting-only edits to the
        // file do not change the engine version.
        let mut hasher = Sha256::new();
        for (anatomy, f) in &factors {
            hasher.update(anatomy.as_bytes());
            hasher.update([0]);
            hasher.update(f.k.to_bits().to_be_bytes());
        }
        let digest = hasher.finalize();
        let fingerprint = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self { factors, fingerprint })
    }

    pub fn get(&self, anatomy: &str) -> Option<&KFactor> {
        self.factors.get(anatomy)
    }

    pub fn factors(&self) -> impl Iterator<Item = &KFactor> {
        self.factors.values()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
}

// ---------------------------------------------------------------------------
// Exam -> tissues map (non-authoritative)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamTissues {
    pub exam: String,
    pub tissues: Vec<String>,
}

#[derive(Deserialize)]
struct ExamTissueFile {
    exam: Vec<ExamTissues>,
}

#[derive(Debug, Clone)]
pub struct ExamTissueMap {
    map: BTreeMap<String, Vec<String>>,
}

impl ExamTissueMap {
    pub fn builtin(tissues: &TissueRegistry) -> Self {
        Self::from_toml(DEFAULT_EXAM_TISSUES, tissues).expect("built-in exam map is valid")
    }

    pub fn load(path: &Path, tissues: &TissueRegistry) -> Result<Self, DoseError> {
        Self::from_toml(&read_file("exam_tissues", path)?, tissues)
    }

    pub fn from_toml(text: &str, tissues: &TissueRegistry) -> Result<Self, DoseError> {
        let file: ExamTissueFile = parse_toml("exam_tissues", text)?;
        let mut map = BTreeMap::new();
        for e in file.exam {
            tissues.weight_sum(&e.tissues).map_err(|err| invalid("exam_tissues", format!("{}: {err}", e.exam)))?;
            map.insert(e.exam, e.tissues);
        }
        Ok(Self { map })
    }

    pub fn tissues_for(&self, exam: &str) -> Option<&[String]> {
        self.map.get(exam).map(Vec::as_slice)
    }
}
