//! Periodic dose reports per investigation type.
//!
//! Each type reports the exact sum of its effective doses alongside the
//! legacy estimate `count × medium dose` and the difference between them.
//! The medium dose must come from outside the report window; a mean taken
//! over the same records would make the estimate equal to the sum.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::profile::superseded_ids;
use super::record::InvestigationRecord;
use super::LedgerError;
use crate::dose::CtCatalog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MediumDoseSource {
    /// Mean dose of the type over a reference period.
    ReferencePeriod,
    /// Reference dose from the CT catalog.
    Catalog,
    /// Supplied by the caller.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MediumDose {
    pub msv: f64,
    pub source: MediumDoseSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub exam_type: String,
    pub count: u64,
    pub summed_dose_msv: f64,
    pub mean_dose_msv: f64,
    pub medium_dose_msv: Option<f64>,
    pub medium_dose_source: Option<MediumDoseSource>,
    pub estimate_msv: Option<f64>,
    /// `estimate − sum`; positive when the estimate overstates.
    pub discrepancy_msv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTotals {
    pub count: u64,
    pub summed_dose_msv: f64,
    /// Over the types that have a medium dose.
    pub estimate_msv: f64,
    /// `estimate_msv` minus the sum over the same types.
    pub discrepancy_msv: f64,
    pub unestimated_types: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicReport {
    /// Inclusive.
    pub from: DateTime<Utc>,
    /// Inclusive.
    pub to: DateTime<Utc>,
    /// Sorted by exam type.
    pub rows: Vec<ReportRow>,
    pub totals: ReportTotals,
}

/// The period of equal length ending just before `from`.
pub fn preceding_period(from: DateTime<Utc>, to: DateTime<Utc>) -> (DateTime<Utc>, DateTime<Utc>) {
    let prev_to = from - Duration::nanoseconds(1);
    (prev_to - (to - from), prev_to)
}

fn effective_in<'a>(
    records: &'a [InvestigationRecord],
    from: DateTime<Utc>,
    to: DateTime<Utc>,
) -> impl Iterator<Item = &'a InvestigationRecord> {
    let superseded = superseded_ids(records);
    records
        .iter()
        .filter(move |r| r.performed_at >= from && r.performed_at <= to && !superseded.contains(&r.record_id))
}

/// Mean effective dose per exam type over `[from, to]`.
pub fn medium_doses_from_period(
    records: &[InvestigationRecord],
    from: DateTime<Utc>,
    to: DateTime<Utc>,
) -> BTreeMap<String, MediumDose> {
    let mut acc: BTreeMap<String, (f64, u64)> = BTreeMap::new();
    for r in effective_in(records, from, to) {
        let e = acc.entry(r.exam_type.clone()).or_default();
        e.0 += r.effective_msv();
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (sum, n))| (k, MediumDose { msv: sum / n as f64, source: MediumDoseSource::ReferencePeriod }))
        .collect()
}

pub fn catalog_medium_doses(catalog: &CtCatalog) -> BTreeMap<String, MediumDose> {
    catalog
        .entries()
        .iter()
        .map(|e| (e.key.clone(), MediumDose { msv: e.effective_msv, source: MediumDoseSource::Catalog }))
        .collect()
}

/// Reference-period means for the preceding period, with catalog doses
/// for types that do not occur there.
pub fn default_medium_doses(
    records: &[InvestigationRecord],
    from: DateTime<Utc>,
    to: DateTime<Utc>,
    catalog: &CtCatalog,
) -> BTreeMap<String, MediumDose> {
    let (pf, pt) = preceding_period(from, to);
    let mut out = catalog_medium_doses(catalog);
    out.extend(medium_doses_from_period(records, pf, pt));
    out
}

/// Builds the report for records performed in `[from, to]`. Superseded
/// records are excluded; corrections count under their own exam type.
pub fn periodic_report(
    records: &[InvestigationRecord],
    from: DateTime<Utc>,
    to: DateTime<Utc>,
    medium: &BTreeMap<String, MediumDose>,
) -> Result<PeriodicReport, LedgerError> {
    if from > to {
        return Err(LedgerError::InvalidRange(format!("{from} is after {to}")));
    }
    let mut acc: BTreeMap<&str, (f64, u64)> = BTreeMap::new();
    for r in effective_in(records, from, to) {
        let e = acc.entry(r.exam_type.as_str()).or_default();
        e.0 += r.effective_msv();
        e.1 += 1;
    }

    let mut totals = ReportTotals {
        count: 0,
        summed_dose_msv: 0.0,
        estimate_msv: 0.0,
        discrepancy_msv: 0.0,
        unestimated_types: Vec::new(),
    };
    let mut estimated_sum = 0.0;
    let rows = acc
        .into_iter()
        .map(|(exam, (sum, count))| {
            totals.count += count;
            totals.summed_dose_msv += sum;
            let m = medium.get(exam);
            let estimate = m.map(|m| count as f64 * m.msv);
            match estimate {
                Some(est) => {
                    totals.estimate_msv += est;
                    estimated_sum += sum;
                }
                None => totals.unestimated_types.push(exam.to_string()),
            }
            ReportRow {
                exam_type: exam.to_string(),
                count,
                summed_dose_msv: sum,
                mean_dose_msv: sum / count as f64,
                medium_dose_msv: m.map(|m| m.msv),
                medium_dose_source: m.map(|m| m.source),
                estimate_msv: estimate,
                discrepancy_msv: estimate.map(|e| e - sum),
            }
        })
        .collect();
    totals.discrepancy_msv = totals.estimate_msv - estimated_sum;
    Ok(PeriodicReport { from, to, rows, totals })
}

impl PeriodicReport {
    /// One row per exam type followed by a `TOTAL` row. Missing estimates
    /// are empty cells.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            "exam_type",
            "count",
            "summed_dose_msv",
            "mean_dose_msv",
            "medium_dose_msv",
            "medium_dose_source",
            "estimate_msv",
            "discrepancy_msv",
        ])
        .expect("in-memory write");
        for r in &self.rows {
            let source = r.medium_dose_source.map(|s| match s {
                MediumDoseSource::ReferencePeriod => "REFERENCE_PERIOD",
                MediumDoseSource::Catalog => "CATALOG",
                MediumDoseSource::Explicit => "EXPLICIT",
            });
            w.write_record([
                r.exam_type.clone(),
                r.count.to_string(),
                r.summed_dose_msv.to_string(),
                r.mean_dose_msv.to_string(),
                opt(r.medium_dose_msv),
                source.unwrap_or_default().to_string(),
                opt(r.estimate_msv),
                opt(r.discrepancy_msv),
            ])
            .expect("in-memory write");
        }
        let t = &self.totals;
        w.write_record([
            "TOTAL".to_string(),
            t.count.to_string(),
            t.summed_dose_msv.to_string(),
            String::new(),
            String::new(),
            String::new(),
            t.estimate_msv.to_string(),
            t.discrepancy_msv.to_string(),
        ])
        .expect("in-memory write");
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is UTF-8")
    }
}
