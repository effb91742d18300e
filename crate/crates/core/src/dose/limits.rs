//! Dose limit policy and rolling-window checks.
//!
//! Windows are trailing and half-open, `(end - length, end]`. A year is 365
//! days and the averaging period is five such years. A sum exactly at a
//! limit raises the flag.

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::DoseError;

pub const YEAR_DAYS: i64 = 365;
pub const AVERAGING_YEARS: i64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitPolicy {
    pub public_annual_msv: f64,
    pub occupational_annual_msv: f64,
    pub occupational_5yr_avg_msv: f64,
    pub occupational_single_year_max_msv: f64,
    /// Cumulative patient dose that raises an advisory. Medical exposure
    /// has no regulatory limit; this is site policy.
    pub advisory_patient_msv: f64,
}

impl Default for LimitPolicy {
    fn default() -> Self {
        Self {
            public_annual_msv: 1.0,
            occupational_annual_msv: 20.0,
            occupational_5yr_avg_msv: 20.0,
            occupational_single_year_max_msv: 50.0,
            advisory_patient_msv: 100.0,
        }
    }
}

impl LimitPolicy {
    pub fn validate(&self) -> Result<(), DoseError> {
        let all = [
            self.public_annual_msv,
            self.occupational_annual_msv,
            self.occupational_5yr_avg_msv,
            self.occupational_single_year_max_msv,
            self.advisory_patient_msv,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(DoseError::Domain("all limits must be > 0".into()));
        }
        if self.occupational_single_year_max_msv < self.occupational_annual_msv {
            return Err(DoseError::Domain("single-year maximum must be >= annual limit".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SubjectKind {
    Public,
    Occupational,
    Patient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LimitKind {
    PublicAnnual,
    OccupationalAnnual,
    OccupationalFiveYearAverage,
    OccupationalSingleYearMax,
    PatientAdvisory,
}

/// One exposure in a dose history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exposure {
    pub at: DateTime<Utc>,
    pub msv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitFlag {
    pub kind: LimitKind,
    /// Exclusive start of the evaluated window; `None` means all history.
    pub window_start: Option<DateTime<Utc>>,
    pub window_end: DateTime<Utc>,
    /// Dose compared against the limit (a mean per year for the
    /// five-year check).
    pub value_msv: f64,
    pub limit_msv: f64,
}

// Folds from +0.0; `f64::sum` over nothing is -0.0.
fn window_sum(history: &[Exposure], start: DateTime<Utc>, end: DateTime<Utc>) -> f64 {
    history.iter().filter(|e| e.at > start && e.at <= end).fold(0.0, |acc, e| acc + e.msv)
}

/// Evaluates the limits that apply to `subject` as of `as_of`. Exposures
/// after `as_of` are ignored.
pub fn check_limits(history: &[Exposure], subject: SubjectKind, policy: &LimitPolicy, as_of: DateTime<Utc>) -> Vec<LimitFlag> {
    let year = Duration::days(YEAR_DAYS);
    let mut flags = Vec::new();
    let mut flag = |kind, window_start, window_end, value_msv: f64, limit_msv: f64| {
        if value_msv >= limit_msv {
            flags.push(LimitFlag { kind, window_start, window_end, value_msv, limit_msv });
        }
    };

    match subject {
        SubjectKind::Public => {
            let start = as_of - year;
            flag(LimitKind::PublicAnnual, Some(start), as_of, window_sum(history, start, as_of), policy.public_annual_msv);
        }
        SubjectKind::Occupational => {
            let start = as_of - year;
            flag(
                LimitKind::OccupationalAnnual,
                Some(start),
                as_of,
                window_sum(history, start, as_of),
                policy.occupational_annual_msv,
            );

            let period_start = as_of - year * AVERAGING_YEARS as i32;
            let mean = window_sum(history, period_start, as_of) / AVERAGING_YEARS as f64;
            flag(LimitKind::OccupationalFiveYearAverage, Some(period_start), as_of, mean, policy.occupational_5yr_avg_msv);

            // The heaviest 365-day window inside the averaging period always
            // ends on an exposure, so only those endpoints need checking.
            let best = history
                .iter()
                .filter(|e| e.at > period_start && e.at <= as_of)
                .map(|e| (e.at, window_sum(history, e.at - year, e.at)))
                .fold(None::<(DateTime<Utc>, f64)>, |acc, cur| match acc {
                    Some(a) if a.1 >= cur.1 => Some(a),
                    _ => Some(cur),
                });
            if let Some((end, sum)) = best {
                flag(LimitKind::OccupationalSingleYearMax, Some(end - year), end, sum, policy.occupational_single_year_max_msv);
            }
        }
        SubjectKind::Patient => {
            let total: f64 = history.iter().filter(|e| e.at <= as_of).fold(0.0, |acc, e| acc + e.msv);
            flag(LimitKind::PatientAdvisory, None, as_of, total, policy.advisory_patient_msv);
        }
    }
    flags
}
