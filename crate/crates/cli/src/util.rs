use std::fs;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use radsafe_core::dose::{CtScanParameters, DoseInput, DoseQuantity, RadiographyParameters};
use radsafe_core::pki::{TrustBundle, TrustStore};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::args::DoseArgs;
use crate::error::{CliError, CliResult, Exit};

/// RFC 3339, or a bare date meaning its first (or, with `end_of_day`,
/// last) instant in UTC.
pub fn parse_time(s: &str, end_of_day: bool) -> CliResult<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|_| CliError::usage(format!("bad time {s:?}: expected RFC 3339 or YYYY-MM-DD")))?;
    let start = d.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    Ok(if end_of_day { start + Duration::days(1) - Duration::nanoseconds(1) } else { start })
}

pub fn opt_time(s: Option<&str>) -> CliResult<DateTime<Utc>> {
    s.map(|s| parse_time(s, false)).transpose().map(|t| t.unwrap_or_else(Utc::now))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

/// Writes through a temporary file so a crash leaves the old or the new
/// content, never a mix.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::new(Exit::Other, "ENCODE", e.to_string()))?;
    text.push('\n');
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_trust(path: &Path) -> CliResult<TrustStore> {
    let bundle: TrustBundle = read_json(path)?;
    TrustStore::from_bundle(bundle).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn quantity(r: Result<DoseQuantity, radsafe_core::dose::DoseError>) -> CliResult<DoseQuantity> {
    r.map_err(|e| CliError::new(Exit::InvalidInput, "INVALID_DOSE_INPUT", e.to_string()))
}

/// `None` when no dose flag is given.
pub fn dose_input(d: &DoseArgs) -> CliResult<Option<DoseInput>> {
    let given = [d.dap.is_some(), d.ctdi.is_some(), d.dlp.is_some(), d.catalog.is_some()];
    if given.iter().filter(|g| **g).count() > 1 {
        return Err(CliError::usage("give only one of --dap, --ctdi, --dlp, --catalog"));
    }
    let anatomy = || d.anatomy.clone().ok_or_else(|| CliError::usage("--anatomy is required"));
    Ok(Some(if let Some(dap) = d.dap {
        let area = d.area.ok_or_else(|| CliError::usage("--dap needs --area"))?;
        if d.tissue.is_empty() {
            return Err(CliError::usage("--dap needs at least one --tissue"));
        }
        DoseInput::Radiography(RadiographyParameters {
            dap: quantity(DoseQuantity::mgy_cm2(dap))?,
            irradiated_area_cm2: area,
            exposed_tissues: d.tissue.clone(),
        })
    } else if let Some(ctdi) = d.ctdi {
        let scan_length_cm = d.length.ok_or_else(|| CliError::usage("--ctdi needs --length"))?;
        DoseInput::CtScan(CtScanParameters { ctdi_vol: quantity(DoseQuantity::mgy(ctdi))?, scan_length_cm, anatomy: anatomy()? })
    } else if let Some(dlp) = d.dlp {
        DoseInput::CtDlp { dlp: quantity(DoseQuantity::mgy_cm(dlp))?, anatomy: anatomy()? }
    } else if let Some(exam) = &d.catalog {
        DoseInput::Catalog { exam: exam.clone() }
    } else {
        return Ok(None);
    }))
}

pub fn msv(v: f64) -> String {
    format!("{v:.4} mSv")
}
