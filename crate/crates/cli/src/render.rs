//! Text output. Not a stable format; scripts use `--json`.

use std::fmt::Write;

use radsafe_core::dose::LimitFlag;
use radsafe_core::ledger::{PatientDoseProfile, PeriodicReport, Projection};

use crate::util::msv;

fn flags(out: &mut String, flags: &[LimitFlag]) {
    if flags.is_empty() {
        out.push_str("limit flags: none\n");
    }
    for f in flags {
        let kind = serde_json::to_value(f.kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let _ = writeln!(out, "limit flag {kind}: {} over {}", msv(f.value_msv), msv(f.limit_msv));
    }
}

pub fn profile(p: &PatientDoseProfile, sources: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "patient {} as of {}", p.patient_id, p.as_of.to_rfc3339());
    if !sources.is_empty() {
        let _ = writeln!(out, "read from {}", sources.join(", "));
    }
    for r in &p.records {
        let _ = writeln!(
            out,
            "  {}  {:<14} {:>12}  {:>8.1} chest x-rays  {}  {}{}",
            r.performed_at.format("%Y-%m-%d %H:%M"),
            r.exam_type,
            msv(r.effective_msv),
            r.chest_equivalents,
            r.facility_id,
            r.record_id,
            if r.superseded { "  (superseded)" } else { "" }
        );
    }
    let _ = writeln!(out, "cumulative dose {} = {:.1} chest x-ray equivalents", msv(p.cumulative_total_msv), p.chest_equivalents);
    for (w, v) in &p.window_sums {
        let _ = writeln!(out, "  {w}: {}", msv(*v));
    }
    let _ = writeln!(out, "threshold band {} mSv: {} ({})", p.threshold_band.range, p.threshold_band.effect, p.threshold_band.caveat);
    let _ = writeln!(
        out,
        "age-weighted dose {} ({})",
        msv(p.age_adjusted_risk.risk_weighted_msv),
        p.age_adjusted_risk.note
    );
    flags(&mut out, &p.limit_flags);
    out
}

pub fn projection(p: &Projection) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "patient {}: proposed {} adds {}", p.patient_id, p.exam_type, msv(p.proposed_dose_msv));
    let _ = writeln!(out, "  = {:.1} chest x-ray equivalents", p.chest_equivalents_delta);
    let _ = writeln!(out, "cumulative {} -> {}", msv(p.current_cumulative_msv), msv(p.new_cumulative));
    let _ = writeln!(out, "threshold band {} mSv: {} ({})", p.new_band.range, p.new_band.effect, p.new_band.caveat);
    flags(&mut out, &p.new_flags);
    out
}

pub fn report(r: &PeriodicReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "period {} .. {}", r.from.to_rfc3339(), r.to.to_rfc3339());
    let _ = writeln!(out, "{:<16} {:>6} {:>14} {:>14} {:>14} {:>14}", "exam", "count", "sum", "medium", "estimate", "discrepancy");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    for row in &r.rows {
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>14.4} {:>14} {:>14} {:>14}",
            row.exam_type,
            row.count,
            row.summed_dose_msv,
            opt(row.medium_dose_msv),
            opt(row.estimate_msv),
            opt(row.discrepancy_msv)
        );
    }
    let t = &r.totals;
    let _ = writeln!(
        out,
        "{:<16} {:>6} {:>14.4} {:>14} {:>14.4} {:>14.4}",
        "TOTAL", t.count, t.summed_dose_msv, "", t.estimate_msv, t.discrepancy_msv
    );
    if !t.unestimated_types.is_empty() {
        let _ = writeln!(out, "no medium dose for: {}", t.unestimated_types.join(", "));
    }
    out
}
