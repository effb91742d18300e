mod common;

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;

use chrono::Duration;
use common::{t0, Fx};
use proptest::prelude::*;
use radsafe_core::dose::{DoseInput, DoseQuantity, LimitPolicy, SubjectKind};
use radsafe_core::ledger::{
    build_profile, create_record, periodic_report, profile_from_records, whatif, EnvelopeLog, InvestigationRecord,
    LedgerError, MediumDose, MediumDoseSource, PatientId, ProposedExam, RecordKind, RecordVerifier, SignedEnvelope,
};
use radsafe_core::pki::{check_envelope, EnvelopeVerifier, RejectReason};

fn decode(envs: &[SignedEnvelope]) -> Vec<InvestigationRecord> {
    envs.iter().map(|e| e.decode_record().unwrap()).collect()
}

#[test]
fn created_record_verifies_and_recomputes_exactly() {
    let mut fx = Fx::new(1);
    let env = fx.catalog("P1", t0() + Duration::days(1), "chest");
    let rec = check_envelope(&env, &fx.trust, None).unwrap();
    assert_eq!(rec.effective_msv(), 8.0);
    let again = rec.recompute(&fx.engine).unwrap().unwrap();
    assert_eq!(again.value().to_bits(), rec.effective_msv().to_bits());
    let v = RecordVerifier { trust: &fx.trust, engine: &fx.engine };
    assert!(v.check(&env).is_ok());
}

#[test]
fn stored_dose_that_disagrees_with_inputs_is_rejected() {
    let mut fx = Fx::new(2);
    let env = fx.catalog("P1", t0() + Duration::days(1), "chest");
    let mut rec = env.decode_record().unwrap();
    rec.effective_dose = DoseQuantity::msv(0.7).unwrap();
    let payload = radsafe_core::canonical::to_canonical_vec(&rec).unwrap();
    use radsafe_core::pki::RecordSigner;
    let signature = fx.signer.sign_payload(&payload, rec.performed_at).unwrap();
    let forged = SignedEnvelope { payload, signature, signer_cert_id: env.signer_cert_id.clone() };
    assert!(check_envelope(&forged, &fx.trust, None).is_ok());
    let v = RecordVerifier { trust: &fx.trust, engine: &fx.engine };
    assert_eq!(v.check(&forged).unwrap_err(), RejectReason::DoseMismatch);
}

#[test]
fn truncated_payload_is_bad_signature() {
    let mut fx = Fx::new(3);
    let mut env = fx.catalog("P1", t0() + Duration::days(1), "head");
    env.payload.truncate(env.payload.len() - 1);
    assert_eq!(check_envelope(&env, &fx.trust, None).unwrap_err(), RejectReason::BadSignature);
}

#[test]
fn invalid_dose_inputs_fail_creation() {
    let mut fx = Fx::new(4);
    let input = DoseInput::CtDlp { dlp: DoseQuantity::mgy(10.0).unwrap(), anatomy: "head".into() };
    let r = create_record(
        Fx::inputs("P1", t0(), "head", input),
        &fx.engine,
        &mut fx.signer,
        &fx.trust,
        &mut fx.rng,
    );
    assert!(matches!(r, Err(LedgerError::Dose(_))));
}

#[test]
fn profile_sums_exactly_and_flags_public_limit() {
    let mut fx = Fx::new(5);
    let doses = [0.3, 0.45, 0.41];
    let envs: Vec<_> = doses
        .iter()
        .enumerate()
        .map(|(i, d)| fx.head_ct("P1", t0() + Duration::days(10 * i as i64 + 1), *d))
        .collect();
    let other = fx.head_ct("P2", t0() + Duration::days(2), 5.0);
    let all: Vec<_> = envs.iter().chain([&other]).cloned().collect();
    let as_of = t0() + Duration::days(40);
    let p = build_profile(&all, &PatientId::new("P1"), as_of, &LimitPolicy::default(), &fx.trust, &fx.engine).unwrap();
    // oracle: plain summation of the stored doses in time order
    let oracle: f64 = decode(&envs).iter().map(|r| r.effective_msv()).sum();
    assert_eq!(p.records.len(), 3);
    assert!((p.cumulative_total_msv - oracle).abs() < 1e-12);
    assert!((p.cumulative_total_msv - 1.16).abs() < 1e-9);
    assert_eq!(p.threshold_band.range, "Up to 10");
    assert_eq!(p.threshold_band.caveat, "acute-scale reference");
    let public =
        profile_from_records(&decode(&envs), &PatientId::new("P1"), as_of, &LimitPolicy::default(), SubjectKind::Public, &fx.engine)
            .unwrap();
    assert_eq!(public.limit_flags.len(), 1);
}

#[test]
fn profile_refuses_tampered_history() {
    let mut fx = Fx::new(6);
    let mut env = fx.head_ct("P1", t0() + Duration::days(1), 1.0);
    env.signature[0] ^= 1;
    let r = build_profile([&env], &PatientId::new("P1"), t0() + Duration::days(2), &LimitPolicy::default(), &fx.trust, &fx.engine);
    assert!(matches!(r, Err(LedgerError::Integrity { reason: RejectReason::BadSignature, .. })));
}

#[test]
fn correction_supersedes_original() {
    let mut fx = Fx::new(7);
    let orig = fx.head_ct("P1", t0() + Duration::days(1), 2.0);
    let orig_id = orig.decode_record().unwrap().record_id;
    let mut inputs = Fx::inputs(
        "P1",
        t0() + Duration::days(2),
        "head",
        DoseInput::CtDlp { dlp: DoseQuantity::mgy_cm(500.0).unwrap(), anatomy: "head".into() },
    );
    inputs.kind = RecordKind::Correction { corrects: orig_id.clone(), reason: "wrong DLP transcribed".into() };
    let fix = create_record(inputs, &fx.engine, &mut fx.signer, &fx.trust, &mut fx.rng).unwrap();
    let p = build_profile([&orig, &fix], &PatientId::new("P1"), t0() + Duration::days(3), &LimitPolicy::default(), &fx.trust, &fx.engine)
        .unwrap();
    assert!((p.cumulative_total_msv - 1.0).abs() < 1e-12);
    assert!(p.records.iter().find(|e| e.record_id == orig_id).unwrap().superseded);
}

#[test]
fn whatif_examples() {
    let mut fx = Fx::new(8);
    // 95 mSv of history against the 100 mSv patient advisory
    let envs: Vec<_> = [40.0, 30.0, 25.0]
        .iter()
        .enumerate()
        .map(|(i, d)| fx.head_ct("P1", t0() + Duration::days(i as i64 + 1), *d))
        .collect();
    let as_of = t0() + Duration::days(10);
    let policy = LimitPolicy::default();
    let p = build_profile(&envs, &PatientId::new("P1"), as_of, &policy, &fx.trust, &fx.engine).unwrap();
    assert!(p.limit_flags.is_empty());
    let proj = whatif(&p, &ProposedExam { exam_type: "abdomen".into(), input: None }, &fx.engine, &policy).unwrap();
    assert!((proj.new_cumulative - 105.0).abs() < 1e-9);
    assert_eq!(proj.new_flags.len(), 1);
    assert_eq!(proj.new_flags[0].kind, radsafe_core::dose::LimitKind::PatientAdvisory);
    let headp = whatif(&p, &ProposedExam { exam_type: "head".into(), input: None }, &fx.engine, &policy).unwrap();
    assert!((headp.chest_equivalents_delta - 100.0).abs() < 1e-9);
    let zero = DoseInput::CtDlp { dlp: DoseQuantity::mgy_cm(0.0).unwrap(), anatomy: "head".into() };
    let proj0 = whatif(&p, &ProposedExam { exam_type: "head".into(), input: Some(zero) }, &fx.engine, &policy).unwrap();
    assert_eq!(proj0.new_cumulative, p.cumulative_total_msv);
    assert_eq!(proj0.new_band, p.threshold_band);
    assert_eq!(proj0.new_flags, p.limit_flags);
    let unknown = whatif(&p, &ProposedExam { exam_type: "knee".into(), input: None }, &fx.engine, &policy);
    assert!(unknown.is_err());
}

fn head(msv: f64) -> MediumDose {
    MediumDose { msv, source: MediumDoseSource::Explicit }
}

#[test]
fn report_examples() {
    let mut fx = Fx::new(9);
    let from = t0();
    let to = t0() + Duration::days(30);
    let medium = BTreeMap::from([("head".to_string(), head(2.0))]);

    let a = decode(&[fx.head_ct("P1", from + Duration::days(1), 1.8), fx.head_ct("P2", from + Duration::days(2), 2.2)]);
    let r = periodic_report(&a, from, to, &medium).unwrap();
    assert!((r.rows[0].summed_dose_msv - 4.0).abs() < 1e-9);
    assert!((r.rows[0].estimate_msv.unwrap() - 4.0).abs() < 1e-9);
    assert!(r.rows[0].discrepancy_msv.unwrap().abs() < 1e-9);

    let b = decode(&[fx.head_ct("P1", from + Duration::days(1), 1.5), fx.head_ct("P2", from + Duration::days(2), 2.0)]);
    let r = periodic_report(&b, from, to, &medium).unwrap();
    // hand arithmetic: 2 × 2.0 − (1.5 + 2.0) = 0.5
    assert!((r.rows[0].summed_dose_msv - 3.5).abs() < 1e-9);
    assert!((r.totals.discrepancy_msv - 0.5).abs() < 1e-9);

    let empty = periodic_report(&b, to + Duration::days(1), to + Duration::days(2), &medium).unwrap();
    assert!(empty.rows.is_empty());
    assert_eq!(empty.totals.count, 0);
    assert!(periodic_report(&b, to, from, &medium).is_err());
    let csv = r.to_csv();
    assert!(csv.starts_with("exam_type,count,summed_dose_msv"));
    assert!(csv.lines().last().unwrap().starts_with("TOTAL,2,3.5"));
}

#[test]
fn envelope_log_survives_torn_tail() {
    let mut fx = Fx::new(10);
    let dir = tempfile::tempdir().unwrap();
    let a = fx.head_ct("P1", t0() + Duration::days(1), 1.0);
    let b = fx.head_ct("P1", t0() + Duration::days(2), 2.0);
    {
        let (mut log, existing) = EnvelopeLog::open(dir.path()).unwrap();
        assert!(existing.is_empty());
        assert!(log.append(&a).unwrap());
        assert!(!log.append(&a).unwrap());
        assert!(log.append(&b).unwrap());
    }
    let path = dir.path().join("envelopes.log");
    let clean = std::fs::read(&path).unwrap();
    let mut f = OpenOptions::new().append(true).open(&path).unwrap();
    f.write_all(&b.to_line()[..40]).unwrap();
    drop(f);
    let (log, envs) = EnvelopeLog::open(dir.path()).unwrap();
    assert_eq!(envs, vec![a.clone(), b.clone()]);
    assert_eq!(log.truncated_bytes(), 40);
    assert_eq!(std::fs::read(&path).unwrap(), clean);
    let id = a.decode_record().unwrap().record_id;
    assert_eq!(log.get(&id).unwrap().unwrap(), a);
}

#[test]
fn envelope_log_refuses_corrupt_complete_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("envelopes.log"), b"{\"not\":\"an envelope\"}\n").unwrap();
    assert!(matches!(EnvelopeLog::open(dir.path()), Err(LedgerError::CorruptLog { offset: 0, .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn profile_is_order_independent(doses in prop::collection::vec(0.0f64..50.0, 1..12), seed in any::<u64>()) {
        let mut fx = Fx::new(11);
        let envs: Vec<_> = doses.iter().enumerate()
            .map(|(i, d)| fx.head_ct("P1", t0() + Duration::hours(i as i64 * 7 % 5), *d))
            .collect();
        let mut shuffled = envs.clone();
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        shuffled.shuffle(&mut rand_chacha::ChaCha20Rng::seed_from_u64(seed));
        let as_of = t0() + Duration::days(1);
        let policy = LimitPolicy::default();
        let a = build_profile(&envs, &PatientId::new("P1"), as_of, &policy, &fx.trust, &fx.engine).unwrap();
        let b = build_profile(&shuffled, &PatientId::new("P1"), as_of, &policy, &fx.trust, &fx.engine).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn whatif_matches_rebuilt_profile(doses in prop::collection::vec(0.0f64..400.0, 0..10), extra in 0.0f64..400.0) {
        let mut fx = Fx::new(12);
        let mut envs: Vec<_> = doses.iter().enumerate()
            .map(|(i, d)| fx.head_ct("P1", t0() + Duration::days(40 * i as i64), *d))
            .collect();
        let as_of = t0() + Duration::days(40 * doses.len() as i64 + 1);
        let policy = LimitPolicy::default();
        let p = build_profile(&envs, &PatientId::new("P1"), as_of, &policy, &fx.trust, &fx.engine).unwrap();
        let input = DoseInput::CtDlp { dlp: DoseQuantity::mgy_cm(extra / 0.002).unwrap(), anatomy: "head".into() };
        let proj = whatif(&p, &ProposedExam { exam_type: "head".into(), input: Some(input.clone()) }, &fx.engine, &policy).unwrap();
        envs.push(fx.record("P1", as_of, "head", input));
        let q = build_profile(&envs, &PatientId::new("P1"), as_of, &policy, &fx.trust, &fx.engine).unwrap();
        prop_assert!((proj.new_cumulative - q.cumulative_total_msv).abs() <= 1e-9 * q.cumulative_total_msv.max(1.0));
        prop_assert_eq!(proj.new_band, q.threshold_band);
        prop_assert_eq!(proj.new_flags, q.limit_flags);
    }

    #[test]
    fn report_rows_add_up(doses in prop::collection::vec((0usize..3, 0.0f64..20.0), 0..20)) {
        let mut fx = Fx::new(13);
        let exams = ["head", "chest", "abdomen"];
        let recs: Vec<_> = doses.iter().enumerate().map(|(i, (e, d))| {
            let k = fx.engine.k_factors.get(exams[*e]).unwrap().k;
            let input = DoseInput::CtDlp { dlp: DoseQuantity::mgy_cm(d / k).unwrap(), anatomy: exams[*e].into() };
            fx.record("P1", t0() + Duration::hours(i as i64), exams[*e], input).decode_record().unwrap()
        }).collect();
        let medium = BTreeMap::from([("head".to_string(), head(2.0))]);
        let r = periodic_report(&recs, t0(), t0() + Duration::days(2), &medium).unwrap();
        let per_type: f64 = r.rows.iter().map(|x| x.summed_dose_msv).sum();
        prop_assert!((per_type - r.totals.summed_dose_msv).abs() < 1e-9);
        prop_assert_eq!(r.rows.iter().map(|x| x.count).sum::<u64>(), recs.len() as u64);
    }
}
