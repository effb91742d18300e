//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs headless against the library and the `radsafe`
//! binary.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration as StdDuration, Instant};

use chrono::{DateTime, Duration, TimeZone, Utc};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use radsafe_core::dose::{
    check_limits, chest_equivalents, DoseEngine, DoseInput, DoseQuantity, Exposure, LimitKind, LimitPolicy,
    RadiographyParameters, SubjectKind,
};
use radsafe_core::ledger::{
    create_record, periodic_report, InvestigationInputs, InvestigationRecord, MediumDose, MediumDoseSource, PatientId,
    RecordId, RecordKind, RecordVerifier, SignedEnvelope,
};
use radsafe_core::pki::{
    Algorithm, CertificateAuthority, EnvelopeVerifier, RecordSigner, RejectReason, Role, SecretKey, SoftSigner, Subject, TrustStore,
};
use radsafe_core::sync::{
    builtin_scenario, merge, random_scenario, render_transcript, replay, replica_sets, ReplicaKind, ReplicaStore,
    World, BUILTIN_SCENARIOS,
};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(detail.into())
    }
}

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap()
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("chest-radiograph-dose", chest_radiograph),
        ("tissue-weights-sum-and-groups", tissue_table),
        ("ct-doses-chest-equivalents", ct_table),
        ("age-risk-lookup", age_table),
        ("threshold-banding", threshold_banding),
        ("icrp-limit-flags", icrp_flags),
        ("convergence-1000-streams", convergence),
        ("merge-algebra", merge_algebra),
        ("scenario-transcripts", scenario_transcripts),
        ("tamper-rejection", tamper),
        ("durability-and-replay", durability),
        ("report-discrepancy", report_discrepancy),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let ms = started.elapsed().as_millis();
        match outcome {
            Ok(detail) => println!("PASS {name} ({ms} ms): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({ms} ms): {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// Dose model

fn chest_radiograph() -> Outcome {
    let started = Instant::now();
    let engine = DoseEngine::builtin();
    let input = DoseInput::Radiography(RadiographyParameters {
        dap: DoseQuantity::mgy_cm2(197.0).unwrap(),
        irradiated_area_cm2: 1225.0,
        exposed_tissues: vec!["lung".into()],
    });
    let e = engine.effective_dose(&input).map_err(|e| e.to_string())?.value();
    let elapsed = started.elapsed();
    // independent arithmetic: skin dose 197/1225 mGy times the lung weight
    let oracle = 197.0 / 1225.0 * 0.12;
    check((e - oracle).abs() < 1e-12, format!("engine {e} vs hand arithmetic {oracle}"))?;
    check((e - 0.0192).abs() <= 0.001, format!("{e} mSv not within 0.001 of 0.0192"))?;
    check(elapsed < StdDuration::from_secs(1), format!("took {elapsed:?}"))?;
    Ok(format!("Effective dose {e:.4} mSv in {elapsed:?}"))
}

fn tissue_table() -> Outcome {
    let reg = DoseEngine::builtin().tissues;
    let total = reg.total_weight();
    check((total - 1.0).abs() <= 1e-9, format!("weights sum to {total}"))?;
    let groups: [(f64, &[&str]); 4] = [
        (
            0.12,
            &[
                "red_bone_marrow", "colon", "lung", "stomach", "breast", "adrenals", "extrathoracic_region",
                "gall_bladder", "heart", "kidneys", "lymphatic_nodes", "muscle", "oral_mucosa", "pancreas", "prostate",
                "small_intestine", "spleen", "thymus", "uterus_cervix",
            ],
        ),
        (0.08, &["gonads"]),
        (0.04, &["bladder", "oesophagus", "liver", "thyroid"]),
        (0.01, &["bone_surface", "brain", "salivary_glands", "skin"]),
    ];
    let sums = [0.72, 0.08, 0.16, 0.04];
    let mut want: BTreeSet<String> = BTreeSet::new();
    for ((w, tissues), group_sum) in groups.iter().zip(sums) {
        // the fourteen remainder tissues share one 0.12 weight
        let got: f64 = tissues.iter().map(|t| reg.weight_of(t).unwrap_or(f64::NAN)).sum();
        check((got - group_sum).abs() <= 1e-9, format!("group {w}: {got} != {group_sum}"))?;
        want.extend(tissues.iter().map(|t| t.to_string()));
    }
    want.insert("remainder".into());
    let have = reg.tissue_keys();
    check(have == want, format!("tissue keys differ: extra {:?}, missing {:?}", &have - &want, &want - &have))?;
    Ok(format!("{} tissues, total weight {total}", have.len() - 1))
}

fn ct_table() -> Outcome {
    let engine = DoseEngine::builtin();
    let rows: [(&str, f64, f64); 11] = [
        ("head", 2.0, 100.0),
        ("neck", 3.0, 150.0),
        ("calcium_scoring", 3.0, 150.0),
        ("pulmonary_angiography", 5.2, 260.0),
        ("spine", 6.0, 300.0),
        ("chest", 8.0, 400.0),
        ("coronary_angiography", 8.7, 435.0),
        ("abdomen", 10.0, 500.0),
        ("pelvis", 10.0, 500.0),
        ("virtual_colonoscopy", 10.0, 500.0),
        ("chest_pulmonary_embolism", 15.0, 750.0),
    ];
    for (exam, msv, count) in rows {
        let d = engine.ct_reference_dose(exam).map_err(|e| e.to_string())?;
        check((d.value() - msv).abs() < 1e-9, format!("{exam}: {} mSv, table says {msv}", d.value()))?;
        let eq = chest_equivalents(&d).map_err(|e| e.to_string())?;
        check((eq - count).abs() <= 0.5, format!("{exam}: {eq} chest equivalents, table says {count}"))?;
    }
    check(engine.catalog.entries().len() == rows.len(), format!("catalog has {} entries", engine.catalog.entries().len()))?;
    Ok("11 rows within 0.5 chest equivalents".into())
}

fn age_table() -> Outcome {
    let engine = DoseEngine::builtin();
    let cases = [(5, 3.0), (15, 2.0), (25, 1.5), (30, 0.5), (49, 0.5), (50, 0.3), (79, 0.3), (80, 0.0), (100, 0.0)];
    for (age, want) in cases {
        let got = engine.age_risk_multiplier(age).map_err(|e| e.to_string())?;
        check(got == want, format!("age {age}: {got}, expected {want}"))?;
    }
    check(engine.age_risk_multiplier(-1).is_err(), "negative age accepted")?;
    Ok(format!("{} ages, bands half-open [lower, upper)", cases.len()))
}

fn threshold_banding() -> Outcome {
    let engine = DoseEngine::builtin();
    let bands = engine.thresholds.bands();
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    for i in 0..10_000 {
        // log-uniform over 1e-4..1e6 mSv plus exact band edges now and then
        let msv = if i % 50 == 0 {
            [0.0, 10.0, 1000.0, 10_000.0][i / 50 % 4]
        } else {
            10f64.powf(rng.random_range(-4.0..6.0))
        };
        let hits = bands.iter().filter(|b| b.contains(msv)).count();
        check(hits == 1, format!("{msv} mSv falls in {hits} bands"))?;
        let b = engine.classify_threshold(&DoseQuantity::msv(msv).unwrap()).map_err(|e| e.to_string())?;
        check(b.contains(msv), format!("{msv} classified into {}", b.range))?;
    }
    let fixed = [
        (5.0, "Up to 10", "No direct evidence on human health effects"),
        (500.0, "10-1000", "No early effects; increased incidence of certain cancers in exposed populations at higher doses"),
        (5000.0, "1000-10,000", "Radiation sickness (risk of death); increased incidence of certain cancers in exposed populations"),
        (20_000.0, "Above 10,000", "Always fatal"),
    ];
    for (msv, range, effect) in fixed {
        let b = engine.classify_threshold(&DoseQuantity::msv(msv).unwrap()).map_err(|e| e.to_string())?;
        check(b.range == range && b.effect == effect, format!("{msv} mSv: {:?} / {:?}", b.range, b.effect))?;
    }
    Ok("10000 random doses in exactly one band; 4 fixed points verbatim".into())
}

fn icrp_flags() -> Outcome {
    let policy = LimitPolicy::default();
    let as_of = t0() + Duration::days(3 * 365);
    let single = [Exposure { at: as_of - Duration::days(30), msv: 51.0 }];
    let kinds: BTreeSet<LimitKind> =
        check_limits(&single, SubjectKind::Occupational, &policy, as_of).into_iter().map(|f| f.kind).collect();
    check(
        kinds.contains(&LimitKind::OccupationalAnnual) && kinds.contains(&LimitKind::OccupationalSingleYearMax),
        format!("51 mSv raised {kinds:?}"),
    )?;
    let steady: Vec<Exposure> =
        (0..5).map(|k| Exposure { at: as_of - Duration::days(1 + 366 * k), msv: 19.0 }).collect();
    let flags = check_limits(&steady, SubjectKind::Occupational, &policy, as_of);
    check(flags.is_empty(), format!("19 mSv/yr for 5 years raised {flags:?}"))?;
    Ok("51 mSv raises annual and single-year flags; 19 mSv x 5 raises none".into())
}

// ---------------------------------------------------------------------------
// Replication

/// Brute-force union oracle: stores hold every created id; cards hold their
/// holder's.
fn converged(world: &World) -> Result<(), String> {
    let decoded: Vec<(PatientId, RecordId)> = world
        .created()
        .iter()
        .map(|e| {
            let r = e.decode_record().expect("created records decode");
            (r.patient_id, r.record_id)
        })
        .collect();
    let all: BTreeSet<RecordId> = decoded.iter().map(|(_, id)| id.clone()).collect();
    for (name, set) in replica_sets(world) {
        let want: BTreeSet<RecordId> = match name.strip_prefix("CARD:") {
            Some(p) => decoded.iter().filter(|(pid, _)| pid.as_str() == p).map(|(_, id)| id.clone()).collect(),
            None => all.clone(),
        };
        check(set == want, format!("{name} holds {} of {} records", set.len(), want.len()))?;
    }
    Ok(())
}

fn convergence() -> Outcome {
    let started = Instant::now();
    let mut records = 0;
    for seed in 0..1000 {
        let file = random_scenario(seed, 30);
        let (mut world, _) = replay(&file).map_err(|e| format!("seed {seed}: {e}"))?;
        let end = file.events.last().map_or(file.world.start, |e| e.at()) + Duration::hours(1);
        world.full_sync(end).map_err(|e| format!("seed {seed}: {e}"))?;
        converged(&world).map_err(|e| format!("seed {seed}: {e}"))?;
        records += world.created().len();
    }
    let elapsed = started.elapsed();
    check(elapsed < StdDuration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!("1000 streams, {records} records, every replica equals the union, {elapsed:?}"))
}

struct Fx {
    rng: ChaCha20Rng,
    trust: TrustStore,
    ca: CertificateAuthority,
    engine: DoseEngine,
    signer: SoftSigner,
}

impl Fx {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ca = CertificateAuthority::init_root("Root", Algorithm::Ed25519, t0(), Duration::days(7300), &mut rng);
        let mut trust = TrustStore::new(ca.certificate().clone());
        let key = SecretKey::generate(Algorithm::Ed25519, &mut rng);
        let cert = ca
            .issue(Subject { name: "dr-x".into(), role: Role::Professional }, key.public_key(), t0(), t0() + Duration::days(3650), &mut rng)
            .unwrap();
        trust.add_certificate(cert.clone());
        let signer = SoftSigner::new(key, cert).unwrap();
        Self { rng, trust, ca, engine: DoseEngine::builtin(), signer }
    }

    fn head_ct(&mut self, patient: &str, at: DateTime<Utc>, msv: f64) -> SignedEnvelope {
        let inputs = InvestigationInputs {
            patient_id: PatientId::new(patient),
            patient_age_years: Some(40),
            performed_at: at,
            facility_id: "HOSP-A".into(),
            operator_id: "dr-x".into(),
            exam_type: "head".into(),
            raw_input: DoseInput::CtDlp { dlp: DoseQuantity::mgy_cm(msv / 0.002).unwrap(), anatomy: "head".into() },
            kind: RecordKind::Original,
        };
        create_record(inputs, &self.engine, &mut self.signer, &self.trust, &mut self.rng).unwrap()
    }
}

fn merge_algebra() -> Outcome {
    let mut fx = Fx::new(30);
    let envs: Vec<SignedEnvelope> =
        (0..24).map(|i| fx.head_ct(&format!("P{}", i % 4), t0() + Duration::hours(i), 1.0 + i as f64)).collect();
    let now = t0() + Duration::days(30);
    let store = |name: &str, members: &BTreeSet<usize>| {
        let mut s = ReplicaStore::new(ReplicaKind::Local, name);
        for &i in members {
            s.admit(&envs[i], &fx.trust, now, "seed").unwrap();
        }
        s
    };
    let id = |i: usize| envs[i].decode_record().unwrap().record_id;
    let set = || prop::collection::btree_set(0usize..24, 0..14);
    let mut runner = TestRunner::new(Config { cases: 600, failure_persistence: None, ..Config::default() });
    runner
        .run(&(set(), set(), set()), |(xs, ys, zs)| {
            let union: BTreeSet<RecordId> = xs.iter().chain(&ys).chain(&zs).map(|&i| id(i)).collect();
            // commutativity: a <- b equals b <- a
            let (mut a, mut b) = (store("a", &xs), store("b", &ys));
            let (mut b2, mut a2) = (store("b", &ys), store("a", &xs));
            merge(&mut a, &mut b, &fx.trust, now);
            merge(&mut b2, &mut a2, &fx.trust, now);
            prop_assert_eq!(a.id_set(), b2.id_set());
            prop_assert_eq!(a.id_set(), b.id_set());
            // associativity: (a ∪ b) ∪ c equals a ∪ (b ∪ c)
            let mut c = store("c", &zs);
            merge(&mut a, &mut c, &fx.trust, now);
            let (mut a3, mut b3, mut c3) = (store("a", &xs), store("b", &ys), store("c", &zs));
            merge(&mut b3, &mut c3, &fx.trust, now);
            merge(&mut a3, &mut b3, &fx.trust, now);
            prop_assert_eq!(a.id_set(), a3.id_set());
            prop_assert_eq!(&a.id_set(), &union);
            // idempotence: merging again changes nothing
            let before = a.clone();
            let out = merge(&mut a, &mut c, &fx.trust, now);
            prop_assert!(out.transferred.is_empty());
            prop_assert_eq!(a, before);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("600 random store triples: idempotent, commutative, associative, equal to the union".into())
}

fn scenario_transcripts() -> Outcome {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden");
    for (name, _) in BUILTIN_SCENARIOS {
        let file = builtin_scenario(name).map_err(|e| e.to_string())?;
        let (_, reports) = replay(&file).map_err(|e| format!("{name}: {e}"))?;
        let text = render_transcript(&file, &reports);
        let want = std::fs::read_to_string(golden.join(format!("{name}.txt"))).map_err(|e| format!("{name}: {e}"))?;
        check(text == want, format!("{name}: transcript differs from golden"))?;
        let out = Command::new(env!("CARGO_BIN_EXE_radsafe"))
            .args(["scenario", "replay", "--case", name])
            .output()
            .map_err(|e| e.to_string())?;
        check(out.stdout == want.as_bytes(), format!("{name}: CLI replay differs from golden"))?;
    }
    Ok(format!("{} scenarios match step by step, library and CLI", BUILTIN_SCENARIOS.len()))
}

// ---------------------------------------------------------------------------
// Integrity

fn tamper() -> Outcome {
    let mut fx = Fx::new(77);
    let mut rng = ChaCha20Rng::seed_from_u64(78);
    let verify = |trust: &TrustStore, engine: &DoseEngine, env: &SignedEnvelope| RecordVerifier { trust, engine }.check(env);
    let mut field_flips = 0;
    let mut line_flips = 0;
    for i in 0..1000 {
        let msv = rng.random_range(0.1..40.0);
        let env = fx.head_ct(&format!("P{}", i % 37), t0() + Duration::minutes(i), msv);
        check(verify(&fx.trust, &fx.engine, &env).is_ok(), format!("envelope {i} does not verify untouched"))?;

        // a bit in the signed fields themselves
        let mut m = env.clone();
        let (plen, slen) = (m.payload.len(), m.signature.len());
        let bit = rng.random_range(0..(plen + slen + m.signer_cert_id.0.len()) * 8);
        let (byte, mask) = (bit / 8, 1u8 << (bit % 8));
        if byte < plen {
            m.payload[byte] ^= mask;
        } else if byte < plen + slen {
            m.signature[byte - plen] ^= mask;
        } else {
            let mut id = m.signer_cert_id.0.into_bytes();
            id[byte - plen - slen] ^= mask;
            m.signer_cert_id.0 = String::from_utf8_lossy(&id).into_owned();
        }
        check(verify(&fx.trust, &fx.engine, &m).is_err(), format!("envelope {i}: field bit {bit} accepted"))?;
        field_flips += 1;

        // a bit anywhere in the stored line
        let mut line = env.to_line();
        let bit = rng.random_range(0..line.len() * 8);
        line[bit / 8] ^= 1 << (bit % 8);
        if let Ok(parsed) = SignedEnvelope::from_line(&line) {
            check(verify(&fx.trust, &fx.engine, &parsed).is_err(), format!("envelope {i}: line bit {bit} accepted"))?;
        }
        line_flips += 1;
    }

    // signer revoked mid-way: later records are refused as REVOKED
    let revoked_at = t0() + Duration::days(10);
    let before = fx.head_ct("R", revoked_at - Duration::hours(1), 2.0);
    let after = fx.head_ct("R", revoked_at + Duration::hours(1), 2.0);
    let signer_id = fx.signer.certificate().id().clone();
    fx.ca.revoke(&signer_id, revoked_at);
    let crl = fx.ca.crl(revoked_at + Duration::days(1));
    fx.trust.add_crl(crl).map_err(|e| e.to_string())?;
    check(verify(&fx.trust, &fx.engine, &before).is_ok(), "record signed before revocation rejected")?;
    let reason = verify(&fx.trust, &fx.engine, &after).err();
    check(reason == Some(RejectReason::Revoked), format!("record after revocation: {reason:?}"))?;
    Ok(format!("{field_flips} field flips and {line_flips} line flips rejected; post-revocation record REVOKED"))
}

// ---------------------------------------------------------------------------
// Durability

fn radsafe(dir: &Path, args: &[&str]) -> Result<std::process::Output, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_radsafe"));
    cmd.current_dir(dir).args(args);
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("RADSAFE_")) {
        cmd.env_remove(k);
    }
    cmd.output().map_err(|e| e.to_string())
}

fn radsafe_ok(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = radsafe(dir, args)?;
    if !out.status.success() {
        return Err(format!("radsafe {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

struct Server(Child, String);

impl Server {
    fn spawn(dir: &Path, config: &str) -> Result<Self, String> {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_radsafe"));
        cmd.current_dir(dir).args(["serve", "--config", config]).stdout(Stdio::piped()).stderr(Stdio::null());
        for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("RADSAFE_")) {
            cmd.env_remove(k);
        }
        let mut child = cmd.spawn().map_err(|e| e.to_string())?;
        let mut line = String::new();
        BufReader::new(child.stdout.take().expect("piped")).read_line(&mut line).map_err(|e| e.to_string())?;
        let addr = line.trim().strip_prefix("listening on ").ok_or_else(|| format!("unexpected serve output {line:?}"))?;
        Ok(Server(child, format!("http://{addr}")))
    }

    /// SIGKILL: no shutdown hook runs.
    fn kill(mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn durability() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = tmp.path();
    let nb = "2024-01-01T00:00:00Z";
    radsafe_ok(p, &["ca", "init", "--dir", "ca", "--not-before", nb])?;
    radsafe_ok(p, &["cert", "issue", "--ca", "ca", "--name", "CENTRAL", "--role", "facility", "--out", "central.json", "--not-before", nb])?;
    radsafe_ok(p, &["cert", "issue", "--ca", "ca", "--name", "dr-a", "--role", "professional", "--out", "dr-a.json", "--not-before", nb])?;
    for (file, data) in [("a.toml", "data-a"), ("b.toml", "data-b")] {
        std::fs::write(
            p.join(file),
            format!(
                "listen = \"127.0.0.1:0\"\ndata_dir = \"{data}\"\nrole = \"CENTRAL\"\nnode_id = \"CENTRAL\"\n\
                 trust_bundle = \"ca/bundle.json\"\nidentity = \"central.json\"\n"
            ),
        )
        .map_err(|e| e.to_string())?;
    }

    // the request log: ten raw-input recordings with client ids
    let requests: Vec<Vec<String>> = (0..10)
        .map(|i| {
            [
                "--patient".to_string(),
                format!("P-{}", i % 3),
                "--facility".into(),
                "HOSP-A".into(),
                "--exam".into(),
                "head".into(),
                "--dlp".into(),
                format!("{}", 400 + 37 * i),
                "--anatomy".into(),
                "head".into(),
                "--at".into(),
                format!("2025-03-{:02}T10:00:00Z", i + 1),
                "--record-id".into(),
                format!("00000000-0000-4000-8000-{i:012}"),
            ]
            .to_vec()
        })
        .collect();
    let send = |url: &str, req: &[String]| -> Result<String, String> {
        let mut args = vec!["record", "--server", url, "--identity", "dr-a.json"];
        args.extend(req.iter().map(String::as_str));
        radsafe_ok(p, &args)
    };

    let a = Server::spawn(p, "a.toml")?;
    for req in &requests {
        let out = send(&a.1, req)?;
        check(out.contains("(created)"), format!("expected 201 created, got {out:?}"))?;
    }
    a.kill();
    let acknowledged = std::fs::read(p.join("data-a/envelopes.log")).map_err(|e| e.to_string())?;

    let a = Server::spawn(p, "a.toml")?;
    let mut held = 0;
    for patient in ["P-0", "P-1", "P-2"] {
        let out = radsafe_ok(p, &["--json", "profile", "--server", &a.1, "--identity", "dr-a.json", patient])?;
        let v: serde_json::Value = serde_json::from_str(&out).map_err(|e| e.to_string())?;
        held += v["profile"]["records"].as_array().map_or(0, Vec::len);
    }
    check(held == requests.len(), format!("{held} of {} acknowledged records after kill -9", requests.len()))?;

    // replaying the whole request log is a no-op on the survivor...
    for req in &requests {
        let out = send(&a.1, req)?;
        check(out.contains("(duplicate)"), format!("replay not idempotent: {out:?}"))?;
    }
    drop(a);
    let after_replay = std::fs::read(p.join("data-a/envelopes.log")).map_err(|e| e.to_string())?;
    check(after_replay == acknowledged, "replay changed the store bytes")?;

    // ...and rebuilds the same bytes from an empty store
    let b = Server::spawn(p, "b.toml")?;
    for req in &requests {
        send(&b.1, req)?;
    }
    drop(b);
    let rebuilt = std::fs::read(p.join("data-b/envelopes.log")).map_err(|e| e.to_string())?;
    check(rebuilt == acknowledged, "replay into an empty store gave different bytes")?;
    Ok(format!("{held} records survive kill -9; replay reproduces {} identical log bytes", acknowledged.len()))
}

// ---------------------------------------------------------------------------
// Reports

fn report_discrepancy() -> Outcome {
    let mut fx = Fx::new(9);
    let from = t0();
    let to = t0() + Duration::days(30);
    let medium = BTreeMap::from([("head".to_string(), MediumDose { msv: 2.0, source: MediumDoseSource::Explicit })]);
    let decode = |envs: &[SignedEnvelope]| -> Vec<InvestigationRecord> { envs.iter().map(|e| e.decode_record().unwrap()).collect() };

    let doses = [1.2, 2.9, 1.7, 3.4];
    let hetero = decode(&doses.iter().enumerate().map(|(i, &d)| fx.head_ct("H", from + Duration::days(i as i64 + 1), d)).collect::<Vec<_>>());
    let r = periodic_report(&hetero, from, to, &medium).map_err(|e| e.to_string())?;
    let exact: f64 = doses.iter().sum();
    let estimate = doses.len() as f64 * 2.0;
    check((r.totals.summed_dose_msv - exact).abs() < 1e-9, format!("sum {} vs {exact}", r.totals.summed_dose_msv))?;
    check((r.totals.estimate_msv - estimate).abs() < 1e-9, format!("estimate {} vs {estimate}", r.totals.estimate_msv))?;
    check(r.totals.discrepancy_msv.abs() > 1e-6, "heterogeneous fixture shows no discrepancy")?;

    let homo = decode(&(0..4).map(|i| fx.head_ct("M", from + Duration::days(i + 1), 2.0)).collect::<Vec<_>>());
    let r2 = periodic_report(&homo, from, to, &medium).map_err(|e| e.to_string())?;
    check(r2.totals.discrepancy_msv.abs() < 1e-9, format!("homogeneous fixture differs by {}", r2.totals.discrepancy_msv))?;
    Ok(format!("count x medium {estimate} vs exact {exact:.1}; homogeneous fixture agrees"))
}
