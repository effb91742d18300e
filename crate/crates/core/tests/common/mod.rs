#![allow(dead_code)]

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use radsafe_core::dose::{DoseEngine, DoseInput, DoseQuantity};
use radsafe_core::ledger::{create_record, InvestigationInputs, PatientId, RecordKind, SignedEnvelope};
use radsafe_core::pki::{Algorithm, CertificateAuthority, Role, SecretKey, SoftSigner, Subject, TrustStore};

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap()
}

pub struct Fx {
    pub rng: ChaCha20Rng,
    pub ca: CertificateAuthority,
    pub trust: TrustStore,
    pub engine: DoseEngine,
    pub signer: SoftSigner,
}

impl Fx {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ca = CertificateAuthority::init_root("Root", Algorithm::Ed25519, t0(), Duration::days(7300), &mut rng);
        let mut trust = TrustStore::new(ca.certificate().clone());
        let signer = Self::professional(&ca, &mut trust, &mut rng, "dr-test");
        Self { rng, ca, trust, engine: DoseEngine::builtin(), signer }
    }

    pub fn professional(
        ca: &CertificateAuthority,
        trust: &mut TrustStore,
        rng: &mut ChaCha20Rng,
        name: &str,
    ) -> SoftSigner {
        let key = SecretKey::generate(Algorithm::Ed25519, rng);
        let cert = ca
            .issue(
                Subject { name: name.into(), role: Role::Professional },
                key.public_key(),
                t0(),
                t0() + Duration::days(3650),
                rng,
            )
            .unwrap();
        trust.add_certificate(cert.clone());
        SoftSigner::new(key, cert).unwrap()
    }

    pub fn inputs(patient: &str, at: DateTime<Utc>, exam: &str, input: DoseInput) -> InvestigationInputs {
        InvestigationInputs {
            patient_id: PatientId::new(patient),
            patient_age_years: Some(40),
            performed_at: at,
            facility_id: "HOSP-A".into(),
            operator_id: "dr-test".into(),
            exam_type: exam.into(),
            raw_input: input,
            kind: RecordKind::Original,
        }
    }

    pub fn record(&mut self, patient: &str, at: DateTime<Utc>, exam: &str, input: DoseInput) -> SignedEnvelope {
        create_record(Self::inputs(patient, at, exam, input), &self.engine, &mut self.signer, &self.trust, &mut self.rng)
            .unwrap()
    }

    /// A head CT whose effective dose is `msv` (k = 0.002 mSv per mGy·cm).
    pub fn head_ct(&mut self, patient: &str, at: DateTime<Utc>, msv: f64) -> SignedEnvelope {
        let input = DoseInput::CtDlp { dlp: DoseQuantity::mgy_cm(msv / 0.002).unwrap(), anatomy: "head".into() };
        self.record(patient, at, "head", input)
    }

    pub fn catalog(&mut self, patient: &str, at: DateTime<Utc>, exam: &str) -> SignedEnvelope {
        self.record(patient, at, exam, DoseInput::Catalog { exam: exam.into() })
    }
}
