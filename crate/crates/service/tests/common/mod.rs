#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use radsafe_core::dose::{DoseInput, DoseQuantity};
use radsafe_core::ledger::{InvestigationInputs, PatientId, RecordId, RecordKind};
use radsafe_core::pki::{Algorithm, CertificateAuthority, Identity, Role, SecretKey, Subject, TrustStore};
use radsafe_service::{Client, NodeRole, Service, ServiceConfig};
use tokio::sync::oneshot;

pub struct Pki {
    pub rng: ChaCha20Rng,
    pub ca: CertificateAuthority,
    pub trust: TrustStore,
    pub dir: tempfile::TempDir,
}

impl Pki {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ca = CertificateAuthority::init_root("Root", Algorithm::Ed25519, epoch(), Duration::days(7300), &mut rng);
        let trust = TrustStore::new(ca.certificate().clone());
        Self { rng, ca, trust, dir: tempfile::tempdir().unwrap() }
    }

    pub fn identity(&mut self, name: &str, role: Role) -> Identity {
        let key = SecretKey::generate(Algorithm::Ed25519, &mut self.rng);
        let certificate = self
            .ca
            .issue(Subject { name: name.into(), role }, key.public_key(), epoch(), epoch() + Duration::days(3650), &mut self.rng)
            .unwrap();
        self.trust.add_certificate(certificate.clone());
        Identity { certificate, key }
    }

    pub fn bundle_path(&self) -> PathBuf {
        let p = self.dir.path().join("trust.json");
        std::fs::write(&p, serde_json::to_vec(&self.trust.to_bundle()).unwrap()).unwrap();
        p
    }

    pub fn identity_path(&self, id: &Identity) -> PathBuf {
        let p = self.dir.path().join(format!("{}.identity.json", id.certificate.body.subject.name));
        std::fs::write(&p, serde_json::to_vec(id).unwrap()).unwrap();
        p
    }
}

/// Certificates start here so records can be dated in 2025.
pub fn epoch() -> DateTime<Utc> {
    "2024-06-01T00:00:00Z".parse().unwrap()
}

pub fn t(s: &str) -> DateTime<Utc> {
    s.parse().unwrap()
}

pub struct Running {
    pub addr: SocketAddr,
    pub url: String,
    stop: Option<oneshot::Sender<()>>,
    handle: Option<tokio::task::JoinHandle<()>>,
}

impl Running {
    pub async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.handle.take().unwrap().await.unwrap();
    }
}

pub fn config(
    pki: &Pki,
    facility: &Identity,
    role: NodeRole,
    node_id: &str,
    data_dir: &Path,
    upstream: Option<String>,
    listen: &str,
) -> ServiceConfig {
    ServiceConfig {
        listen: listen.parse().unwrap(),
        data_dir: data_dir.to_path_buf(),
        role,
        node_id: node_id.into(),
        upstream,
        trust_bundle: pki.bundle_path(),
        identity: pki.identity_path(facility),
        limit_policy: None,
        k_factors: None,
        tls_cert: None,
        tls_key: None,
        sync_interval_secs: 3600,
        max_clock_skew_secs: 300,
    }
}

pub async fn spawn(config: ServiceConfig) -> Running {
    let svc = Service::start(config).await.unwrap();
    let addr = svc.local_addr().unwrap();
    let (tx, rx) = oneshot::channel::<()>();
    let handle = tokio::spawn(async move {
        svc.run(async {
            let _ = rx.await;
        })
        .await
        .unwrap();
    });
    Running { addr, url: format!("http://{addr}"), stop: Some(tx), handle: Some(handle) }
}

pub fn client(r: &Running, id: &Identity) -> Client {
    Client::new(&r.url, id.clone())
}

pub fn chest_radiograph() -> DoseInput {
    DoseInput::Radiography(radsafe_core::dose::RadiographyParameters {
        dap: DoseQuantity::mgy_cm2(197.0).unwrap(),
        irradiated_area_cm2: 1225.0,
        exposed_tissues: vec!["lung".into()],
    })
}

pub fn head_dlp(msv: f64) -> DoseInput {
    DoseInput::CtDlp { dlp: DoseQuantity::mgy_cm(msv / 0.002).unwrap(), anatomy: "head".into() }
}

pub fn inputs(patient: &str, at: DateTime<Utc>, operator: &str, exam: &str, input: DoseInput) -> InvestigationInputs {
    InvestigationInputs {
        patient_id: PatientId::new(patient),
        patient_age_years: Some(45),
        performed_at: at,
        facility_id: "HOSP-A".into(),
        operator_id: operator.into(),
        exam_type: exam.into(),
        raw_input: input,
        kind: RecordKind::Original,
    }
}

pub fn rid(n: u32) -> RecordId {
    RecordId(format!("00000000-0000-4000-8000-{n:012}"))
}
