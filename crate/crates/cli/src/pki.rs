//! CA directory: `ca.json` (the CA and its private key) and `bundle.json`
//! (the trust bundle nodes load, extended with every issued certificate
//! and the newest CRL).

use std::path::{Path, PathBuf};

use chrono::{Duration, Utc};
use radsafe_core::ledger::RecordVerifier;
use radsafe_core::pki::{
    personalize_card, Algorithm, CardCommand, CardContext, CardImage, CardKind, CardResponse, CertId, Certificate,
    CertificateAuthority, Identity, RevocationList, Role, SecretKey, Subject, TrustBundle, TrustStore,
};
use radsafe_core::dose::DoseEngine;
use radsafe_service::Client;
use serde_json::json;

use crate::args::{CaInitArgs, CardKindArg, CardReadArgs, IssueArgs, PersonalizeArgs, RevokeArgs, RoleArg};
use crate::error::{CliError, CliResult};
use crate::util::{load_trust, msv, opt_time, read_json, write_json};
use crate::Out;

const CA_FILE: &str = "ca.json";
const BUNDLE_FILE: &str = "bundle.json";

fn ca_path(dir: &Path) -> PathBuf {
    dir.join(CA_FILE)
}

fn load_ca(dir: &Path) -> CliResult<CertificateAuthority> {
    read_json(&ca_path(dir))
}

fn update_bundle(dir: &Path, f: impl FnOnce(&mut TrustStore) -> CliResult<()>) -> CliResult<()> {
    let path = dir.join(BUNDLE_FILE);
    let mut trust = load_trust(&path)?;
    f(&mut trust)?;
    write_json(&path, &trust.to_bundle())
}

fn add_to_bundle(dir: &Path, cert: &Certificate) -> CliResult<()> {
    update_bundle(dir, |t| {
        t.add_certificate(cert.clone());
        Ok(())
    })
}

pub fn ca_init(a: &CaInitArgs) -> CliResult<Out> {
    if ca_path(&a.dir).exists() {
        return Err(CliError::usage(format!("{} already exists", ca_path(&a.dir).display())));
    }
    std::fs::create_dir_all(&a.dir)?;
    let nb = opt_time(a.not_before.as_deref())?;
    let ca = CertificateAuthority::init_root(&a.name, Algorithm::Ed25519, nb, Duration::days(a.validity_days), &mut rand::rng());
    write_json(&ca_path(&a.dir), &ca)?;
    let bundle: TrustBundle = TrustStore::new(ca.certificate().clone()).to_bundle();
    write_json(&a.dir.join(BUNDLE_FILE), &bundle)?;
    let cert = ca.certificate();
    Ok(Out::new(
        json!({"cert_id": cert.id(), "name": a.name, "not_after": cert.body.not_after, "bundle": a.dir.join(BUNDLE_FILE)}),
        format!("root CA {} ({})\ntrust bundle {}\n", cert.id(), a.name, a.dir.join(BUNDLE_FILE).display()),
    ))
}

async fn publish_certificate(url: &str, cert: &Certificate) -> CliResult<bool> {
    Ok(Client::anonymous(url).add_certificate(cert).await?.installed)
}

async fn publish_crl(url: &str, crl: &RevocationList) -> CliResult<bool> {
    Ok(Client::anonymous(url).add_crl(crl).await?.installed)
}

pub async fn cert_issue(a: &IssueArgs) -> CliResult<Out> {
    let ca = load_ca(&a.ca)?;
    let role = match a.role {
        RoleArg::Citizen => Role::Citizen,
        RoleArg::Professional => Role::Professional,
        RoleArg::Facility => Role::Facility,
    };
    let nb = opt_time(a.not_before.as_deref())?;
    let mut rng = rand::rng();
    let key = SecretKey::generate(Algorithm::Ed25519, &mut rng);
    let certificate = ca.issue(Subject { name: a.name.clone(), role }, key.public_key(), nb, nb + Duration::days(a.validity_days), &mut rng)?;
    write_json(&a.out, &Identity { certificate: certificate.clone(), key })?;
    add_to_bundle(&a.ca, &certificate)?;
    let published = match &a.publish {
        Some(url) => Some(publish_certificate(url, &certificate).await?),
        None => None,
    };
    Ok(Out::new(
        json!({"cert_id": certificate.id(), "name": a.name, "role": role, "identity": a.out, "published": published}),
        format!("issued {} to {} ({role:?})\nidentity {}\n", certificate.id(), a.name, a.out.display()),
    ))
}

pub async fn cert_revoke(a: &RevokeArgs) -> CliResult<Out> {
    let mut ca = load_ca(&a.ca)?;
    let at = opt_time(a.at.as_deref())?;
    let id = CertId(a.cert_id.clone());
    ca.revoke(&id, at);
    let crl = ca.crl(Utc::now().max(at));
    write_json(&ca_path(&a.ca), &ca)?;
    let out = a.out.clone().unwrap_or_else(|| a.ca.join("crl.json"));
    write_json(&out, &crl)?;
    update_bundle(&a.ca, |t| t.add_crl(crl.clone()).map(|_| ()).map_err(CliError::from))?;
    let published = match &a.publish {
        Some(url) => Some(publish_crl(url, &crl).await?),
        None => None,
    };
    Ok(Out::new(
        json!({"revoked": id, "at": at, "crl_number": crl.body.number, "crl": out, "published": published}),
        format!("revoked {id} from {}\nCRL #{} written to {}\n", at.to_rfc3339(), crl.body.number, out.display()),
    ))
}

pub fn card_personalize(a: &PersonalizeArgs) -> CliResult<Out> {
    let ca = load_ca(&a.ca)?;
    let kind = match a.kind {
        CardKindArg::Citizen => CardKind::Crsc,
        CardKindArg::Professional => CardKind::Prsc,
    };
    let nb = opt_time(a.not_before.as_deref())?;
    let card = personalize_card(&ca, kind, &a.holder, &a.pin, a.capacity, nb, Duration::days(a.validity_days), &mut rand::rng())?;
    CardImage::save(&card, &a.out)?;
    add_to_bundle(&a.ca, card.cert())?;
    Ok(Out::new(
        json!({"holder": a.holder, "kind": kind, "cert_id": card.cert().id(), "capacity": card.store().capacity(), "card": a.out}),
        format!("{kind:?} card for {} ({}) written to {}\n", a.holder, card.cert().id(), a.out.display()),
    ))
}

pub fn card_read(a: &CardReadArgs) -> CliResult<Out> {
    let mut card = CardImage::load(&a.card)?;
    let ctx = CardContext { now: Utc::now(), verifier: None };
    let CardResponse::Selected { kind, holder, cert_id, records, capacity, pin_attempts_left } = card.execute(CardCommand::Select, &ctx)?
    else {
        return Err(CliError::new(crate::error::Exit::Other, "CARD", "unexpected SELECT response"));
    };
    let CardResponse::Records { envelopes } = card.execute(CardCommand::ReadRecords, &ctx)? else {
        return Err(CliError::new(crate::error::Exit::Other, "CARD", "unexpected READ RECORDS response"));
    };
    let trust = a.trust.as_deref().map(load_trust).transpose()?;
    let engine = DoseEngine::builtin();
    let mut rows = Vec::new();
    let mut text = format!(
        "{kind:?} card of {holder}, certificate {cert_id}\n{records} records{}, {pin_attempts_left} PIN attempts left\n",
        capacity.map(|c| format!(" of {c}")).unwrap_or_default()
    );
    for env in &envelopes {
        let verified = trust.as_ref().map(|t| {
            use radsafe_core::pki::EnvelopeVerifier;
            RecordVerifier { trust: t, engine: &engine }.check(env).map(|_| ()).map_err(|r| r.code())
        });
        let Ok(r) = env.decode_record() else {
            rows.push(json!({"error": "MALFORMED_PAYLOAD"}));
            text.push_str("  (undecodable record)\n");
            continue;
        };
        let status = match &verified {
            None => String::new(),
            Some(Ok(())) => "  verified".into(),
            Some(Err(code)) => format!("  REJECTED {code}"),
        };
        text.push_str(&format!(
            "  {}  {:<14} {:>12}  {}  durable={}{status}\n",
            r.performed_at.format("%Y-%m-%d %H:%M"),
            r.exam_type,
            msv(r.effective_msv()),
            r.record_id,
            card.store().is_durable(&r.record_id)
        ));
        rows.push(json!({
            "record_id": r.record_id,
            "performed_at": r.performed_at,
            "exam_type": r.exam_type,
            "effective_msv": r.effective_msv(),
            "durable": card.store().is_durable(&r.record_id),
            "verified": verified.map(|v| v.err().unwrap_or("OK")),
        }));
    }
    Ok(Out::new(
        json!({"kind": kind, "holder": holder, "cert_id": cert_id, "capacity": capacity, "pin_attempts_left": pin_attempts_left, "records": rows}),
        text,
    ))
}
