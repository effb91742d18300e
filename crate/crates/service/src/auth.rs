//! Request authentication with PKI certificates.
//!
//! A caller signs every request with the private key of a certificate the
//! service can chain to a trust anchor. Three headers carry the proof:
//!
//! | header                | value                                          |
//! |-----------------------|------------------------------------------------|
//! | `x-radsafe-cert`      | certificate id                                 |
//! | `x-radsafe-date`      | RFC 3339 timestamp, within the allowed skew    |
//! | `x-radsafe-signature` | base64 signature over the string to sign       |
//!
//! The string to sign is `METHOD \n PATH?QUERY \n DATE \n hex(sha256(body))`.

use axum::http::HeaderMap;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use chrono::{DateTime, Duration, Utc};
use radsafe_core::pki::{CertId, Identity, RejectReason, Role, TrustStore};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const HDR_CERT: &str = "x-radsafe-cert";
pub const HDR_DATE: &str = "x-radsafe-date";
pub const HDR_SIGNATURE: &str = "x-radsafe-signature";

/// An authenticated caller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Caller {
    pub cert_id: CertId,
    pub name: String,
    pub role: Role,
}

impl Caller {
    pub fn is_clinical(&self) -> bool {
        matches!(self.role, Role::Professional | Role::Facility)
    }

    pub fn is_facility(&self) -> bool {
        self.role == Role::Facility
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuthError {
    #[error("missing authentication headers")]
    Missing,
    #[error("unknown certificate")]
    UnknownCertificate,
    #[error("malformed date header")]
    BadDate,
    #[error("request date outside the allowed clock skew")]
    Skew,
    #[error("request signature does not verify")]
    BadSignature,
    #[error("certificate rejected: {0}")]
    Chain(RejectReason),
}

pub fn string_to_sign(method: &str, path_and_query: &str, date: &str, body: &[u8]) -> Vec<u8> {
    let digest = Sha256::digest(body);
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    format!("{method}\n{path_and_query}\n{date}\n{hex}").into_bytes()
}

/// Header name/value pairs authenticating one request.
pub fn sign_request(
    identity: &Identity,
    method: &str,
    path_and_query: &str,
    body: &[u8],
    now: DateTime<Utc>,
) -> [(&'static str, String); 3] {
    let date = now.to_rfc3339();
    let sig = identity.sign(&string_to_sign(method, path_and_query, &date, body));
    [
        (HDR_CERT, identity.certificate.id().as_str().to_string()),
        (HDR_DATE, date),
        (HDR_SIGNATURE, STANDARD.encode(sig)),
    ]
}

pub fn authenticate(
    headers: &HeaderMap,
    method: &str,
    path_and_query: &str,
    body: &[u8],
    trust: &TrustStore,
    now: DateTime<Utc>,
    max_skew: Duration,
) -> Result<Caller, AuthError> {
    let get = |name| headers.get(name).and_then(|v| v.to_str().ok());
    let (Some(cert), Some(date), Some(sig)) = (get(HDR_CERT), get(HDR_DATE), get(HDR_SIGNATURE)) else {
        return Err(AuthError::Missing);
    };
    let at = DateTime::parse_from_rfc3339(date).map_err(|_| AuthError::BadDate)?.with_timezone(&Utc);
    if (now - at).abs() > max_skew {
        return Err(AuthError::Skew);
    }
    let cert_id = CertId(cert.to_string());
    let certificate = trust.lookup(&cert_id).ok_or(AuthError::UnknownCertificate)?;
    let sig = STANDARD.decode(sig).map_err(|_| AuthError::BadSignature)?;
    if !certificate.body.public_key.verify(&string_to_sign(method, path_and_query, date, body), &sig) {
        return Err(AuthError::BadSignature);
    }
    trust.verify_chain(&cert_id, now).map_err(AuthError::Chain)?;
    Ok(Caller { cert_id, name: certificate.body.subject.name.clone(), role: certificate.role() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use axum::http::HeaderValue;
    use radsafe_core::pki::{Algorithm, CertificateAuthority, SecretKey, Subject};
    use rand::SeedableRng;

    fn setup() -> (TrustStore, Identity, DateTime<Utc>) {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let now = Utc::now();
        let ca = CertificateAuthority::init_root("R", Algorithm::Ed25519, now - Duration::days(1), Duration::days(30), &mut rng);
        let key = SecretKey::generate(Algorithm::Ed25519, &mut rng);
        let subject = Subject { name: "HOSP-A".into(), role: Role::Facility };
        let cert = ca.issue(subject, key.public_key(), now - Duration::days(1), now + Duration::days(5), &mut rng).unwrap();
        let mut trust = TrustStore::new(ca.certificate().clone());
        trust.add_certificate(cert.clone());
        (trust, Identity { certificate: cert, key }, now)
    }

    fn headers(pairs: [(&'static str, String); 3]) -> HeaderMap {
        let mut h = HeaderMap::new();
        for (k, v) in pairs {
            h.insert(k, HeaderValue::from_str(&v).unwrap());
        }
        h
    }

    #[test]
    fn signed_request_round_trip_and_failures() {
        let (trust, id, now) = setup();
        let skew = Duration::minutes(5);
        let h = headers(sign_request(&id, "POST", "/sync", b"{}", now));
        let caller = authenticate(&h, "POST", "/sync", b"{}", &trust, now, skew).unwrap();
        assert_eq!((caller.name.as_str(), caller.role), ("HOSP-A", Role::Facility));
        assert_eq!(authenticate(&h, "POST", "/sync", b"{ }", &trust, now, skew), Err(AuthError::BadSignature));
        assert_eq!(authenticate(&h, "GET", "/sync", b"{}", &trust, now, skew), Err(AuthError::BadSignature));
        assert_eq!(
            authenticate(&h, "POST", "/sync", b"{}", &trust, now + Duration::minutes(6), skew),
            Err(AuthError::Skew)
        );
        assert_eq!(authenticate(&HeaderMap::new(), "GET", "/", b"", &trust, now, skew), Err(AuthError::Missing));
        let late = now + Duration::days(6);
        let h = headers(sign_request(&id, "GET", "/", b"", late));
        assert_eq!(authenticate(&h, "GET", "/", b"", &trust, late, skew), Err(AuthError::Chain(RejectReason::Expired)));
    }
}
