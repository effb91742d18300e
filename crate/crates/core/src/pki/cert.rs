//! Certificates, revocation lists and the issuing authority.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Duration, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::crypto::{Algorithm, PublicKey, SecretKey};
use super::PkiError;
use crate::canonical::{base64_bytes, to_canonical_vec};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CertId(pub String);

impl CertId {
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut b = [0u8; 16];
        rng.fill_bytes(&mut b);
        CertId(b.iter().map(|x| format!("{x:02x}")).collect())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CertId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    /// Patient (CRSC holder).
    Citizen,
    /// Medical or laboratory staff (PRSC holder).
    Professional,
    /// A hospital unit, service or mobile laboratory.
    Facility,
    /// Certificate authority; the only role allowed to issue.
    Ca,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subject {
    pub name: String,
    pub role: Role,
}

/// The signed part of a certificate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateBody {
    pub cert_id: CertId,
    pub subject: Subject,
    pub public_key: PublicKey,
    pub issuer_id: CertId,
    pub not_before: DateTime<Utc>,
    pub not_after: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub body: CertificateBody,
    #[serde(with = "base64_bytes")]
    pub signature: Vec<u8>,
}

impl Certificate {
    pub fn id(&self) -> &CertId {
        &self.body.cert_id
    }

    pub fn role(&self) -> Role {
        self.body.subject.role
    }

    pub fn is_self_signed(&self) -> bool {
        self.body.cert_id == self.body.issuer_id
    }

    pub fn valid_at(&self, at: DateTime<Utc>) -> bool {
        at >= self.body.not_before && at <= self.body.not_after
    }

    pub fn signed_bytes(&self) -> Vec<u8> {
        to_canonical_vec(&self.body).expect("certificate body encodes")
    }

    pub fn signature_verifies_with(&self, issuer_key: &PublicKey) -> bool {
        issuer_key.verify(&self.signed_bytes(), &self.signature)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevokedEntry {
    pub cert_id: CertId,
    pub revoked_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationListBody {
    pub issuer_id: CertId,
    /// Monotonic per issuer; a newer list supersedes older ones.
    pub number: u64,
    pub issued_at: DateTime<Utc>,
    /// Sorted by `cert_id`.
    pub revoked: Vec<RevokedEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationList {
    pub body: RevocationListBody,
    #[serde(with = "base64_bytes")]
    pub signature: Vec<u8>,
}

impl RevocationList {
    pub fn signed_bytes(&self) -> Vec<u8> {
        to_canonical_vec(&self.body).expect("CRL body encodes")
    }

    /// Revocation time of `cert` if it appears on the list.
    pub fn revoked_at(&self, cert: &CertId) -> Option<DateTime<Utc>> {
        self.body
            .revoked
            .binary_search_by(|e| e.cert_id.cmp(cert))
            .ok()
            .map(|i| self.body.revoked[i].revoked_at)
    }
}

/// An issuing CA: its certificate, private key, and revocation state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateAuthority {
    certificate: Certificate,
    key: SecretKey,
    revoked: BTreeMap<CertId, DateTime<Utc>>,
    crl_number: u64,
}

pub const DEFAULT_CA_VALIDITY_DAYS: i64 = 20 * 365;
pub const DEFAULT_LEAF_VALIDITY_DAYS: i64 = 5 * 365;

impl CertificateAuthority {
    /// Creates a self-signed root valid from `now` for `validity`.
    pub fn init_root<R: RngCore + ?Sized>(
        name: &str,
        algorithm: Algorithm,
        now: DateTime<Utc>,
        validity: Duration,
        rng: &mut R,
    ) -> Self {
        let key = SecretKey::generate(algorithm, rng);
        let cert_id = CertId::random(rng);
        let body = CertificateBody {
            cert_id: cert_id.clone(),
            subject: Subject { name: name.to_string(), role: Role::Ca },
            public_key: key.public_key(),
            issuer_id: cert_id,
            not_before: now,
            not_after: now + validity,
        };
        let signature = key.sign(&to_canonical_vec(&body).expect("certificate body encodes"));
        Self { certificate: Certificate { body, signature }, key, revoked: BTreeMap::new(), crl_number: 0 }
    }

    /// Creates a subordinate CA whose certificate is issued by `self`.
    pub fn subordinate<R: RngCore + ?Sized>(
        &self,
        name: &str,
        not_before: DateTime<Utc>,
        not_after: DateTime<Utc>,
        rng: &mut R,
    ) -> Result<Self, PkiError> {
        let key = SecretKey::generate(self.key.algorithm(), rng);
        let subject = Subject { name: name.to_string(), role: Role::Ca };
        let certificate = self.issue(subject, key.public_key(), not_before, not_after, rng)?;
        Ok(Self { certificate, key, revoked: BTreeMap::new(), crl_number: 0 })
    }

    pub fn certificate(&self) -> &Certificate {
        &self.certificate
    }

    pub fn issue<R: RngCore + ?Sized>(
        &self,
        subject: Subject,
        public_key: PublicKey,
        not_before: DateTime<Utc>,
        not_after: DateTime<Utc>,
        rng: &mut R,
    ) -> Result<Certificate, PkiError> {
        if not_after < not_before {
            return Err(PkiError::Issuance("validity window is empty".into()));
        }
        if !self.certificate.valid_at(not_before) {
            return Err(PkiError::Issuance(format!("CA {} is not valid at {not_before}", self.certificate.id())));
        }
        let body = CertificateBody {
            cert_id: CertId::random(rng),
            subject,
            public_key,
            issuer_id: self.certificate.id().clone(),
            not_before,
            not_after,
        };
        let signature = self.key.sign(&to_canonical_vec(&body).expect("certificate body encodes"));
        Ok(Certificate { body, signature })
    }

    /// Records a revocation; it takes effect in the next [`Self::crl`].
    pub fn revoke(&mut self, cert: &CertId, at: DateTime<Utc>) {
        self.revoked
            .entry(cert.clone())
            .and_modify(|t| *t = (*t).min(at))
            .or_insert(at);
    }

    pub fn is_revoked(&self, cert: &CertId, at: DateTime<Utc>) -> bool {
        self.revoked.get(cert).is_some_and(|t| *t <= at)
    }

    /// Issues a signed revocation list of everything revoked so far.
    pub fn crl(&mut self, now: DateTime<Utc>) -> RevocationList {
        self.crl_number += 1;
        let body = RevocationListBody {
            issuer_id: self.certificate.id().clone(),
            number: self.crl_number,
            issued_at: now,
            revoked: self
                .revoked
                .iter()
                .map(|(id, t)| RevokedEntry { cert_id: id.clone(), revoked_at: *t })
                .collect(),
        };
        let signature = self.key.sign(&to_canonical_vec(&body).expect("CRL body encodes"));
        RevocationList { body, signature }
    }
}
