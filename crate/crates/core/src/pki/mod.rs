//! Certificate authority, trust store, signature schemes and emulated
//! smart cards.

mod card;
mod cert;
mod crypto;
mod trust;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use card::{
    personalize_card, replace_card, AppendResult, CardCommand, CardContext, CardImage, CardKind, CardRegistry,
    CardResponse, EmulatedCard, ReplacedCard, PIN_ATTEMPTS,
};
pub use cert::{
    CertId, Certificate, CertificateAuthority, CertificateBody, RevocationList, RevocationListBody, RevokedEntry,
    Role, Subject, DEFAULT_CA_VALIDITY_DAYS, DEFAULT_LEAF_VALIDITY_DAYS,
};
pub use crypto::{scheme, Algorithm, Ed25519Scheme, PublicKey, SecretKey, SignatureScheme, TestDigestScheme};
pub use trust::{check_envelope, verify_envelope, EnvelopeVerifier, RejectReason, TrustBundle, TrustStore, Verdict};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PkiError {
    #[error("issuance refused: {0}")]
    Issuance(String),
    #[error("unknown certificate {0}")]
    UnknownCertificate(CertId),
    #[error("invalid revocation list: {0}")]
    InvalidCrl(String),
    #[error("wrong PIN, {remaining} attempts left")]
    WrongPin { remaining: u8 },
    #[error("card is locked")]
    CardLocked,
    #[error("PIN verification required")]
    PinRequired,
    #[error("certificate {0} is not valid at signing time")]
    CertificateNotValid(CertId),
    #[error("unknown card holder {0}")]
    UnknownHolder(String),
    #[error("operation not supported by this card: {0}")]
    Unsupported(String),
    #[error("card image: {0}")]
    Image(String),
}

/// Anything that can sign investigation records: a PRSC, or a facility key
/// held by the service.
pub trait RecordSigner {
    fn certificate(&self) -> &Certificate;
    fn sign_payload(&mut self, payload: &[u8], now: DateTime<Utc>) -> Result<Vec<u8>, PkiError>;
}

/// A key held in memory.
#[derive(Debug, Clone)]
pub struct SoftSigner {
    key: SecretKey,
    certificate: Certificate,
}

impl SoftSigner {
    pub fn new(key: SecretKey, certificate: Certificate) -> Result<Self, PkiError> {
        if key.public_key() != certificate.body.public_key {
            return Err(PkiError::Issuance("key does not match certificate".into()));
        }
        Ok(Self { key, certificate })
    }
}

impl RecordSigner for SoftSigner {
    fn certificate(&self) -> &Certificate {
        &self.certificate
    }

    fn sign_payload(&mut self, payload: &[u8], now: DateTime<Utc>) -> Result<Vec<u8>, PkiError> {
        if !self.certificate.valid_at(now) {
            return Err(PkiError::CertificateNotValid(self.certificate.id().clone()));
        }
        Ok(self.key.sign(payload))
    }
}

/// A certificate together with its private key, as issued to a facility
/// or an operator outside a card.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Identity {
    pub certificate: Certificate,
    pub key: SecretKey,
}

impl Identity {
    pub fn signer(&self) -> Result<SoftSigner, PkiError> {
        SoftSigner::new(self.key.clone(), self.certificate.clone())
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.key.sign(message)
    }
}
