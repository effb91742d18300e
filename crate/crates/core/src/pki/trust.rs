//! Chain building, revocation checks and envelope verification.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::cert::{CertId, Certificate, RevocationList, Role};
use super::crypto::Algorithm;
use super::PkiError;
use crate::ledger::{InvestigationRecord, SignedEnvelope};

const MAX_CHAIN_DEPTH: usize = 8;

/// Machine-readable reason an envelope or chain was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    BadSignature,
    MalformedPayload,
    UnknownSigner,
    UnknownIssuer,
    ChainCycle,
    ChainTooLong,
    IssuerNotCa,
    BadChainSignature,
    NotYetValid,
    Expired,
    Revoked,
    UntrustedRoot,
    SignerNotAuthorized,
    DisallowedAlgorithm,
    DoseMismatch,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::BadSignature => "BAD_SIGNATURE",
            RejectReason::MalformedPayload => "MALFORMED_PAYLOAD",
            RejectReason::UnknownSigner => "UNKNOWN_SIGNER",
            RejectReason::UnknownIssuer => "UNKNOWN_ISSUER",
            RejectReason::ChainCycle => "CHAIN_CYCLE",
            RejectReason::ChainTooLong => "CHAIN_TOO_LONG",
            RejectReason::IssuerNotCa => "ISSUER_NOT_CA",
            RejectReason::BadChainSignature => "BAD_CHAIN_SIGNATURE",
            RejectReason::NotYetValid => "NOT_YET_VALID",
            RejectReason::Expired => "EXPIRED",
            RejectReason::Revoked => "REVOKED",
            RejectReason::UntrustedRoot => "UNTRUSTED_ROOT",
            RejectReason::SignerNotAuthorized => "SIGNER_NOT_AUTHORIZED",
            RejectReason::DisallowedAlgorithm => "DISALLOWED_ALGORITHM",
            RejectReason::DoseMismatch => "DOSE_MISMATCH",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

/// Anything that can admit or refuse a signed envelope.
pub trait EnvelopeVerifier {
    /// Returns the decoded record if the envelope is acceptable.
    fn check(&self, envelope: &SignedEnvelope) -> Result<InvestigationRecord, RejectReason>;
}

/// Portable form of a [`TrustStore`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrustBundle {
    pub anchors: Vec<Certificate>,
    #[serde(default)]
    pub certificates: Vec<Certificate>,
    #[serde(default)]
    pub crls: Vec<RevocationList>,
    #[serde(default)]
    pub allow_test_scheme: bool,
}

/// Trust anchors, known certificates and the newest CRL per issuer.
#[derive(Debug, Clone, Default)]
pub struct TrustStore {
    anchors: BTreeMap<CertId, Certificate>,
    certs: BTreeMap<CertId, Certificate>,
    crls: BTreeMap<CertId, RevocationList>,
    allow_test_scheme: bool,
}

impl TrustStore {
    pub fn new(anchor: Certificate) -> Self {
        let mut store = Self::default();
        store.add_anchor(anchor);
        store
    }

    pub fn from_bundle(bundle: TrustBundle) -> Result<Self, PkiError> {
        let mut store = Self { allow_test_scheme: bundle.allow_test_scheme, ..Self::default() };
        for a in bundle.anchors {
            store.add_anchor(a);
        }
        for c in bundle.certificates {
            store.add_certificate(c);
        }
        for crl in bundle.crls {
            store.add_crl(crl)?;
        }
        Ok(store)
    }

    pub fn to_bundle(&self) -> TrustBundle {
        TrustBundle {
            anchors: self.anchors.values().cloned().collect(),
            certificates: self.certs.values().cloned().collect(),
            crls: self.crls.values().cloned().collect(),
            allow_test_scheme: self.allow_test_scheme,
        }
    }

    /// Accept certificates and envelopes signed with the insecure test
    /// scheme. Off by default.
    pub fn allow_test_scheme(mut self, allow: bool) -> Self {
        self.allow_test_scheme = allow;
        self
    }

    pub fn add_anchor(&mut self, cert: Certificate) {
        self.anchors.insert(cert.id().clone(), cert);
    }

    /// Registers a certificate for chain building. Nothing is trusted by
    /// being added; chains are checked on use.
    pub fn add_certificate(&mut self, cert: Certificate) {
        if !self.anchors.contains_key(cert.id()) {
            self.certs.insert(cert.id().clone(), cert);
        }
    }

    /// Installs a CRL if its signature verifies against a known issuer and
    /// it is newer than the one held.
    pub fn add_crl(&mut self, crl: RevocationList) -> Result<bool, PkiError> {
        let issuer = self
            .lookup(&crl.body.issuer_id)
            .ok_or_else(|| PkiError::UnknownCertificate(crl.body.issuer_id.clone()))?;
        if !issuer.body.public_key.verify(&crl.signed_bytes(), &crl.signature) {
            return Err(PkiError::InvalidCrl("signature does not verify".into()));
        }
        if crl.body.revoked.windows(2).any(|w| w[0].cert_id >= w[1].cert_id) {
            return Err(PkiError::InvalidCrl("entries not sorted".into()));
        }
        match self.crls.get(&crl.body.issuer_id) {
            Some(held) if held.body.number >= crl.body.number => Ok(false),
            _ => {
                self.crls.insert(crl.body.issuer_id.clone(), crl);
                Ok(true)
            }
        }
    }

    pub fn lookup(&self, id: &CertId) -> Option<&Certificate> {
        self.anchors.get(id).or_else(|| self.certs.get(id))
    }

    pub fn is_revoked(&self, cert: &Certificate, at: DateTime<Utc>) -> bool {
        self.crls
            .get(&cert.body.issuer_id)
            .and_then(|crl| crl.revoked_at(cert.id()))
            .is_some_and(|t| t <= at)
    }

    /// Walks from `leaf` to a trust anchor, checking every link at `at`.
    pub fn verify_chain(&self, leaf: &CertId, at: DateTime<Utc>) -> Result<&Certificate, RejectReason> {
        let first = self.lookup(leaf).ok_or(RejectReason::UnknownSigner)?;
        let mut current = first;
        let mut visited = BTreeSet::new();
        for _ in 0..MAX_CHAIN_DEPTH {
            if !visited.insert(current.id().clone()) {
                return Err(RejectReason::ChainCycle);
            }
            if current.body.public_key.algorithm == Algorithm::TestDigest && !self.allow_test_scheme {
                return Err(RejectReason::DisallowedAlgorithm);
            }
            if at < current.body.not_before {
                return Err(RejectReason::NotYetValid);
            }
            if at > current.body.not_after {
                return Err(RejectReason::Expired);
            }
            if let Some(anchor) = self.anchors.get(current.id()) {
                if anchor != current || !anchor.signature_verifies_with(&anchor.body.public_key) {
                    return Err(RejectReason::BadChainSignature);
                }
                return Ok(first);
            }
            if current.is_self_signed() {
                return Err(RejectReason::UntrustedRoot);
            }
            if self.is_revoked(current, at) {
                return Err(RejectReason::Revoked);
            }
            let issuer = self.lookup(&current.body.issuer_id).ok_or(RejectReason::UnknownIssuer)?;
            if issuer.role() != Role::Ca {
                return Err(RejectReason::IssuerNotCa);
            }
            if !current.signature_verifies_with(&issuer.body.public_key) {
                return Err(RejectReason::BadChainSignature);
            }
            current = issuer;
        }
        Err(RejectReason::ChainTooLong)
    }
}

/// Signature first, then payload decoding, then signer role, chain,
/// validity and revocation at `at` (the record's `performed_at` when
/// `None`).
pub fn check_envelope(
    envelope: &SignedEnvelope,
    trust: &TrustStore,
    at: Option<DateTime<Utc>>,
) -> Result<InvestigationRecord, RejectReason> {
    let signer = trust.lookup(&envelope.signer_cert_id).ok_or(RejectReason::UnknownSigner)?;
    if !signer.body.public_key.verify(&envelope.payload, &envelope.signature) {
        return Err(RejectReason::BadSignature);
    }
    let record = envelope.decode_record().map_err(|_| RejectReason::MalformedPayload)?;
    if !matches!(signer.role(), Role::Professional | Role::Facility) {
        return Err(RejectReason::SignerNotAuthorized);
    }
    trust.verify_chain(&envelope.signer_cert_id, at.unwrap_or(record.performed_at))?;
    Ok(record)
}

pub fn verify_envelope(envelope: &SignedEnvelope, trust: &TrustStore, at: Option<DateTime<Utc>>) -> Verdict {
    match check_envelope(envelope, trust, at) {
        Ok(_) => Verdict::Accept,
        Err(reason) => Verdict::Reject(reason),
    }
}

impl EnvelopeVerifier for TrustStore {
    fn check(&self, envelope: &SignedEnvelope) -> Result<InvestigationRecord, RejectReason> {
        check_envelope(envelope, self, None)
    }
}
