//! Emulated citizen (CRSC) and professional (PRSC) smart cards.
//!
//! The card is driven only through [`EmulatedCard::execute`]. The private
//! key is generated on the card and no command returns it.
//!
//! | command          | needs PIN | response                         |
//! |------------------|-----------|----------------------------------|
//! | `SELECT`         | no        | kind, holder, cert id, counts    |
//! | `GET_CERTIFICATE`| no        | holder certificate               |
//! | `READ_RECORDS`   | no        | on-card envelopes, oldest first  |
//! | `APPEND`         | no        | per-envelope outcome             |
//! | `MARK_DURABLE`   | no        | number of new confirmations      |
//! | `UNLOCK`         | -         | remaining attempts               |
//! | `SIGN`           | yes       | signature over the payload       |
//!
//! Three wrong PINs in a row lock the card for good.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cert::{CertId, Certificate, CertificateAuthority, RevocationList, Role, Subject};
use super::crypto::SecretKey;
use super::trust::EnvelopeVerifier;
use super::{PkiError, RecordSigner};
use crate::canonical::{from_canonical_slice, to_canonical_vec};
use crate::ledger::{PatientId, RecordId, SignedEnvelope};
use crate::sync::{Admitted, ReplicaKind, ReplicaStore};

pub const PIN_ATTEMPTS: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CardKind {
    /// Citizen card; carries the holder's dose history.
    Crsc,
    /// Professional card; signs records.
    Prsc,
}

impl CardKind {
    pub fn role(self) -> Role {
        match self {
            CardKind::Crsc => Role::Citizen,
            CardKind::Prsc => Role::Professional,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PinState {
    #[serde(with = "crate::canonical::base64_bytes")]
    salt: Vec<u8>,
    #[serde(with = "crate::canonical::base64_bytes")]
    digest: Vec<u8>,
    attempts_left: u8,
}

impl PinState {
    fn new<R: RngCore + ?Sized>(pin: &str, rng: &mut R) -> Self {
        let mut salt = vec![0u8; 16];
        rng.fill_bytes(&mut salt);
        let digest = Self::hash(&salt, pin);
        Self { salt, digest, attempts_left: PIN_ATTEMPTS }
    }

    fn hash(salt: &[u8], pin: &str) -> Vec<u8> {
        let mut h = Sha256::new();
        h.update(salt);
        h.update(pin.as_bytes());
        h.finalize().to_vec()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmulatedCard {
    kind: CardKind,
    holder: String,
    key: SecretKey,
    certificate: Certificate,
    store: ReplicaStore,
    pin: PinState,
    /// Session state; a card image always loads locked.
    #[serde(skip)]
    unlocked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CardCommand {
    Select,
    GetCertificate,
    ReadRecords,
    Append { envelopes: Vec<SignedEnvelope> },
    MarkDurable { record_ids: Vec<RecordId> },
    Unlock { pin: String },
    Sign {
        #[serde(with = "crate::canonical::base64_bytes")]
        payload: Vec<u8>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppendResult {
    pub inserted: Vec<RecordId>,
    pub evicted: Vec<RecordId>,
    pub skipped: usize,
    /// (record id if decodable, reason code)
    pub faults: Vec<(Option<RecordId>, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "response", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CardResponse {
    Selected {
        kind: CardKind,
        holder: String,
        cert_id: CertId,
        records: usize,
        capacity: Option<usize>,
        pin_attempts_left: u8,
    },
    Certificate { certificate: Certificate },
    Records { envelopes: Vec<SignedEnvelope> },
    Appended(AppendResult),
    Marked { count: usize },
    Unlocked { attempts_left: u8 },
    Signature {
        #[serde(with = "crate::canonical::base64_bytes")]
        signature: Vec<u8>,
    },
}

/// What the reader supplies with each command.
pub struct CardContext<'a> {
    pub now: DateTime<Utc>,
    /// Needed by `APPEND`.
    pub verifier: Option<&'a dyn EnvelopeVerifier>,
}

impl EmulatedCard {
    pub fn kind(&self) -> CardKind {
        self.kind
    }

    pub fn holder(&self) -> &str {
        &self.holder
    }

    pub fn cert(&self) -> &Certificate {
        &self.certificate
    }

    pub fn is_locked(&self) -> bool {
        self.pin.attempts_left == 0
    }

    pub fn store(&self) -> &ReplicaStore {
        &self.store
    }

    /// The on-card record store, for anti-entropy with other replicas.
    pub fn store_mut(&mut self) -> &mut ReplicaStore {
        &mut self.store
    }

    /// Ends the session; the next `SIGN` needs the PIN again.
    pub fn remove(&mut self) {
        self.unlocked = false;
    }

    pub fn execute(&mut self, cmd: CardCommand, ctx: &CardContext<'_>) -> Result<CardResponse, PkiError> {
        match cmd {
            CardCommand::Select => Ok(CardResponse::Selected {
                kind: self.kind,
                holder: self.holder.clone(),
                cert_id: self.certificate.id().clone(),
                records: self.store.len(),
                capacity: self.store.capacity(),
                pin_attempts_left: self.pin.attempts_left,
            }),
            CardCommand::GetCertificate => Ok(CardResponse::Certificate { certificate: self.certificate.clone() }),
            CardCommand::ReadRecords => {
                let mut envelopes: Vec<SignedEnvelope> =
                    self.store.newest_first().into_iter().map(|(_, e)| e.clone()).collect();
                envelopes.reverse();
                Ok(CardResponse::Records { envelopes })
            }
            CardCommand::Append { envelopes } => {
                let verifier = ctx.verifier.ok_or_else(|| PkiError::Unsupported("APPEND needs a verifier".into()))?;
                let mut res = AppendResult { inserted: vec![], evicted: vec![], skipped: 0, faults: vec![] };
                for env in &envelopes {
                    let id = env.decode_record().ok().map(|r| r.record_id);
                    match self.store.admit(env, verifier, ctx.now, "reader") {
                        Ok(Admitted::Inserted { evicted }) => {
                            res.inserted.extend(id);
                            res.evicted.extend(evicted);
                        }
                        Ok(Admitted::Duplicate) => {}
                        Ok(Admitted::OutOfScope | Admitted::NoCapacity) => res.skipped += 1,
                        Err(f) => res.faults.push((id, f.code().to_string())),
                    }
                }
                Ok(CardResponse::Appended(res))
            }
            CardCommand::MarkDurable { record_ids } => {
                let count = record_ids.iter().filter(|id| self.store.mark_durable(id)).count();
                Ok(CardResponse::Marked { count })
            }
            CardCommand::Unlock { pin } => {
                if self.is_locked() {
                    return Err(PkiError::CardLocked);
                }
                if PinState::hash(&self.pin.salt, &pin) == self.pin.digest {
                    self.pin.attempts_left = PIN_ATTEMPTS;
                    self.unlocked = true;
                    Ok(CardResponse::Unlocked { attempts_left: PIN_ATTEMPTS })
                } else {
                    self.pin.attempts_left -= 1;
                    self.unlocked = false;
                    if self.is_locked() {
                        Err(PkiError::CardLocked)
                    } else {
                        Err(PkiError::WrongPin { remaining: self.pin.attempts_left })
                    }
                }
            }
            CardCommand::Sign { payload } => {
                if self.is_locked() {
                    return Err(PkiError::CardLocked);
                }
                if !self.unlocked {
                    return Err(PkiError::PinRequired);
                }
                if !self.certificate.valid_at(ctx.now) {
                    return Err(PkiError::CertificateNotValid(self.certificate.id().clone()));
                }
                Ok(CardResponse::Signature { signature: self.key.sign(&payload) })
            }
        }
    }

    pub fn unlock(&mut self, pin: &str, now: DateTime<Utc>) -> Result<(), PkiError> {
        self.execute(CardCommand::Unlock { pin: pin.to_string() }, &CardContext { now, verifier: None }).map(|_| ())
    }
}

impl RecordSigner for EmulatedCard {
    fn certificate(&self) -> &Certificate {
        &self.certificate
    }

    fn sign_payload(&mut self, payload: &[u8], now: DateTime<Utc>) -> Result<Vec<u8>, PkiError> {
        match self.execute(CardCommand::Sign { payload: payload.to_vec() }, &CardContext { now, verifier: None })? {
            CardResponse::Signature { signature } => Ok(signature),
            other => Err(PkiError::Unsupported(format!("unexpected response {other:?}"))),
        }
    }
}

/// Versioned on-disk form of a card.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CardImage {
    pub version: u32,
    pub card: EmulatedCard,
}

impl CardImage {
    pub const VERSION: u32 = 1;

    pub fn save(card: &EmulatedCard, path: &Path) -> Result<(), PkiError> {
        let image = CardImage { version: Self::VERSION, card: card.clone() };
        let bytes = to_canonical_vec(&image).map_err(|e| PkiError::Image(e.to_string()))?;
        fs::write(path, bytes).map_err(|e| PkiError::Image(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<EmulatedCard, PkiError> {
        let bytes = fs::read(path).map_err(|e| PkiError::Image(format!("{}: {e}", path.display())))?;
        let image: CardImage = from_canonical_slice(&bytes).map_err(|e| PkiError::Image(e.to_string()))?;
        if image.version != Self::VERSION {
            return Err(PkiError::Image(format!("unsupported card image version {}", image.version)));
        }
        Ok(image.card)
    }
}

/// Creates a card with an on-card key pair and a certificate issued by
/// `ca`. CRSC stores hold only the holder's records, at most `capacity`.
#[allow(clippy::too_many_arguments)]
pub fn personalize_card<R: RngCore + ?Sized>(
    ca: &CertificateAuthority,
    kind: CardKind,
    holder: &str,
    pin: &str,
    capacity: usize,
    now: DateTime<Utc>,
    validity: Duration,
    rng: &mut R,
) -> Result<EmulatedCard, PkiError> {
    let key = SecretKey::generate(ca.certificate().body.public_key.algorithm, rng);
    let subject = Subject { name: holder.to_string(), role: kind.role() };
    let certificate = ca.issue(subject, key.public_key(), now, now + validity, rng)?;
    let store_id = format!("CARD:{holder}");
    let store = match kind {
        CardKind::Crsc => ReplicaStore::card(store_id, PatientId::new(holder), capacity),
        CardKind::Prsc => ReplicaStore::new(ReplicaKind::Card, store_id).with_capacity(Some(0)),
    };
    Ok(EmulatedCard { kind, holder: holder.to_string(), key, certificate, store, pin: PinState::new(pin, rng), unlocked: false })
}

/// Card certificates ever issued per holder, newest last. Kept centrally.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardRegistry {
    holders: BTreeMap<String, Vec<CertId>>,
}

impl CardRegistry {
    pub fn register(&mut self, card: &EmulatedCard) {
        self.holders.entry(card.holder.clone()).or_default().push(card.certificate.id().clone());
    }

    pub fn current(&self, holder: &str) -> Option<&CertId> {
        self.holders.get(holder).and_then(|v| v.last())
    }

    pub fn history(&self, holder: &str) -> &[CertId] {
        self.holders.get(holder).map_or(&[], |v| v.as_slice())
    }
}

/// Result of replacing a lost or destroyed card.
#[derive(Debug, Clone)]
pub struct ReplacedCard {
    pub card: EmulatedCard,
    pub revoked: CertId,
    /// Publish to every trust store so the old card stops verifying.
    pub crl: RevocationList,
}

/// Revokes the holder's current card and issues a new one, repopulated
/// from `central` with the most recent records up to `capacity`.
#[allow(clippy::too_many_arguments)]
pub fn replace_card<R: RngCore + ?Sized>(
    registry: &mut CardRegistry,
    ca: &mut CertificateAuthority,
    central: &ReplicaStore,
    holder: &str,
    pin: &str,
    capacity: usize,
    now: DateTime<Utc>,
    validity: Duration,
    rng: &mut R,
) -> Result<ReplacedCard, PkiError> {
    let old = registry.current(holder).cloned().ok_or_else(|| PkiError::UnknownHolder(holder.to_string()))?;
    let mut card = personalize_card(ca, CardKind::Crsc, holder, pin, capacity, now, validity, rng)?;
    ca.revoke(&old, now);
    let crl = ca.crl(now);
    let patient = PatientId::new(holder);
    let held = central.newest_first();
    for (id, env) in held.into_iter().filter(|(id, _)| central.patient_of(id) == Some(&patient)) {
        if card.store.len() >= capacity {
            break;
        }
        // already verified on admission to CENTRAL
        let Ok(record) = env.decode_record() else { continue };
        card.store.mark_durable(id);
        let _ = card.store.insert_verified(env.clone(), &record);
    }
    registry.register(&card);
    Ok(ReplacedCard { card, revoked: old, crl })
}
