//! Signature schemes behind a common interface.
//!
//! [`Algorithm::Ed25519`] is the production binding. [`Algorithm::TestDigest`]
//! is a keyed-digest construction that anyone holding the public key can
//! forge; it exists only so fixtures can be generated without a real
//! signature library and must never be trusted in production (see
//! [`super::TrustStore::allow_test_scheme`]).

use std::fmt;

use ed25519_dalek::Signer as _;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::canonical::base64_bytes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Algorithm {
    Ed25519,
    TestDigest,
}

pub trait SignatureScheme: Send + Sync {
    fn algorithm(&self) -> Algorithm;
    fn public_from_seed(&self, seed: &[u8; 32]) -> Vec<u8>;
    fn sign(&self, seed: &[u8; 32], message: &[u8]) -> Vec<u8>;
    fn verify(&self, public: &[u8], message: &[u8], signature: &[u8]) -> bool;
}

pub struct Ed25519Scheme;

impl SignatureScheme for Ed25519Scheme {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Ed25519
    }

    fn public_from_seed(&self, seed: &[u8; 32]) -> Vec<u8> {
        ed25519_dalek::SigningKey::from_bytes(seed).verifying_key().to_bytes().to_vec()
    }

    fn sign(&self, seed: &[u8; 32], message: &[u8]) -> Vec<u8> {
        ed25519_dalek::SigningKey::from_bytes(seed).sign(message).to_bytes().to_vec()
    }

    fn verify(&self, public: &[u8], message: &[u8], signature: &[u8]) -> bool {
        let Ok(public) = <[u8; 32]>::try_from(public) else { return false };
        let Ok(key) = ed25519_dalek::VerifyingKey::from_bytes(&public) else { return false };
        let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else { return false };
        key.verify_strict(message, &sig).is_ok()
    }
}

/// signature = SHA-256("radsafe-test-sig" ‖ public ‖ message),
/// public = SHA-256("radsafe-test-pub" ‖ seed).
pub struct TestDigestScheme;

impl TestDigestScheme {
    fn tag(public: &[u8], message: &[u8]) -> Vec<u8> {
        let mut h = Sha256::new();
        h.update(b"radsafe-test-sig");
        h.update(public);
        h.update(message);
        h.finalize().to_vec()
    }
}

impl SignatureScheme for TestDigestScheme {
    fn algorithm(&self) -> Algorithm {
        Algorithm::TestDigest
    }

    fn public_from_seed(&self, seed: &[u8; 32]) -> Vec<u8> {
        let mut h = Sha256::new();
        h.update(b"radsafe-test-pub");
        h.update(seed);
        h.finalize().to_vec()
    }

    fn sign(&self, seed: &[u8; 32], message: &[u8]) -> Vec<u8> {
        Self::tag(&self.public_from_seed(seed), message)
    }

    fn verify(&self, public: &[u8], message: &[u8], signature: &[u8]) -> bool {
        Self::tag(public, message) == signature
    }
}

pub fn scheme(alg: Algorithm) -> &'static dyn SignatureScheme {
    match alg {
        Algorithm::Ed25519 => &Ed25519Scheme,
        Algorithm::TestDigest => &TestDigestScheme,
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PublicKey {
    pub algorithm: Algorithm,
    #[serde(with = "base64_bytes")]
    pub bytes: Vec<u8>,
}

impl PublicKey {
    pub fn verify(&self, message: &[u8], signature: &[u8]) -> bool {
        scheme(self.algorithm).verify(&self.bytes, message, signature)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hex: String = self.bytes.iter().take(8).map(|b| format!("{b:02x}")).collect();
        write!(f, "PublicKey({:?}, {hex}…)", self.algorithm)
    }
}

/// A private signing key. Serializable so the CA and the emulated card
/// can persist themselves; nothing else should hold one.
#[derive(Clone, Serialize, Deserialize)]
pub struct SecretKey {
    algorithm: Algorithm,
    #[serde(with = "seed_b64")]
    seed: [u8; 32],
}

impl SecretKey {
    pub fn generate<R: RngCore + ?Sized>(algorithm: Algorithm, rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self { algorithm, seed }
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey { algorithm: self.algorithm, bytes: scheme(self.algorithm).public_from_seed(&self.seed) }
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        scheme(self.algorithm).sign(&self.seed, message)
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey({:?}, <redacted>)", self.algorithm)
    }
}

mod seed_b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(seed))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let text = String::deserialize(d)?;
        let bytes = STANDARD.decode(text.as_bytes()).map_err(serde::de::Error::custom)?;
        <[u8; 32]>::try_from(bytes.as_slice()).map_err(|_| serde::de::Error::custom("seed must be 32 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn both_schemes_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for alg in [Algorithm::Ed25519, Algorithm::TestDigest] {
            let key = SecretKey::generate(alg, &mut rng);
            let sig = key.sign(b"payload");
            assert!(key.public_key().verify(b"payload", &sig));
            assert!(!key.public_key().verify(b"payloaD", &sig));
            let other = SecretKey::generate(alg, &mut rng);
            assert!(!other.public_key().verify(b"payload", &sig));
        }
    }

    #[test]
    fn signing_is_deterministic() {
        let a = SecretKey::generate(Algorithm::Ed25519, &mut ChaCha20Rng::seed_from_u64(9));
        let b = SecretKey::generate(Algorithm::Ed25519, &mut ChaCha20Rng::seed_from_u64(9));
        assert_eq!(a.sign(b"x"), b.sign(b"x"));
    }

    #[test]
    fn secret_is_not_printed() {
        let key = SecretKey::generate(Algorithm::Ed25519, &mut ChaCha20Rng::seed_from_u64(3));
        assert_eq!(format!("{key:?}"), "SecretKey(Ed25519, <redacted>)");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn any_single_bit_flip_breaks_ed25519(msg in prop::collection::vec(any::<u8>(), 1..128), bit in any::<prop::sample::Index>(), in_sig in any::<bool>()) {
            let key = SecretKey::generate(Algorithm::Ed25519, &mut ChaCha20Rng::seed_from_u64(5));
            let mut sig = key.sign(&msg);
            let mut msg = msg;
            if in_sig {
                let i = bit.index(sig.len() * 8);
                sig[i / 8] ^= 1 << (i % 8);
            } else {
                let i = bit.index(msg.len() * 8);
                msg[i / 8] ^= 1 << (i % 8);
            }
            prop_assert!(!key.public_key().verify(&msg, &sig));
        }
    }
}
