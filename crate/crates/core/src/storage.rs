//! Sealing of secrets at rest. State files are plain JSON for
//! inspectability; every secret field is replaced by a hex blob sealed under
//! an externally supplied storage key.
//!
//! Nonces are synthetic: the first 12 octets of an HMAC over the field
//! identity and the plaintext. The same state therefore always serializes to
//! the same bytes, and a nonce can only repeat for an identical message.

use crate::crypto::{aead_open, aead_seal, kdf, mac_compute, Key, Nonce};
use crate::wire::Writer;

pub const DEFAULT_KEY_ENV: &str = "GUARDIAN_STORAGE_KEY";
const CHECK_PLAINTEXT: &[u8] = b"guardian storage key check";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StorageError {
    #[error("wrong storage key")]
    WrongKey,
    #[error("sealed field {0} does not open")]
    Corrupt(String),
    #[error("sealed field {0} is not valid hex")]
    BadHex(String),
}

#[derive(Clone)]
pub struct StorageKey {
    seal: Key,
    nonce: Key,
}

impl std::fmt::Debug for StorageKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("StorageKey(..)")
    }
}

impl StorageKey {
    pub fn from_key(k: &Key) -> Self {
        StorageKey {
            seal: kdf(k.as_bytes(), "storage/seal", b"").expect("non-empty"),
            nonce: kdf(k.as_bytes(), "storage/nonce", b"").expect("non-empty"),
        }
    }

    /// 64 hex digits are taken as the raw key; anything else is a
    /// passphrase run through the kdf.
    pub fn from_text(s: &str) -> Option<Self> {
        let s = s.trim();
        if s.is_empty() {
            return None;
        }
        let raw = hex::decode(s).ok().and_then(|v| Key::from_slice(&v));
        let k = match raw {
            Some(k) => k,
            None => kdf(s.as_bytes(), "storage/passphrase", b"").ok()?,
        };
        Some(StorageKey::from_key(&k))
    }

    fn aad(owner: &str, field: &str) -> Vec<u8> {
        Writer::new().str(owner).str(field).finish()
    }

    pub fn seal(&self, owner: &str, field: &str, plaintext: &[u8]) -> String {
        let aad = Self::aad(owner, field);
        let siv = mac_compute(&self.nonce, &Writer::new().bytes(&aad).bytes(plaintext).finish());
        let nonce = Nonce(siv.0[..12].try_into().expect("12 octets"));
        let mut out = nonce.0.to_vec();
        out.extend(aead_seal(&self.seal, &nonce, plaintext, &aad));
        hex::encode(out)
    }

    pub fn open(&self, owner: &str, field: &str, sealed_hex: &str) -> Result<Vec<u8>, StorageError> {
        let id = format!("{owner}/{field}");
        let raw = hex::decode(sealed_hex).map_err(|_| StorageError::BadHex(id.clone()))?;
        if raw.len() < 12 {
            return Err(StorageError::Corrupt(id));
        }
        let nonce = Nonce(raw[..12].try_into().expect("12 octets"));
        aead_open(&self.seal, &nonce, &raw[12..], &Self::aad(owner, field)).map_err(|_| StorageError::Corrupt(id))
    }

    pub fn key_check(&self) -> String {
        self.seal("", "key-check", CHECK_PLAINTEXT)
    }

    pub fn verify_check(&self, check: &str) -> Result<(), StorageError> {
        match self.open("", "key-check", check) {
            Ok(pt) if pt == CHECK_PLAINTEXT => Ok(()),
            _ => Err(StorageError::WrongKey),
        }
    }
}
