use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::kdf::{kdf, KdfError};

/// A 32-octet secret. `Debug` never prints the bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Key(pub [u8; 32]);

impl Key {
    pub fn random<R: rand_core::RngCore + rand_core::CryptoRng>(rng: &mut R) -> Self {
        let mut k = [0u8; 32];
        rng.fill_bytes(&mut k);
        Key(k)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn from_slice(b: &[u8]) -> Option<Self> {
        Some(Key(b.try_into().ok()?))
    }
}

impl AsRef<[u8]> for Key {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Key(..)")
    }
}

impl Serialize for Key {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Key {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(&s).map_err(serde::de::Error::custom)?;
        Key::from_slice(&v).ok_or_else(|| serde::de::Error::custom("key must be 32 octets"))
    }
}

/// Variable-length secret such as a sticker password or a chain element
/// used as a PAKE password. Same redaction and hex serde as [`Key`].
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SecretBytes(pub Vec<u8>);

impl SecretBytes {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl From<&str> for SecretBytes {
    fn from(s: &str) -> Self {
        SecretBytes(s.as_bytes().to_vec())
    }
}

impl fmt::Debug for SecretBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretBytes({} octets)", self.0.len())
    }
}

impl Serialize for SecretBytes {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for SecretBytes {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(&s).map(SecretBytes).map_err(serde::de::Error::custom)
    }
}

pub const LABEL_ENC: &str = "working-key/enc";
pub const LABEL_MAC: &str = "working-key/mac";

/// Master secret shared by Guardian and device, the working keys derived
/// from it, and the device-specific access-point secret.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeySet {
    pub master: Key,
    pub k_enc: Key,
    pub k_mac: Key,
    pub k_wifi: Key,
    pub epoch: u64,
}

impl KeySet {
    /// Derive working keys for `epoch`. The context binds the device serial
    /// and the epoch so every rotation yields fresh working keys.
    pub fn derive(master: Key, k_wifi: Key, serial: &str, epoch: u64) -> Result<Self, KdfError> {
        let (k_enc, k_mac) = working_keys(&master, serial, epoch)?;
        Ok(KeySet { master, k_enc, k_mac, k_wifi, epoch })
    }

    /// Keys for the next epoch with a new access-point secret.
    pub fn rotated(&self, serial: &str, k_wifi: Key) -> Result<Self, KdfError> {
        KeySet::derive(self.master, k_wifi, serial, self.epoch + 1)
    }

    /// Every secret in the set, for wire/at-rest scans.
    pub fn secrets(&self) -> [&Key; 4] {
        [&self.master, &self.k_enc, &self.k_mac, &self.k_wifi]
    }
}

pub fn working_keys(master: &Key, serial: &str, epoch: u64) -> Result<(Key, Key), KdfError> {
    let mut ctx = Vec::with_capacity(serial.len() + 8);
    ctx.extend_from_slice(serial.as_bytes());
    ctx.extend_from_slice(&epoch.to_be_bytes());
    Ok((kdf(master.as_ref(), LABEL_ENC, &ctx)?, kdf(master.as_ref(), LABEL_MAC, &ctx)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enc_and_mac_differ_and_epochs_differ() {
        let ks = KeySet::derive(Key([1; 32]), Key([2; 32]), "SN1", 0).unwrap();
        assert_ne!(ks.k_enc, ks.k_mac);
        let next = ks.rotated("SN1", Key([3; 32])).unwrap();
        assert_eq!(next.epoch, 1);
        assert_ne!(next.k_enc, ks.k_enc);
        assert_ne!(next.k_mac, ks.k_mac);
        assert_eq!(next.master, ks.master);
    }

    #[test]
    fn debug_redacts() {
        assert_eq!(format!("{:?}", Key([9; 32])), "Key(..)");
    }
}
