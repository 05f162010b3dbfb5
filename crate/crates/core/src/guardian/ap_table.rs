use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use subtle::ConstantTimeEq;

use crate::crypto::{hash_parts, Digest, Key};
use crate::types::MacAddr;

/// Verification data for one device's access-point secret. Only a salted
/// hash is kept, so the table itself never holds a usable secret.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApEntry {
    pub device_id: String,
    pub verifier: Digest,
    pub epoch: u64,
}

/// Per-MAC verification table of the domain access point.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApPasswordTable {
    entries: BTreeMap<MacAddr, ApEntry>,
}

pub fn ap_verifier(mac: &MacAddr, k_wifi: &Key) -> Digest {
    hash_parts(&[b"domain-ap/verifier", &mac.0, k_wifi.as_bytes()])
}

impl ApPasswordTable {
    pub fn install(&mut self, mac: MacAddr, device_id: &str, k_wifi: &Key, epoch: u64) {
        self.entries
            .insert(mac, ApEntry { device_id: device_id.to_string(), verifier: ap_verifier(&mac, k_wifi), epoch });
    }

    pub fn remove(&mut self, mac: &MacAddr) -> Option<ApEntry> {
        self.entries.remove(mac)
    }

    pub fn get(&self, mac: &MacAddr) -> Option<&ApEntry> {
        self.entries.get(mac)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn macs(&self) -> impl Iterator<Item = &MacAddr> {
        self.entries.keys()
    }

    /// True iff the entry indexed by `mac` verifies `presented`.
    pub fn verify(&self, mac: &MacAddr, presented: &Key) -> bool {
        self.entries
            .get(mac)
            .is_some_and(|e| bool::from(e.verifier.0.ct_eq(&ap_verifier(mac, presented).0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_mac_isolation() {
        let mut t = ApPasswordTable::default();
        let (a, b) = (MacAddr([2, 0, 0, 0, 0, 1]), MacAddr([2, 0, 0, 0, 0, 2]));
        let (ka, kb) = (Key([1; 32]), Key([2; 32]));
        t.install(a, "A", &ka, 0);
        t.install(b, "B", &kb, 0);
        assert!(t.verify(&a, &ka));
        assert!(t.verify(&b, &kb));
        assert!(!t.verify(&b, &ka));
        assert!(!t.verify(&a, &kb));
        assert!(!t.verify(&MacAddr([9; 6]), &ka));
        t.remove(&a);
        assert!(!t.verify(&a, &ka));
    }
}
