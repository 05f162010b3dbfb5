//! Simulated manufacturer back-end: sticker passwords, provisioning at
//! manufacture, the reset-counter database with next-password issuance,
//! and signed update publication.

use std::collections::BTreeMap;

use data_encoding::BASE32_NOPAD;
use serde::{Deserialize, Serialize};

use crate::crypto::chain::chain_init;
use crate::crypto::{chain_password, hash, kdf, sig_sign, signing_public_key, Digest, Key, PublicKey, SecretBytes};
use crate::device::{DeviceSim, Firmware};
use crate::storage::{StorageError, StorageKey};
use crate::types::{DeviceClass, MacAddr};
use crate::update::{canonical_encoding, FeedEntry, FeedError, UpdateFeed, UpdatePackage, UpdateReason};

pub const CHAIN_LENGTH: u32 = 200;
pub const PASSWORD_LEN: usize = 20;

/// Sticker password: the first 20 base32 characters (100 bits) of a kdf
/// output bound to serial and MAC.
pub fn derive_default_password(vendor_secret: &Key, serial: &str, mac: &MacAddr) -> String {
    let mut ctx = serial.as_bytes().to_vec();
    ctx.extend_from_slice(&mac.0);
    let k = kdf(vendor_secret.as_bytes(), "default-password", &ctx).expect("non-empty secret");
    let mut s = BASE32_NOPAD.encode(&k.0[..13]);
    s.truncate(PASSWORD_LEN);
    s
}

/// QR payload printed on the sticker: `serial|password|vendor|model`.
pub fn qr_payload(serial: &str, password: &str, vendor_id: &str, model: &str) -> String {
    format!("{serial}|{password}|{vendor_id}|{model}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestLogEntry {
    pub asserted_owner: String,
    pub c: u32,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VendorRecord {
    pub serial: String,
    pub mac: MacAddr,
    pub model: String,
    /// Last issued chain index; 0 before any issuance.
    pub reset_count_c: u32,
    pub t: u32,
    pub request_log: Vec<RequestLogEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum Refusal {
    #[error("unknown serial")]
    UnknownSerial,
    #[error("MAC address does not match the record")]
    MacMismatch,
    #[error("counter {requested} is not above the last issued {last}")]
    AlreadyIssued { requested: u32, last: u32 },
    #[error("chain exhausted (length {t})")]
    Exhausted { t: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefusalLogEntry {
    pub serial: String,
    pub mac: MacAddr,
    pub c: u32,
    pub asserted_owner: String,
    pub timestamp: u64,
    pub reason: Refusal,
}

#[derive(Debug, thiserror::Error)]
pub enum VendorError {
    #[error("serial {0} already provisioned")]
    DuplicateSerial(String),
    #[error("{0}")]
    Feed(#[from] FeedError),
    #[error("{0}")]
    Storage(#[from] StorageError),
    #[error("vendor state: {0}")]
    Format(String),
}

pub struct Vendor {
    pub vendor_id: String,
    secret: Key,
    records: BTreeMap<String, VendorRecord>,
    refusals: Vec<RefusalLogEntry>,
    macs_issued: u32,
}

impl std::fmt::Debug for Vendor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Vendor").field("vendor_id", &self.vendor_id).field("records", &self.records.len()).finish()
    }
}

impl Vendor {
    pub fn new(vendor_id: &str, secret: Key) -> Self {
        Vendor {
            vendor_id: vendor_id.to_string(),
            secret,
            records: BTreeMap::new(),
            refusals: Vec::new(),
            macs_issued: 0,
        }
    }

    /// Vendor whose secret is derived from a run seed (simulation only).
    pub fn from_seed(vendor_id: &str, seed: u64) -> Self {
        let secret = kdf(&seed.to_be_bytes(), "vendor-secret", vendor_id.as_bytes()).expect("non-empty");
        Vendor::new(vendor_id, secret)
    }

    pub fn record(&self, serial: &str) -> Option<&VendorRecord> {
        self.records.get(serial)
    }

    pub fn records(&self) -> impl Iterator<Item = &VendorRecord> {
        self.records.values()
    }

    pub fn refusals(&self) -> &[RefusalLogEntry] {
        &self.refusals
    }

    /// Device-specific chain seed; derived rather than stored.
    pub fn chain_seed(&self, serial: &str) -> Digest {
        Digest(kdf(self.secret.as_bytes(), "chain-seed", serial.as_bytes()).expect("non-empty").0)
    }

    pub fn default_password(&self, serial: &str, mac: &MacAddr) -> String {
        derive_default_password(&self.secret, serial, mac)
    }

    fn signing_seed(&self) -> Key {
        kdf(self.secret.as_bytes(), "update-signing", self.vendor_id.as_bytes()).expect("non-empty")
    }

    pub fn public_key(&self) -> PublicKey {
        signing_public_key(&self.signing_seed())
    }

    /// Locally administered unicast address unique to this vendor and unit.
    pub fn allocate_mac(&mut self) -> MacAddr {
        let h = hash(self.vendor_id.as_bytes());
        self.macs_issued += 1;
        let n = self.macs_issued.to_be_bytes();
        MacAddr([0x02, h.0[0], n[0], n[1], n[2], n[3]])
    }

    /// Manufacture a device: sticker password provisioned into flash, chain
    /// verifier `h^t(w)` installed, QR payload printed.
    pub fn provision_device(
        &mut self,
        serial: &str,
        mac: MacAddr,
        model: &str,
        class: DeviceClass,
        firmware_version: &str,
    ) -> Result<(DeviceSim, String, VendorRecord), VendorError> {
        if self.records.contains_key(serial) {
            return Err(VendorError::DuplicateSerial(serial.to_string()));
        }
        let pw = self.default_password(serial, &mac);
        let chain = chain_init(&self.chain_seed(serial), CHAIN_LENGTH).expect("t >= 1").verifier_view();
        let firmware = Firmware {
            version: firmware_version.to_string(),
            digest: hash(format!("factory:{model}:{firmware_version}").as_bytes()),
        };
        let device =
            DeviceSim::manufacture(serial, mac, &self.vendor_id, model, class, SecretBytes::from(pw.as_str()), chain, firmware);
        let record = VendorRecord {
            serial: serial.to_string(),
            mac,
            model: model.to_string(),
            reset_count_c: 0,
            t: CHAIN_LENGTH,
            request_log: Vec::new(),
        };
        self.records.insert(serial.to_string(), record.clone());
        Ok((device, qr_payload(serial, &pw, &self.vendor_id, model), record))
    }

    /// Issue `w_c` for the triplet `(mac, serial, c)`. Each index is issued
    /// at most once and only above the last issued one; skipped indices are
    /// burned.
    pub fn next_password(
        &mut self,
        serial: &str,
        mac: &MacAddr,
        c: u32,
        asserted_owner: &str,
        timestamp: u64,
    ) -> Result<Digest, Refusal> {
        let verdict = match self.records.get(serial) {
            None => Err(Refusal::UnknownSerial),
            Some(r) if &r.mac != mac => Err(Refusal::MacMismatch),
            Some(r) if c <= r.reset_count_c => Err(Refusal::AlreadyIssued { requested: c, last: r.reset_count_c }),
            Some(r) if c > r.t => Err(Refusal::Exhausted { t: r.t }),
            Some(r) => Ok(r.t),
        };
        match verdict {
            Ok(t) => {
                let w = chain_password(&self.chain_seed(serial), t, c).expect("1 <= c <= t");
                let r = self.records.get_mut(serial).expect("checked");
                r.reset_count_c = c;
                r.request_log.push(RequestLogEntry { asserted_owner: asserted_owner.to_string(), c, timestamp });
                Ok(w)
            }
            Err(reason) => {
                self.refusals.push(RefusalLogEntry {
                    serial: serial.to_string(),
                    mac: *mac,
                    c,
                    asserted_owner: asserted_owner.to_string(),
                    timestamp,
                    reason: reason.clone(),
                });
                Err(reason)
            }
        }
    }

    pub fn sign_package(&self, model: &str, version: &str, payload: &[u8], reason: UpdateReason) -> UpdatePackage {
        let sig = sig_sign(&self.signing_seed(), &canonical_encoding(model, version, reason, payload));
        UpdatePackage {
            model: model.to_string(),
            version: version.to_string(),
            payload: payload.to_vec(),
            reason,
            vendor_sig: sig,
        }
    }

    /// Sign and publish to the feed. `update_id` defaults to `U<n>`.
    pub fn publish_update(
        &self,
        feed: &UpdateFeed,
        update_id: Option<&str>,
        model: &str,
        version: &str,
        payload: &[u8],
        reason: UpdateReason,
    ) -> Result<(UpdatePackage, FeedEntry), VendorError> {
        let pkg = self.sign_package(model, version, payload, reason);
        let id = match update_id {
            Some(id) => id.to_string(),
            None => {
                let n = if feed.dir().join(crate::update::INDEX_FILE).exists() { feed.entries()?.len() } else { 0 };
                format!("U{}", n + 1)
            }
        };
        let entry = feed.publish(&id, &pkg)?;
        Ok((pkg, entry))
    }

    pub fn to_json(&self, key: &StorageKey) -> String {
        let doc = VendorFile {
            format: VENDOR_FORMAT.to_string(),
            key_check: key.key_check(),
            vendor_id: self.vendor_id.clone(),
            vendor_secret: key.seal(&self.vendor_id, "vendor_secret", self.secret.as_bytes()),
            macs_issued: self.macs_issued,
            records: self.records.clone(),
            refusals: self.refusals.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
    }

    pub fn from_json(text: &str, key: &StorageKey) -> Result<Self, VendorError> {
        let doc: VendorFile = serde_json::from_str(text).map_err(|e| VendorError::Format(e.to_string()))?;
        if doc.format != VENDOR_FORMAT {
            return Err(VendorError::Format(format!("unsupported format {:?}", doc.format)));
        }
        key.verify_check(&doc.key_check)?;
        let secret = key.open(&doc.vendor_id, "vendor_secret", &doc.vendor_secret)?;
        let secret = Key::from_slice(&secret).ok_or_else(|| VendorError::Format("vendor secret length".into()))?;
        Ok(Vendor {
            vendor_id: doc.vendor_id,
            secret,
            records: doc.records,
            refusals: doc.refusals,
            macs_issued: doc.macs_issued,
        })
    }
}

const VENDOR_FORMAT: &str = "guardian-vendor/1";

#[derive(Serialize, Deserialize)]
struct VendorFile {
    format: String,
    key_check: String,
    vendor_id: String,
    vendor_secret: String,
    macs_issued: u32,
    records: BTreeMap<String, VendorRecord>,
    refusals: Vec<RefusalLogEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::chain_verify;
    use std::collections::BTreeSet;

    fn vendor() -> Vendor {
        Vendor::from_seed("acme", 42)
    }

    #[test]
    fn default_password_shape_and_determinism() {
        let v = vendor();
        let mac = MacAddr([2, 0, 0, 0, 0, 1]);
        let a = v.default_password("SP-100-0001", &mac);
        assert_eq!(a.len(), PASSWORD_LEN);
        assert!(a.chars().all(|c| c.is_ascii_uppercase() || ('2'..='7').contains(&c)));
        assert_eq!(a, v.default_password("SP-100-0001", &mac));
        assert_ne!(a, v.default_password("SP-100-0002", &mac));
        assert_ne!(a, v.default_password("SP-100-0001", &MacAddr([2, 0, 0, 0, 0, 2])));
    }

    #[test]
    fn default_password_collision_scan() {
        let v = vendor();
        let mac = MacAddr([2, 0, 0, 0, 0, 1]);
        let set: BTreeSet<String> = (0..1000).map(|i| v.default_password(&format!("SN-{i:05}"), &mac)).collect();
        assert_eq!(set.len(), 1000);
    }

    #[test]
    fn provision_installs_chain_head() {
        let mut v = vendor();
        let mac = v.allocate_mac();
        let (d, qr, rec) = v.provision_device("SP-100-0001", mac, "SP-100", DeviceClass::LowEnd, "1.0.0").unwrap();
        let oracle = crate::crypto::hash_iter(v.chain_seed("SP-100-0001"), CHAIN_LENGTH);
        assert_eq!(d.chain().verifier, oracle);
        assert_eq!(d.chain().length, 200);
        assert!(qr.starts_with("SP-100-0001|"));
        assert_eq!(rec.reset_count_c, 0);
        assert!(matches!(
            v.provision_device("SP-100-0001", mac, "SP-100", DeviceClass::LowEnd, "1.0.0"),
            Err(VendorError::DuplicateSerial(_))
        ));
        let mac2 = v.allocate_mac();
        let (d2, qr2, _) = v.provision_device("SP-100-0002", mac2, "SP-100", DeviceClass::LowEnd, "1.0.0").unwrap();
        assert_ne!(d2.chain().verifier, d.chain().verifier);
        assert_ne!(qr2.split('|').nth(1), qr.split('|').nth(1));
    }

    #[test]
    fn issuance_rules() {
        let mut v = vendor();
        let mac = v.allocate_mac();
        v.provision_device("SN1", mac, "SP-100", DeviceClass::LowEnd, "1.0.0").unwrap();
        let w1 = v.next_password("SN1", &mac, 1, "alice", 10).unwrap();
        assert!(chain_verify(&w1, &crate::crypto::hash_iter(v.chain_seed("SN1"), 200)));
        assert_eq!(v.next_password("SN1", &mac, 1, "bob", 11), Err(Refusal::AlreadyIssued { requested: 1, last: 1 }));
        assert_eq!(v.next_password("SN1", &MacAddr([9; 6]), 2, "mallory", 12), Err(Refusal::MacMismatch));
        assert_eq!(v.next_password("SN9", &mac, 2, "x", 12), Err(Refusal::UnknownSerial));
        assert!(v.next_password("SN1", &mac, 5, "carol", 13).is_ok());
        assert_eq!(v.next_password("SN1", &mac, 201, "carol", 14), Err(Refusal::Exhausted { t: 200 }));
        let cs: Vec<u32> = v.record("SN1").unwrap().request_log.iter().map(|e| e.c).collect();
        assert_eq!(cs, vec![1, 5]);
        assert_eq!(v.refusals().len(), 4);
    }

    #[test]
    fn exhaustion_after_t_issuances() {
        let mut v = vendor();
        let mac = v.allocate_mac();
        v.provision_device("SN1", mac, "SP-100", DeviceClass::LowEnd, "1.0.0").unwrap();
        for c in 1..=CHAIN_LENGTH {
            v.next_password("SN1", &mac, c, "o", c as u64).unwrap();
        }
        assert!(v.next_password("SN1", &mac, CHAIN_LENGTH + 1, "o", 0).is_err());
    }

    #[test]
    fn state_file_round_trip_and_wrong_key() {
        let mut v = vendor();
        let mac = v.allocate_mac();
        v.provision_device("SN1", mac, "SP-100", DeviceClass::LowEnd, "1.0.0").unwrap();
        v.next_password("SN1", &mac, 1, "o", 1).unwrap();
        let key = StorageKey::from_text("k").unwrap();
        let text = v.to_json(&key);
        assert!(!text.contains(&hex::encode(v.secret.0)));
        let back = Vendor::from_json(&text, &key).unwrap();
        assert_eq!(back.public_key(), v.public_key());
        assert_eq!(back.record("SN1"), v.record("SN1"));
        assert!(Vendor::from_json(&text, &StorageKey::from_text("other").unwrap()).is_err());
    }
}
