use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog;
use crate::crypto::{KeySet, SecretBytes};
use crate::types::{DeviceClass, MacAddr};
use crate::update::UpdateReason;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lifecycle {
    Rostered,
    Onboarded,
    Decommissioned,
}

impl fmt::Display for Lifecycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Lifecycle::Rostered => "rostered",
            Lifecycle::Onboarded => "onboarded",
            Lifecycle::Decommissioned => "decommissioned",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvailableUpdate {
    pub update_id: String,
    pub version: String,
    pub reason: UpdateReason,
}

/// One installed version. `update_id` is set for versions installed by a
/// mediated push and empty for the version observed at on-boarding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionEntry {
    pub version: String,
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFlags {
    pub wipe_unconfirmed: bool,
    pub rotation_pending: bool,
    pub prior_boarding_alarm: bool,
}

/// One registry row. Secret fields (`keyset`, `d_pw`, `pending_rotation`)
/// are skipped by serde here; the persistence layer writes them sealed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device_id: String,
    pub mac: Option<MacAddr>,
    pub vendor_id: String,
    pub model: String,
    pub description: String,
    pub device_class: DeviceClass,
    pub installed_version: Option<String>,
    pub available_updates: Vec<AvailableUpdate>,
    #[serde(skip)]
    pub keyset: Option<KeySet>,
    #[serde(skip)]
    pub d_pw: Option<SecretBytes>,
    pub lifecycle: Lifecycle,
    pub version_history: Vec<VersionEntry>,
    #[serde(default)]
    pub flags: RecordFlags,
    #[serde(skip)]
    pub pending_rotation: Option<KeySet>,
    /// Next command counter to use; never reused under one master key.
    #[serde(default)]
    pub next_command: u64,
    #[serde(default)]
    pub last_reply: Option<u64>,
}

impl DeviceRecord {
    pub fn new(device_id: &str, vendor_id: &str, model: &str, d_pw: Option<SecretBytes>) -> Self {
        let info = catalog::lookup(model);
        DeviceRecord {
            device_id: device_id.to_string(),
            mac: None,
            vendor_id: vendor_id.to_string(),
            model: model.to_string(),
            description: info.map(|i| i.description.to_string()).unwrap_or_else(|| format!("{model} device")),
            device_class: info.map(|i| i.class).unwrap_or(DeviceClass::MidLevel),
            installed_version: None,
            available_updates: Vec::new(),
            keyset: None,
            d_pw,
            lifecycle: Lifecycle::Rostered,
            version_history: Vec::new(),
            flags: RecordFlags::default(),
            pending_rotation: None,
            next_command: 0,
            last_reply: None,
        }
    }

    /// True if any secret field is populated.
    pub fn holds_secrets(&self) -> bool {
        self.keyset.is_some() || self.d_pw.is_some() || self.pending_rotation.is_some()
    }

    pub fn scrub_secrets(&mut self) {
        self.keyset = None;
        self.d_pw = None;
        self.pending_rotation = None;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RosterError {
    #[error("malformed QR payload: {0}")]
    Malformed(String),
    #[error("device {0} already in registry")]
    Duplicate(String),
    #[error("MAC {0} already registered to another device")]
    DuplicateMac(MacAddr),
}

/// Parsed sticker: `serial|password[|vendor|model]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QrPayload {
    pub serial: String,
    pub password: SecretBytes,
    pub vendor_id: Option<String>,
    pub model: Option<String>,
}

pub fn parse_qr(payload: &str) -> Result<QrPayload, RosterError> {
    let parts: Vec<&str> = payload.trim().split('|').collect();
    let bad = |m: &str| Err(RosterError::Malformed(m.to_string()));
    let (serial, pw, vendor, model) = match parts[..] {
        [s, p] => (s, p, None, None),
        [s, p, v, m] => (s, p, Some(v), Some(m)),
        _ => return bad("expected serial|password or serial|password|vendor|model"),
    };
    if serial.is_empty() || serial.chars().any(|c| c.is_whitespace()) {
        return bad("empty or non-printable serial");
    }
    if pw.is_empty() {
        return bad("empty password");
    }
    let opt = |v: Option<&str>| v.filter(|s| !s.is_empty()).map(str::to_string);
    Ok(QrPayload { serial: serial.to_string(), password: SecretBytes::from(pw), vendor_id: opt(vendor), model: opt(model) })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registry {
    records: BTreeMap<String, DeviceRecord>,
}

impl Registry {
    pub fn insert(&mut self, record: DeviceRecord) -> Result<(), RosterError> {
        if self.records.contains_key(&record.device_id) {
            return Err(RosterError::Duplicate(record.device_id));
        }
        if let Some(mac) = record.mac {
            if self.by_mac(&mac).is_some() {
                return Err(RosterError::DuplicateMac(mac));
            }
        }
        self.records.insert(record.device_id.clone(), record);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&DeviceRecord> {
        self.records.get(id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut DeviceRecord> {
        self.records.get_mut(id)
    }

    pub fn by_mac(&self, mac: &MacAddr) -> Option<&DeviceRecord> {
        self.records.values().find(|r| r.mac.as_ref() == Some(mac))
    }

    pub fn records(&self) -> impl Iterator<Item = &DeviceRecord> {
        self.records.values()
    }

    pub fn records_mut(&mut self) -> impl Iterator<Item = &mut DeviceRecord> {
        self.records.values_mut()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_forms() {
        let q = parse_qr("SN123|pw").unwrap();
        assert_eq!(q.serial, "SN123");
        assert_eq!(q.password, SecretBytes::from("pw"));
        assert!(q.model.is_none());
        let q = parse_qr("SP-100-1|ABC|acme|SP-100").unwrap();
        assert_eq!(q.model.as_deref(), Some("SP-100"));
        for bad in ["", "SN1", "SN1|", "|pw", "a|b|c", "S N|pw", "a|b|c|d|e"] {
            assert!(parse_qr(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn duplicates_rejected() {
        let mut r = Registry::default();
        r.insert(DeviceRecord::new("SN1", "acme", "SP-100", None)).unwrap();
        assert_eq!(r.insert(DeviceRecord::new("SN1", "acme", "SP-100", None)), Err(RosterError::Duplicate("SN1".into())));
        let mut a = DeviceRecord::new("SN2", "acme", "SP-100", None);
        a.mac = Some(MacAddr([2; 6]));
        r.insert(a).unwrap();
        let mut b = DeviceRecord::new("SN3", "acme", "SP-100", None);
        b.mac = Some(MacAddr([2; 6]));
        assert!(matches!(r.insert(b), Err(RosterError::DuplicateMac(_))));
    }

    #[test]
    fn description_autofill() {
        assert_eq!(DeviceRecord::new("x", "acme", "SP-100", None).description, "smart plug");
        assert_eq!(DeviceRecord::new("x", "acme", "LB-20", None).description, "lightbulb type LB-20");
        assert_eq!(DeviceRecord::new("x", "v", "ZZ", None).description, "ZZ device");
    }
}
