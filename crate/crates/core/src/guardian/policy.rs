//! Update verification against trust anchors, and the approval policy.
//! The two are independent: a verified update may still be denied.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::registry::AvailableUpdate;
use crate::crypto::PublicKey;
use crate::update::{compare_versions, UpdatePackage, UpdateReason, Version};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustAnchors {
    /// vendor id → update-signing public key (hex on disk).
    #[serde(with = "hex_keys")]
    keys: BTreeMap<String, PublicKey>,
    /// model → vendor id.
    models: BTreeMap<String, String>,
}

mod hex_keys {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<String, PublicKey>, s: S) -> Result<S::Ok, S::Error> {
        let h: BTreeMap<&String, String> = m.iter().map(|(k, v)| (k, hex::encode(v))).collect();
        h.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, PublicKey>, D::Error> {
        let h = BTreeMap::<String, String>::deserialize(d)?;
        h.into_iter()
            .map(|(k, v)| {
                let b = hex::decode(&v).map_err(serde::de::Error::custom)?;
                let pk: PublicKey = b.try_into().map_err(|_| serde::de::Error::custom("public key must be 32 octets"))?;
                Ok((k, pk))
            })
            .collect()
    }
}

impl TrustAnchors {
    pub fn add_vendor(&mut self, vendor_id: &str, key: PublicKey) {
        self.keys.insert(vendor_id.to_string(), key);
    }

    pub fn bind_model(&mut self, model: &str, vendor_id: &str) {
        self.models.insert(model.to_string(), vendor_id.to_string());
    }

    pub fn key_for_model(&self, model: &str) -> Option<&PublicKey> {
        self.keys.get(self.models.get(model)?)
    }

    pub fn vendors(&self) -> impl Iterator<Item = (&String, &PublicKey)> {
        self.keys.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VerifyError {
    #[error("no trust anchor for model {0}")]
    UnknownAnchor(String),
    #[error("vendor signature does not verify")]
    BadSignature,
}

pub fn verify_update(package: &UpdatePackage, anchors: &TrustAnchors) -> Result<(), VerifyError> {
    let key = anchors.key_for_model(&package.model).ok_or_else(|| VerifyError::UnknownAnchor(package.model.clone()))?;
    if package.verify_signature(key) {
        Ok(())
    } else {
        Err(VerifyError::BadSignature)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Approve(&'static str),
    Deny(String),
}

/// Default policy: security updates are approved automatically, anything
/// else needs an explicit approval for that device (or `*`), and versions
/// below the installed one are refused.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdatePolicy {
    approvals: BTreeSet<(String, String)>,
    #[serde(default)]
    pub allow_downgrade: bool,
}

pub const ANY_DEVICE: &str = "*";

impl UpdatePolicy {
    pub fn approve(&mut self, device_id: &str, update_id: &str) {
        self.approvals.insert((device_id.to_string(), update_id.to_string()));
    }

    pub fn is_approved(&self, device_id: &str, update_id: &str) -> bool {
        [device_id, ANY_DEVICE].iter().any(|d| self.approvals.contains(&(d.to_string(), update_id.to_string())))
    }

    pub fn approvals(&self) -> impl Iterator<Item = &(String, String)> {
        self.approvals.iter()
    }

    pub fn decide(
        &self,
        device_id: &str,
        installed: Option<&str>,
        update_id: &str,
        version: &str,
        reason: UpdateReason,
    ) -> Decision {
        if version.parse::<Version>().is_err() {
            return Decision::Deny(format!("unparseable version {version:?}"));
        }
        if let Some(cur) = installed {
            match compare_versions(version, cur) {
                Some(Ordering::Less) if !self.allow_downgrade => {
                    return Decision::Deny(format!("downgrade {cur} -> {version}"));
                }
                None if !self.allow_downgrade => {
                    return Decision::Deny(format!("cannot order installed version {cur:?}"));
                }
                _ => {}
            }
        }
        if self.is_approved(device_id, update_id) {
            Decision::Approve("explicit approval")
        } else if reason == UpdateReason::Security {
            Decision::Approve("security update")
        } else {
            Decision::Deny(format!("{reason} update {update_id} not approved"))
        }
    }
}

/// Order in which available updates are listed and chosen: highest version
/// first, equal versions by ascending update id.
pub fn update_order(a: &AvailableUpdate, b: &AvailableUpdate) -> Ordering {
    match compare_versions(&b.version, &a.version) {
        Some(Ordering::Equal) | None => a.update_id.cmp(&b.update_id),
        Some(o) => o,
    }
}

pub fn select_update(available: &[AvailableUpdate]) -> Option<&AvailableUpdate> {
    available.iter().min_by(|a, b| update_order(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vendor::Vendor;

    fn au(id: &str, v: &str) -> AvailableUpdate {
        AvailableUpdate { update_id: id.into(), version: v.into(), reason: UpdateReason::Security }
    }

    #[test]
    fn policy_oracle() {
        let mut p = UpdatePolicy::default();
        use Decision::*;
        assert!(matches!(p.decide("d", Some("1.0"), "U1", "2.0", UpdateReason::Security), Approve(_)));
        assert!(matches!(p.decide("d", Some("1.0"), "U1", "2.0", UpdateReason::Functionality), Deny(_)));
        assert!(matches!(p.decide("d", Some("2.0"), "U1", "1.0", UpdateReason::Security), Deny(_)));
        assert!(matches!(p.decide("d", Some("2.0"), "U1", "2.0.0", UpdateReason::Security), Approve(_)));
        p.approve("d", "U2");
        assert!(matches!(p.decide("d", Some("1.0"), "U2", "1.1", UpdateReason::Stability), Approve(_)));
        assert!(matches!(p.decide("e", Some("1.0"), "U2", "1.1", UpdateReason::Stability), Deny(_)));
        assert!(matches!(p.decide("d", Some("3.0"), "U2", "1.1", UpdateReason::Stability), Deny(_)));
        p.approve(ANY_DEVICE, "U3");
        assert!(matches!(p.decide("z", None, "U3", "1.1", UpdateReason::Functionality), Approve(_)));
        p.allow_downgrade = true;
        assert!(matches!(p.decide("d", Some("2.0"), "U1", "1.0", UpdateReason::Security), Approve(_)));
    }

    #[test]
    fn tie_break() {
        let list = vec![au("U9", "1.0"), au("U3", "2.0"), au("U2", "2.0.0"), au("U1", "1.5")];
        assert_eq!(select_update(&list).unwrap().update_id, "U2");
        let mut sorted = list.clone();
        sorted.sort_by(update_order);
        let ids: Vec<&str> = sorted.iter().map(|u| u.update_id.as_str()).collect();
        assert_eq!(ids, ["U2", "U3", "U1", "U9"]);
        assert!(select_update(&[]).is_none());
    }

    #[test]
    fn two_vendor_harness() {
        let a = Vendor::from_seed("acme", 1);
        let b = Vendor::from_seed("lockwell", 2);
        let mut anchors = TrustAnchors::default();
        anchors.add_vendor("acme", a.public_key());
        anchors.bind_model("SP-100", "acme");
        anchors.bind_model("DL-7", "lockwell");
        let good = a.sign_package("SP-100", "2.0", b"fw", UpdateReason::Security);
        assert_eq!(verify_update(&good, &anchors), Ok(()));
        let cross = b.sign_package("SP-100", "2.0", b"fw", UpdateReason::Security);
        assert_eq!(verify_update(&cross, &anchors), Err(VerifyError::BadSignature));
        let foreign = b.sign_package("DL-7", "2.0", b"fw", UpdateReason::Security);
        assert_eq!(verify_update(&foreign, &anchors), Err(VerifyError::UnknownAnchor("DL-7".into())));
        let mut mutated = good.clone();
        mutated.payload[0] ^= 1;
        assert_eq!(verify_update(&mutated, &anchors), Err(VerifyError::BadSignature));
    }
}
