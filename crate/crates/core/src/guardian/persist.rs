//! Registry state file. Plain JSON for inspectability; every secret field is
//! sealed under the storage key. A wrong key fails before anything is
//! returned.

use std::path::Path;

use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use super::ap_table::ApPasswordTable;
use super::policy::{TrustAnchors, UpdatePolicy};
use super::registry::{DeviceRecord, Registry};
use super::{Guardian, LogEntry};
use crate::crypto::{KeySet, SecretBytes};
use crate::storage::{StorageError, StorageKey};
use crate::types::MacAddr;

pub const REGISTRY_FORMAT: &str = "guardian-registry/1";

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct StoredRecord {
    #[serde(flatten)]
    record: DeviceRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    keyset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d_pw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pending_rotation: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    format: String,
    key_check: String,
    guardian: String,
    mac: MacAddr,
    /// Sealed generator state, so a reloaded Guardian continues the stream.
    rng: String,
    devices: Vec<StoredRecord>,
    ap_table: ApPasswordTable,
    anchors: TrustAnchors,
    policy: UpdatePolicy,
    log: Vec<LogEntry>,
}

fn seal_keyset(key: &StorageKey, owner: &str, field: &str, ks: &KeySet) -> String {
    key.seal(owner, field, &serde_json::to_vec(ks).expect("serializable"))
}

fn open_keyset(key: &StorageKey, owner: &str, field: &str, sealed: &str) -> Result<KeySet, PersistError> {
    let pt = key.open(owner, field, sealed)?;
    serde_json::from_slice(&pt).map_err(|e| PersistError::Parse(format!("{owner}/{field}: {e}")))
}

pub fn to_json(g: &Guardian, key: &StorageKey) -> String {
    let devices = g
        .registry
        .records()
        .map(|r| {
            let id = &r.device_id;
            StoredRecord {
                record: r.clone(),
                keyset: r.keyset.as_ref().map(|k| seal_keyset(key, id, "keyset", k)),
                d_pw: r.d_pw.as_ref().map(|p| key.seal(id, "d_pw", p.as_bytes())),
                pending_rotation: r.pending_rotation.as_ref().map(|k| seal_keyset(key, id, "pending_rotation", k)),
            }
        })
        .collect();
    let rng = g.rng_state();
    let mut rng_state = rng.get_seed().to_vec();
    rng_state.extend_from_slice(&rng.get_word_pos().to_be_bytes());
    let doc = RegistryFile {
        format: REGISTRY_FORMAT.to_string(),
        key_check: key.key_check(),
        guardian: g.name.clone(),
        mac: g.mac,
        rng: key.seal(&g.name, "rng", &rng_state),
        devices,
        ap_table: g.ap_table.clone(),
        anchors: g.anchors.clone(),
        policy: g.policy.clone(),
        log: g.log().to_vec(),
    };
    serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
}

pub fn from_json(text: &str, key: &StorageKey) -> Result<Guardian, PersistError> {
    let doc: RegistryFile = serde_json::from_str(text).map_err(|e| PersistError::Parse(e.to_string()))?;
    if doc.format != REGISTRY_FORMAT {
        return Err(PersistError::Parse(format!("unsupported format {:?}", doc.format)));
    }
    key.verify_check(&doc.key_check)?;
    let state = key.open(&doc.guardian, "rng", &doc.rng)?;
    if state.len() != 48 {
        return Err(PersistError::Parse("rng state length".into()));
    }
    let mut rng = ChaCha20Rng::from_seed(state[..32].try_into().expect("32"));
    rng.set_word_pos(u128::from_be_bytes(state[32..].try_into().expect("16")));
    let mut registry = Registry::default();
    for s in doc.devices {
        let mut r = s.record;
        let id = r.device_id.clone();
        r.keyset = s.keyset.map(|h| open_keyset(key, &id, "keyset", &h)).transpose()?;
        r.pending_rotation = s.pending_rotation.map(|h| open_keyset(key, &id, "pending_rotation", &h)).transpose()?;
        r.d_pw = s.d_pw.map(|h| key.open(&id, "d_pw", &h).map(SecretBytes)).transpose()?;
        registry.insert(r).map_err(|e| PersistError::Parse(e.to_string()))?;
    }
    Ok(Guardian::from_parts(doc.guardian, doc.mac, registry, doc.ap_table, doc.anchors, doc.policy, rng, doc.log))
}

pub fn save(g: &Guardian, path: &Path, key: &StorageKey) -> Result<(), PersistError> {
    std::fs::write(path, to_json(g, key))?;
    Ok(())
}

pub fn load(path: &Path, key: &StorageKey) -> Result<Guardian, PersistError> {
    from_json(&std::fs::read_to_string(path)?, key)
}
