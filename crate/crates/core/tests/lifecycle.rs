//! Whole-system runs through the public API: several vendors and device
//! classes, a registry reload in the middle of a device's life, and scans of
//! everything that leaves a process (frames, the registry file).

use guardian_core::guardian::registry::Lifecycle;
use guardian_core::guardian::{persist, DecommissionMode, Guardian, GuardianError};
use guardian_core::net::Fabric;
use guardian_core::protocol::{Command, Reply};
use guardian_core::storage::StorageKey;
use guardian_core::types::{DeviceClass, DeviceState, MacAddr};
use guardian_core::update::{UpdateFeed, UpdateReason};
use guardian_core::vendor::Vendor;

const HOME: MacAddr = MacAddr([0x0a, 0, 0, 0, 0, 1]);

struct Home {
    fabric: Fabric,
    vendors: Vec<Vendor>,
    guardian: Guardian,
    qrs: Vec<String>,
}

fn home(seed: u64) -> Home {
    let mut fabric = Fabric::new(seed);
    let mut vendors = vec![Vendor::from_seed("acme", seed), Vendor::from_seed("lockwell", seed), Vendor::from_seed("viewtek", seed)];
    let devices = [
        (0, "SP-100-0001", "SP-100", DeviceClass::LowEnd),
        (0, "TH-1-0001", "TH-1", DeviceClass::MidLevel),
        (1, "DL-7-0001", "DL-7", DeviceClass::MidLevel),
        (2, "CAM-3-0001", "CAM-3", DeviceClass::HighEnd),
    ];
    let mut qrs = Vec::new();
    for (v, serial, model, class) in devices {
        let mac = vendors[v].allocate_mac();
        let (dev, qr, _) = vendors[v].provision_device(serial, mac, model, class, "1.0").unwrap();
        fabric.add_device(dev);
        fabric.press_reset(serial);
        qrs.push(qr);
    }
    let mut guardian = Guardian::new("home", HOME, seed);
    guardian.attach(&mut fabric);
    for v in &vendors {
        guardian.trust_vendor(&v.vendor_id, v.public_key());
    }
    Home { fabric, vendors, guardian, qrs }
}

fn keys_hex(g: &Guardian) -> Vec<String> {
    g.registry
        .records()
        .filter_map(|r| r.keyset.as_ref())
        .flat_map(|k| k.secrets().map(|s| hex::encode(s.0)))
        .collect()
}

#[test]
fn mixed_household_through_a_reload() {
    let mut h = home(21);
    for qr in h.qrs.clone() {
        h.guardian.roster_scan(&qr).unwrap();
    }
    for (id, r) in h.guardian.onboard_all(&mut h.fabric) {
        r.unwrap_or_else(|e| panic!("{id}: {e}"));
    }

    // secrets only go to classes with general AEAD
    assert!(matches!(h.guardian.store_secret(&mut h.fabric, "SP-100-0001", "x", b"v"), Ok(Reply::Unsupported)));
    assert!(matches!(h.guardian.store_secret(&mut h.fabric, "CAM-3-0001", "clip", b"v"), Ok(Reply::Stored)));

    let dir = tempfile::tempdir().unwrap();
    let key = StorageKey::from_text("household").unwrap();
    let path = dir.path().join("registry.json");
    persist::save(&h.guardian, &path, &key).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    for k in keys_hex(&h.guardian) {
        assert!(!text.contains(&k), "key material in the registry file");
    }

    // a restarted Guardian continues where the old one stopped
    let mut g = persist::load(&path, &key).unwrap();
    g.attach(&mut h.fabric);
    assert!(matches!(g.send_command(&mut h.fabric, "DL-7-0001", Command::Status), Ok(Reply::Status { epoch: 0, .. })));
    assert_eq!(g.rotate_keys(&mut h.fabric, "DL-7-0001").unwrap(), 1);

    let feed_dir = tempfile::tempdir().unwrap();
    let feed = UpdateFeed::new(feed_dir.path());
    h.vendors[2].publish_update(&feed, Some("CAM-2"), "CAM-3", "2.0", b"cam fw", UpdateReason::Security).unwrap();
    h.vendors[0].publish_update(&feed, Some("TH-2"), "TH-1", "2.0", b"th fw", UpdateReason::Security).unwrap();
    // a package for one vendor's model signed by another vendor
    let crossed = h.vendors[0].sign_package("DL-7", "9.0", b"not ours", UpdateReason::Security);
    feed.publish("DL-9", &crossed).unwrap();
    assert_eq!(g.discover_updates(&feed).unwrap(), 3);
    assert_eq!(g.push_update(&mut h.fabric, "CAM-3-0001", "CAM-2", &feed).unwrap(), "2.0");
    assert_eq!(g.push_update(&mut h.fabric, "TH-1-0001", "TH-2", &feed).unwrap(), "2.0");
    assert!(matches!(g.push_update(&mut h.fabric, "DL-7-0001", "DL-9", &feed), Err(GuardianError::Verify(_))));
    assert!(matches!(
        g.push_update(&mut h.fabric, "SP-100-0001", "TH-2", &feed),
        Err(GuardianError::ModelMismatch { .. })
    ));

    let rep = g.decommission(&mut h.fabric, "CAM-3-0001", DecommissionMode::Recycle).unwrap();
    assert!(rep.acknowledged && rep.transfer_note.is_none());
    let cam = h.fabric.device("CAM-3-0001").unwrap();
    assert_eq!(cam.state(), DeviceState::Decommissioned);
    assert!(cam.sensitive_store().is_empty() && cam.keys().is_none());

    for d in h.fabric.devices() {
        d.audit().unwrap();
        if let Some(ks) = d.keys() {
            assert_eq!(g.registry.get(&d.serial).and_then(|r| r.keyset.as_ref()), Some(ks));
            for k in ks.secrets() {
                assert!(!h.fabric.trace().contains_bytes(&k.0));
            }
        }
    }
    let lifecycles: Vec<Lifecycle> = g.registry.records().map(|r| r.lifecycle).collect();
    assert_eq!(lifecycles.iter().filter(|l| **l == Lifecycle::Onboarded).count(), 3);
}

fn scripted_trace(seed: u64) -> String {
    let mut h = home(seed);
    for qr in h.qrs.clone() {
        h.guardian.roster_scan(&qr).unwrap();
    }
    h.guardian.onboard_all(&mut h.fabric);
    h.guardian.rotate_keys(&mut h.fabric, "TH-1-0001").unwrap();
    h.guardian.decommission(&mut h.fabric, "SP-100-0001", DecommissionMode::Transfer).unwrap();
    h.fabric.trace().export()
}

#[test]
fn traces_depend_only_on_the_seed() {
    assert_eq!(scripted_trace(5), scripted_trace(5));
    assert_ne!(scripted_trace(5), scripted_trace(6));
}

#[test]
fn registry_tampering_is_detected() {
    let mut h = home(3);
    h.guardian.roster_scan(&h.qrs[1].clone()).unwrap();
    h.guardian.onboard(&mut h.fabric, "TH-1-0001").unwrap();
    let key = StorageKey::from_text("k").unwrap();
    let text = persist::to_json(&h.guardian, &key);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let sealed = v["devices"][0]["keyset"].as_str().unwrap().to_string();
    // flip one hex digit inside the sealed keyset
    let mid = sealed.len() / 2;
    let flipped = if &sealed[mid..mid + 1] == "0" { "1" } else { "0" };
    let bad = text.replacen(&sealed, &format!("{}{flipped}{}", &sealed[..mid], &sealed[mid + 1..]), 1);
    assert!(matches!(persist::from_json(&bad, &key), Err(persist::PersistError::Storage(_))));
}
