use super::persist;
use super::*;
use crate::storage::StorageKey;
use crate::types::{DeviceClass, DeviceState};
use crate::update::UpdateReason;

const G_MAC: MacAddr = MacAddr([0x0a, 0, 0, 0, 0, 1]);

struct World {
    fabric: Fabric,
    vendor: Vendor,
    guardian: Guardian,
    qrs: Vec<String>,
}

fn world(n: usize, seed: u64) -> World {
    let mut fabric = Fabric::new(seed);
    let mut vendor = Vendor::from_seed("acme", seed);
    let mut qrs = Vec::new();
    for i in 0..n {
        let mac = vendor.allocate_mac();
        let (dev, qr, _) =
            vendor.provision_device(&format!("SP-100-{i:04}"), mac, "SP-100", DeviceClass::MidLevel, "1.0").unwrap();
        fabric.add_device(dev);
        fabric.press_reset(&format!("SP-100-{i:04}"));
        qrs.push(qr);
    }
    let mut guardian = Guardian::new("home", G_MAC, seed);
    guardian.attach(&mut fabric);
    guardian.trust_vendor("acme", vendor.public_key());
    World { fabric, vendor, guardian, qrs }
}

fn onboarded(n: usize, seed: u64) -> World {
    let mut w = world(n, seed);
    for qr in w.qrs.clone() {
        let id = w.guardian.roster_scan(&qr).unwrap().device_id.clone();
        w.guardian.onboard(&mut w.fabric, &id).unwrap();
    }
    w
}

const D0: &str = "SP-100-0000";

#[test]
fn onboard_agrees_on_keys() {
    let w = onboarded(3, 7);
    let mut wifis = Vec::new();
    for rec in w.guardian.registry.records() {
        assert_eq!(rec.lifecycle, Lifecycle::Onboarded);
        let dev = w.fabric.device(&rec.device_id).unwrap();
        assert_eq!(dev.state(), DeviceState::Onboarded);
        assert_eq!(rec.keyset.as_ref(), dev.keys());
        assert_eq!(rec.mac, Some(dev.mac));
        assert!(w.fabric.is_associated(&dev.mac));
        assert_eq!(rec.installed_version.as_deref(), Some("1.0"));
        assert_eq!(rec.description, "smart plug");
        wifis.push(rec.keyset.as_ref().unwrap().k_wifi);
        dev.audit().unwrap();
    }
    wifis.sort_by_key(|k| k.0);
    wifis.dedup();
    assert_eq!(wifis.len(), 3);
    assert_eq!(w.guardian.ap_table.len(), 3);
}

#[test]
fn unrostered_is_refused_and_never_contacted() {
    let mut w = world(2, 1);
    w.guardian.roster_scan(&w.qrs[0].clone()).unwrap();
    let res = w.guardian.onboard_all(&mut w.fabric);
    assert_eq!(res.len(), 1);
    assert!(matches!(w.guardian.onboard(&mut w.fabric, "SP-100-0001"), Err(GuardianError::NotInRegistry(_))));
    assert_eq!(w.fabric.device("SP-100-0001").unwrap().state(), DeviceState::Provisioning);
    assert!(!w.fabric.trace().frames().any(|(f, _, _)| f.link == Link::DeviceAp("SP-100-0001".into())));
}

#[test]
fn wrong_password_aborts_and_leaves_record() {
    let mut w = world(1, 2);
    let serial_pw = w.qrs[0].split('|').next().unwrap().to_string();
    w.guardian.roster_scan(&format!("{serial_pw}|WRONGPASSWORD")).unwrap();
    let r = w.guardian.onboard(&mut w.fabric, D0);
    assert!(matches!(r, Err(GuardianError::PakeAborted(_))), "{r:?}");
    let rec = w.guardian.registry.get(D0).unwrap();
    assert_eq!(rec.lifecycle, Lifecycle::Rostered);
    assert!(rec.keyset.is_none());
    assert_eq!(w.fabric.device(D0).unwrap().state(), DeviceState::Provisioning);
}

#[test]
fn stolen_sticker_triggers_prior_boarding_alarm() {
    let mut w = world(1, 3);
    let mut thief = Guardian::new("thief", MacAddr([0x0e, 0, 0, 0, 0, 9]), 99);
    thief.attach(&mut w.fabric);
    thief.roster_scan(&w.qrs[0]).unwrap();
    thief.onboard(&mut w.fabric, D0).unwrap();
    w.guardian.roster_scan(&w.qrs[0].clone()).unwrap();
    let r = w.guardian.onboard(&mut w.fabric, D0);
    assert_eq!(r, Err(GuardianError::PriorBoarding(D0.into())));
    assert_eq!(w.guardian.alarms().count(), 1);
    assert!(w.guardian.registry.get(D0).unwrap().flags.prior_boarding_alarm);
    assert!(w.fabric.trace().has_event("home", "alarm"));
}

#[test]
fn mediated_update_paths() {
    let mut w = onboarded(1, 4);
    let dir = tempfile::tempdir().unwrap();
    let feed = UpdateFeed::new(dir.path());
    w.vendor.publish_update(&feed, Some("U1"), "SP-100", "2.0", b"fw-2", UpdateReason::Security).unwrap();
    w.vendor.publish_update(&feed, Some("U2"), "SP-100", "2.1", b"fw-21", UpdateReason::Functionality).unwrap();
    w.vendor.publish_update(&feed, Some("U3"), "SP-100", "0.9", b"old", UpdateReason::Security).unwrap();
    assert_eq!(w.guardian.discover_updates(&feed).unwrap(), 3);
    let listed: Vec<_> =
        w.guardian.registry.get(D0).unwrap().available_updates.iter().map(|u| u.update_id.clone()).collect();
    assert_eq!(listed, ["U2", "U1", "U3"]);

    let before = w.fabric.trace().frames().count();
    assert!(matches!(w.guardian.push_update(&mut w.fabric, D0, "U2", &feed), Err(GuardianError::PolicyDenied(_))));
    assert_eq!(w.fabric.trace().frames().count(), before, "denied push sends nothing");

    assert_eq!(w.guardian.push_update(&mut w.fabric, D0, "U1", &feed).unwrap(), "2.0");
    assert_eq!(w.fabric.device(D0).unwrap().firmware().version, "2.0");
    assert!(matches!(w.guardian.push_update(&mut w.fabric, D0, "U3", &feed), Err(GuardianError::PolicyDenied(_))));

    w.guardian.approve(D0, "U2");
    assert_eq!(w.guardian.push_update(&mut w.fabric, D0, "U2", &feed).unwrap(), "2.1");
    let hist: Vec<_> = w.guardian.registry.get(D0).unwrap().version_history.iter().map(|h| h.version.clone()).collect();
    assert_eq!(hist, ["1.0", "2.0", "2.1"]);

    let other = Vendor::from_seed("acme", 12345);
    let forged = other.sign_package("SP-100", "3.0", b"evil", UpdateReason::Security);
    feed.publish("U9", &forged).unwrap();
    assert!(matches!(
        w.guardian.push_update(&mut w.fabric, D0, "U9", &feed),
        Err(GuardianError::Verify(VerifyError::BadSignature))
    ));
    assert_eq!(w.fabric.device(D0).unwrap().firmware().version, "2.1");
}

#[test]
fn unreadable_feed_changes_nothing() {
    let mut w = onboarded(1, 5);
    let dir = tempfile::tempdir().unwrap();
    let feed = UpdateFeed::new(dir.path());
    w.vendor.publish_update(&feed, Some("U1"), "SP-100", "2.0", b"x", UpdateReason::Security).unwrap();
    w.guardian.discover_updates(&feed).unwrap();
    std::fs::write(dir.path().join(crate::update::INDEX_FILE), "garbage").unwrap();
    assert!(w.guardian.discover_updates(&feed).is_err());
    assert_eq!(w.guardian.registry.get(D0).unwrap().available_updates.len(), 1);
}

#[test]
fn rotation_switches_both_sides() {
    let mut w = onboarded(1, 6);
    let old = w.guardian.registry.get(D0).unwrap().keyset.clone().unwrap();
    assert_eq!(w.guardian.rotate_keys(&mut w.fabric, D0).unwrap(), 1);
    assert_eq!(w.guardian.rotate_keys(&mut w.fabric, D0).unwrap(), 2);
    let new = w.guardian.registry.get(D0).unwrap().keyset.clone().unwrap();
    assert_eq!(Some(&new), w.fabric.device(D0).unwrap().keys());
    assert_ne!(old.k_mac, new.k_mac);
    assert_ne!(old.k_enc, new.k_enc);
    assert_ne!(old.k_wifi, new.k_wifi);
    let mac = w.fabric.device(D0).unwrap().mac;
    assert!(!w.guardian.ap_table.verify(&mac, &old.k_wifi));
    assert!(w.fabric.is_associated(&mac));
    assert!(matches!(w.guardian.send_command(&mut w.fabric, D0, Command::Status), Ok(Reply::Status { epoch: 2, .. })));
}

#[test]
fn decommission_then_transfer() {
    let mut w = onboarded(1, 8);
    w.guardian.store_secret(&mut w.fabric, D0, "history", b"private").unwrap();
    assert!(!w.fabric.device(D0).unwrap().sensitive_store().is_empty());
    let old_wifi = w.guardian.registry.get(D0).unwrap().keyset.as_ref().unwrap().k_wifi;
    let rep = w.guardian.decommission(&mut w.fabric, D0, DecommissionMode::Transfer).unwrap();
    assert!(rep.acknowledged);
    let rec = w.guardian.registry.get(D0).unwrap();
    assert!(!rec.holds_secrets());
    let dev = w.fabric.device(D0).unwrap();
    assert!(dev.sensitive_store().is_empty());
    assert_eq!(dev.state(), DeviceState::Decommissioned);
    let mac = dev.mac;
    assert!(!w.fabric.try_associate(&w.guardian.ap_table, mac, &old_wifi, "probe"));

    let note = rep.transfer_note.unwrap();
    w.fabric.press_reset(D0);
    let mut g2 = Guardian::new("new-home", MacAddr([0x0a, 0, 0, 0, 0, 2]), 77);
    g2.attach(&mut w.fabric);
    g2.roster_transfer(&note).unwrap();
    g2.onboard_transfer(&mut w.fabric, &mut w.vendor, D0, "bob").unwrap();
    let rec = g2.registry.get(D0).unwrap();
    assert_eq!(rec.keyset.as_ref(), w.fabric.device(D0).unwrap().keys());
    assert_eq!(w.vendor.record(D0).unwrap().reset_count_c, 2);
    assert!(matches!(
        w.vendor.next_password(D0, &mac, 2, "eve", 0),
        Err(Refusal::AlreadyIssued { requested: 2, last: 2 })
    ));
}

#[test]
fn persist_round_trip_and_fail_closed() {
    let w = onboarded(2, 9);
    let key = StorageKey::from_text("storage pass").unwrap();
    let text = persist::to_json(&w.guardian, &key);
    let back = persist::from_json(&text, &key).unwrap();
    assert_eq!(persist::to_json(&back, &key), text);
    for rec in w.guardian.registry.records() {
        assert_eq!(back.registry.get(&rec.device_id), Some(rec));
        for k in rec.keyset.as_ref().unwrap().secrets() {
            assert!(!text.contains(&hex::encode(k.0)));
        }
    }
    let wrong = StorageKey::from_text("other").unwrap();
    assert!(matches!(persist::from_json(&text, &wrong), Err(persist::PersistError::Storage(_))));
    assert!(matches!(persist::from_json(&text[..text.len() / 2], &key), Err(persist::PersistError::Parse(_))));
}
