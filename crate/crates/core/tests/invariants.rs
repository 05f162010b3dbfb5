use proptest::prelude::*;

use guardian_core::crypto::{aead_open, aead_seal, Direction, Key, KeySet, Nonce};
use guardian_core::guardian::registry::Lifecycle;
use guardian_core::guardian::{persist, DecommissionMode, Guardian};
use guardian_core::net::Fabric;
use guardian_core::protocol::{Envelope, LABEL_G2D};
use guardian_core::storage::StorageKey;
use guardian_core::types::{DeviceClass, DeviceState, MacAddr};
use guardian_core::update::compare_versions;
use guardian_core::vendor::Vendor;

fn key(b: u8) -> Key {
    Key([b; 32])
}

proptest! {
    #[test]
    fn aead_round_trip_and_tamper(pt in proptest::collection::vec(any::<u8>(), 0..96), aad in proptest::collection::vec(any::<u8>(), 0..16),
                                  n in any::<u64>(), flip in any::<usize>()) {
        let nonce = Nonce::counter(Direction::GuardianToDevice, n);
        let ct = aead_seal(&key(1), &nonce, &pt, &aad);
        prop_assert_eq!(aead_open(&key(1), &nonce, &ct, &aad).unwrap(), pt);
        let mut bad = ct.clone();
        let bit = flip % (bad.len() * 8);
        bad[bit / 8] ^= 1 << (bit % 8);
        prop_assert!(aead_open(&key(1), &nonce, &bad, &aad).is_err());
        // the same counter in the other direction is a different nonce
        prop_assert!(aead_open(&key(1), &Nonce::counter(Direction::DeviceToGuardian, n), &ct, &aad).is_err());
        prop_assert!(aead_open(&key(2), &nonce, &ct, &aad).is_err());
    }

    #[test]
    fn envelope_any_byte_change_fails(body in proptest::collection::vec(any::<u8>(), 0..48), epoch in 0u64..4,
                                      counter in any::<u64>(), pos in any::<usize>(), delta in 1u8..=255) {
        let env = Envelope::seal(&key(3), LABEL_G2D, "SP-100-0001", epoch, counter, body);
        let wire = env.encode();
        prop_assert!(Envelope::decode(&wire).unwrap().verify(&key(3), LABEL_G2D, "SP-100-0001"));
        prop_assert!(!env.verify(&key(3), LABEL_G2D, "SP-100-0002"));
        let mut bad = wire.clone();
        let p = pos % bad.len();
        bad[p] = bad[p].wrapping_add(delta);
        if let Ok(e) = Envelope::decode(&bad) {
            prop_assert!(!e.verify(&key(3), LABEL_G2D, "SP-100-0001"));
        }
    }

    #[test]
    fn rotation_never_reuses_keys(master in any::<[u8; 32]>(), wifi in proptest::collection::vec(any::<[u8; 32]>(), 1..5)) {
        let mut ks = KeySet::derive(Key(master), Key(wifi[0]), "TH-1-0001", 0).unwrap();
        let mut seen = vec![ks.k_enc.0, ks.k_mac.0];
        for (i, w) in wifi.iter().enumerate().skip(1) {
            ks = ks.rotated("TH-1-0001", Key(*w)).unwrap();
            prop_assert_eq!(ks.epoch, i as u64);
            prop_assert!(!seen.contains(&ks.k_enc.0) && !seen.contains(&ks.k_mac.0));
            seen.extend([ks.k_enc.0, ks.k_mac.0]);
        }
    }

    #[test]
    fn version_order_is_consistent(a in proptest::collection::vec(0u64..20, 1..4), b in proptest::collection::vec(0u64..20, 1..4)) {
        let s = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(".");
        let (x, y) = (s(&a), s(&b));
        let xy = compare_versions(&x, &y).unwrap();
        prop_assert_eq!(xy.reverse(), compare_versions(&y, &x).unwrap());
        prop_assert_eq!(compare_versions(&x, &x), Some(std::cmp::Ordering::Equal));
    }
}

#[derive(Debug, Clone)]
enum Op {
    Onboard(usize),
    Rotate(usize),
    Reset(usize),
    Decommission(usize),
    Status(usize),
    Reload,
}

fn op() -> impl Strategy<Value = Op> {
    let d = 0usize..3;
    prop_oneof![
        d.clone().prop_map(Op::Onboard),
        d.clone().prop_map(Op::Rotate),
        d.clone().prop_map(Op::Reset),
        d.clone().prop_map(Op::Decommission),
        d.prop_map(Op::Status),
        Just(Op::Reload),
    ]
}

const SERIALS: [&str; 3] = ["TH-1-0001", "TH-1-0002", "SP-100-0003"];

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    /// Whatever the operator does, in any order: the device state machine
    /// stays legal, Guardian and device never disagree about active keys,
    /// the registry round-trips, and no key byte reaches the wire.
    #[test]
    fn random_operator_sessions(seed in any::<u64>(), ops in proptest::collection::vec(op(), 1..14)) {
        let mut fabric = Fabric::new(seed);
        let mut vendor = Vendor::from_seed("acme", seed);
        let mut qrs = Vec::new();
        for s in SERIALS {
            let model = if s.starts_with("TH") { "TH-1" } else { "SP-100" };
            let class = if s.starts_with("TH") { DeviceClass::MidLevel } else { DeviceClass::LowEnd };
            let mac = vendor.allocate_mac();
            let (dev, qr, _) = vendor.provision_device(s, mac, model, class, "1.0").unwrap();
            fabric.add_device(dev);
            fabric.press_reset(s);
            qrs.push(qr);
        }
        let storage = StorageKey::from_text("prop").unwrap();
        let mut g = Guardian::new("home", MacAddr([0x0a, 0, 0, 0, 0, 1]), seed);
        g.attach(&mut fabric);
        for qr in &qrs {
            g.roster_scan(qr).unwrap();
        }
        for o in ops {
            match o {
                Op::Onboard(i) => {
                    // a refused onboarding leaves an earlier one intact
                    if g.onboard(&mut fabric, SERIALS[i]).is_ok() {
                        let rec = g.registry.get(SERIALS[i]).unwrap();
                        prop_assert!(rec.lifecycle == Lifecycle::Onboarded && rec.keyset.is_some());
                    }
                }
                Op::Rotate(i) => {
                    let _ = g.rotate_keys(&mut fabric, SERIALS[i]);
                }
                Op::Reset(i) => {
                    fabric.press_reset(SERIALS[i]);
                }
                Op::Decommission(i) => {
                    if g.decommission(&mut fabric, SERIALS[i], DecommissionMode::Recycle).is_ok() {
                        prop_assert!(!g.registry.get(SERIALS[i]).unwrap().holds_secrets());
                    }
                }
                Op::Status(i) => {
                    let _ = g.send_command(&mut fabric, SERIALS[i], guardian_core::protocol::Command::Status);
                }
                Op::Reload => {
                    let text = persist::to_json(&g, &storage);
                    g = persist::from_json(&text, &storage).unwrap();
                    g.attach(&mut fabric);
                    prop_assert_eq!(persist::to_json(&g, &storage), text);
                }
            }
            for (i, d) in fabric.devices().enumerate() {
                prop_assert!(d.audit().is_ok(), "{:?}", d.audit());
                let rec = g.registry.get(&d.serial).unwrap();
                if d.state() == DeviceState::Onboarded && rec.lifecycle == Lifecycle::Onboarded {
                    prop_assert_eq!(rec.keyset.as_ref(), d.keys(), "device {}", i);
                }
                if let Some(ks) = d.keys() {
                    for k in ks.secrets() {
                        prop_assert!(!fabric.trace().contains_bytes(&k.0));
                    }
                }
            }
        }
    }
}
