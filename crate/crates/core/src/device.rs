//! Simulated commodity IoT device.
//!
//! The device answers on its open provisioning AP while in provisioning
//! mode, runs the PAKE responder with its current authenticator, accepts
//! the sealed access-point secret, and afterwards acts only on commands that
//! carry a valid MAC under its working key.

use std::collections::BTreeMap;

use rand_core::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use crate::crypto::chain::ChainVerifier;
use crate::crypto::ephemeral::{handoff_key, EphemeralSecret};
use crate::crypto::pake::{is_first_blob, is_pake_blob};
use crate::crypto::{
    abort_blob, aead_open, hash, mac_verify, pake_start, pake_step, AbortReason, Digest, Direction, Key, KeySet,
    Nonce, PakeSession, Role, SecretBytes, StepOutcome, Tag,
};
use crate::net::frame::{Frame, FrameKind, Link};
use crate::protocol::{
    pake_ids, store_aad, transfer_aad, wifi_aad, Command, Envelope, HandoffMsg, Purpose, Reply, Report, Sealed,
    StatusMsg, LABEL_D2G, LABEL_G2D,
};
use crate::types::{DeviceClass, DeviceState, MacAddr};
use crate::update::PackageBody;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Firmware {
    pub version: String,
    pub digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum DeviceEvent {
    Transition { from: DeviceState, to: DeviceState, cause: String },
    PakeCompleted,
    PakeAborted { reason: String },
    FirmwareChanged { from: String, to: String },
    UpdateRejected { reason: String },
    CommandDropped { reason: String },
    ChainAccepted { index: u32 },
    ChainRejected { index: u32 },
    KeysActivated { epoch: u64 },
    StoreWritten { label: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum UpdateRejection {
    #[error("device is not on-boarded")]
    NotOnboarded,
    #[error("device is not in update-ready state")]
    NotReady,
    #[error("package MAC does not verify")]
    BadMac,
    #[error("package is for a different model")]
    WrongModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("reset counter is only readable in provisioning mode")]
pub struct NotProvisioning;

struct HandoffPending {
    transcript: Digest,
    key: Key,
}

#[derive(Serialize, Deserialize)]
pub struct DeviceSim {
    pub serial: String,
    pub mac: MacAddr,
    pub vendor_id: String,
    pub model: String,
    pub device_class: DeviceClass,
    state: DeviceState,
    sticker_pw: Option<SecretBytes>,
    session_pw: Option<SecretBytes>,
    handoff_binding: Option<Digest>,
    onboarded_flag: bool,
    reset_count: u32,
    chain: ChainVerifier,
    keys: Option<KeySet>,
    staged: Option<KeySet>,
    firmware: Firmware,
    sensitive_store: BTreeMap<String, SecretBytes>,
    update_ready: bool,
    last_cmd_counter: Option<u64>,
    reply_counter: u64,
    pake_attempts: u64,
    history: Vec<DeviceEvent>,
    #[serde(skip)]
    reported: usize,
    #[serde(skip)]
    pake: Option<PakeSession>,
    #[serde(skip)]
    pending_master: Option<Key>,
    #[serde(skip)]
    handoff: Option<HandoffPending>,
}

impl std::fmt::Debug for DeviceSim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeviceSim")
            .field("serial", &self.serial)
            .field("mac", &self.mac)
            .field("model", &self.model)
            .field("state", &self.state)
            .field("reset_count", &self.reset_count)
            .field("onboarded_flag", &self.onboarded_flag)
            .finish_non_exhaustive()
    }
}

impl DeviceSim {
    /// A factory-fresh device as it leaves the assembly line.
    #[allow(clippy::too_many_arguments)]
    pub fn manufacture(
        serial: &str,
        mac: MacAddr,
        vendor_id: &str,
        model: &str,
        device_class: DeviceClass,
        sticker_pw: SecretBytes,
        chain: ChainVerifier,
        firmware: Firmware,
    ) -> Self {
        DeviceSim {
            serial: serial.to_string(),
            mac,
            vendor_id: vendor_id.to_string(),
            model: model.to_string(),
            device_class,
            state: DeviceState::Factory,
            sticker_pw: Some(sticker_pw),
            session_pw: None,
            handoff_binding: None,
            onboarded_flag: false,
            reset_count: 0,
            chain,
            keys: None,
            staged: None,
            firmware,
            sensitive_store: BTreeMap::new(),
            update_ready: false,
            last_cmd_counter: None,
            reply_counter: 0,
            pake_attempts: 0,
            history: Vec::new(),
            reported: 0,
            pake: None,
            pending_master: None,
            handoff: None,
        }
    }

    pub fn state(&self) -> DeviceState {
        self.state
    }

    pub fn onboarded_flag(&self) -> bool {
        self.onboarded_flag
    }

    pub fn keys(&self) -> Option<&KeySet> {
        self.keys.as_ref()
    }

    pub fn firmware(&self) -> &Firmware {
        &self.firmware
    }

    pub fn chain(&self) -> &ChainVerifier {
        &self.chain
    }

    pub fn sensitive_store(&self) -> &BTreeMap<String, SecretBytes> {
        &self.sensitive_store
    }

    pub fn history(&self) -> &[DeviceEvent] {
        &self.history
    }

    pub fn pake_attempts(&self) -> u64 {
        self.pake_attempts
    }

    /// Secret the device presents when associating with the domain AP.
    pub fn domain_credential(&self) -> Option<Key> {
        self.keys.as_ref().map(|k| k.k_wifi)
    }

    /// Events recorded since the last call, for the network trace.
    pub fn drain_events(&mut self) -> Vec<DeviceEvent> {
        let new = self.history[self.reported..].to_vec();
        self.reported = self.history.len();
        new
    }

    fn transition(&mut self, to: DeviceState, cause: &str) {
        let from = self.state;
        self.state = to;
        self.history.push(DeviceEvent::Transition { from, to, cause: cause.to_string() });
    }

    fn clear_session(&mut self) {
        self.keys = None;
        self.staged = None;
        self.session_pw = None;
        self.handoff_binding = None;
        self.pake = None;
        self.pending_master = None;
        self.handoff = None;
        self.update_ready = false;
        self.last_cmd_counter = None;
        self.reply_counter = 0;
    }

    /// Physical reset button: re-enter provisioning and count the press.
    /// Stored user data survives; only [`DeviceSim::wipe`] removes it.
    pub fn hard_reset(&mut self) {
        self.clear_session();
        self.onboarded_flag = false;
        self.reset_count += 1;
        self.transition(DeviceState::Provisioning, "hard-reset");
    }

    pub fn read_reset_counter(&self) -> Result<u32, NotProvisioning> {
        match self.state {
            DeviceState::Provisioning => Ok(self.reset_count),
            _ => Err(NotProvisioning),
        }
    }

    /// Check a next-password candidate against the stored chain verifier,
    /// indexed by the current reset count. On acceptance the candidate
    /// becomes the authenticator for this provisioning session only.
    pub fn verify_next_password(&mut self, candidate: &Digest) -> bool {
        if self.state != DeviceState::Provisioning {
            return false;
        }
        let target = self.reset_count;
        if self.chain.accept(candidate, target) {
            self.session_pw = Some(SecretBytes(candidate.0.to_vec()));
            self.history.push(DeviceEvent::ChainAccepted { index: target });
            true
        } else {
            self.history.push(DeviceEvent::ChainRejected { index: target });
            false
        }
    }

    /// Remove user data and every secret acquired from the domain,
    /// including the factory sticker password.
    pub fn wipe(&mut self) {
        self.clear_session();
        self.sensitive_store.clear();
        self.sticker_pw = None;
        self.onboarded_flag = false;
        if self.state != DeviceState::Decommissioned {
            self.transition(DeviceState::Decommissioned, "wipe");
        }
    }

    /// Local data collection (sensor readings and the like).
    pub fn record(&mut self, label: &str, value: &[u8]) -> bool {
        if self.state == DeviceState::Decommissioned {
            return false;
        }
        self.sensitive_store.insert(label.to_string(), SecretBytes(value.to_vec()));
        self.history.push(DeviceEvent::StoreWritten { label: label.to_string() });
        true
    }

    /// Install a package forwarded by the Guardian. The device checks only
    /// the Guardian's MAC, never a vendor signature.
    pub fn apply_update(&mut self, package: &PackageBody, tag: &Tag) -> Result<String, UpdateRejection> {
        let Some(keys) = self.keys.as_ref().filter(|_| self.state == DeviceState::Onboarded) else {
            return Err(UpdateRejection::NotOnboarded);
        };
        if !std::mem::take(&mut self.update_ready) {
            return Err(UpdateRejection::NotReady);
        }
        let verdict = if !mac_verify(&keys.k_mac, &package.canonical(), tag) {
            Err(UpdateRejection::BadMac)
        } else if package.model != self.model {
            Err(UpdateRejection::WrongModel)
        } else {
            Ok(())
        };
        match verdict {
            Ok(()) => {
                let from = std::mem::replace(
                    &mut self.firmware,
                    Firmware { version: package.version.clone(), digest: hash(&package.payload) },
                );
                self.history.push(DeviceEvent::FirmwareChanged { from: from.version, to: package.version.clone() });
                Ok(package.version.clone())
            }
            Err(e) => {
                self.history.push(DeviceEvent::UpdateRejected { reason: e.to_string() });
                Err(e)
            }
        }
    }

    /// Process one delivered frame and return the frames sent in response.
    pub fn handle_frame<R: RngCore + CryptoRng>(&mut self, frame: &Frame, rng: &mut R) -> Vec<Frame> {
        match self.state {
            DeviceState::Factory | DeviceState::Decommissioned => return Vec::new(),
            DeviceState::Provisioning | DeviceState::Onboarded => {}
        }
        let on_own_ap = frame.link == Link::DeviceAp(self.serial.clone());
        let reply = match frame.kind {
            FrameKind::Status if on_own_ap => self.on_status(frame),
            FrameKind::PakeBlob if on_own_ap => self.on_pake_blob(frame, rng),
            FrameKind::SealedPayload if on_own_ap => self.on_sealed(frame),
            FrameKind::Command if frame.dst == self.mac => self.on_command(frame),
            _ => None,
        };
        reply.into_iter().collect()
    }

    fn on_status(&mut self, frame: &Frame) -> Option<Frame> {
        match StatusMsg::decode(&frame.body) {
            Ok(StatusMsg::Hello) => {
                let report = Report {
                    serial: self.serial.clone(),
                    model: self.model.clone(),
                    state: self.state,
                    onboarded_flag: self.onboarded_flag,
                    reset_count: self.read_reset_counter().ok(),
                };
                Some(frame.reply(self.mac, FrameKind::Status, StatusMsg::Report(report).encode()))
            }
            _ => None,
        }
    }

    fn on_pake_blob<R: RngCore + CryptoRng>(&mut self, frame: &Frame, rng: &mut R) -> Option<Frame> {
        let body = &frame.body;
        if HandoffMsg::is_handoff(body) {
            return self.on_handoff(frame, rng);
        }
        if !is_pake_blob(body) {
            return None;
        }
        let refuse = |reason| Some(frame.reply(self.mac, FrameKind::PakeBlob, abort_blob(reason)));
        if self.state != DeviceState::Provisioning {
            return if is_first_blob(body) { refuse(AbortReason::Refused) } else { None };
        }
        if is_first_blob(body) {
            let Some(pw) = self.session_pw.clone().or_else(|| self.sticker_pw.clone()) else {
                return refuse(AbortReason::Refused);
            };
            let binding = self.session_pw.as_ref().and(self.handoff_binding);
            let (init_id, resp_id) = pake_ids(&frame.src, &self.serial, binding.as_ref());
            self.pake_attempts += 1;
            match pake_start(Role::Responder, pw.as_bytes(), &resp_id, &init_id, rng) {
                Ok((session, _)) => self.pake = Some(session),
                Err(_) => return refuse(AbortReason::Refused),
            }
        }
        let session = self.pake.as_mut()?;
        let out = match pake_step(session, body, rng) {
            StepOutcome::Send(b) => Some(b),
            StepOutcome::SendAndDone(b) => {
                self.pake_done();
                Some(b)
            }
            StepOutcome::Done => {
                self.pake_done();
                None
            }
            StepOutcome::Aborted { reason, notify } => {
                self.pake = None;
                self.history.push(DeviceEvent::PakeAborted { reason: format!("{reason:?}") });
                notify
            }
        };
        out.map(|b| frame.reply(self.mac, FrameKind::PakeBlob, b))
    }

    fn pake_done(&mut self) {
        if let Some(session) = self.pake.take() {
            self.pending_master = session.session_key().copied();
            self.onboarded_flag = true;
            self.history.push(DeviceEvent::PakeCompleted);
        }
    }

    fn on_handoff<R: RngCore + CryptoRng>(&mut self, frame: &Frame, rng: &mut R) -> Option<Frame> {
        if self.state != DeviceState::Provisioning {
            return None;
        }
        let Ok(HandoffMsg::Offer(offer)) = HandoffMsg::decode(&frame.body) else {
            return None;
        };
        let eph = EphemeralSecret::generate(rng);
        let shared = eph.agree(&offer)?;
        let (transcript, key) = handoff_key(&shared, &offer, &eph.public(), &self.serial);
        self.handoff = Some(HandoffPending { transcript, key });
        Some(frame.reply(self.mac, FrameKind::PakeBlob, HandoffMsg::Answer(eph.public()).encode()))
    }

    fn on_sealed(&mut self, frame: &Frame) -> Option<Frame> {
        let sealed = Sealed::decode(&frame.body).ok()?;
        match sealed.purpose {
            Purpose::WifiKey => self.on_wifi_key(frame, &sealed),
            Purpose::TransferPassword => {
                let pending = self.handoff.take()?;
                let nonce = Nonce::counter(Direction::Handoff, sealed.counter);
                let aad = transfer_aad(&self.serial, self.reset_count);
                let accepted = match aead_open(&pending.key, &nonce, &sealed.ciphertext, &aad) {
                    Ok(pt) => match <[u8; 32]>::try_from(pt.as_slice()) {
                        Ok(w) => self.verify_next_password(&Digest(w)),
                        Err(_) => false,
                    },
                    Err(_) => false,
                };
                if accepted {
                    self.handoff_binding = Some(pending.transcript);
                }
                Some(frame.reply(self.mac, FrameKind::Status, StatusMsg::HandoffResult { accepted }.encode()))
            }
        }
    }

    fn on_wifi_key(&mut self, frame: &Frame, sealed: &Sealed) -> Option<Frame> {
        if self.state != DeviceState::Provisioning {
            return None;
        }
        let master = self.pending_master?;
        let epoch = 0;
        let (k_enc, k_mac) = crate::crypto::keys::working_keys(&master, &self.serial, epoch).ok()?;
        let nonce = Nonce::counter(Direction::GuardianToDevice, sealed.counter);
        let pt = aead_open(&k_enc, &nonce, &sealed.ciphertext, &wifi_aad(&self.serial, epoch)).ok()?;
        let k_wifi = Key::from_slice(&pt)?;
        self.pending_master = None;
        self.session_pw = None;
        self.handoff_binding = None;
        self.keys = Some(KeySet { master, k_enc, k_mac, k_wifi, epoch });
        self.last_cmd_counter = Some(sealed.counter);
        self.reply_counter = 0;
        self.transition(DeviceState::Onboarded, "pake+wifi-key");
        self.history.push(DeviceEvent::KeysActivated { epoch });
        self.reply(frame, Reply::Onboarded)
    }

    fn drop_command(&mut self, reason: &str) -> Option<Frame> {
        self.history.push(DeviceEvent::CommandDropped { reason: reason.to_string() });
        None
    }

    fn reply(&mut self, frame: &Frame, reply: Reply) -> Option<Frame> {
        let keys = self.keys.as_ref()?;
        let env = Envelope::seal(&keys.k_mac, LABEL_D2G, &self.serial, keys.epoch, self.reply_counter, reply.encode());
        self.reply_counter += 1;
        Some(frame.reply(self.mac, FrameKind::Command, env.encode()))
    }

    fn on_command(&mut self, frame: &Frame) -> Option<Frame> {
        if self.state != DeviceState::Onboarded {
            return None;
        }
        let Ok(env) = Envelope::decode(&frame.body) else {
            return self.drop_command("malformed");
        };
        let keys = self.keys.as_ref()?;
        let staged_match = self.staged.as_ref().filter(|s| s.epoch == env.epoch);
        let key_ok = if keys.epoch == env.epoch {
            env.verify(&keys.k_mac, LABEL_G2D, &self.serial)
        } else if let Some(staged) = staged_match {
            env.verify(&staged.k_mac, LABEL_G2D, &self.serial)
        } else {
            false
        };
        if !key_ok {
            return self.drop_command("bad-mac");
        }
        if self.last_cmd_counter.is_some_and(|last| env.counter <= last) {
            return self.drop_command("replayed-counter");
        }
        self.last_cmd_counter = Some(env.counter);
        if keys.epoch != env.epoch {
            // A valid frame under the staged keys proves the Guardian has
            // switched; activate them.
            self.keys = self.staged.take();
            self.history.push(DeviceEvent::KeysActivated { epoch: env.epoch });
        }
        let Ok(cmd) = Command::decode(&env.body) else {
            return self.drop_command("unknown-command");
        };
        let keys = self.keys.clone()?;
        let reply = match cmd {
            Command::Status => Reply::Status {
                state: self.state,
                version: self.firmware.version.clone(),
                firmware: self.firmware.digest,
                epoch: keys.epoch,
            },
            Command::PrepareUpdate => {
                self.update_ready = true;
                Reply::UpdateReady
            }
            Command::InstallUpdate { package, tag } => match PackageBody::from_canonical(&package) {
                Ok(body) => match self.apply_update(&body, &tag) {
                    Ok(version) => Reply::Installed { version },
                    Err(e) => Reply::Rejected { reason: e.to_string() },
                },
                Err(e) => {
                    self.update_ready = false;
                    Reply::Rejected { reason: e.to_string() }
                }
            },
            Command::RotatePrepare { epoch, sealed_wifi } => {
                if epoch != keys.epoch + 1 {
                    Reply::Rejected { reason: format!("unexpected epoch {epoch}") }
                } else {
                    let nonce = Nonce::counter(Direction::GuardianToDevice, env.counter);
                    let opened = aead_open(&keys.k_enc, &nonce, &sealed_wifi, &wifi_aad(&self.serial, epoch));
                    match opened.ok().and_then(|pt| Key::from_slice(&pt)) {
                        Some(k_wifi) => match keys.rotated(&self.serial, k_wifi) {
                            Ok(next) => {
                                let prepared = Reply::RotatePrepared { epoch };
                                let env = Envelope::seal(
                                    &next.k_mac,
                                    LABEL_D2G,
                                    &self.serial,
                                    next.epoch,
                                    self.reply_counter,
                                    prepared.encode(),
                                );
                                self.reply_counter += 1;
                                self.staged = Some(next);
                                return Some(frame.reply(self.mac, FrameKind::Command, env.encode()));
                            }
                            Err(_) => Reply::Rejected { reason: "derivation failed".into() },
                        },
                        None => Reply::Rejected { reason: "sealed key does not open".into() },
                    }
                }
            }
            Command::RotateCommit { epoch } if epoch == keys.epoch => Reply::RotateCommitted { epoch },
            Command::RotateCommit { epoch } => Reply::Rejected { reason: format!("no staged keys for epoch {epoch}") },
            Command::Wipe => {
                let ack = self.reply(frame, Reply::Wiped);
                self.wipe();
                return ack;
            }
            Command::StoreSecret { label, sealed } => {
                if !self.device_class.supports_general_aead() {
                    Reply::Unsupported
                } else {
                    let nonce = Nonce::counter(Direction::GuardianToDevice, env.counter);
                    match aead_open(&keys.k_enc, &nonce, &sealed, &store_aad(&self.serial, &label)) {
                        Ok(pt) => {
                            self.record(&label, &pt);
                            Reply::Stored
                        }
                        Err(_) => Reply::Rejected { reason: "sealed data does not open".into() },
                    }
                }
            }
        };
        self.reply(frame, reply)
    }

    /// Check the state-machine invariants over the recorded history:
    /// every entry into `Onboarded` follows a completed PAKE in the same
    /// provisioning session, and decommissioned devices hold nothing.
    pub fn audit(&self) -> Result<(), String> {
        let mut pake_in_session = false;
        for ev in &self.history {
            match ev {
                DeviceEvent::PakeCompleted => pake_in_session = true,
                DeviceEvent::Transition { to: DeviceState::Provisioning, .. } => pake_in_session = false,
                DeviceEvent::Transition { to: DeviceState::Onboarded, .. } if !pake_in_session => {
                    return Err(format!("{}: reached onboarded without a PAKE in the same session", self.serial));
                }
                DeviceEvent::Transition { to: DeviceState::Onboarded, .. } => pake_in_session = false,
                _ => {}
            }
        }
        if self.state == DeviceState::Onboarded && self.keys.is_none() {
            return Err(format!("{}: onboarded without keys", self.serial));
        }
        if self.state == DeviceState::Decommissioned && (!self.sensitive_store.is_empty() || self.keys.is_some()) {
            return Err(format!("{}: decommissioned but still holds data or keys", self.serial));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{chain_init, chain_password, mac_compute};
    use crate::update::UpdateReason;
    use rand_chacha::ChaCha20Rng;
    use rand_core::SeedableRng;

    fn device() -> (DeviceSim, Digest) {
        let seed = Digest([7; 32]);
        let chain = chain_init(&seed, 200).unwrap().verifier_view();
        let fw = Firmware { version: "1.0.0".into(), digest: hash(b"factory") };
        let d = DeviceSim::manufacture(
            "SP-100-0001",
            MacAddr([2, 0, 0, 0, 0, 1]),
            "acme",
            "SP-100",
            DeviceClass::MidLevel,
            SecretBytes::from("sticker"),
            chain,
            fw,
        );
        (d, seed)
    }

    fn onboarded() -> DeviceSim {
        let (mut d, _) = device();
        d.hard_reset();
        let master = Key([1; 32]);
        d.keys = Some(KeySet::derive(master, Key([2; 32]), &d.serial, 0).unwrap());
        d.onboarded_flag = true;
        d.state = DeviceState::Onboarded;
        d
    }

    #[test]
    fn reset_counter_oracle() {
        let (mut d, _) = device();
        assert_eq!(d.read_reset_counter(), Err(NotProvisioning));
        for k in 1..=5 {
            d.hard_reset();
            assert_eq!(d.state(), DeviceState::Provisioning);
            assert_eq!(d.read_reset_counter(), Ok(k));
        }
        let mut d = onboarded();
        assert_eq!(d.read_reset_counter(), Err(NotProvisioning));
        d.hard_reset();
        assert!(d.keys().is_none());
        assert!(!d.onboarded_flag());
    }

    #[test]
    fn hard_reset_keeps_store_wipe_clears_it() {
        let mut d = onboarded();
        for i in 0..3 {
            d.record(&format!("reading-{i}"), b"21.5C");
        }
        d.hard_reset();
        assert_eq!(d.sensitive_store().len(), 3);
        d.wipe();
        assert!(d.sensitive_store().is_empty());
        assert!(d.keys().is_none());
        assert_eq!(d.state(), DeviceState::Decommissioned);
        d.wipe();
        assert_eq!(d.state(), DeviceState::Decommissioned);
        assert!(!d.record("late", b"x"));
        d.audit().unwrap();
    }

    #[test]
    fn next_password_exactly_once() {
        let (mut d, seed) = device();
        d.hard_reset();
        let w1 = chain_password(&seed, 200, 1).unwrap();
        assert!(!d.verify_next_password(&chain_password(&seed, 200, 2).unwrap()));
        assert!(d.verify_next_password(&w1));
        assert!(!d.verify_next_password(&w1));
        d.hard_reset();
        assert!(!d.verify_next_password(&w1));
        assert!(d.verify_next_password(&chain_password(&seed, 200, 2).unwrap()));
    }

    #[test]
    fn skipped_resets_burn_positions() {
        let (mut d, seed) = device();
        for _ in 0..3 {
            d.hard_reset();
        }
        assert!(!d.verify_next_password(&chain_password(&seed, 200, 1).unwrap()));
        assert!(d.verify_next_password(&chain_password(&seed, 200, 3).unwrap()));
        assert_eq!(d.chain().index, 3);
    }

    #[test]
    fn random_candidates_rejected() {
        let (mut d, _) = device();
        d.hard_reset();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let mut c = [0u8; 32];
            rng.fill_bytes(&mut c);
            assert!(!d.verify_next_password(&Digest(c)));
        }
        assert_eq!(d.chain().index, 0);
    }

    fn body(model: &str) -> PackageBody {
        PackageBody { model: model.into(), version: "2.0.0".into(), reason: UpdateReason::Security, payload: vec![5; 64] }
    }

    #[test]
    fn apply_update_gates() {
        let mut d = onboarded();
        let k_mac = d.keys().unwrap().k_mac;
        let good = body("SP-100");
        let tag = mac_compute(&k_mac, &good.canonical());
        assert_eq!(d.apply_update(&good, &tag), Err(UpdateRejection::NotReady));
        d.update_ready = true;
        let mut flipped = good.clone();
        flipped.payload[0] ^= 1;
        assert_eq!(d.apply_update(&flipped, &tag), Err(UpdateRejection::BadMac));
        d.update_ready = true;
        let other = body("LB-20");
        let other_tag = mac_compute(&k_mac, &other.canonical());
        assert_eq!(d.apply_update(&other, &other_tag), Err(UpdateRejection::WrongModel));
        assert_eq!(d.firmware().version, "1.0.0");
        d.update_ready = true;
        assert_eq!(d.apply_update(&good, &tag), Ok("2.0.0".into()));
        assert_eq!(d.firmware().digest, hash(&good.payload));
        assert_eq!(d.apply_update(&good, &tag), Err(UpdateRejection::NotReady));
    }

    #[test]
    fn factory_device_is_silent() {
        let (mut d, _) = device();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let hello = Frame::new(
            Link::DeviceAp(d.serial.clone()),
            MacAddr([2, 0, 0, 0, 0, 9]),
            MacAddr::BROADCAST,
            FrameKind::Status,
            StatusMsg::Hello.encode(),
        );
        assert!(d.handle_frame(&hello, &mut rng).is_empty());
        d.hard_reset();
        let out = d.handle_frame(&hello, &mut rng);
        let StatusMsg::Report(r) = StatusMsg::decode(&out[0].body).unwrap() else { panic!() };
        assert_eq!(r.reset_count, Some(1));
        assert!(!r.onboarded_flag);
    }

    #[test]
    fn forged_commands_dropped() {
        let mut d = onboarded();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let env = Envelope::seal(&Key([9; 32]), LABEL_G2D, &d.serial, 0, 1, Command::Wipe.encode());
        let f = Frame::new(Link::DomainAp, MacAddr([2, 0, 0, 0, 0, 9]), d.mac, FrameKind::Command, env.encode());
        assert!(d.handle_frame(&f, &mut rng).is_empty());
        assert_eq!(d.state(), DeviceState::Onboarded);
        assert!(matches!(d.history().last(), Some(DeviceEvent::CommandDropped { .. })));
    }
}
