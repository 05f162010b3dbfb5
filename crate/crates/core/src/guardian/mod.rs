//! The domain-side key-management authority: registry, on-boarding,
//! mediated updates, key rotation and decommissioning. Every protocol
//! exchange goes through the simulated [`Fabric`].

pub mod ap_table;
pub mod persist;
pub mod policy;
pub mod registry;

use std::fmt;

use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::catalog;
use crate::crypto::ephemeral::{handoff_key, EphemeralSecret};
use crate::crypto::pake::is_pake_blob;
use crate::crypto::{
    aead_seal, kdf, mac_compute, pake_start, pake_step, Digest, Direction, Key, KeySet, Nonce, PublicKey, Role,
    StepOutcome,
};
use crate::net::{Fabric, Frame, FrameKind, Link, DEFAULT_TIMEOUT};
use crate::protocol::{
    pake_ids, store_aad, transfer_aad, wifi_aad, Command, Envelope, HandoffMsg, Purpose, Reply, Report, Sealed,
    StatusMsg, LABEL_D2G, LABEL_G2D,
};
use crate::types::MacAddr;
use crate::update::UpdateFeed;
use crate::vendor::{Refusal, Vendor};

use ap_table::ApPasswordTable;
use policy::{update_order, verify_update, Decision, TrustAnchors, UpdatePolicy, VerifyError};
use registry::{parse_qr, AvailableUpdate, DeviceRecord, Lifecycle, Registry, RosterError, VersionEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
    Alarm,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Alarm => "alarm",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub tick: u64,
    pub severity: Severity,
    pub device_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GuardianError {
    #[error("device {0} is not in the registry")]
    NotInRegistry(String),
    #[error(transparent)]
    Roster(#[from] RosterError),
    #[error("device {id} is {actual}, operation needs {needed}")]
    WrongLifecycle { id: String, actual: Lifecycle, needed: Lifecycle },
    #[error("no on-boarding authenticator stored for {0}")]
    MissingAuthenticator(String),
    #[error("device {0} did not answer")]
    Unreachable(String),
    #[error("device answered from {seen}, registry has {expected}")]
    MacMismatch { expected: MacAddr, seen: MacAddr },
    #[error("device {0} reports a prior on-boarding")]
    PriorBoarding(String),
    #[error("PAKE aborted: {0}")]
    PakeAborted(String),
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
    #[error("device rejected {command}: {reason}")]
    DeviceRejected { command: &'static str, reason: String },
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("policy denied: {0}")]
    PolicyDenied(String),
    #[error("update feed: {0}")]
    Feed(String),
    #[error("vendor refused: {0}")]
    VendorRefused(Refusal),
    #[error("transfer password not accepted by device")]
    HandoffRejected,
    #[error("package is for model {package}, device is {device}")]
    ModelMismatch { package: String, device: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecommissionMode {
    Recycle,
    Transfer,
}

impl std::str::FromStr for DecommissionMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "recycle" => Ok(DecommissionMode::Recycle),
            "transfer" => Ok(DecommissionMode::Transfer),
            _ => Err(format!("unknown mode {s:?} (recycle|transfer)")),
        }
    }
}

/// Handed to the next owner with the device. Contains no secret.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferNote {
    pub serial: String,
    pub mac: MacAddr,
    pub vendor_id: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecommissionReport {
    pub acknowledged: bool,
    pub transfer_note: Option<TransferNote>,
}

pub struct Guardian {
    pub name: String,
    pub mac: MacAddr,
    pub registry: Registry,
    pub ap_table: ApPasswordTable,
    pub anchors: TrustAnchors,
    pub policy: UpdatePolicy,
    rng: ChaCha20Rng,
    log: Vec<LogEntry>,
}

type Result<T> = std::result::Result<T, GuardianError>;

impl Guardian {
    pub fn new(name: &str, mac: MacAddr, seed: u64) -> Self {
        let k = kdf(&seed.to_be_bytes(), "guardian-rng", name.as_bytes()).expect("non-empty");
        Guardian {
            name: name.to_string(),
            mac,
            registry: Registry::default(),
            ap_table: ApPasswordTable::default(),
            anchors: TrustAnchors::default(),
            policy: UpdatePolicy::default(),
            rng: ChaCha20Rng::from_seed(k.0),
            log: Vec::new(),
        }
    }

    pub(crate) fn from_parts(
        name: String,
        mac: MacAddr,
        registry: Registry,
        ap_table: ApPasswordTable,
        anchors: TrustAnchors,
        policy: UpdatePolicy,
        rng: ChaCha20Rng,
        log: Vec<LogEntry>,
    ) -> Self {
        Guardian { name, mac, registry, ap_table, anchors, policy, rng, log }
    }

    pub(crate) fn rng_state(&self) -> &ChaCha20Rng {
        &self.rng
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn alarms(&self) -> impl Iterator<Item = &LogEntry> {
        self.log.iter().filter(|e| e.severity == Severity::Alarm)
    }

    /// Make this Guardian reachable on the fabric.
    pub fn attach(&self, fabric: &mut Fabric) {
        fabric.attach_endpoint(self.mac, &self.name);
    }

    fn emit(&mut self, fabric: &mut Fabric, severity: Severity, device_id: Option<&str>, message: String) {
        let kind = match severity {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Alarm => "alarm",
        };
        fabric.note(&self.name, kind, &message);
        self.log.push(LogEntry { tick: fabric.now(), severity, device_id: device_id.map(str::to_string), message });
    }

    fn warn_local(&mut self, device_id: Option<&str>, message: String) {
        self.log.push(LogEntry { tick: 0, severity: Severity::Warning, device_id: device_id.map(str::to_string), message });
    }

    fn record(&self, id: &str) -> Result<&DeviceRecord> {
        self.registry.get(id).ok_or_else(|| GuardianError::NotInRegistry(id.to_string()))
    }

    fn record_mut(&mut self, id: &str) -> Result<&mut DeviceRecord> {
        self.registry.get_mut(id).ok_or_else(|| GuardianError::NotInRegistry(id.to_string()))
    }

    fn require(&self, id: &str, needed: Lifecycle) -> Result<&DeviceRecord> {
        let rec = self.record(id)?;
        if rec.lifecycle != needed {
            return Err(GuardianError::WrongLifecycle { id: id.to_string(), actual: rec.lifecycle, needed });
        }
        Ok(rec)
    }

    // ---- rostering and trust ------------------------------------------------

    /// Add a device from its scanned sticker. Vendor and model fall back to
    /// the model table when the sticker carries only serial and password.
    pub fn roster_scan(&mut self, qr: &str) -> Result<&DeviceRecord> {
        let q = parse_qr(qr)?;
        let inferred = catalog::infer_from_serial(&q.serial);
        let model = q.model.or_else(|| inferred.map(|m| m.model.to_string())).unwrap_or_else(|| "unknown".into());
        let vendor = q
            .vendor_id
            .or_else(|| catalog::lookup(&model).map(|m| m.vendor_id.to_string()))
            .unwrap_or_else(|| "unknown".into());
        let rec = DeviceRecord::new(&q.serial, &vendor, &model, Some(q.password));
        self.registry.insert(rec)?;
        self.anchors.bind_model(&model, &vendor);
        self.record(&q.serial)
    }

    /// Add a second-hand device from the previous owner's note. It has no
    /// sticker authenticator; on-boarding goes through the vendor.
    pub fn roster_transfer(&mut self, note: &TransferNote) -> Result<&DeviceRecord> {
        let mut rec = DeviceRecord::new(&note.serial, &note.vendor_id, &note.model, None);
        rec.mac = Some(note.mac);
        self.registry.insert(rec)?;
        self.anchors.bind_model(&note.model, &note.vendor_id);
        self.record(&note.serial)
    }

    pub fn trust_vendor(&mut self, vendor_id: &str, key: PublicKey) {
        self.anchors.add_vendor(vendor_id, key);
    }

    // ---- frame helpers ------------------------------------------------------

    /// Wait for the next frame satisfying `want`; anything else that arrives
    /// meanwhile is discarded.
    fn await_frame(&mut self, fabric: &mut Fabric, want: impl Fn(&Frame) -> bool) -> Option<Frame> {
        let deadline = fabric.now() + DEFAULT_TIMEOUT;
        while fabric.now() <= deadline {
            let left = deadline - fabric.now();
            let f = fabric.recv(self.mac, left)?;
            if want(&f) {
                return Some(f);
            }
        }
        None
    }

    fn hello(&mut self, fabric: &mut Fabric, serial: &str) -> Result<(Report, MacAddr)> {
        fabric.flush_inbox(self.mac);
        let link = Link::DeviceAp(serial.to_string());
        fabric.send(Frame::new(link.clone(), self.mac, MacAddr::BROADCAST, FrameKind::Status, StatusMsg::Hello.encode()));
        let serial_owned = serial.to_string();
        let f = self
            .await_frame(fabric, |f| {
                f.link == link
                    && f.kind == FrameKind::Status
                    && matches!(StatusMsg::decode(&f.body), Ok(StatusMsg::Report(ref r)) if r.serial == serial_owned)
            })
            .ok_or_else(|| GuardianError::Unreachable(serial.to_string()))?;
        match StatusMsg::decode(&f.body) {
            Ok(StatusMsg::Report(r)) => Ok((r, f.src)),
            _ => unreachable!("filtered above"),
        }
    }

    /// First contact: ask the device for its report, learn or check its MAC,
    /// and raise the prior-boarding alarm if its flag is already set.
    fn first_contact(&mut self, fabric: &mut Fabric, id: &str) -> Result<(Report, MacAddr)> {
        let (report, mac) = self.hello(fabric, id)?;
        if let Some(expected) = self.record(id)?.mac {
            if expected != mac {
                self.emit(fabric, Severity::Warning, Some(id), format!("mac-mismatch {id} {mac}"));
                return Err(GuardianError::MacMismatch { expected, seen: mac });
            }
        }
        if report.onboarded_flag {
            self.record_mut(id)?.flags.prior_boarding_alarm = true;
            self.emit(fabric, Severity::Alarm, Some(id), format!("prior-boarding {id}"));
            return Err(GuardianError::PriorBoarding(id.to_string()));
        }
        Ok((report, mac))
    }

    /// Run the PAKE as initiator over the device's provisioning link.
    fn run_pake(
        &mut self,
        fabric: &mut Fabric,
        serial: &str,
        device_mac: MacAddr,
        password: &[u8],
        binding: Option<&Digest>,
    ) -> Result<Key> {
        let link = Link::DeviceAp(serial.to_string());
        let (init_id, resp_id) = pake_ids(&self.mac, serial, binding);
        let (mut session, first) = pake_start(Role::Initiator, password, &init_id, &resp_id, &mut self.rng)
            .map_err(|e| GuardianError::PakeAborted(e.to_string()))?;
        let send = |fabric: &mut Fabric, me: MacAddr, body: Vec<u8>| {
            fabric.send(Frame::new(link.clone(), me, device_mac, FrameKind::PakeBlob, body));
        };
        send(fabric, self.mac, first.expect("initiator speaks first"));
        loop {
            let l = link.clone();
            let incoming = self.await_frame(fabric, |f| {
                f.link == l && f.kind == FrameKind::PakeBlob && f.src == device_mac && is_pake_blob(&f.body)
            });
            let Some(frame) = incoming else {
                return Err(GuardianError::Timeout("pake"));
            };
            match pake_step(&mut session, &frame.body, &mut self.rng) {
                StepOutcome::Send(b) => send(fabric, self.mac, b),
                StepOutcome::SendAndDone(b) => {
                    send(fabric, self.mac, b);
                    break;
                }
                StepOutcome::Done => break,
                StepOutcome::Aborted { reason, notify } => {
                    if let Some(b) = notify {
                        send(fabric, self.mac, b);
                    }
                    return Err(GuardianError::PakeAborted(format!("{reason:?}")));
                }
            }
        }
        session.session_key().copied().ok_or_else(|| GuardianError::PakeAborted("no session key".into()))
    }

    /// After the PAKE: choose K_WiFi, send it sealed, wait for the device's
    /// authenticated acknowledgement, then admit it to the domain AP.
    fn finish_onboarding(&mut self, fabric: &mut Fabric, id: &str, device_mac: MacAddr, master: Key) -> Result<()> {
        let k_wifi = Key::random(&mut self.rng);
        let keys = KeySet::derive(master, k_wifi, id, 0).expect("32-octet master");
        let ct = aead_seal(&keys.k_enc, &Nonce::counter(Direction::GuardianToDevice, 0), k_wifi.as_bytes(), &wifi_aad(id, 0));
        let sealed = Sealed { purpose: Purpose::WifiKey, counter: 0, ciphertext: ct };
        let link = Link::DeviceAp(id.to_string());
        fabric.send(Frame::new(link.clone(), self.mac, device_mac, FrameKind::SealedPayload, sealed.encode()));
        let (k_mac, serial) = (keys.k_mac, id.to_string());
        let ack = self.await_frame(fabric, |f| {
            f.src == device_mac
                && f.kind == FrameKind::Command
                && Envelope::decode(&f.body).is_ok_and(|e| e.epoch == 0 && e.verify(&k_mac, LABEL_D2G, &serial))
        });
        let Some(ack) = ack else {
            self.emit(fabric, Severity::Warning, Some(id), format!("onboard-incomplete {id}"));
            return Err(GuardianError::Timeout("wifi-key acknowledgement"));
        };
        let env = Envelope::decode(&ack.body).expect("checked");
        if Reply::decode(&env.body) != Ok(Reply::Onboarded) {
            return Err(GuardianError::DeviceRejected { command: "wifi-key", reason: "unexpected reply".into() });
        }
        let rec = self.record_mut(id)?;
        rec.mac = Some(device_mac);
        rec.keyset = Some(keys);
        rec.lifecycle = Lifecycle::Onboarded;
        rec.next_command = 1;
        rec.last_reply = Some(env.counter);
        rec.flags.prior_boarding_alarm = false;
        self.ap_table.install(device_mac, id, &k_wifi, 0);
        self.emit(fabric, Severity::Info, Some(id), format!("onboarded {id} mac={device_mac}"));
        fabric.connect_device(id, &self.ap_table);
        if let Ok(Reply::Status { version, .. }) = self.send_command(fabric, id, Command::Status) {
            let now = fabric.now();
            let rec = self.record_mut(id)?;
            rec.installed_version = Some(version.clone());
            rec.version_history.push(VersionEntry { version, timestamp: now, update_id: None });
        }
        Ok(())
    }

    // ---- on-boarding --------------------------------------------------------

    /// On-board one rostered device with the authenticator from its sticker.
    pub fn onboard(&mut self, fabric: &mut Fabric, id: &str) -> Result<()> {
        let rec = self.require(id, Lifecycle::Rostered)?;
        let pw = rec.d_pw.clone().ok_or_else(|| GuardianError::MissingAuthenticator(id.to_string()))?;
        let (_, mac) = self.first_contact(fabric, id)?;
        let master = match self.run_pake(fabric, id, mac, pw.as_bytes(), None) {
            Ok(k) => k,
            Err(e) => {
                self.emit(fabric, Severity::Warning, Some(id), format!("onboard-failed {id}: {e}"));
                return Err(e);
            }
        };
        self.finish_onboarding(fabric, id, mac, master)
    }

    /// On-board every rostered device, in registry order. Devices that are
    /// not in the registry are never contacted.
    pub fn onboard_all(&mut self, fabric: &mut Fabric) -> Vec<(String, Result<()>)> {
        let ids: Vec<String> =
            self.registry.records().filter(|r| r.lifecycle == Lifecycle::Rostered).map(|r| r.device_id.clone()).collect();
        ids.into_iter()
            .map(|id| {
                let r = self.onboard(fabric, &id);
                (id, r)
            })
            .collect()
    }

    /// On-board a transferred device: obtain the next chain password from
    /// the vendor, hand it to the device over an ephemeral key exchange,
    /// then run the PAKE with it, bound to that exchange.
    pub fn onboard_transfer(&mut self, fabric: &mut Fabric, vendor: &mut Vendor, id: &str, owner: &str) -> Result<()> {
        self.require(id, Lifecycle::Rostered)?;
        let (report, mac) = self.first_contact(fabric, id)?;
        let c = report.reset_count.ok_or_else(|| GuardianError::Unreachable(id.to_string()))?;
        let w = match vendor.next_password(id, &mac, c, owner, fabric.now()) {
            Ok(w) => w,
            Err(r) => {
                self.emit(fabric, Severity::Warning, Some(id), format!("vendor-refused {id} c={c}: {r}"));
                return Err(GuardianError::VendorRefused(r));
            }
        };
        fabric.note(&self.name, "vendor-request", &format!("{id} c={c} granted"));
        let binding = self.deliver_transfer_password(fabric, id, mac, c, &w)?;
        let master = match self.run_pake(fabric, id, mac, w.as_bytes(), Some(&binding)) {
            Ok(k) => k,
            Err(e) => {
                self.emit(fabric, Severity::Warning, Some(id), format!("onboard-failed {id}: {e}"));
                return Err(e);
            }
        };
        self.finish_onboarding(fabric, id, mac, master)
    }

    /// Hand a chain password to a device in provisioning without any
    /// registry bookkeeping. Used to probe one-time-ness of `w_c`.
    pub fn present_transfer_password(&mut self, fabric: &mut Fabric, serial: &str, w: &Digest) -> Result<()> {
        let (report, mac) = self.hello(fabric, serial)?;
        let c = report.reset_count.ok_or_else(|| GuardianError::Unreachable(serial.to_string()))?;
        self.deliver_transfer_password(fabric, serial, mac, c, w).map(|_| ())
    }

    /// Returns the transcript hash of the ephemeral exchange.
    fn deliver_transfer_password(
        &mut self,
        fabric: &mut Fabric,
        id: &str,
        mac: MacAddr,
        c: u32,
        w: &Digest,
    ) -> Result<Digest> {
        let link = Link::DeviceAp(id.to_string());
        let eph = EphemeralSecret::generate(&mut self.rng);
        let offer = eph.public();
        fabric.send(Frame::new(link.clone(), self.mac, mac, FrameKind::PakeBlob, HandoffMsg::Offer(offer).encode()));
        let l = link.clone();
        let answer = self
            .await_frame(fabric, |f| {
                f.link == l && f.src == mac && matches!(HandoffMsg::decode(&f.body), Ok(HandoffMsg::Answer(_)))
            })
            .ok_or(GuardianError::Timeout("handoff answer"))?;
        let Ok(HandoffMsg::Answer(answer)) = HandoffMsg::decode(&answer.body) else { unreachable!("filtered above") };
        let shared = eph.agree(&answer).ok_or(GuardianError::HandoffRejected)?;
        let (transcript, key) = handoff_key(&shared, &offer, &answer, id);
        let ct = aead_seal(&key, &Nonce::counter(Direction::Handoff, 0), w.as_bytes(), &transfer_aad(id, c));
        let sealed = Sealed { purpose: Purpose::TransferPassword, counter: 0, ciphertext: ct };
        fabric.send(Frame::new(link.clone(), self.mac, mac, FrameKind::SealedPayload, sealed.encode()));
        let result = self
            .await_frame(fabric, |f| {
                f.link == link && f.src == mac && matches!(StatusMsg::decode(&f.body), Ok(StatusMsg::HandoffResult { .. }))
            })
            .ok_or(GuardianError::Timeout("handoff result"))?;
        match StatusMsg::decode(&result.body) {
            Ok(StatusMsg::HandoffResult { accepted: true }) => Ok(transcript),
            _ => Err(GuardianError::HandoffRejected),
        }
    }

    // ---- authenticated commands --------------------------------------------

    /// Send one command under `send_keys` and wait for a fresh reply that
    /// verifies under `accept_keys`. The command counter is consumed even if
    /// no reply arrives.
    fn exchange(
        &mut self,
        fabric: &mut Fabric,
        id: &str,
        send_keys: &KeySet,
        accept_keys: &KeySet,
        build: impl FnOnce(u64) -> Command,
    ) -> Result<Reply> {
        let rec = self.record_mut(id)?;
        let mac = rec.mac.ok_or_else(|| GuardianError::Unreachable(id.to_string()))?;
        let counter = rec.next_command;
        rec.next_command += 1;
        let last = rec.last_reply;
        let cmd = build(counter);
        let name = cmd.name();
        let env = Envelope::seal(&send_keys.k_mac, LABEL_G2D, id, send_keys.epoch, counter, cmd.encode());
        fabric.flush_inbox(self.mac);
        fabric.send(Frame::new(Link::DomainAp, self.mac, mac, FrameKind::Command, env.encode()));
        let (k_mac, epoch, serial) = (accept_keys.k_mac, accept_keys.epoch, id.to_string());
        let reply = self.await_frame(fabric, |f| {
            f.src == mac
                && f.kind == FrameKind::Command
                && Envelope::decode(&f.body).is_ok_and(|e| {
                    e.epoch == epoch && last.is_none_or(|l| e.counter > l) && e.verify(&k_mac, LABEL_D2G, &serial)
                })
        });
        let Some(reply) = reply else {
            return Err(GuardianError::Timeout(name));
        };
        let env = Envelope::decode(&reply.body).expect("checked");
        self.record_mut(id)?.last_reply = Some(env.counter);
        match Reply::decode(&env.body) {
            Ok(Reply::Rejected { reason }) => Err(GuardianError::DeviceRejected { command: name, reason }),
            Ok(r) => Ok(r),
            Err(e) => Err(GuardianError::DeviceRejected { command: name, reason: e.to_string() }),
        }
    }

    fn active_keys(&self, id: &str) -> Result<KeySet> {
        let rec = self.require(id, Lifecycle::Onboarded)?;
        rec.keyset.clone().ok_or_else(|| GuardianError::MissingAuthenticator(id.to_string()))
    }

    /// Send a command under the device's active keys.
    pub fn send_command(&mut self, fabric: &mut Fabric, id: &str, cmd: Command) -> Result<Reply> {
        let keys = self.active_keys(id)?;
        self.exchange(fabric, id, &keys, &keys, |_| cmd)
    }

    /// Store user data on the device, sealed under the working key.
    pub fn store_secret(&mut self, fabric: &mut Fabric, id: &str, label: &str, value: &[u8]) -> Result<Reply> {
        let keys = self.active_keys(id)?;
        let (serial, label) = (id.to_string(), label.to_string());
        self.exchange(fabric, id, &keys, &keys, |counter| {
            let nonce = Nonce::counter(Direction::GuardianToDevice, counter);
            let sealed = aead_seal(&keys.k_enc, &nonce, value, &store_aad(&serial, &label));
            Command::StoreSecret { label, sealed }
        })
    }

    // ---- updates ------------------------------------------------------------

    /// Refresh every live record's list of available updates from the feed.
    /// An unreadable feed changes nothing.
    pub fn discover_updates(&mut self, feed: &UpdateFeed) -> Result<usize> {
        let entries = match feed.entries() {
            Ok(e) => e,
            Err(e) => {
                self.warn_local(None, format!("update feed unreadable: {e}"));
                return Err(GuardianError::Feed(e.to_string()));
            }
        };
        let mut total = 0;
        for rec in self.registry.records_mut().filter(|r| r.lifecycle != Lifecycle::Decommissioned) {
            let mut list: Vec<AvailableUpdate> = entries
                .iter()
                .filter(|e| e.model == rec.model)
                .map(|e| AvailableUpdate { update_id: e.update_id.clone(), version: e.version.clone(), reason: e.reason })
                .collect();
            list.sort_by(update_order);
            total += list.len();
            rec.available_updates = list;
        }
        Ok(total)
    }

    pub fn approve(&mut self, device_id: &str, update_id: &str) {
        self.policy.approve(device_id, update_id);
    }

    /// Verify, decide, then forward the package under the device's working
    /// MAC key. Nothing is sent unless both verification and policy pass.
    pub fn push_update(&mut self, fabric: &mut Fabric, id: &str, update_id: &str, feed: &UpdateFeed) -> Result<String> {
        let rec = self.require(id, Lifecycle::Onboarded)?;
        let (model, installed) = (rec.model.clone(), rec.installed_version.clone());
        let pkg = feed.load(update_id).map_err(|e| GuardianError::Feed(e.to_string()))?;
        if pkg.model != model {
            return Err(GuardianError::ModelMismatch { package: pkg.model, device: model });
        }
        if let Err(e) = verify_update(&pkg, &self.anchors) {
            self.emit(fabric, Severity::Warning, Some(id), format!("update-rejected {update_id}: {e}"));
            return Err(e.into());
        }
        match self.policy.decide(id, installed.as_deref(), update_id, &pkg.version, pkg.reason) {
            Decision::Approve(why) => {
                self.emit(fabric, Severity::Info, Some(id), format!("update-approved {update_id} ({why})"));
            }
            Decision::Deny(why) => {
                self.emit(fabric, Severity::Warning, Some(id), format!("update-denied {update_id}: {why}"));
                return Err(GuardianError::PolicyDenied(why));
            }
        }
        match self.send_command(fabric, id, Command::PrepareUpdate)? {
            Reply::UpdateReady => {}
            other => {
                return Err(GuardianError::DeviceRejected { command: "prepare-update", reason: format!("{other:?}") })
            }
        }
        let keys = self.active_keys(id)?;
        let package = pkg.body().canonical();
        let tag = mac_compute(&keys.k_mac, &package);
        let version = match self.send_command(fabric, id, Command::InstallUpdate { package, tag })? {
            Reply::Installed { version } => version,
            other => {
                return Err(GuardianError::DeviceRejected { command: "install-update", reason: format!("{other:?}") })
            }
        };
        let now = fabric.now();
        let rec = self.record_mut(id)?;
        rec.installed_version = Some(version.clone());
        rec.version_history.push(VersionEntry { version: version.clone(), timestamp: now, update_id: Some(update_id.into()) });
        rec.available_updates.retain(|u| u.update_id != update_id);
        self.emit(fabric, Severity::Info, Some(id), format!("update-installed {update_id} {version}"));
        Ok(version)
    }

    // ---- rotation -----------------------------------------------------------

    /// Move the device to the next key epoch. Two phases: the new K_WiFi is
    /// delivered under the old keys and acknowledged under the new ones
    /// (device stages), then a commit under the new keys switches both
    /// sides. If the first phase fails both stay on the old epoch; if the
    /// commit is lost the next call resumes it.
    pub fn rotate_keys(&mut self, fabric: &mut Fabric, id: &str) -> Result<u64> {
        let current = self.active_keys(id)?;
        let next = match self.record(id)?.pending_rotation.clone() {
            Some(next) => next,
            None => {
                let k_wifi = Key::random(&mut self.rng);
                let next = current.rotated(id, k_wifi).expect("32-octet master");
                let serial = id.to_string();
                let prepared = self.exchange(fabric, id, &current, &next, |counter| {
                    let nonce = Nonce::counter(Direction::GuardianToDevice, counter);
                    let sealed_wifi = aead_seal(&current.k_enc, &nonce, k_wifi.as_bytes(), &wifi_aad(&serial, next.epoch));
                    Command::RotatePrepare { epoch: next.epoch, sealed_wifi }
                });
                match prepared {
                    Ok(Reply::RotatePrepared { epoch }) if epoch == next.epoch => {}
                    Ok(other) => {
                        return Err(GuardianError::DeviceRejected { command: "rotate-prepare", reason: format!("{other:?}") })
                    }
                    Err(e) => {
                        self.record_mut(id)?.flags.rotation_pending = true;
                        self.emit(fabric, Severity::Warning, Some(id), format!("rotation-pending {id}: {e}"));
                        return Err(e);
                    }
                }
                self.record_mut(id)?.pending_rotation = Some(next.clone());
                next
            }
        };
        let committed = self.exchange(fabric, id, &next, &next, |_| Command::RotateCommit { epoch: next.epoch });
        match committed {
            Ok(Reply::RotateCommitted { epoch }) if epoch == next.epoch => {}
            Ok(other) => {
                return Err(GuardianError::DeviceRejected { command: "rotate-commit", reason: format!("{other:?}") })
            }
            Err(e) => {
                self.record_mut(id)?.flags.rotation_pending = true;
                self.emit(fabric, Severity::Warning, Some(id), format!("rotation-pending {id}: {e}"));
                return Err(e);
            }
        }
        let rec = self.record_mut(id)?;
        let mac = rec.mac.expect("onboarded");
        rec.keyset = Some(next.clone());
        rec.pending_rotation = None;
        rec.flags.rotation_pending = false;
        self.ap_table.install(mac, id, &next.k_wifi, next.epoch);
        fabric.disassociate(&mac, &self.name.clone());
        fabric.connect_device(id, &self.ap_table);
        self.emit(fabric, Severity::Info, Some(id), format!("rotated {id} epoch={}", next.epoch));
        Ok(next.epoch)
    }

    // ---- decommissioning ----------------------------------------------------

    /// Wipe the device, forget every secret held for it and revoke its AP
    /// entry. Local deletion happens even if the wipe is not acknowledged.
    pub fn decommission(&mut self, fabric: &mut Fabric, id: &str, mode: DecommissionMode) -> Result<DecommissionReport> {
        self.require(id, Lifecycle::Onboarded)?;
        let acknowledged = match self.send_command(fabric, id, Command::Wipe) {
            Ok(Reply::Wiped) => true,
            Ok(_) | Err(_) => false,
        };
        let name = self.name.clone();
        let rec = self.record_mut(id)?;
        rec.scrub_secrets();
        rec.lifecycle = Lifecycle::Decommissioned;
        rec.available_updates.clear();
        rec.flags.wipe_unconfirmed = !acknowledged;
        rec.flags.rotation_pending = false;
        let mac = rec.mac.expect("onboarded");
        let note = TransferNote { serial: id.to_string(), mac, vendor_id: rec.vendor_id.clone(), model: rec.model.clone() };
        self.ap_table.remove(&mac);
        fabric.disassociate(&mac, &name);
        let sev = if acknowledged { Severity::Info } else { Severity::Warning };
        let msg = if acknowledged { format!("decommissioned {id}") } else { format!("decommissioned {id} (wipe unconfirmed)") };
        self.emit(fabric, sev, Some(id), msg);
        Ok(DecommissionReport { acknowledged, transfer_note: (mode == DecommissionMode::Transfer).then_some(note) })
    }
}

#[cfg(test)]
mod tests;
