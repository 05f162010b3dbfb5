//! Executes a parsed scenario against a fresh simulated world and checks its
//! expectations in place.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use guardian_core::catalog;
use guardian_core::crypto::{chain_init, chain_password, hash, kdf, mac_compute, Digest, KeySet, SecretBytes, Tag};
use guardian_core::guardian::policy::VerifyError;
use guardian_core::guardian::registry::Lifecycle;
use guardian_core::guardian::{Guardian, GuardianError, TransferNote};
use guardian_core::net::{AdversaryScript, Fabric, Frame, FrameKind, Link, PakeMitm};
use guardian_core::protocol::{Command, Envelope, Reply, LABEL_G2D};
use guardian_core::types::{DeviceClass, MacAddr};
use guardian_core::update::UpdateFeed;
use guardian_core::vendor::{Vendor, CHAIN_LENGTH};

use crate::scenario::{Directive, Expectation, Scenario, DEFAULT_GUARDIAN};

/// Result of the most recent action, checked by `expect ok|error KIND`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub error: Option<String>,
    pub detail: String,
}

impl Outcome {
    fn ok(detail: impl Into<String>) -> Self {
        Outcome { error: None, detail: detail.into() }
    }

    fn err(kind: &str, detail: impl Into<String>) -> Self {
        Outcome { error: Some(kind.to_string()), detail: detail.into() }
    }

    fn render(&self) -> String {
        match &self.error {
            None if self.detail.is_empty() => "ok".into(),
            None => format!("ok: {}", self.detail),
            Some(k) => format!("error {k}: {}", self.detail),
        }
    }
}

pub fn error_kind(e: &GuardianError) -> &'static str {
    match e {
        GuardianError::NotInRegistry(_) => "not-in-registry",
        GuardianError::Roster(_) => "roster",
        GuardianError::WrongLifecycle { .. } => "wrong-lifecycle",
        GuardianError::MissingAuthenticator(_) => "missing-authenticator",
        GuardianError::Unreachable(_) => "unreachable",
        GuardianError::MacMismatch { .. } => "mac-mismatch",
        GuardianError::PriorBoarding(_) => "prior-boarding",
        GuardianError::PakeAborted(_) => "pake-aborted",
        GuardianError::Timeout(_) => "timeout",
        GuardianError::DeviceRejected { .. } => "device-rejected",
        GuardianError::Verify(VerifyError::UnknownAnchor(_)) => "unknown-anchor",
        GuardianError::Verify(VerifyError::BadSignature) => "bad-signature",
        GuardianError::PolicyDenied(_) => "policy-denied",
        GuardianError::Feed(_) => "feed",
        GuardianError::VendorRefused(_) => "vendor-refused",
        GuardianError::HandoffRejected => "handoff-rejected",
        GuardianError::ModelMismatch { .. } => "model-mismatch",
    }
}

fn from_result<T>(r: Result<T, GuardianError>, ok: impl FnOnce(T) -> String) -> Outcome {
    match r {
        Ok(v) => Outcome::ok(ok(v)),
        Err(e) => Outcome::err(error_kind(&e), e.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectResult {
    pub line: usize,
    pub text: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub name: String,
    pub seed: u64,
    pub steps: Vec<(usize, String, String)>,
    pub results: Vec<ExpectResult>,
    pub trace: String,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ExpectResult> {
        self.results.iter().filter(|r| !r.pass)
    }

    pub fn render(&self) -> String {
        let mut out = format!("scenario {} seed={}\n", self.name, self.seed);
        for (line, text, outcome) in &self.steps {
            let _ = writeln!(out, "  step L{line}: {text} -> {outcome}");
        }
        for r in &self.results {
            let verdict = if r.pass { "PASS" } else { "FAIL" };
            let _ = write!(out, "{verdict} L{}: {}", r.line, r.text);
            if !r.pass {
                let _ = write!(out, " ({})", r.detail);
            }
            out.push('\n');
        }
        let n = self.results.iter().filter(|r| r.pass).count();
        let verdict = if self.passed() { "pass" } else { "fail" };
        let _ = writeln!(out, "result: {verdict} ({n}/{} expectations)", self.results.len());
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("line {line}: {message}")]
    Internal { line: usize, message: String },
    #[error("feed directory: {0}")]
    Io(#[from] std::io::Error),
}

pub struct World {
    pub seed: u64,
    pub fabric: Fabric,
    pub vendors: BTreeMap<String, Vendor>,
    pub guardians: BTreeMap<String, Guardian>,
    pub feed: UpdateFeed,
    qrs: BTreeMap<String, String>,
    /// Serials in provisioning order.
    order: Vec<String>,
    device_vendor: BTreeMap<String, String>,
    notes: BTreeMap<String, TransferNote>,
    /// Keys held before the last rotation or decommission, per device.
    previous: BTreeMap<String, KeySet>,
    /// Every key set a Guardian has established, for transcript scans.
    established: Vec<KeySet>,
    last: Option<Outcome>,
}

pub fn guardian_mac(name: &str) -> MacAddr {
    let h = hash(format!("guardian-mac:{name}").as_bytes());
    MacAddr([0x0a, h.0[0], h.0[1], h.0[2], h.0[3], h.0[4]])
}

const OUTSIDER: MacAddr = MacAddr([0x0e, 0xee, 0, 0, 0, 0x01]);

fn payload(seed: u64, id: &str, size: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(size);
    let mut block = hash(format!("payload:{seed}:{id}").as_bytes());
    while out.len() < size {
        out.extend_from_slice(&block.0);
        block = hash(&block.0);
    }
    out.truncate(size);
    out
}

impl World {
    pub fn new(seed: u64, feed_dir: &Path) -> Self {
        World {
            seed,
            fabric: Fabric::new(seed),
            vendors: BTreeMap::new(),
            guardians: BTreeMap::new(),
            feed: UpdateFeed::new(feed_dir),
            qrs: BTreeMap::new(),
            order: Vec::new(),
            device_vendor: BTreeMap::new(),
            notes: BTreeMap::new(),
            previous: BTreeMap::new(),
            established: Vec::new(),
            last: None,
        }
    }

    fn ensure_vendor(&mut self, id: &str) {
        if !self.vendors.contains_key(id) {
            self.vendors.insert(id.to_string(), Vendor::from_seed(id, self.seed));
        }
    }

    fn ensure_guardian(&mut self, name: &str) {
        if !self.guardians.contains_key(name) {
            let g = Guardian::new(name, guardian_mac(name), self.seed);
            g.attach(&mut self.fabric);
            self.guardians.insert(name.to_string(), g);
        }
    }

    fn note_keys(&mut self, guardian: &str, serial: &str) {
        if let Some(ks) = self.guardians.get(guardian).and_then(|g| g.registry.get(serial)).and_then(|r| r.keyset.clone()) {
            if !self.established.contains(&ks) {
                self.established.push(ks);
            }
        }
    }

    fn snapshot_keys(&mut self, guardian: &str, serial: &str) {
        if let Some(ks) = self.guardians.get(guardian).and_then(|g| g.registry.get(serial)).and_then(|r| r.keyset.clone()) {
            self.previous.insert(serial.to_string(), ks);
        }
    }

    fn mac_of(&self, serial: &str) -> Option<MacAddr> {
        self.fabric.device(serial).map(|d| d.mac)
    }

    fn substitute(&self, script: &str) -> Result<String, String> {
        let mut out = Vec::new();
        for w in script.split_whitespace() {
            match w.split_once("=@") {
                Some((k, who)) => {
                    let mac = if who == "guardian" {
                        guardian_mac(DEFAULT_GUARDIAN)
                    } else if let Some(name) = who.strip_prefix("guardian:") {
                        guardian_mac(name)
                    } else {
                        self.mac_of(who).ok_or_else(|| format!("no device {who}"))?
                    };
                    out.push(format!("{k}={mac}"));
                }
                None => out.push(w.to_string()),
            }
        }
        Ok(out.join(" "))
    }

    fn step(&mut self, d: &Directive) -> Result<Outcome, String> {
        Ok(match d {
            Directive::Provision { serial, model, vendor, version, rogue } => {
                self.ensure_vendor(vendor);
                let v = self.vendors.get_mut(vendor).expect("ensured");
                let class = catalog::lookup(model).map(|m| m.class).unwrap_or(DeviceClass::MidLevel);
                let mac = v.allocate_mac();
                let (dev, qr, _) = v.provision_device(serial, mac, model, class, version).map_err(|e| e.to_string())?;
                self.fabric.add_device(dev);
                self.fabric.press_reset(serial);
                self.device_vendor.insert(serial.clone(), vendor.clone());
                self.order.push(serial.clone());
                if !rogue {
                    self.qrs.insert(serial.clone(), qr);
                }
                Outcome::ok(format!("mac={mac}"))
            }
            Directive::Reset { serial } => {
                self.fabric.press_reset(serial);
                Outcome::ok("")
            }
            Directive::Trust { vendor, guardian } => {
                self.ensure_vendor(vendor);
                self.ensure_guardian(guardian);
                let pk = self.vendors[vendor].public_key();
                self.guardians.get_mut(guardian).expect("ensured").trust_vendor(vendor, pk);
                Outcome::ok("")
            }
            Directive::Roster { serial, guardian } => {
                self.ensure_guardian(guardian);
                let qr = self.qrs.get(serial).ok_or_else(|| format!("{serial} has no sticker to scan"))?.clone();
                let g = self.guardians.get_mut(guardian).expect("ensured");
                from_result(g.roster_scan(&qr), |r| format!("{} ({})", r.device_id, r.description))
            }
            Directive::RosterAll { guardian } => {
                self.ensure_guardian(guardian);
                let g = self.guardians.get_mut(guardian).expect("ensured");
                let mut n = 0;
                for serial in &self.order {
                    let Some(qr) = self.qrs.get(serial) else { continue };
                    if let Err(e) = g.roster_scan(qr) {
                        return Ok(Outcome::err(error_kind(&e), format!("{serial}: {e}")));
                    }
                    n += 1;
                }
                Outcome::ok(format!("{n} devices"))
            }
            Directive::Onboard { serial, guardian } => {
                self.ensure_guardian(guardian);
                let g = self.guardians.get_mut(guardian).expect("ensured");
                let out = from_result(g.onboard(&mut self.fabric, serial), |_| String::new());
                self.note_keys(guardian, serial);
                out
            }
            Directive::OnboardAll { guardian } => {
                self.ensure_guardian(guardian);
                let g = self.guardians.get_mut(guardian).expect("ensured");
                let results = g.onboard_all(&mut self.fabric);
                let n = results.len();
                let first_err = results.iter().find_map(|(id, r)| r.as_ref().err().map(|e| (id.clone(), e.clone())));
                let ids: Vec<String> = results.into_iter().map(|(id, _)| id).collect();
                for id in ids {
                    self.note_keys(guardian, &id);
                }
                match first_err {
                    None => Outcome::ok(format!("{n} devices")),
                    Some((id, e)) => Outcome::err(error_kind(&e), format!("{id}: {e}")),
                }
            }
            Directive::Publish { update_id, model, version, reason, size } => {
                let vendor = catalog::lookup(model).map(|m| m.vendor_id).unwrap_or("acme").to_string();
                self.ensure_vendor(&vendor);
                let body = payload(self.seed, update_id, *size);
                let v = &self.vendors[&vendor];
                v.publish_update(&self.feed, Some(update_id), model, version, &body, *reason).map_err(|e| e.to_string())?;
                Outcome::ok(format!("{update_id} {model} {version} {reason}"))
            }
            Directive::Forge { update_id, model, version, reason } => {
                let vendor = catalog::lookup(model).map(|m| m.vendor_id).unwrap_or("acme");
                let forger = Vendor::from_seed(vendor, self.seed ^ 0x5eed_f0f0_5eed_f0f0);
                let pkg = forger.sign_package(model, version, &payload(self.seed, update_id, 64), *reason);
                self.feed.publish(update_id, &pkg).map_err(|e| e.to_string())?;
                Outcome::ok(format!("{update_id} signed by an untrusted key"))
            }
            Directive::TamperFeed { update_id, bit } => {
                let entry = self
                    .feed
                    .entries()
                    .map_err(|e| e.to_string())?
                    .into_iter()
                    .find(|e| &e.update_id == update_id)
                    .ok_or("update not in feed")?;
                let mut pkg = self.feed.load(update_id).map_err(|e| e.to_string())?;
                let i = bit / 8;
                if i >= pkg.payload.len() {
                    return Err(format!("bit {bit} is past the payload"));
                }
                pkg.payload[i] ^= 1 << (bit % 8);
                std::fs::write(self.feed.dir().join(entry.filename), pkg.to_bytes()).map_err(|e| e.to_string())?;
                Outcome::ok(format!("flipped payload bit {bit}"))
            }
            Directive::Discover { guardian } => {
                self.ensure_guardian(guardian);
                from_result(self.guardians.get_mut(guardian).expect("ensured").discover_updates(&self.feed), |n| {
                    format!("{n} listings")
                })
            }
            Directive::Approve { device, update_id, guardian } => {
                self.ensure_guardian(guardian);
                self.guardians.get_mut(guardian).expect("ensured").approve(device, update_id);
                Outcome::ok("")
            }
            Directive::Push { serial, update_id, guardian } => {
                self.ensure_guardian(guardian);
                let g = self.guardians.get_mut(guardian).expect("ensured");
                from_result(g.push_update(&mut self.fabric, serial, update_id, &self.feed), |v| format!("installed {v}"))
            }
            Directive::PushWrongKey { serial, update_id, guardian } => {
                self.ensure_guardian(guardian);
                let pkg = self.feed.load(update_id).map_err(|e| e.to_string())?;
                let wrong = kdf(&self.seed.to_be_bytes(), "wrong-key", serial.as_bytes()).expect("non-empty");
                let package = pkg.body().canonical();
                let tag = mac_compute(&wrong, &package);
                let g = self.guardians.get_mut(guardian).expect("ensured");
                match g.send_command(&mut self.fabric, serial, Command::PrepareUpdate) {
                    Ok(Reply::UpdateReady) => {
                        from_result(g.send_command(&mut self.fabric, serial, Command::InstallUpdate { package, tag }), |r| {
                            format!("{r:?}")
                        })
                    }
                    other => from_result(other, |r| format!("{r:?}")),
                }
            }
            Directive::Rotate { serial, guardian } => {
                self.ensure_guardian(guardian);
                self.snapshot_keys(guardian, serial);
                let g = self.guardians.get_mut(guardian).expect("ensured");
                let out = from_result(g.rotate_keys(&mut self.fabric, serial), |e| format!("epoch {e}"));
                self.note_keys(guardian, serial);
                out
            }
            Directive::Decommission { serial, mode, guardian } => {
                self.ensure_guardian(guardian);
                self.snapshot_keys(guardian, serial);
                let g = self.guardians.get_mut(guardian).expect("ensured");
                match g.decommission(&mut self.fabric, serial, *mode) {
                    Ok(rep) => {
                        let detail = match &rep.transfer_note {
                            Some(n) => format!("transfer note serial={} mac={}", n.serial, n.mac),
                            None => String::new(),
                        };
                        if let Some(n) = rep.transfer_note {
                            self.notes.insert(serial.clone(), n);
                        }
                        if rep.acknowledged {
                            Outcome::ok(detail)
                        } else {
                            Outcome::ok(format!("wipe unconfirmed {detail}").trim_end().to_string())
                        }
                    }
                    Err(e) => Outcome::err(error_kind(&e), e.to_string()),
                }
            }
            Directive::Transfer { serial, guardian, owner } => {
                let note = self.notes.get(serial).cloned().ok_or_else(|| format!("no transfer note for {serial}"))?;
                self.ensure_guardian(guardian);
                self.ensure_vendor(&note.vendor_id);
                let g = self.guardians.get_mut(guardian).expect("ensured");
                if let Err(e) = g.roster_transfer(&note) {
                    return Ok(Outcome::err(error_kind(&e), e.to_string()));
                }
                let v = self.vendors.get_mut(&note.vendor_id).expect("ensured");
                let out = from_result(g.onboard_transfer(&mut self.fabric, v, serial, owner), |_| String::new());
                self.note_keys(guardian, serial);
                out
            }
            Directive::ReplayTransfer { serial } => {
                let vendor = self.device_vendor.get(serial).ok_or("unknown device vendor")?.clone();
                let v = &self.vendors[&vendor];
                let rec = v.record(serial).ok_or("vendor has no record")?;
                if rec.reset_count_c == 0 {
                    return Err("no chain password has been issued yet".into());
                }
                let w = chain_password(&v.chain_seed(serial), rec.t, rec.reset_count_c).map_err(|e| e.to_string())?;
                let name = "replayer";
                self.ensure_guardian(name);
                let g = self.guardians.get_mut(name).expect("ensured");
                from_result(g.present_transfer_password(&mut self.fabric, serial, &w), |_| "accepted".into())
            }
            Directive::VendorRequest { serial, c, owner } => {
                let vendor = self.device_vendor.get(serial).ok_or("unknown device vendor")?.clone();
                let now = self.fabric.now();
                let v = self.vendors.get_mut(&vendor).expect("provisioned");
                let rec = v.record(serial).ok_or("vendor has no record")?;
                let (mac, c) = (rec.mac, c.unwrap_or(rec.reset_count_c));
                self.fabric.note(owner, "vendor-request", &format!("{serial} c={c}"));
                match v.next_password(serial, &mac, c, owner, now) {
                    Ok(_) => Outcome::ok(format!("issued c={c}")),
                    Err(r) => Outcome::err("vendor-refused", r.to_string()),
                }
            }
            Directive::StoreSecret { serial, label, guardian } => {
                self.ensure_guardian(guardian);
                let g = self.guardians.get_mut(guardian).expect("ensured");
                let value = format!("user-data:{label}");
                match g.store_secret(&mut self.fabric, serial, label, value.as_bytes()) {
                    Ok(Reply::Stored) => Outcome::ok("stored"),
                    Ok(Reply::Unsupported) => Outcome::err("unsupported", "device class has no general AEAD"),
                    Ok(r) => Outcome::err("device-rejected", format!("{r:?}")),
                    Err(e) => Outcome::err(error_kind(&e), e.to_string()),
                }
            }
            Directive::Sense { serial, label } => {
                let d = self.fabric.device_mut(serial).ok_or("no such device")?;
                if d.record(label, format!("reading:{label}").as_bytes()) {
                    Outcome::ok("")
                } else {
                    Outcome::err("refused", "device is decommissioned")
                }
            }
            Directive::Adversary { script } => {
                let s = AdversaryScript::parse(&self.substitute(script)?)?;
                let name = s.name.clone();
                self.fabric.add_adversary(Box::new(s));
                Outcome::ok(name)
            }
            Directive::Mitm { serial, guess } => {
                let seed = self.fabric.fork_seed();
                let m = PakeMitm::new(serial, SecretBytes::from(guess.as_str()), seed);
                self.fabric.add_adversary(Box::new(m));
                Outcome::ok(format!("mitm:{serial}"))
            }
            Directive::ClearAdversaries => {
                self.fabric.clear_adversaries();
                Outcome::ok("")
            }
            Directive::InjectCommand { serial, from } => {
                let src = match from {
                    Some(f) => self.mac_of(f).ok_or("no such device")?,
                    None => OUTSIDER,
                };
                let epoch = self.fabric.device(serial).and_then(|d| d.keys()).map_or(0, |k| k.epoch);
                let env = Envelope { epoch, counter: 1 << 40, body: Command::Wipe.encode(), tag: Tag([0x5a; 32]) };
                self.deliver_command(serial, src, env, true)?
            }
            Directive::StaleCommand { serial } => {
                let old = self.previous.get(serial).ok_or_else(|| format!("{serial} has no previous keys"))?.clone();
                let epoch = self.fabric.device(serial).and_then(|d| d.keys()).map_or(0, |k| k.epoch);
                let env = Envelope::seal(&old.k_mac, LABEL_G2D, serial, epoch, 1 << 40, Command::Status.encode());
                self.deliver_command(serial, guardian_mac(DEFAULT_GUARDIAN), env, false)?
            }
            Directive::ProbeAssociate { mac_of, key_of, stale } => {
                let mac = self.mac_of(mac_of).ok_or("no such device")?;
                let key = if *stale {
                    self.previous.get(key_of).map(|k| k.k_wifi)
                } else {
                    self.fabric.device(key_of).and_then(|d| d.domain_credential())
                };
                let key = key.ok_or_else(|| format!("{key_of} holds no AP secret"))?;
                self.ensure_guardian(DEFAULT_GUARDIAN);
                let table = &self.guardians[DEFAULT_GUARDIAN].ap_table;
                if self.fabric.try_associate(table, mac, &key, "probe") {
                    Outcome::ok("accepted")
                } else {
                    Outcome::err("rejected", format!("{mac} refused"))
                }
            }
            Directive::ProbeIsolation { key_of } => {
                let key = self
                    .fabric
                    .device(key_of)
                    .and_then(|d| d.domain_credential())
                    .ok_or_else(|| format!("{key_of} holds no AP secret"))?;
                self.ensure_guardian(DEFAULT_GUARDIAN);
                let others: Vec<MacAddr> = self.order.iter().filter(|s| *s != key_of).filter_map(|s| self.mac_of(s)).collect();
                let table = &self.guardians[DEFAULT_GUARDIAN].ap_table;
                let mut accepted = Vec::new();
                for mac in others.iter().copied().chain([OUTSIDER]) {
                    if self.fabric.try_associate(table, mac, &key, "probe") {
                        accepted.push(mac.to_string());
                    }
                }
                if accepted.is_empty() {
                    Outcome::ok(format!("{} MACs refused", others.len() + 1))
                } else {
                    Outcome::err("isolation-breach", accepted.join(","))
                }
            }
            Directive::ChainSweep { seeds, t } => chain_sweep(self.seed, *seeds, *t),
            Directive::Expect(_) => unreachable!("handled by the caller"),
        })
    }

    /// Put a command frame on the domain AP and classify what happened to it:
    /// refused by the AP, dropped by the device, or answered.
    fn deliver_command(&mut self, serial: &str, src: MacAddr, env: Envelope, injected: bool) -> Result<Outcome, String> {
        let dst = self.mac_of(serial).ok_or("no such device")?;
        let trace = self.fabric.trace();
        let (frames0, drops0) = (
            trace.frames().filter(|(f, d, _)| *d && f.src == dst).count(),
            trace.events().filter(|(a, k, _)| *a == serial && *k == "command-dropped").count(),
        );
        let frame = Frame::new(Link::DomainAp, src, dst, FrameKind::Command, env.encode());
        if injected {
            self.fabric.inject("t3", frame);
        } else {
            self.fabric.send(frame);
        }
        self.fabric.run_until_idle();
        let trace = self.fabric.trace();
        let answered = trace.frames().filter(|(f, d, _)| *d && f.src == dst).count() > frames0;
        let dropped = trace.events().filter(|(a, k, _)| *a == serial && *k == "command-dropped").count() > drops0;
        Ok(if answered {
            Outcome::ok(format!("{src} -> {dst} answered"))
        } else if dropped {
            Outcome::err("command-dropped", format!("{src} -> {dst}"))
        } else {
            Outcome::err("blocked", format!("{src} -> {dst} refused by the AP"))
        })
    }

    fn check(&self, e: &Expectation) -> Result<(), String> {
        let guardian = |name: &str| self.guardians.get(name).ok_or_else(|| format!("no guardian {name}"));
        let record = |name: &str, serial: &str| {
            guardian(name)?.registry.get(serial).ok_or_else(|| format!("{serial} not in {name}'s registry"))
        };
        let device = |serial: &str| self.fabric.device(serial).ok_or_else(|| format!("no device {serial}"));
        let ensure = |cond: bool, msg: String| if cond { Ok(()) } else { Err(msg) };
        match e {
            Expectation::Ok => match &self.last {
                Some(o) if o.error.is_none() => Ok(()),
                Some(o) => Err(o.render()),
                None => Err("no action yet".into()),
            },
            Expectation::Error(kind) => match &self.last {
                Some(o) if o.error.as_deref() == Some(kind.as_str()) => Ok(()),
                Some(o) => Err(o.render()),
                None => Err("no action yet".into()),
            },
            Expectation::State { serial, state } => {
                let actual = device(serial)?.state();
                ensure(actual == *state, format!("state is {actual}"))
            }
            Expectation::Lifecycle { serial, lifecycle, guardian: g } => {
                let actual = guardian(g)?.registry.get(serial).map(|r| r.lifecycle);
                ensure(actual == *lifecycle, format!("lifecycle is {}", actual.map_or("absent".into(), |l| l.to_string())))
            }
            Expectation::KeysAgree { serial, guardian: g } => {
                let gd = guardian(g)?;
                let ids: Vec<String> = match serial {
                    Some(s) => vec![s.clone()],
                    None => gd.registry.records().filter(|r| r.lifecycle == Lifecycle::Onboarded).map(|r| r.device_id.clone()).collect(),
                };
                ensure(!ids.is_empty(), "no on-boarded devices".into())?;
                for id in ids {
                    let rec = record(g, &id)?;
                    let dk = device(&id)?.keys();
                    ensure(rec.keyset.is_some() && rec.keyset.as_ref() == dk, format!("{id}: keysets differ"))?;
                }
                Ok(())
            }
            Expectation::AllOnboarded { guardian: g } => {
                let gd = guardian(g)?;
                ensure(!gd.registry.is_empty(), "registry is empty".into())?;
                match gd.registry.records().find(|r| r.lifecycle != Lifecycle::Onboarded) {
                    Some(r) => Err(format!("{} is {}", r.device_id, r.lifecycle)),
                    None => Ok(()),
                }
            }
            Expectation::WifiDistinct { guardian: g } => {
                let mut ks: Vec<[u8; 32]> =
                    guardian(g)?.registry.records().filter_map(|r| r.keyset.as_ref()).map(|k| k.k_wifi.0).collect();
                let n = ks.len();
                ks.sort();
                ks.dedup();
                ensure(ks.len() == n, format!("{} duplicate AP secrets among {n}", n - ks.len()))
            }
            Expectation::Epoch { serial, epoch, guardian: g } => {
                let ge = record(g, serial)?.keyset.as_ref().map(|k| k.epoch);
                let de = device(serial)?.keys().map(|k| k.epoch);
                ensure(ge == Some(*epoch) && de == Some(*epoch), format!("guardian epoch {ge:?}, device epoch {de:?}"))
            }
            Expectation::Version { serial, version, guardian: g } => {
                let gv = record(g, serial)?.installed_version.clone();
                let dv = device(serial)?.firmware().version.clone();
                ensure(gv.as_deref() == Some(version) && &dv == version, format!("guardian {gv:?}, device {dv:?}"))
            }
            Expectation::History { serial, versions, guardian: g } => {
                let h: Vec<String> = record(g, serial)?.version_history.iter().map(|v| v.version.clone()).collect();
                ensure(&h == versions, format!("history is {}", h.join(",")))
            }
            Expectation::Available { serial, ids, guardian: g } => {
                let a: Vec<String> = record(g, serial)?.available_updates.iter().map(|u| u.update_id.clone()).collect();
                ensure(&a == ids, format!("available is {}", if a.is_empty() { "-".into() } else { a.join(",") }))
            }
            Expectation::Alarm { serial, guardian: g, present } => {
                let raised = guardian(g)?.alarms().any(|a| a.device_id.as_deref() == Some(serial.as_str()));
                ensure(raised == *present, format!("alarm raised: {raised}"))
            }
            Expectation::Event { actor, kind, present } => {
                let seen = self.fabric.trace().events().any(|(a, k, _)| (actor == "*" || a == actor) && k == kind);
                ensure(seen == *present, format!("event {actor}/{kind} seen: {seen}"))
            }
            Expectation::Associated { serial, yes } => {
                let a = self.fabric.is_associated(&device(serial)?.mac);
                ensure(a == *yes, format!("associated: {a}"))
            }
            Expectation::StoreEmpty { serial, empty } => {
                let n = device(serial)?.sensitive_store().len();
                ensure((n == 0) == *empty, format!("store holds {n} entries"))
            }
            Expectation::NoSecrets { serial, guardian: g } => {
                let rec = record(g, serial)?;
                ensure(!rec.holds_secrets(), "record still holds secrets".into())?;
                let mac = rec.mac.ok_or("record has no MAC")?;
                ensure(guardian(g)?.ap_table.get(&mac).is_none(), "AP table still has an entry".into())
            }
            Expectation::NeverContacted { serial } => {
                let d = device(serial)?;
                let link = Link::DeviceAp(serial.clone());
                let touched = self.fabric.trace().frames().filter(|(f, _, _)| f.link == link || f.dst == d.mac).count();
                ensure(touched == 0 && d.pake_attempts() == 0, format!("{touched} frames, {} PAKE attempts", d.pake_attempts()))
            }
            Expectation::TraceClean => {
                let trace = self.fabric.trace();
                let mut sets: Vec<&KeySet> = self.established.iter().collect();
                sets.extend(self.previous.values());
                for g in self.guardians.values() {
                    sets.extend(g.registry.records().filter_map(|r| r.keyset.as_ref()));
                }
                for d in self.fabric.devices() {
                    sets.extend(d.keys());
                }
                ensure(!sets.is_empty(), "no keys to scan for".into())?;
                for ks in sets {
                    for k in ks.secrets() {
                        ensure(!trace.contains_bytes(&k.0), format!("key material of epoch {} found in a frame", ks.epoch))?;
                    }
                }
                Ok(())
            }
            Expectation::AdversaryKeys { name, keys } => {
                let a = self.fabric.adversaries().iter().find(|a| a.name() == name).ok_or_else(|| format!("no adversary {name}"))?;
                ensure(a.keys_established() == *keys, format!("{}: {}", a.name(), a.summary()))
            }
            Expectation::Audit => {
                for d in self.fabric.devices() {
                    d.audit()?;
                }
                Ok(())
            }
            Expectation::VendorC { serial, c } => {
                let v = self.device_vendor.get(serial).and_then(|v| self.vendors.get(v)).ok_or("unknown vendor")?;
                let actual = v.record(serial).ok_or("vendor has no record")?.reset_count_c;
                ensure(actual == *c, format!("vendor counter is {actual}"))
            }
        }
    }
}

/// Verify every element of several chains in order against a forward-hash
/// table, probing replays, skips and mutations along the way.
fn chain_sweep(world_seed: u64, seeds: u32, t: u32) -> Outcome {
    let mut checked = 0u64;
    for s in 0..seeds {
        let seed = Digest(kdf(&world_seed.to_be_bytes(), "chain-sweep", &s.to_be_bytes()).expect("non-empty").0);
        // forward[k] = h^k(seed), so w_i = forward[t - i]
        let mut forward = vec![seed];
        for k in 0..t as usize {
            forward.push(hash(&forward[k].0));
        }
        let state = match chain_init(&seed, t) {
            Ok(c) => c,
            Err(e) => return Outcome::err("chain", e.to_string()),
        };
        let mut v = state.verifier_view();
        if v.verifier != forward[t as usize] {
            return Outcome::err("chain", format!("seed {s}: verifier is not h^t(w)"));
        }
        for i in 1..=t {
            let w = forward[(t - i) as usize];
            if state.password_at(i).ok() != Some(w) {
                return Outcome::err("chain", format!("seed {s}: w_{i} differs from forward hashing"));
            }
            let mut mutated = w;
            mutated.0[(i as usize) % 32] ^= 1 << (i % 8);
            let mut probe = v;
            let bad = probe.accept(&forward[(t - i + 1) as usize], i)
                || probe.accept(&mutated, i)
                || probe.accept(&w, i - 1)
                || (i < t && probe.accept(&forward[(t - i - 1) as usize], i));
            if bad {
                return Outcome::err("chain", format!("seed {s}: bad candidate accepted at {i}"));
            }
            if !v.accept(&w, i) || v.accept(&w, i) {
                return Outcome::err("chain", format!("seed {s}: w_{i} not accepted exactly once"));
            }
            checked += 1;
        }
    }
    Outcome::ok(format!("{checked} elements verified"))
}

pub const DEFAULT_CHAIN_LENGTH: u32 = CHAIN_LENGTH;

/// Run a scenario in a fresh world. The update feed lives in `feed_dir`.
pub fn run(scenario: &Scenario, seed_override: Option<u64>, feed_dir: &Path) -> Result<(Report, World), RunError> {
    let seed = seed_override.unwrap_or(scenario.seed);
    std::fs::create_dir_all(feed_dir)?;
    let mut world = World::new(seed, feed_dir);
    let mut report =
        Report { name: scenario.name.clone(), seed, steps: Vec::new(), results: Vec::new(), trace: String::new() };
    for step in &scenario.steps {
        match &step.directive {
            Directive::Expect(e) => {
                let r = world.check(e);
                report.results.push(ExpectResult {
                    line: step.line,
                    text: step.text.clone(),
                    pass: r.is_ok(),
                    detail: r.err().unwrap_or_default(),
                });
            }
            d => {
                let outcome = world.step(d).map_err(|message| RunError::Internal { line: step.line, message })?;
                report.steps.push((step.line, step.text.clone(), outcome.render()));
                world.last = Some(outcome);
            }
        }
    }
    report.trace = world.fabric.trace().export();
    Ok((report, world))
}
