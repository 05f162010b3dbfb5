//! The event loop. One global FIFO of in-flight frames; each delivery costs
//! one tick, is offered to the adversaries in attachment order, gets the
//! next sequence number, and is appended to the trace.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use super::adversary::{Action, Adversary};
use super::frame::{Frame, Link};
use super::trace::{Trace, TraceEntry};
use crate::crypto::Key;
use crate::device::{DeviceEvent, DeviceSim};
use crate::guardian::ap_table::ApPasswordTable;
use crate::types::{DeviceState, MacAddr};

/// Ticks a party waits for the next message of an exchange.
pub const DEFAULT_TIMEOUT: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum AssocReject {
    #[error("no verification entry for this MAC")]
    UnknownMac,
    #[error("presented secret does not verify")]
    BadSecret,
}

/// Domain-AP admission check: the entry indexed by the link-level source MAC
/// must verify the presented secret. There is no shared fallback password.
pub fn associate(table: &ApPasswordTable, mac: &MacAddr, presented: &Key) -> Result<(), AssocReject> {
    match table.get(mac) {
        None => Err(AssocReject::UnknownMac),
        Some(_) if table.verify(mac, presented) => Ok(()),
        Some(_) => Err(AssocReject::BadSecret),
    }
}

struct InFlight {
    frame: Frame,
    injected_by: Option<usize>,
}

pub struct Fabric {
    tick: u64,
    seq: u64,
    devices: BTreeMap<String, DeviceSim>,
    endpoints: BTreeMap<MacAddr, (String, VecDeque<Frame>)>,
    queue: VecDeque<InFlight>,
    adversaries: Vec<Box<dyn Adversary>>,
    associated: BTreeSet<MacAddr>,
    trace: Trace,
    event_limit: Option<usize>,
    rng: ChaCha20Rng,
}

impl Fabric {
    pub fn new(seed: u64) -> Self {
        Fabric {
            tick: 0,
            seq: 0,
            devices: BTreeMap::new(),
            endpoints: BTreeMap::new(),
            queue: VecDeque::new(),
            adversaries: Vec::new(),
            associated: BTreeSet::new(),
            trace: Trace::default(),
            event_limit: None,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn now(&self) -> u64 {
        self.tick
    }

    /// Stop delivering once the trace holds this many entries.
    pub fn set_event_limit(&mut self, limit: usize) {
        self.event_limit = Some(limit);
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Trace {
        std::mem::take(&mut self.trace)
    }

    /// Seed for an auxiliary generator (adversaries, helpers) drawn from the
    /// run's stream so that everything stays reproducible.
    pub fn fork_seed(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Events a device recorded before joining are not replayed.
    pub fn add_device(&mut self, mut device: DeviceSim) {
        device.drain_events();
        self.note(&device.serial.clone(), "device-added", &format!("mac={} model={}", device.mac, device.model));
        self.devices.insert(device.serial.clone(), device);
    }

    pub fn remove_device(&mut self, serial: &str) -> Option<DeviceSim> {
        self.devices.remove(serial)
    }

    pub fn device(&self, serial: &str) -> Option<&DeviceSim> {
        self.devices.get(serial)
    }

    /// Direct access for local, physical actions (reset button, sensors).
    pub fn device_mut(&mut self, serial: &str) -> Option<&mut DeviceSim> {
        self.devices.get_mut(serial)
    }

    pub fn devices(&self) -> impl Iterator<Item = &DeviceSim> {
        self.devices.values()
    }

    pub fn attach_endpoint(&mut self, mac: MacAddr, name: &str) {
        self.endpoints.insert(mac, (name.to_string(), VecDeque::new()));
    }

    pub fn add_adversary(&mut self, adv: Box<dyn Adversary>) -> usize {
        let detail = format!("threat={} scope={:?}", adv.threat(), adv.scope());
        self.note(&adv.name().to_string(), "adversary-attached", &detail);
        self.adversaries.push(adv);
        self.adversaries.len() - 1
    }

    pub fn adversaries(&self) -> &[Box<dyn Adversary>] {
        &self.adversaries
    }

    pub fn adversary(&self, i: usize) -> Option<&dyn Adversary> {
        self.adversaries.get(i).map(|a| a.as_ref())
    }

    pub fn clear_adversaries(&mut self) {
        self.adversaries.clear();
    }

    /// Record a state-transition or protocol event in the trace.
    pub fn note(&mut self, actor: &str, kind: &str, detail: &str) {
        if self.limit_reached() {
            self.trace.truncated = true;
            return;
        }
        self.seq += 1;
        self.trace.entries.push(TraceEntry::Event {
            seq: self.seq,
            actor: actor.to_string(),
            kind: kind.to_string(),
            detail: detail.to_string(),
        });
    }

    fn limit_reached(&self) -> bool {
        self.event_limit.is_some_and(|l| self.trace.entries.len() >= l)
    }

    /// Serials of devices currently advertising a provisioning AP.
    pub fn visible_aps(&self) -> Vec<String> {
        self.devices.values().filter(|d| d.state() == DeviceState::Provisioning).map(|d| d.serial.clone()).collect()
    }

    pub fn send(&mut self, frame: Frame) {
        self.queue.push_back(InFlight { frame, injected_by: None });
    }

    /// Put an adversary-originated frame on the air outside any hook.
    pub fn inject(&mut self, by: &str, frame: Frame) {
        self.note(by, "inject", &format!("{} {} -> {}", frame.kind, frame.src, frame.dst));
        self.queue.push_back(InFlight { frame, injected_by: Some(usize::MAX) });
    }

    pub fn is_associated(&self, mac: &MacAddr) -> bool {
        self.associated.contains(mac)
    }

    /// Attempt a domain-AP association with an arbitrary presented secret.
    pub fn try_associate(&mut self, table: &ApPasswordTable, mac: MacAddr, presented: &Key, who: &str) -> bool {
        match associate(table, &mac, presented) {
            Ok(()) => {
                self.associated.insert(mac);
                self.note(who, "associate-accept", &mac.to_string());
                true
            }
            Err(e) => {
                self.note(who, "associate-reject", &format!("{mac}: {e}"));
                false
            }
        }
    }

    /// The device joins the domain AP with the secret it holds.
    pub fn connect_device(&mut self, serial: &str, table: &ApPasswordTable) -> bool {
        let Some((mac, cred)) = self.devices.get(serial).map(|d| (d.mac, d.domain_credential())) else {
            return false;
        };
        match cred {
            Some(k) => self.try_associate(table, mac, &k, serial),
            None => {
                self.note(serial, "associate-reject", &format!("{mac}: no credential"));
                false
            }
        }
    }

    /// Revocation: the AP drops the station.
    pub fn disassociate(&mut self, mac: &MacAddr, who: &str) {
        if self.associated.remove(mac) {
            self.note(who, "disassociate", &mac.to_string());
        }
    }

    /// Local physical action on a device, with its events traced.
    pub fn press_reset(&mut self, serial: &str) -> bool {
        let Some(d) = self.devices.get_mut(serial) else {
            return false;
        };
        d.hard_reset();
        let mac = d.mac;
        self.flush_device_events(serial);
        self.disassociate(&mac, serial);
        true
    }

    fn flush_device_events(&mut self, serial: &str) {
        let events = match self.devices.get_mut(serial) {
            Some(d) => d.drain_events(),
            None => return,
        };
        for ev in events {
            let (kind, detail) = describe(&ev);
            self.note(serial, kind, &detail);
        }
    }

    /// Wait up to `timeout` ticks for a frame addressed to `me`.
    pub fn recv(&mut self, me: MacAddr, timeout: u64) -> Option<Frame> {
        let deadline = self.tick + timeout;
        loop {
            if let Some(f) = self.endpoints.get_mut(&me).and_then(|(_, q)| q.pop_front()) {
                return Some(f);
            }
            if self.tick >= deadline {
                return None;
            }
            if !self.step() {
                self.tick = deadline;
            }
        }
    }

    /// Deliver everything in flight.
    pub fn run_until_idle(&mut self) {
        while self.step() {}
    }

    /// Discard frames waiting in endpoint inboxes (stale replies from an
    /// earlier exchange).
    pub fn flush_inbox(&mut self, me: MacAddr) {
        if let Some((_, q)) = self.endpoints.get_mut(&me) {
            q.clear();
        }
    }

    /// Deliver one frame. Returns false when nothing was in flight.
    pub fn step(&mut self) -> bool {
        let Some(InFlight { mut frame, injected_by }) = self.queue.pop_front() else {
            return false;
        };
        if self.limit_reached() {
            self.trace.truncated = true;
            self.queue.clear();
            return false;
        }
        self.tick += 1;
        let mut dropped = false;
        let mut notes = Vec::new();
        let mut injections = Vec::new();
        if injected_by.is_some() {
            notes.push("injected".to_string());
        }
        for (i, adv) in self.adversaries.iter_mut().enumerate() {
            if injected_by == Some(i) || !adv.scope().sees(&frame.link) {
                continue;
            }
            for action in adv.on_frame(&frame, self.tick) {
                match action {
                    Action::Pass => {}
                    Action::Drop => {
                        dropped = true;
                        notes.push(format!("drop:{}", adv.name()));
                    }
                    Action::Modify(m) => {
                        m.apply(&mut frame.body);
                        notes.push(format!("modify:{}:{m}", adv.name()));
                    }
                    Action::Inject(f) => {
                        notes.push(format!("inject:{}", adv.name()));
                        injections.push(InFlight { frame: f, injected_by: Some(i) });
                    }
                    Action::Record => notes.push(format!("record:{}", adv.name())),
                }
            }
        }
        self.queue.extend(injections);
        if !dropped && !self.link_admits(&frame) {
            dropped = true;
            notes.push("link:unassociated".into());
        }
        self.seq += 1;
        frame.seq = self.seq;
        let action = if notes.is_empty() { "pass".to_string() } else { notes.join(",") };
        self.trace.entries.push(TraceEntry::Frame { frame: frame.clone(), delivered: !dropped, action });
        if !dropped {
            self.deliver(frame);
        }
        true
    }

    /// WPA2 abstraction: on the domain AP both ends must be associated
    /// stations or the AP's own endpoints.
    fn link_admits(&self, frame: &Frame) -> bool {
        match frame.link {
            Link::DomainAp => {
                let ok = |m: &MacAddr| self.associated.contains(m) || self.endpoints.contains_key(m);
                ok(&frame.src) && ok(&frame.dst)
            }
            Link::DeviceAp(_) | Link::Wan => true,
        }
    }

    fn deliver(&mut self, frame: Frame) {
        if let Some((_, inbox)) = self.endpoints.get_mut(&frame.dst) {
            inbox.push_back(frame);
            return;
        }
        let target = match &frame.link {
            Link::DeviceAp(serial) => self
                .devices
                .get(serial)
                .filter(|d| frame.dst == d.mac || frame.dst == MacAddr::BROADCAST)
                .map(|d| d.serial.clone()),
            Link::DomainAp | Link::Wan => self.devices.values().find(|d| d.mac == frame.dst).map(|d| d.serial.clone()),
        };
        let Some(serial) = target else {
            return;
        };
        let device = self.devices.get_mut(&serial).expect("target exists");
        let replies = device.handle_frame(&frame, &mut self.rng);
        self.flush_device_events(&serial);
        for r in replies {
            self.send(r);
        }
    }
}

fn describe(ev: &DeviceEvent) -> (&'static str, String) {
    match ev {
        DeviceEvent::Transition { from, to, cause } => ("transition", format!("{from}->{to} ({cause})")),
        DeviceEvent::PakeCompleted => ("pake-complete", String::new()),
        DeviceEvent::PakeAborted { reason } => ("pake-abort", reason.clone()),
        DeviceEvent::FirmwareChanged { from, to } => ("firmware", format!("{from}->{to}")),
        DeviceEvent::UpdateRejected { reason } => ("update-rejected", reason.clone()),
        DeviceEvent::CommandDropped { reason } => ("command-dropped", reason.clone()),
        DeviceEvent::ChainAccepted { index } => ("chain-accept", index.to_string()),
        DeviceEvent::ChainRejected { index } => ("chain-reject", index.to_string()),
        DeviceEvent::KeysActivated { epoch } => ("keys-activated", format!("epoch={epoch}")),
        DeviceEvent::StoreWritten { label } => ("store-write", label.clone()),
    }
}
