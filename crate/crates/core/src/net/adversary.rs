//! Adversary hooks. The fabric consults every adversary whose scope covers
//! a frame's link before delivering it.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use super::frame::{Frame, FrameKind, Link};
use crate::crypto::pake::is_first_blob;
use crate::crypto::{pake_start, pake_step, PakeSession, Role, SecretBytes, StepOutcome};
use crate::protocol::{pake_ids, StatusMsg};
use crate::types::MacAddr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Threat {
    /// Remote: forged software updates.
    T1,
    /// Remote: bypass access control to read state or reconfigure.
    T2,
    /// Remote: infection other than through updates.
    T3,
    /// Local: within range of device wireless interfaces.
    T4,
}

impl Threat {
    pub fn scope(self) -> Scope {
        match self {
            Threat::T4 => Scope::Local,
            _ => Scope::Remote,
        }
    }
}

impl fmt::Display for Threat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Threat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "T1" => Ok(Threat::T1),
            "T2" => Ok(Threat::T2),
            "T3" => Ok(Threat::T3),
            "T4" => Ok(Threat::T4),
            _ => Err(format!("unknown threat {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Sees every link, including the open provisioning APs.
    Local,
    /// Sees only the domain AP and the WAN.
    Remote,
}

impl Scope {
    pub fn sees(self, link: &Link) -> bool {
        match self {
            Scope::Local => true,
            Scope::Remote => !matches!(link, Link::DeviceAp(_)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mutation {
    FlipBit(usize),
    SetByte(usize, u8),
    Truncate(usize),
    Replace(Vec<u8>),
}

impl Mutation {
    /// Apply to a body. Positions past the end leave it unchanged.
    pub fn apply(&self, body: &mut Vec<u8>) {
        match self {
            Mutation::FlipBit(bit) => {
                if let Some(b) = body.get_mut(bit / 8) {
                    *b ^= 1 << (bit % 8);
                }
            }
            Mutation::SetByte(pos, v) => {
                if let Some(b) = body.get_mut(*pos) {
                    *b = *v;
                }
            }
            Mutation::Truncate(n) => body.truncate(*n),
            Mutation::Replace(v) => *body = v.clone(),
        }
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mutation::FlipBit(b) => write!(f, "flip:{b}"),
            Mutation::SetByte(p, v) => write!(f, "set:{p}:{v:02x}"),
            Mutation::Truncate(n) => write!(f, "truncate:{n}"),
            Mutation::Replace(v) => write!(f, "replace:{}", hex::encode(v)),
        }
    }
}

impl FromStr for Mutation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| p.parse::<usize>().map_err(|_| format!("bad number {p:?} in mutation {s:?}"));
        match parts[..] {
            ["flip", b] => Ok(Mutation::FlipBit(num(b)?)),
            ["set", p, v] => Ok(Mutation::SetByte(
                num(p)?,
                u8::from_str_radix(v, 16).map_err(|_| format!("bad byte {v:?} in mutation {s:?}"))?,
            )),
            ["truncate", n] => Ok(Mutation::Truncate(num(n)?)),
            ["replace", h] => hex::decode(h).map(Mutation::Replace).map_err(|e| format!("mutation {s:?}: {e}")),
            _ => Err(format!("unknown mutation {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Pass,
    Drop,
    Modify(Mutation),
    Inject(Frame),
    /// Keep a copy; never alters delivery.
    Record,
}

pub trait Adversary {
    fn name(&self) -> &str;
    fn threat(&self) -> Threat;
    fn scope(&self) -> Scope {
        self.threat().scope()
    }
    fn on_frame(&mut self, frame: &Frame, tick: u64) -> Vec<Action>;
    /// Frames kept by `Record` actions.
    fn recorded(&self) -> &[Frame] {
        &[]
    }
    /// Short outcome summary for reports.
    fn summary(&self) -> String {
        format!("{} frames recorded", self.recorded().len())
    }
    /// Sessions in which this adversary ended up holding a confirmed key.
    fn keys_established(&self) -> u32 {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinkMatch {
    AnyDeviceAp,
    DeviceAp(String),
    DomainAp,
    Wan,
}

impl LinkMatch {
    fn matches(&self, link: &Link) -> bool {
        match (self, link) {
            (LinkMatch::AnyDeviceAp, Link::DeviceAp(_)) => true,
            (LinkMatch::DeviceAp(s), Link::DeviceAp(l)) => s == l,
            (LinkMatch::DomainAp, Link::DomainAp) | (LinkMatch::Wan, Link::Wan) => true,
            _ => false,
        }
    }
}

impl FromStr for LinkMatch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "device-ap" => Ok(LinkMatch::AnyDeviceAp),
            "domain-ap" => Ok(LinkMatch::DomainAp),
            "wan" => Ok(LinkMatch::Wan),
            _ => match s.strip_prefix("device-ap:") {
                Some(serial) if !serial.is_empty() => Ok(LinkMatch::DeviceAp(serial.to_string())),
                _ => Err(format!("unknown link {s:?}")),
            },
        }
    }
}

/// Predicate over frames. Unset fields match everything; `nth` selects the
/// n-th matching frame (1-based) and `times` caps how often the rule fires.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trigger {
    pub kind: Option<FrameKind>,
    pub link: Option<LinkMatch>,
    pub src: Option<MacAddr>,
    pub dst: Option<MacAddr>,
    pub nth: Option<u32>,
    pub times: Option<u32>,
}

impl Trigger {
    fn predicate(&self, f: &Frame) -> bool {
        self.kind.is_none_or(|k| f.kind == k)
            && self.link.as_ref().is_none_or(|l| l.matches(&f.link))
            && self.src.is_none_or(|m| f.src == m)
            && self.dst.is_none_or(|m| f.dst == m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptAction {
    Pass,
    Drop,
    Modify(Mutation),
    Record,
}

/// Declarative adversary: one trigger and a list of actions.
#[derive(Debug, Clone)]
pub struct AdversaryScript {
    pub name: String,
    pub threat: Threat,
    pub scope: Scope,
    pub trigger: Trigger,
    pub actions: Vec<ScriptAction>,
    seen: u32,
    fired: u32,
    recorded: Vec<Frame>,
}

impl AdversaryScript {
    pub fn new(name: &str, threat: Threat, trigger: Trigger, actions: Vec<ScriptAction>) -> Self {
        AdversaryScript {
            name: name.to_string(),
            threat,
            scope: threat.scope(),
            trigger,
            actions,
            seen: 0,
            fired: 0,
            recorded: Vec::new(),
        }
    }

    pub fn fired(&self) -> u32 {
        self.fired
    }

    /// Parse `key=value` words:
    /// `name=N threat=T1..T4 [scope=local|remote] [kind=K] [link=L] [src=MAC]
    /// [dst=MAC] [nth=N] [times=N] do=ACTION...` where ACTION is `pass`,
    /// `drop`, `record`, or a mutation (`flip:BIT`, `set:POS:HEX`,
    /// `truncate:N`, `replace:HEX`).
    pub fn parse(words: &str) -> Result<Self, String> {
        let mut name = None;
        let mut threat = None;
        let mut scope = None;
        let mut trigger = Trigger::default();
        let mut actions = Vec::new();
        for w in words.split_whitespace() {
            let (k, v) = w.split_once('=').ok_or_else(|| format!("expected key=value, got {w:?}"))?;
            let num = |v: &str| v.parse::<u32>().map_err(|_| format!("bad number in {w:?}"));
            let mac = |v: &str| v.parse::<MacAddr>().map_err(|e| e.to_string());
            match k {
                "name" => name = Some(v.to_string()),
                "threat" => threat = Some(v.parse::<Threat>()?),
                "scope" => {
                    scope = Some(match v {
                        "local" => Scope::Local,
                        "remote" => Scope::Remote,
                        _ => return Err(format!("unknown scope {v:?}")),
                    })
                }
                "kind" => trigger.kind = Some(v.parse()?),
                "link" => trigger.link = Some(v.parse()?),
                "src" => trigger.src = Some(mac(v)?),
                "dst" => trigger.dst = Some(mac(v)?),
                "nth" => trigger.nth = Some(num(v)?),
                "times" => trigger.times = Some(num(v)?),
                "do" => actions.push(match v {
                    "pass" => ScriptAction::Pass,
                    "drop" => ScriptAction::Drop,
                    "record" => ScriptAction::Record,
                    m => ScriptAction::Modify(m.parse()?),
                }),
                _ => return Err(format!("unknown adversary field {k:?}")),
            }
        }
        let threat = threat.ok_or("adversary needs threat=")?;
        if actions.is_empty() {
            return Err("adversary needs at least one do=".into());
        }
        let mut s = AdversaryScript::new(&name.unwrap_or_else(|| threat.to_string()), threat, trigger, actions);
        if let Some(sc) = scope {
            if threat != Threat::T4 && sc == Scope::Local {
                return Err(format!("{threat} is a remote threat and cannot be scoped local"));
            }
            s.scope = sc;
        }
        Ok(s)
    }
}

impl Adversary for AdversaryScript {
    fn name(&self) -> &str {
        &self.name
    }

    fn threat(&self) -> Threat {
        self.threat
    }

    fn scope(&self) -> Scope {
        self.scope
    }

    fn on_frame(&mut self, frame: &Frame, _tick: u64) -> Vec<Action> {
        if !self.trigger.predicate(frame) {
            return Vec::new();
        }
        self.seen += 1;
        if self.trigger.nth.is_some_and(|n| n != self.seen) {
            return Vec::new();
        }
        if self.trigger.times.is_some_and(|t| self.fired >= t) {
            return Vec::new();
        }
        self.fired += 1;
        self.actions
            .iter()
            .map(|a| match a {
                ScriptAction::Pass => Action::Pass,
                ScriptAction::Drop => Action::Drop,
                ScriptAction::Modify(m) => Action::Modify(m.clone()),
                ScriptAction::Record => {
                    self.recorded.push(frame.clone());
                    Action::Record
                }
            })
            .collect()
    }

    fn recorded(&self) -> &[Frame] {
        &self.recorded
    }

    fn summary(&self) -> String {
        format!("fired {} times, {} frames recorded", self.fired, self.recorded.len())
    }
}

/// Active man-in-the-middle on one device's provisioning AP. It swallows
/// every PAKE blob between Guardian and device and instead runs its own
/// sessions with each side using a guessed password, relaying abort notices
/// so both honest parties see the failure.
pub struct PakeMitm {
    name: String,
    serial: String,
    guess: SecretBytes,
    device_mac: Option<MacAddr>,
    guardian_mac: Option<MacAddr>,
    rng: ChaCha20Rng,
    toward_guardian: Option<PakeSession>,
    toward_device: Option<PakeSession>,
    keys_established: u32,
    attempts: u32,
    recorded: Vec<Frame>,
}

impl PakeMitm {
    pub fn new(serial: &str, guess: SecretBytes, seed: u64) -> Self {
        PakeMitm {
            name: format!("mitm:{serial}"),
            serial: serial.to_string(),
            guess,
            device_mac: None,
            guardian_mac: None,
            rng: ChaCha20Rng::seed_from_u64(seed),
            toward_guardian: None,
            toward_device: None,
            keys_established: 0,
            attempts: 0,
            recorded: Vec::new(),
        }
    }

    pub fn attempts(&self) -> u32 {
        self.attempts
    }

    fn step(&mut self, to_guardian: bool, incoming: &[u8]) -> Option<Vec<u8>> {
        let slot = if to_guardian { &mut self.toward_guardian } else { &mut self.toward_device };
        let session = slot.as_mut()?;
        match pake_step(session, incoming, &mut self.rng) {
            StepOutcome::Send(b) => Some(b),
            StepOutcome::SendAndDone(b) => {
                self.keys_established += 1;
                Some(b)
            }
            StepOutcome::Done => {
                self.keys_established += 1;
                None
            }
            StepOutcome::Aborted { notify, .. } => notify,
        }
    }
}

impl Adversary for PakeMitm {
    fn name(&self) -> &str {
        &self.name
    }

    fn threat(&self) -> Threat {
        Threat::T4
    }

    fn on_frame(&mut self, frame: &Frame, _tick: u64) -> Vec<Action> {
        if frame.link != Link::DeviceAp(self.serial.clone()) {
            return Vec::new();
        }
        self.recorded.push(frame.clone());
        if frame.kind == FrameKind::Status {
            if let Ok(StatusMsg::Report(_)) = StatusMsg::decode(&frame.body) {
                self.device_mac = Some(frame.src);
                self.guardian_mac = Some(frame.dst);
            }
            return vec![Action::Record];
        }
        if frame.kind != FrameKind::PakeBlob {
            return vec![Action::Record];
        }
        let (Some(dev), Some(gm)) = (self.device_mac, self.guardian_mac) else {
            return vec![Action::Record];
        };
        let link = frame.link.clone();
        let mut out = vec![Action::Drop];
        if frame.src == dev {
            if let Some(b) = self.step(false, &frame.body) {
                out.push(Action::Inject(Frame::new(link, gm, dev, FrameKind::PakeBlob, b)));
            }
            return out;
        }
        if is_first_blob(&frame.body) {
            self.attempts += 1;
            let (init_id, resp_id) = pake_ids(&frame.src, &self.serial, None);
            let Ok((resp, _)) = pake_start(Role::Responder, self.guess.as_bytes(), &resp_id, &init_id, &mut self.rng)
            else {
                return out;
            };
            self.toward_guardian = Some(resp);
            if let Ok((init, Some(first))) =
                pake_start(Role::Initiator, self.guess.as_bytes(), &init_id, &resp_id, &mut self.rng)
            {
                self.toward_device = Some(init);
                out.push(Action::Inject(Frame::new(link.clone(), frame.src, dev, FrameKind::PakeBlob, first)));
            }
        }
        if let Some(b) = self.step(true, &frame.body) {
            out.push(Action::Inject(Frame::new(link, dev, frame.src, FrameKind::PakeBlob, b)));
        }
        out
    }

    fn recorded(&self) -> &[Frame] {
        &self.recorded
    }

    fn summary(&self) -> String {
        format!("{} sessions attempted, {} keys established", self.attempts, self.keys_established)
    }

    fn keys_established(&self) -> u32 {
        self.keys_established
    }
}
