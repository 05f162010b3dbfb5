//! Scenario files: plain text, one directive per line, `#` comments.
//!
//! ```text
//! name happy_onboard
//! seed 42
//! provision SP-100-0001 model=SP-100
//! trust acme
//! roster SP-100-0001
//! onboard SP-100-0001
//! expect ok
//! expect state SP-100-0001 onboarded
//! ```
//!
//! Entities (serials, update ids) must be introduced before they are
//! referenced; violations are reported at parse time with the line number.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use guardian_core::catalog;
use guardian_core::guardian::registry::Lifecycle;
use guardian_core::guardian::DecommissionMode;
use guardian_core::net::AdversaryScript;
use guardian_core::types::DeviceState;
use guardian_core::update::UpdateReason;

pub const DEFAULT_GUARDIAN: &str = "home";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Directive {
    /// Manufacture a device and power it up (first reset press). `rogue`
    /// devices get no sticker scan and are never introduced to a Guardian.
    Provision { serial: String, model: String, vendor: String, version: String, rogue: bool },
    Reset { serial: String },
    Trust { vendor: String, guardian: String },
    Roster { serial: String, guardian: String },
    /// Scan every sticker provisioned so far, in provisioning order.
    RosterAll { guardian: String },
    Onboard { serial: String, guardian: String },
    OnboardAll { guardian: String },
    Publish { update_id: String, model: String, version: String, reason: UpdateReason, size: usize },
    /// Signed by a key no Guardian trusts.
    Forge { update_id: String, model: String, version: String, reason: UpdateReason },
    TamperFeed { update_id: String, bit: usize },
    Discover { guardian: String },
    Approve { device: String, update_id: String, guardian: String },
    Push { serial: String, update_id: String, guardian: String },
    /// Forward a package with a tag under a key other than the device's.
    PushWrongKey { serial: String, update_id: String, guardian: String },
    Rotate { serial: String, guardian: String },
    Decommission { serial: String, mode: DecommissionMode, guardian: String },
    /// A new owner rosters the device from the transfer note and on-boards
    /// it through the vendor.
    Transfer { serial: String, guardian: String, owner: String },
    /// Present the most recently issued chain password again.
    ReplayTransfer { serial: String },
    VendorRequest { serial: String, c: Option<u32>, owner: String },
    StoreSecret { serial: String, label: String, guardian: String },
    /// Local data collection on the device.
    Sense { serial: String, label: String },
    Adversary { script: String },
    Mitm { serial: String, guess: String },
    ClearAdversaries,
    /// T3: a command frame with a made-up tag on the domain AP, sent from
    /// the MAC of `from` (a compromised peer) or an outside station.
    InjectCommand { serial: String, from: Option<String> },
    /// Present `key_of`'s AP secret (or the one it held before the last
    /// rotation/decommission with `stale`) under `mac_of`'s MAC.
    ProbeAssociate { mac_of: String, key_of: String, stale: bool },
    /// Present `key_of`'s AP secret under every other provisioned MAC.
    ProbeIsolation { key_of: String },
    /// A Status command tagged with the MAC key held before the last
    /// rotation, sent from the Guardian's own address.
    StaleCommand { serial: String },
    ChainSweep { seeds: u32, t: u32 },
    Expect(Expectation),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expectation {
    Ok,
    Error(String),
    State { serial: String, state: DeviceState },
    Lifecycle { serial: String, lifecycle: Option<Lifecycle>, guardian: String },
    KeysAgree { serial: Option<String>, guardian: String },
    AllOnboarded { guardian: String },
    WifiDistinct { guardian: String },
    Epoch { serial: String, epoch: u64, guardian: String },
    Version { serial: String, version: String, guardian: String },
    History { serial: String, versions: Vec<String>, guardian: String },
    Available { serial: String, ids: Vec<String>, guardian: String },
    Alarm { serial: String, guardian: String, present: bool },
    Event { actor: String, kind: String, present: bool },
    Associated { serial: String, yes: bool },
    StoreEmpty { serial: String, empty: bool },
    NoSecrets { serial: String, guardian: String },
    NeverContacted { serial: String },
    TraceClean,
    AdversaryKeys { name: String, keys: u32 },
    Audit,
    VendorC { serial: String, c: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub line: usize,
    pub text: String,
    pub directive: Directive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub steps: Vec<Step>,
}

impl Scenario {
    pub fn expectation_count(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s.directive, Directive::Expect(_))).count()
    }
}

struct Args<'a> {
    pos: Vec<&'a str>,
    kv: BTreeMap<&'a str, &'a str>,
    used: BTreeSet<&'a str>,
}

impl<'a> Args<'a> {
    fn new(words: &[&'a str]) -> Result<Self, String> {
        let mut pos = Vec::new();
        let mut kv = BTreeMap::new();
        for w in words {
            match w.split_once('=') {
                Some((k, v)) => {
                    if kv.insert(k, v).is_some() {
                        return Err(format!("option {k} given twice"));
                    }
                }
                None => pos.push(*w),
            }
        }
        Ok(Args { pos, kv, used: BTreeSet::new() })
    }

    fn pos(&self, i: usize, what: &str) -> Result<&'a str, String> {
        self.pos.get(i).copied().ok_or_else(|| format!("missing {what}"))
    }

    fn opt(&mut self, k: &'a str) -> Option<&'a str> {
        self.used.insert(k);
        self.kv.get(k).copied()
    }

    fn req(&mut self, k: &'a str) -> Result<&'a str, String> {
        self.opt(k).ok_or_else(|| format!("missing {k}="))
    }

    fn guardian(&mut self) -> String {
        self.opt("as").unwrap_or(DEFAULT_GUARDIAN).to_string()
    }

    fn finish(self, max_pos: usize) -> Result<(), String> {
        if self.pos.len() > max_pos {
            return Err(format!("unexpected argument {:?}", self.pos[max_pos]));
        }
        match self.kv.keys().find(|k| !self.used.contains(*k)) {
            Some(k) => Err(format!("unknown option {k}=")),
            None => Ok(()),
        }
    }
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("bad {what} {s:?}"))
}

fn parse_state(s: &str) -> Result<DeviceState, String> {
    Ok(match s {
        "factory" => DeviceState::Factory,
        "provisioning" => DeviceState::Provisioning,
        "onboarded" => DeviceState::Onboarded,
        "decommissioned" => DeviceState::Decommissioned,
        _ => return Err(format!("unknown device state {s:?}")),
    })
}

fn parse_lifecycle(s: &str) -> Result<Option<Lifecycle>, String> {
    Ok(Some(match s {
        "rostered" => Lifecycle::Rostered,
        "onboarded" => Lifecycle::Onboarded,
        "decommissioned" => Lifecycle::Decommissioned,
        "absent" => return Ok(None),
        _ => return Err(format!("unknown lifecycle {s:?}")),
    }))
}

fn list(s: &str) -> Vec<String> {
    if s == "-" {
        Vec::new()
    } else {
        s.split(',').map(str::to_string).collect()
    }
}

/// Parser state: what has been introduced so far.
#[derive(Default)]
struct Known {
    serials: BTreeSet<String>,
    updates: BTreeSet<String>,
}

impl Known {
    fn serial(&self, s: &str) -> Result<String, String> {
        if self.serials.contains(s) {
            Ok(s.to_string())
        } else {
            Err(format!("serial {s} has not been provisioned"))
        }
    }

    fn update(&self, u: &str) -> Result<String, String> {
        if self.updates.contains(u) {
            Ok(u.to_string())
        } else {
            Err(format!("update {u} has not been published"))
        }
    }

    /// Adversary scripts name devices as `@SERIAL`.
    fn check_script(&self, script: &str) -> Result<(), String> {
        let mut probe = String::new();
        for w in script.split_whitespace() {
            match w.split_once("=@") {
                Some((k, who)) => {
                    if who != "guardian" && !who.starts_with("guardian:") {
                        self.serial(who)?;
                    }
                    probe.push_str(&format!("{k}=00:00:00:00:00:00 "));
                }
                None => {
                    probe.push_str(w);
                    probe.push(' ');
                }
            }
        }
        AdversaryScript::parse(&probe).map(|_| ())
    }
}

fn parse_expect(a: &mut Args<'_>, known: &Known) -> Result<(Expectation, usize), String> {
    let what = a.pos(0, "expectation")?;
    let serial = |a: &Args<'_>| -> Result<String, String> { known.serial(a.pos(1, "serial")?) };
    Ok(match what {
        "ok" => (Expectation::Ok, 1),
        "error" => (Expectation::Error(a.pos(1, "error kind")?.to_string()), 2),
        "state" => (Expectation::State { serial: serial(a)?, state: parse_state(a.pos(2, "state")?)? }, 3),
        "lifecycle" => {
            let (s, l) = (serial(a)?, parse_lifecycle(a.pos(2, "lifecycle")?)?);
            (Expectation::Lifecycle { serial: s, lifecycle: l, guardian: a.guardian() }, 3)
        }
        "keys-agree" => {
            let s = match a.pos(1, "serial or all")? {
                "all" => None,
                s => Some(known.serial(s)?),
            };
            (Expectation::KeysAgree { serial: s, guardian: a.guardian() }, 2)
        }
        "all-onboarded" => (Expectation::AllOnboarded { guardian: a.guardian() }, 1),
        "wifi-distinct" => (Expectation::WifiDistinct { guardian: a.guardian() }, 1),
        "epoch" => {
            let (s, e) = (serial(a)?, num(a.pos(2, "epoch")?, "epoch")?);
            (Expectation::Epoch { serial: s, epoch: e, guardian: a.guardian() }, 3)
        }
        "version" => {
            let (s, v) = (serial(a)?, a.pos(2, "version")?.to_string());
            (Expectation::Version { serial: s, version: v, guardian: a.guardian() }, 3)
        }
        "history" => {
            let (s, v) = (serial(a)?, list(a.pos(2, "version list")?));
            (Expectation::History { serial: s, versions: v, guardian: a.guardian() }, 3)
        }
        "available" => {
            let (s, ids) = (serial(a)?, list(a.pos(2, "update list")?));
            (Expectation::Available { serial: s, ids, guardian: a.guardian() }, 3)
        }
        "alarm" | "no-alarm" => {
            let s = serial(a)?;
            (Expectation::Alarm { serial: s, guardian: a.guardian(), present: what == "alarm" }, 2)
        }
        "event" | "no-event" => {
            let actor = a.pos(1, "actor")?.to_string();
            let kind = a.pos(2, "event kind")?.to_string();
            (Expectation::Event { actor, kind, present: what == "event" }, 3)
        }
        "associated" => {
            let yes = match a.pos(2, "yes|no")? {
                "yes" => true,
                "no" => false,
                o => return Err(format!("expected yes|no, got {o:?}")),
            };
            (Expectation::Associated { serial: serial(a)?, yes }, 3)
        }
        "store-empty" => (Expectation::StoreEmpty { serial: serial(a)?, empty: true }, 2),
        "store-nonempty" => (Expectation::StoreEmpty { serial: serial(a)?, empty: false }, 2),
        "no-secrets" => {
            let s = serial(a)?;
            (Expectation::NoSecrets { serial: s, guardian: a.guardian() }, 2)
        }
        "never-contacted" => (Expectation::NeverContacted { serial: serial(a)? }, 2),
        "trace-clean" => (Expectation::TraceClean, 1),
        "adversary" => {
            let name = a.pos(1, "adversary name")?.to_string();
            (Expectation::AdversaryKeys { name, keys: num(a.req("keys")?, "key count")? }, 2)
        }
        "audit" => (Expectation::Audit, 1),
        "vendor-c" => (Expectation::VendorC { serial: serial(a)?, c: num(a.pos(2, "counter")?, "counter")? }, 3),
        other => return Err(format!("unknown expectation {other:?}")),
    })
}

fn parse_line(words: &[&str], raw_rest: &str, known: &mut Known) -> Result<Directive, String> {
    let (head, rest) = words.split_first().expect("non-empty line");
    if *head == "adversary" {
        known.check_script(raw_rest)?;
        return Ok(Directive::Adversary { script: raw_rest.to_string() });
    }
    let mut a = Args::new(rest)?;
    let (d, max_pos) = match *head {
        "provision" | "rogue" => {
            let serial = a.pos(0, "serial")?.to_string();
            if known.serials.contains(&serial) {
                return Err(format!("serial {serial} provisioned twice"));
            }
            let model = match a.opt("model") {
                Some(m) => m.to_string(),
                None => catalog::infer_from_serial(&serial)
                    .map(|m| m.model.to_string())
                    .ok_or_else(|| format!("cannot infer model from {serial}; give model="))?,
            };
            let vendor = match a.opt("vendor") {
                Some(v) => v.to_string(),
                None => catalog::lookup(&model)
                    .map(|m| m.vendor_id.to_string())
                    .ok_or_else(|| format!("unknown model {model}; give vendor="))?,
            };
            let version = a.opt("version").unwrap_or("1.0").to_string();
            known.serials.insert(serial.clone());
            (Directive::Provision { serial, model, vendor, version, rogue: *head == "rogue" }, 1)
        }
        "reset" => (Directive::Reset { serial: known.serial(a.pos(0, "serial")?)? }, 1),
        "trust" => (Directive::Trust { vendor: a.pos(0, "vendor")?.to_string(), guardian: a.guardian() }, 1),
        "roster" => (Directive::Roster { serial: known.serial(a.pos(0, "serial")?)?, guardian: a.guardian() }, 1),
        "onboard" => (Directive::Onboard { serial: known.serial(a.pos(0, "serial")?)?, guardian: a.guardian() }, 1),
        "roster-all" => (Directive::RosterAll { guardian: a.guardian() }, 0),
        "onboard-all" => (Directive::OnboardAll { guardian: a.guardian() }, 0),
        "publish-update" | "forge-update" => {
            let update_id = a.pos(0, "update id")?.to_string();
            if !known.updates.insert(update_id.clone()) {
                return Err(format!("update {update_id} published twice"));
            }
            let model = a.req("model")?.to_string();
            let version = a.req("version")?.to_string();
            let reason: UpdateReason = a.req("reason")?.parse()?;
            if *head == "forge-update" {
                (Directive::Forge { update_id, model, version, reason }, 1)
            } else {
                let size = num(a.opt("size").unwrap_or("64"), "size")?;
                (Directive::Publish { update_id, model, version, reason, size }, 1)
            }
        }
        "tamper-feed" => {
            let update_id = known.update(a.pos(0, "update id")?)?;
            (Directive::TamperFeed { update_id, bit: num(a.req("flip")?, "bit")? }, 1)
        }
        "discover" => (Directive::Discover { guardian: a.guardian() }, 0),
        "approve" => {
            let device = match a.pos(0, "serial or *")? {
                "*" => "*".to_string(),
                s => known.serial(s)?,
            };
            let update_id = known.update(a.pos(1, "update id")?)?;
            (Directive::Approve { device, update_id, guardian: a.guardian() }, 2)
        }
        "push-update" | "push-wrong-key" => {
            let serial = known.serial(a.pos(0, "serial")?)?;
            let update_id = known.update(a.pos(1, "update id")?)?;
            let guardian = a.guardian();
            if *head == "push-update" {
                (Directive::Push { serial, update_id, guardian }, 2)
            } else {
                (Directive::PushWrongKey { serial, update_id, guardian }, 2)
            }
        }
        "rotate" => (Directive::Rotate { serial: known.serial(a.pos(0, "serial")?)?, guardian: a.guardian() }, 1),
        "decommission" => {
            let serial = known.serial(a.pos(0, "serial")?)?;
            let mode = a.req("mode")?.parse()?;
            (Directive::Decommission { serial, mode, guardian: a.guardian() }, 1)
        }
        "transfer" => {
            let serial = known.serial(a.pos(0, "serial")?)?;
            let owner = a.opt("owner").unwrap_or("new-owner").to_string();
            let guardian = a.opt("to").ok_or("missing to=")?.to_string();
            (Directive::Transfer { serial, guardian, owner }, 1)
        }
        "replay-transfer" => (Directive::ReplayTransfer { serial: known.serial(a.pos(0, "serial")?)? }, 1),
        "vendor-request" => {
            let serial = known.serial(a.pos(0, "serial")?)?;
            let c = a.opt("c").map(|c| num(c, "counter")).transpose()?;
            (Directive::VendorRequest { serial, c, owner: a.opt("owner").unwrap_or("someone").to_string() }, 1)
        }
        "store-secret" => {
            let serial = known.serial(a.pos(0, "serial")?)?;
            (Directive::StoreSecret { serial, label: a.req("label")?.to_string(), guardian: a.guardian() }, 1)
        }
        "sense" => {
            let serial = known.serial(a.pos(0, "serial")?)?;
            (Directive::Sense { serial, label: a.req("label")?.to_string() }, 1)
        }
        "mitm" => {
            let serial = known.serial(a.pos(0, "serial")?)?;
            (Directive::Mitm { serial, guess: a.opt("guess").unwrap_or("password").to_string() }, 1)
        }
        "clear-adversaries" => (Directive::ClearAdversaries, 0),
        "inject-command" => {
            let serial = known.serial(a.pos(0, "serial")?)?;
            let from = a.opt("from").map(|f| known.serial(f)).transpose()?;
            (Directive::InjectCommand { serial, from }, 1)
        }
        "probe-associate" => {
            let mac_of = known.serial(a.pos(0, "serial")?)?;
            let key_of = known.serial(a.req("key")?)?;
            let stale = match a.opt("stale") {
                None | Some("no") => false,
                Some("yes") => true,
                Some(o) => return Err(format!("stale= expects yes|no, got {o:?}")),
            };
            (Directive::ProbeAssociate { mac_of, key_of, stale }, 1)
        }
        "probe-isolation" => (Directive::ProbeIsolation { key_of: known.serial(a.pos(0, "serial")?)? }, 1),
        "stale-command" => (Directive::StaleCommand { serial: known.serial(a.pos(0, "serial")?)? }, 1),
        "chain-sweep" => {
            let seeds = num(a.opt("seeds").unwrap_or("10"), "seed count")?;
            let t = num(a.opt("t").unwrap_or("200"), "chain length")?;
            (Directive::ChainSweep { seeds, t }, 0)
        }
        "expect" => {
            let (e, max) = parse_expect(&mut a, known)?;
            (Directive::Expect(e), max)
        }
        other => return Err(format!("unknown directive {other:?}")),
    };
    a.finish(max_pos)?;
    Ok(d)
}

/// `provision-batch PREFIX count=N [model= version=]` expands to N
/// `provision PREFIX-0001 ...` lines.
fn expand_batch(words: &[&str]) -> Result<Vec<String>, String> {
    let mut a = Args::new(&words[1..])?;
    let prefix = a.pos(0, "serial prefix")?;
    let count: usize = num(a.req("count")?, "count")?;
    let extra: Vec<String> =
        ["model", "vendor", "version"].iter().filter_map(|k| a.opt(k).map(|v| format!("{k}={v}"))).collect();
    a.finish(1)?;
    Ok((1..=count).map(|i| format!("provision {prefix}-{i:04} {}", extra.join(" ")).trim_end().to_string()).collect())
}

pub fn parse(text: &str) -> Result<Scenario, ParseError> {
    let mut name = None;
    let mut seed = None;
    let mut steps = Vec::new();
    let mut known = Known::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| ParseError { line, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        let words: Vec<&str> = content.split_whitespace().collect();
        let Some(head) = words.first() else { continue };
        match *head {
            "name" => name = Some(words.get(1).ok_or_else(|| err("missing name".into()))?.to_string()),
            "seed" => seed = Some(num(words.get(1).unwrap_or(&""), "seed").map_err(err)?),
            "provision-batch" => {
                for expanded in expand_batch(&words).map_err(err)? {
                    let w: Vec<&str> = expanded.split_whitespace().collect();
                    let d = parse_line(&w, "", &mut known).map_err(err)?;
                    steps.push(Step { line, text: expanded.clone(), directive: d });
                }
            }
            _ => {
                let raw_rest = content[head.len()..].trim();
                let d = parse_line(&words, raw_rest, &mut known).map_err(err)?;
                steps.push(Step { line, text: content.to_string(), directive: d });
            }
        }
    }
    Ok(Scenario {
        name: name.ok_or(ParseError { line: 0, message: "missing `name`".into() })?,
        seed: seed.unwrap_or(0),
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_validates_references() {
        let s = parse("name t\nseed 5\nprovision SP-100-0001\nroster SP-100-0001 # scan\nexpect ok\n").unwrap();
        assert_eq!((s.name.as_str(), s.seed, s.steps.len()), ("t", 5, 3));
        assert!(matches!(&s.steps[0].directive, Directive::Provision { model, vendor, .. } if model == "SP-100" && vendor == "acme"));

        let e = parse("name t\nroster SP-100-0001\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("not been provisioned"));
        let e = parse("name t\nprovision SP-100-1\nfrobnicate\n").unwrap_err();
        assert_eq!((e.line, e.message.as_str()), (3, "unknown directive \"frobnicate\""));
        assert!(parse("name t\nprovision SP-100-1\npush-update SP-100-1 U1\n").is_err());
        assert!(parse("name t\nprovision SP-100-1 bogus=1\n").is_err());
        assert!(parse("seed 1\n").is_err());
    }

    #[test]
    fn batch_and_adversary() {
        let s = parse("name b\nprovision-batch SP-100 count=3\nadversary threat=T4 kind=pake dst=@SP-100-0002 do=drop\n")
            .unwrap();
        assert_eq!(s.steps.len(), 4);
        assert_eq!(s.steps[2].text, "provision SP-100-0003");
        assert!(parse("name b\nadversary threat=T4 dst=@SP-100-0009 do=drop\n").is_err());
        assert!(parse("name b\nadversary threat=T1 scope=local do=drop\n").is_err());
    }
}
