//! `guardian`: scenario runner and operator console.
//!
//! Exit status: 0 success, 1 expectation failure or refused operation,
//! 2 usage or parse error, 3 internal error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use guardian_cli::runner::{self, guardian_mac, Report};
use guardian_cli::{bundled, scenario};
use guardian_core::catalog;
use guardian_core::crypto::{chain_init, chain_password, kdf, Digest};
use guardian_core::device::DeviceSim;
use guardian_core::guardian::registry::Lifecycle;
use guardian_core::guardian::{persist, DecommissionMode, Guardian, GuardianError, TransferNote};
use guardian_core::net::Fabric;
use guardian_core::storage::StorageKey;
use guardian_core::types::DeviceClass;
use guardian_core::update::{UpdateFeed, UpdateReason};
use guardian_core::vendor::{Vendor, CHAIN_LENGTH};

#[derive(Parser)]
#[command(name = "guardian", version, about = "Guardian key management: scenarios and operator commands")]
struct Cli {
    #[command(flatten)]
    opts: Opts,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Opts {
    /// World seed; overrides the scenario's own.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Guardian registry file.
    #[arg(long, global = true, default_value = "registry.json")]
    registry: PathBuf,
    /// Vendor state file.
    #[arg(long, global = true, default_value = "vendor.json")]
    vendor: PathBuf,
    /// Simulated device hardware.
    #[arg(long, global = true, default_value = "devices.json")]
    devices: PathBuf,
    /// Update feed directory.
    #[arg(long, global = true)]
    feed: Option<PathBuf>,
    /// Output directory for trace and report files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Environment variable holding the storage passphrase or hex key.
    #[arg(long, global = true, default_value = "GUARDIAN_STORAGE_KEY")]
    storage_key_env: String,
    /// Guardian name used when a new registry is created.
    #[arg(long, global = true, default_value = scenario::DEFAULT_GUARDIAN)]
    name: String,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario file (or bundled scenario by name).
    RunScenario { scenario: String },
    /// Run every bundled scenario.
    RunAll,
    /// List bundled scenarios, or print one.
    Scenarios { name: Option<String> },
    /// Manufacture a device (vendor side) and power it up.
    Provision {
        serial: String,
        #[arg(long)]
        model: Option<String>,
        #[arg(long, default_value = "1.0")]
        firmware: String,
    },
    /// Press the hard-reset button on a device.
    Reset { serial: String },
    /// Trust the vendor in the vendor file as the update signer for its models.
    Trust,
    /// Scan sticker payloads into the registry.
    Roster { qr: Vec<String> },
    /// On-board one device, or every rostered one.
    Onboard {
        serial: Option<String>,
        #[arg(long, conflicts_with = "serial")]
        all: bool,
    },
    /// Sign and publish a firmware update to the feed (vendor side).
    Publish {
        update: String,
        #[arg(long)]
        model: String,
        #[arg(long)]
        version: String,
        #[arg(long, value_enum)]
        reason: Reason,
        /// Firmware image; a small placeholder when absent.
        #[arg(long)]
        payload: Option<PathBuf>,
    },
    /// Discover, approve and push firmware updates.
    #[command(subcommand)]
    Updates(UpdatesCmd),
    /// Rotate a device's working keys and AP secret.
    Rotate { serial: String },
    /// Wipe a device and its registry secrets, for recycling or transfer.
    Decommission {
        serial: String,
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Print the transfer note for a decommissioned device.
    TransferInfo { serial: String },
    /// Take over a transferred device: roster from the note and on-board via the vendor.
    Transfer {
        /// Transfer note JSON file.
        note: PathBuf,
        #[arg(long, default_value = "new-owner")]
        owner: String,
    },
    /// Inspect the registry.
    #[command(subcommand)]
    Registry(RegistryCmd),
    /// Print reference values for the chain and key derivation.
    #[command(subcommand)]
    Vectors(VectorsCmd),
}

#[derive(Subcommand)]
enum UpdatesCmd {
    Discover,
    Approve {
        #[arg(long, default_value = "*")]
        device: String,
        #[arg(long)]
        update: String,
    },
    Push {
        #[arg(long)]
        device: String,
        #[arg(long)]
        update: String,
    },
}

#[derive(Subcommand)]
enum RegistryCmd {
    Show,
}

#[derive(Subcommand)]
enum VectorsCmd {
    /// The verifier h^t(w) and w_1..w_t for a hex seed.
    Chain {
        #[arg(value_name = "SEED_HEX")]
        chain_seed: String,
        #[arg(long, default_value_t = CHAIN_LENGTH)]
        t: u32,
    },
    Kdf {
        master_hex: String,
        label: String,
        #[arg(default_value = "")]
        context: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Reason {
    Security,
    Functionality,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Recycle,
    Transfer,
}

enum Fail {
    Refused(String),
    Usage(String),
    Internal(String),
}

impl From<GuardianError> for Fail {
    fn from(e: GuardianError) -> Self {
        Fail::Refused(format!("{}: {e}", runner::error_kind(&e)))
    }
}

type Res<T> = Result<T, Fail>;

fn internal(e: impl std::fmt::Display) -> Fail {
    Fail::Internal(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::RunScenario { scenario } => run_scenario(&cli.opts, &scenario),
        Cmd::RunAll => run_all(&cli.opts),
        Cmd::Scenarios { name } => scenarios(name),
        cmd => operate(&cli.opts, cmd).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Fail::Refused(m)) => {
            eprintln!("refused: {m}");
            ExitCode::from(1)
        }
        Err(Fail::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Fail::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(3)
        }
    }
}

// ---- scenarios -------------------------------------------------------------

fn scenarios(name: Option<String>) -> Res<bool> {
    match name {
        None => bundled::SCENARIOS.iter().for_each(|(n, _)| println!("{n}")),
        Some(n) => print!("{}", bundled::get(&n).ok_or_else(|| Fail::Usage(format!("no bundled scenario {n}")))?),
    }
    Ok(true)
}

fn load_scenario(arg: &str) -> Res<String> {
    if let Some(text) = bundled::get(arg) {
        return Ok(text.to_string());
    }
    std::fs::read_to_string(arg).map_err(|e| Fail::Usage(format!("{arg}: {e}")))
}

fn execute(opts: &Opts, text: &str, out: Option<&Path>) -> Res<Report> {
    let sc = scenario::parse(text).map_err(|e| Fail::Usage(e.to_string()))?;
    let tmp = tempfile::tempdir().map_err(internal)?;
    let feed = opts.feed.clone().unwrap_or_else(|| tmp.path().join("feed"));
    let (report, world) = runner::run(&sc, opts.seed, &feed).map_err(internal)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(internal)?;
        std::fs::write(dir.join("trace.tsv"), &report.trace).map_err(internal)?;
        std::fs::write(dir.join("report.txt"), report.render()).map_err(internal)?;
        if let Ok(key) = storage_key(opts) {
            for (name, g) in &world.guardians {
                persist::save(g, &dir.join(format!("registry-{name}.json")), &key).map_err(internal)?;
            }
            for (id, v) in &world.vendors {
                std::fs::write(dir.join(format!("vendor-{id}.json")), v.to_json(&key)).map_err(internal)?;
            }
        }
    }
    Ok(report)
}

fn run_scenario(opts: &Opts, arg: &str) -> Res<bool> {
    let text = load_scenario(arg)?;
    let report = execute(opts, &text, opts.out.as_deref())?;
    print!("{}", report.render());
    if let Some(dir) = &opts.out {
        println!("trace: {}", dir.join("trace.tsv").display());
    }
    Ok(report.passed())
}

fn run_all(opts: &Opts) -> Res<bool> {
    let mut all = true;
    for (name, text) in bundled::SCENARIOS {
        let out = opts.out.as_ref().map(|d| d.join(name));
        let started = std::time::Instant::now();
        let report = execute(opts, text, out.as_deref())?;
        let n = report.results.iter().filter(|r| r.pass).count();
        let verdict = if report.passed() { "pass" } else { "FAIL" };
        println!("{verdict} {name} ({n}/{} expectations, {:.2}s)", report.results.len(), started.elapsed().as_secs_f64());
        for f in report.failures() {
            println!("    L{}: {} ({})", f.line, f.text, f.detail);
        }
        all &= report.passed();
    }
    Ok(all)
}

// ---- operator commands -----------------------------------------------------

fn storage_key(opts: &Opts) -> Res<StorageKey> {
    let v = std::env::var(&opts.storage_key_env)
        .map_err(|_| Fail::Usage(format!("set {} to the storage passphrase", opts.storage_key_env)))?;
    StorageKey::from_text(&v).ok_or_else(|| Fail::Usage(format!("{} is empty", opts.storage_key_env)))
}

/// Persisted state for one operator command: the simulated radio world
/// (devices), plus whichever of vendor and registry the command touches.
struct Desk {
    key: StorageKey,
    fabric: Fabric,
    guardian: Option<Guardian>,
    vendor: Option<Vendor>,
}

impl Desk {
    fn open(opts: &Opts) -> Res<Self> {
        let key = storage_key(opts)?;
        let mut fabric = Fabric::new(opts.seed.unwrap_or(0));
        if opts.devices.exists() {
            let text = std::fs::read_to_string(&opts.devices).map_err(internal)?;
            let devices: Vec<DeviceSim> =
                serde_json::from_str(&text).map_err(|e| internal(format!("{}: {e}", opts.devices.display())))?;
            for d in devices {
                fabric.add_device(d);
            }
        }
        Ok(Desk { key, fabric, guardian: None, vendor: None })
    }

    fn guardian(&mut self, opts: &Opts) -> Res<&mut Guardian> {
        if self.guardian.is_none() {
            let g = if opts.registry.exists() {
                persist::load(&opts.registry, &self.key).map_err(|e| internal(format!("{}: {e}", opts.registry.display())))?
            } else {
                Guardian::new(&opts.name, guardian_mac(&opts.name), opts.seed.unwrap_or(0))
            };
            g.attach(&mut self.fabric);
            // stations that were associated when the state was saved rejoin
            let onboarded: Vec<String> =
                g.registry.records().filter(|r| r.lifecycle == Lifecycle::Onboarded).map(|r| r.device_id.clone()).collect();
            for id in onboarded {
                self.fabric.connect_device(&id, &g.ap_table);
            }
            self.guardian = Some(g);
        }
        Ok(self.guardian.as_mut().expect("loaded"))
    }

    fn vendor(&mut self, opts: &Opts, vendor_id: Option<&str>) -> Res<&mut Vendor> {
        if self.vendor.is_none() {
            let v = if opts.vendor.exists() {
                let text = std::fs::read_to_string(&opts.vendor).map_err(internal)?;
                Vendor::from_json(&text, &self.key).map_err(|e| internal(format!("{}: {e}", opts.vendor.display())))?
            } else {
                let id = vendor_id.ok_or_else(|| Fail::Usage(format!("{} does not exist", opts.vendor.display())))?;
                Vendor::from_seed(id, opts.seed.unwrap_or(0))
            };
            self.vendor = Some(v);
        }
        let v = self.vendor.as_mut().expect("loaded");
        if let Some(id) = vendor_id {
            if v.vendor_id != id {
                return Err(Fail::Usage(format!("vendor file belongs to {}, not {id}", v.vendor_id)));
            }
        }
        Ok(v)
    }

    fn save(&self, opts: &Opts) -> Res<()> {
        let devices: Vec<&DeviceSim> = self.fabric.devices().collect();
        std::fs::write(&opts.devices, serde_json::to_string_pretty(&devices).map_err(internal)? + "\n").map_err(internal)?;
        if let Some(g) = &self.guardian {
            persist::save(g, &opts.registry, &self.key).map_err(internal)?;
        }
        if let Some(v) = &self.vendor {
            std::fs::write(&opts.vendor, v.to_json(&self.key)).map_err(internal)?;
        }
        if let Some(dir) = &opts.out {
            std::fs::create_dir_all(dir).map_err(internal)?;
            std::fs::write(dir.join("trace.tsv"), self.fabric.trace().export()).map_err(internal)?;
        }
        Ok(())
    }
}

fn feed(opts: &Opts) -> Res<UpdateFeed> {
    let dir = opts.feed.clone().ok_or_else(|| Fail::Usage("--feed <dir> is required".into()))?;
    std::fs::create_dir_all(&dir).map_err(internal)?;
    Ok(UpdateFeed::new(dir))
}

fn operate(opts: &Opts, cmd: Cmd) -> Res<()> {
    if let Cmd::Vectors(v) = cmd {
        return vectors(v);
    }
    let mut desk = Desk::open(opts)?;
    // state is written back even when the operation itself was refused:
    // counters consumed and alarms raised must not be lost
    let result = dispatch(opts, &mut desk, cmd);
    desk.save(opts)?;
    result
}

fn dispatch(opts: &Opts, desk: &mut Desk, cmd: Cmd) -> Res<()> {
    match cmd {
        Cmd::Provision { serial, model, firmware } => {
            let model = match model {
                Some(m) => m,
                None => catalog::infer_from_serial(&serial)
                    .map(|m| m.model.to_string())
                    .ok_or_else(|| Fail::Usage(format!("cannot infer model from {serial}; give --model")))?,
            };
            let info = catalog::lookup(&model);
            let vendor_id = info.map(|m| m.vendor_id);
            let class = info.map(|m| m.class).unwrap_or(DeviceClass::MidLevel);
            let v = desk.vendor(opts, vendor_id)?;
            let mac = v.allocate_mac();
            let (dev, qr, _) = v.provision_device(&serial, mac, &model, class, &firmware).map_err(|e| Fail::Refused(e.to_string()))?;
            desk.fabric.add_device(dev);
            desk.fabric.press_reset(&serial);
            println!("{qr}");
        }
        Cmd::Reset { serial } => {
            if !desk.fabric.press_reset(&serial) {
                return Err(Fail::Usage(format!("no device {serial}")));
            }
            let d = desk.fabric.device(&serial).expect("exists");
            println!("{serial} {} reset_count={}", d.state(), d.read_reset_counter().map_or("-".into(), |c| c.to_string()));
        }
        Cmd::Trust => {
            let v = desk.vendor(opts, None)?;
            let (id, pk) = (v.vendor_id.clone(), v.public_key());
            desk.guardian(opts)?.trust_vendor(&id, pk);
            println!("trusting {id}");
        }
        Cmd::Roster { qr } => {
            if qr.is_empty() {
                return Err(Fail::Usage("give at least one sticker payload".into()));
            }
            let g = desk.guardian(opts)?;
            for q in qr {
                let r = g.roster_scan(&q)?;
                println!("rostered {} ({}, {})", r.device_id, r.model, r.description);
            }
        }
        Cmd::Onboard { serial, all } => {
            desk.guardian(opts)?;
            let mut first_err = None;
            let results = match (serial, all) {
                (Some(s), false) => {
                    let Desk { fabric, guardian, .. } = desk;
                    let r = guardian.as_mut().expect("loaded").onboard(fabric, &s);
                    vec![(s, r)]
                }
                (None, true) => {
                    let Desk { fabric, guardian, .. } = desk;
                    guardian.as_mut().expect("loaded").onboard_all(fabric)
                }
                _ => return Err(Fail::Usage("give a serial or --all".into())),
            };
            for (id, r) in results {
                match r {
                    Ok(()) => println!("{id} onboarded"),
                    Err(e) => {
                        println!("{id} failed: {e}");
                        first_err.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_err {
                return Err(e.into());
            }
        }
        Cmd::Publish { update, model, version, reason, payload } => {
            let feed = feed(opts)?;
            let body = match payload {
                Some(p) => std::fs::read(&p).map_err(|e| Fail::Usage(format!("{}: {e}", p.display())))?,
                None => format!("{model} firmware {version}").into_bytes(),
            };
            let reason = match reason {
                Reason::Security => UpdateReason::Security,
                Reason::Functionality => UpdateReason::Functionality,
            };
            let v = desk.vendor(opts, None)?;
            let (_, e) = v.publish_update(&feed, Some(&update), &model, &version, &body, reason).map_err(|e| Fail::Refused(e.to_string()))?;
            println!("published {} {} {} -> {}", e.update_id, e.model, e.version, e.filename);
        }
        Cmd::Updates(u) => {
            let g = desk.guardian(opts)?;
            match u {
                UpdatesCmd::Discover => {
                    let feed = feed(opts)?;
                    let n = g.discover_updates(&feed)?;
                    for r in g.registry.records().filter(|r| !r.available_updates.is_empty()) {
                        for a in &r.available_updates {
                            println!("{}\t{}\t{}\t{}", r.device_id, a.update_id, a.version, a.reason);
                        }
                    }
                    println!("{n} listings");
                }
                UpdatesCmd::Approve { device, update } => {
                    g.approve(&device, &update);
                    println!("approved {update} for {device}");
                }
                UpdatesCmd::Push { device, update } => {
                    let feed = feed(opts)?;
                    let Desk { fabric, guardian, .. } = desk;
                    let v = guardian.as_mut().expect("loaded").push_update(fabric, &device, &update, &feed)?;
                    println!("{device} now runs {v}");
                }
            }
        }
        Cmd::Rotate { serial } => {
            desk.guardian(opts)?;
            let Desk { fabric, guardian, .. } = desk;
            let epoch = guardian.as_mut().expect("loaded").rotate_keys(fabric, &serial)?;
            println!("{serial} at epoch {epoch}");
        }
        Cmd::Decommission { serial, mode } => {
            let mode = match mode {
                Mode::Recycle => DecommissionMode::Recycle,
                Mode::Transfer => DecommissionMode::Transfer,
            };
            desk.guardian(opts)?;
            let Desk { fabric, guardian, .. } = desk;
            let rep = guardian.as_mut().expect("loaded").decommission(fabric, &serial, mode)?;
            if !rep.acknowledged {
                eprintln!("warning: {serial} did not confirm the wipe");
            }
            match rep.transfer_note {
                Some(n) => println!("{}", serde_json::to_string_pretty(&n).map_err(internal)?),
                None => println!("{serial} decommissioned"),
            }
        }
        Cmd::TransferInfo { serial } => {
            let g = desk.guardian(opts)?;
            let r = g.registry.get(&serial).ok_or_else(|| GuardianError::NotInRegistry(serial.clone()))?;
            if r.lifecycle != Lifecycle::Decommissioned {
                return Err(Fail::Refused(format!("{serial} is {}; decommission it first", r.lifecycle)));
            }
            let mac = r.mac.ok_or_else(|| Fail::Refused(format!("{serial} was never on-boarded")))?;
            let note = TransferNote { serial: r.device_id.clone(), mac, vendor_id: r.vendor_id.clone(), model: r.model.clone() };
            println!("{}", serde_json::to_string_pretty(&note).map_err(internal)?);
        }
        Cmd::Transfer { note, owner } => {
            let text = std::fs::read_to_string(&note).map_err(|e| Fail::Usage(format!("{}: {e}", note.display())))?;
            let note: TransferNote = serde_json::from_str(&text).map_err(|e| Fail::Usage(format!("transfer note: {e}")))?;
            desk.vendor(opts, Some(&note.vendor_id))?;
            let g = desk.guardian(opts)?;
            g.roster_transfer(&note)?;
            let Desk { fabric, guardian, vendor, .. } = desk;
            let (g, v) = (guardian.as_mut().expect("loaded"), vendor.as_mut().expect("loaded"));
            g.onboard_transfer(fabric, v, &note.serial, &owner)?;
            println!("{} onboarded via transfer", note.serial);
        }
        Cmd::Registry(RegistryCmd::Show) => {
            let g = desk.guardian(opts)?;
            println!("guardian {} mac={} devices={}", g.name, g.mac, g.registry.len());
            for r in g.registry.records() {
                println!("{}", r.device_id);
                println!("  mac            {}", r.mac.map_or("-".into(), |m| m.to_string()));
                println!("  vendor/model   {} {} ({}, {})", r.vendor_id, r.model, r.description, r.device_class);
                println!("  lifecycle      {}", r.lifecycle);
                println!("  installed      {}", r.installed_version.as_deref().unwrap_or("-"));
                let hist: Vec<String> = r.version_history.iter().map(|h| h.version.clone()).collect();
                println!("  history        {}", if hist.is_empty() { "-".into() } else { hist.join(" -> ") });
                let avail: Vec<String> = r.available_updates.iter().map(|a| format!("{}={}", a.update_id, a.version)).collect();
                println!("  available      {}", if avail.is_empty() { "-".into() } else { avail.join(", ") });
                println!("  keys           {}", r.keyset.as_ref().map_or("none".into(), |k| format!("held, epoch {}", k.epoch)));
                println!("  authenticator  {}", if r.d_pw.is_some() { "held" } else { "none" });
                println!("  flags          {}", serde_json::to_string(&r.flags).map_err(internal)?);
            }
        }
        Cmd::RunScenario { .. } | Cmd::RunAll | Cmd::Scenarios { .. } | Cmd::Vectors(_) => unreachable!("handled in main"),
    }
    Ok(())
}

fn vectors(v: VectorsCmd) -> Res<()> {
    match v {
        VectorsCmd::Chain { chain_seed, t } => {
            let raw = hex::decode(&chain_seed).map_err(|e| Fail::Usage(format!("seed: {e}")))?;
            let seed = Digest(raw.try_into().map_err(|_| Fail::Usage("seed must be 32 bytes of hex".into()))?);
            // index 0 is the verifier h^t(w) the device is manufactured with
            let verifier = chain_init(&seed, t).map_err(|e| Fail::Usage(e.to_string()))?.verifier();
            println!("0\t{}", verifier.to_hex());
            for i in 1..=t {
                let w = chain_password(&seed, t, i).map_err(|e| Fail::Usage(e.to_string()))?;
                println!("{i}\t{}", w.to_hex());
            }
        }
        VectorsCmd::Kdf { master_hex, label, context } => {
            let master = hex::decode(&master_hex).map_err(|e| Fail::Usage(format!("master: {e}")))?;
            let k = kdf(&master, &label, context.as_bytes()).map_err(|e| Fail::Usage(e.to_string()))?;
            println!("{}", hex::encode(k.0));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        super::Cli::command().debug_assert();
    }
}
