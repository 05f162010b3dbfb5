//! Frame body formats shared by the Guardian and devices.
//!
//! * `Status` frames carry [`StatusMsg`] in the clear (provisioning AP only).
//! * `PakeBlob` frames carry either a raw PAKE blob or a [`HandoffMsg`].
//! * `SealedPayload` frames carry a [`Sealed`] AEAD ciphertext.
//! * `Command` frames carry an [`Envelope`]: epoch, counter, body and an
//!   HMAC under the current working MAC key.

use crate::crypto::{mac_compute, mac_verify, Digest, Key, Tag};
use crate::types::DeviceState;
use crate::wire::{Reader, WireError, Writer};

pub const LABEL_G2D: &str = "cmd/g2d";
pub const LABEL_D2G: &str = "cmd/d2g";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub serial: String,
    pub model: String,
    pub state: DeviceState,
    pub onboarded_flag: bool,
    /// Present only while the device is in provisioning mode.
    pub reset_count: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StatusMsg {
    Hello,
    Report(Report),
    HandoffResult { accepted: bool },
}

impl StatusMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            StatusMsg::Hello => w.u8(1),
            StatusMsg::Report(r) => {
                w.u8(2).str(&r.serial).str(&r.model).u8(r.state.code()).u8(r.onboarded_flag as u8);
                match r.reset_count {
                    Some(c) => w.u8(1).u64(c as u64),
                    None => w.u8(0),
                }
            }
            StatusMsg::HandoffResult { accepted } => w.u8(3).u8(*accepted as u8),
        };
        w.finish()
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b);
        let msg = match r.u8()? {
            1 => StatusMsg::Hello,
            2 => {
                let serial = r.str()?.to_string();
                let model = r.str()?.to_string();
                let code = r.u8()?;
                let state = DeviceState::from_code(code).ok_or(WireError::UnknownTag(code))?;
                let onboarded_flag = r.u8()? != 0;
                let reset_count = match r.u8()? {
                    0 => None,
                    _ => Some(u32::try_from(r.u64()?).map_err(|_| WireError::Truncated)?),
                };
                StatusMsg::Report(Report { serial, model, state, onboarded_flag, reset_count })
            }
            3 => StatusMsg::HandoffResult { accepted: r.u8()? != 0 },
            t => return Err(WireError::UnknownTag(t)),
        };
        r.finish()?;
        Ok(msg)
    }
}

/// Unauthenticated ephemeral exchange that precedes a transfer on-boarding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandoffMsg {
    Offer([u8; 32]),
    Answer([u8; 32]),
}

const HANDOFF_MAGIC: u8 = b'E';

impl HandoffMsg {
    pub fn encode(&self) -> Vec<u8> {
        let (t, p) = match self {
            HandoffMsg::Offer(p) => (1, p),
            HandoffMsg::Answer(p) => (2, p),
        };
        Writer::new().u8(HANDOFF_MAGIC).u8(t).raw(p).finish()
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b);
        let magic = r.u8()?;
        if magic != HANDOFF_MAGIC {
            return Err(WireError::UnknownTag(magic));
        }
        let t = r.u8()?;
        let p = r.array::<32>()?;
        r.finish()?;
        match t {
            1 => Ok(HandoffMsg::Offer(p)),
            2 => Ok(HandoffMsg::Answer(p)),
            t => Err(WireError::UnknownTag(t)),
        }
    }

    pub fn is_handoff(b: &[u8]) -> bool {
        b.first() == Some(&HANDOFF_MAGIC)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    WifiKey = 1,
    TransferPassword = 2,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sealed {
    pub purpose: Purpose,
    pub counter: u64,
    pub ciphertext: Vec<u8>,
}

impl Sealed {
    pub fn encode(&self) -> Vec<u8> {
        Writer::new().u8(self.purpose as u8).u64(self.counter).bytes(&self.ciphertext).finish()
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b);
        let purpose = match r.u8()? {
            1 => Purpose::WifiKey,
            2 => Purpose::TransferPassword,
            t => return Err(WireError::UnknownTag(t)),
        };
        let counter = r.u64()?;
        let ciphertext = r.bytes()?.to_vec();
        r.finish()?;
        Ok(Sealed { purpose, counter, ciphertext })
    }
}

pub fn wifi_aad(serial: &str, epoch: u64) -> Vec<u8> {
    Writer::new().str("wifi").str(serial).u64(epoch).finish()
}

pub fn transfer_aad(serial: &str, c: u32) -> Vec<u8> {
    Writer::new().str("transfer").str(serial).u64(c as u64).finish()
}

pub fn store_aad(serial: &str, label: &str) -> Vec<u8> {
    Writer::new().str("store").str(serial).str(label).finish()
}

/// Guardian-to-device commands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Status,
    PrepareUpdate,
    /// Canonical package encoding and its tag under the working MAC key.
    InstallUpdate { package: Vec<u8>, tag: Tag },
    /// The new access-point secret, sealed under the current encryption key
    /// with the envelope counter as nonce.
    RotatePrepare { epoch: u64, sealed_wifi: Vec<u8> },
    RotateCommit { epoch: u64 },
    Wipe,
    StoreSecret { label: String, sealed: Vec<u8> },
}

impl Command {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Command::Status => w.u8(1),
            Command::PrepareUpdate => w.u8(2),
            Command::InstallUpdate { package, tag } => w.u8(3).bytes(package).raw(&tag.0),
            Command::RotatePrepare { epoch, sealed_wifi } => w.u8(4).u64(*epoch).bytes(sealed_wifi),
            Command::RotateCommit { epoch } => w.u8(5).u64(*epoch),
            Command::Wipe => w.u8(6),
            Command::StoreSecret { label, sealed } => w.u8(7).str(label).bytes(sealed),
        };
        w.finish()
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b);
        let cmd = match r.u8()? {
            1 => Command::Status,
            2 => Command::PrepareUpdate,
            3 => Command::InstallUpdate { package: r.bytes()?.to_vec(), tag: Tag(r.array()?) },
            4 => Command::RotatePrepare { epoch: r.u64()?, sealed_wifi: r.bytes()?.to_vec() },
            5 => Command::RotateCommit { epoch: r.u64()? },
            6 => Command::Wipe,
            7 => Command::StoreSecret { label: r.str()?.to_string(), sealed: r.bytes()?.to_vec() },
            t => return Err(WireError::UnknownTag(t)),
        };
        r.finish()?;
        Ok(cmd)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Status => "status",
            Command::PrepareUpdate => "prepare-update",
            Command::InstallUpdate { .. } => "install-update",
            Command::RotatePrepare { .. } => "rotate-prepare",
            Command::RotateCommit { .. } => "rotate-commit",
            Command::Wipe => "wipe",
            Command::StoreSecret { .. } => "store-secret",
        }
    }
}

/// Device-to-Guardian replies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Onboarded,
    Status { state: DeviceState, version: String, firmware: Digest, epoch: u64 },
    UpdateReady,
    Installed { version: String },
    Rejected { reason: String },
    RotatePrepared { epoch: u64 },
    RotateCommitted { epoch: u64 },
    Wiped,
    Stored,
    Unsupported,
}

impl Reply {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Reply::Onboarded => w.u8(1),
            Reply::Status { state, version, firmware, epoch } => {
                w.u8(2).u8(state.code()).str(version).raw(firmware.as_bytes()).u64(*epoch)
            }
            Reply::UpdateReady => w.u8(3),
            Reply::Installed { version } => w.u8(4).str(version),
            Reply::Rejected { reason } => w.u8(5).str(reason),
            Reply::RotatePrepared { epoch } => w.u8(6).u64(*epoch),
            Reply::RotateCommitted { epoch } => w.u8(7).u64(*epoch),
            Reply::Wiped => w.u8(8),
            Reply::Stored => w.u8(9),
            Reply::Unsupported => w.u8(10),
        };
        w.finish()
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b);
        let reply = match r.u8()? {
            1 => Reply::Onboarded,
            2 => {
                let code = r.u8()?;
                Reply::Status {
                    state: DeviceState::from_code(code).ok_or(WireError::UnknownTag(code))?,
                    version: r.str()?.to_string(),
                    firmware: Digest(r.array()?),
                    epoch: r.u64()?,
                }
            }
            3 => Reply::UpdateReady,
            4 => Reply::Installed { version: r.str()?.to_string() },
            5 => Reply::Rejected { reason: r.str()?.to_string() },
            6 => Reply::RotatePrepared { epoch: r.u64()? },
            7 => Reply::RotateCommitted { epoch: r.u64()? },
            8 => Reply::Wiped,
            9 => Reply::Stored,
            10 => Reply::Unsupported,
            t => return Err(WireError::UnknownTag(t)),
        };
        r.finish()?;
        Ok(reply)
    }
}

/// MAC-authenticated container for commands and replies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub epoch: u64,
    pub counter: u64,
    pub body: Vec<u8>,
    pub tag: Tag,
}

fn envelope_input(label: &str, serial: &str, epoch: u64, counter: u64, body: &[u8]) -> Vec<u8> {
    Writer::new().str(label).str(serial).u64(epoch).u64(counter).bytes(body).finish()
}

impl Envelope {
    pub fn seal(k_mac: &Key, label: &str, serial: &str, epoch: u64, counter: u64, body: Vec<u8>) -> Self {
        let tag = mac_compute(k_mac, &envelope_input(label, serial, epoch, counter, &body));
        Envelope { epoch, counter, body, tag }
    }

    pub fn verify(&self, k_mac: &Key, label: &str, serial: &str) -> bool {
        mac_verify(k_mac, &envelope_input(label, serial, self.epoch, self.counter, &self.body), &self.tag)
    }

    pub fn encode(&self) -> Vec<u8> {
        Writer::new().u64(self.epoch).u64(self.counter).bytes(&self.body).raw(&self.tag.0).finish()
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(b);
        let env = Envelope { epoch: r.u64()?, counter: r.u64()?, body: r.bytes()?.to_vec(), tag: Tag(r.array()?) };
        r.finish()?;
        Ok(env)
    }
}

/// PAKE identities. A transfer on-boarding binds the preceding handoff
/// transcript into both identities so the PAKE cannot be spliced onto a
/// different handoff.
pub fn pake_ids(guardian: &crate::types::MacAddr, serial: &str, binding: Option<&Digest>) -> (Vec<u8>, Vec<u8>) {
    let suffix = binding.map(|d| format!("|handoff:{}", d.to_hex())).unwrap_or_default();
    (format!("guardian:{guardian}{suffix}").into_bytes(), format!("device:{serial}{suffix}").into_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_round_trip() {
        let msgs = [
            StatusMsg::Hello,
            StatusMsg::Report(Report {
                serial: "SP-100-0001".into(),
                model: "SP-100".into(),
                state: DeviceState::Provisioning,
                onboarded_flag: false,
                reset_count: Some(3),
            }),
            StatusMsg::Report(Report {
                serial: "x".into(),
                model: "y".into(),
                state: DeviceState::Onboarded,
                onboarded_flag: true,
                reset_count: None,
            }),
            StatusMsg::HandoffResult { accepted: true },
        ];
        for m in msgs {
            assert_eq!(StatusMsg::decode(&m.encode()).unwrap(), m);
        }
        assert!(StatusMsg::decode(&[9]).is_err());
    }

    #[test]
    fn command_and_reply_round_trip() {
        let cmds = [
            Command::Status,
            Command::PrepareUpdate,
            Command::InstallUpdate { package: vec![1, 2, 3], tag: Tag([7; 32]) },
            Command::RotatePrepare { epoch: 4, sealed_wifi: vec![5; 48] },
            Command::RotateCommit { epoch: 4 },
            Command::Wipe,
            Command::StoreSecret { label: "l".into(), sealed: vec![1] },
        ];
        for c in cmds {
            assert_eq!(Command::decode(&c.encode()).unwrap(), c);
        }
        let replies = [
            Reply::Onboarded,
            Reply::Status { state: DeviceState::Onboarded, version: "1.0".into(), firmware: Digest([3; 32]), epoch: 2 },
            Reply::UpdateReady,
            Reply::Installed { version: "2.0".into() },
            Reply::Rejected { reason: "mac".into() },
            Reply::RotatePrepared { epoch: 1 },
            Reply::RotateCommitted { epoch: 1 },
            Reply::Wiped,
            Reply::Stored,
            Reply::Unsupported,
        ];
        for r in replies {
            assert_eq!(Reply::decode(&r.encode()).unwrap(), r);
        }
    }

    #[test]
    fn envelope_binds_every_field() {
        let k = Key([1; 32]);
        let env = Envelope::seal(&k, LABEL_G2D, "SN1", 0, 5, Command::Wipe.encode());
        assert!(env.verify(&k, LABEL_G2D, "SN1"));
        assert!(!env.verify(&k, LABEL_D2G, "SN1"));
        assert!(!env.verify(&k, LABEL_G2D, "SN2"));
        assert!(!env.verify(&Key([2; 32]), LABEL_G2D, "SN1"));
        let enc = env.encode();
        for i in 0..enc.len() * 8 {
            let mut m = enc.clone();
            m[i / 8] ^= 1 << (i % 8);
            if let Ok(e) = Envelope::decode(&m) {
                assert!(!e.verify(&k, LABEL_G2D, "SN1"), "bit {i}");
            }
        }
    }

    #[test]
    fn handoff_and_sealed_round_trip() {
        for m in [HandoffMsg::Offer([1; 32]), HandoffMsg::Answer([2; 32])] {
            assert_eq!(HandoffMsg::decode(&m.encode()).unwrap(), m);
            assert!(HandoffMsg::is_handoff(&m.encode()));
        }
        let s = Sealed { purpose: Purpose::TransferPassword, counter: 9, ciphertext: vec![1, 2] };
        assert_eq!(Sealed::decode(&s.encode()).unwrap(), s);
    }

    #[test]
    fn binding_changes_ids() {
        let mac = crate::types::MacAddr([2, 0, 0, 0, 0, 1]);
        let plain = pake_ids(&mac, "SN1", None);
        let bound = pake_ids(&mac, "SN1", Some(&Digest([9; 32])));
        assert_ne!(plain.0, bound.0);
        assert_ne!(plain.1, bound.1);
        assert_ne!(plain.0, plain.1);
    }
}
