use std::fmt;

use serde::{Deserialize, Serialize};

use crate::types::MacAddr;

/// Which medium a frame travels on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Link {
    /// The open provisioning access point of the device with this serial.
    DeviceAp(String),
    /// The trust domain's access point.
    DomainAp,
    /// The wide-area side of the gateway.
    Wan,
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Link::DeviceAp(s) => write!(f, "device-ap:{s}"),
            Link::DomainAp => f.write_str("domain-ap"),
            Link::Wan => f.write_str("wan"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrameKind {
    PakeBlob,
    SealedPayload,
    Command,
    Status,
    VendorMsg,
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrameKind::PakeBlob => "pake",
            FrameKind::SealedPayload => "sealed",
            FrameKind::Command => "command",
            FrameKind::Status => "status",
            FrameKind::VendorMsg => "vendor",
        })
    }
}

impl std::str::FromStr for FrameKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "pake" => FrameKind::PakeBlob,
            "sealed" => FrameKind::SealedPayload,
            "command" => FrameKind::Command,
            "status" => FrameKind::Status,
            "vendor" => FrameKind::VendorMsg,
            other => return Err(format!("unknown frame kind {other:?}")),
        })
    }
}

/// One simulated wire message. `seq` is assigned by the fabric at delivery.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub seq: u64,
    pub link: Link,
    pub src: MacAddr,
    pub dst: MacAddr,
    pub kind: FrameKind,
    pub body: Vec<u8>,
}

impl Frame {
    pub fn new(link: Link, src: MacAddr, dst: MacAddr, kind: FrameKind, body: Vec<u8>) -> Self {
        Frame { seq: 0, link, src, dst, kind, body }
    }

    /// A reply on the same link, addressed back to the sender.
    pub fn reply(&self, from: MacAddr, kind: FrameKind, body: Vec<u8>) -> Self {
        Frame::new(self.link.clone(), from, self.src, kind, body)
    }

    pub fn contains(&self, needle: &[u8]) -> bool {
        !needle.is_empty() && self.body.windows(needle.len()).any(|w| w == needle)
    }
}
