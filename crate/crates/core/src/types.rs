//! Small domain newtypes shared across the crate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A 48-bit link-layer hardware address.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub const BROADCAST: MacAddr = MacAddr([0xff; 6]);

    pub fn octets(&self) -> [u8; 6] {
        self.0
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl fmt::Debug for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MacAddr({self})")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid MAC address {0:?}")]
pub struct ParseMacError(pub String);

impl FromStr for MacAddr {
    type Err = ParseMacError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 6 {
            return Err(ParseMacError(s.to_string()));
        }
        let mut out = [0u8; 6];
        for (slot, part) in out.iter_mut().zip(parts) {
            if part.len() != 2 {
                return Err(ParseMacError(s.to_string()));
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| ParseMacError(s.to_string()))?;
        }
        Ok(MacAddr(out))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Rough capability tier of a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviceClass {
    HighEnd,
    MidLevel,
    LowEnd,
}

impl DeviceClass {
    /// Low-end parts only run the PAKE and MAC paths; general-purpose sealed
    /// data and signature checks are refused.
    pub fn supports_general_aead(&self) -> bool {
        !matches!(self, DeviceClass::LowEnd)
    }
}

impl fmt::Display for DeviceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeviceClass::HighEnd => "high-end",
            DeviceClass::MidLevel => "mid-level",
            DeviceClass::LowEnd => "low-end",
        })
    }
}

impl FromStr for DeviceClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "high" | "high-end" => Ok(DeviceClass::HighEnd),
            "mid" | "mid-level" => Ok(DeviceClass::MidLevel),
            "low" | "low-end" => Ok(DeviceClass::LowEnd),
            other => Err(format!("unknown device class {other:?}")),
        }
    }
}

/// Device lifecycle as seen by the device itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviceState {
    Factory,
    Provisioning,
    Onboarded,
    Decommissioned,
}

impl DeviceState {
    pub fn code(self) -> u8 {
        match self {
            DeviceState::Factory => 0,
            DeviceState::Provisioning => 1,
            DeviceState::Onboarded => 2,
            DeviceState::Decommissioned => 3,
        }
    }

    pub fn from_code(b: u8) -> Option<Self> {
        Some(match b {
            0 => DeviceState::Factory,
            1 => DeviceState::Provisioning,
            2 => DeviceState::Onboarded,
            3 => DeviceState::Decommissioned,
            _ => return None,
        })
    }
}

impl fmt::Display for DeviceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeviceState::Factory => "factory",
            DeviceState::Provisioning => "provisioning",
            DeviceState::Onboarded => "onboarded",
            DeviceState::Decommissioned => "decommissioned",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mac_parse_display() {
        let m: MacAddr = "02:1a:ff:00:10:9c".parse().unwrap();
        assert_eq!(m.to_string(), "02:1a:ff:00:10:9c");
        assert!("02:1a:ff:00:10".parse::<MacAddr>().is_err());
        assert!("02:1a:ff:00:10:zz".parse::<MacAddr>().is_err());
        assert!("021:a:ff:00:10:9c".parse::<MacAddr>().is_err());
    }
}
