//! Guardian key management for commodity IoT devices: rostering,
//! PAKE on-boarding, derived working keys, mediated updates, key rotation
//! and hash-chain transfer, over a deterministic simulated network.

pub mod catalog;
pub mod crypto;
pub mod device;
pub mod guardian;
pub mod net;
pub mod protocol;
pub mod storage;
pub mod types;
pub mod update;
pub mod vendor;
pub mod wire;
