//! Deterministic message fabric: per-device provisioning APs, the domain AP
//! with its per-MAC verification table, the WAN side, and adversary hooks.

pub mod adversary;
pub mod fabric;
pub mod frame;
pub mod trace;

pub use adversary::{Action, Adversary, AdversaryScript, Mutation, PakeMitm, Scope, Threat};
pub use fabric::{associate, AssocReject, Fabric, DEFAULT_TIMEOUT};
pub use frame::{Frame, FrameKind, Link};
pub use trace::{record_transcript, Trace, TraceEntry, TranscriptFilter};
