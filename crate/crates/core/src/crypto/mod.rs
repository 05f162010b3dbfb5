//! Cryptographic building blocks: hash, Lamport chains, key derivation,
//! MAC, AEAD, signatures and the on-boarding PAKE.
//!
//! Algorithm identities are fixed so that every transcript the simulator
//! produces is reproducible:
//!
//! | role      | algorithm          |
//! |-----------|--------------------|
//! | hash      | SHA-256            |
//! | kdf       | HKDF-SHA256        |
//! | mac       | HMAC-SHA256        |
//! | aead      | ChaCha20-Poly1305  |
//! | signature | Ed25519            |
//! | pake      | J-PAKE/ristretto255 with HMAC key confirmation |

pub mod aead;
pub mod chain;
pub mod ephemeral;
pub mod hash;
pub mod kdf;
pub mod keys;
pub mod mac;
pub mod pake;
pub mod sig;

pub use aead::{aead_open, aead_seal, AeadError, Direction, Nonce, Opener, Sealer};
pub use chain::{chain_init, chain_password, chain_verify, ChainError, ChainState};
pub use hash::{hash, hash_iter, hash_parts, Digest, DIGEST_LEN};
pub use kdf::{kdf, KdfError};
pub use keys::{Key, KeySet, SecretBytes};
pub use mac::{mac_compute, mac_verify, Tag};
pub use pake::{abort_blob, pake_start, pake_step, AbortReason, PakeError, PakeSession, Phase, Role, StepOutcome};
pub use sig::{sig_sign, sig_verify, signing_public_key, PublicKey, Signature};

/// Identifiers of the fixed algorithm suite, written into exported vectors.
pub const SUITE: &str = "sha256/hkdf-sha256/hmac-sha256/chacha20poly1305/ed25519/jpake-ristretto255";
