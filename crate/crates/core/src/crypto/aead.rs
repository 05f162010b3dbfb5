//! ChaCha20-Poly1305 with 96-bit counter nonces.
//!
//! A nonce is a 4-octet direction tag followed by a 64-bit big-endian
//! counter, so the two directions under one key never collide and the
//! simulation stays reproducible.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::ChaCha20Poly1305;

use super::keys::Key;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AeadError {
    #[error("authentication failed")]
    Auth,
    #[error("nonce counter {0} already used")]
    NonceReuse(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    GuardianToDevice,
    DeviceToGuardian,
    /// One-shot exchanges (transfer password delivery).
    Handoff,
}

impl Direction {
    fn tag(self) -> [u8; 4] {
        match self {
            Direction::GuardianToDevice => *b"g2d\0",
            Direction::DeviceToGuardian => *b"d2g\0",
            Direction::Handoff => *b"hnd\0",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Nonce(pub [u8; 12]);

impl Nonce {
    pub fn counter(dir: Direction, n: u64) -> Self {
        let mut b = [0u8; 12];
        b[..4].copy_from_slice(&dir.tag());
        b[4..].copy_from_slice(&n.to_be_bytes());
        Nonce(b)
    }
}

pub fn aead_seal(key: &Key, nonce: &Nonce, plaintext: &[u8], aad: &[u8]) -> Vec<u8> {
    ChaCha20Poly1305::new(key.as_bytes().into())
        .encrypt((&nonce.0).into(), Payload { msg: plaintext, aad })
        .expect("chacha20poly1305 encryption is infallible for in-memory buffers")
}

pub fn aead_open(key: &Key, nonce: &Nonce, ciphertext: &[u8], aad: &[u8]) -> Result<Vec<u8>, AeadError> {
    ChaCha20Poly1305::new(key.as_bytes().into())
        .decrypt((&nonce.0).into(), Payload { msg: ciphertext, aad })
        .map_err(|_| AeadError::Auth)
}

/// Sending half of a counter-nonce channel.
#[derive(Debug, Clone)]
pub struct Sealer {
    key: Key,
    dir: Direction,
    next: u64,
}

impl Sealer {
    pub fn new(key: Key, dir: Direction) -> Self {
        Sealer { key, dir, next: 0 }
    }

    pub fn starting_at(key: Key, dir: Direction, next: u64) -> Self {
        Sealer { key, dir, next }
    }

    /// Seal under the next counter, returning the counter used.
    pub fn seal(&mut self, plaintext: &[u8], aad: &[u8]) -> (u64, Vec<u8>) {
        let n = self.next;
        self.next += 1;
        (n, aead_seal(&self.key, &Nonce::counter(self.dir, n), plaintext, aad))
    }

    pub fn next_counter(&self) -> u64 {
        self.next
    }
}

/// Receiving half; refuses any counter at or below the highest accepted.
#[derive(Debug, Clone)]
pub struct Opener {
    key: Key,
    dir: Direction,
    highest: Option<u64>,
}

impl Opener {
    pub fn new(key: Key, dir: Direction) -> Self {
        Opener { key, dir, highest: None }
    }

    pub fn open(&mut self, counter: u64, ciphertext: &[u8], aad: &[u8]) -> Result<Vec<u8>, AeadError> {
        if self.highest.is_some_and(|h| counter <= h) {
            return Err(AeadError::NonceReuse(counter));
        }
        let pt = aead_open(&self.key, &Nonce::counter(self.dir, counter), ciphertext, aad)?;
        self.highest = Some(counter);
        Ok(pt)
    }
}
