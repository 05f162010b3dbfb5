//! Lamport hash chains.
//!
//! For a seed `w` and length `t`, element `i` is `w_i = h^(t-i)(w)`, so
//! `w_0 = h^t(w)` is the initial verifier and `h(w_i) = w_{i-1}`. A verifier
//! holding `w_{i-1}` accepts a candidate with a single hash and then stores
//! the candidate, so each element is usable exactly once.

use serde::{Deserialize, Serialize};

use super::hash::{hash, hash_iter, Digest};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("chain length must be at least 1")]
    EmptyChain,
    #[error("chain index {index} outside 1..={length}")]
    IndexOutOfRange { index: u32, length: u32 },
    #[error("chain exhausted")]
    Exhausted,
}

/// Generator-side view of a chain: the seed, the length, and how far the
/// verifier has been advanced.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainState {
    seed: Digest,
    length: u32,
    index: u32,
    verifier: Digest,
}

impl std::fmt::Debug for ChainState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChainState")
            .field("length", &self.length)
            .field("index", &self.index)
            .field("verifier", &self.verifier)
            .finish_non_exhaustive()
    }
}

/// Start a chain: index 0, verifier `h^t(seed)`.
pub fn chain_init(seed: &Digest, t: u32) -> Result<ChainState, ChainError> {
    if t < 1 {
        return Err(ChainError::EmptyChain);
    }
    Ok(ChainState { seed: *seed, length: t, index: 0, verifier: hash_iter(*seed, t) })
}

/// The `i`-th one-time password, `h^(t-i)(seed)`, for `1 <= i <= t`.
pub fn chain_password(seed: &Digest, t: u32, i: u32) -> Result<Digest, ChainError> {
    if t < 1 {
        return Err(ChainError::EmptyChain);
    }
    if i < 1 || i > t {
        return Err(ChainError::IndexOutOfRange { index: i, length: t });
    }
    Ok(hash_iter(*seed, t - i))
}

/// Accept iff `h(candidate) == stored_verifier`. The caller replaces its
/// verifier with the candidate on acceptance.
pub fn chain_verify(candidate: &Digest, stored_verifier: &Digest) -> bool {
    use subtle::ConstantTimeEq;
    bool::from(hash(&candidate.0).0.ct_eq(&stored_verifier.0))
}

impl ChainState {
    pub fn length(&self) -> u32 {
        self.length
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    /// Current verifier, equal to `w_index`.
    pub fn verifier(&self) -> Digest {
        self.verifier
    }

    pub fn password_at(&self, i: u32) -> Result<Digest, ChainError> {
        chain_password(&self.seed, self.length, i)
    }

    /// Issue the next password and move the verifier onto it.
    pub fn advance(&mut self) -> Result<Digest, ChainError> {
        if self.index >= self.length {
            return Err(ChainError::Exhausted);
        }
        let next = self.password_at(self.index + 1)?;
        self.index += 1;
        self.verifier = next;
        Ok(next)
    }

    /// Verifier-only view, as held by a device.
    pub fn verifier_view(&self) -> ChainVerifier {
        ChainVerifier { verifier: self.verifier, index: self.index, length: self.length }
    }
}

/// What a device stores: the last accepted element and its index, never
/// the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainVerifier {
    pub verifier: Digest,
    pub index: u32,
    pub length: u32,
}

impl ChainVerifier {
    /// Check a candidate asserted to be element `target`. Positions between
    /// the stored index and `target - 1` were skipped (burned), so the
    /// candidate is first walked down to `target - 1`'s successor and then
    /// checked with the single-hash test. On acceptance the verifier moves
    /// to `(candidate, target)`.
    pub fn accept(&mut self, candidate: &Digest, target: u32) -> bool {
        if target <= self.index || target > self.length {
            return false;
        }
        let walked = hash_iter(*candidate, target - self.index - 1);
        if !chain_verify(&walked, &self.verifier) {
            return false;
        }
        self.verifier = *candidate;
        self.index = target;
        true
    }
}
