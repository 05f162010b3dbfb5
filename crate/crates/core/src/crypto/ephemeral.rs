//! Unauthenticated ephemeral Diffie-Hellman over ristretto255, used only to
//! hide a transfer password from passive listeners on the open device AP.

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::IsIdentity;
use rand_core::{CryptoRng, RngCore};

use super::hash::{hash_parts, Digest};
use super::kdf::kdf;
use super::keys::Key;

pub struct EphemeralSecret {
    scalar: Scalar,
    public: [u8; 32],
}

impl EphemeralSecret {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let scalar = Scalar::random(rng);
        let public = RistrettoPoint::mul_base(&scalar).compress().to_bytes();
        EphemeralSecret { scalar, public }
    }

    pub fn public(&self) -> [u8; 32] {
        self.public
    }

    /// Shared point with the peer's public value; `None` for invalid or
    /// identity points.
    pub fn agree(&self, peer: &[u8; 32]) -> Option<[u8; 32]> {
        let p = CompressedRistretto(*peer).decompress()?;
        if p.is_identity() {
            return None;
        }
        Some((p * self.scalar).compress().to_bytes())
    }
}

/// Transcript hash of a handoff exchange and the sealing key derived from it.
pub fn handoff_key(shared: &[u8; 32], initiator_pub: &[u8; 32], responder_pub: &[u8; 32], serial: &str) -> (Digest, Key) {
    let th = hash_parts(&[b"handoff/transcript", initiator_pub, responder_pub, serial.as_bytes()]);
    let key = kdf(shared, "handoff/seal", &th.0).expect("non-empty inputs");
    (th, key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha20Rng;
    use rand_core::SeedableRng;

    #[test]
    fn both_sides_agree() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = EphemeralSecret::generate(&mut rng);
        let b = EphemeralSecret::generate(&mut rng);
        let sa = a.agree(&b.public()).unwrap();
        let sb = b.agree(&a.public()).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(
            handoff_key(&sa, &a.public(), &b.public(), "SN1"),
            handoff_key(&sb, &a.public(), &b.public(), "SN1")
        );
        assert!(a.agree(&[0u8; 32]).is_none());
    }
}
