use ed25519_dalek::{Signer, SigningKey, VerifyingKey};

use super::keys::Key;

pub type PublicKey = [u8; 32];
pub type Signature = [u8; 64];

pub fn signing_public_key(seed: &Key) -> PublicKey {
    SigningKey::from_bytes(seed.as_bytes()).verifying_key().to_bytes()
}

/// Ed25519 signature under the key whose 32-octet seed is `seed`.
pub fn sig_sign(seed: &Key, message: &[u8]) -> Signature {
    SigningKey::from_bytes(seed.as_bytes()).sign(message).to_bytes()
}

/// Strict Ed25519 verification. Malformed keys or signatures reject.
pub fn sig_verify(public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
    let Ok(pk) = <[u8; 32]>::try_from(public_key) else {
        return false;
    };
    let Ok(sig) = <[u8; 64]>::try_from(signature) else {
        return false;
    };
    let Ok(vk) = VerifyingKey::from_bytes(&pk) else {
        return false;
    };
    vk.verify_strict(message, &ed25519_dalek::Signature::from_bytes(&sig)).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rfc8032_test1() {
        let seed = Key(hex::decode("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60")
            .unwrap()
            .try_into()
            .unwrap());
        let pk = signing_public_key(&seed);
        assert_eq!(hex::encode(pk), "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a");
        let sig = sig_sign(&seed, b"");
        assert_eq!(
            hex::encode(sig),
            "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b"
        );
        assert!(sig_verify(&pk, b"", &sig));
    }

    #[test]
    fn flips_and_foreign_keys_reject() {
        let a = Key([1; 32]);
        let b = Key([2; 32]);
        let msg = b"model|1.2.0|security|payload";
        let sig = sig_sign(&a, msg);
        assert!(sig_verify(&signing_public_key(&a), msg, &sig));
        let mut m = msg.to_vec();
        m[3] ^= 1;
        assert!(!sig_verify(&signing_public_key(&a), &m, &sig));
        assert!(!sig_verify(&signing_public_key(&b), msg, &sig));
    }

    #[test]
    fn malformed_inputs_reject() {
        let a = Key([1; 32]);
        let sig = sig_sign(&a, b"m");
        assert!(!sig_verify(&[0u8; 31], b"m", &sig));
        assert!(!sig_verify(&signing_public_key(&a), b"m", &sig[..63]));
        assert!(!sig_verify(&signing_public_key(&a), b"m", &[0xff; 64]));
    }
}
