use hkdf::Hkdf;
use sha2::Sha256;

use super::keys::Key;

const SALT: &[u8] = b"guardian-kmi/kdf/v1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KdfError {
    #[error("kdf master secret is empty")]
    EmptyMaster,
    #[error("kdf label is empty")]
    EmptyLabel,
}

/// HKDF-SHA256 with a fixed salt. The info field is the length-prefixed
/// label followed by the context, so distinct labels never share output.
pub fn kdf(master: &[u8], label: &str, context: &[u8]) -> Result<Key, KdfError> {
    if master.is_empty() {
        return Err(KdfError::EmptyMaster);
    }
    if label.is_empty() {
        return Err(KdfError::EmptyLabel);
    }
    let mut info = Vec::with_capacity(2 + label.len() + context.len());
    info.extend_from_slice(&(label.len() as u16).to_be_bytes());
    info.extend_from_slice(label.as_bytes());
    info.extend_from_slice(context);
    let mut out = [0u8; 32];
    Hkdf::<Sha256>::new(Some(SALT), master)
        .expand(&info, &mut out)
        .expect("32 octets is a valid HKDF-SHA256 output length");
    Ok(Key(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha20Rng;
    use rand_core::{RngCore, SeedableRng};
    use std::collections::HashSet;

    #[test]
    fn labels_separate() {
        let m = [5u8; 32];
        assert_ne!(kdf(&m, "enc", b"c").unwrap(), kdf(&m, "mac", b"c").unwrap());
        assert_eq!(kdf(&m, "enc", b"c").unwrap(), kdf(&m, "enc", b"c").unwrap());
    }

    #[test]
    fn label_context_boundary() {
        let m = [5u8; 32];
        assert_ne!(kdf(&m, "ab", b"c").unwrap(), kdf(&m, "a", b"bc").unwrap());
    }

    #[test]
    fn errors() {
        assert_eq!(kdf(&[], "enc", b"").unwrap_err(), KdfError::EmptyMaster);
        assert_eq!(kdf(&[1], "", b"").unwrap_err(), KdfError::EmptyLabel);
    }

    #[test]
    fn rfc5869_case1_shape() {
        // The HKDF layer itself against RFC 5869 test case 1.
        let ikm = [0x0bu8; 22];
        let salt = hex::decode("000102030405060708090a0b0c").unwrap();
        let info = hex::decode("f0f1f2f3f4f5f6f7f8f9").unwrap();
        let mut okm = [0u8; 42];
        Hkdf::<Sha256>::new(Some(&salt), &ikm).expand(&info, &mut okm).unwrap();
        assert_eq!(
            hex::encode(okm),
            "3cb25f25faacd57a90434f64d0362f2a2d2d0a90cf1a5a4c5db02d56ecc4c5bf34007208d5b887185865"
        );
    }

    #[test]
    fn random_triples_no_duplicates() {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let mut seen = HashSet::new();
        for _ in 0..1_000 {
            let mut m = vec![0u8; 1 + (rng.next_u32() % 40) as usize];
            rng.fill_bytes(&mut m);
            let label = format!("l{}", rng.next_u32() % 1000);
            let mut c = vec![0u8; (rng.next_u32() % 16) as usize];
            rng.fill_bytes(&mut c);
            assert!(seen.insert(kdf(&m, &label, &c).unwrap()));
        }
    }
}
