use std::fmt;

use hmac::{Hmac, Mac};
use sha2::Sha256;

use super::keys::Key;

type HmacSha256 = Hmac<Sha256>;

pub const TAG_LEN: usize = 32;

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Tag(pub [u8; TAG_LEN]);

impl fmt::Debug for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tag({})", hex::encode(self.0))
    }
}

pub fn mac_compute(key: &Key, data: &[u8]) -> Tag {
    let mut m = HmacSha256::new_from_slice(key.as_ref()).expect("HMAC accepts any key length");
    m.update(data);
    Tag(m.finalize().into_bytes().into())
}

/// Constant-time check of `tag` over `data`.
pub fn mac_verify(key: &Key, data: &[u8], tag: &Tag) -> bool {
    let mut m = HmacSha256::new_from_slice(key.as_ref()).expect("HMAC accepts any key length");
    m.update(data);
    m.verify_slice(&tag.0).is_ok()
}
