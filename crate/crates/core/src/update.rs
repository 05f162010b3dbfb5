//! Update packages, their canonical encoding, dotted version ordering and
//! the on-disk update feed.

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::crypto::{sig_verify, PublicKey, Signature};
use crate::wire::{Reader, WireError, Writer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateReason {
    Stability,
    Security,
    Functionality,
}

impl fmt::Display for UpdateReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateReason::Stability => "stability",
            UpdateReason::Security => "security",
            UpdateReason::Functionality => "functionality",
        })
    }
}

impl FromStr for UpdateReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stability" => Ok(UpdateReason::Stability),
            "security" => Ok(UpdateReason::Security),
            "functionality" => Ok(UpdateReason::Functionality),
            other => Err(format!("unknown update reason {other:?}")),
        }
    }
}

/// A dotted-numeric version. A leading `v` is ignored and missing trailing
/// components compare as zero, so `2.0 == 2.0.0 < 2.0.1 < 10.0`.
#[derive(Debug, Clone)]
pub struct Version(Vec<u64>);

impl PartialEq for Version {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Version {}

impl FromStr for Version {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = s.strip_prefix('v').unwrap_or(s);
        if body.is_empty() {
            return Err(format!("empty version {s:?}"));
        }
        body.split('.')
            .map(|p| p.parse::<u64>().map_err(|_| format!("non-numeric version component in {s:?}")))
            .collect::<Result<Vec<_>, _>>()
            .map(Version)
    }
}

impl Ord for Version {
    fn cmp(&self, other: &Self) -> Ordering {
        let n = self.0.len().max(other.0.len());
        (0..n)
            .map(|i| self.0.get(i).copied().unwrap_or(0).cmp(&other.0.get(i).copied().unwrap_or(0)))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

impl PartialOrd for Version {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Compare two version strings; `None` if either does not parse.
pub fn compare_versions(a: &str, b: &str) -> Option<Ordering> {
    Some(a.parse::<Version>().ok()?.cmp(&b.parse::<Version>().ok()?))
}

const FILE_MAGIC: &[u8; 4] = b"GPK1";

#[derive(Clone, PartialEq, Eq)]
pub struct UpdatePackage {
    pub model: String,
    pub version: String,
    pub payload: Vec<u8>,
    pub reason: UpdateReason,
    pub vendor_sig: Signature,
}

impl fmt::Debug for UpdatePackage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UpdatePackage")
            .field("model", &self.model)
            .field("version", &self.version)
            .field("reason", &self.reason)
            .field("payload_len", &self.payload.len())
            .finish_non_exhaustive()
    }
}

/// Length-prefixed concatenation of model, version, reason and payload.
/// This exact byte string is what the vendor signs and the Guardian MACs.
pub fn canonical_encoding(model: &str, version: &str, reason: UpdateReason, payload: &[u8]) -> Vec<u8> {
    Writer::new().str(model).str(version).str(&reason.to_string()).bytes(payload).finish()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PackageError {
    #[error("not a package file")]
    BadMagic,
    #[error("malformed package: {0}")]
    Wire(#[from] WireError),
    #[error("malformed package field: {0}")]
    Field(String),
}

/// The signed content of a package without its signature: what the
/// Guardian forwards to a device under its MAC key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackageBody {
    pub model: String,
    pub version: String,
    pub reason: UpdateReason,
    pub payload: Vec<u8>,
}

impl PackageBody {
    pub fn canonical(&self) -> Vec<u8> {
        canonical_encoding(&self.model, &self.version, self.reason, &self.payload)
    }

    pub fn from_canonical(b: &[u8]) -> Result<Self, PackageError> {
        let mut r = Reader::new(b);
        let body = Self::read(&mut r)?;
        r.finish()?;
        Ok(body)
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, PackageError> {
        Ok(PackageBody {
            model: r.str()?.to_string(),
            version: r.str()?.to_string(),
            reason: r.str()?.parse().map_err(PackageError::Field)?,
            payload: r.bytes()?.to_vec(),
        })
    }
}

impl UpdatePackage {
    pub fn canonical(&self) -> Vec<u8> {
        canonical_encoding(&self.model, &self.version, self.reason, &self.payload)
    }

    pub fn body(&self) -> PackageBody {
        PackageBody {
            model: self.model.clone(),
            version: self.version.clone(),
            reason: self.reason,
            payload: self.payload.clone(),
        }
    }

    pub fn verify_signature(&self, vendor_key: &PublicKey) -> bool {
        sig_verify(vendor_key, &self.canonical(), &self.vendor_sig)
    }

    /// `GPK1 || canonical || signature(64)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = FILE_MAGIC.to_vec();
        out.extend_from_slice(&self.canonical());
        out.extend_from_slice(&self.vendor_sig);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, PackageError> {
        let mut r = Reader::new(b);
        if r.raw(4).map_err(|_| PackageError::BadMagic)? != FILE_MAGIC {
            return Err(PackageError::BadMagic);
        }
        let PackageBody { model, version, reason, payload } = PackageBody::read(&mut r)?;
        let vendor_sig = r.array::<64>()?;
        r.finish()?;
        Ok(UpdatePackage { model, version, payload, reason, vendor_sig })
    }
}

/// One line of the feed index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedEntry {
    pub update_id: String,
    pub model: String,
    pub version: String,
    pub reason: UpdateReason,
    pub filename: String,
}

pub const INDEX_FILE: &str = "index.tsv";
const INDEX_HEADER: &str = "# update_id\tmodel\tversion\treason\tfilename";

#[derive(Debug, thiserror::Error)]
pub enum FeedError {
    #[error("feed io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("feed index line {line}: {msg}")]
    Index { line: usize, msg: String },
    #[error("package {0}: {1}")]
    Package(String, PackageError),
    #[error("unknown update id {0}")]
    UnknownUpdate(String),
}

/// A directory of package files plus a tab-separated index.
#[derive(Debug, Clone)]
pub struct UpdateFeed {
    dir: PathBuf,
}

impl UpdateFeed {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        UpdateFeed { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> FeedError + '_ {
        move |source| FeedError::Io { path: path.to_path_buf(), source }
    }

    pub fn entries(&self) -> Result<Vec<FeedEntry>, FeedError> {
        let path = self.dir.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(Self::io(&path))?;
        parse_index(&text)
    }

    /// Write the package file and append its index line.
    pub fn publish(&self, update_id: &str, pkg: &UpdatePackage) -> Result<FeedEntry, FeedError> {
        fs::create_dir_all(&self.dir).map_err(Self::io(&self.dir))?;
        let index = self.dir.join(INDEX_FILE);
        let mut entries = if index.exists() { self.entries()? } else { Vec::new() };
        if entries.iter().any(|e| e.update_id == update_id) {
            return Err(FeedError::Index { line: 0, msg: format!("duplicate update id {update_id}") });
        }
        let filename = format!("{update_id}.gpk");
        let file = self.dir.join(&filename);
        fs::write(&file, pkg.to_bytes()).map_err(Self::io(&file))?;
        let entry = FeedEntry {
            update_id: update_id.to_string(),
            model: pkg.model.clone(),
            version: pkg.version.clone(),
            reason: pkg.reason,
            filename,
        };
        entries.push(entry.clone());
        fs::write(&index, render_index(&entries)).map_err(Self::io(&index))?;
        Ok(entry)
    }

    pub fn load(&self, update_id: &str) -> Result<UpdatePackage, FeedError> {
        let entry = self
            .entries()?
            .into_iter()
            .find(|e| e.update_id == update_id)
            .ok_or_else(|| FeedError::UnknownUpdate(update_id.to_string()))?;
        let path = self.dir.join(&entry.filename);
        let bytes = fs::read(&path).map_err(Self::io(&path))?;
        UpdatePackage::from_bytes(&bytes).map_err(|e| FeedError::Package(update_id.to_string(), e))
    }
}

pub fn render_index(entries: &[FeedEntry]) -> String {
    let mut out = String::from(INDEX_HEADER);
    out.push('\n');
    for e in entries {
        out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", e.update_id, e.model, e.version, e.reason, e.filename));
    }
    out
}

pub fn parse_index(text: &str) -> Result<Vec<FeedEntry>, FeedError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let err = |msg: String| FeedError::Index { line: n + 1, msg };
        let [update_id, model, version, reason, filename] = cols[..] else {
            return Err(err(format!("expected 5 tab-separated columns, got {}", cols.len())));
        };
        if filename.contains('/') || filename.contains("..") {
            return Err(err(format!("filename {filename:?} escapes the feed directory")));
        }
        out.push(FeedEntry {
            update_id: update_id.to_string(),
            model: model.to_string(),
            version: version.to_string(),
            reason: reason.parse().map_err(err)?,
            filename: filename.to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{sig_sign, signing_public_key, Key};

    fn pkg(version: &str) -> UpdatePackage {
        let seed = Key([4; 32]);
        let canonical = canonical_encoding("SP-100", version, UpdateReason::Security, b"firmware");
        UpdatePackage {
            model: "SP-100".into(),
            version: version.into(),
            payload: b"firmware".to_vec(),
            reason: UpdateReason::Security,
            vendor_sig: sig_sign(&seed, &canonical),
        }
    }

    #[test]
    fn version_order() {
        let v = |s: &str| s.parse::<Version>().unwrap();
        assert!(v("1.0") < v("2.0"));
        assert!(v("2.0") == v("2.0.0"));
        assert!(v("2.0.1") > v("2.0"));
        assert!(v("10.0") > v("9.9.9"));
        assert!(v("v2.0") == v("2.0"));
        assert!("2.x".parse::<Version>().is_err());
        assert!("".parse::<Version>().is_err());
        assert_eq!(compare_versions("1.0", "1.0.0"), Some(Ordering::Equal));
    }

    #[test]
    fn canonical_is_bit_exact() {
        let enc = canonical_encoding("M", "1", UpdateReason::Security, &[0xAB]);
        assert_eq!(
            hex::encode(enc),
            concat!("000000014d", "0000000131", "00000008", "7365637572697479", "00000001ab")
        );
    }

    #[test]
    fn file_round_trip_and_signature() {
        let p = pkg("2.0.0");
        let back = UpdatePackage::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(back, p);
        assert!(back.verify_signature(&signing_public_key(&Key([4; 32]))));
        let mut bytes = p.to_bytes();
        let n = bytes.len();
        bytes[n - 70] ^= 1;
        let mutated = UpdatePackage::from_bytes(&bytes).unwrap();
        assert!(!mutated.verify_signature(&signing_public_key(&Key([4; 32]))));
        assert_eq!(UpdatePackage::from_bytes(b"XXXX").unwrap_err(), PackageError::BadMagic);
    }

    #[test]
    fn feed_publish_and_index() {
        let dir = tempfile::tempdir().unwrap();
        let feed = UpdateFeed::new(dir.path());
        feed.publish("U1", &pkg("1.1.0")).unwrap();
        feed.publish("U2", &pkg("2.0.0")).unwrap();
        assert!(feed.publish("U2", &pkg("2.0.0")).is_err());
        let entries = feed.entries().unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[1].version, "2.0.0");
        assert_eq!(feed.load("U2").unwrap().version, "2.0.0");
        assert!(matches!(feed.load("U9"), Err(FeedError::UnknownUpdate(_))));
    }

    #[test]
    fn index_rejects_bad_lines() {
        assert!(parse_index("U1\tM\t1.0\tsecurity\n").is_err());
        assert!(parse_index("U1\tM\t1.0\turgent\tU1.gpk\n").is_err());
        assert!(parse_index("U1\tM\t1.0\tsecurity\t../x\n").is_err());
        assert_eq!(parse_index("# c\n\nU1\tM\t1.0\tsecurity\tU1.gpk\n").unwrap().len(), 1);
    }
}
