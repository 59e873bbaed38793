//! Content-addressed object store keyed by SHA-256.
//!
//! Objects are immutable: the key is the digest of the bytes, so a second
//! `put` of the same bytes is a no-op. Storage is either in memory or a
//! directory with one file per object under `<root>/<2 hex>/<64 hex>`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// 256-bit digest identifying a stored object.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContentHash([u8; 32]);

impl ContentHash {
    pub const LEN: usize = 32;

    pub fn of(bytes: &[u8]) -> ContentHash {
        ContentHash(Sha256::digest(bytes).into())
    }

    pub const fn from_bytes(bytes: [u8; 32]) -> ContentHash {
        ContentHash(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({})", self.to_hex())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid content hash `{0}`: expected 64 lowercase hex characters")]
pub struct ParseHashError(String);

impl FromStr for ContentHash {
    type Err = ParseHashError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 64 || s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(ParseHashError(s.to_owned()));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| ParseHashError(s.to_owned()))?;
        Ok(ContentHash(out))
    }
}

impl Serialize for ContentHash {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContentHash {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum CasError {
    #[error("object {0} not found")]
    NotFound(ContentHash),
    #[error("storage full: {used} of {capacity} bytes used, object needs {needed}")]
    StorageFull { used: u64, capacity: u64, needed: u64 },
    #[error("cas i/o: {0}")]
    Io(#[from] io::Error),
}

enum Backend {
    Memory(HashMap<ContentHash, Arc<[u8]>>),
    Directory(PathBuf),
}

struct Inner {
    backend: Backend,
    used_bytes: u64,
    objects: usize,
}

/// Thread-safe content-addressed store.
pub struct ContentStore {
    inner: RwLock<Inner>,
    capacity: Option<u64>,
}

impl fmt::Debug for ContentStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.read();
        let kind = match &inner.backend {
            Backend::Memory(m) => format!("memory({} objects)", m.len()),
            Backend::Directory(p) => format!("directory({})", p.display()),
        };
        f.debug_struct("ContentStore")
            .field("backend", &kind)
            .field("used_bytes", &inner.used_bytes)
            .field("capacity", &self.capacity)
            .finish()
    }
}

impl Default for ContentStore {
    fn default() -> Self {
        ContentStore::in_memory()
    }
}

impl ContentStore {
    pub fn in_memory() -> ContentStore {
        ContentStore {
            inner: RwLock::new(Inner { backend: Backend::Memory(HashMap::new()), used_bytes: 0, objects: 0 }),
            capacity: None,
        }
    }

    /// Opens (or creates) a directory-backed store. Existing objects are kept.
    pub fn open_dir(root: impl Into<PathBuf>) -> Result<ContentStore, CasError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let existing = list_dir(&root)?;
        let used_bytes = existing
            .iter()
            .map(|h| fs::metadata(object_path(&root, h)).map(|m| m.len()).unwrap_or(0))
            .sum();
        Ok(ContentStore {
            inner: RwLock::new(Inner { backend: Backend::Directory(root), used_bytes, objects: existing.len() }),
            capacity: None,
        })
    }

    /// Caps the total stored bytes; puts beyond it fail with `StorageFull`.
    pub fn with_capacity_bytes(mut self, capacity: u64) -> ContentStore {
        self.capacity = Some(capacity);
        self
    }

    pub fn put(&self, object: &[u8]) -> Result<ContentHash, CasError> {
        let hash = ContentHash::of(object);
        let mut inner = self.inner.write();
        if contains(&inner.backend, &hash) {
            return Ok(hash);
        }
        let needed = object.len() as u64;
        if let Some(capacity) = self.capacity {
            if inner.used_bytes + needed > capacity {
                return Err(CasError::StorageFull { used: inner.used_bytes, capacity, needed });
            }
        }
        match &mut inner.backend {
            Backend::Memory(map) => {
                map.insert(hash, Arc::from(object));
            }
            Backend::Directory(root) => write_object(root, &hash, object)?,
        }
        inner.used_bytes += needed;
        inner.objects += 1;
        Ok(hash)
    }

    pub fn get(&self, hash: &ContentHash) -> Result<Vec<u8>, CasError> {
        let inner = self.inner.read();
        match &inner.backend {
            Backend::Memory(map) => map.get(hash).map(|b| b.to_vec()).ok_or(CasError::NotFound(*hash)),
            Backend::Directory(root) => match fs::read(object_path(root, hash)) {
                Ok(bytes) => Ok(bytes),
                Err(e) if e.kind() == io::ErrorKind::NotFound => Err(CasError::NotFound(*hash)),
                Err(e) => Err(e.into()),
            },
        }
    }

    pub fn has(&self, hash: &ContentHash) -> bool {
        contains(&self.inner.read().backend, hash)
    }

    /// All stored hashes in ascending order.
    pub fn list(&self) -> Result<Vec<ContentHash>, CasError> {
        let inner = self.inner.read();
        let mut out = match &inner.backend {
            Backend::Memory(map) => map.keys().copied().collect(),
            Backend::Directory(root) => list_dir(root)?,
        };
        out.sort();
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.inner.read().objects
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn used_bytes(&self) -> u64 {
        self.inner.read().used_bytes
    }
}

fn contains(backend: &Backend, hash: &ContentHash) -> bool {
    match backend {
        Backend::Memory(map) => map.contains_key(hash),
        Backend::Directory(root) => object_path(root, hash).is_file(),
    }
}

fn object_path(root: &Path, hash: &ContentHash) -> PathBuf {
    let hex = hash.to_hex();
    root.join(&hex[..2]).join(hex)
}

fn write_object(root: &Path, hash: &ContentHash, bytes: &[u8]) -> io::Result<()> {
    let path = object_path(root, hash);
    let dir = path.parent().expect("object path has a parent");
    fs::create_dir_all(dir)?;
    // rename keeps readers from ever seeing a partial object
    let tmp = dir.join(format!(".{}.tmp", hash.to_hex()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

fn list_dir(root: &Path) -> io::Result<Vec<ContentHash>> {
    let mut out = Vec::new();
    if !root.exists() {
        return Ok(out);
    }
    for shard in fs::read_dir(root)? {
        let shard = shard?;
        if !shard.file_type()?.is_dir() {
            continue;
        }
        for entry in fs::read_dir(shard.path())? {
            let name = entry?.file_name();
            if let Some(hash) = name.to_str().and_then(|n| n.parse::<ContentHash>().ok()) {
                out.push(hash);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    // reference digests computed with Python's hashlib
    const EMPTY_SHA256: &str = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";
    const ABC_SHA256: &str = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";

    #[test]
    fn empty_object_digest() {
        let store = ContentStore::in_memory();
        assert_eq!(store.put(b"").unwrap().to_hex(), EMPTY_SHA256);
        assert_eq!(ContentHash::of(b"abc").to_hex(), ABC_SHA256);
    }

    #[test]
    fn idempotent_put() {
        let store = ContentStore::in_memory();
        let a = store.put(b"window").unwrap();
        let used = store.used_bytes();
        assert_eq!(store.put(b"window").unwrap(), a);
        assert_eq!(store.used_bytes(), used);
        assert_eq!(store.len(), 1);
        assert_ne!(store.put(b"window2").unwrap(), a);
    }

    #[test]
    fn not_found_and_has() {
        let store = ContentStore::in_memory();
        let h = ContentHash::of(b"never stored");
        assert!(matches!(store.get(&h), Err(CasError::NotFound(x)) if x == h));
        assert!(!store.has(&h));
        let stored = store.put(b"x").unwrap();
        assert!(store.has(&stored));
    }

    #[test]
    fn storage_full() {
        let store = ContentStore::in_memory().with_capacity_bytes(8);
        store.put(b"12345").unwrap();
        assert!(matches!(store.put(b"6789"), Err(CasError::StorageFull { .. })));
        // re-putting stored bytes never needs room
        store.put(b"12345").unwrap();
    }

    #[test]
    fn directory_persistence_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        let h = {
            let store = ContentStore::open_dir(dir.path()).unwrap();
            store.put(b"persisted").unwrap()
        };
        let hex = h.to_hex();
        assert!(dir.path().join(&hex[..2]).join(&hex).is_file());
        let reopened = ContentStore::open_dir(dir.path()).unwrap();
        assert!(reopened.has(&h));
        assert_eq!(reopened.get(&h).unwrap(), b"persisted");
        assert_eq!(reopened.list().unwrap(), vec![h]);
        assert_eq!(reopened.used_bytes(), 9);
    }

    #[test]
    fn hex_parse_rejects_bad_input() {
        assert!("abc".parse::<ContentHash>().is_err());
        assert!(EMPTY_SHA256.to_uppercase().parse::<ContentHash>().is_err());
        let h: ContentHash = EMPTY_SHA256.parse().unwrap();
        assert_eq!(h.to_string(), EMPTY_SHA256);
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(serde_json::from_str::<ContentHash>(&json).unwrap(), h);
    }

    proptest::proptest! {
        #[test]
        fn hex_roundtrip(bytes in proptest::array::uniform32(proptest::num::u8::ANY)) {
            let h = ContentHash::from_bytes(bytes);
            proptest::prop_assert_eq!(h.to_hex().parse::<ContentHash>().unwrap(), h);
        }

        #[test]
        fn get_put_roundtrip(data in proptest::collection::vec(proptest::num::u8::ANY, 0..512)) {
            let store = ContentStore::in_memory();
            let h = store.put(&data).unwrap();
            proptest::prop_assert_eq!(store.get(&h).unwrap(), data);
        }
    }
}
