//! Canonical JSON: sorted object keys, no insignificant whitespace, UTF-8.
//!
//! Gas is charged per payload byte, so every encoder that feeds the ledger
//! goes through here.

use serde::{de::DeserializeOwned, Serialize};

/// Serializes `value` to canonical JSON bytes.
///
/// Routing through `serde_json::Value` sorts keys, because the map type is
/// BTreeMap-backed.
pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<Vec<u8>> {
    let tree = serde_json::to_value(value)?;
    serde_json::to_vec(&tree)
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let tree = serde_json::to_value(value)?;
    serde_json::to_string(&tree)
}

pub fn from_slice<T: DeserializeOwned>(bytes: &[u8]) -> serde_json::Result<T> {
    serde_json::from_slice(bytes)
}
