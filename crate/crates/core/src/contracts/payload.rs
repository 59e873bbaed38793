//! Transaction payload encodings.
//!
//! Every operation except `append_hashes` is canonical JSON of its
//! arguments. Anchoring batches use a compact big-endian binary layout so that
//! each entry costs exactly its hash bytes:
//!
//! ```text
//! u8   mode           0 = combined, 1 = split
//! u64  window_index
//! u16  run_count
//! run_count x {
//!     u32  first_slot
//!     u16  len
//!     len x { [u8; 32] data_hash, [u8; 32] events_hash (split only) }
//! }
//! ```
//!
//! A run addresses devices by consecutive registry slots starting at
//! `first_slot`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ArchiveMode, DeviceRegistration, DeviceUpdate};
use crate::canonical;
use crate::cas::ContentHash;
use crate::gas::OpKind;
use crate::ids::{DeviceId, PolicyId};
use crate::policy::PolicyRule;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PayloadError {
    #[error("malformed {op} payload: {reason}")]
    Malformed { op: OpKind, reason: String },
}

fn malformed(op: OpKind, reason: impl ToString) -> PayloadError {
    PayloadError::Malformed { op, reason: reason.to_string() }
}

/// A decoded contract operation.
#[derive(Debug, Clone, PartialEq)]
pub enum ContractCall {
    AddDevice(DeviceRegistration),
    UpdateDevice { device_id: DeviceId, changes: DeviceUpdate },
    DeleteDevice { device_id: DeviceId },
    AddPolicy { device_id: DeviceId, policy: PolicyRule<f64> },
    UpdatePolicy { device_id: DeviceId, policy_id: PolicyId, policy: PolicyRule<f64> },
    DeletePolicy { device_id: DeviceId, policy_id: PolicyId },
    AppendHashes(AnchorBatch),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UpdateDevicePayload {
    device_id: DeviceId,
    changes: DeviceUpdate,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceRefPayload {
    device_id: DeviceId,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AddPolicyPayload {
    device_id: DeviceId,
    policy: PolicyRule<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UpdatePolicyPayload {
    device_id: DeviceId,
    policy_id: PolicyId,
    policy: PolicyRule<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyRefPayload {
    device_id: DeviceId,
    policy_id: PolicyId,
}

impl ContractCall {
    pub fn op_kind(&self) -> OpKind {
        match self {
            ContractCall::AddDevice(_) => OpKind::AddDevice,
            ContractCall::UpdateDevice { .. } => OpKind::UpdateDevice,
            ContractCall::DeleteDevice { .. } => OpKind::DeleteDevice,
            ContractCall::AddPolicy { .. } => OpKind::AddPolicy,
            ContractCall::UpdatePolicy { .. } => OpKind::UpdatePolicy,
            ContractCall::DeletePolicy { .. } => OpKind::DeletePolicy,
            ContractCall::AppendHashes(_) => OpKind::AppendHashes,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let json = match self {
            ContractCall::AddDevice(reg) => canonical::to_vec(reg),
            ContractCall::UpdateDevice { device_id, changes } => canonical::to_vec(&UpdateDevicePayload {
                device_id: device_id.clone(),
                changes: changes.clone(),
            }),
            ContractCall::DeleteDevice { device_id } => {
                canonical::to_vec(&DeviceRefPayload { device_id: device_id.clone() })
            }
            ContractCall::AddPolicy { device_id, policy } => canonical::to_vec(&AddPolicyPayload {
                device_id: device_id.clone(),
                policy: policy.clone(),
            }),
            ContractCall::UpdatePolicy { device_id, policy_id, policy } => canonical::to_vec(&UpdatePolicyPayload {
                device_id: device_id.clone(),
                policy_id: *policy_id,
                policy: policy.clone(),
            }),
            ContractCall::DeletePolicy { device_id, policy_id } => {
                canonical::to_vec(&PolicyRefPayload { device_id: device_id.clone(), policy_id: *policy_id })
            }
            ContractCall::AppendHashes(batch) => return batch.encode(),
        };
        // plain data structs with string keys always serialize
        json.expect("contract payloads serialize")
    }

    pub fn decode(op: OpKind, bytes: &[u8]) -> Result<ContractCall, PayloadError> {
        let json_err = |e: serde_json::Error| malformed(op, e);
        Ok(match op {
            OpKind::AddDevice => ContractCall::AddDevice(canonical::from_slice(bytes).map_err(json_err)?),
            OpKind::UpdateDevice => {
                let p: UpdateDevicePayload = canonical::from_slice(bytes).map_err(json_err)?;
                ContractCall::UpdateDevice { device_id: p.device_id, changes: p.changes }
            }
            OpKind::DeleteDevice => {
                let p: DeviceRefPayload = canonical::from_slice(bytes).map_err(json_err)?;
                ContractCall::DeleteDevice { device_id: p.device_id }
            }
            OpKind::AddPolicy => {
                let p: AddPolicyPayload = canonical::from_slice(bytes).map_err(json_err)?;
                ContractCall::AddPolicy { device_id: p.device_id, policy: p.policy }
            }
            OpKind::UpdatePolicy => {
                let p: UpdatePolicyPayload = canonical::from_slice(bytes).map_err(json_err)?;
                ContractCall::UpdatePolicy { device_id: p.device_id, policy_id: p.policy_id, policy: p.policy }
            }
            OpKind::DeletePolicy => {
                let p: PolicyRefPayload = canonical::from_slice(bytes).map_err(json_err)?;
                ContractCall::DeletePolicy { device_id: p.device_id, policy_id: p.policy_id }
            }
            OpKind::AppendHashes => ContractCall::AppendHashes(AnchorBatch::decode(bytes)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnchorEntry {
    pub data_hash: ContentHash,
    pub events_hash: Option<ContentHash>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorRun {
    pub first_slot: u32,
    pub entries: Vec<AnchorEntry>,
}

/// One window's archive hashes for a set of device slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorBatch {
    pub mode: ArchiveMode,
    pub window_index: u64,
    pub runs: Vec<AnchorRun>,
}

const HEADER_LEN: usize = 1 + 8 + 2;
const RUN_HEADER_LEN: usize = 4 + 2;

impl AnchorBatch {
    /// Groups `(slot, entry)` pairs into runs of consecutive slots.
    pub fn from_entries(mode: ArchiveMode, window_index: u64, mut entries: Vec<(u32, AnchorEntry)>) -> AnchorBatch {
        entries.sort_by_key(|(slot, _)| *slot);
        let mut runs: Vec<AnchorRun> = Vec::new();
        for (slot, entry) in entries {
            match runs.last_mut() {
                Some(run)
                    if run.entries.len() < u16::MAX as usize
                        && run.first_slot as u64 + run.entries.len() as u64 == slot as u64 =>
                {
                    run.entries.push(entry)
                }
                _ => runs.push(AnchorRun { first_slot: slot, entries: vec![entry] }),
            }
        }
        AnchorBatch { mode, window_index, runs }
    }

    pub fn len(&self) -> usize {
        self.runs.iter().map(|r| r.entries.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(slot, entry)` pairs in payload order.
    pub fn entries(&self) -> impl Iterator<Item = (u32, &AnchorEntry)> {
        self.runs
            .iter()
            .flat_map(|r| r.entries.iter().enumerate().map(move |(i, e)| (r.first_slot + i as u32, e)))
    }

    fn entry_len(&self) -> usize {
        match self.mode {
            ArchiveMode::Combined => 32,
            ArchiveMode::Split => 64,
        }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.runs.len() * RUN_HEADER_LEN + self.len() * self.entry_len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(match self.mode {
            ArchiveMode::Combined => 0,
            ArchiveMode::Split => 1,
        });
        out.extend_from_slice(&self.window_index.to_be_bytes());
        out.extend_from_slice(&(self.runs.len() as u16).to_be_bytes());
        for run in &self.runs {
            out.extend_from_slice(&run.first_slot.to_be_bytes());
            out.extend_from_slice(&(run.entries.len() as u16).to_be_bytes());
            for e in &run.entries {
                out.extend_from_slice(e.data_hash.as_bytes());
                if self.mode == ArchiveMode::Split {
                    let events = e.events_hash.expect("split-mode entries carry an events hash");
                    out.extend_from_slice(events.as_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<AnchorBatch, PayloadError> {
        let op = OpKind::AppendHashes;
        let mut cur = Cursor { bytes, pos: 0 };
        let mode = match cur.take::<1>().ok_or_else(|| malformed(op, "missing header"))?[0] {
            0 => ArchiveMode::Combined,
            1 => ArchiveMode::Split,
            other => return Err(malformed(op, format!("unknown mode byte {other}"))),
        };
        let window_index = u64::from_be_bytes(cur.take().ok_or_else(|| malformed(op, "missing window index"))?);
        let run_count = u16::from_be_bytes(cur.take().ok_or_else(|| malformed(op, "missing run count"))?);
        let mut runs = Vec::with_capacity(run_count as usize);
        for _ in 0..run_count {
            let first_slot = u32::from_be_bytes(cur.take().ok_or_else(|| malformed(op, "truncated run header"))?);
            let len = u16::from_be_bytes(cur.take().ok_or_else(|| malformed(op, "truncated run header"))?);
            if len == 0 {
                return Err(malformed(op, "empty run"));
            }
            let mut entries = Vec::with_capacity(len as usize);
            for _ in 0..len {
                let data_hash = ContentHash::from_bytes(cur.take().ok_or_else(|| malformed(op, "truncated entry"))?);
                let events_hash = match mode {
                    ArchiveMode::Combined => None,
                    ArchiveMode::Split => {
                        Some(ContentHash::from_bytes(cur.take().ok_or_else(|| malformed(op, "truncated entry"))?))
                    }
                };
                entries.push(AnchorEntry { data_hash, events_hash });
            }
            runs.push(AnchorRun { first_slot, entries });
        }
        if cur.pos != bytes.len() {
            return Err(malformed(op, "trailing bytes"));
        }
        Ok(AnchorBatch { mode, window_index, runs })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let chunk = self.bytes.get(self.pos..self.pos + N)?;
        self.pos += N;
        chunk.try_into().ok()
    }
}
