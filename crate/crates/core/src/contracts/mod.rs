//! The two contract state machines hosted by the ledger.
//!
//! The device profile contract (DPC) keeps registration records and
//! per-window archive hash lists; the monitoring policies contract (MPC)
//! maps device ids to policy lists. Both live in one [`ContractState`] so a
//! transaction applies atomically against either.

pub mod canonical;
pub mod payload;

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cas::ContentHash;
use crate::ids::{DeviceId, PolicyId};
use crate::policy::{MonitoringPolicy, PolicyRule};
pub use payload::{AnchorBatch, AnchorEntry, AnchorRun, ContractCall, PayloadError};

/// Archive layout: one hash per device-window, or separate data/event hashes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchiveMode {
    #[default]
    Combined,
    Split,
}

/// Registration fields, as submitted by an operator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceRegistration {
    pub device_id: DeviceId,
    pub ip_address: String,
    pub model: String,
    pub credentials: String,
    /// Seconds between polls.
    pub polling_interval: u64,
    pub target_attributes: Vec<String>,
}

impl DeviceRegistration {
    pub fn validate(&self) -> Result<(), ContractError> {
        let invalid = |reason: &str| Err(ContractError::InvalidDevice(reason.to_owned()));
        if self.device_id.as_str().is_empty() {
            return invalid("device_id must not be empty");
        }
        if self.ip_address.parse::<Ipv4Addr>().is_err() {
            return invalid("ip_address must be a dotted-quad IPv4 address");
        }
        if self.polling_interval == 0 {
            return invalid("polling_interval must be positive");
        }
        if self.target_attributes.is_empty() || self.target_attributes.iter().any(|a| a.is_empty()) {
            return invalid("target_attributes must be a non-empty list of names");
        }
        Ok(())
    }
}

/// Mutable device fields; absent fields are left unchanged.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceUpdate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ip_address: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credentials: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polling_interval: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_attributes: Option<Vec<String>>,
}

impl DeviceUpdate {
    fn apply_to(&self, reg: &mut DeviceRegistration) {
        if let Some(v) = &self.ip_address {
            reg.ip_address = v.clone();
        }
        if let Some(v) = &self.model {
            reg.model = v.clone();
        }
        if let Some(v) = &self.credentials {
            reg.credentials = v.clone();
        }
        if let Some(v) = self.polling_interval {
            reg.polling_interval = v;
        }
        if let Some(v) = &self.target_attributes {
            reg.target_attributes = v.clone();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowArchive {
    pub window_index: u64,
    pub data_hash: ContentHash,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events_hash: Option<ContentHash>,
}

/// Stored DPC record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub registration: DeviceRegistration,
    pub slot: u32,
    pub archives: Vec<WindowArchive>,
    pub deleted: bool,
}

/// Read view of a device; never carries credentials.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicProfile {
    pub device_id: DeviceId,
    pub ip_address: String,
    pub model: String,
    pub polling_interval: u64,
    pub target_attributes: Vec<String>,
    pub slot: u32,
    pub archive_count: usize,
}

impl From<&DeviceProfile> for PublicProfile {
    fn from(p: &DeviceProfile) -> Self {
        PublicProfile {
            device_id: p.registration.device_id.clone(),
            ip_address: p.registration.ip_address.clone(),
            model: p.registration.model.clone(),
            polling_interval: p.registration.polling_interval,
            target_attributes: p.registration.target_attributes.clone(),
            slot: p.slot,
            archive_count: p.archives.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum DeviceView {
    Active(PublicProfile),
    Deleted { device_id: DeviceId },
}

/// Full registration as announced to sink nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceAnnouncement {
    pub registration: DeviceRegistration,
    pub slot: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchoredEntry {
    pub device_id: DeviceId,
    pub window_index: u64,
    pub data_hash: ContentHash,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events_hash: Option<ContentHash>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    DeviceAdded,
    DeviceUpdated,
    DeviceDeleted,
    PolicyAdded,
    PolicyUpdated,
    PolicyDeleted,
    HashesAnchored,
}

impl EventKind {
    pub const ALL: [EventKind; 7] = [
        EventKind::DeviceAdded,
        EventKind::DeviceUpdated,
        EventKind::DeviceDeleted,
        EventKind::PolicyAdded,
        EventKind::PolicyUpdated,
        EventKind::PolicyDeleted,
        EventKind::HashesAnchored,
    ];
}

/// State change emitted by a successful contract call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum ContractEvent {
    DeviceAdded(DeviceAnnouncement),
    DeviceUpdated(DeviceAnnouncement),
    DeviceDeleted { device_id: DeviceId },
    PolicyAdded { device_id: DeviceId, policy: MonitoringPolicy<f64> },
    PolicyUpdated { device_id: DeviceId, policy: MonitoringPolicy<f64> },
    PolicyDeleted { device_id: DeviceId, policy: MonitoringPolicy<f64> },
    HashesAnchored { entries: Vec<AnchoredEntry> },
}

impl ContractEvent {
    pub fn kind(&self) -> EventKind {
        match self {
            ContractEvent::DeviceAdded(_) => EventKind::DeviceAdded,
            ContractEvent::DeviceUpdated(_) => EventKind::DeviceUpdated,
            ContractEvent::DeviceDeleted { .. } => EventKind::DeviceDeleted,
            ContractEvent::PolicyAdded { .. } => EventKind::PolicyAdded,
            ContractEvent::PolicyUpdated { .. } => EventKind::PolicyUpdated,
            ContractEvent::PolicyDeleted { .. } => EventKind::PolicyDeleted,
            ContractEvent::HashesAnchored { .. } => EventKind::HashesAnchored,
        }
    }

    pub fn device_id(&self) -> Option<&DeviceId> {
        match self {
            ContractEvent::DeviceAdded(a) | ContractEvent::DeviceUpdated(a) => Some(&a.registration.device_id),
            ContractEvent::DeviceDeleted { device_id }
            | ContractEvent::PolicyAdded { device_id, .. }
            | ContractEvent::PolicyUpdated { device_id, .. }
            | ContractEvent::PolicyDeleted { device_id, .. } => Some(device_id),
            ContractEvent::HashesAnchored { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContractError {
    #[error("device {0} already registered")]
    DuplicateDevice(DeviceId),
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("unknown registry slot {0}")]
    UnknownSlot(u32),
    #[error("unknown policy {policy_id} for device {device_id}")]
    UnknownPolicy { device_id: DeviceId, policy_id: PolicyId },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid device: {0}")]
    InvalidDevice(String),
    #[error("batch of {len} entries exceeds capacity {max}")]
    BatchTooLarge { len: usize, max: u64 },
    #[error("window {got} for {device_id} is not after last anchored window {last}")]
    NonMonotonicWindow { device_id: DeviceId, last: u64, got: u64 },
    #[error("batch archive mode does not match the contract's mode")]
    ModeMismatch,
    #[error(transparent)]
    Payload(#[from] PayloadError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct PolicyList {
    next_id: u64,
    policies: Vec<MonitoringPolicy<f64>>,
}

/// Combined DPC + MPC state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractState {
    mode: ArchiveMode,
    /// Hashes per transaction in combined mode.
    capacity: u64,
    devices: BTreeMap<DeviceId, DeviceProfile>,
    slots: Vec<DeviceId>,
    /// Archive lists of earlier registrations of re-added devices.
    retired_archives: BTreeMap<DeviceId, Vec<Vec<WindowArchive>>>,
    policies: BTreeMap<DeviceId, PolicyList>,
}

impl ContractState {
    pub fn new(mode: ArchiveMode, combined_capacity: u64) -> ContractState {
        ContractState {
            mode,
            capacity: combined_capacity,
            devices: BTreeMap::new(),
            slots: Vec::new(),
            retired_archives: BTreeMap::new(),
            policies: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> ArchiveMode {
        self.mode
    }

    /// Devices one anchoring transaction may carry in the current mode.
    pub fn batch_capacity(&self) -> u64 {
        match self.mode {
            ArchiveMode::Combined => self.capacity,
            ArchiveMode::Split => self.capacity / 2,
        }
    }

    /// Applies a call atomically: on error, state is unchanged.
    pub fn apply(&mut self, call: &ContractCall) -> Result<Vec<ContractEvent>, ContractError> {
        match call {
            ContractCall::AddDevice(reg) => self.add_device(reg),
            ContractCall::UpdateDevice { device_id, changes } => self.update_device(device_id, changes),
            ContractCall::DeleteDevice { device_id } => self.delete_device(device_id),
            ContractCall::AddPolicy { device_id, policy } => self.add_policy(device_id, policy),
            ContractCall::UpdatePolicy { device_id, policy_id, policy } => {
                self.update_policy(device_id, *policy_id, policy)
            }
            ContractCall::DeletePolicy { device_id, policy_id } => self.delete_policy(device_id, *policy_id),
            ContractCall::AppendHashes(batch) => self.append_hashes(batch),
        }
    }

    fn add_device(&mut self, reg: &DeviceRegistration) -> Result<Vec<ContractEvent>, ContractError> {
        reg.validate()?;
        let slot = match self.devices.get(&reg.device_id) {
            Some(p) if !p.deleted => return Err(ContractError::DuplicateDevice(reg.device_id.clone())),
            Some(p) => p.slot,
            None => self.slots.len() as u32,
        };
        if let Some(old) = self.devices.remove(&reg.device_id) {
            self.retired_archives.entry(reg.device_id.clone()).or_default().push(old.archives);
        } else {
            self.slots.push(reg.device_id.clone());
        }
        self.devices.insert(
            reg.device_id.clone(),
            DeviceProfile { registration: reg.clone(), slot, archives: Vec::new(), deleted: false },
        );
        self.policies.entry(reg.device_id.clone()).or_default();
        Ok(vec![ContractEvent::DeviceAdded(DeviceAnnouncement { registration: reg.clone(), slot })])
    }

    fn active_mut(&mut self, device_id: &DeviceId) -> Result<&mut DeviceProfile, ContractError> {
        match self.devices.get_mut(device_id) {
            Some(p) if !p.deleted => Ok(p),
            _ => Err(ContractError::UnknownDevice(device_id.clone())),
        }
    }

    fn update_device(&mut self, device_id: &DeviceId, changes: &DeviceUpdate) -> Result<Vec<ContractEvent>, ContractError> {
        let profile = self.active_mut(device_id)?;
        let mut next = profile.registration.clone();
        changes.apply_to(&mut next);
        next.validate()?;
        profile.registration = next.clone();
        let slot = profile.slot;
        Ok(vec![ContractEvent::DeviceUpdated(DeviceAnnouncement { registration: next, slot })])
    }

    fn delete_device(&mut self, device_id: &DeviceId) -> Result<Vec<ContractEvent>, ContractError> {
        self.active_mut(device_id)?.deleted = true;
        Ok(vec![ContractEvent::DeviceDeleted { device_id: device_id.clone() }])
    }

    fn check_rule(rule: &PolicyRule<f64>) -> Result<(), ContractError> {
        if !rule.threshold_value.is_finite() {
            return Err(ContractError::InvalidPolicy("threshold_value must be finite".into()));
        }
        if rule.attribute.is_empty() {
            return Err(ContractError::InvalidPolicy("attribute must not be empty".into()));
        }
        Ok(())
    }

    fn add_policy(&mut self, device_id: &DeviceId, rule: &PolicyRule<f64>) -> Result<Vec<ContractEvent>, ContractError> {
        self.active_mut(device_id)?;
        Self::check_rule(rule)?;
        let list = self.policies.entry(device_id.clone()).or_default();
        let policy = MonitoringPolicy::from_rule(PolicyId(list.next_id), rule.clone());
        list.next_id += 1;
        list.policies.push(policy.clone());
        Ok(vec![ContractEvent::PolicyAdded { device_id: device_id.clone(), policy }])
    }

    fn policy_index(&self, device_id: &DeviceId, policy_id: PolicyId) -> Result<usize, ContractError> {
        self.policies
            .get(device_id)
            .and_then(|l| l.policies.iter().position(|p| p.policy_id == policy_id))
            .ok_or_else(|| ContractError::UnknownPolicy { device_id: device_id.clone(), policy_id })
    }

    fn update_policy(
        &mut self,
        device_id: &DeviceId,
        policy_id: PolicyId,
        rule: &PolicyRule<f64>,
    ) -> Result<Vec<ContractEvent>, ContractError> {
        self.active_mut(device_id)?;
        let idx = self.policy_index(device_id, policy_id)?;
        Self::check_rule(rule)?;
        let policy = MonitoringPolicy::from_rule(policy_id, rule.clone());
        self.policies.get_mut(device_id).expect("indexed above").policies[idx] = policy.clone();
        Ok(vec![ContractEvent::PolicyUpdated { device_id: device_id.clone(), policy }])
    }

    fn delete_policy(&mut self, device_id: &DeviceId, policy_id: PolicyId) -> Result<Vec<ContractEvent>, ContractError> {
        self.active_mut(device_id)?;
        let idx = self.policy_index(device_id, policy_id)?;
        let policy = self.policies.get_mut(device_id).expect("indexed above").policies.remove(idx);
        Ok(vec![ContractEvent::PolicyDeleted { device_id: device_id.clone(), policy }])
    }

    fn append_hashes(&mut self, batch: &AnchorBatch) -> Result<Vec<ContractEvent>, ContractError> {
        if batch.mode != self.mode {
            return Err(ContractError::ModeMismatch);
        }
        let max = self.batch_capacity();
        if batch.len() as u64 > max {
            return Err(ContractError::BatchTooLarge { len: batch.len(), max });
        }
        // validate everything before touching state
        let mut last_seen: BTreeMap<&DeviceId, u64> = BTreeMap::new();
        let mut resolved = Vec::with_capacity(batch.len());
        for (slot, entry) in batch.entries() {
            let device_id = self.slots.get(slot as usize).ok_or(ContractError::UnknownSlot(slot))?;
            let profile = &self.devices[device_id];
            let last = last_seen
                .get(device_id)
                .copied()
                .or_else(|| profile.archives.last().map(|a| a.window_index));
            if let Some(last) = last {
                if batch.window_index <= last {
                    return Err(ContractError::NonMonotonicWindow {
                        device_id: device_id.clone(),
                        last,
                        got: batch.window_index,
                    });
                }
            }
            last_seen.insert(device_id, batch.window_index);
            resolved.push((device_id.clone(), *entry));
        }
        let mut anchored = Vec::with_capacity(resolved.len());
        for (device_id, entry) in resolved {
            let archive = WindowArchive {
                window_index: batch.window_index,
                data_hash: entry.data_hash,
                events_hash: entry.events_hash,
            };
            self.devices.get_mut(&device_id).expect("resolved above").archives.push(archive);
            anchored.push(AnchoredEntry {
                device_id,
                window_index: batch.window_index,
                data_hash: entry.data_hash,
                events_hash: entry.events_hash,
            });
        }
        Ok(vec![ContractEvent::HashesAnchored { entries: anchored }])
    }

    pub fn get_device(&self, device_id: &DeviceId) -> Result<DeviceView, ContractError> {
        match self.devices.get(device_id) {
            Some(p) if p.deleted => Ok(DeviceView::Deleted { device_id: device_id.clone() }),
            Some(p) => Ok(DeviceView::Active(p.into())),
            None => Err(ContractError::UnknownDevice(device_id.clone())),
        }
    }

    /// Active devices in id order.
    pub fn list_devices(&self) -> Vec<PublicProfile> {
        self.devices.values().filter(|p| !p.deleted).map(PublicProfile::from).collect()
    }

    pub fn get_policies(&self, device_id: &DeviceId) -> Result<Vec<MonitoringPolicy<f64>>, ContractError> {
        if !self.devices.contains_key(device_id) {
            return Err(ContractError::UnknownDevice(device_id.clone()));
        }
        Ok(self.policies.get(device_id).map(|l| l.policies.clone()).unwrap_or_default())
    }

    /// Archive list of the current registration; readable after deletion.
    pub fn get_hashes(&self, device_id: &DeviceId) -> Result<Vec<WindowArchive>, ContractError> {
        self.devices
            .get(device_id)
            .map(|p| p.archives.clone())
            .ok_or_else(|| ContractError::UnknownDevice(device_id.clone()))
    }

    pub fn is_active(&self, device_id: &DeviceId) -> bool {
        self.devices.get(device_id).is_some_and(|p| !p.deleted)
    }

    pub fn slot_of(&self, device_id: &DeviceId) -> Option<u32> {
        self.devices.get(device_id).map(|p| p.slot)
    }

    pub fn device_count(&self) -> usize {
        self.devices.len()
    }

    /// Export with credentials stripped, for inspection tools.
    pub fn public_export(&self) -> serde_json::Value {
        let devices: BTreeMap<&DeviceId, serde_json::Value> = self
            .devices
            .iter()
            .map(|(id, p)| {
                let view = serde_json::json!({
                    "profile": PublicProfile::from(p),
                    "deleted": p.deleted,
                    "archives": p.archives,
                });
                (id, view)
            })
            .collect();
        let policies: BTreeMap<&DeviceId, &Vec<MonitoringPolicy<f64>>> =
            self.policies.iter().map(|(id, l)| (id, &l.policies)).collect();
        serde_json::json!({
            "mode": self.mode,
            "batch_capacity": self.batch_capacity(),
            "dpc": devices,
            "mpc": policies,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Criticality, ThresholdType};

    fn state() -> ContractState {
        ContractState::new(ArchiveMode::Combined, 2977)
    }

    fn reg(id: &str) -> DeviceRegistration {
        DeviceRegistration { device_id: id.into(), ..canonical::device_registration() }
    }

    fn hash(n: u32) -> ContentHash {
        ContentHash::of(&n.to_be_bytes())
    }

    fn anchor(window: u64, slots: &[u32]) -> ContractCall {
        let entries = slots.iter().map(|&s| (s, AnchorEntry { data_hash: hash(s), events_hash: None })).collect();
        ContractCall::AppendHashes(AnchorBatch::from_entries(ArchiveMode::Combined, window, entries))
    }

    #[test]
    fn duplicate_and_readd() {
        let mut s = state();
        s.apply(&ContractCall::AddDevice(reg("a"))).unwrap();
        assert_eq!(
            s.apply(&ContractCall::AddDevice(reg("a"))),
            Err(ContractError::DuplicateDevice("a".into()))
        );
        s.apply(&anchor(0, &[0])).unwrap();
        s.apply(&ContractCall::DeleteDevice { device_id: "a".into() }).unwrap();
        // archives readable after delete
        assert_eq!(s.get_hashes(&"a".into()).unwrap().len(), 1);
        assert_eq!(s.get_device(&"a".into()).unwrap(), DeviceView::Deleted { device_id: "a".into() });
        let events = s.apply(&ContractCall::AddDevice(reg("a"))).unwrap();
        assert!(matches!(&events[0], ContractEvent::DeviceAdded(a) if a.slot == 0));
        assert!(s.get_hashes(&"a".into()).unwrap().is_empty());
    }

    #[test]
    fn update_and_delete_rules() {
        let mut s = state();
        s.apply(&ContractCall::AddDevice(reg("a"))).unwrap();
        s.apply(&ContractCall::UpdateDevice {
            device_id: "a".into(),
            changes: DeviceUpdate { polling_interval: Some(30), ..Default::default() },
        })
        .unwrap();
        match s.get_device(&"a".into()).unwrap() {
            DeviceView::Active(p) => assert_eq!(p.polling_interval, 30),
            other => panic!("unexpected {other:?}"),
        }
        s.apply(&ContractCall::DeleteDevice { device_id: "a".into() }).unwrap();
        let err = s
            .apply(&ContractCall::UpdateDevice { device_id: "a".into(), changes: DeviceUpdate::default() })
            .unwrap_err();
        assert_eq!(err, ContractError::UnknownDevice("a".into()));
        let bad = DeviceUpdate { polling_interval: Some(0), ..Default::default() };
        s.apply(&ContractCall::AddDevice(reg("b"))).unwrap();
        assert!(matches!(
            s.apply(&ContractCall::UpdateDevice { device_id: "b".into(), changes: bad }),
            Err(ContractError::InvalidDevice(_))
        ));
    }

    #[test]
    fn registration_validation() {
        let mut bad = reg("a");
        bad.ip_address = "10.0.0".into();
        assert!(bad.validate().is_err());
        let mut bad = reg("a");
        bad.target_attributes.clear();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn policy_table_rows_roundtrip_in_order() {
        let mut s = state();
        s.apply(&ContractCall::AddDevice(reg("a"))).unwrap();
        for rule in [canonical::policy_rule(), canonical::policy_rule_b()] {
            s.apply(&ContractCall::AddPolicy { device_id: "a".into(), policy: rule }).unwrap();
        }
        let got = s.get_policies(&"a".into()).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].rule(), canonical::policy_rule());
        assert_eq!(got[0].attribute, "Attribute A");
        assert_eq!(got[0].threshold_type, ThresholdType::Minimum);
        assert_eq!(got[0].threshold_value, 10.0);
        assert_eq!(got[0].max_violations, 5);
        assert_eq!(got[0].criticality, Criticality::Medium);
        assert_eq!(got[1].rule(), canonical::policy_rule_b());
        assert_eq!((got[0].policy_id, got[1].policy_id), (PolicyId(0), PolicyId(1)));
    }

    #[test]
    fn policy_errors() {
        let mut s = state();
        let rule = canonical::policy_rule();
        assert_eq!(
            s.apply(&ContractCall::AddPolicy { device_id: "x".into(), policy: rule.clone() }),
            Err(ContractError::UnknownDevice("x".into()))
        );
        s.apply(&ContractCall::AddDevice(reg("a"))).unwrap();
        let nan = PolicyRule { threshold_value: f64::NAN, ..rule.clone() };
        assert!(matches!(
            s.apply(&ContractCall::AddPolicy { device_id: "a".into(), policy: nan }),
            Err(ContractError::InvalidPolicy(_))
        ));
        assert!(matches!(
            s.apply(&ContractCall::DeletePolicy { device_id: "a".into(), policy_id: PolicyId(4) }),
            Err(ContractError::UnknownPolicy { .. })
        ));
        s.apply(&ContractCall::AddPolicy { device_id: "a".into(), policy: rule.clone() }).unwrap();
        let upd = PolicyRule { max_violations: 1, ..rule };
        let ev = s
            .apply(&ContractCall::UpdatePolicy { device_id: "a".into(), policy_id: PolicyId(0), policy: upd })
            .unwrap();
        assert!(matches!(&ev[0], ContractEvent::PolicyUpdated { policy, .. } if policy.max_violations == 1));
        s.apply(&ContractCall::DeletePolicy { device_id: "a".into(), policy_id: PolicyId(0) }).unwrap();
        assert!(s.get_policies(&"a".into()).unwrap().is_empty());
    }

    #[test]
    fn anchoring_rules() {
        let mut s = state();
        for id in ["a", "b", "c"] {
            s.apply(&ContractCall::AddDevice(reg(id))).unwrap();
        }
        let ev = s.apply(&anchor(0, &[0, 1, 2])).unwrap();
        assert!(matches!(&ev[0], ContractEvent::HashesAnchored { entries } if entries.len() == 3));
        assert!(matches!(s.apply(&anchor(0, &[1])), Err(ContractError::NonMonotonicWindow { .. })));
        assert_eq!(s.apply(&anchor(1, &[7])), Err(ContractError::UnknownSlot(7)));
        // failed batch left nothing behind
        assert!(matches!(s.apply(&anchor(1, &[0, 9])), Err(ContractError::UnknownSlot(9))));
        assert_eq!(s.get_hashes(&"a".into()).unwrap().len(), 1);
        s.apply(&anchor(2, &[0])).unwrap();
        let idx: Vec<u64> = s.get_hashes(&"a".into()).unwrap().iter().map(|a| a.window_index).collect();
        assert_eq!(idx, vec![0, 2]);
    }

    #[test]
    fn batch_capacity_boundary() {
        let mut s = state();
        for i in 0..2978 {
            s.apply(&ContractCall::AddDevice(reg(&format!("d{i:04}")))).unwrap();
        }
        let all: Vec<u32> = (0..2978).collect();
        assert_eq!(
            s.apply(&anchor(0, &all)),
            Err(ContractError::BatchTooLarge { len: 2978, max: 2977 })
        );
        s.apply(&anchor(0, &all[..2977])).unwrap();
    }

    #[test]
    fn split_mode_halves_capacity_and_requires_event_hashes() {
        let mut s = ContractState::new(ArchiveMode::Split, 2977);
        assert_eq!(s.batch_capacity(), 1488);
        s.apply(&ContractCall::AddDevice(reg("a"))).unwrap();
        assert_eq!(s.apply(&anchor(0, &[0])), Err(ContractError::ModeMismatch));
        let entry = AnchorEntry { data_hash: hash(1), events_hash: Some(hash(2)) };
        let batch = AnchorBatch::from_entries(ArchiveMode::Split, 0, vec![(0, entry)]);
        s.apply(&ContractCall::AppendHashes(batch)).unwrap();
        assert_eq!(s.get_hashes(&"a".into()).unwrap()[0].events_hash, Some(hash(2)));
    }

    #[test]
    fn reads_never_expose_credentials() {
        let mut s = state();
        let mut r = reg("a");
        r.credentials = "TOPSECRET".into();
        s.apply(&ContractCall::AddDevice(r)).unwrap();
        let outputs = [
            serde_json::to_string(&s.get_device(&"a".into()).unwrap()).unwrap(),
            serde_json::to_string(&s.list_devices()).unwrap(),
            serde_json::to_string(&s.public_export()).unwrap(),
        ];
        for out in outputs {
            assert!(!out.contains("TOPSECRET") && !out.contains("credentials"), "{out}");
        }
    }

    #[test]
    fn list_devices_empty() {
        assert!(state().list_devices().is_empty());
    }
}
