//! Canonical example payloads.
//!
//! The default gas surcharges are derived from these exact byte strings, and
//! the benchmark fleet produces payloads of identical length, so changing any
//! field width here changes confirmed gas.

use super::payload::{AnchorBatch, AnchorEntry, ContractCall};
use super::{ArchiveMode, DeviceRegistration, DeviceUpdate};
use crate::cas::ContentHash;
use crate::gas::{intrinsic_gas, Gas, GasSchedule, OpKind};
use crate::ids::{DeviceId, PolicyId};
use crate::policy::{Criticality, PolicyRule, ThresholdType};

/// Published average gas per interaction row.
pub const DEVICE_OP_GAS: Gas = 137_200;
pub const POLICY_OP_GAS: Gas = 199_500;
pub const ANCHOR_ONE_GAS: Gas = 134_600;

pub fn device_id() -> DeviceId {
    DeviceId::from("dev-0001")
}

pub fn device_registration() -> DeviceRegistration {
    DeviceRegistration {
        device_id: device_id(),
        ip_address: "10.100.100.101".into(),
        model: "sim-sensor-v1".into(),
        credentials: "secret-0001".into(),
        polling_interval: 60,
        target_attributes: vec!["Attribute A".into(), "Attribute B".into()],
    }
}

/// First row of the illustrative policy list.
pub fn policy_rule() -> PolicyRule<f64> {
    PolicyRule {
        attribute: "Attribute A".into(),
        threshold_type: ThresholdType::Minimum,
        threshold_value: 10.0,
        max_violations: 5,
        criticality: Criticality::Medium,
    }
}

/// Second row of the illustrative policy list.
pub fn policy_rule_b() -> PolicyRule<f64> {
    PolicyRule {
        attribute: "Attribute B".into(),
        threshold_type: ThresholdType::Maximum,
        threshold_value: 100.0,
        max_violations: 10,
        criticality: Criticality::High,
    }
}

pub fn add_device() -> ContractCall {
    ContractCall::AddDevice(device_registration())
}

pub fn update_device() -> ContractCall {
    ContractCall::UpdateDevice {
        device_id: device_id(),
        changes: DeviceUpdate { polling_interval: Some(30), ..DeviceUpdate::default() },
    }
}

pub fn delete_device() -> ContractCall {
    ContractCall::DeleteDevice { device_id: device_id() }
}

pub fn add_policy() -> ContractCall {
    ContractCall::AddPolicy { device_id: device_id(), policy: policy_rule() }
}

pub fn update_policy() -> ContractCall {
    ContractCall::UpdatePolicy {
        device_id: device_id(),
        policy_id: PolicyId(0),
        policy: PolicyRule { max_violations: 3, ..policy_rule() },
    }
}

pub fn delete_policy() -> ContractCall {
    ContractCall::DeletePolicy { device_id: device_id(), policy_id: PolicyId(0) }
}

/// One combined-mode entry for slot 0, window 0. The digest is that of the
/// bytes `window-0`, a fixed stand-in for an archive object.
pub fn append_hashes() -> ContractCall {
    let entry = AnchorEntry { data_hash: ContentHash::of(b"window-0"), events_hash: None };
    ContractCall::AppendHashes(AnchorBatch::from_entries(ArchiveMode::Combined, 0, vec![(0, entry)]))
}

pub fn call_for(op: OpKind) -> ContractCall {
    match op {
        OpKind::AddDevice => add_device(),
        OpKind::UpdateDevice => update_device(),
        OpKind::DeleteDevice => delete_device(),
        OpKind::AddPolicy => add_policy(),
        OpKind::UpdatePolicy => update_policy(),
        OpKind::DeletePolicy => delete_policy(),
        OpKind::AppendHashes => append_hashes(),
    }
}

pub fn target_gas(op: OpKind) -> Gas {
    match op {
        OpKind::AddDevice | OpKind::UpdateDevice | OpKind::DeleteDevice => DEVICE_OP_GAS,
        OpKind::AddPolicy | OpKind::UpdatePolicy | OpKind::DeletePolicy => POLICY_OP_GAS,
        OpKind::AppendHashes => ANCHOR_ONE_GAS,
    }
}

/// Surcharge that makes the canonical payload for `op` hit its target.
pub fn calibrated_surcharge(op: OpKind, schedule: &GasSchedule) -> Gas {
    let payload = call_for(op).encode();
    target_gas(op) - intrinsic_gas(&payload, schedule)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_surcharges_match_canonical_payloads() {
        let schedule = GasSchedule::default();
        for op in OpKind::ALL {
            assert_eq!(schedule.surcharge(op), calibrated_surcharge(op, &schedule), "{op}");
            assert_eq!(schedule.execution_gas(op, &call_for(op).encode()), target_gas(op), "{op}");
        }
    }

    #[test]
    fn canonical_calls_roundtrip() {
        for op in OpKind::ALL {
            let call = call_for(op);
            assert_eq!(call.op_kind(), op);
            assert_eq!(ContractCall::decode(op, &call.encode()).unwrap(), call);
        }
    }
}
