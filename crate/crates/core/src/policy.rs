//! Monitoring policies and the violation-counting engine.
//!
//! Counting rules:
//! - a sample violates a `Maximum` policy when strictly above the threshold,
//!   a `Minimum` policy when strictly below; equality is compliant;
//! - violations accumulate within an archival window (compliant samples do
//!   not reset the count);
//! - violation number `max_violations + 1` emits an event and resets the
//!   counter, so sustained faults re-alert;
//! - counters reset at window rollover and when their policy changes.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::{DeviceId, Millis, PolicyId};
use crate::scalar::Reading;
use crate::tsdb::{Sample, ViolationEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ThresholdType {
    Minimum,
    Maximum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Criticality {
    Low,
    Medium,
    High,
}

impl fmt::Display for Criticality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Policy fields as submitted; the contract assigns the id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyRule<V> {
    pub attribute: String,
    pub threshold_type: ThresholdType,
    pub threshold_value: V,
    pub max_violations: u32,
    pub criticality: Criticality,
}

impl<V: Reading> PolicyRule<V> {
    pub fn is_valid(&self) -> bool {
        self.threshold_value.is_finite_reading() && !self.attribute.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringPolicy<V> {
    pub policy_id: PolicyId,
    pub attribute: String,
    pub threshold_type: ThresholdType,
    pub threshold_value: V,
    pub max_violations: u32,
    pub criticality: Criticality,
}

impl<V: Clone> MonitoringPolicy<V> {
    pub fn from_rule(policy_id: PolicyId, rule: PolicyRule<V>) -> Self {
        MonitoringPolicy {
            policy_id,
            attribute: rule.attribute,
            threshold_type: rule.threshold_type,
            threshold_value: rule.threshold_value,
            max_violations: rule.max_violations,
            criticality: rule.criticality,
        }
    }

    pub fn rule(&self) -> PolicyRule<V> {
        PolicyRule {
            attribute: self.attribute.clone(),
            threshold_type: self.threshold_type,
            threshold_value: self.threshold_value.clone(),
            max_violations: self.max_violations,
            criticality: self.criticality,
        }
    }
}

#[inline]
pub fn is_violation<V: Reading>(value: V, policy: &MonitoringPolicy<V>) -> bool {
    match policy.threshold_type {
        ThresholdType::Maximum => value > policy.threshold_value,
        ThresholdType::Minimum => value < policy.threshold_value,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationCounter {
    pub count: u64,
    pub window_index: u64,
}

/// Counters of one device, keyed by policy.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceCounters {
    counters: BTreeMap<PolicyId, ViolationCounter>,
}

impl DeviceCounters {
    pub fn get(&self, policy_id: PolicyId) -> Option<&ViolationCounter> {
        self.counters.get(&policy_id)
    }

    pub fn count(&self, policy_id: PolicyId) -> u64 {
        self.counters.get(&policy_id).map_or(0, |c| c.count)
    }

    pub fn reset(&mut self, reason: ResetReason) {
        match reason {
            ResetReason::WindowRollover => self.counters.values_mut().for_each(|c| c.count = 0),
            ResetReason::PolicyChanged(id) => {
                if let Some(c) = self.counters.get_mut(&id) {
                    c.count = 0;
                }
            }
        }
    }

    pub fn forget(&mut self, policy_id: PolicyId) {
        self.counters.remove(&policy_id);
    }

    pub fn iter(&self) -> impl Iterator<Item = (PolicyId, &ViolationCounter)> {
        self.counters.iter().map(|(k, v)| (*k, v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetReason {
    WindowRollover,
    PolicyChanged(PolicyId),
}

/// Counter state for many devices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CounterState {
    devices: BTreeMap<DeviceId, DeviceCounters>,
}

impl CounterState {
    pub fn device(&self, device_id: &DeviceId) -> Option<&DeviceCounters> {
        self.devices.get(device_id)
    }

    pub fn device_mut(&mut self, device_id: &DeviceId) -> &mut DeviceCounters {
        self.devices.entry(device_id.clone()).or_default()
    }

    /// Unknown devices are a no-op.
    pub fn reset_counters(&mut self, device_id: &DeviceId, reason: ResetReason) {
        if let Some(c) = self.devices.get_mut(device_id) {
            c.reset(reason);
        }
    }

    pub fn remove_device(&mut self, device_id: &DeviceId) {
        self.devices.remove(device_id);
    }
}

/// Evaluates samples against policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyEngine {
    window: Millis,
}

impl PolicyEngine {
    /// `window` is the archival interval that bounds counter lifetime.
    pub fn new(window: Millis) -> PolicyEngine {
        assert!(window > 0, "archival window must be positive");
        PolicyEngine { window }
    }

    pub fn window(&self) -> Millis {
        self.window
    }

    /// Pure form: returns the updated counters and the emitted events.
    pub fn evaluate<V: Reading>(
        &self,
        sample: &Sample<V>,
        policies: &[MonitoringPolicy<V>],
        counters: &DeviceCounters,
    ) -> (DeviceCounters, Vec<ViolationEvent<V>>) {
        let mut next = counters.clone();
        let events = self.evaluate_in_place(sample, policies, &mut next);
        (next, events)
    }

    pub fn evaluate_in_place<V: Reading>(
        &self,
        sample: &Sample<V>,
        policies: &[MonitoringPolicy<V>],
        counters: &mut DeviceCounters,
    ) -> Vec<ViolationEvent<V>> {
        let window_index = sample.timestamp / self.window;
        let mut applicable: Vec<&MonitoringPolicy<V>> =
            policies.iter().filter(|p| p.attribute == sample.attribute).collect();
        applicable.sort_by_key(|p| p.policy_id);

        let mut events = Vec::new();
        for policy in applicable {
            let counter = counters
                .counters
                .entry(policy.policy_id)
                .or_insert(ViolationCounter { count: 0, window_index });
            if counter.window_index != window_index {
                counter.count = 0;
                counter.window_index = window_index;
            }
            if !is_violation(sample.value, policy) {
                continue;
            }
            counter.count += 1;
            let budget = u64::from(policy.max_violations);
            if counter.count > budget {
                events.push(ViolationEvent {
                    device_id: sample.device_id.clone(),
                    attribute: sample.attribute.clone(),
                    policy_id: policy.policy_id,
                    criticality: policy.criticality,
                    violation_count: budget + 1,
                    threshold_type: policy.threshold_type,
                    threshold_value: policy.threshold_value,
                    timestamp: sample.timestamp,
                });
                counter.count = 0;
            }
        }
        events
    }
}
