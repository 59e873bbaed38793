//! Fog nodes: aggregators poll devices and run the policy engine; sinks
//! follow the ledger, hand registrations to aggregators and anchor hourly
//! archives.
//!
//! Nodes share no mutable state. Sinks talk to aggregators over channels;
//! both write to the shared stores (CAS, TSDB) through their own APIs.

use std::collections::{BTreeMap, HashMap};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::cas::{CasError, ContentHash, ContentStore};
use crate::contracts::payload::{AnchorBatch, AnchorEntry};
use crate::contracts::{ArchiveMode, ContractCall, ContractEvent, DeviceRegistration};
use crate::device_sim::{derive_seed, Gateway, PollError};
use crate::feed::EventFeed;
use crate::gas::{intrinsic_gas, GasSchedule};
use crate::ids::{DeviceId, Millis, PolicyId, SECOND};
use crate::ledger::{Ledger, LedgerError, Subscription, TxId, TxRequest};
use crate::policy::{CounterState, MonitoringPolicy, PolicyEngine, ResetReason};
use crate::tsdb::{Sample, TimeSeriesStore, TsdbError, ViolationEvent, WindowRef};

/// Archived content of one device window. In split mode the data object
/// carries only samples and the events object only events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveObject {
    pub device_id: DeviceId,
    pub window_index: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<Sample<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<ViolationEvent<f64>>>,
}

impl ArchiveObject {
    pub fn to_bytes(&self) -> Vec<u8> {
        canonical::to_vec(self).expect("archive objects serialize")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ArchiveObject, serde_json::Error> {
        canonical::from_slice(bytes)
    }
}

/// Registration changes forwarded from a sink to an aggregator.
#[derive(Debug, Clone, PartialEq)]
pub enum Notice {
    Register { registration: DeviceRegistration, policies: Vec<MonitoringPolicy<f64>>, at: Millis },
    Update { registration: DeviceRegistration },
    Remove { device_id: DeviceId },
    PolicyUpsert { device_id: DeviceId, policy: MonitoringPolicy<f64> },
    PolicyRemove { device_id: DeviceId, policy_id: PolicyId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManagedDevice {
    pub registration: DeviceRegistration,
    /// Ordered by policy id.
    pub policies: Vec<MonitoringPolicy<f64>>,
    pub next_poll: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PollDiagnostic {
    pub device_id: DeviceId,
    pub scheduled_at: Millis,
    pub error: PollError,
}

type PollOutcome = (Millis, Result<Vec<Sample<f64>>, PollError>);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TickSummary {
    pub polls: usize,
    pub failed_polls: usize,
    pub samples: usize,
    pub events: usize,
}

/// Polls managed devices, stores samples and evaluates policies.
#[derive(Debug)]
pub struct AggregatorNode {
    id: usize,
    inbox: Receiver<Notice>,
    devices: BTreeMap<DeviceId, ManagedDevice>,
    counters: CounterState,
    engine: PolicyEngine,
    gateway: Arc<Gateway>,
    tsdb: Arc<TimeSeriesStore<f64>>,
    feed: Option<Arc<EventFeed>>,
    diagnostics: Vec<PollDiagnostic>,
}

impl AggregatorNode {
    /// `window` is the archival interval; violation counters reset at its
    /// boundaries.
    pub fn new(
        id: usize,
        window: Millis,
        gateway: Arc<Gateway>,
        tsdb: Arc<TimeSeriesStore<f64>>,
    ) -> (AggregatorNode, Sender<Notice>) {
        let (tx, inbox) = mpsc::channel();
        let node = AggregatorNode {
            id,
            inbox,
            devices: BTreeMap::new(),
            counters: CounterState::default(),
            engine: PolicyEngine::new(window),
            gateway,
            tsdb,
            feed: None,
            diagnostics: Vec::new(),
        };
        (node, tx)
    }

    pub fn with_feed(mut self, feed: Arc<EventFeed>) -> AggregatorNode {
        self.feed = Some(feed);
        self
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn managed(&self) -> &BTreeMap<DeviceId, ManagedDevice> {
        &self.devices
    }

    pub fn counters(&self) -> &CounterState {
        &self.counters
    }

    pub fn diagnostics(&self) -> &[PollDiagnostic] {
        &self.diagnostics
    }

    /// Applies queued notices.
    pub fn process_inbox(&mut self) {
        while let Ok(notice) = self.inbox.try_recv() {
            self.apply_notice(notice);
        }
    }

    fn apply_notice(&mut self, notice: Notice) {
        match notice {
            Notice::Register { registration, mut policies, at } => {
                policies.sort_by_key(|p| p.policy_id);
                self.counters.remove_device(&registration.device_id);
                self.devices
                    .insert(registration.device_id.clone(), ManagedDevice { registration, policies, next_poll: at });
            }
            Notice::Update { registration } => match self.devices.get_mut(&registration.device_id) {
                Some(d) => d.registration = registration,
                None => log::warn!("aggregator {}: update for unmanaged device {}", self.id, registration.device_id),
            },
            Notice::Remove { device_id } => {
                self.devices.remove(&device_id);
                self.counters.remove_device(&device_id);
            }
            Notice::PolicyUpsert { device_id, policy } => {
                let Some(d) = self.devices.get_mut(&device_id) else {
                    log::warn!("aggregator {}: policy for unmanaged device {device_id}", self.id);
                    return;
                };
                let id = policy.policy_id;
                match d.policies.binary_search_by_key(&id, |p| p.policy_id) {
                    Ok(i) => d.policies[i] = policy,
                    Err(i) => d.policies.insert(i, policy),
                }
                self.counters.reset_counters(&device_id, ResetReason::PolicyChanged(id));
            }
            Notice::PolicyRemove { device_id, policy_id } => {
                if let Some(d) = self.devices.get_mut(&device_id) {
                    d.policies.retain(|p| p.policy_id != policy_id);
                    if self.counters.device(&device_id).is_some() {
                        self.counters.device_mut(&device_id).forget(policy_id);
                    }
                }
            }
        }
    }

    /// Processes the inbox, then performs every poll scheduled at or before
    /// `now`. A failed poll is recorded and its slot skipped.
    pub fn poll_tick(&mut self, now: Millis) -> TickSummary {
        self.process_inbox();
        let gateway = &self.gateway;
        let due: Vec<(&DeviceId, &ManagedDevice)> = self.devices.iter().filter(|(_, d)| d.next_poll <= now).collect();
        // gateway calls run in parallel; results are consumed in device order
        let results: Vec<(DeviceId, Millis, Vec<PollOutcome>)> = due
            .par_iter()
            .map(|(id, d)| {
                let step = d.registration.polling_interval * SECOND;
                let mut t = d.next_poll;
                let mut polls = Vec::new();
                while t <= now {
                    polls.push((t, gateway.poll(id, &d.registration.target_attributes, t)));
                    t += step;
                }
                ((*id).clone(), t, polls)
            })
            .collect();

        let mut summary = TickSummary::default();
        for (device_id, next_poll, polls) in results {
            let device = self.devices.get_mut(&device_id).expect("collected from map");
            device.next_poll = next_poll;
            for (t, result) in polls {
                summary.polls += 1;
                let samples = match result {
                    Ok(samples) => samples,
                    Err(error) => {
                        summary.failed_polls += 1;
                        self.diagnostics.push(PollDiagnostic { device_id: device_id.clone(), scheduled_at: t, error });
                        continue;
                    }
                };
                let counters = self.counters.device_mut(&device_id);
                for sample in samples {
                    let events = self.engine.evaluate_in_place(&sample, &device.policies, counters);
                    self.tsdb.write_sample(sample).expect("generators produce finite readings");
                    summary.samples += 1;
                    for event in events {
                        if let Some(feed) = &self.feed {
                            feed.push_violation(event.clone());
                        }
                        self.tsdb.write_event(event).expect("event thresholds are finite");
                        summary.events += 1;
                    }
                }
            }
        }
        summary
    }
}

#[derive(Debug, Error)]
pub enum ArchivalError {
    #[error(transparent)]
    Cas(#[from] CasError),
    #[error(transparent)]
    Tsdb(#[from] TsdbError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("batch of {len} entries exceeds capacity {max}")]
    BatchTooLarge { len: usize, max: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Tracked {
    slot: u32,
    /// Next window to archive.
    next_window: u64,
    /// Window of the deletion, if deleted.
    last_window: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SinkConfig {
    pub archival_interval: Millis,
    pub mode: ArchiveMode,
    /// This sink's partition of the device id space.
    pub partition: usize,
    pub partitions: usize,
}

impl Default for SinkConfig {
    fn default() -> Self {
        SinkConfig { archival_interval: crate::ids::HOUR, mode: ArchiveMode::Combined, partition: 0, partitions: 1 }
    }
}

/// Whether `device_id` belongs to sink `partition` of `partitions`.
pub fn in_partition(device_id: &DeviceId, partition: usize, partitions: usize) -> bool {
    partitions <= 1 || derive_seed(&[device_id.as_str().as_bytes()]) % partitions as u64 == partition as u64
}

/// Follows ledger events and runs archival ticks.
pub struct SinkNode {
    config: SinkConfig,
    ledger: Arc<Ledger>,
    cas: Arc<ContentStore>,
    tsdb: Arc<TimeSeriesStore<f64>>,
    subscription: Subscription,
    aggregators: Vec<Sender<Notice>>,
    assignment: HashMap<DeviceId, usize>,
    next_assignment: usize,
    tracked: BTreeMap<DeviceId, Tracked>,
    last_anchored_window: BTreeMap<DeviceId, u64>,
}

impl std::fmt::Debug for SinkNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SinkNode")
            .field("config", &self.config)
            .field("aggregators", &self.aggregators.len())
            .field("tracked", &self.tracked.len())
            .finish()
    }
}

impl SinkNode {
    pub fn new(
        config: SinkConfig,
        ledger: Arc<Ledger>,
        cas: Arc<ContentStore>,
        tsdb: Arc<TimeSeriesStore<f64>>,
        aggregators: Vec<Sender<Notice>>,
    ) -> SinkNode {
        assert!(config.archival_interval > 0, "archival interval must be positive");
        let subscription = ledger.subscribe(crate::contracts::EventKind::ALL);
        SinkNode {
            config,
            ledger,
            cas,
            tsdb,
            subscription,
            aggregators,
            assignment: HashMap::new(),
            next_assignment: 0,
            tracked: BTreeMap::new(),
            last_anchored_window: BTreeMap::new(),
        }
    }

    pub fn assignment(&self, device_id: &DeviceId) -> Option<usize> {
        self.assignment.get(device_id).copied()
    }

    pub fn last_anchored_window(&self) -> &BTreeMap<DeviceId, u64> {
        &self.last_anchored_window
    }

    fn owns(&self, device_id: &DeviceId) -> bool {
        in_partition(device_id, self.config.partition, self.config.partitions)
    }

    fn send(&self, device_id: &DeviceId, notice: Notice) {
        match self.assignment.get(device_id) {
            Some(&a) => {
                if self.aggregators[a].send(notice).is_err() {
                    log::warn!("aggregator {a} is gone; dropping notice for {device_id}");
                }
            }
            None => log::warn!("no aggregator assigned to {device_id}; dropping notice"),
        }
    }

    /// Dispatches every ledger event emitted since the last call.
    /// Returns the number of events handled.
    pub fn dispatch(&mut self) -> usize {
        let events = self.subscription.poll();
        let n = events.len();
        for e in events {
            self.handle(e.event, e.timestamp);
        }
        n
    }

    fn handle(&mut self, event: ContractEvent, at: Millis) {
        let interval = self.config.archival_interval;
        match event {
            ContractEvent::DeviceAdded(ann) => {
                let id = ann.registration.device_id.clone();
                if !self.owns(&id) {
                    return;
                }
                if self.aggregators.is_empty() {
                    log::warn!("sink has no aggregators; {id} will not be polled");
                } else if !self.assignment.contains_key(&id) {
                    self.assignment.insert(id.clone(), self.next_assignment);
                    self.next_assignment = (self.next_assignment + 1) % self.aggregators.len();
                }
                let window = at / interval;
                let next_window = self.tracked.get(&id).map_or(window, |t| t.next_window.max(window));
                self.tracked.insert(id.clone(), Tracked { slot: ann.slot, next_window, last_window: None });
                // policies survive deletion, so a re-added device resumes them
                let policies = self.ledger.view().state().get_policies(&id).unwrap_or_default();
                self.send(&id, Notice::Register { registration: ann.registration, policies, at });
            }
            ContractEvent::DeviceUpdated(ann) => {
                if self.owns(&ann.registration.device_id) {
                    let id = ann.registration.device_id.clone();
                    self.send(&id, Notice::Update { registration: ann.registration });
                }
            }
            ContractEvent::DeviceDeleted { device_id } => {
                if self.owns(&device_id) {
                    if let Some(t) = self.tracked.get_mut(&device_id) {
                        t.last_window = Some(at / interval);
                    }
                    self.send(&device_id, Notice::Remove { device_id: device_id.clone() });
                }
            }
            ContractEvent::PolicyAdded { device_id, policy } | ContractEvent::PolicyUpdated { device_id, policy } => {
                if self.owns(&device_id) {
                    self.send(&device_id, Notice::PolicyUpsert { device_id: device_id.clone(), policy });
                }
            }
            ContractEvent::PolicyDeleted { device_id, policy } => {
                if self.owns(&device_id) {
                    let policy_id = policy.policy_id;
                    self.send(&device_id, Notice::PolicyRemove { device_id: device_id.clone(), policy_id });
                }
            }
            ContractEvent::HashesAnchored { entries } => {
                for e in entries {
                    if self.owns(&e.device_id) {
                        self.last_anchored_window.insert(e.device_id, e.window_index);
                    }
                }
            }
        }
    }

    /// Archives every closed, not yet archived window of every tracked
    /// device and submits the anchoring transactions without waiting for
    /// them to confirm.
    pub fn archival_tick(&mut self, now: Millis) -> Result<Vec<TxId>, ArchivalError> {
        let interval = self.config.archival_interval;
        let mode = self.config.mode;
        let mut by_window: BTreeMap<u64, Vec<(u32, AnchorEntry)>> = BTreeMap::new();
        for (device_id, t) in self.tracked.iter_mut() {
            while (t.next_window + 1) * interval <= now && t.last_window.is_none_or(|last| t.next_window <= last) {
                let window = WindowRef::new(device_id.clone(), t.next_window, interval);
                let (samples, events) = self.tsdb.drain_window(&window, now)?;
                let entry = store_window(&self.cas, mode, device_id, t.next_window, samples, events)?;
                by_window.entry(t.next_window).or_default().push((t.slot, entry));
                t.next_window += 1;
            }
        }

        let capacity = self.ledger.view().state().batch_capacity();
        let mut submitted = Vec::new();
        for (window_index, entries) in by_window {
            for batch in pack_batches(mode, window_index, entries, capacity, self.ledger.schedule())? {
                let call = ContractCall::AppendHashes(batch);
                submitted.push(self.ledger.submit(TxRequest::from_call(&call, now))?);
            }
        }
        Ok(submitted)
    }
}

/// Writes a window's archive object(s) to the CAS.
pub fn store_window(
    cas: &ContentStore,
    mode: ArchiveMode,
    device_id: &DeviceId,
    window_index: u64,
    samples: Vec<Sample<f64>>,
    events: Vec<ViolationEvent<f64>>,
) -> Result<AnchorEntry, CasError> {
    let object = |samples, events| ArchiveObject { device_id: device_id.clone(), window_index, samples, events };
    match mode {
        ArchiveMode::Combined => {
            let data_hash = cas.put(&object(Some(samples), Some(events)).to_bytes())?;
            Ok(AnchorEntry { data_hash, events_hash: None })
        }
        ArchiveMode::Split => {
            let data_hash = cas.put(&object(Some(samples), None).to_bytes())?;
            let events_hash = cas.put(&object(None, Some(events)).to_bytes())?;
            Ok(AnchorEntry { data_hash, events_hash: Some(events_hash) })
        }
    }
}

/// Splits one window's entries, in slot order, into consecutive batches, each
/// as long as `capacity` and the gas limit allow.
pub fn pack_batches(
    mode: ArchiveMode,
    window_index: u64,
    mut entries: Vec<(u32, AnchorEntry)>,
    capacity: u64,
    schedule: &GasSchedule,
) -> Result<Vec<AnchorBatch>, ArchivalError> {
    if entries.is_empty() {
        return Ok(Vec::new());
    }
    if capacity == 0 {
        return Err(ArchivalError::BatchTooLarge { len: entries.len(), max: 0 });
    }
    entries.sort_by_key(|(slot, _)| *slot);
    let build = |part: &[(u32, AnchorEntry)]| {
        let batch = AnchorBatch::from_entries(mode, window_index, part.to_vec());
        (intrinsic_gas(&batch.encode(), schedule) <= schedule.gas_limit).then_some(batch)
    };
    let mut batches = Vec::new();
    let mut rest = entries.as_slice();
    while !rest.is_empty() {
        let take = rest.len().min(capacity as usize);
        let batch = match build(&rest[..take]) {
            Some(b) => b,
            None => {
                // gas grows with prefix length: bisect for the longest fit
                let (mut lo, mut hi) = (0, take);
                while hi - lo > 1 {
                    let mid = (lo + hi) / 2;
                    if build(&rest[..mid]).is_some() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                if lo == 0 {
                    return Err(ArchivalError::BatchTooLarge { len: 1, max: 0 });
                }
                build(&rest[..lo]).expect("bisected prefix fits")
            }
        };
        rest = &rest[batch.len()..];
        batches.push(batch);
    }
    Ok(batches)
}

/// Content hash lookup helper for tests and read paths.
pub fn fetch_archive(cas: &ContentStore, hash: &ContentHash) -> Result<ArchiveObject, CasError> {
    let bytes = cas.get(hash)?;
    ArchiveObject::from_bytes(&bytes).map_err(|e| CasError::Io(std::io::Error::other(e)))
}
