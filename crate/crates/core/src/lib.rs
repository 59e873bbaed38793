//! Blockchain-anchored fog monitoring for IoT device fleets.
//!
//! The ledger holds device registrations, monitoring policies and archive
//! hashes. Fog nodes poll devices, evaluate policies locally, keep recent
//! readings in a time-series store and periodically move closed windows into
//! content-addressed storage, anchoring their hashes on the ledger.

pub mod canonical;
pub mod cas;
pub mod contracts;
pub mod deployment;
pub mod device_sim;
pub mod feed;
pub mod fog;
pub mod gas;
pub mod history;
pub mod ids;
pub mod ledger;
pub mod policy;
pub mod scalar;
pub mod tsdb;

pub use cas::{ContentHash, ContentStore};
pub use deployment::{Deployment, DeploymentConfig, SimClock};
pub use device_sim::{Benchmark, DeviceSpec, Gateway};
pub use feed::EventFeed;
pub use history::{read_device_history, HistoryView};
pub use contracts::{ArchiveMode, ContractCall, ContractEvent, ContractState, DeviceRegistration, EventKind};
pub use gas::{cost_to_usd, intrinsic_gas, max_devices_per_tx, Gas, GasSchedule, OpKind};
pub use ids::{DeviceId, Millis, PolicyId};
pub use ledger::{Ledger, LedgerConfig, TxId, TxStatus};
pub use policy::{Criticality, PolicyEngine, PolicyRule, ThresholdType};
pub use scalar::Reading;

/// Readings as produced by the simulated fleet.
pub type Sample = tsdb::Sample<f64>;
pub type ViolationEvent = tsdb::ViolationEvent<f64>;
pub type MonitoringPolicy = policy::MonitoringPolicy<f64>;
pub type TimeSeriesStore = tsdb::TimeSeriesStore<f64>;
