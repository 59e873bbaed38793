//! Transport-independent request handling.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use parking_lot::RwLock;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use fogchain_core::contracts::{ContractCall, ContractError, DeviceRegistration, DeviceUpdate};
use fogchain_core::deployment::SharedHandles;
use fogchain_core::gas::OpKind;
use fogchain_core::history::{read_device_history, HistoryError, HistoryView};
use fogchain_core::ids::{DeviceId, Millis, PolicyId};
use fogchain_core::ledger::{LedgerError, ReadRequest, StateBody, Transaction, TxId, TxRequest, TxStatus};
use fogchain_core::policy::PolicyRule;

use crate::metrics::{Metrics, MetricsSnapshot, ReadEndpoint};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub error: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: u16, error: &'static str, message: impl Into<String>) -> ApiError {
        ApiError { status, error, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> ApiError {
        ApiError::new(400, "bad_request", message)
    }

    pub fn not_found(message: impl Into<String>) -> ApiError {
        ApiError::new(404, "not_found", message)
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", self.status, self.error, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<ContractError> for ApiError {
    fn from(e: ContractError) -> Self {
        match e {
            ContractError::UnknownDevice(_) | ContractError::UnknownPolicy { .. } => ApiError::not_found(e.to_string()),
            ContractError::DuplicateDevice(_) => ApiError::new(409, "duplicate_device", e.to_string()),
            ContractError::InvalidDevice(_) | ContractError::InvalidPolicy(_) => ApiError::bad_request(e.to_string()),
            other => ApiError::new(500, "internal", other.to_string()),
        }
    }
}

impl From<LedgerError> for ApiError {
    fn from(e: LedgerError) -> Self {
        match e {
            LedgerError::OversizedTransaction { .. } => ApiError::new(413, "oversized_transaction", e.to_string()),
            other => ApiError::new(500, "internal", other.to_string()),
        }
    }
}

impl From<HistoryError> for ApiError {
    fn from(e: HistoryError) -> Self {
        match e {
            HistoryError::UnknownDevice(_) => ApiError::not_found(e.to_string()),
            HistoryError::InvalidRange { .. } => ApiError::bad_request(e.to_string()),
            HistoryError::MissingArchive { .. } | HistoryError::CorruptArchive { .. } => {
                ApiError::new(502, "missing_archive", e.to_string())
            }
            other => ApiError::new(500, "internal", other.to_string()),
        }
    }
}

/// Response to every write.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteAck {
    pub tx_id: TxId,
    pub status: TxStatus,
}

/// Wrapper around every read response.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReadEnvelope<T> {
    /// Height of the block the data reflects.
    pub block_height: u64,
    pub sim_time: Millis,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compression: Option<f64>,
    pub data: T,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxView {
    pub tx_id: TxId,
    pub op_kind: OpKind,
    pub status: TxStatus,
    pub gas_used: u64,
    pub submitted_at: Millis,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_height: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl From<Transaction> for TxView {
    fn from(tx: Transaction) -> Self {
        TxView {
            tx_id: tx.tx_id,
            op_kind: tx.op_kind,
            status: tx.status,
            gas_used: tx.gas_used,
            submitted_at: tx.submitted_at,
            block_height: tx.included_in(),
            failure: tx.failure.map(|f| f.reason),
        }
    }
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn parse_policy(body: &[u8]) -> Result<PolicyRule<f64>, ApiError> {
    let rule: PolicyRule<f64> = parse(body)?;
    if !rule.is_valid() {
        return Err(ApiError::bad_request("policy needs a non-empty attribute and a finite threshold"));
    }
    Ok(rule)
}

/// The API. Shared across request handlers; all state behind it is either
/// the ledger (single writer) or atomic counters.
#[derive(Debug)]
pub struct ApiService {
    shared: SharedHandles,
    compression: Option<f64>,
    metrics: Metrics,
    benchmark: RwLock<Option<String>>,
}

impl ApiService {
    pub fn new(shared: SharedHandles, compression: Option<f64>) -> ApiService {
        ApiService { shared, compression, metrics: Metrics::default(), benchmark: RwLock::new(None) }
    }

    pub fn shared(&self) -> &SharedHandles {
        &self.shared
    }

    pub fn set_benchmark(&self, id: impl Into<String>) {
        *self.benchmark.write() = Some(id.into());
    }

    fn now(&self) -> Millis {
        self.shared.clock.now()
    }

    fn submit(&self, call: ContractCall) -> Result<WriteAck, ApiError> {
        let tx_id = self.shared.ledger.submit(TxRequest::from_call(&call, self.now()))?;
        Ok(WriteAck { tx_id, status: TxStatus::Pending })
    }

    fn require_active(&self, device_id: &DeviceId) -> Result<(), ApiError> {
        if self.shared.ledger.view().state().is_active(device_id) {
            Ok(())
        } else {
            Err(ContractError::UnknownDevice(device_id.clone()).into())
        }
    }

    fn require_policy(&self, device_id: &DeviceId, policy_id: PolicyId) -> Result<(), ApiError> {
        self.require_active(device_id)?;
        let policies = self.shared.ledger.view().state().get_policies(device_id)?;
        if policies.iter().any(|p| p.policy_id == policy_id) {
            Ok(())
        } else {
            Err(ContractError::UnknownPolicy { device_id: device_id.clone(), policy_id }.into())
        }
    }

    pub fn add_device(&self, body: &[u8]) -> Result<WriteAck, ApiError> {
        let reg: DeviceRegistration = parse(body)?;
        reg.validate()?;
        if self.shared.ledger.view().state().is_active(&reg.device_id) {
            return Err(ContractError::DuplicateDevice(reg.device_id).into());
        }
        self.submit(ContractCall::AddDevice(reg))
    }

    pub fn update_device(&self, device_id: &DeviceId, body: &[u8]) -> Result<WriteAck, ApiError> {
        let changes: DeviceUpdate = parse(body)?;
        self.require_active(device_id)?;
        self.submit(ContractCall::UpdateDevice { device_id: device_id.clone(), changes })
    }

    pub fn delete_device(&self, device_id: &DeviceId) -> Result<WriteAck, ApiError> {
        self.require_active(device_id)?;
        self.submit(ContractCall::DeleteDevice { device_id: device_id.clone() })
    }

    pub fn add_policy(&self, device_id: &DeviceId, body: &[u8]) -> Result<WriteAck, ApiError> {
        let policy = parse_policy(body)?;
        self.require_active(device_id)?;
        self.submit(ContractCall::AddPolicy { device_id: device_id.clone(), policy })
    }

    pub fn update_policy(&self, device_id: &DeviceId, policy_id: PolicyId, body: &[u8]) -> Result<WriteAck, ApiError> {
        let policy = parse_policy(body)?;
        self.require_policy(device_id, policy_id)?;
        self.submit(ContractCall::UpdatePolicy { device_id: device_id.clone(), policy_id, policy })
    }

    pub fn delete_policy(&self, device_id: &DeviceId, policy_id: PolicyId) -> Result<WriteAck, ApiError> {
        self.require_policy(device_id, policy_id)?;
        self.submit(ContractCall::DeletePolicy { device_id: device_id.clone(), policy_id })
    }

    pub fn tx(&self, tx_id: TxId) -> Result<TxView, ApiError> {
        self.shared
            .ledger
            .tx_status(tx_id)
            .map(TxView::from)
            .ok_or_else(|| ApiError::not_found(format!("unknown transaction {tx_id}")))
    }

    fn timed<T>(&self, endpoint: ReadEndpoint, f: impl FnOnce() -> Result<T, ApiError>) -> Result<T, ApiError> {
        let start = Instant::now();
        let out = f();
        self.metrics.record(endpoint, start.elapsed());
        out
    }

    fn read_state(&self, endpoint: ReadEndpoint, request: ReadRequest) -> Result<ReadEnvelope<Value>, ApiError> {
        self.timed(endpoint, || {
            let view = self.shared.ledger.query_state(&request)?;
            let data = match view.body {
                StateBody::Device(d) => serde_json::to_value(d),
                StateBody::Devices(d) => serde_json::to_value(d),
                StateBody::Policies(p) => serde_json::to_value(p),
                StateBody::Hashes(h) => serde_json::to_value(h),
            }
            .expect("state views serialize");
            Ok(ReadEnvelope { block_height: view.served_at, sim_time: self.now(), compression: self.compression, data })
        })
    }

    pub fn list_devices(&self) -> Result<ReadEnvelope<Value>, ApiError> {
        self.read_state(ReadEndpoint::ListDevices, ReadRequest::ListDevices)
    }

    pub fn get_device(&self, device_id: &DeviceId) -> Result<ReadEnvelope<Value>, ApiError> {
        self.read_state(ReadEndpoint::GetDevice, ReadRequest::Device(device_id.clone()))
    }

    pub fn get_policies(&self, device_id: &DeviceId) -> Result<ReadEnvelope<Value>, ApiError> {
        self.read_state(ReadEndpoint::GetPolicies, ReadRequest::Policies(device_id.clone()))
    }

    pub fn get_hashes(&self, device_id: &DeviceId) -> Result<ReadEnvelope<Value>, ApiError> {
        self.read_state(ReadEndpoint::GetHashes, ReadRequest::Hashes(device_id.clone()))
    }

    /// `to` defaults to just past the current simulated time.
    pub fn history(
        &self,
        device_id: &DeviceId,
        from: Option<Millis>,
        to: Option<Millis>,
    ) -> Result<ReadEnvelope<HistoryView>, ApiError> {
        self.timed(ReadEndpoint::History, || {
            let now = self.now();
            let view = read_device_history(
                self.shared.history_sources(),
                device_id,
                from.unwrap_or(0),
                to.unwrap_or(now + 1),
                now,
            )?;
            Ok(ReadEnvelope { block_height: view.served_at, sim_time: now, compression: self.compression, data: view })
        })
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        let stats = self.shared.ledger.gas_stats();
        let avg_gas: BTreeMap<OpKind, f64> =
            OpKind::ALL.iter().map(|op| (*op, stats.gas.get(op).map_or(0.0, |t| t.average_f64()))).collect();
        let tx_counts = OpKind::ALL.iter().map(|op| (*op, stats.counts.get(op).copied().unwrap_or_default())).collect();
        MetricsSnapshot {
            avg_response_time_ms: self.metrics.averages_ms(),
            read_counts: self.metrics.counts(),
            avg_gas,
            tx_counts,
            benchmark: self.benchmark.read().clone(),
        }
    }
}
