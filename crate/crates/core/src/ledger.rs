//! Simulated gas-metered ledger.
//!
//! A single logical writer: transactions queue in a FIFO mempool and are
//! applied to the contract state only when [`Ledger::produce_block`] runs.
//! Reads observe the state as of the latest block and never touch the
//! mempool, so they never wait on block production.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockReadGuard};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::contracts::{
    ArchiveMode, ContractCall, ContractError, ContractEvent, ContractState, DeviceView, EventKind, PublicProfile,
    WindowArchive,
};
use crate::gas::{intrinsic_gas, max_devices_per_tx, Gas, GasError, GasSchedule, GasTally, OpKind, DEFAULT_HASH_SIZE};
use crate::ids::{DeviceId, Millis};
use crate::policy::MonitoringPolicy;

/// The single implicit sender account.
pub const OPERATOR: &str = "operator";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxId(pub u64);

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxStatus {
    Pending,
    Confirmed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxFailure {
    pub block_height: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: TxId,
    pub sender: String,
    pub op_kind: OpKind,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
    pub status: TxStatus,
    pub gas_used: Gas,
    pub submitted_at: Millis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confirmed_in_block: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<TxFailure>,
}

impl Transaction {
    /// Height of the block that included this tx, confirmed or failed.
    pub fn included_in(&self) -> Option<u64> {
        self.confirmed_in_block.or(self.failure.as_ref().map(|f| f.block_height))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub timestamp: Millis,
    pub txs: Vec<Transaction>,
    pub gas_total: Gas,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEvent {
    /// Position in the global event log.
    pub seq: u64,
    pub block_height: u64,
    /// Timestamp of the including block.
    pub timestamp: Millis,
    pub tx_id: TxId,
    #[serde(flatten)]
    pub event: ContractEvent,
}

impl LedgerEvent {
    pub fn kind(&self) -> EventKind {
        self.event.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerConfig {
    pub schedule: GasSchedule,
    pub archive_mode: ArchiveMode,
    pub hash_size: u64,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        LedgerConfig { schedule: GasSchedule::default(), archive_mode: ArchiveMode::Combined, hash_size: DEFAULT_HASH_SIZE }
    }
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("transaction needs {intrinsic} intrinsic gas, above the limit of {limit}")]
    OversizedTransaction { intrinsic: Gas, limit: Gas },
    #[error(transparent)]
    Schedule(#[from] GasError),
    #[error("block log: {0}")]
    BlockLog(String),
    #[error("block log i/o: {0}")]
    Io(#[from] io::Error),
}

/// A transaction before it is assigned an id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxRequest {
    pub op_kind: OpKind,
    pub payload: Vec<u8>,
    pub submitted_at: Millis,
}

impl TxRequest {
    pub fn from_call(call: &ContractCall, submitted_at: Millis) -> TxRequest {
        TxRequest { op_kind: call.op_kind(), payload: call.encode(), submitted_at }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadRequest {
    Device(DeviceId),
    ListDevices,
    Policies(DeviceId),
    Hashes(DeviceId),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StateBody {
    Device(DeviceView),
    Devices(Vec<PublicProfile>),
    Policies(Vec<MonitoringPolicy<f64>>),
    Hashes(Vec<WindowArchive>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateView {
    /// Height of the block the view reflects.
    pub served_at: u64,
    pub body: StateBody,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxCounts {
    pub confirmed: u64,
    pub failed: u64,
}

/// Per-operation gas and outcome totals over all included transactions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasStats {
    pub gas: BTreeMap<OpKind, GasTally>,
    pub counts: BTreeMap<OpKind, TxCounts>,
}

#[derive(Debug)]
struct Chain {
    blocks: Vec<Block>,
    state: ContractState,
    events: Vec<LedgerEvent>,
    tx_index: HashMap<TxId, (u64, usize)>,
    stats: GasStats,
}

impl Chain {
    fn genesis(state: ContractState) -> Chain {
        Chain {
            blocks: vec![Block { height: 0, timestamp: 0, txs: Vec::new(), gas_total: 0 }],
            state,
            events: Vec::new(),
            tx_index: HashMap::new(),
            stats: GasStats::default(),
        }
    }

    /// Applies one included tx and records the outcome on it.
    fn execute(&mut self, tx: &mut Transaction, height: u64, timestamp: Millis, schedule: &GasSchedule) {
        tx.gas_used = intrinsic_gas(&tx.payload, schedule) + schedule.surcharge(tx.op_kind);
        let outcome = ContractCall::decode(tx.op_kind, &tx.payload)
            .map_err(ContractError::from)
            .and_then(|call| self.state.apply(&call));
        let counts = self.stats.counts.entry(tx.op_kind).or_default();
        match outcome {
            Ok(events) => {
                tx.status = TxStatus::Confirmed;
                tx.confirmed_in_block = Some(height);
                counts.confirmed += 1;
                for event in events {
                    let seq = self.events.len() as u64;
                    self.events.push(LedgerEvent { seq, block_height: height, timestamp, tx_id: tx.tx_id, event });
                }
            }
            Err(e) => {
                tx.status = TxStatus::Failed;
                tx.failure = Some(TxFailure { block_height: height, reason: e.to_string() });
                counts.failed += 1;
            }
        }
        self.stats.gas.entry(tx.op_kind).or_default().record(tx.gas_used);
    }
}

/// The ledger. Cheap to share behind an `Arc`; all methods take `&self`.
pub struct Ledger {
    config: LedgerConfig,
    chain: Arc<RwLock<Chain>>,
    mempool: Mutex<VecDeque<Transaction>>,
    next_tx: AtomicU64,
}

impl fmt::Debug for Ledger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ledger")
            .field("height", &self.height())
            .field("pending", &self.pending_count())
            .finish()
    }
}

impl Ledger {
    pub fn new(config: LedgerConfig) -> Result<Ledger, LedgerError> {
        config.schedule.validate()?;
        let capacity = max_devices_per_tx(&config.schedule, config.hash_size)?;
        let state = ContractState::new(config.archive_mode, capacity);
        Ok(Ledger {
            config,
            chain: Arc::new(RwLock::new(Chain::genesis(state))),
            mempool: Mutex::new(VecDeque::new()),
            next_tx: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    pub fn schedule(&self) -> &GasSchedule {
        &self.config.schedule
    }

    /// Queues a transaction. Returns immediately; nothing is applied.
    pub fn submit(&self, req: TxRequest) -> Result<TxId, LedgerError> {
        let intrinsic = intrinsic_gas(&req.payload, &self.config.schedule);
        if intrinsic > self.config.schedule.gas_limit {
            return Err(LedgerError::OversizedTransaction { intrinsic, limit: self.config.schedule.gas_limit });
        }
        let mut mempool = self.mempool.lock();
        // id allocation under the mempool lock keeps ids in FIFO order
        let tx_id = TxId(self.next_tx.fetch_add(1, Ordering::SeqCst));
        mempool.push_back(Transaction {
            tx_id,
            sender: OPERATOR.to_owned(),
            op_kind: req.op_kind,
            payload: req.payload,
            status: TxStatus::Pending,
            gas_used: 0,
            submitted_at: req.submitted_at,
            confirmed_in_block: None,
            failure: None,
        });
        Ok(tx_id)
    }

    pub fn submit_call(&self, call: &ContractCall, now: Millis) -> Result<TxId, LedgerError> {
        self.submit(TxRequest::from_call(call, now))
    }

    /// Builds the next block from the mempool, FIFO, up to the gas limit.
    ///
    /// A transaction whose own gas exceeds the limit (only near-capacity
    /// anchoring batches, since execution surcharges sit outside the data
    /// capacity bound) is executed alone in a block.
    pub fn produce_block(&self, now: Millis) -> Block {
        let schedule = &self.config.schedule;
        let mut mempool = self.mempool.lock();
        let mut chain = self.chain.write();
        let height = chain.blocks.len() as u64;
        let timestamp = now.max(chain.blocks.last().map_or(0, |b| b.timestamp));

        let mut txs = Vec::new();
        let mut gas_total: Gas = 0;
        while let Some(front) = mempool.front() {
            let gas = schedule.execution_gas(front.op_kind, &front.payload);
            let fits = gas_total + gas <= schedule.gas_limit;
            let oversized_solo = txs.is_empty() && gas > schedule.gas_limit;
            if !fits && !oversized_solo {
                break;
            }
            let mut tx = mempool.pop_front().expect("front checked");
            chain.execute(&mut tx, height, timestamp, schedule);
            gas_total += tx.gas_used;
            txs.push(tx);
            if oversized_solo {
                break;
            }
        }
        for (i, tx) in txs.iter().enumerate() {
            chain.tx_index.insert(tx.tx_id, (height, i));
        }
        let block = Block { height, timestamp, txs, gas_total };
        chain.blocks.push(block.clone());
        block
    }

    pub fn height(&self) -> u64 {
        self.chain.read().blocks.len() as u64 - 1
    }

    pub fn block_count(&self) -> usize {
        self.chain.read().blocks.len()
    }

    pub fn pending_count(&self) -> usize {
        self.mempool.lock().len()
    }

    pub fn block(&self, height: u64) -> Option<Block> {
        self.chain.read().blocks.get(height as usize).cloned()
    }

    pub fn blocks(&self) -> Vec<Block> {
        self.chain.read().blocks.clone()
    }

    /// Latest known record of a transaction, pending or included.
    pub fn tx_status(&self, tx_id: TxId) -> Option<Transaction> {
        {
            let chain = self.chain.read();
            if let Some(&(h, i)) = chain.tx_index.get(&tx_id) {
                return Some(chain.blocks[h as usize].txs[i].clone());
            }
        }
        self.mempool.lock().iter().find(|t| t.tx_id == tx_id).cloned()
    }

    /// Read access to confirmed state.
    pub fn view(&self) -> LedgerView<'_> {
        LedgerView { chain: self.chain.read() }
    }

    pub fn query_state(&self, request: &ReadRequest) -> Result<StateView, ContractError> {
        let view = self.view();
        let state = view.state();
        let body = match request {
            ReadRequest::Device(id) => StateBody::Device(state.get_device(id)?),
            ReadRequest::ListDevices => StateBody::Devices(state.list_devices()),
            ReadRequest::Policies(id) => StateBody::Policies(state.get_policies(id)?),
            ReadRequest::Hashes(id) => StateBody::Hashes(state.get_hashes(id)?),
        };
        Ok(StateView { served_at: view.height(), body })
    }

    pub fn subscribe(&self, filter: impl IntoIterator<Item = EventKind>) -> Subscription {
        Subscription { chain: Arc::clone(&self.chain), cursor: 0, filter: filter.into_iter().collect() }
    }

    /// Subscription that skips everything already emitted.
    pub fn subscribe_from_now(&self, filter: impl IntoIterator<Item = EventKind>) -> Subscription {
        let cursor = self.chain.read().events.len();
        Subscription { cursor, ..self.subscribe(filter) }
    }

    pub fn gas_stats(&self) -> GasStats {
        self.chain.read().stats.clone()
    }

    /// Canonical JSON of the complete contract state.
    pub fn state_json(&self) -> Vec<u8> {
        canonical::to_vec(self.view().state()).expect("contract state serializes")
    }

    /// Writes the block log, one canonical JSON block per line.
    pub fn export_blocks<W: Write>(&self, mut out: W) -> io::Result<()> {
        let chain = self.chain.read();
        for block in &chain.blocks {
            out.write_all(&canonical::to_vec(block).map_err(io::Error::other)?)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Rebuilds a ledger by replaying a block log. Every recorded outcome
    /// and gas figure must be reproduced exactly.
    pub fn restore<R: BufRead>(config: LedgerConfig, log: R) -> Result<Ledger, LedgerError> {
        let ledger = Ledger::new(config)?;
        let mut max_tx = None;
        {
            let mut chain = ledger.chain.write();
            for (n, line) in log.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let block: Block = serde_json::from_str(&line)
                    .map_err(|e| LedgerError::BlockLog(format!("line {}: {e}", n + 1)))?;
                if block.height != n as u64 {
                    return Err(LedgerError::BlockLog(format!("line {}: expected height {n}", n + 1)));
                }
                if block.height == 0 {
                    if !block.txs.is_empty() {
                        return Err(LedgerError::BlockLog("genesis block carries transactions".into()));
                    }
                    continue;
                }
                let mut replayed = Vec::with_capacity(block.txs.len());
                for (i, recorded) in block.txs.iter().enumerate() {
                    let mut tx = Transaction {
                        status: TxStatus::Pending,
                        gas_used: 0,
                        confirmed_in_block: None,
                        failure: None,
                        ..recorded.clone()
                    };
                    chain.execute(&mut tx, block.height, block.timestamp, &ledger.config.schedule);
                    if tx != *recorded {
                        return Err(LedgerError::BlockLog(format!(
                            "tx {} in block {} does not replay to its recorded outcome",
                            recorded.tx_id, block.height
                        )));
                    }
                    chain.tx_index.insert(tx.tx_id, (block.height, i));
                    max_tx = max_tx.max(Some(tx.tx_id.0));
                    replayed.push(tx);
                }
                let gas_total: Gas = replayed.iter().map(|t| t.gas_used).sum();
                if gas_total != block.gas_total {
                    return Err(LedgerError::BlockLog(format!("block {} gas total mismatch", block.height)));
                }
                chain.blocks.push(Block { txs: replayed, ..block });
            }
        }
        ledger.next_tx.store(max_tx.map_or(0, |m| m + 1), Ordering::SeqCst);
        Ok(ledger)
    }
}

/// Folds the confirmed transactions of `blocks` into a fresh contract state.
pub fn replay_state(config: &LedgerConfig, blocks: &[Block]) -> Result<ContractState, LedgerError> {
    let capacity = max_devices_per_tx(&config.schedule, config.hash_size)?;
    let mut state = ContractState::new(config.archive_mode, capacity);
    for tx in blocks.iter().flat_map(|b| &b.txs).filter(|t| t.status == TxStatus::Confirmed) {
        let call = ContractCall::decode(tx.op_kind, &tx.payload)
            .map_err(|e| LedgerError::BlockLog(format!("tx {}: {e}", tx.tx_id)))?;
        state
            .apply(&call)
            .map_err(|e| LedgerError::BlockLog(format!("confirmed tx {} fails on replay: {e}", tx.tx_id)))?;
    }
    Ok(state)
}

/// Read guard over confirmed ledger state.
pub struct LedgerView<'a> {
    chain: RwLockReadGuard<'a, Chain>,
}

impl LedgerView<'_> {
    pub fn state(&self) -> &ContractState {
        &self.chain.state
    }

    pub fn height(&self) -> u64 {
        self.chain.blocks.len() as u64 - 1
    }

    pub fn latest_timestamp(&self) -> Millis {
        self.chain.blocks.last().map_or(0, |b| b.timestamp)
    }
}

/// Cursor over the ledger's event log. Delivers each matching event once,
/// in block order and then transaction order.
pub struct Subscription {
    chain: Arc<RwLock<Chain>>,
    cursor: usize,
    filter: BTreeSet<EventKind>,
}

impl fmt::Debug for Subscription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Subscription").field("cursor", &self.cursor).field("filter", &self.filter).finish()
    }
}

impl Subscription {
    /// Events emitted since the last poll.
    pub fn poll(&mut self) -> Vec<LedgerEvent> {
        let chain = self.chain.read();
        let fresh = &chain.events[self.cursor..];
        self.cursor = chain.events.len();
        fresh.iter().filter(|e| self.filter.contains(&e.kind())).cloned().collect()
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::{canonical, DeviceRegistration};

    fn ledger() -> Ledger {
        Ledger::new(LedgerConfig::default()).unwrap()
    }

    fn add(id: &str) -> ContractCall {
        ContractCall::AddDevice(DeviceRegistration { device_id: id.into(), ..canonical::device_registration() })
    }

    #[test]
    fn genesis_and_empty_block() {
        let l = ledger();
        assert_eq!(l.height(), 0);
        let b = l.produce_block(15_000);
        assert_eq!((b.height, b.txs.len(), b.gas_total), (1, 0, 0));
    }

    #[test]
    fn submit_is_pending_until_block() {
        let l = ledger();
        let id = l.submit_call(&add("a"), 0).unwrap();
        let id2 = l.submit_call(&add("b"), 0).unwrap();
        assert_ne!(id, id2);
        assert_eq!(l.tx_status(id).unwrap().status, TxStatus::Pending);
        assert!(matches!(
            l.query_state(&ReadRequest::Device("a".into())),
            Err(ContractError::UnknownDevice(_))
        ));
        let b = l.produce_block(15_000);
        assert_eq!(b.txs.len(), 2);
        let tx = l.tx_status(id).unwrap();
        assert_eq!(tx.status, TxStatus::Confirmed);
        assert_eq!(tx.confirmed_in_block, Some(1));
        assert!(tx.gas_used >= l.schedule().g_transaction);
        let view = l.query_state(&ReadRequest::Device("a".into())).unwrap();
        assert_eq!(view.served_at, 1);
        assert!(matches!(view.body, StateBody::Device(DeviceView::Active(_))));
    }

    #[test]
    fn oversized_payload_rejected() {
        let l = ledger();
        let n = (6_500_000u64 - 21_000).div_ceil(68) as usize + 1;
        let err = l
            .submit(TxRequest { op_kind: OpKind::AddDevice, payload: vec![1; n], submitted_at: 0 })
            .unwrap_err();
        assert!(matches!(err, LedgerError::OversizedTransaction { .. }));
        assert_eq!(l.pending_count(), 0);
    }

    #[test]
    fn block_gas_budget_defers_excess() {
        let mut config = LedgerConfig::default();
        config.schedule.op_surcharge.clear();
        let l = Ledger::new(config).unwrap();
        // two txs each ~60% of the limit
        let bytes = ((6_500_000.0 * 0.6) as u64 - 21_000) / 68;
        for _ in 0..2 {
            l.submit(TxRequest { op_kind: OpKind::AddDevice, payload: vec![b'x'; bytes as usize], submitted_at: 0 })
                .unwrap();
        }
        let b1 = l.produce_block(1);
        assert_eq!(b1.txs.len(), 1);
        assert!(b1.gas_total <= 6_500_000);
        assert_eq!(l.pending_count(), 1);
        assert_eq!(l.produce_block(2).txs.len(), 1);
    }

    #[test]
    fn failed_ops_still_charge_gas() {
        let l = ledger();
        l.submit_call(&add("a"), 0).unwrap();
        let dup = l.submit_call(&add("a"), 0).unwrap();
        l.produce_block(1);
        let tx = l.tx_status(dup).unwrap();
        assert_eq!(tx.status, TxStatus::Failed);
        assert_eq!(tx.gas_used, l.schedule().execution_gas(OpKind::AddDevice, &tx.payload));
        assert!(tx.confirmed_in_block.is_none());
        assert_eq!(tx.included_in(), Some(1));
        let stats = l.gas_stats();
        assert_eq!(stats.counts[&OpKind::AddDevice], TxCounts { confirmed: 1, failed: 1 });
    }

    #[test]
    fn deleted_device_reads_as_tombstone() {
        let l = ledger();
        l.submit_call(&add("a"), 0).unwrap();
        l.produce_block(1);
        l.submit_call(&ContractCall::DeleteDevice { device_id: "a".into() }, 1).unwrap();
        l.produce_block(2);
        let view = l.query_state(&ReadRequest::Device("a".into())).unwrap();
        assert_eq!(view.body, StateBody::Device(DeviceView::Deleted { device_id: "a".into() }));
    }

    #[test]
    fn subscriptions_deliver_in_order_once() {
        let l = ledger();
        let mut s1 = l.subscribe([EventKind::DeviceAdded]);
        let mut s2 = l.subscribe([EventKind::DeviceAdded]);
        let ids: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
        for id in &ids {
            l.submit_call(&add(id), 0).unwrap();
        }
        l.produce_block(1);
        let e1 = s1.poll();
        let e2 = s2.poll();
        assert_eq!(e1, e2);
        let got: Vec<String> = e1.iter().map(|e| e.event.device_id().unwrap().to_string()).collect();
        assert_eq!(got, ids);
        assert!(s1.poll().is_empty());
        let mut late = l.subscribe_from_now([EventKind::DeviceAdded]);
        assert!(late.poll().is_empty());
    }

    #[test]
    fn filter_excludes_other_kinds() {
        let l = ledger();
        let mut s = l.subscribe([EventKind::PolicyAdded]);
        l.submit_call(&add("a"), 0).unwrap();
        l.produce_block(1);
        assert!(s.poll().is_empty());
    }

    #[test]
    fn replay_and_restore_reproduce_state() {
        let l = ledger();
        l.submit_call(&add("a"), 0).unwrap();
        l.submit_call(&add("a"), 0).unwrap();
        l.submit_call(&canonical::add_policy(), 0).unwrap();
        l.produce_block(1);
        l.submit_call(&ContractCall::AddPolicy { device_id: "a".into(), policy: canonical::policy_rule() }, 2).unwrap();
        l.produce_block(3);

        let replayed = replay_state(l.config(), &l.blocks()).unwrap();
        assert_eq!(crate::canonical::to_vec(&replayed).unwrap(), l.state_json());

        let mut log = Vec::new();
        l.export_blocks(&mut log).unwrap();
        let restored = Ledger::restore(LedgerConfig::default(), log.as_slice()).unwrap();
        assert_eq!(restored.state_json(), l.state_json());
        assert_eq!(restored.blocks(), l.blocks());
        let next = restored.submit_call(&add("z"), 4).unwrap();
        assert_eq!(next, TxId(4));
    }

    #[test]
    fn restore_rejects_tampered_gas() {
        let l = ledger();
        l.submit_call(&add("a"), 0).unwrap();
        l.produce_block(1);
        let mut log = Vec::new();
        l.export_blocks(&mut log).unwrap();
        let text = String::from_utf8(log).unwrap();
        let gas = l.blocks()[1].gas_total;
        let tampered = text.replace(&gas.to_string(), &(gas + 1).to_string());
        assert!(Ledger::restore(LedgerConfig::default(), tampered.as_bytes()).is_err());
    }
}
