//! Append-only feed of violation alerts and transaction outcomes, addressed
//! by a sequence cursor so late subscribers can resume.

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::contracts::ContractCall;
use crate::gas::{Gas, OpKind};
use crate::ids::DeviceId;
use crate::ledger::{Block, TxId, TxStatus};
use crate::tsdb::ViolationEvent;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confirmation {
    pub tx_id: TxId,
    pub op_kind: OpKind,
    pub status: TxStatus,
    pub block_height: u64,
    pub gas_used: Gas,
    /// Target device, for single-device operations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_id: Option<DeviceId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeedItem {
    Violation(ViolationEvent<f64>),
    Confirmation(Confirmation),
}

impl FeedItem {
    pub fn device_id(&self) -> Option<&DeviceId> {
        match self {
            FeedItem::Violation(v) => Some(&v.device_id),
            FeedItem::Confirmation(c) => c.device_id.as_ref(),
        }
    }

    pub fn event_name(&self) -> &'static str {
        match self {
            FeedItem::Violation(_) => "violation",
            FeedItem::Confirmation(_) => "confirmation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedEntry {
    pub seq: u64,
    #[serde(flatten)]
    pub item: FeedItem,
}

#[derive(Debug, Default)]
pub struct EventFeed {
    log: RwLock<Vec<FeedEntry>>,
}

impl EventFeed {
    pub fn new() -> EventFeed {
        EventFeed::default()
    }

    pub fn push(&self, item: FeedItem) -> u64 {
        let mut log = self.log.write();
        let seq = log.len() as u64;
        log.push(FeedEntry { seq, item });
        seq
    }

    pub fn push_violation(&self, event: ViolationEvent<f64>) -> u64 {
        self.push(FeedItem::Violation(event))
    }

    /// One confirmation per transaction included in `block`.
    pub fn push_block(&self, block: &Block) {
        for tx in &block.txs {
            let device_id = match ContractCall::decode(tx.op_kind, &tx.payload) {
                Ok(call) => call_device(&call).cloned(),
                Err(_) => None,
            };
            self.push(FeedItem::Confirmation(Confirmation {
                tx_id: tx.tx_id,
                op_kind: tx.op_kind,
                status: tx.status,
                block_height: block.height,
                gas_used: tx.gas_used,
                device_id,
            }));
        }
    }

    /// Entries with `seq >= cursor`.
    pub fn since(&self, cursor: u64) -> Vec<FeedEntry> {
        let log = self.log.read();
        log.get(cursor as usize..).map(<[FeedEntry]>::to_vec).unwrap_or_default()
    }

    /// Cursor of the next entry to be appended.
    pub fn next_seq(&self) -> u64 {
        self.log.read().len() as u64
    }
}

fn call_device(call: &ContractCall) -> Option<&DeviceId> {
    match call {
        ContractCall::AddDevice(reg) => Some(&reg.device_id),
        ContractCall::UpdateDevice { device_id, .. }
        | ContractCall::DeleteDevice { device_id }
        | ContractCall::AddPolicy { device_id, .. }
        | ContractCall::UpdatePolicy { device_id, .. }
        | ContractCall::DeletePolicy { device_id, .. } => Some(device_id),
        ContractCall::AppendHashes(_) => None,
    }
}
