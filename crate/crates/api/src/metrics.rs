use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use fogchain_core::gas::OpKind;
use fogchain_core::ledger::TxCounts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadEndpoint {
    ListDevices,
    GetDevice,
    GetPolicies,
    GetHashes,
    History,
}

impl ReadEndpoint {
    pub const ALL: [ReadEndpoint; 5] = [
        ReadEndpoint::ListDevices,
        ReadEndpoint::GetDevice,
        ReadEndpoint::GetPolicies,
        ReadEndpoint::GetHashes,
        ReadEndpoint::History,
    ];
}

#[derive(Debug, Default)]
struct Accumulator {
    nanos: AtomicU64,
    count: AtomicU64,
}

/// Lock-free running latency totals per read endpoint.
#[derive(Debug, Default)]
pub struct Metrics {
    reads: [Accumulator; 5],
}

impl Metrics {
    pub fn record(&self, endpoint: ReadEndpoint, elapsed: Duration) {
        let acc = &self.reads[endpoint as usize];
        // a zero reading would make "responded" indistinguishable from "idle"
        let nanos = u64::try_from(elapsed.as_nanos()).unwrap_or(u64::MAX).max(1);
        acc.nanos.fetch_add(nanos, Ordering::Relaxed);
        acc.count.fetch_add(1, Ordering::Relaxed);
    }

    pub fn averages_ms(&self) -> BTreeMap<ReadEndpoint, f64> {
        ReadEndpoint::ALL
            .iter()
            .map(|e| {
                let acc = &self.reads[*e as usize];
                let n = acc.count.load(Ordering::Relaxed);
                let avg = if n == 0 { 0.0 } else { acc.nanos.load(Ordering::Relaxed) as f64 / n as f64 / 1e6 };
                (*e, avg)
            })
            .collect()
    }

    pub fn counts(&self) -> BTreeMap<ReadEndpoint, u64> {
        ReadEndpoint::ALL.iter().map(|e| (*e, self.reads[*e as usize].count.load(Ordering::Relaxed))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub avg_response_time_ms: BTreeMap<ReadEndpoint, f64>,
    pub read_counts: BTreeMap<ReadEndpoint, u64>,
    pub avg_gas: BTreeMap<OpKind, f64>,
    pub tx_counts: BTreeMap<OpKind, TxCounts>,
    pub benchmark: Option<String>,
}
