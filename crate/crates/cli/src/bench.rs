//! Benchmark runner: registers a preset fleet through the API, runs it under
//! the simulated clock and reports gas, cost and read latency.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use fogchain_api::{ApiError, ApiService};
use fogchain_core::contracts::canonical;
use fogchain_core::deployment::DeploymentError;
use fogchain_core::device_sim::{registration_for, spawn_fleet};
use fogchain_core::feed::FeedItem;
use fogchain_core::ledger::TxCounts;
use fogchain_core::{cost_to_usd, Benchmark, ContentStore, Deployment, DeviceSpec, Millis, OpKind};

use crate::config::{ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Deployment(#[from] DeploymentError),
    #[error("api rejected {what}: {source}")]
    Api { what: String, source: ApiError },
}

/// Read interactions whose latency is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadInteraction {
    FetchHashes,
    FetchPolicies,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: usize,
    pub avg_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles.
    pub fn from_ms(mut values: Vec<f64>) -> LatencyStats {
        if values.is_empty() {
            return LatencyStats { samples: 0, avg_ms: 0.0, p50_ms: 0.0, p95_ms: 0.0 };
        }
        values.sort_by(f64::total_cmp);
        let rank = |p: f64| values[((p * values.len() as f64).ceil() as usize).clamp(1, values.len()) - 1];
        LatencyStats {
            samples: values.len(),
            avg_ms: values.iter().sum::<f64>() / values.len() as f64,
            p50_ms: rank(0.50),
            p95_ms: rank(0.95),
        }
    }
}

/// Average gas of one operation kind as an exact fraction plus its decimal value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasAverage {
    pub total: u64,
    pub count: u64,
    /// `total/count` reduced, or a bare integer when exact.
    pub exact: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub benchmark: Benchmark,
    pub seed: u64,
    pub device_count: usize,
    /// Simulated milliseconds of monitoring after registration settled.
    pub duration: Millis,
    pub gas_price_gwei: f64,
    pub eth_usd: f64,
    pub gas_avg: BTreeMap<OpKind, GasAverage>,
    pub tx_count: BTreeMap<OpKind, TxCounts>,
    /// Dollar cost of one average transaction.
    pub usd_cost: BTreeMap<OpKind, f64>,
    pub archival_tx_count: usize,
    pub block_height: u64,
    pub samples_stored: usize,
    pub violations: usize,
    pub state_sha256: String,
    pub block_log_sha256: String,
    /// Wall-clock fields; excluded from determinism checks.
    pub read_latency: BTreeMap<ReadInteraction, LatencyStats>,
    pub wall_time_ms: f64,
}

impl BenchmarkReport {
    /// Canonical JSON of every field that is a pure function of the inputs.
    pub fn deterministic_json(&self) -> Vec<u8> {
        let mut value = serde_json::to_value(self).expect("report serializes");
        let map = value.as_object_mut().expect("report is an object");
        map.remove("read_latency");
        map.remove("wall_time_ms");
        fogchain_core::canonical::to_vec(&value).expect("report serializes")
    }
}

/// A finished run; the deployment stays available for inspection.
pub struct BenchRun {
    pub report: BenchmarkReport,
    pub deployment: Deployment,
    pub service: Arc<ApiService>,
}

impl BenchRun {
    pub fn block_log(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.deployment.ledger().export_blocks(&mut out).expect("writing to memory");
        out
    }
}

fn api<T>(what: impl FnOnce() -> String, r: Result<T, ApiError>) -> Result<T, BenchError> {
    r.map_err(|source| BenchError::Api { what: what(), source })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn run_benchmark(config: &RunConfig) -> Result<BenchRun, BenchError> {
    run_benchmark_with(config, spawn_fleet(config.bench.benchmark, config.bench.seed), ContentStore::in_memory())
}

/// Same as [`run_benchmark`] over an explicit fleet and archive store.
pub fn run_benchmark_with(config: &RunConfig, fleet: Vec<DeviceSpec>, cas: ContentStore) -> Result<BenchRun, BenchError> {
    config.validate()?;
    let started = Instant::now();
    let bench = &config.bench;
    let mut deployment = Deployment::with_cas(config.deployment.clone(), fleet.clone(), cas)?;
    let service = Arc::new(ApiService::new(deployment.shared().clone(), config.deployment.compression));
    service.set_benchmark(bench.benchmark.to_string());

    for (i, spec) in fleet.iter().enumerate() {
        let body = serde_json::to_vec(&registration_for(i, spec, bench.polling_interval)).expect("registration serializes");
        api(|| format!("registration of {}", spec.device_id), service.add_device(&body))?;
    }
    deployment.settle()?;
    let policy = serde_json::to_vec(&canonical::policy_rule()).expect("policy serializes");
    for spec in &fleet {
        api(|| format!("policy for {}", spec.device_id), service.add_policy(&spec.device_id, &policy))?;
    }
    deployment.settle()?;

    let start = deployment.now();
    let end = start + bench.duration;
    let interval = config.deployment.archival_interval;
    let probe_lag = config.deployment.block_interval;
    let mut latencies: BTreeMap<ReadInteraction, Vec<f64>> = BTreeMap::new();
    // read once per archival tick, after the anchor had a block to confirm in
    let mut probe = (start / interval + 1) * interval + probe_lag;
    while probe <= end {
        deployment.run_until(probe)?;
        for spec in &fleet {
            let t = Instant::now();
            api(|| format!("hash read for {}", spec.device_id), service.get_hashes(&spec.device_id))?;
            latencies.entry(ReadInteraction::FetchHashes).or_default().push(t.elapsed().as_secs_f64() * 1e3);
            let t = Instant::now();
            api(|| format!("policy read for {}", spec.device_id), service.get_policies(&spec.device_id))?;
            latencies.entry(ReadInteraction::FetchPolicies).or_default().push(t.elapsed().as_secs_f64() * 1e3);
        }
        probe += interval;
    }
    deployment.run_until(end)?;
    deployment.settle()?;

    let ledger = deployment.ledger();
    let stats = ledger.gas_stats();
    let mut gas_avg = BTreeMap::new();
    let mut usd_cost = BTreeMap::new();
    for (op, tally) in &stats.gas {
        let Some(avg) = tally.average() else { continue };
        let total = u64::try_from(tally.total).expect("gas total fits u64");
        gas_avg.insert(*op, GasAverage { total, count: tally.count, exact: avg.to_string(), value: tally.average_f64() });
        // linear in gas, so dividing the total's cost is the cost of the average
        usd_cost.insert(*op, cost_to_usd(total, bench.gas_price_gwei, bench.eth_usd) / tally.count as f64);
    }
    let shared = deployment.shared();
    let violations =
        shared.feed.since(0).iter().filter(|e| matches!(e.item, FeedItem::Violation(_))).count();
    let mut log = Vec::new();
    ledger.export_blocks(&mut log).expect("writing to memory");

    let report = BenchmarkReport {
        benchmark: bench.benchmark,
        seed: bench.seed,
        device_count: fleet.len(),
        duration: bench.duration,
        gas_price_gwei: bench.gas_price_gwei,
        eth_usd: bench.eth_usd,
        gas_avg,
        tx_count: stats.counts,
        usd_cost,
        archival_tx_count: deployment.archival_log().iter().map(|r| r.transactions).sum(),
        block_height: ledger.height(),
        samples_stored: shared.tsdb.sample_count(),
        violations,
        state_sha256: sha256_hex(&ledger.state_json()),
        block_log_sha256: sha256_hex(&log),
        read_latency: latencies.into_iter().map(|(k, v)| (k, LatencyStats::from_ms(v))).collect(),
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    Ok(BenchRun { report, deployment, service })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let s = LatencyStats::from_ms((1..=100).map(f64::from).collect());
        assert_eq!((s.samples, s.p50_ms, s.p95_ms), (100, 50.0, 95.0));
        assert_eq!(s.avg_ms, 50.5);
        let one = LatencyStats::from_ms(vec![3.0]);
        assert_eq!((one.p50_ms, one.p95_ms), (3.0, 3.0));
        assert_eq!(LatencyStats::from_ms(Vec::new()).samples, 0);
    }
}
