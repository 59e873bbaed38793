//! A complete topology driven by one simulated clock.
//!
//! At equal timestamps the loop runs block production, then sink dispatch,
//! then aggregator polls, then archival. Polls at `t` therefore see
//! registrations confirmed at `t`, and archival at a window boundary sees
//! every poll of the closing window.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cas::ContentStore;
use crate::device_sim::{DeviceSpec, Gateway};
use crate::feed::EventFeed;
use crate::fog::{AggregatorNode, ArchivalError, SinkConfig, SinkNode};
use crate::history::HistorySources;
use crate::ids::{Millis, HOUR, SECOND};
use crate::ledger::{Ledger, LedgerConfig, LedgerError};
use crate::tsdb::TimeSeriesStore;

/// Shared simulated time in milliseconds.
#[derive(Debug, Clone, Default)]
pub struct SimClock(Arc<AtomicU64>);

impl SimClock {
    pub fn new() -> SimClock {
        SimClock::default()
    }

    pub fn now(&self) -> Millis {
        self.0.load(Ordering::SeqCst)
    }

    pub fn set(&self, t: Millis) {
        self.0.store(t, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeploymentConfig {
    pub sinks: usize,
    pub aggregators: usize,
    pub block_interval: Millis,
    pub archival_interval: Millis,
    /// Simulated milliseconds per wall-clock millisecond. `None` runs as
    /// fast as possible.
    pub compression: Option<f64>,
    pub ledger: LedgerConfig,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        DeploymentConfig {
            sinks: 1,
            aggregators: 2,
            block_interval: 15 * SECOND,
            archival_interval: HOUR,
            compression: Some(3600.0),
            ledger: LedgerConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum DeploymentError {
    #[error("invalid deployment config: {0}")]
    Config(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Archival(#[from] ArchivalError),
}

impl DeploymentConfig {
    pub fn validate(&self) -> Result<(), DeploymentError> {
        let fail = |m: &str| Err(DeploymentError::Config(m.to_owned()));
        if self.sinks == 0 {
            return fail("sinks must be at least 1");
        }
        if self.aggregators < self.sinks {
            return fail("every sink needs at least one aggregator");
        }
        if self.block_interval == 0 || self.archival_interval == 0 {
            return fail("intervals must be positive");
        }
        if let Some(c) = self.compression {
            if !(c.is_finite() && c > 0.0) {
                return fail("compression must be a positive number");
            }
        }
        Ok(())
    }
}

/// Handles onto the shared stores, for read paths running beside the loop.
#[derive(Debug, Clone)]
pub struct SharedHandles {
    pub ledger: Arc<Ledger>,
    pub cas: Arc<ContentStore>,
    pub tsdb: Arc<TimeSeriesStore<f64>>,
    pub feed: Arc<EventFeed>,
    pub clock: SimClock,
    pub archival_interval: Millis,
}

impl SharedHandles {
    pub fn history_sources(&self) -> HistorySources<'_> {
        HistorySources { ledger: &self.ledger, cas: &self.cas, tsdb: &self.tsdb, interval: self.archival_interval }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchivalRecord {
    pub at: Millis,
    pub transactions: usize,
}

pub struct Deployment {
    config: DeploymentConfig,
    shared: SharedHandles,
    gateway: Arc<Gateway>,
    aggregators: Vec<AggregatorNode>,
    sinks: Vec<SinkNode>,
    next_block: Millis,
    next_archival: Millis,
    archival_log: Vec<ArchivalRecord>,
    pacing: Option<(Instant, Millis)>,
}

impl std::fmt::Debug for Deployment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Deployment")
            .field("config", &self.config)
            .field("now", &self.shared.clock.now())
            .finish()
    }
}

impl Deployment {
    pub fn new(config: DeploymentConfig, fleet: Vec<DeviceSpec>) -> Result<Deployment, DeploymentError> {
        Deployment::with_cas(config, fleet, ContentStore::in_memory())
    }

    pub fn with_cas(
        config: DeploymentConfig,
        fleet: Vec<DeviceSpec>,
        cas: ContentStore,
    ) -> Result<Deployment, DeploymentError> {
        config.validate()?;
        let ledger = Arc::new(Ledger::new(config.ledger.clone())?);
        let cas = Arc::new(cas);
        let tsdb = Arc::new(TimeSeriesStore::new());
        let feed = Arc::new(EventFeed::new());
        let gateway = Arc::new(Gateway::new(fleet).with_log());

        let mut per_sink: Vec<Vec<_>> = vec![Vec::new(); config.sinks];
        let mut aggregators = Vec::with_capacity(config.aggregators);
        for i in 0..config.aggregators {
            let (node, tx) = AggregatorNode::new(i, config.archival_interval, gateway.clone(), tsdb.clone());
            aggregators.push(node.with_feed(feed.clone()));
            per_sink[i % config.sinks].push(tx);
        }
        let sinks = per_sink
            .into_iter()
            .enumerate()
            .map(|(p, senders)| {
                let sc = SinkConfig {
                    archival_interval: config.archival_interval,
                    mode: config.ledger.archive_mode,
                    partition: p,
                    partitions: config.sinks,
                };
                SinkNode::new(sc, ledger.clone(), cas.clone(), tsdb.clone(), senders)
            })
            .collect();

        Ok(Deployment {
            shared: SharedHandles {
                ledger,
                cas,
                tsdb,
                feed,
                clock: SimClock::new(),
                archival_interval: config.archival_interval,
            },
            next_block: config.block_interval,
            next_archival: config.archival_interval,
            config,
            gateway,
            aggregators,
            sinks,
            archival_log: Vec::new(),
            pacing: None,
        })
    }

    pub fn config(&self) -> &DeploymentConfig {
        &self.config
    }

    pub fn shared(&self) -> &SharedHandles {
        &self.shared
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        &self.shared.ledger
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn now(&self) -> Millis {
        self.shared.clock.now()
    }

    pub fn aggregators(&self) -> &[AggregatorNode] {
        &self.aggregators
    }

    pub fn sinks(&self) -> &[SinkNode] {
        &self.sinks
    }

    pub fn archival_log(&self) -> &[ArchivalRecord] {
        &self.archival_log
    }

    fn next_event(&self) -> Millis {
        let poll = self
            .aggregators
            .iter()
            .flat_map(|a| a.managed().values().map(|d| d.next_poll))
            .min()
            .unwrap_or(Millis::MAX);
        self.next_block.min(self.next_archival).min(poll)
    }

    /// Produces a block at the current time and dispatches its events.
    pub fn produce_block_now(&mut self) {
        let now = self.now();
        self.block_at(now);
        for a in &mut self.aggregators {
            a.process_inbox();
        }
    }

    fn block_at(&mut self, t: Millis) {
        let block = self.shared.ledger.produce_block(t);
        self.shared.feed.push_block(&block);
        for s in &mut self.sinks {
            s.dispatch();
        }
    }

    /// Advances simulated time to `end`, running every event at or before it.
    pub fn run_until(&mut self, end: Millis) -> Result<(), DeploymentError> {
        loop {
            let t = self.next_event();
            if t > end {
                break;
            }
            self.pace(t);
            self.shared.clock.set(t);
            if t == self.next_block {
                self.block_at(t);
                self.next_block += self.config.block_interval;
            }
            for a in &mut self.aggregators {
                a.poll_tick(t);
            }
            if t == self.next_archival {
                let mut transactions = 0;
                for s in &mut self.sinks {
                    transactions += s.archival_tick(t)?.len();
                }
                self.archival_log.push(ArchivalRecord { at: t, transactions });
                self.next_archival += self.config.archival_interval;
            }
        }
        self.shared.clock.set(end.max(self.now()));
        Ok(())
    }

    /// Produces blocks until the mempool is empty, without moving the clock
    /// past the next block slot each time.
    pub fn settle(&mut self) -> Result<(), DeploymentError> {
        while self.shared.ledger.pending_count() > 0 {
            let t = self.next_block;
            self.run_until(t)?;
        }
        Ok(())
    }

    fn pace(&mut self, t: Millis) {
        let Some(c) = self.config.compression else { return };
        let (start, sim0) = *self.pacing.get_or_insert((Instant::now(), t));
        let due = Duration::from_secs_f64((t - sim0) as f64 / c / 1000.0);
        if let Some(wait) = due.checked_sub(start.elapsed()) {
            std::thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::ContractCall;
    use crate::device_sim::{registration_for, uniform_fleet};
    use crate::history::read_device_history;
    use crate::ids::MINUTE;

    fn config() -> DeploymentConfig {
        DeploymentConfig { compression: None, ..DeploymentConfig::default() }
    }

    #[test]
    fn config_validation() {
        assert!(config().validate().is_ok());
        assert!(DeploymentConfig { sinks: 0, ..config() }.validate().is_err());
        assert!(DeploymentConfig { sinks: 3, aggregators: 2, ..config() }.validate().is_err());
        assert!(DeploymentConfig { compression: Some(0.0), ..config() }.validate().is_err());
    }

    #[test]
    fn small_run_conserves_samples() {
        let fleet = uniform_fleet(5, 11);
        for sinks in [1, 2] {
            let mut d =
                Deployment::new(DeploymentConfig { sinks, aggregators: 2, ..config() }, fleet.clone()).unwrap();
            for (i, s) in fleet.iter().enumerate() {
                d.ledger().submit_call(&ContractCall::AddDevice(registration_for(i, s, 60)), 0).unwrap();
            }
            d.run_until(2 * HOUR + 30 * MINUTE).unwrap();
            assert_eq!(d.archival_log().len(), 2);
            d.settle().unwrap();
            let now = d.now();
            for s in &fleet {
                let v = read_device_history(d.shared().history_sources(), &s.device_id, 0, now + 1, now).unwrap();
                assert_eq!(v.samples, d.gateway().generated(&s.device_id));
                assert_eq!(v.sources.iter().filter(|w| w.is_archived()).count(), 2);
                // registered at the first block, 15 s in
                assert_eq!(v.samples[0].timestamp, 15 * SECOND);
            }
        }
    }

    #[test]
    fn pacing_bounds_speed() {
        let mut d = Deployment::new(DeploymentConfig { compression: Some(60_000.0), ..config() }, vec![]).unwrap();
        let start = Instant::now();
        d.run_until(HOUR).unwrap();
        assert!(start.elapsed() >= Duration::from_millis(55));
    }
}
