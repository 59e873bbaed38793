//! Embedded time-series store for raw samples and violation events.
//!
//! Records are kept per device, ordered by `(timestamp, insertion order)`.
//! Windows are drained for archival exactly once; drained records stay
//! queryable unless the store was built with `purge_on_drain`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::ids::{DeviceId, Millis, PolicyId};
use crate::policy::{Criticality, ThresholdType};
use crate::scalar::Reading;

/// One collected attribute value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample<V> {
    pub device_id: DeviceId,
    pub attribute: String,
    pub value: V,
    pub timestamp: Millis,
}

/// Alert produced when a policy's violation budget is exceeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationEvent<V> {
    pub device_id: DeviceId,
    pub attribute: String,
    pub policy_id: PolicyId,
    pub criticality: Criticality,
    pub violation_count: u64,
    pub threshold_type: ThresholdType,
    pub threshold_value: V,
    pub timestamp: Millis,
}

/// A device's archival window `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WindowRef {
    pub device_id: DeviceId,
    pub window_index: u64,
    pub start: Millis,
    pub end: Millis,
}

impl WindowRef {
    pub fn new(device_id: DeviceId, window_index: u64, interval: Millis) -> WindowRef {
        assert!(interval > 0, "archival interval must be positive");
        let start = window_index * interval;
        WindowRef { device_id, window_index, start, end: start + interval }
    }

    pub fn containing(device_id: DeviceId, timestamp: Millis, interval: Millis) -> WindowRef {
        WindowRef::new(device_id, timestamp / interval, interval)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TsdbError {
    #[error("invalid range: from {from} > to {to}")]
    InvalidRange { from: Millis, to: Millis },
    #[error("window {window_index} of {device_id} ends at {end}, after now ({now})")]
    WindowNotClosed { device_id: DeviceId, window_index: u64, end: Millis, now: Millis },
    #[error("window {window_index} of {device_id} already drained")]
    AlreadyDrained { device_id: DeviceId, window_index: u64 },
    #[error("non-finite value for {device_id}/{attribute}")]
    NonFiniteValue { device_id: DeviceId, attribute: String },
}

#[derive(Debug, Clone)]
struct Row<T> {
    timestamp: Millis,
    record: T,
}

#[derive(Debug, Clone)]
struct Series<T> {
    rows: Vec<Row<T>>,
}

impl<T> Default for Series<T> {
    fn default() -> Self {
        Series { rows: Vec::new() }
    }
}

impl<T: Clone> Series<T> {
    fn insert(&mut self, timestamp: Millis, record: T) {
        // later writes with equal timestamps go after earlier ones
        let at = self.rows.partition_point(|r| r.timestamp <= timestamp);
        self.rows.insert(at, Row { timestamp, record });
    }

    fn bounds(&self, from: Millis, to: Millis) -> (usize, usize) {
        let lo = self.rows.partition_point(|r| r.timestamp < from);
        let hi = self.rows.partition_point(|r| r.timestamp < to);
        (lo, hi.max(lo))
    }

    fn range(&self, from: Millis, to: Millis) -> Vec<T> {
        let (lo, hi) = self.bounds(from, to);
        self.rows[lo..hi].iter().map(|r| r.record.clone()).collect()
    }

    fn remove_range(&mut self, from: Millis, to: Millis) {
        let (lo, hi) = self.bounds(from, to);
        self.rows.drain(lo..hi);
    }
}

#[derive(Debug, Clone)]
struct DeviceData<V> {
    samples: Series<Sample<V>>,
    events: Series<ViolationEvent<V>>,
}

impl<V> Default for DeviceData<V> {
    fn default() -> Self {
        DeviceData { samples: Series::default(), events: Series::default() }
    }
}

#[derive(Debug)]
struct Inner<V> {
    devices: BTreeMap<DeviceId, DeviceData<V>>,
    drained: BTreeSet<(DeviceId, u64)>,
}

/// Samples and events of one window.
pub type WindowRecords<V> = (Vec<Sample<V>>, Vec<ViolationEvent<V>>);

/// Thread-safe time-series store.
#[derive(Debug)]
pub struct TimeSeriesStore<V> {
    inner: RwLock<Inner<V>>,
    purge_on_drain: bool,
}

impl<V: Reading> Default for TimeSeriesStore<V> {
    fn default() -> Self {
        TimeSeriesStore::new()
    }
}

impl<V: Reading> TimeSeriesStore<V> {
    pub fn new() -> Self {
        TimeSeriesStore {
            inner: RwLock::new(Inner { devices: BTreeMap::new(), drained: BTreeSet::new() }),
            purge_on_drain: false,
        }
    }

    /// Drained windows are deleted instead of retained.
    pub fn purging() -> Self {
        TimeSeriesStore { purge_on_drain: true, ..TimeSeriesStore::new() }
    }

    pub fn write_sample(&self, sample: Sample<V>) -> Result<(), TsdbError> {
        if !sample.value.is_finite_reading() {
            return Err(TsdbError::NonFiniteValue {
                device_id: sample.device_id,
                attribute: sample.attribute,
            });
        }
        let mut inner = self.inner.write();
        let data = inner.devices.entry(sample.device_id.clone()).or_default();
        data.samples.insert(sample.timestamp, sample);
        Ok(())
    }

    pub fn write_event(&self, event: ViolationEvent<V>) -> Result<(), TsdbError> {
        let mut inner = self.inner.write();
        let data = inner.devices.entry(event.device_id.clone()).or_default();
        data.events.insert(event.timestamp, event);
        Ok(())
    }

    /// Samples with `from <= timestamp < to`, ascending.
    pub fn query_range(&self, device_id: &DeviceId, from: Millis, to: Millis) -> Result<Vec<Sample<V>>, TsdbError> {
        check_range(from, to)?;
        let inner = self.inner.read();
        Ok(inner.devices.get(device_id).map(|d| d.samples.range(from, to)).unwrap_or_default())
    }

    pub fn query_events_range(
        &self,
        device_id: &DeviceId,
        from: Millis,
        to: Millis,
    ) -> Result<Vec<ViolationEvent<V>>, TsdbError> {
        check_range(from, to)?;
        let inner = self.inner.read();
        Ok(inner.devices.get(device_id).map(|d| d.events.range(from, to)).unwrap_or_default())
    }

    /// Returns a closed window's records and marks it archived.
    pub fn drain_window(
        &self,
        window: &WindowRef,
        now: Millis,
    ) -> Result<WindowRecords<V>, TsdbError> {
        if window.end > now {
            return Err(TsdbError::WindowNotClosed {
                device_id: window.device_id.clone(),
                window_index: window.window_index,
                end: window.end,
                now,
            });
        }
        let mut inner = self.inner.write();
        let key = (window.device_id.clone(), window.window_index);
        if inner.drained.contains(&key) {
            return Err(TsdbError::AlreadyDrained {
                device_id: window.device_id.clone(),
                window_index: window.window_index,
            });
        }
        inner.drained.insert(key);
        let purge = self.purge_on_drain;
        let Some(data) = inner.devices.get_mut(&window.device_id) else {
            return Ok((Vec::new(), Vec::new()));
        };
        let samples = data.samples.range(window.start, window.end);
        let events = data.events.range(window.start, window.end);
        if purge {
            data.samples.remove_range(window.start, window.end);
            data.events.remove_range(window.start, window.end);
        }
        Ok((samples, events))
    }

    pub fn is_drained(&self, device_id: &DeviceId, window_index: u64) -> bool {
        self.inner.read().drained.contains(&(device_id.clone(), window_index))
    }

    pub fn devices(&self) -> Vec<DeviceId> {
        self.inner.read().devices.keys().cloned().collect()
    }

    pub fn sample_count(&self) -> usize {
        self.inner.read().devices.values().map(|d| d.samples.rows.len()).sum()
    }

    /// Writes one canonical JSON line per record of `device_id`, samples first.
    pub fn export_ndjson<W: Write>(&self, device_id: &DeviceId, mut out: W) -> io::Result<()>
    where
        V: Serialize,
    {
        #[derive(Serialize)]
        #[serde(tag = "record", rename_all = "snake_case")]
        enum Line<'a, V> {
            Sample(&'a Sample<V>),
            Event(&'a ViolationEvent<V>),
        }

        let inner = self.inner.read();
        let Some(data) = inner.devices.get(device_id) else { return Ok(()) };
        let lines = data
            .samples
            .rows
            .iter()
            .map(|r| Line::Sample(&r.record))
            .chain(data.events.rows.iter().map(|r| Line::Event(&r.record)));
        for line in lines {
            let bytes = canonical::to_vec(&line).map_err(io::Error::other)?;
            out.write_all(&bytes)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn check_range(from: Millis, to: Millis) -> Result<(), TsdbError> {
    if from > to {
        Err(TsdbError::InvalidRange { from, to })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(dev: &str, attr: &str, value: f64, ts: Millis) -> Sample<f64> {
        Sample { device_id: dev.into(), attribute: attr.into(), value, timestamp: ts }
    }

    fn event(dev: &str, ts: Millis) -> ViolationEvent<f64> {
        ViolationEvent {
            device_id: dev.into(),
            attribute: "a".into(),
            policy_id: PolicyId(0),
            criticality: Criticality::Low,
            violation_count: 1,
            threshold_type: ThresholdType::Maximum,
            threshold_value: 1.0,
            timestamp: ts,
        }
    }

    #[test]
    fn write_then_query() {
        let db = TimeSeriesStore::new();
        let d = DeviceId::from("d");
        assert!(db.query_range(&d, 0, 100).unwrap().is_empty());
        db.write_sample(sample("d", "a", 1.0, 10)).unwrap();
        assert_eq!(db.query_range(&d, 0, 100).unwrap().len(), 1);
        assert!(db.query_range(&d, 11, 100).unwrap().is_empty());
        db.write_event(event("d", 5)).unwrap();
        assert_eq!(db.query_events_range(&d, 0, 6).unwrap().len(), 1);
    }

    #[test]
    fn duplicate_timestamps_keep_insertion_order() {
        let db = TimeSeriesStore::new();
        db.write_sample(sample("d", "a", 1.0, 10)).unwrap();
        db.write_sample(sample("d", "a", 2.0, 10)).unwrap();
        db.write_sample(sample("d", "a", 0.5, 5)).unwrap();
        let got: Vec<f64> = db.query_range(&"d".into(), 0, 11).unwrap().iter().map(|s| s.value).collect();
        assert_eq!(got, vec![0.5, 1.0, 2.0]);
    }

    #[test]
    fn invalid_range_and_non_finite() {
        let db = TimeSeriesStore::<f64>::new();
        assert_eq!(db.query_range(&"d".into(), 5, 4), Err(TsdbError::InvalidRange { from: 5, to: 4 }));
        assert!(db.write_sample(sample("d", "a", f64::NAN, 1)).is_err());
    }

    #[test]
    fn drain_rules() {
        let db = TimeSeriesStore::new();
        let w = WindowRef::new("d".into(), 0, 100);
        assert!(matches!(db.drain_window(&w, 99), Err(TsdbError::WindowNotClosed { .. })));
        let (s, e) = db.drain_window(&w, 100).unwrap();
        assert!(s.is_empty() && e.is_empty());
        assert!(matches!(db.drain_window(&w, 100), Err(TsdbError::AlreadyDrained { .. })));

        db.write_sample(sample("d", "a", 1.0, 150)).unwrap();
        db.write_sample(sample("d", "a", 1.0, 200)).unwrap();
        let w1 = WindowRef::containing("d".into(), 150, 100);
        assert_eq!(w1.window_index, 1);
        let expected = db.query_range(&"d".into(), w1.start, w1.end).unwrap();
        let (s, _) = db.drain_window(&w1, 250).unwrap();
        assert_eq!(s, expected);
        // retained after drain
        assert_eq!(db.query_range(&"d".into(), 0, 300).unwrap().len(), 2);
    }

    #[test]
    fn purge_mode_deletes_drained_records() {
        let db = TimeSeriesStore::purging();
        db.write_sample(sample("d", "a", 1.0, 50)).unwrap();
        db.write_sample(sample("d", "a", 1.0, 150)).unwrap();
        db.drain_window(&WindowRef::new("d".into(), 0, 100), 100).unwrap();
        assert_eq!(db.query_range(&"d".into(), 0, 300).unwrap().len(), 1);
    }

    #[test]
    fn export_is_canonical_ndjson() {
        let db = TimeSeriesStore::new();
        db.write_sample(sample("d", "a", 1.5, 10)).unwrap();
        db.write_event(event("d", 11)).unwrap();
        let mut out = Vec::new();
        db.export_ndjson(&"d".into(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], r#"{"attribute":"a","device_id":"d","record":"sample","timestamp":10,"value":1.5}"#);
    }

    #[test]
    fn query_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let db = TimeSeriesStore::new();
            let mut log = Vec::new();
            for i in 0..100 {
                let dev = if rng.random_bool(0.5) { "x" } else { "y" };
                let s = sample(dev, "a", i as f64, rng.random_range(0..1_000));
                log.push(s.clone());
                db.write_sample(s).unwrap();
            }
            let t1 = rng.random_range(0..1_000);
            let t2 = rng.random_range(t1..=1_000);
            for dev in ["x", "y"] {
                let mut oracle: Vec<_> = log
                    .iter()
                    .filter(|s| s.device_id.as_str() == dev && s.timestamp >= t1 && s.timestamp < t2)
                    .cloned()
                    .collect();
                // stable sort keeps insertion order for ties
                oracle.sort_by_key(|s| s.timestamp);
                assert_eq!(db.query_range(&dev.into(), t1, t2).unwrap(), oracle);
            }
        }
    }

    #[test]
    fn drained_windows_plus_open_cover_log() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let db = TimeSeriesStore::new();
        let mut log = Vec::new();
        for i in 0..300 {
            let s = sample("d", "a", i as f64, rng.random_range(0..1_000));
            log.push(s.clone());
            db.write_sample(s).unwrap();
        }
        let mut recovered = Vec::new();
        for idx in 0..9 {
            let (s, _) = db.drain_window(&WindowRef::new("d".into(), idx, 100), 900).unwrap();
            recovered.extend(s);
        }
        recovered.extend(db.query_range(&"d".into(), 900, u64::MAX).unwrap());
        log.sort_by_key(|s| s.timestamp);
        assert_eq!(recovered, log);
    }
}
