//! Merged device history: anchored windows come from the CAS, everything
//! else from the TSDB.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cas::{CasError, ContentHash, ContentStore};
use crate::contracts::{ContractError, WindowArchive};
use crate::fog::ArchiveObject;
use crate::ids::{DeviceId, Millis};
use crate::ledger::Ledger;
use crate::tsdb::{Sample, TimeSeriesStore, TsdbError, ViolationEvent, WindowRecords};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum WindowSource {
    Archived {
        window_index: u64,
        hash: ContentHash,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        events_hash: Option<ContentHash>,
    },
    LiveTsdb { window_index: u64 },
}

impl WindowSource {
    pub fn window_index(&self) -> u64 {
        match self {
            WindowSource::Archived { window_index, .. } | WindowSource::LiveTsdb { window_index } => *window_index,
        }
    }

    pub fn is_archived(&self) -> bool {
        matches!(self, WindowSource::Archived { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryView {
    pub device_id: DeviceId,
    pub from: Millis,
    pub to: Millis,
    /// Ledger height the archive list was read at.
    pub served_at: u64,
    pub samples: Vec<Sample<f64>>,
    pub events: Vec<ViolationEvent<f64>>,
    /// One entry per window intersecting the range, ascending.
    pub sources: Vec<WindowSource>,
}

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("invalid range [{from}, {to})")]
    InvalidRange { from: Millis, to: Millis },
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("anchored archive {hash} for window {window_index} is missing from storage")]
    MissingArchive { window_index: u64, hash: ContentHash },
    #[error("archive {hash} is unreadable: {reason}")]
    CorruptArchive { hash: ContentHash, reason: String },
    #[error(transparent)]
    Cas(CasError),
    #[error(transparent)]
    Tsdb(#[from] TsdbError),
}

/// The stores a history read draws on. `interval` is the archival window
/// length.
#[derive(Debug, Clone, Copy)]
pub struct HistorySources<'a> {
    pub ledger: &'a Ledger,
    pub cas: &'a ContentStore,
    pub tsdb: &'a TimeSeriesStore<f64>,
    pub interval: Millis,
}

/// Reads `[from, to)` for one device at simulated time `now`. Windows past
/// the one containing `now` hold no data and are not listed.
pub fn read_device_history(
    src: HistorySources<'_>,
    device_id: &DeviceId,
    from: Millis,
    to: Millis,
    now: Millis,
) -> Result<HistoryView, HistoryError> {
    let HistorySources { ledger, cas, tsdb, interval } = src;
    if from > to {
        return Err(HistoryError::InvalidRange { from, to });
    }
    let (archives, served_at) = {
        let view = ledger.view();
        let archives = view.state().get_hashes(device_id).map_err(|e| match e {
            ContractError::UnknownDevice(id) => HistoryError::UnknownDevice(id),
            other => unreachable!("get_hashes only fails on unknown devices: {other}"),
        })?;
        (archives, view.height())
    };

    let horizon = (now / interval + 1) * interval;
    let end = to.min(horizon);
    let mut samples = Vec::new();
    let mut events = Vec::new();
    let mut sources = Vec::new();
    if from < end {
        for w in from / interval..=(end - 1) / interval {
            let lo = from.max(w * interval);
            let hi = end.min((w + 1) * interval);
            match archives.iter().find(|a| a.window_index == w) {
                Some(archive) => {
                    let (s, e) = read_archived(cas, device_id, archive)?;
                    samples.extend(s.into_iter().filter(|x| (lo..hi).contains(&x.timestamp)));
                    events.extend(e.into_iter().filter(|x| (lo..hi).contains(&x.timestamp)));
                    sources.push(WindowSource::Archived {
                        window_index: w,
                        hash: archive.data_hash,
                        events_hash: archive.events_hash,
                    });
                }
                None => {
                    samples.extend(tsdb.query_range(device_id, lo, hi)?);
                    events.extend(tsdb.query_events_range(device_id, lo, hi)?);
                    sources.push(WindowSource::LiveTsdb { window_index: w });
                }
            }
        }
    }
    Ok(HistoryView { device_id: device_id.clone(), from, to, served_at, samples, events, sources })
}

fn fetch(cas: &ContentStore, window_index: u64, hash: &ContentHash) -> Result<ArchiveObject, HistoryError> {
    let bytes = cas.get(hash).map_err(|e| match e {
        CasError::NotFound(_) => HistoryError::MissingArchive { window_index, hash: *hash },
        other => HistoryError::Cas(other),
    })?;
    ArchiveObject::from_bytes(&bytes).map_err(|e| HistoryError::CorruptArchive { hash: *hash, reason: e.to_string() })
}

fn read_archived(
    cas: &ContentStore,
    device_id: &DeviceId,
    archive: &WindowArchive,
) -> Result<WindowRecords<f64>, HistoryError> {
    let w = archive.window_index;
    let data = fetch(cas, w, &archive.data_hash)?;
    let check = |obj: &ArchiveObject, hash: &ContentHash| {
        if obj.device_id != *device_id || obj.window_index != w {
            return Err(HistoryError::CorruptArchive {
                hash: *hash,
                reason: format!("holds {}/{} instead of {device_id}/{w}", obj.device_id, obj.window_index),
            });
        }
        Ok(())
    };
    check(&data, &archive.data_hash)?;
    let events = match &archive.events_hash {
        Some(h) => {
            let obj = fetch(cas, w, h)?;
            check(&obj, h)?;
            obj.events.unwrap_or_default()
        }
        None => data.events.unwrap_or_default(),
    };
    Ok((data.samples.unwrap_or_default(), events))
}
