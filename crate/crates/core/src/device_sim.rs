//! Deterministic simulated devices and the gateway agent that answers polls.
//!
//! Every generated value is a pure function of `(generator seed, t)`; the
//! reachability draw is a pure function of `(device seed, t)`. Nothing keeps
//! mutable RNG state, so concurrent or replayed polls see identical values.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use parking_lot::{Mutex, RwLock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::contracts::DeviceRegistration;
use crate::ids::{DeviceId, Millis, SECOND};
use crate::tsdb::Sample;

pub const ATTRIBUTE_A: &str = "Attribute A";
pub const ATTRIBUTE_B: &str = "Attribute B";

/// Simulated poll timeout reported to callers.
pub const DEFAULT_TIMEOUT: Millis = 5 * SECOND;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    Constant { value: f64 },
    Uniform { lo: f64, hi: f64, seed: u64 },
    Gaussian { mean: f64, stddev: f64, seed: u64 },
    /// `start + slope * t`, with `t` in seconds.
    Ramp { start: f64, slope: f64 },
}

impl Generator {
    pub fn validate(&self) -> Result<(), SpecError> {
        let ok = match *self {
            Generator::Constant { value } => value.is_finite(),
            Generator::Uniform { lo, hi, .. } => lo.is_finite() && hi.is_finite() && lo <= hi,
            Generator::Gaussian { mean, stddev, .. } => mean.is_finite() && stddev.is_finite() && stddev >= 0.0,
            Generator::Ramp { start, slope } => start.is_finite() && slope.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(SpecError::InvalidGenerator(*self))
        }
    }

    pub fn value_at(&self, t: Millis) -> f64 {
        match *self {
            Generator::Constant { value } => value,
            Generator::Uniform { lo, hi, seed } => {
                if lo == hi {
                    return lo;
                }
                let dist = Uniform::new_inclusive(lo, hi).expect("validated bounds");
                dist.sample(&mut rng_at(seed, t))
            }
            Generator::Gaussian { mean, stddev, seed } => {
                let dist = Normal::new(mean, stddev).expect("validated stddev");
                dist.sample(&mut rng_at(seed, t))
            }
            Generator::Ramp { start, slope } => start + slope * (t as f64 / SECOND as f64),
        }
    }
}

fn rng_at(seed: u64, t: Millis) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&t.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// First eight bytes of SHA-256 over the parts, each length-prefixed.
pub fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn default_reachability() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub device_id: DeviceId,
    pub model: String,
    pub attribute_generators: BTreeMap<String, Generator>,
    #[serde(default = "default_reachability")]
    pub reachability: f64,
    /// Seed of the reachability stream.
    #[serde(default)]
    pub seed: u64,
}

impl DeviceSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        if !(0.0..=1.0).contains(&self.reachability) {
            return Err(SpecError::InvalidReachability(self.device_id.clone(), self.reachability));
        }
        self.attribute_generators.values().try_for_each(Generator::validate)
    }

    pub fn sample_attributes(&self, t: Millis, requested: &[String]) -> Result<BTreeMap<String, f64>, PollError> {
        requested
            .iter()
            .map(|a| match self.attribute_generators.get(a) {
                Some(g) => Ok((a.clone(), g.value_at(t))),
                None => Err(PollError::UnknownAttribute(self.device_id.clone(), a.clone())),
            })
            .collect()
    }

    pub fn reachable_at(&self, t: Millis) -> bool {
        if self.reachability >= 1.0 {
            return true;
        }
        let mut rng = rng_at(self.seed ^ 0x5eed_0fac_ce55, t);
        rng.random::<f64>() < self.reachability
    }

    pub fn attributes(&self) -> Vec<String> {
        self.attribute_generators.keys().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("invalid generator parameters: {0:?}")]
    InvalidGenerator(Generator),
    #[error("device {0}: reachability {1} outside [0, 1]")]
    InvalidReachability(DeviceId, f64),
    #[error("duplicate device {0}")]
    DuplicateDevice(DeviceId),
    #[error("malformed fleet file: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PollError {
    #[error("device {device_id} timed out after {after} ms")]
    Timeout { device_id: DeviceId, after: Millis },
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("device {0} has no attribute {1:?}")]
    UnknownAttribute(DeviceId, String),
}

/// Answers polls for a set of devices. Optionally records every returned
/// sample, which serves as the ground-truth log for conservation checks.
pub struct Gateway {
    devices: RwLock<HashMap<DeviceId, DeviceSpec>>,
    timeout: Millis,
    log: Option<Mutex<HashMap<DeviceId, Vec<Sample<f64>>>>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("devices", &self.devices.read().len())
            .field("timeout", &self.timeout)
            .field("logging", &self.log.is_some())
            .finish()
    }
}

impl Gateway {
    pub fn new(specs: impl IntoIterator<Item = DeviceSpec>) -> Gateway {
        Gateway {
            devices: RwLock::new(specs.into_iter().map(|s| (s.device_id.clone(), s)).collect()),
            timeout: DEFAULT_TIMEOUT,
            log: None,
        }
    }

    pub fn with_log(mut self) -> Gateway {
        self.log = Some(Mutex::new(HashMap::new()));
        self
    }

    pub fn with_timeout(mut self, timeout: Millis) -> Gateway {
        self.timeout = timeout;
        self
    }

    pub fn spawn(&self, spec: DeviceSpec) {
        self.devices.write().insert(spec.device_id.clone(), spec);
    }

    pub fn spec(&self, device_id: &DeviceId) -> Option<DeviceSpec> {
        self.devices.read().get(device_id).cloned()
    }

    pub fn poll(&self, device_id: &DeviceId, requested: &[String], t: Millis) -> Result<Vec<Sample<f64>>, PollError> {
        let devices = self.devices.read();
        let spec = devices.get(device_id).ok_or_else(|| PollError::UnknownDevice(device_id.clone()))?;
        if !spec.reachable_at(t) {
            return Err(PollError::Timeout { device_id: device_id.clone(), after: self.timeout });
        }
        let values = spec.sample_attributes(t, requested)?;
        // requested order, not map order
        let samples: Vec<Sample<f64>> = requested
            .iter()
            .map(|a| Sample { device_id: device_id.clone(), attribute: a.clone(), value: values[a], timestamp: t })
            .collect();
        if let Some(log) = &self.log {
            log.lock().entry(device_id.clone()).or_default().extend(samples.iter().cloned());
        }
        Ok(samples)
    }

    /// Every sample returned so far for `device_id`, in poll order.
    pub fn generated(&self, device_id: &DeviceId) -> Vec<Sample<f64>> {
        self.log.as_ref().and_then(|l| l.lock().get(device_id).cloned()).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Benchmark {
    B1,
    B2,
    B3,
    B4,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [Benchmark::B1, Benchmark::B2, Benchmark::B3, Benchmark::B4];

    pub fn device_count(self) -> usize {
        match self {
            Benchmark::B1 => 50,
            Benchmark::B2 => 100,
            Benchmark::B3 => 150,
            Benchmark::B4 => 200,
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for Benchmark {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "B1" => Ok(Benchmark::B1),
            "B2" => Ok(Benchmark::B2),
            "B3" => Ok(Benchmark::B3),
            "B4" => Ok(Benchmark::B4),
            _ => Err(format!("unknown benchmark {s:?}; expected B1..B4")),
        }
    }
}

pub fn fleet_device_id(index: usize) -> DeviceId {
    DeviceId::new(format!("dev-{:04}", index + 1))
}

/// Uniform fleet of `n` devices. Per-device seeds depend only on
/// `(master_seed, device_id)`.
pub fn uniform_fleet(n: usize, master_seed: u64) -> Vec<DeviceSpec> {
    (0..n).map(|i| fleet_device(fleet_device_id(i), master_seed)).collect()
}

pub fn fleet_device(device_id: DeviceId, master_seed: u64) -> DeviceSpec {
    let m = master_seed.to_le_bytes();
    let id = device_id.as_str().as_bytes();
    let seed_for = |attr: &str| derive_seed(&[&m, id, attr.as_bytes()]);
    let attribute_generators = BTreeMap::from([
        (ATTRIBUTE_A.to_owned(), Generator::Uniform { lo: 0.0, hi: 100.0, seed: seed_for(ATTRIBUTE_A) }),
        (ATTRIBUTE_B.to_owned(), Generator::Gaussian { mean: 80.0, stddev: 12.0, seed: seed_for(ATTRIBUTE_B) }),
    ]);
    let seed = derive_seed(&[&m, id]);
    DeviceSpec { device_id, model: "sim-sensor-v1".into(), attribute_generators, reachability: 1.0, seed }
}

pub fn spawn_fleet(benchmark: Benchmark, master_seed: u64) -> Vec<DeviceSpec> {
    uniform_fleet(benchmark.device_count(), master_seed)
}

/// Reads a JSON list of device specs.
pub fn load_fleet(path: &Path) -> Result<Vec<DeviceSpec>, SpecError> {
    let bytes = std::fs::read(path).map_err(|e| SpecError::Malformed(format!("{}: {e}", path.display())))?;
    parse_fleet(&bytes)
}

pub fn parse_fleet(bytes: &[u8]) -> Result<Vec<DeviceSpec>, SpecError> {
    let specs: Vec<DeviceSpec> = serde_json::from_slice(bytes).map_err(|e| SpecError::Malformed(e.to_string()))?;
    let mut seen = std::collections::HashSet::new();
    for s in &specs {
        s.validate()?;
        if !seen.insert(&s.device_id) {
            return Err(SpecError::DuplicateDevice(s.device_id.clone()));
        }
    }
    Ok(specs)
}

/// Ledger registration for the fleet member at `index`. Field widths stay
/// fixed for indices below 9999 so payload sizes match the canonical one.
pub fn registration_for(index: usize, spec: &DeviceSpec, polling_interval: u64) -> DeviceRegistration {
    let n = index + 1;
    DeviceRegistration {
        device_id: spec.device_id.clone(),
        ip_address: format!("10.100.{}.{}", 100 + (n / 100) % 156, 100 + n % 100),
        model: spec.model.clone(),
        credentials: format!("secret-{:04}", n),
        polling_interval,
        target_attributes: spec.attributes(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::canonical;

    #[test]
    fn generator_formulas() {
        assert_eq!(Generator::Constant { value: 42.0 }.value_at(123_456), 42.0);
        assert_eq!(Generator::Ramp { start: 0.0, slope: 1.0 }.value_at(10 * SECOND), 10.0);
        assert_eq!(Generator::Ramp { start: 5.0, slope: -0.5 }.value_at(4 * SECOND), 3.0);
        assert_eq!(Generator::Uniform { lo: 3.0, hi: 3.0, seed: 9 }.value_at(1), 3.0);
    }

    #[test]
    fn generator_is_pure_in_seed_and_time() {
        let g = Generator::Gaussian { mean: 0.0, stddev: 1.0, seed: 7 };
        assert_eq!(g.value_at(60_000), g.value_at(60_000));
        assert_ne!(g.value_at(60_000), g.value_at(120_000));
        let u = Generator::Uniform { lo: 0.0, hi: 100.0, seed: 7 };
        for t in 0..500 {
            let v = u.value_at(t * 60_000);
            assert!((0.0..=100.0).contains(&v));
        }
    }

    #[test]
    fn invalid_generators() {
        assert!(Generator::Uniform { lo: 2.0, hi: 1.0, seed: 0 }.validate().is_err());
        assert!(Generator::Gaussian { mean: 0.0, stddev: -1.0, seed: 0 }.validate().is_err());
        assert!(Generator::Constant { value: f64::NAN }.validate().is_err());
    }

    #[test]
    fn reachability_extremes_and_rate() {
        let mut spec = fleet_device("x".into(), 1);
        let attrs = spec.attributes();
        let gw = Gateway::new([spec.clone()]);
        assert!((0..100).all(|t| gw.poll(&spec.device_id, &attrs, t).is_ok()));

        spec.reachability = 0.0;
        let gw = Gateway::new([spec.clone()]);
        assert!((0..100).all(|t| matches!(gw.poll(&spec.device_id, &attrs, t), Err(PollError::Timeout { .. }))));

        spec.reachability = 0.5;
        let ok = (0..10_000u64).filter(|&t| spec.reachable_at(t * 60_000)).count();
        let frac = ok as f64 / 10_000.0;
        assert!((frac - 0.5).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn poll_errors() {
        let spec = fleet_device("x".into(), 1);
        let gw = Gateway::new([spec]);
        assert_eq!(gw.poll(&"y".into(), &[], 0), Err(PollError::UnknownDevice("y".into())));
        assert!(matches!(gw.poll(&"x".into(), &["nope".into()], 0), Err(PollError::UnknownAttribute(..))));
    }

    #[test]
    fn presets_and_independence() {
        let counts: Vec<usize> = Benchmark::ALL.iter().map(|b| spawn_fleet(*b, 0).len()).collect();
        assert_eq!(counts, [50, 100, 150, 200]);
        let small = uniform_fleet(10, 99);
        let big = uniform_fleet(200, 99);
        assert_eq!(small[..], big[..10]);
        assert_ne!(uniform_fleet(1, 1), uniform_fleet(1, 2));
        assert_eq!("b3".parse::<Benchmark>(), Ok(Benchmark::B3));
    }

    #[test]
    fn fleet_file_parsing() {
        assert_eq!(parse_fleet(b"[]").unwrap(), vec![]);
        let text = r#"[{"device_id":"a","model":"m","attribute_generators":
            {"t":{"kind":"ramp","start":0,"slope":1}}}]"#;
        let fleet = parse_fleet(text.as_bytes()).unwrap();
        assert_eq!(fleet[0].reachability, 1.0);
        assert!(parse_fleet(b"{").is_err());
        let bad = r#"[{"device_id":"a","model":"m","attribute_generators":{},"reachability":2}]"#;
        assert!(matches!(parse_fleet(bad.as_bytes()), Err(SpecError::InvalidReachability(..))));
    }

    #[test]
    fn fleet_registration_matches_canonical_size() {
        let fleet = uniform_fleet(250, 3);
        let canon = canonical::add_device().encode().len();
        assert_eq!(registration_for(0, &fleet[0], 60), canonical::device_registration());
        for (i, s) in fleet.iter().enumerate() {
            let reg = registration_for(i, s, 60);
            reg.validate().unwrap();
            assert_eq!(crate::contracts::ContractCall::AddDevice(reg).encode().len(), canon);
        }
    }

    #[test]
    fn gateway_log_records_returned_samples() {
        let spec = fleet_device("x".into(), 1);
        let attrs = spec.attributes();
        let gw = Gateway::new([spec]).with_log();
        let a = gw.poll(&"x".into(), &attrs, 0).unwrap();
        let b = gw.poll(&"x".into(), &attrs, 60_000).unwrap();
        assert_eq!(gw.generated(&"x".into()), [a, b].concat());
    }
}
