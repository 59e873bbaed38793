//! Gas schedule, intrinsic gas, anchoring capacity planning and cost conversion.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gas units.
pub type Gas = u64;

/// Bytes in one archive content hash.
pub const DEFAULT_HASH_SIZE: u64 = 32;

/// Contract operation tag carried by every transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    AddDevice,
    UpdateDevice,
    DeleteDevice,
    AddPolicy,
    UpdatePolicy,
    DeletePolicy,
    AppendHashes,
}

impl OpKind {
    pub const ALL: [OpKind; 7] = [
        OpKind::AddDevice,
        OpKind::UpdateDevice,
        OpKind::DeleteDevice,
        OpKind::AddPolicy,
        OpKind::UpdatePolicy,
        OpKind::DeletePolicy,
        OpKind::AppendHashes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::AddDevice => "add_device",
            OpKind::UpdateDevice => "update_device",
            OpKind::DeleteDevice => "delete_device",
            OpKind::AddPolicy => "add_policy",
            OpKind::UpdatePolicy => "update_policy",
            OpKind::DeletePolicy => "delete_policy",
            OpKind::AppendHashes => "append_hashes",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GasError {
    #[error("gas schedule field `{0}` must be strictly positive")]
    NonPositive(&'static str),
    #[error("g_transaction ({g_transaction}) must be below gas_limit ({gas_limit})")]
    LimitBelowBase { gas_limit: Gas, g_transaction: Gas },
    #[error("hash size must be positive")]
    ZeroHashSize,
}

/// The ledger's gas constants.
///
/// The default surcharges are calibrated so that the canonical payloads in
/// [`crate::contracts::canonical`] confirm with the published per-row gas
/// averages (137,200 device ops, 199,500 policy ops, 134,600 for a one-entry
/// anchoring batch). A test recomputes them from the payload bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GasSchedule {
    pub gas_limit: Gas,
    pub g_transaction: Gas,
    pub g_txdatanonzero: Gas,
    pub g_txdatazero: Gas,
    pub op_surcharge: BTreeMap<OpKind, Gas>,
}

pub(crate) const DEFAULT_SURCHARGES: [(OpKind, Gas); 7] = [
    (OpKind::AddDevice, 104_096),
    (OpKind::UpdateDevice, 112_256),
    (OpKind::DeleteDevice, 114_568),
    (OpKind::AddPolicy, 168_096),
    (OpKind::UpdatePolicy, 167_144),
    (OpKind::DeletePolicy, 175_916),
    (OpKind::AppendHashes, 111_228),
];

impl Default for GasSchedule {
    fn default() -> Self {
        GasSchedule {
            gas_limit: 6_500_000,
            g_transaction: 21_000,
            g_txdatanonzero: 68,
            g_txdatazero: 4,
            op_surcharge: DEFAULT_SURCHARGES.into_iter().collect(),
        }
    }
}

impl GasSchedule {
    pub fn validate(&self) -> Result<(), GasError> {
        for (name, v) in [
            ("gas_limit", self.gas_limit),
            ("g_transaction", self.g_transaction),
            ("g_txdatanonzero", self.g_txdatanonzero),
            ("g_txdatazero", self.g_txdatazero),
        ] {
            if v == 0 {
                return Err(GasError::NonPositive(name));
            }
        }
        if self.g_transaction >= self.gas_limit {
            return Err(GasError::LimitBelowBase {
                gas_limit: self.gas_limit,
                g_transaction: self.g_transaction,
            });
        }
        Ok(())
    }

    /// Fixed execution gas for `op`; missing entries charge nothing.
    pub fn surcharge(&self, op: OpKind) -> Gas {
        self.op_surcharge.get(&op).copied().unwrap_or(0)
    }

    /// Total gas charged for a transaction carrying `payload`.
    pub fn execution_gas(&self, op: OpKind, payload: &[u8]) -> Gas {
        intrinsic_gas(payload, self) + self.surcharge(op)
    }
}

/// Base transaction gas plus per-byte payload gas.
pub fn intrinsic_gas(payload: &[u8], schedule: &GasSchedule) -> Gas {
    let zeros = payload.iter().filter(|&&b| b == 0).count() as Gas;
    let non_zeros = payload.len() as Gas - zeros;
    schedule.g_transaction + schedule.g_txdatanonzero * non_zeros + schedule.g_txdatazero * zeros
}

/// Maximum number of archive hashes one transaction can carry:
/// `floor((gas_limit - g_transaction) / (g_txdatanonzero * hash_size))`.
pub fn max_devices_per_tx(schedule: &GasSchedule, hash_size: u64) -> Result<u64, GasError> {
    if hash_size == 0 {
        return Err(GasError::ZeroHashSize);
    }
    if schedule.gas_limit <= schedule.g_transaction {
        return Err(GasError::LimitBelowBase {
            gas_limit: schedule.gas_limit,
            g_transaction: schedule.g_transaction,
        });
    }
    if schedule.g_txdatanonzero == 0 {
        return Err(GasError::NonPositive("g_txdatanonzero"));
    }
    let per_hash = schedule.g_txdatanonzero as u128 * hash_size as u128;
    let budget = (schedule.gas_limit - schedule.g_transaction) as u128;
    Ok((budget / per_hash) as u64)
}

/// Converts gas to dollars: `gas * gas_price_gwei * 1e-9 * eth_usd`.
///
/// Generic over the scalar so the same formula serves both `f64` reports and
/// exact `Ratio` checks. Inputs must be non-negative.
pub fn cost_to_usd<S>(gas: Gas, gas_price_gwei: S, eth_usd: S) -> S
where
    S: Num + FromPrimitive + PartialOrd + Copy,
{
    debug_assert!(gas_price_gwei >= S::zero() && eth_usd >= S::zero());
    let gas = S::from_u64(gas).expect("gas representable in scalar");
    let gwei_per_eth = S::from_u64(1_000_000_000).expect("1e9 representable in scalar");
    gas * gas_price_gwei * eth_usd / gwei_per_eth
}

/// Running gas total for one operation kind; the average is an exact ratio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasTally {
    pub total: u128,
    pub count: u64,
}

impl GasTally {
    pub fn record(&mut self, gas: Gas) {
        self.total += gas as u128;
        self.count += 1;
    }

    pub fn average(&self) -> Option<Ratio<u128>> {
        (self.count > 0).then(|| Ratio::new(self.total, self.count as u128))
    }

    /// Average as `f64`, zero when nothing was recorded.
    pub fn average_f64(&self) -> f64 {
        match self.average() {
            Some(r) if !r.numer().is_zero() => *r.numer() as f64 / *r.denom() as f64,
            _ => 0.0,
        }
    }
}
