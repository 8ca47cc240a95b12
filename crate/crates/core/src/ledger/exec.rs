//! Metered execution context for contract calls.

use std::collections::BTreeMap;

use crate::compiler::PolicyStore;
use crate::crypto::{Address, Hash32};
use crate::ledger::gas::{GasMeter, GasSchedule};
use crate::ledger::state::ContractInstance;
use crate::ledger::tx::LogEvent;

/// Read-only directory of deployed contracts, for existence checks from
/// inside a call.
#[derive(Clone, Copy, Default)]
pub struct DeployedView<'a> {
    contracts: Option<&'a BTreeMap<Address, ContractInstance>>,
}

impl<'a> DeployedView<'a> {
    pub fn of(contracts: &'a BTreeMap<Address, ContractInstance>) -> Self {
        DeployedView {
            contracts: Some(contracts),
        }
    }

    fn contains(&self, addr: &Address) -> bool {
        self.contracts.is_some_and(|m| m.contains_key(addr))
    }
}

/// Failure inside contract execution.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VmError {
    #[error("out of gas")]
    OutOfGas,
    #[error("reverted: {0}")]
    Revert(String),
    #[error("storage write attempted in a read-only call")]
    ReadOnly,
}

pub fn revert(reason: impl Into<String>) -> VmError {
    VmError::Revert(reason.into())
}

/// Storage key for a numbered policy slot. Map-like contract state uses
/// domain-separated digests as keys instead; those have full-entropy leading
/// bytes, so they cannot collide with this zero-padded form.
pub fn slot_key(slot: u32) -> Hash32 {
    let mut key = [0u8; 32];
    key[28..].copy_from_slice(&slot.to_be_bytes());
    Hash32(key)
}

/// One contract invocation's view of the world: metered storage with an
/// uncommitted write overlay, plus the log buffer. Dropping the context
/// without [`CallCtx::into_effects`] discards every effect, which is how
/// reverts stay atomic.
pub struct CallCtx<'a> {
    pub contract: Address,
    pub caller: Address,
    pub block_number: u64,
    base: &'a BTreeMap<Hash32, Hash32>,
    overlay: BTreeMap<Hash32, Hash32>,
    logs: Vec<LogEvent>,
    meter: &'a mut GasMeter,
    schedule: &'a GasSchedule,
    read_only: bool,
    deployed: DeployedView<'a>,
}

impl<'a> CallCtx<'a> {
    pub fn new(
        contract: Address,
        caller: Address,
        block_number: u64,
        base: &'a BTreeMap<Hash32, Hash32>,
        meter: &'a mut GasMeter,
        schedule: &'a GasSchedule,
        read_only: bool,
    ) -> Self {
        CallCtx {
            contract,
            caller,
            block_number,
            base,
            overlay: BTreeMap::new(),
            logs: Vec::new(),
            meter,
            schedule,
            read_only,
            deployed: DeployedView::default(),
        }
    }

    pub fn with_deployed(mut self, deployed: DeployedView<'a>) -> Self {
        self.deployed = deployed;
        self
    }

    fn charge(&mut self, amount: u64) -> Result<(), VmError> {
        self.meter.charge(amount).map_err(|_| VmError::OutOfGas)
    }

    /// Is a contract deployed at `addr`? Priced like a storage read.
    pub fn contract_exists(&mut self, addr: &Address) -> Result<bool, VmError> {
        self.charge(self.schedule.storage_read)?;
        Ok(self.deployed.contains(addr))
    }

    pub fn read(&mut self, key: Hash32) -> Result<Hash32, VmError> {
        self.charge(self.schedule.storage_read)?;
        Ok(self.peek(key))
    }

    /// Unmetered view of current storage; internal bookkeeping only.
    fn peek(&self, key: Hash32) -> Hash32 {
        if let Some(v) = self.overlay.get(&key) {
            return *v;
        }
        self.base.get(&key).copied().unwrap_or(Hash32::ZERO)
    }

    pub fn write(&mut self, key: Hash32, value: Hash32) -> Result<(), VmError> {
        if self.read_only {
            return Err(VmError::ReadOnly);
        }
        let existing = self.overlay.contains_key(&key) || self.base.contains_key(&key);
        let cost = if existing {
            self.schedule.storage_write_existing_slot
        } else {
            self.schedule.storage_write_new_slot
        };
        self.charge(cost)?;
        self.overlay.insert(key, value);
        Ok(())
    }

    pub fn emit(&mut self, topics: Vec<Hash32>, data: Vec<u8>) -> Result<(), VmError> {
        if self.read_only {
            return Err(VmError::ReadOnly);
        }
        let cost = self.schedule.log_base
            + self.schedule.log_per_topic * topics.len() as u64
            + self.schedule.log_per_data_byte * data.len() as u64;
        self.charge(cost)?;
        self.logs.push(LogEvent {
            address: self.contract,
            topics,
            data,
        });
        Ok(())
    }

    pub fn compute(&mut self, units: u64) -> Result<(), VmError> {
        self.charge(units * self.schedule.compute_per_step)
    }

    pub fn is_read_only(&self) -> bool {
        self.read_only
    }

    /// Commit: the write set and logs to fold into chain state.
    pub fn into_effects(self) -> (BTreeMap<Hash32, Hash32>, Vec<LogEvent>) {
        (self.overlay, self.logs)
    }
}

impl PolicyStore for CallCtx<'_> {
    type Error = VmError;

    fn load(&mut self, slot: u32) -> Result<[u8; 32], VmError> {
        Ok(self.read(slot_key(slot))?.0)
    }

    fn store(&mut self, slot: u32, value: [u8; 32]) -> Result<(), VmError> {
        self.write(slot_key(slot), Hash32(value))
    }

    fn step(&mut self, units: u64) -> Result<(), VmError> {
        self.compute(units)
    }
}
