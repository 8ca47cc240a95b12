//! Gas accounting.

use serde::{Deserialize, Serialize};

use crate::canon::{CanonDecode, CanonEncode, CanonError, Decoder, Encoder};

/// Fee table. The defaults follow the classic account-model fee schedule
/// that public usage-control cost studies assume, so measured costs are
/// comparable with published figures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct GasSchedule {
    pub tx_base: u64,
    pub create_base: u64,
    pub code_deposit_per_byte: u64,
    pub storage_write_new_slot: u64,
    pub storage_write_existing_slot: u64,
    pub storage_read: u64,
    pub log_base: u64,
    pub log_per_topic: u64,
    pub log_per_data_byte: u64,
    pub compute_per_step: u64,
}

impl Default for GasSchedule {
    fn default() -> Self {
        GasSchedule {
            tx_base: 21_000,
            create_base: 32_000,
            code_deposit_per_byte: 200,
            storage_write_new_slot: 20_000,
            storage_write_existing_slot: 5_000,
            storage_read: 200,
            log_base: 375,
            log_per_topic: 375,
            log_per_data_byte: 8,
            compute_per_step: 1,
        }
    }
}

impl CanonEncode for GasSchedule {
    fn encode(&self, enc: &mut Encoder) {
        for v in [
            self.tx_base,
            self.create_base,
            self.code_deposit_per_byte,
            self.storage_write_new_slot,
            self.storage_write_existing_slot,
            self.storage_read,
            self.log_base,
            self.log_per_topic,
            self.log_per_data_byte,
            self.compute_per_step,
        ] {
            enc.put_u64(v);
        }
    }
}

impl CanonDecode for GasSchedule {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(GasSchedule {
            tx_base: dec.u64()?,
            create_base: dec.u64()?,
            code_deposit_per_byte: dec.u64()?,
            storage_write_new_slot: dec.u64()?,
            storage_write_existing_slot: dec.u64()?,
            storage_read: dec.u64()?,
            log_base: dec.u64()?,
            log_per_topic: dec.u64()?,
            log_per_data_byte: dec.u64()?,
            compute_per_step: dec.u64()?,
        })
    }
}

/// Running gas counter for one transaction.
#[derive(Debug)]
pub struct GasMeter {
    limit: u64,
    used: u64,
    /// Read-only queries run without accounting.
    free: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutOfGas;

impl GasMeter {
    pub fn new(limit: u64) -> Self {
        GasMeter {
            limit,
            used: 0,
            free: false,
        }
    }

    pub fn unmetered() -> Self {
        GasMeter {
            limit: u64::MAX,
            used: 0,
            free: true,
        }
    }

    pub fn charge(&mut self, amount: u64) -> Result<(), OutOfGas> {
        if self.free {
            return Ok(());
        }
        if self.used.saturating_add(amount) > self.limit {
            self.used = self.limit;
            return Err(OutOfGas);
        }
        self.used += amount;
        Ok(())
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn limit(&self) -> u64 {
        self.limit
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charges_accumulate_and_cap_at_the_limit() {
        let mut meter = GasMeter::new(100);
        meter.charge(60).unwrap();
        meter.charge(40).unwrap();
        assert_eq!(meter.used(), 100);
        assert_eq!(meter.charge(1), Err(OutOfGas));
        assert_eq!(meter.used(), 100, "out of gas consumes the full limit");
    }

    #[test]
    fn unmetered_mode_never_fails() {
        let mut meter = GasMeter::unmetered();
        meter.charge(u64::MAX).unwrap();
        meter.charge(u64::MAX).unwrap();
        assert_eq!(meter.used(), 0);
    }

    #[test]
    fn default_schedule_matches_the_classic_fee_table() {
        let s = GasSchedule::default();
        assert_eq!(s.tx_base, 21_000);
        assert_eq!(s.create_base, 32_000);
        assert_eq!(s.storage_write_new_slot, 20_000);
        assert_eq!(s.storage_write_existing_slot, 5_000);
    }
}
