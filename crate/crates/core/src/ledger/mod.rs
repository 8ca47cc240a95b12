//! Deterministic account-model ledger.
//!
//! One sealing authority, explicit timestamps, metered execution. Given the
//! same configuration and transaction stream, two runs produce bit-identical
//! blocks, which is what lets [`Chain::verify`] re-derive everything from
//! genesis and compare.

mod block;
mod chain;
mod exec;
mod gas;
mod state;
mod tx;

pub use block::{meets_difficulty, Block};
pub use chain::{
    Chain, ChainConfig, ImportError, LogFilter, LogRecord, SealError, SharedLedger, SubmitError,
    Tamper, TamperError, VerifyReport,
};
pub use exec::{revert, slot_key, CallCtx, DeployedView, VmError};
pub use gas::{GasMeter, GasSchedule, OutOfGas};
pub use state::{contract_address, AccountState, ChainState, ContractInstance};
pub use tx::{
    selector, AbiValue, LogEvent, Receipt, SignedTransaction, Transaction, TxPayload, TxStatus,
};
