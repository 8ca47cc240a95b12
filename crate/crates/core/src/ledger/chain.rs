//! The chain: pending pool, sealing, verification, persistence.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, Write};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::canon::{CanonEncode, Encoder};
use crate::contracts;
use crate::crypto::{Address, Hash32};
use crate::ledger::block::{meets_difficulty, Block};
use crate::ledger::exec::{revert, CallCtx, DeployedView, VmError};
use crate::ledger::gas::{GasMeter, GasSchedule};
use crate::ledger::state::{contract_address, ChainState, ContractInstance};
use crate::ledger::tx::{AbiValue, LogEvent, Receipt, SignedTransaction, TxPayload, TxStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct ChainConfig {
    pub block_gas_limit: u64,
    pub block_interval_secs: u64,
    pub sealer: Address,
    /// Leading zero bits required of block hashes. `None` seals instantly,
    /// the single-authority mode used for measurements.
    pub pow_difficulty_bits: Option<u8>,
    pub schedule: GasSchedule,
    pub genesis_accounts: BTreeMap<Address, u64>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            block_gas_limit: 4_000_000,
            block_interval_secs: 10,
            sealer: Address([0u8; 20]),
            pow_difficulty_bits: None,
            schedule: GasSchedule::default(),
            genesis_accounts: BTreeMap::new(),
        }
    }
}

impl CanonEncode for ChainConfig {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u64(self.block_gas_limit);
        enc.put_u64(self.block_interval_secs);
        self.sealer.encode(enc);
        match self.pow_difficulty_bits {
            None => enc.put_u8(0),
            Some(bits) => {
                enc.put_u8(1);
                enc.put_u8(bits);
            }
        }
        self.schedule.encode(enc);
        enc.put_u32(self.genesis_accounts.len() as u32);
        for (addr, balance) in &self.genesis_accounts {
            addr.encode(enc);
            enc.put_u64(*balance);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubmitError {
    #[error("transaction signature does not verify")]
    BadSignature,
    #[error("nonce mismatch: expected {expected}, got {got}")]
    NonceMismatch { expected: u64, got: u64 },
    #[error("gas limit {got} exceeds the block gas limit {block_limit}")]
    GasLimitAboveBlock { got: u64, block_limit: u64 },
    #[error("gas limit {got} is below the intrinsic transaction cost {intrinsic}")]
    GasLimitBelowIntrinsic { got: u64, intrinsic: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SealError {
    #[error("timestamp {got} is before the previous block's {prev}")]
    TimestampRegression { prev: u64, got: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub ok: bool,
    pub blocks_checked: u64,
    pub first_invalid_block: Option<u64>,
    pub reason: Option<String>,
}

struct ChainFault {
    block: u64,
    reason: String,
}

impl ChainFault {
    fn new(block: u64, reason: impl Into<String>) -> Self {
        ChainFault {
            block,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ImportError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed chain file: {0}")]
    Format(String),
    #[error("chain invalid at block {block}: {reason}")]
    Invalid { block: u64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Tamper {
    TxGasLimit { block: u64, tx: usize },
    TxSignature { block: u64, tx: usize, byte: usize },
    ReceiptGasUsed { block: u64, tx: usize },
    ReceiptStatus { block: u64, tx: usize },
    LogData { block: u64, tx: usize, log: usize, byte: usize },
    Timestamp { block: u64 },
    ParentHash { block: u64, byte: usize },
    BlockHash { block: u64, byte: usize },
    GasTotal { block: u64 },
    SwapTxs { block: u64, a: usize, b: usize },
}

impl Tamper {
    pub fn block(&self) -> u64 {
        match *self {
            Tamper::TxGasLimit { block, .. }
            | Tamper::TxSignature { block, .. }
            | Tamper::ReceiptGasUsed { block, .. }
            | Tamper::ReceiptStatus { block, .. }
            | Tamper::LogData { block, .. }
            | Tamper::Timestamp { block }
            | Tamper::ParentHash { block, .. }
            | Tamper::BlockHash { block, .. }
            | Tamper::GasTotal { block }
            | Tamper::SwapTxs { block, .. } => block,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("tamper target does not exist: {0}")]
pub struct TamperError(pub String);

type CensorFn = Box<dyn Fn(&SignedTransaction) -> bool + Send + Sync>;

/// A single-node chain. Sealing is the only state transition; queries are
/// free and effect-less.
pub struct Chain {
    config: ChainConfig,
    state: ChainState,
    blocks: Vec<Block>,
    pending: VecDeque<SignedTransaction>,
    censored: Vec<SignedTransaction>,
    tx_locations: BTreeMap<Hash32, (u64, usize)>,
    censor: Option<CensorFn>,
}

impl std::fmt::Debug for Chain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Chain")
            .field("blocks", &self.blocks.len())
            .field("pending", &self.pending.len())
            .finish()
    }
}

impl Chain {
    pub fn new(config: ChainConfig) -> Self {
        let mut genesis = Block {
            number: 0,
            parent: Hash32::ZERO,
            timestamp: 0,
            sealer: config.sealer,
            pow_nonce: 0,
            gas_used: 0,
            extra: config.canon_bytes(),
            txs: Vec::new(),
            receipts: Vec::new(),
            hash: Hash32::ZERO,
        };
        genesis.hash = genesis.compute_hash();
        Chain {
            state: genesis_state(&config),
            blocks: vec![genesis],
            pending: VecDeque::new(),
            censored: Vec::new(),
            tx_locations: BTreeMap::new(),
            censor: None,
            config,
        }
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn latest(&self) -> &Block {
        self.blocks.last().expect("genesis always present")
    }

    pub fn height(&self) -> u64 {
        self.latest().number
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn censored_len(&self) -> usize {
        self.censored.len()
    }

    /// Install a pool filter; matching transactions are silently queued
    /// aside and never sealed.
    pub fn set_censor(&mut self, censor: CensorFn) {
        self.censor = Some(censor);
    }

    pub fn clear_censor(&mut self) {
        self.censor = None;
    }

    pub fn submit(&mut self, tx: SignedTransaction) -> Result<Hash32, SubmitError> {
        if !tx.verify_signature() {
            return Err(SubmitError::BadSignature);
        }
        if tx.tx.gas_limit > self.config.block_gas_limit {
            return Err(SubmitError::GasLimitAboveBlock {
                got: tx.tx.gas_limit,
                block_limit: self.config.block_gas_limit,
            });
        }
        if tx.tx.gas_limit < self.config.schedule.tx_base {
            return Err(SubmitError::GasLimitBelowIntrinsic {
                got: tx.tx.gas_limit,
                intrinsic: self.config.schedule.tx_base,
            });
        }
        let sender = tx.tx.sender();
        let queued = self
            .pending
            .iter()
            .chain(self.censored.iter())
            .filter(|p| p.tx.sender() == sender)
            .count() as u64;
        let expected = self.state.account(&sender).nonce + queued;
        if tx.tx.nonce != expected {
            return Err(SubmitError::NonceMismatch {
                expected,
                got: tx.tx.nonce,
            });
        }
        let hash = tx.hash();
        let drop_it = self.censor.as_ref().is_some_and(|f| f(&tx));
        if drop_it {
            self.censored.push(tx);
        } else {
            self.pending.push_back(tx);
        }
        Ok(hash)
    }

    /// Seal the next block: pop pending transactions in order, executing
    /// each, until one would push the block past its gas limit. That first
    /// misfit stays queued and packing stops, preserving order.
    pub fn seal_block(&mut self, timestamp: u64) -> Result<&Block, SealError> {
        let prev = self.latest();
        if timestamp < prev.timestamp {
            return Err(SealError::TimestampRegression {
                prev: prev.timestamp,
                got: timestamp,
            });
        }
        let parent = prev.hash;
        let number = prev.number + 1;

        let mut txs = Vec::new();
        let mut receipts = Vec::new();
        let mut gas_used = 0u64;
        while let Some(tx) = self.pending.front() {
            let snapshot = self.state.clone();
            let receipt = execute_tx(&mut self.state, &self.config.schedule, tx, number);
            if gas_used + receipt.gas_used > self.config.block_gas_limit {
                self.state = snapshot;
                break;
            }
            gas_used += receipt.gas_used;
            receipts.push(receipt);
            txs.push(self.pending.pop_front().expect("front checked"));
        }

        let mut block = Block {
            number,
            parent,
            timestamp,
            sealer: self.config.sealer,
            pow_nonce: 0,
            gas_used,
            extra: Vec::new(),
            txs,
            receipts,
            hash: Hash32::ZERO,
        };
        block.seal(self.config.pow_difficulty_bits);
        for (i, tx) in block.txs.iter().enumerate() {
            self.tx_locations.insert(tx.hash(), (number, i));
        }
        self.blocks.push(block);
        Ok(self.latest())
    }

    pub fn receipt(&self, tx_hash: &Hash32) -> Option<&Receipt> {
        let (block, index) = *self.tx_locations.get(tx_hash)?;
        self.blocks.get(block as usize)?.receipts.get(index)
    }

    pub fn tx_location(&self, tx_hash: &Hash32) -> Option<(u64, usize)> {
        self.tx_locations.get(tx_hash).copied()
    }

    /// Read-only contract call: unmetered, no effects, not recorded.
    pub fn query(
        &self,
        contract: Address,
        caller: Address,
        selector: [u8; 4],
        args: &[AbiValue],
    ) -> Result<Vec<AbiValue>, VmError> {
        let instance = self
            .state
            .contract(&contract)
            .ok_or_else(|| revert("no contract at target address"))?;
        let mut meter = GasMeter::unmetered();
        let mut ctx = CallCtx::new(
            contract,
            caller,
            self.height(),
            &instance.storage,
            &mut meter,
            &self.config.schedule,
            true,
        )
        .with_deployed(DeployedView::of(&self.state.contracts));
        contracts::dispatch(&instance.blueprint, &mut ctx, selector, args)
    }

    pub fn logs(&self, filter: &LogFilter) -> Vec<LogRecord<'_>> {
        let mut out = Vec::new();
        for block in &self.blocks {
            if block.number < filter.from_block {
                continue;
            }
            if filter.to_block.is_some_and(|end| block.number > end) {
                continue;
            }
            for (tx_index, receipt) in block.receipts.iter().enumerate() {
                for (log_index, log) in receipt.logs.iter().enumerate() {
                    if filter.matches(log) {
                        out.push(LogRecord {
                            block: block.number,
                            tx_index,
                            log_index,
                            log,
                        });
                    }
                }
            }
        }
        out
    }

    /// Re-derive everything from genesis and compare against what the chain
    /// says about itself. Reports the first block that fails.
    pub fn verify(&self) -> VerifyReport {
        match check_chain(&self.config, &self.blocks) {
            Err(fault) => VerifyReport {
                ok: false,
                blocks_checked: fault.block,
                first_invalid_block: Some(fault.block),
                reason: Some(fault.reason),
            },
            Ok(replayed) => {
                if replayed != self.state {
                    return VerifyReport {
                        ok: false,
                        blocks_checked: self.blocks.len() as u64,
                        first_invalid_block: None,
                        reason: Some("replayed state differs from live state".into()),
                    };
                }
                VerifyReport {
                    ok: true,
                    blocks_checked: self.blocks.len() as u64,
                    first_invalid_block: None,
                    reason: None,
                }
            }
        }
    }

    /// Mutate sealed history in place. Testing aid for the verifier; a real
    /// node has no such entry point.
    pub fn tamper(&mut self, t: &Tamper) -> Result<(), TamperError> {
        fn block_mut<'a>(
            blocks: &'a mut [Block],
            number: u64,
        ) -> Result<&'a mut Block, TamperError> {
            if number == 0 {
                return Err(TamperError("genesis is configuration, not history".into()));
            }
            blocks
                .get_mut(number as usize)
                .ok_or_else(|| TamperError(format!("no block {number}")))
        }

        match *t {
            Tamper::TxGasLimit { block, tx } => {
                let b = block_mut(&mut self.blocks, block)?;
                let t = b
                    .txs
                    .get_mut(tx)
                    .ok_or_else(|| TamperError(format!("no tx {tx} in block {block}")))?;
                t.tx.gas_limit ^= 1;
            }
            Tamper::TxSignature { block, tx, byte } => {
                let b = block_mut(&mut self.blocks, block)?;
                let t = b
                    .txs
                    .get_mut(tx)
                    .ok_or_else(|| TamperError(format!("no tx {tx} in block {block}")))?;
                t.signature.0[byte % 64] ^= 1;
            }
            Tamper::ReceiptGasUsed { block, tx } => {
                let b = block_mut(&mut self.blocks, block)?;
                let r = b
                    .receipts
                    .get_mut(tx)
                    .ok_or_else(|| TamperError(format!("no receipt {tx} in block {block}")))?;
                r.gas_used ^= 1;
            }
            Tamper::ReceiptStatus { block, tx } => {
                let b = block_mut(&mut self.blocks, block)?;
                let r = b
                    .receipts
                    .get_mut(tx)
                    .ok_or_else(|| TamperError(format!("no receipt {tx} in block {block}")))?;
                r.status = match r.status {
                    TxStatus::Success => TxStatus::Reverted {
                        reason: "tampered".into(),
                    },
                    _ => TxStatus::Success,
                };
            }
            Tamper::LogData {
                block,
                tx,
                log,
                byte,
            } => {
                let b = block_mut(&mut self.blocks, block)?;
                let r = b
                    .receipts
                    .get_mut(tx)
                    .ok_or_else(|| TamperError(format!("no receipt {tx} in block {block}")))?;
                let l = r
                    .logs
                    .get_mut(log)
                    .ok_or_else(|| TamperError(format!("no log {log} in receipt {tx}")))?;
                if l.data.is_empty() {
                    return Err(TamperError("log has no data bytes".into()));
                }
                let n = l.data.len();
                l.data[byte % n] ^= 1;
            }
            Tamper::Timestamp { block } => {
                block_mut(&mut self.blocks, block)?.timestamp += 1;
            }
            Tamper::ParentHash { block, byte } => {
                block_mut(&mut self.blocks, block)?.parent.0[byte % 32] ^= 1;
            }
            Tamper::BlockHash { block, byte } => {
                block_mut(&mut self.blocks, block)?.hash.0[byte % 32] ^= 1;
            }
            Tamper::GasTotal { block } => {
                block_mut(&mut self.blocks, block)?.gas_used ^= 1;
            }
            Tamper::SwapTxs { block, a, b } => {
                let blk = block_mut(&mut self.blocks, block)?;
                if a == b || a >= blk.txs.len() || b >= blk.txs.len() {
                    return Err(TamperError(format!(
                        "cannot swap txs {a} and {b} in block {block}"
                    )));
                }
                blk.txs.swap(a, b);
                blk.receipts.swap(a, b);
            }
        }
        Ok(())
    }

    /// Write the whole chain as one JSON meta line followed by one JSON
    /// block per line.
    pub fn export_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        let meta = serde_json::json!({ "format": CHAIN_FORMAT, "config": self.config });
        writeln!(w, "{meta}")?;
        for block in &self.blocks {
            writeln!(w, "{}", serde_json::to_string(block).expect("block is serializable"))?;
        }
        Ok(())
    }

    /// Read a chain back and fully verify it; a tampered file is rejected
    /// with the offending block number.
    pub fn import_jsonl(r: impl BufRead) -> Result<Chain, ImportError> {
        let mut lines = r.lines();
        let meta_line = lines
            .next()
            .ok_or_else(|| ImportError::Format("empty file".into()))??;
        #[derive(Deserialize)]
        struct Meta {
            format: String,
            config: ChainConfig,
        }
        let meta: Meta = serde_json::from_str(&meta_line)
            .map_err(|e| ImportError::Format(format!("meta line: {e}")))?;
        if meta.format != CHAIN_FORMAT {
            return Err(ImportError::Format(format!(
                "unknown format {:?}",
                meta.format
            )));
        }
        let mut blocks = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let block: Block = serde_json::from_str(&line)
                .map_err(|e| ImportError::Format(format!("block line {}: {e}", i + 1)))?;
            blocks.push(block);
        }
        let state = check_chain(&meta.config, &blocks).map_err(|fault| ImportError::Invalid {
            block: fault.block,
            reason: fault.reason,
        })?;
        let mut tx_locations = BTreeMap::new();
        for block in &blocks {
            for (i, tx) in block.txs.iter().enumerate() {
                tx_locations.insert(tx.hash(), (block.number, i));
            }
        }
        Ok(Chain {
            config: meta.config,
            state,
            blocks,
            pending: VecDeque::new(),
            censored: Vec::new(),
            tx_locations,
            censor: None,
        })
    }
}

const CHAIN_FORMAT: &str = "chain.v1";

#[derive(Debug, Clone, Default)]
pub struct LogFilter {
    pub address: Option<Address>,
    pub topic0: Option<Hash32>,
    pub topic1: Option<Hash32>,
    pub from_block: u64,
    pub to_block: Option<u64>,
}

impl LogFilter {
    fn matches(&self, log: &LogEvent) -> bool {
        if self.address.is_some_and(|a| a != log.address) {
            return false;
        }
        if let Some(t0) = self.topic0 {
            if log.topics.first() != Some(&t0) {
                return false;
            }
        }
        if let Some(t1) = self.topic1 {
            if log.topics.get(1) != Some(&t1) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LogRecord<'a> {
    pub block: u64,
    pub tx_index: usize,
    pub log_index: usize,
    pub log: &'a LogEvent,
}

fn genesis_state(config: &ChainConfig) -> ChainState {
    let mut state = ChainState::default();
    for (addr, balance) in &config.genesis_accounts {
        state.account_mut(*addr).balance = *balance;
    }
    state
}

/// Execute one transaction against `state`. Always bumps the sender nonce
/// and burns the fee; payload effects land only on success.
fn execute_tx(
    state: &mut ChainState,
    schedule: &GasSchedule,
    tx: &SignedTransaction,
    block_number: u64,
) -> Receipt {
    let sender = tx.tx.sender();
    let nonce_before = state.account(&sender).nonce;
    state.account_mut(sender).nonce = nonce_before + 1;

    let mut meter = GasMeter::new(tx.tx.gas_limit);
    let outcome = run_payload(state, schedule, tx, block_number, nonce_before, &mut meter);
    let (status, logs, created, return_values) = match outcome {
        Ok((logs, created, rets)) => (TxStatus::Success, logs, created, rets),
        Err(VmError::OutOfGas) => (TxStatus::OutOfGas, Vec::new(), None, Vec::new()),
        Err(VmError::Revert(reason)) => {
            (TxStatus::Reverted { reason }, Vec::new(), None, Vec::new())
        }
        Err(VmError::ReadOnly) => (
            TxStatus::Reverted {
                reason: "effect in read-only context".into(),
            },
            Vec::new(),
            None,
            Vec::new(),
        ),
    };

    let gas_used = meter.used();
    let account = state.account_mut(sender);
    account.balance = account.balance.saturating_sub(gas_used);

    Receipt {
        tx_hash: tx.hash(),
        status,
        gas_used,
        logs,
        created,
        return_values,
    }
}

type PayloadOutcome = (Vec<LogEvent>, Option<Address>, Vec<AbiValue>);

fn run_payload(
    state: &mut ChainState,
    schedule: &GasSchedule,
    tx: &SignedTransaction,
    block_number: u64,
    nonce_before: u64,
    meter: &mut GasMeter,
) -> Result<PayloadOutcome, VmError> {
    meter.charge(schedule.tx_base).map_err(|_| VmError::OutOfGas)?;
    let sender = tx.tx.sender();
    match &tx.tx.payload {
        TxPayload::Transfer { to, amount } => {
            if state.account(&sender).balance < *amount {
                return Err(revert("insufficient balance"));
            }
            state.account_mut(sender).balance -= amount;
            let receiver = state.account_mut(*to);
            receiver.balance = receiver.balance.saturating_add(*amount);
            Ok((Vec::new(), None, Vec::new()))
        }
        TxPayload::Deploy { blueprint } => {
            meter
                .charge(schedule.create_base)
                .and_then(|_| {
                    meter.charge(schedule.code_deposit_per_byte * u64::from(blueprint.code_size))
                })
                .map_err(|_| VmError::OutOfGas)?;
            let addr = contract_address(sender, nonce_before);
            if state.contracts.contains_key(&addr) {
                return Err(revert("contract address already occupied"));
            }
            let fresh = BTreeMap::new();
            let mut ctx = CallCtx::new(addr, sender, block_number, &fresh, meter, schedule, false)
                .with_deployed(DeployedView::of(&state.contracts));
            contracts::run_constructor(blueprint, &mut ctx)?;
            let (storage, logs) = ctx.into_effects();
            state.contracts.insert(
                addr,
                ContractInstance {
                    blueprint: blueprint.clone(),
                    creator: sender,
                    created_at_block: block_number,
                    storage,
                },
            );
            Ok((logs, Some(addr), Vec::new()))
        }
        TxPayload::Call { to, selector, args } => {
            let instance = state
                .contracts
                .get(to)
                .ok_or_else(|| revert("no contract at target address"))?;
            let mut ctx = CallCtx::new(
                *to,
                sender,
                block_number,
                &instance.storage,
                meter,
                schedule,
                false,
            )
            .with_deployed(DeployedView::of(&state.contracts));
            let rets = contracts::dispatch(&instance.blueprint, &mut ctx, *selector, args)?;
            let (writes, logs) = ctx.into_effects();
            let storage = &mut state
                .contracts
                .get_mut(to)
                .expect("contract present above")
                .storage;
            storage.extend(writes);
            Ok((logs, None, rets))
        }
    }
}

fn check_chain(config: &ChainConfig, blocks: &[Block]) -> Result<ChainState, ChainFault> {
    let genesis = blocks
        .first()
        .ok_or_else(|| ChainFault::new(0, "missing genesis block"))?;
    if genesis.number != 0
        || !genesis.parent.is_zero()
        || !genesis.txs.is_empty()
        || !genesis.receipts.is_empty()
        || genesis.gas_used != 0
    {
        return Err(ChainFault::new(0, "malformed genesis block"));
    }
    if genesis.extra != config.canon_bytes() {
        return Err(ChainFault::new(0, "genesis does not commit to this configuration"));
    }
    if genesis.hash != genesis.compute_hash() {
        return Err(ChainFault::new(0, "genesis hash mismatch"));
    }

    let mut state = genesis_state(config);
    let mut prev_hash = genesis.hash;
    let mut prev_ts = genesis.timestamp;

    for (index, block) in blocks.iter().enumerate().skip(1) {
        let n = block.number;
        let fault = |reason: String| ChainFault { block: n, reason };
        if n != index as u64 {
            return Err(fault(format!("block number {n} at height {index}")));
        }
        if block.parent != prev_hash {
            return Err(fault("parent hash does not match previous block".into()));
        }
        if block.timestamp < prev_ts {
            return Err(fault("timestamp regressed".into()));
        }
        if block.hash != block.compute_hash() {
            return Err(fault("stored hash does not match block contents".into()));
        }
        if let Some(bits) = config.pow_difficulty_bits {
            if !meets_difficulty(&block.hash, bits) {
                return Err(fault(format!("hash misses the {bits}-bit difficulty target")));
            }
        }
        if block.txs.len() != block.receipts.len() {
            return Err(fault("transaction and receipt counts differ".into()));
        }

        let mut total_gas = 0u64;
        for (i, tx) in block.txs.iter().enumerate() {
            if !tx.verify_signature() {
                return Err(fault(format!("transaction {i} signature invalid")));
            }
            let receipt = execute_tx(&mut state, &config.schedule, tx, n);
            if receipt != block.receipts[i] {
                return Err(fault(format!("transaction {i} replay produced a different receipt")));
            }
            total_gas += receipt.gas_used;
        }
        if total_gas != block.gas_used {
            return Err(fault("block gas total does not match receipts".into()));
        }
        if total_gas > config.block_gas_limit {
            return Err(fault("block exceeds the gas limit".into()));
        }

        prev_hash = block.hash;
        prev_ts = block.timestamp;
    }
    Ok(state)
}

/// Thread-safe handle over one chain; every method takes the lock for the
/// full operation, so submissions from many threads serialize cleanly.
#[derive(Clone)]
pub struct SharedLedger(Arc<Mutex<Chain>>);

impl SharedLedger {
    pub fn new(chain: Chain) -> Self {
        SharedLedger(Arc::new(Mutex::new(chain)))
    }

    pub fn submit(&self, tx: SignedTransaction) -> Result<Hash32, SubmitError> {
        self.lock().submit(tx)
    }

    pub fn seal_block(&self, timestamp: u64) -> Result<u64, SealError> {
        let mut chain = self.lock();
        chain.seal_block(timestamp).map(|b| b.number)
    }

    pub fn with<R>(&self, f: impl FnOnce(&Chain) -> R) -> R {
        f(&self.lock())
    }

    pub fn with_mut<R>(&self, f: impl FnOnce(&mut Chain) -> R) -> R {
        f(&mut self.lock())
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Chain> {
        self.0.lock().expect("ledger lock poisoned")
    }
}
