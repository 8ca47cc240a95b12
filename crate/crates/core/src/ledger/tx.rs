//! Transactions, call arguments and receipts.

use serde::{Deserialize, Serialize};

use crate::canon::{CanonDecode, CanonEncode, CanonError, Decoder, Encoder};
use crate::contracts::Blueprint;
use crate::crypto::{sha3_domain, Address, Hash32, KeyPair, PublicKeys, SignatureBytes};

const TX_SIGN_DOMAIN: &str = "tx.sign.v1";
const TX_HASH_DOMAIN: &str = "tx.hash.v1";
const SELECTOR_DOMAIN: &str = "selector.v1";

/// Typed call argument or return value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "camelCase")]
pub enum AbiValue {
    U64(u64),
    Bool(bool),
    Addr(Address),
    B32(Hash32),
    #[serde(with = "hex::serde")]
    Bytes(Vec<u8>),
    Str(String),
}

impl AbiValue {
    pub fn as_u64(&self) -> Option<u64> {
        match self {
            AbiValue::U64(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            AbiValue::Bool(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_addr(&self) -> Option<Address> {
        match self {
            AbiValue::Addr(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_b32(&self) -> Option<Hash32> {
        match self {
            AbiValue::B32(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            AbiValue::Bytes(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            AbiValue::Str(v) => Some(v),
            _ => None,
        }
    }
}

impl CanonEncode for AbiValue {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            AbiValue::U64(v) => {
                enc.put_u8(0);
                enc.put_u64(*v);
            }
            AbiValue::Bool(v) => {
                enc.put_u8(1);
                enc.put_bool(*v);
            }
            AbiValue::Addr(v) => {
                enc.put_u8(2);
                v.encode(enc);
            }
            AbiValue::B32(v) => {
                enc.put_u8(3);
                v.encode(enc);
            }
            AbiValue::Bytes(v) => {
                enc.put_u8(4);
                enc.put_bytes(v);
            }
            AbiValue::Str(v) => {
                enc.put_u8(5);
                enc.put_str(v);
            }
        }
    }
}

impl CanonDecode for AbiValue {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(match dec.u8()? {
            0 => AbiValue::U64(dec.u64()?),
            1 => AbiValue::Bool(dec.bool()?),
            2 => AbiValue::Addr(Address::decode(dec)?),
            3 => AbiValue::B32(Hash32::decode(dec)?),
            4 => AbiValue::Bytes(dec.bytes()?),
            5 => AbiValue::Str(dec.str()?),
            tag => {
                return Err(CanonError::BadTag {
                    what: "abi value",
                    tag,
                })
            }
        })
    }
}

/// Function selector: leading four bytes of the hashed function name.
pub fn selector(name: &str) -> [u8; 4] {
    let digest = sha3_domain(SELECTOR_DOMAIN, |enc| enc.put_str(name));
    let mut out = [0u8; 4];
    out.copy_from_slice(&digest.as_bytes()[..4]);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum TxPayload {
    Transfer {
        to: Address,
        amount: u64,
    },
    /// Contract creation. The full blueprint travels in the transaction so
    /// a chain replays from nothing but its blocks.
    Deploy {
        blueprint: Blueprint,
    },
    Call {
        to: Address,
        #[serde(with = "hex::serde")]
        selector: [u8; 4],
        args: Vec<AbiValue>,
    },
}

impl CanonEncode for TxPayload {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            TxPayload::Transfer { to, amount } => {
                enc.put_u8(0);
                to.encode(enc);
                enc.put_u64(*amount);
            }
            TxPayload::Deploy { blueprint } => {
                enc.put_u8(1);
                blueprint.encode(enc);
            }
            TxPayload::Call { to, selector, args } => {
                enc.put_u8(2);
                to.encode(enc);
                enc.put_raw(selector);
                enc.put_seq(args);
            }
        }
    }
}

impl CanonDecode for TxPayload {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(match dec.u8()? {
            0 => TxPayload::Transfer {
                to: Address::decode(dec)?,
                amount: dec.u64()?,
            },
            1 => TxPayload::Deploy {
                blueprint: Blueprint::decode(dec)?,
            },
            2 => {
                let to = Address::decode(dec)?;
                let mut sel = [0u8; 4];
                sel.copy_from_slice(dec.raw(4)?);
                TxPayload::Call {
                    to,
                    selector: sel,
                    args: dec.seq()?,
                }
            }
            tag => {
                return Err(CanonError::BadTag {
                    what: "transaction payload",
                    tag,
                })
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Transaction {
    /// Sender verification keys; the sender address derives from these.
    pub sender_keys: PublicKeys,
    pub nonce: u64,
    pub gas_limit: u64,
    pub payload: TxPayload,
}

impl Transaction {
    pub fn sender(&self) -> Address {
        self.sender_keys.address()
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_domain(TX_SIGN_DOMAIN);
        self.encode(&mut enc);
        enc.finish()
    }

    pub fn sign(self, keys: &KeyPair) -> SignedTransaction {
        let signature = keys.sign(&self.signing_bytes());
        SignedTransaction {
            tx: self,
            signature,
        }
    }
}

impl CanonEncode for Transaction {
    fn encode(&self, enc: &mut Encoder) {
        self.sender_keys.encode(enc);
        enc.put_u64(self.nonce);
        enc.put_u64(self.gas_limit);
        self.payload.encode(enc);
    }
}

impl CanonDecode for Transaction {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(Transaction {
            sender_keys: PublicKeys::decode(dec)?,
            nonce: dec.u64()?,
            gas_limit: dec.u64()?,
            payload: TxPayload::decode(dec)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SignedTransaction {
    #[serde(flatten)]
    pub tx: Transaction,
    pub signature: SignatureBytes,
}

impl SignedTransaction {
    /// Transaction identity; covers the signature.
    pub fn hash(&self) -> Hash32 {
        sha3_domain(TX_HASH_DOMAIN, |enc| self.encode(enc))
    }

    pub fn verify_signature(&self) -> bool {
        self.tx
            .sender_keys
            .verify(&self.tx.signing_bytes(), &self.signature)
            .is_ok()
    }
}

impl CanonEncode for SignedTransaction {
    fn encode(&self, enc: &mut Encoder) {
        self.tx.encode(enc);
        self.signature.encode(enc);
    }
}

impl CanonDecode for SignedTransaction {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(SignedTransaction {
            tx: Transaction::decode(dec)?,
            signature: SignatureBytes::decode(dec)?,
        })
    }
}

/// Emitted log entry, indexed by topics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LogEvent {
    pub address: Address,
    pub topics: Vec<Hash32>,
    #[serde(with = "hex::serde")]
    pub data: Vec<u8>,
}

impl CanonEncode for LogEvent {
    fn encode(&self, enc: &mut Encoder) {
        self.address.encode(enc);
        enc.put_seq(&self.topics);
        enc.put_bytes(&self.data);
    }
}

impl CanonDecode for LogEvent {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(LogEvent {
            address: Address::decode(dec)?,
            topics: dec.seq()?,
            data: dec.bytes()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum TxStatus {
    Success,
    Reverted { reason: String },
    OutOfGas,
}

impl TxStatus {
    pub fn is_success(&self) -> bool {
        matches!(self, TxStatus::Success)
    }
}

impl CanonEncode for TxStatus {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            TxStatus::Success => enc.put_u8(0),
            TxStatus::Reverted { reason } => {
                enc.put_u8(1);
                enc.put_str(reason);
            }
            TxStatus::OutOfGas => enc.put_u8(2),
        }
    }
}

impl CanonDecode for TxStatus {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(match dec.u8()? {
            0 => TxStatus::Success,
            1 => TxStatus::Reverted { reason: dec.str()? },
            2 => TxStatus::OutOfGas,
            tag => {
                return Err(CanonError::BadTag {
                    what: "transaction status",
                    tag,
                })
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Receipt {
    pub tx_hash: Hash32,
    pub status: TxStatus,
    pub gas_used: u64,
    /// Dropped when the transaction did not succeed.
    pub logs: Vec<LogEvent>,
    pub created: Option<Address>,
    pub return_values: Vec<AbiValue>,
}

impl CanonEncode for Receipt {
    fn encode(&self, enc: &mut Encoder) {
        self.tx_hash.encode(enc);
        self.status.encode(enc);
        enc.put_u64(self.gas_used);
        enc.put_seq(&self.logs);
        enc.put_opt(&self.created);
        enc.put_seq(&self.return_values);
    }
}

impl CanonDecode for Receipt {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(Receipt {
            tx_hash: Hash32::decode(dec)?,
            status: TxStatus::decode(dec)?,
            gas_used: dec.u64()?,
            logs: dec.seq()?,
            created: dec.opt()?,
            return_values: dec.seq()?,
        })
    }
}
