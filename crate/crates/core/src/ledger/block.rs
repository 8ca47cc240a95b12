//! Blocks and the proof-of-work stub.

use serde::{Deserialize, Serialize};

use crate::canon::{CanonEncode, Encoder};
use crate::crypto::{sha3, Address, Hash32};
use crate::ledger::tx::{Receipt, SignedTransaction};

const BLOCK_HASH_DOMAIN: &str = "block.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Block {
    pub number: u64,
    pub parent: Hash32,
    pub timestamp: u64,
    pub sealer: Address,
    pub pow_nonce: u64,
    pub gas_used: u64,
    /// Genesis carries the canonical chain-config bytes here; empty
    /// elsewhere. Ties every descendant hash to the configuration.
    #[serde(with = "hex::serde")]
    pub extra: Vec<u8>,
    pub txs: Vec<SignedTransaction>,
    pub receipts: Vec<Receipt>,
    /// Digest over every field above.
    pub hash: Hash32,
}

impl Block {
    pub fn compute_hash(&self) -> Hash32 {
        let mut enc = Encoder::with_domain(BLOCK_HASH_DOMAIN);
        enc.put_u64(self.number);
        self.parent.encode(&mut enc);
        enc.put_u64(self.timestamp);
        self.sealer.encode(&mut enc);
        enc.put_u64(self.pow_nonce);
        enc.put_u64(self.gas_used);
        enc.put_bytes(&self.extra);
        enc.put_seq(&self.txs);
        enc.put_seq(&self.receipts);
        sha3(&enc.finish())
    }

    /// Find the first nonce whose hash clears `difficulty_bits` leading zero
    /// bits, then freeze the hash. With `None`, sealing is instant (the
    /// single-authority mode every measurement run uses).
    pub fn seal(&mut self, difficulty_bits: Option<u8>) {
        match difficulty_bits {
            None => {
                self.pow_nonce = 0;
                self.hash = self.compute_hash();
            }
            Some(bits) => {
                for nonce in 0u64.. {
                    self.pow_nonce = nonce;
                    let hash = self.compute_hash();
                    if meets_difficulty(&hash, bits) {
                        self.hash = hash;
                        return;
                    }
                }
                unreachable!("nonce space exhausted");
            }
        }
    }
}

pub fn meets_difficulty(hash: &Hash32, bits: u8) -> bool {
    leading_zero_bits(hash) >= u32::from(bits)
}

fn leading_zero_bits(hash: &Hash32) -> u32 {
    let mut total = 0;
    for byte in hash.as_bytes() {
        if *byte == 0 {
            total += 8;
        } else {
            total += byte.leading_zeros();
            break;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_block() -> Block {
        Block {
            number: 1,
            parent: Hash32([7u8; 32]),
            timestamp: 10,
            sealer: Address([1u8; 20]),
            pow_nonce: 0,
            gas_used: 0,
            extra: Vec::new(),
            txs: Vec::new(),
            receipts: Vec::new(),
            hash: Hash32::ZERO,
        }
    }

    #[test]
    fn hash_covers_header_fields() {
        let mut block = empty_block();
        block.seal(None);
        let sealed = block.hash;
        block.timestamp += 1;
        assert_ne!(block.compute_hash(), sealed);
    }

    #[test]
    fn proof_of_work_meets_the_difficulty_target() {
        let mut block = empty_block();
        block.seal(Some(10));
        assert!(meets_difficulty(&block.hash, 10));
        assert_eq!(block.hash, block.compute_hash());
    }

    #[test]
    fn leading_zero_count_is_exact() {
        let mut h = [0xffu8; 32];
        assert_eq!(leading_zero_bits(&Hash32(h)), 0);
        h[0] = 0;
        h[1] = 0x20;
        assert_eq!(leading_zero_bits(&Hash32(h)), 10);
        assert_eq!(leading_zero_bits(&Hash32([0u8; 32])), 256);
    }
}
