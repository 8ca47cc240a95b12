//! World state: accounts and deployed contract instances.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::canon::CanonEncode;
use crate::contracts::Blueprint;
use crate::crypto::{sha3_domain, Address, Hash32};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AccountState {
    pub balance: u64,
    pub nonce: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ContractInstance {
    pub blueprint: Blueprint,
    pub creator: Address,
    pub created_at_block: u64,
    /// 32-byte cells under 32-byte keys; numbered slots use zero-padded
    /// keys, map-like regions use domain-separated digests.
    pub storage: BTreeMap<Hash32, Hash32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChainState {
    pub accounts: BTreeMap<Address, AccountState>,
    pub contracts: BTreeMap<Address, ContractInstance>,
}

impl ChainState {
    pub fn account(&self, addr: &Address) -> AccountState {
        self.accounts.get(addr).copied().unwrap_or_default()
    }

    pub fn account_mut(&mut self, addr: Address) -> &mut AccountState {
        self.accounts.entry(addr).or_default()
    }

    pub fn contract(&self, addr: &Address) -> Option<&ContractInstance> {
        self.contracts.get(addr)
    }
}

/// Deterministic contract address: trailing bytes of the digest over the
/// creator and the account nonce the deployment spent.
pub fn contract_address(creator: Address, nonce: u64) -> Address {
    Address::from_digest(&sha3_domain("create.v1", |enc| {
        creator.encode(enc);
        enc.put_u64(nonce);
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contract_addresses_differ_by_creator_and_nonce() {
        let a = Address([1u8; 20]);
        let b = Address([2u8; 20]);
        assert_ne!(contract_address(a, 0), contract_address(a, 1));
        assert_ne!(contract_address(a, 0), contract_address(b, 0));
        assert_eq!(contract_address(a, 5), contract_address(a, 5));
    }
}
