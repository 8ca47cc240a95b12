//! Hashing, account keys, signatures, and sealed boxes.
//!
//! All digests are SHA3-256. Preimages are built with the canonical encoder
//! so every hashed structure has exactly one byte representation. Accounts
//! hold two key pairs derived from one seed: an Ed25519 signing key for
//! transactions and an X25519 key so other parties can send the account
//! confidential payloads (sealed boxes) through on-chain logs.

use std::fmt;

use ed25519_dalek::{Signer, Verifier};
use rand_core::CryptoRngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::{CanonDecode, CanonEncode, CanonError, Decoder, Encoder};

pub const HASH_LEN: usize = 32;
pub const ADDRESS_LEN: usize = 20;
pub const SIGNATURE_LEN: usize = 64;
pub const NONCE_LEN: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("account seed must not be empty")]
    EmptySeed,
    #[error("commitment nonce must be exactly {NONCE_LEN} bytes, got {0}")]
    BadNonceLength(usize),
    #[error("invalid hex: {0}")]
    BadHex(String),
    #[error("signature verification failed")]
    BadSignature,
    #[error("sealed box could not be opened")]
    SealedBoxOpen,
    #[error("sealed box could not be created")]
    SealedBoxSeal,
}

/// 32-byte SHA3-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Hash32(#[serde(with = "hex")] pub [u8; HASH_LEN]);

impl Hash32 {
    pub const ZERO: Hash32 = Hash32([0u8; HASH_LEN]);

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; HASH_LEN]
    }

    pub fn as_bytes(&self) -> &[u8; HASH_LEN] {
        &self.0
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let s = s.strip_prefix("0x").unwrap_or(s);
        let mut out = [0u8; HASH_LEN];
        hex::decode_to_slice(s, &mut out).map_err(|e| CryptoError::BadHex(e.to_string()))?;
        Ok(Hash32(out))
    }
}

impl fmt::Display for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash32({self})")
    }
}

impl CanonEncode for Hash32 {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_raw(&self.0);
    }
}

impl CanonDecode for Hash32 {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(Hash32(dec.raw(HASH_LEN)?.try_into().unwrap()))
    }
}

/// 20-byte account or contract address: the last 20 bytes of the SHA3-256
/// digest of the owning public key (or, for contracts, of the creation
/// preimage).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(#[serde(with = "hex")] pub [u8; ADDRESS_LEN]);

impl Address {
    pub const ZERO: Address = Address([0u8; ADDRESS_LEN]);

    pub fn as_bytes(&self) -> &[u8; ADDRESS_LEN] {
        &self.0
    }

    /// Truncate a 32-byte digest to its trailing 20 bytes.
    pub fn from_digest(digest: &Hash32) -> Self {
        let mut out = [0u8; ADDRESS_LEN];
        out.copy_from_slice(&digest.0[HASH_LEN - ADDRESS_LEN..]);
        Address(out)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let s = s.strip_prefix("0x").unwrap_or(s);
        let mut out = [0u8; ADDRESS_LEN];
        hex::decode_to_slice(s, &mut out).map_err(|e| CryptoError::BadHex(e.to_string()))?;
        Ok(Address(out))
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address(0x{})", hex::encode(self.0))
    }
}

impl CanonEncode for Address {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_raw(&self.0);
    }
}

impl CanonDecode for Address {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(Address(dec.raw(ADDRESS_LEN)?.try_into().unwrap()))
    }
}

/// 32-byte secret salt used for provenance commitments and policy
/// obfuscation. Shared off-chain between the parties to one contract.
#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Nonce32(#[serde(with = "hex")] pub [u8; NONCE_LEN]);

impl Nonce32 {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; NONCE_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::BadNonceLength(bytes.len()))?;
        Ok(Nonce32(arr))
    }

    pub fn random(rng: &mut impl CryptoRngCore) -> Self {
        let mut out = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut out);
        Nonce32(out)
    }

    pub fn as_bytes(&self) -> &[u8; NONCE_LEN] {
        &self.0
    }
}

impl fmt::Debug for Nonce32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nonce32(..)")
    }
}

/// SHA3-256 of raw bytes.
pub fn sha3(data: &[u8]) -> Hash32 {
    use sha3::{Digest, Sha3_256};
    let mut hasher = Sha3_256::new();
    hasher.update(data);
    Hash32(hasher.finalize().into())
}

/// SHA3-256 over a domain-tagged canonical encoding. The tag keeps digests
/// from different subsystems (transactions, blocks, commitments, policy
/// obfuscation) disjoint even when payloads collide byte-for-byte.
pub fn sha3_domain(domain: &'static str, build: impl FnOnce(&mut Encoder)) -> Hash32 {
    let mut enc = Encoder::with_domain(domain);
    build(&mut enc);
    sha3(enc.as_slice())
}

/// 64-byte Ed25519 signature.
#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignatureBytes(#[serde(with = "hex")] pub [u8; SIGNATURE_LEN]);

impl fmt::Debug for SignatureBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SignatureBytes(0x{}..)", hex::encode(&self.0[..6]))
    }
}

impl CanonEncode for SignatureBytes {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_raw(&self.0);
    }
}

impl CanonDecode for SignatureBytes {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(SignatureBytes(dec.raw(SIGNATURE_LEN)?.try_into().unwrap()))
    }
}

/// Public half of an account: signing key plus sealed-box reception key.
#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicKeys {
    #[serde(with = "hex")]
    pub sign: [u8; 32],
    #[serde(with = "hex")]
    pub seal: [u8; 32],
}

impl fmt::Debug for PublicKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKeys(sign=0x{}..)", hex::encode(&self.sign[..6]))
    }
}

impl CanonEncode for PublicKeys {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_raw(&self.sign);
        enc.put_raw(&self.seal);
    }
}

impl CanonDecode for PublicKeys {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(PublicKeys {
            sign: dec.raw(32)?.try_into().unwrap(),
            seal: dec.raw(32)?.try_into().unwrap(),
        })
    }
}

impl PublicKeys {
    /// The address owned by these keys: trailing 20 bytes of the digest of
    /// the signing key.
    pub fn address(&self) -> Address {
        Address::from_digest(&sha3_domain("addr.v1", |e| e.put_raw(&self.sign)))
    }

    pub fn verify(&self, message: &[u8], signature: &SignatureBytes) -> Result<(), CryptoError> {
        let key = ed25519_dalek::VerifyingKey::from_bytes(&self.sign)
            .map_err(|_| CryptoError::BadSignature)?;
        let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
        key.verify(message, &sig)
            .map_err(|_| CryptoError::BadSignature)
    }

    /// Encrypt `plaintext` so only the holder of the matching secret key can
    /// read it. The ephemeral key comes from `rng`, so a seeded rng gives
    /// byte-identical ciphertexts run to run.
    pub fn seal(
        &self,
        rng: &mut impl CryptoRngCore,
        plaintext: &[u8],
    ) -> Result<Vec<u8>, CryptoError> {
        let pk = crypto_box::PublicKey::from(self.seal);
        pk.seal(rng, plaintext).map_err(|_| CryptoError::SealedBoxSeal)
    }
}

/// Full account key material, derived deterministically from a seed.
#[derive(Clone)]
pub struct KeyPair {
    signing: ed25519_dalek::SigningKey,
    sealing: crypto_box::SecretKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair(address={})", self.public().address())
    }
}

impl KeyPair {
    /// Derive both key pairs from a seed. Each key gets its own
    /// domain-separated digest of the seed, so the signing and sealing keys
    /// are unrelated. An empty seed is rejected.
    pub fn from_seed(seed: &[u8]) -> Result<Self, CryptoError> {
        if seed.is_empty() {
            return Err(CryptoError::EmptySeed);
        }
        let sign_seed = sha3_domain("key.sign.v1", |e| e.put_bytes(seed));
        let seal_seed = sha3_domain("key.seal.v1", |e| e.put_bytes(seed));
        Ok(KeyPair {
            signing: ed25519_dalek::SigningKey::from_bytes(sign_seed.as_bytes()),
            sealing: crypto_box::SecretKey::from(*seal_seed.as_bytes()),
        })
    }

    pub fn public(&self) -> PublicKeys {
        PublicKeys {
            sign: self.signing.verifying_key().to_bytes(),
            seal: *self.sealing.public_key().as_bytes(),
        }
    }

    pub fn address(&self) -> Address {
        self.public().address()
    }

    pub fn sign(&self, message: &[u8]) -> SignatureBytes {
        SignatureBytes(self.signing.sign(message).to_bytes())
    }

    /// Open a sealed box addressed to this account.
    pub fn unseal(&self, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        self.sealing
            .unseal(ciphertext)
            .map_err(|_| CryptoError::SealedBoxOpen)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    /// Independent SHA3-256, written from the Keccak specification: the
    /// permutation derives its rotation offsets and round constants
    /// algorithmically instead of quoting tables, so agreement with the
    /// production hasher is meaningful.
    mod reference_sha3 {
        fn keccak_f(state: &mut [u64; 25]) {
            // Rotation offsets from the (t+1)(t+2)/2 walk over lane positions.
            let mut rho = [0u32; 25];
            let (mut x, mut y) = (1usize, 0usize);
            for t in 0..24u32 {
                rho[x + 5 * y] = ((t + 1) * (t + 2) / 2) % 64;
                let (nx, ny) = (y, (2 * x + 3 * y) % 5);
                x = nx;
                y = ny;
            }
            // Round constants from the degree-8 LFSR over GF(2).
            let mut lfsr = 1u8;
            let mut rc = [0u64; 24];
            for constant in rc.iter_mut() {
                for j in 0..7 {
                    if lfsr & 1 == 1 {
                        *constant ^= 1u64 << ((1u64 << j) - 1);
                    }
                    let high = lfsr & 0x80 != 0;
                    lfsr <<= 1;
                    if high {
                        lfsr ^= 0x71;
                    }
                }
            }

            for constant in rc {
                // theta
                let mut c = [0u64; 5];
                for i in 0..5 {
                    c[i] = state[i]
                        ^ state[i + 5]
                        ^ state[i + 10]
                        ^ state[i + 15]
                        ^ state[i + 20];
                }
                for i in 0..5 {
                    let d = c[(i + 4) % 5] ^ c[(i + 1) % 5].rotate_left(1);
                    for j in 0..5 {
                        state[i + 5 * j] ^= d;
                    }
                }
                // rho and pi
                let mut moved = [0u64; 25];
                for i in 0..5 {
                    for j in 0..5 {
                        moved[j + 5 * ((2 * i + 3 * j) % 5)] =
                            state[i + 5 * j].rotate_left(rho[i + 5 * j]);
                    }
                }
                // chi
                for j in 0..5 {
                    for i in 0..5 {
                        state[i + 5 * j] = moved[i + 5 * j]
                            ^ (!moved[(i + 1) % 5 + 5 * j] & moved[(i + 2) % 5 + 5 * j]);
                    }
                }
                // iota
                state[0] ^= constant;
            }
        }

        pub fn sha3_256(input: &[u8]) -> [u8; 32] {
            const RATE: usize = 136;
            let mut state = [0u64; 25];
            let mut padded = input.to_vec();
            padded.push(0x06);
            while padded.len() % RATE != 0 {
                padded.push(0);
            }
            let last = padded.len() - 1;
            padded[last] |= 0x80;

            for block in padded.chunks(RATE) {
                for (i, lane) in block.chunks(8).enumerate() {
                    state[i] ^= u64::from_le_bytes(lane.try_into().unwrap());
                }
                keccak_f(&mut state);
            }

            let mut out = [0u8; 32];
            for i in 0..4 {
                out[i * 8..(i + 1) * 8].copy_from_slice(&state[i].to_le_bytes());
            }
            out
        }
    }

    #[test]
    fn sha3_matches_fips_202_vectors() {
        assert_eq!(
            sha3(b"").to_string(),
            "0xa7ffc6f8bf1ed76651c14756a061d662f580ff4de43b49fa82d80a4b80f8434a"
        );
        assert_eq!(
            sha3(b"abc").to_string(),
            "0x3a985da74fe225b2045c172d6bd390bd855f086e3e9d525b46bfe24511431532"
        );
    }

    #[test]
    fn sha3_matches_independent_reference() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        use rand_core::RngCore;
        for len in 0..300 {
            let mut input = vec![0u8; len];
            rng.fill_bytes(&mut input);
            assert_eq!(
                sha3(&input).0,
                reference_sha3::sha3_256(&input),
                "length {len}"
            );
        }
    }

    #[test]
    fn key_derivation_is_deterministic_and_seed_sensitive() {
        let a1 = KeyPair::from_seed(b"alice").unwrap();
        let a2 = KeyPair::from_seed(b"alice").unwrap();
        let b = KeyPair::from_seed(b"bob").unwrap();
        assert_eq!(a1.address(), a2.address());
        assert_eq!(a1.public().seal, a2.public().seal);
        assert_ne!(a1.address(), b.address());
        assert_ne!(a1.public().sign, a1.public().seal);
    }

    #[test]
    fn empty_seed_is_rejected() {
        assert_eq!(KeyPair::from_seed(b"").unwrap_err(), CryptoError::EmptySeed);
    }

    #[test]
    fn address_is_digest_tail() {
        let kp = KeyPair::from_seed(b"alice").unwrap();
        let digest = sha3_domain("addr.v1", |e| e.put_raw(&kp.public().sign));
        assert_eq!(kp.address().as_bytes(), &digest.as_bytes()[12..]);
    }

    #[test]
    fn sign_verify_round_trip() {
        let kp = KeyPair::from_seed(b"alice").unwrap();
        let msg = b"payload";
        let sig = kp.sign(msg);
        kp.public().verify(msg, &sig).unwrap();

        let other = KeyPair::from_seed(b"bob").unwrap();
        assert_eq!(
            other.public().verify(msg, &sig).unwrap_err(),
            CryptoError::BadSignature
        );
        assert_eq!(
            kp.public().verify(b"tampered", &sig).unwrap_err(),
            CryptoError::BadSignature
        );
    }

    #[test]
    fn sealed_box_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let recipient = KeyPair::from_seed(b"alice").unwrap();
        let eavesdropper = KeyPair::from_seed(b"mallory").unwrap();
        let ct = recipient
            .public()
            .seal(&mut rng, b"meet at tick 40")
            .unwrap();
        assert_eq!(recipient.unseal(&ct).unwrap(), b"meet at tick 40");
        assert_eq!(
            eavesdropper.unseal(&ct).unwrap_err(),
            CryptoError::SealedBoxOpen
        );
    }

    #[test]
    fn sealed_box_is_deterministic_under_seeded_rng() {
        let recipient = KeyPair::from_seed(b"alice").unwrap();
        let ct1 = {
            let mut rng = ChaCha20Rng::seed_from_u64(9);
            recipient.public().seal(&mut rng, b"x").unwrap()
        };
        let ct2 = {
            let mut rng = ChaCha20Rng::seed_from_u64(9);
            recipient.public().seal(&mut rng, b"x").unwrap()
        };
        assert_eq!(ct1, ct2);
    }

    #[test]
    fn domain_separation_changes_digests() {
        let a = sha3_domain("key.sign.v1", |e| e.put_bytes(b"seed"));
        let b = sha3_domain("key.seal.v1", |e| e.put_bytes(b"seed"));
        assert_ne!(a, b);
    }

    #[test]
    fn nonce_length_is_enforced() {
        assert!(Nonce32::from_slice(&[0u8; 32]).is_ok());
        assert_eq!(
            Nonce32::from_slice(&[0u8; 31]).unwrap_err(),
            CryptoError::BadNonceLength(31)
        );
    }
}
