//! Deterministic consent-contract ledger.
//!
//! The crate simulates a small account-based blockchain and, on top of it,
//! two styles of data-accountability contract:
//!
//! - per-relationship usage contracts that evaluate event-condition-action
//!   policies over obfuscated event digests and record every decision, and
//! - per-controller membership contracts where subjects join or leave a
//!   published set of policy templates and the controller logs bulk events.
//!
//! Everything is deterministic: consensus state lives in ordered maps, all
//! randomness is injected through seeded generators, and every hashed or
//! signed structure has a single canonical byte encoding. Re-running a
//! scenario with the same seed reproduces the chain byte for byte.
//!
//! Module map:
//! - [`canon`]: canonical byte encoding shared by hashing, signing, and
//!   tamper detection
//! - [`crypto`]: SHA3-256 digests, account keys, signatures, sealed boxes
//! - [`policy`]: the policy language (AST, parser, printer, templates) and
//!   the plaintext reference interpreter
//! - [`compiler`]: obfuscation of patterns into digests and compilation of
//!   mechanisms into storage-backed state machines
//! - [`ledger`]: transactions, blocks, gas metering, sealing, verification
//! - [`contracts`]: the usage-contract and membership-contract blueprints
//!   executed by the ledger
//! - [`provenance`]: data models, salted commitments, provenance graphs
//! - [`equiv`]: randomized conformance harness checking the compiled state
//!   machines against the reference interpreter

pub mod canon;
pub mod compiler;
pub mod contracts;
pub mod crypto;
pub mod equiv;
pub mod ledger;
pub mod policy;
pub mod provenance;
