//! Deterministic simulator and protocol kernel for cross-chain message
//! relaying.
//!
//! Two simulated chains are connected by relayer agents. Each chain embeds a
//! coordinator contract that can run either the uncoordinated baseline, where
//! relayers race to deliver the same messages, or coordinated allocation,
//! where every request is mapped to one registered relayer by modulo hashing
//! and the protocol rewards, slashes and unbonds accordingly.

pub mod chain;
pub mod coordinator;
pub mod ledger;
pub mod metrics;
pub mod presets;
pub mod relayer;
pub mod sim;
pub mod trace;
pub mod types;

pub use types::{Address, ChainId, Height, RelayerId, Share, SimTime, Tokens, TxId};
