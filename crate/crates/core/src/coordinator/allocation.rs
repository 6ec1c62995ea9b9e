//! Modulo-hash task allocation.
//!
//! The request hash is hashed once more with SHA-256, the digest is read as an
//! unsigned big-endian integer and reduced modulo the size of the ordered
//! relayer set. The result indexes the set.

use sha2::{Digest, Sha256};

use super::CoordinatorError;
use crate::types::{RelayerId, TxId};

pub fn allocation_digest(request_hash: &TxId) -> [u8; 32] {
    Sha256::digest(request_hash.as_bytes()).into()
}

/// `H(request_hash) mod m`. Panics if `m == 0`.
pub fn allocation_index(request_hash: &TxId, m: usize) -> usize {
    assert!(m > 0, "modulus must be positive");
    let m = m as u128;
    let rem = allocation_digest(request_hash)
        .iter()
        .fold(0u128, |acc, &b| ((acc << 8) | b as u128) % m);
    rem as usize
}

/// The relayer in `relayers` responsible for `request_hash`.
pub fn allocate(
    request_hash: &TxId,
    relayers: &[RelayerId],
) -> Result<RelayerId, CoordinatorError> {
    if relayers.is_empty() {
        return Err(CoordinatorError::EmptyRelayerSet);
    }
    Ok(relayers[allocation_index(request_hash, relayers.len())])
}

/// `redundancy` consecutive relayers starting at the allocated index, wrapping
/// around. Redundancy is clamped to the set size.
pub fn assignees(
    request_hash: &TxId,
    relayers: &[RelayerId],
    redundancy: usize,
) -> Result<Vec<RelayerId>, CoordinatorError> {
    if relayers.is_empty() {
        return Err(CoordinatorError::EmptyRelayerSet);
    }
    let m = relayers.len();
    let start = allocation_index(request_hash, m);
    let r = redundancy.clamp(1, m);
    Ok((0..r).map(|k| relayers[(start + k) % m]).collect())
}
