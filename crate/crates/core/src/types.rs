//! Primitive domain types shared by every module.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// Block index on one chain. Genesis is height 0.
pub type Height = u64;

/// Token amounts. All accounting is integral.
pub type Tokens = u64;

/// Which of the two simulated chains an item lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChainId {
    #[serde(rename = "A")]
    A,
    #[serde(rename = "B")]
    B,
}

impl ChainId {
    pub fn counterparty(self) -> ChainId {
        match self {
            ChainId::A => ChainId::B,
            ChainId::B => ChainId::A,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            ChainId::A => b'A',
            ChainId::B => b'B',
        }
    }
}

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainId::A => f.write_str("Chain_A"),
            ChainId::B => f.write_str("Chain_B"),
        }
    }
}

/// Account identifier; stands in for a public key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub String);

impl Address {
    pub fn new(name: impl Into<String>) -> Self {
        Address(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Address {
    fn from(s: &str) -> Self {
        Address(s.to_string())
    }
}

/// 256-bit digest used for transaction ids, request hashes, receipts and blocks.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TxId(pub [u8; 32]);

impl TxId {
    pub const ZERO: TxId = TxId([0u8; 32]);

    pub fn digest(bytes: &[u8]) -> TxId {
        TxId(Sha256::digest(bytes).into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TxId({})", self.short())
    }
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for TxId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for TxId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("expected 32-byte hex digest"))?;
        Ok(TxId(arr))
    }
}

/// Identifier handed out by a coordinator at registration. Never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelayerId(pub u64);

impl fmt::Display for RelayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Simulation time in integer microseconds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MICROS_PER_SEC: u64 = 1_000_000;

    pub fn from_secs_f64(secs: f64) -> SimTime {
        SimTime((secs * Self::MICROS_PER_SEC as f64).round() as u64)
    }

    pub fn from_secs(secs: u64) -> SimTime {
        SimTime(secs * Self::MICROS_PER_SEC)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / Self::MICROS_PER_SEC as f64
    }

    pub fn micros(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}

/// A fraction in basis points (0..=10_000). Written in config files as a
/// decimal fraction such as `0.5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Share(u32);

impl Share {
    pub const SCALE: u32 = 10_000;
    pub const ZERO: Share = Share(0);
    pub const ONE: Share = Share(Self::SCALE);

    pub fn from_bps(bps: u32) -> Share {
        Share(bps)
    }

    pub fn from_fraction(f: f64) -> Share {
        Share((f * Self::SCALE as f64).round().clamp(0.0, u32::MAX as f64) as u32)
    }

    pub fn bps(self) -> u32 {
        self.0
    }

    pub fn as_fraction(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }

    /// `floor(amount * self)`, exact in integer arithmetic.
    pub fn of(self, amount: Tokens) -> Tokens {
        ((amount as u128 * self.0 as u128) / Self::SCALE as u128) as Tokens
    }
}

impl Serialize for Share {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_fraction())
    }
}

impl<'de> Deserialize<'de> for Share {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let f = f64::deserialize(d)?;
        if !(0.0..=1.0).contains(&f) {
            return Err(serde::de::Error::custom(format!(
                "share {f} outside [0, 1]"
            )));
        }
        Ok(Share::from_fraction(f))
    }
}

/// Incremental canonical encoder for hashing. Length-prefixes variable data so
/// distinct field sequences never collide.
#[derive(Default)]
pub(crate) struct Canonical(Vec<u8>);

impl Canonical {
    pub fn new(domain: &str) -> Self {
        let mut c = Canonical(Vec::with_capacity(128));
        c.str(domain);
        c
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.0.push(v);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
        self
    }

    pub fn id(&mut self, id: &TxId) -> &mut Self {
        self.0.extend_from_slice(&id.0);
        self
    }

    pub fn finish(&self) -> TxId {
        TxId::digest(&self.0)
    }
}
