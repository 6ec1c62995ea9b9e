//! Run traces: everything a run did, one record per line.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chain::{ExecResult, PayloadKind};
use crate::coordinator::CoordinatorEvent;
use crate::ledger::LedgerEntry;
use crate::sim::SimConfig;
use crate::types::{Address, ChainId, Height, SimTime, Tokens, TxId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub name: String,
    pub group: String,
    pub strategy: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxSummary {
    pub id: TxId,
    pub submitter: Address,
    pub kind: PayloadKind,
    pub gas_price: u64,
    pub gas_units: u64,
    pub result: ExecResult,
    /// The request a transfer creates or a relay call refers to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<TxId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TraceRecord {
    Header {
        config: Box<SimConfig>,
        fingerprint: String,
        agents: Vec<AgentInfo>,
        users: Vec<Address>,
    },
    Ledger {
        entry: LedgerEntry,
    },
    Event {
        chain: ChainId,
        height: Height,
        time: SimTime,
        tx: TxId,
        event: CoordinatorEvent,
    },
    Block {
        chain: ChainId,
        height: Height,
        time: SimTime,
        id: TxId,
        txs: Vec<TxSummary>,
    },
    /// An agent or user handed a transaction to the network.
    Action {
        time: SimTime,
        actor: Address,
        chain: ChainId,
        tx: TxId,
        kind: PayloadKind,
        submit_at: SimTime,
        arrive_at: SimTime,
    },
    /// The destination mempool refused a transaction on arrival.
    Rejected {
        time: SimTime,
        chain: ChainId,
        tx: TxId,
        submitter: Address,
        reason: String,
    },
    /// The miner evicted a transaction its submitter could no longer pay for.
    Dropped {
        time: SimTime,
        chain: ChainId,
        tx: TxId,
    },
    End {
        time: SimTime,
        heights: BTreeMap<ChainId, Height>,
        balances: BTreeMap<ChainId, BTreeMap<Address, Tokens>>,
        violations: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed trace: {0}")]
pub struct MalformedTrace(pub String);

impl RunTrace {
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<RunTrace, MalformedTrace> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| MalformedTrace(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<_, _>>()?;
        Ok(RunTrace { records })
    }

    pub fn header(&self) -> Result<(&SimConfig, &[AgentInfo], &[Address]), MalformedTrace> {
        match self.records.first() {
            Some(TraceRecord::Header {
                config,
                agents,
                users,
                ..
            }) => Ok((config, agents, users)),
            _ => Err(MalformedTrace("first record is not a header".into())),
        }
    }

    pub fn config(&self) -> Result<&SimConfig, MalformedTrace> {
        self.header().map(|h| h.0)
    }

    pub fn end(&self) -> Result<&TraceRecord, MalformedTrace> {
        match self.records.last() {
            Some(r @ TraceRecord::End { .. }) => Ok(r),
            _ => Err(MalformedTrace("last record is not an end marker".into())),
        }
    }

    pub fn violations(&self) -> &[String] {
        match self.records.last() {
            Some(TraceRecord::End { violations, .. }) => violations,
            _ => &[],
        }
    }

    pub fn ledger(&self) -> impl Iterator<Item = &LedgerEntry> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Ledger { entry } => Some(entry),
            _ => None,
        })
    }

    /// Coordinator events with where and when they happened.
    pub fn events(&self) -> impl Iterator<Item = (ChainId, Height, SimTime, &CoordinatorEvent)> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Event {
                chain,
                height,
                time,
                event,
                ..
            } => Some((*chain, *height, *time, event)),
            _ => None,
        })
    }

    pub fn blocks(&self) -> impl Iterator<Item = (ChainId, Height, SimTime, &[TxSummary])> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Block {
                chain,
                height,
                time,
                txs,
                ..
            } => Some((*chain, *height, *time, txs.as_slice())),
            _ => None,
        })
    }

    pub fn included_txs(&self) -> impl Iterator<Item = (ChainId, Height, SimTime, &TxSummary)> {
        self.blocks()
            .flat_map(|(c, h, t, txs)| txs.iter().map(move |tx| (c, h, t, tx)))
    }
}
