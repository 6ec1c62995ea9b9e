use std::cmp::Reverse;
use std::collections::{BTreeMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::ChainTx;
use crate::types::{Address, SimTime, TxId};

/// How the miner orders pending transactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ordering {
    /// Highest gas price first; ties by submission time, submitter, tx id.
    #[default]
    FeePriority,
    /// Arrival order, as in a first-in first-out mempool.
    Fifo,
}

#[derive(Debug, Clone)]
struct Pending {
    seq: u64,
    tx: ChainTx,
}

/// Pending transactions, queued per submitter in arrival order. Only the
/// head of each queue is ever eligible, which keeps each submitter's
/// transactions in submission order.
#[derive(Debug, Clone, Default)]
pub struct Mempool {
    queues: BTreeMap<Address, VecDeque<Pending>>,
    next_seq: u64,
    ids: HashSet<TxId>,
}

type FeeKey = (Reverse<u64>, SimTime, Address, TxId);

impl Mempool {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &TxId) -> bool {
        self.ids.contains(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ChainTx> {
        self.queues.values().flat_map(|q| q.iter().map(|p| &p.tx))
    }

    pub fn insert(&mut self, tx: ChainTx) {
        self.ids.insert(tx.id);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queues
            .entry(tx.submitter.clone())
            .or_default()
            .push_back(Pending { seq, tx });
    }

    /// Pop the best eligible transaction under `ordering`.
    pub fn pop_best(&mut self, ordering: Ordering) -> Option<ChainTx> {
        let submitter = match ordering {
            Ordering::FeePriority => self
                .queues
                .iter()
                .filter_map(|(who, q)| q.front().map(|p| (fee_key(&p.tx), who)))
                .min_by(|a, b| a.0.cmp(&b.0))
                .map(|(_, who)| who.clone()),
            Ordering::Fifo => self
                .queues
                .iter()
                .filter_map(|(who, q)| q.front().map(|p| ((p.tx.arrived_at, p.seq), who)))
                .min_by(|a, b| a.0.cmp(&b.0))
                .map(|(_, who)| who.clone()),
        }?;
        let queue = self.queues.get_mut(&submitter).expect("chosen above");
        let tx = queue.pop_front().expect("non-empty").tx;
        if queue.is_empty() {
            self.queues.remove(&submitter);
        }
        self.ids.remove(&tx.id);
        Some(tx)
    }
}

fn fee_key(tx: &ChainTx) -> FeeKey {
    (
        Reverse(tx.gas_price),
        tx.submitted_at,
        tx.submitter.clone(),
        tx.id,
    )
}
