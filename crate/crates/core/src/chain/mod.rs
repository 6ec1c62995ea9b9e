//! A simulated append-only blockchain.
//!
//! Transactions wait in a [`Mempool`] until the event loop mints a block. The
//! miner picks up to `max_txs` of them, charges gas on every included
//! transaction and dispatches contract calls to the embedded
//! [`CoordinatorState`]. A reverted call keeps its gas payment and nothing
//! else.

mod mempool;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::coordinator::{
    AssignOutcome, CallContext, CoordinatorError, CoordinatorEvent, CoordinatorParams,
    CoordinatorState, CounterpartyView, ProofOfAbsence, Receipt, ReceiptProof, RelayedRequest,
    TaskRecord,
};
use crate::ledger::{Bank, LedgerEntry, Memo, Pot};
use crate::types::{Address, Canonical, ChainId, Height, RelayerId, SimTime, Tokens, TxId};

pub use mempool::{Mempool, Ordering};

/// Contract call carried by a transaction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "call", rename_all = "snake_case")]
pub enum Payload {
    Register {
        deposit: Tokens,
    },
    Withdraw,
    Reclaim,
    Transfer {
        recipient: Address,
        amount: Tokens,
        timeout_height: Height,
        fee: Tokens,
    },
    AssignTasks {
        assignments: Vec<(TxId, RelayerId)>,
    },
    DeliverTx {
        request: RelayedRequest,
        proof_height: Height,
        header: Option<Height>,
    },
    ProveDelivery {
        proof: ReceiptProof,
        header: Option<Height>,
    },
    SubmitTimeout {
        proof: ProofOfAbsence,
        header: Option<Height>,
    },
    RelayHeader {
        height: Height,
    },
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Register,
    Withdraw,
    Reclaim,
    Transfer,
    AssignTasks,
    DeliverTx,
    ProveDelivery,
    SubmitTimeout,
    RelayHeader,
    Plain,
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Register { .. } => PayloadKind::Register,
            Payload::Withdraw => PayloadKind::Withdraw,
            Payload::Reclaim => PayloadKind::Reclaim,
            Payload::Transfer { .. } => PayloadKind::Transfer,
            Payload::AssignTasks { .. } => PayloadKind::AssignTasks,
            Payload::DeliverTx { .. } => PayloadKind::DeliverTx,
            Payload::ProveDelivery { .. } => PayloadKind::ProveDelivery,
            Payload::SubmitTimeout { .. } => PayloadKind::SubmitTimeout,
            Payload::RelayHeader { .. } => PayloadKind::RelayHeader,
            Payload::Plain => PayloadKind::Plain,
        }
    }
}

/// Fixed gas units per payload kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostTable {
    pub register: u64,
    pub withdraw: u64,
    pub reclaim: u64,
    pub transfer: u64,
    pub assign_tasks: u64,
    pub deliver_tx: u64,
    pub prove_delivery: u64,
    pub submit_timeout: u64,
    pub relay_header: u64,
    pub plain: u64,
}

impl Default for CostTable {
    fn default() -> Self {
        CostTable {
            register: 5,
            withdraw: 5,
            reclaim: 5,
            transfer: 10,
            assign_tasks: 10,
            deliver_tx: 10,
            prove_delivery: 10,
            submit_timeout: 10,
            relay_header: 5,
            plain: 1,
        }
    }
}

impl CostTable {
    pub fn units(&self, kind: PayloadKind) -> u64 {
        match kind {
            PayloadKind::Register => self.register,
            PayloadKind::Withdraw => self.withdraw,
            PayloadKind::Reclaim => self.reclaim,
            PayloadKind::Transfer => self.transfer,
            PayloadKind::AssignTasks => self.assign_tasks,
            PayloadKind::DeliverTx => self.deliver_tx,
            PayloadKind::ProveDelivery => self.prove_delivery,
            PayloadKind::SubmitTimeout => self.submit_timeout,
            PayloadKind::RelayHeader => self.relay_header,
            PayloadKind::Plain => self.plain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainTx {
    pub id: TxId,
    pub chain: ChainId,
    pub submitter: Address,
    pub nonce: u64,
    pub payload: Payload,
    pub gas_price: u64,
    pub gas_units: u64,
    pub submitted_at: SimTime,
    pub arrived_at: SimTime,
}

impl ChainTx {
    pub fn new(
        chain: ChainId,
        submitter: Address,
        nonce: u64,
        payload: Payload,
        gas_price: u64,
        costs: &CostTable,
        submitted_at: SimTime,
    ) -> Self {
        let gas_units = costs.units(payload.kind());
        let id = Self::compute_id(chain, &submitter, nonce, &payload, gas_price);
        ChainTx {
            id,
            chain,
            submitter,
            nonce,
            payload,
            gas_price,
            gas_units,
            submitted_at,
            arrived_at: submitted_at,
        }
    }

    /// Hash of the canonical serialization of the identifying fields.
    pub fn compute_id(
        chain: ChainId,
        submitter: &Address,
        nonce: u64,
        payload: &Payload,
        gas_price: u64,
    ) -> TxId {
        let body = serde_json::to_string(payload).expect("payload serializes");
        Canonical::new("xcrelay/tx")
            .u8(chain.tag())
            .str(submitter.as_str())
            .u64(nonce)
            .u64(gas_price)
            .str(&body)
            .finish()
    }

    /// The request this transaction creates or refers to, if any.
    pub fn request_hash(&self) -> Option<TxId> {
        match &self.payload {
            Payload::Transfer { .. } => Some(self.id),
            Payload::DeliverTx { request, .. } => Some(request.request_hash),
            Payload::ProveDelivery { proof, .. } => Some(proof.request_hash),
            Payload::SubmitTimeout { proof, .. } => Some(proof.request_hash),
            _ => None,
        }
    }

    pub fn gas_cost(&self) -> Tokens {
        self.gas_price.saturating_mul(self.gas_units)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum ExecResult {
    Success,
    Reverted(CoordinatorError),
}

impl ExecResult {
    pub fn is_success(&self) -> bool {
        matches!(self, ExecResult::Success)
    }

    pub fn revert_reason(&self) -> Option<CoordinatorError> {
        match self {
            ExecResult::Success => None,
            ExecResult::Reverted(e) => Some(*e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncludedTx {
    pub tx: ChainTx,
    pub result: ExecResult,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub assign_outcomes: Option<Vec<AssignOutcome>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub chain: ChainId,
    pub height: Height,
    pub id: TxId,
    pub parent: TxId,
    pub time: SimTime,
    pub txs: Vec<IncludedTx>,
}

/// Where a mined transaction ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxLocation {
    pub height: Height,
    pub index: usize,
    pub result: ExecResult,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("submitter balance {available} cannot cover gas {required}")]
    InsufficientBalance { available: Tokens, required: Tokens },
    #[error("transaction addressed to {0}")]
    WrongChain(ChainId),
    #[error("gas units {got} do not match the cost table ({expected})")]
    GasMismatch { got: u64, expected: u64 },
    #[error("transaction {0:?} already known")]
    DuplicateTx(TxId),
    #[error("height {from} beyond head {head}")]
    OutOfRange { from: Height, head: Height },
}

/// Side effects of one minted block, for the trace.
#[derive(Debug, Clone, Default)]
pub struct MintEffects {
    pub ledger: Vec<LedgerEntry>,
    pub events: Vec<(TxId, CoordinatorEvent)>,
    /// Transactions evicted because the submitter could no longer pay gas.
    pub dropped: Vec<TxId>,
}

#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub block_interval: SimTime,
    pub max_txs: usize,
    pub ordering: Ordering,
    pub costs: CostTable,
}

pub struct ChainState {
    id: ChainId,
    config: ChainConfig,
    blocks: Vec<Block>,
    mempool: Mempool,
    bank: Bank,
    coordinator: CoordinatorState,
    tx_index: BTreeMap<TxId, TxLocation>,
    miner: Address,
}

impl ChainState {
    pub const MINER: &'static str = "miner";

    /// Genesis at height 0 with the given balances.
    pub fn new(
        id: ChainId,
        config: ChainConfig,
        params: CoordinatorParams,
        balances: &BTreeMap<Address, Tokens>,
    ) -> Self {
        let mut bank = Bank::new(id);
        for (who, amount) in balances {
            bank.genesis_credit(who, *amount);
        }
        let genesis = Block {
            chain: id,
            height: 0,
            id: Canonical::new("xcrelay/genesis").u8(id.tag()).finish(),
            parent: TxId::ZERO,
            time: SimTime::ZERO,
            txs: Vec::new(),
        };
        ChainState {
            id,
            config,
            blocks: vec![genesis],
            mempool: Mempool::default(),
            bank,
            coordinator: CoordinatorState::new(id, params),
            tx_index: BTreeMap::new(),
            miner: Address::new(Self::MINER),
        }
    }

    pub fn id(&self) -> ChainId {
        self.id
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn costs(&self) -> &CostTable {
        &self.config.costs
    }

    pub fn head(&self) -> &Block {
        self.blocks.last().expect("genesis always present")
    }

    pub fn height(&self) -> Height {
        self.head().height
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn mempool(&self) -> &Mempool {
        &self.mempool
    }

    pub fn bank(&self) -> &Bank {
        &self.bank
    }

    pub fn balance(&self, who: &Address) -> Tokens {
        self.bank.balance(who)
    }

    pub fn coordinator(&self) -> &CoordinatorState {
        &self.coordinator
    }

    pub fn tx_location(&self, id: &TxId) -> Option<&TxLocation> {
        self.tx_index.get(id)
    }

    /// Genesis journal entries, drained once by the simulator.
    pub fn take_genesis_ledger(&mut self) -> Vec<LedgerEntry> {
        self.bank.drain_journal()
    }

    pub fn submit_tx(&mut self, tx: ChainTx) -> Result<TxId, ChainError> {
        if tx.chain != self.id {
            return Err(ChainError::WrongChain(tx.chain));
        }
        let expected = self.config.costs.units(tx.payload.kind());
        if tx.gas_units != expected {
            return Err(ChainError::GasMismatch {
                got: tx.gas_units,
                expected,
            });
        }
        if self.tx_index.contains_key(&tx.id) || self.mempool.contains(&tx.id) {
            return Err(ChainError::DuplicateTx(tx.id));
        }
        let available = self.bank.balance(&tx.submitter);
        if available < tx.gas_cost() {
            return Err(ChainError::InsufficientBalance {
                available,
                required: tx.gas_cost(),
            });
        }
        let id = tx.id;
        self.mempool.insert(tx);
        Ok(id)
    }

    /// Mint the next block at `time`, executing up to `max_txs` pending
    /// transactions against `counterparty` as the light-client source.
    pub fn mint_block(
        &mut self,
        time: SimTime,
        counterparty: &dyn CounterpartyView,
    ) -> MintEffects {
        let height = self.height() + 1;
        let parent = self.head().id;
        let mut effects = MintEffects::default();
        let mut included = Vec::new();

        while included.len() < self.config.max_txs {
            let Some(tx) = self.mempool.pop_best(self.config.ordering) else {
                break;
            };
            if self.bank.balance(&tx.submitter) < tx.gas_cost() {
                effects.dropped.push(tx.id);
                continue;
            }
            self.bank.set_context(height, Some(tx.id));
            self.bank
                .move_tokens(
                    Pot::Account(tx.submitter.clone()),
                    Pot::Account(self.miner.clone()),
                    tx.gas_cost(),
                    Memo::Gas,
                )
                .expect("balance checked");
            let (result, assign_outcomes) = self.execute_tx(&tx, height, time, counterparty);
            effects.events.extend(
                self.coordinator
                    .drain_events()
                    .into_iter()
                    .map(|e| (tx.id, e)),
            );
            self.tx_index.insert(
                tx.id,
                TxLocation {
                    height,
                    index: included.len(),
                    result,
                },
            );
            included.push(IncludedTx {
                tx,
                result,
                assign_outcomes,
            });
        }
        effects.ledger = self.bank.drain_journal();

        let mut c = Canonical::new("xcrelay/block");
        c.u8(self.id.tag())
            .u64(height)
            .id(&parent)
            .u64(time.micros());
        for t in &included {
            c.id(&t.tx.id);
        }
        self.blocks.push(Block {
            chain: self.id,
            height,
            id: c.finish(),
            parent,
            time,
            txs: included,
        });
        effects
    }

    /// Dispatch one payload. Gas has already been charged.
    pub fn execute_tx(
        &mut self,
        tx: &ChainTx,
        height: Height,
        time: SimTime,
        counterparty: &dyn CounterpartyView,
    ) -> (ExecResult, Option<Vec<AssignOutcome>>) {
        let ctx = CallContext {
            height,
            time,
            tx_id: tx.id,
            submitter: tx.submitter.clone(),
        };
        let coord = &mut self.coordinator;
        let bank = &mut self.bank;
        let who = &tx.submitter;
        let outcome: Result<Option<Vec<AssignOutcome>>, CoordinatorError> = match &tx.payload {
            Payload::Register { deposit } => {
                coord.register(bank, who, *deposit, height).map(|_| None)
            }
            Payload::Withdraw => coord.withdraw(who, height).map(|_| None),
            Payload::Reclaim => coord.reclaim(bank, who, height).map(|_| None),
            Payload::Transfer {
                recipient,
                amount,
                timeout_height,
                fee,
            } => coord
                .transfer(bank, &ctx, recipient, *amount, *timeout_height, *fee)
                .map(|_| None),
            Payload::AssignTasks { assignments } => {
                coord.assign_tasks(bank, &ctx, assignments).map(Some)
            }
            Payload::DeliverTx {
                request,
                proof_height,
                header,
            } => coord
                .deliver_tx(bank, &ctx, request, *proof_height, *header, counterparty)
                .map(|_| None),
            Payload::ProveDelivery { proof, header } => coord
                .prove_delivery(bank, &ctx, proof, *header, counterparty)
                .map(|_| None),
            Payload::SubmitTimeout { proof, header } => coord
                .submit_timeout(bank, &ctx, proof, *header, counterparty)
                .map(|_| None),
            Payload::RelayHeader { height: h } => {
                coord.relay_header(*h, counterparty).map(|_| None)
            }
            Payload::Plain => Ok(None),
        };
        match outcome {
            Ok(assign) => (ExecResult::Success, assign),
            Err(e) => (ExecResult::Reverted(e), None),
        }
    }

    /// Blocks `from..=head`.
    pub fn read_blocks(&self, from: Height) -> Result<&[Block], ChainError> {
        let head = self.height();
        if from > head {
            return Err(ChainError::OutOfRange { from, head });
        }
        Ok(&self.blocks[from as usize..])
    }

    /// Token conservation: accounts plus coordinator pots equal genesis
    /// supply plus mints minus burns.
    pub fn check_conservation(&self) -> Result<(), String> {
        let held = self.bank.account_total()
            + self.coordinator.escrow_total() as u128
            + self.coordinator.principal_escrow() as u128
            + self.coordinator.collateral_total();
        let expected = self.bank.genesis_supply() as u128 + self.bank.minted() as u128
            - self.bank.burned() as u128;
        if held != expected {
            return Err(format!(
                "{} at height {}: held {held} != supply {expected}",
                self.id,
                self.height()
            ));
        }
        self.coordinator
            .check_invariants()
            .map_err(|e| format!("{} at height {}: {e}", self.id, self.height()))
    }
}

impl CounterpartyView for ChainState {
    fn chain_id(&self) -> ChainId {
        self.id
    }

    fn head_height(&self) -> Height {
        self.height()
    }

    fn request(&self, request_hash: &TxId) -> Option<&TaskRecord> {
        self.coordinator.task(request_hash)
    }

    fn receipt(&self, request_hash: &TxId) -> Option<&Receipt> {
        self.coordinator.receipt(request_hash)
    }
}

#[cfg(test)]
mod tests;
