//! On-chain coordinator contract.
//!
//! One instance is embedded in each chain. On the source side it tracks
//! relayer membership and collateral, creates and allocates delivery tasks,
//! accepts acknowledgements and timeout reports and pays or slashes
//! accordingly. On the destination side it executes incoming deliveries and
//! records receipts. Cross-chain facts are checked through a light-client view
//! of the counterparty, advanced by headers that relayers append to their
//! messages.
//!
//! Every operation validates all of its preconditions before touching state,
//! so a returned error means nothing changed.

mod allocation;
mod membership;
mod tasks;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::types::{Address, ChainId, Height, RelayerId, Share, SimTime, Tokens, TxId};

pub use allocation::{allocate, allocation_digest, allocation_index, assignees};

/// Reasons a coordinator call reverts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, thiserror::Error)]
pub enum CoordinatorError {
    #[error("deposit below the required collateral")]
    InsufficientCollateral,
    #[error("public key already registered")]
    AlreadyRegistered,
    #[error("public key is not an active relayer")]
    NotRegistered,
    #[error("unbonding period has not ended")]
    StillUnbonding,
    #[error("relayer is not unbonding")]
    NotUnbonding,
    #[error("no eligible relayers")]
    EmptyRelayerSet,
    #[error("insufficient balance")]
    InsufficientBalance,
    #[error("timeout height is not in the future of the destination head")]
    InvalidTimeout,
    #[error("zero amount")]
    ZeroAmount,
    #[error("unknown task")]
    UnknownTask,
    #[error("task already assigned")]
    AlreadyAssigned,
    #[error("allocation does not match the relayer set")]
    WrongAllocation,
    #[error("operation not available in this allocation mode")]
    WrongMode,
    #[error("empty assignment list")]
    EmptyAssignment,
    #[error("request already delivered")]
    DuplicateDelivery,
    #[error("request not found in the relayed source history")]
    UnknownRequest,
    #[error("delivery after timeout height")]
    PastTimeout,
    #[error("receipt does not verify")]
    InvalidReceipt,
    #[error("task already acknowledged")]
    AlreadyAcked,
    #[error("task already timed out")]
    TaskTimedOut,
    #[error("task has no assigned relayer yet")]
    TaskUnassigned,
    #[error("proof of absence does not verify")]
    InvalidProof,
    #[error("destination holds a receipt for this request")]
    NotTimedOut,
    #[error("task already resolved")]
    AlreadyResolved,
    #[error("header height below the current light-client head")]
    StaleHeader,
    #[error("header beyond the counterparty's real head")]
    InvalidHeader,
    #[error("referenced height not yet relayed")]
    HeaderNotRelayed,
}

/// How tasks are mapped to relayers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AllocationMode {
    /// Uncoordinated baseline: no allocation, the first successful deliverer
    /// earns the fee.
    Competitive,
    /// Allocate inside `transfer` using the hash of the invoking transaction.
    #[default]
    Approach1,
    /// Tasks start unassigned; anyone submits the allocation via
    /// `assign_tasks` and the contract re-checks it.
    Approach2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordinatorParams {
    pub mode: AllocationMode,
    pub collateral_required: Tokens,
    /// A relayer whose collateral is at or below this value stops receiving
    /// tasks and is moved to unbonding at the next allocation.
    pub collateral_floor: Tokens,
    pub slash_per_timeout: Tokens,
    pub reporter_share: Share,
    pub user_refund_share: Share,
    /// Extra blocks beyond the latest pending timeout before collateral can
    /// be reclaimed. Must be at least 1.
    pub unbonding_margin: Height,
    /// Relayers assigned per task.
    pub redundancy: usize,
    /// Minted to the submitter of a fully correct `assign_tasks` call.
    pub allocator_reward: Tokens,
    /// Fees below this are accepted but flagged.
    pub min_profitable_fee: Tokens,
}

impl Default for CoordinatorParams {
    fn default() -> Self {
        CoordinatorParams {
            mode: AllocationMode::Approach1,
            collateral_required: 100,
            collateral_floor: 20,
            slash_per_timeout: 10,
            reporter_share: Share::from_bps(5_000),
            user_refund_share: Share::from_bps(4_000),
            unbonding_margin: 5,
            redundancy: 1,
            allocator_reward: 2,
            min_profitable_fee: 20,
        }
    }
}

impl CoordinatorParams {
    /// Field-level problems, empty when valid.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.reporter_share.bps() + self.user_refund_share.bps() > Share::SCALE {
            out.push((
                "reporter_share",
                "reporter_share + user_refund_share must not exceed 1".to_string(),
            ));
        }
        if self.redundancy == 0 {
            out.push(("redundancy", "must be at least 1".to_string()));
        }
        if self.unbonding_margin == 0 {
            out.push((
                "unbonding_margin",
                "must be at least 1 so unbonding ends strictly after every timeout".to_string(),
            ));
        }
        if self.collateral_required == 0 {
            out.push(("collateral_required", "must be positive".to_string()));
        }
        if self.collateral_floor >= self.collateral_required {
            out.push((
                "collateral_floor",
                "must be below collateral_required or new relayers are never eligible".to_string(),
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelayerStatus {
    Active,
    Unbonding {
        end_height: Height,
    },
    /// Collateral reclaimed. The id stays reserved.
    Retired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayerRecord {
    pub pubkey: Address,
    pub id: RelayerId,
    pub collateral: Tokens,
    pub status: RelayerStatus,
    pub registered_at: Height,
    pub slashed_total: Tokens,
}

/// Transfer details carried by a request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransferDetails {
    pub sender: Address,
    pub recipient: Address,
    pub amount: Tokens,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskPhase {
    Requested,
    Delivered { receipt: TxId },
    Acked,
    TimedOut,
}

impl TaskPhase {
    /// The only edges of the phase machine.
    pub fn can_transition_to(&self, next: &TaskPhase) -> bool {
        matches!(
            (self, next),
            (TaskPhase::Requested, TaskPhase::Delivered { .. })
                | (TaskPhase::Delivered { .. }, TaskPhase::Acked)
                | (TaskPhase::Requested, TaskPhase::TimedOut)
        )
    }

    /// Open phases keep their fee in escrow.
    pub fn is_open(&self) -> bool {
        matches!(self, TaskPhase::Requested | TaskPhase::Delivered { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub request_hash: TxId,
    /// Creation order on this coordinator.
    pub seq: u64,
    /// Empty while unassigned (Approach 2 before `assign_tasks`, and always in
    /// competitive mode). The first entry is the primary assignee.
    pub assigned: Vec<RelayerId>,
    pub timeout_height: Height,
    pub fee: Tokens,
    pub origin_user: Address,
    pub phase: TaskPhase,
    pub payload: TransferDetails,
    pub created_height: Height,
    pub created_at: SimTime,
    pub fee_adequate: bool,
}

impl TaskRecord {
    pub fn is_assigned_to(&self, id: RelayerId) -> bool {
        self.assigned.contains(&id)
    }
}

/// Destination-side record of an executed delivery.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub request_hash: TxId,
    pub receipt_hash: TxId,
    pub deliverer: Address,
    pub height: Height,
    pub time: SimTime,
}

/// Request data a relayer carries from the source to the destination.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelayedRequest {
    pub request_hash: TxId,
    pub payload: TransferDetails,
    pub timeout_height: Height,
}

impl RelayedRequest {
    pub fn from_task(task: &TaskRecord) -> Self {
        RelayedRequest {
            request_hash: task.request_hash,
            payload: task.payload.clone(),
            timeout_height: task.timeout_height,
        }
    }
}

/// Receipt reference carried back to the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReceiptProof {
    pub request_hash: TxId,
    pub receipt_hash: TxId,
    /// Destination height at which the receipt is claimed visible.
    pub dest_height: Height,
}

/// Claim that `request_hash` has no receipt on the destination at any height
/// up to `attested_dest_height`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProofOfAbsence {
    pub request_hash: TxId,
    pub timeout_height: Height,
    pub attested_dest_height: Height,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlashRecord {
    pub relayer: RelayerId,
    pub amount: Tokens,
    pub reporter_cut: Tokens,
    pub user_cut: Tokens,
    pub burned: Tokens,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlashOutcome {
    pub request_hash: TxId,
    pub slashes: Vec<SlashRecord>,
    pub principal_refund: Tokens,
    pub fee_refund: Tokens,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub request_hash: TxId,
    pub payee: Address,
    pub fee: Tokens,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignOutcome {
    Accepted,
    Reverted(CoordinatorError),
}

/// State changes worth recording in a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum CoordinatorEvent {
    RelayerRegistered {
        id: RelayerId,
        pubkey: Address,
        collateral: Tokens,
    },
    RelayerUnbonding {
        id: RelayerId,
        end_height: Height,
        max_pending_timeout: Option<Height>,
        automatic: bool,
    },
    RelayerReclaimed {
        id: RelayerId,
        amount: Tokens,
    },
    TaskCreated {
        request: TxId,
        origin: Address,
        assigned: Vec<RelayerId>,
        timeout_height: Height,
        fee: Tokens,
        amount: Tokens,
        fee_adequate: bool,
    },
    TaskAssigned {
        request: TxId,
        assigned: Vec<RelayerId>,
        allocator: Address,
    },
    AllocatorRewarded {
        allocator: Address,
        amount: Tokens,
    },
    TaskDelivered {
        request: TxId,
        receipt: TxId,
        deliverer: Address,
    },
    PhaseChanged {
        request: TxId,
        from: TaskPhase,
        to: TaskPhase,
    },
    TaskAcked {
        request: TxId,
        payee: Address,
        fee: Tokens,
        prover: Address,
    },
    TaskTimedOut {
        request: TxId,
        reporter: Address,
        slashes: Vec<SlashRecord>,
    },
    HeaderRelayed {
        counterparty_height: Height,
    },
}

/// Read access to the counterparty chain, standing in for a light client.
pub trait CounterpartyView {
    fn chain_id(&self) -> ChainId;
    /// The counterparty's real head; appended headers above it are forged.
    fn head_height(&self) -> Height;
    /// A request recorded by the counterparty's coordinator.
    fn request(&self, request_hash: &TxId) -> Option<&TaskRecord>;
    /// A delivery receipt recorded by the counterparty's coordinator.
    fn receipt(&self, request_hash: &TxId) -> Option<&Receipt>;
}

/// Execution context of the enclosing transaction.
#[derive(Debug, Clone)]
pub struct CallContext {
    pub height: Height,
    pub time: SimTime,
    pub tx_id: TxId,
    pub submitter: Address,
}

#[derive(Debug, Clone)]
pub struct CoordinatorState {
    chain: ChainId,
    params: CoordinatorParams,
    records: BTreeMap<RelayerId, RelayerRecord>,
    /// pubkey -> live (non-retired) record.
    by_pubkey: BTreeMap<Address, RelayerId>,
    /// The active set R, ordered by id.
    active: BTreeSet<RelayerId>,
    next_id: u64,
    tasks: BTreeMap<TxId, TaskRecord>,
    /// Open tasks in creation order.
    open: BTreeMap<u64, TxId>,
    next_seq: u64,
    receipts: BTreeMap<TxId, Receipt>,
    escrow_total: Tokens,
    principal_escrow: Tokens,
    counterparty_head: Height,
    events: Vec<CoordinatorEvent>,
}

impl CoordinatorState {
    pub fn new(chain: ChainId, params: CoordinatorParams) -> Self {
        CoordinatorState {
            chain,
            params,
            records: BTreeMap::new(),
            by_pubkey: BTreeMap::new(),
            active: BTreeSet::new(),
            next_id: 0,
            tasks: BTreeMap::new(),
            open: BTreeMap::new(),
            next_seq: 0,
            receipts: BTreeMap::new(),
            escrow_total: 0,
            principal_escrow: 0,
            counterparty_head: 0,
            events: Vec::new(),
        }
    }

    pub fn chain(&self) -> ChainId {
        self.chain
    }

    pub fn params(&self) -> &CoordinatorParams {
        &self.params
    }

    /// R, ascending by id.
    pub fn active_set(&self) -> Vec<RelayerId> {
        self.active.iter().copied().collect()
    }

    /// Active relayers still above the collateral floor; the set allocation
    /// indexes into.
    pub fn eligible_set(&self) -> Vec<RelayerId> {
        self.active
            .iter()
            .copied()
            .filter(|id| self.records[id].collateral > self.params.collateral_floor)
            .collect()
    }

    pub fn record(&self, id: RelayerId) -> Option<&RelayerRecord> {
        self.records.get(&id)
    }

    pub fn records(&self) -> impl Iterator<Item = &RelayerRecord> {
        self.records.values()
    }

    /// The live (active or unbonding) record for a public key.
    pub fn record_by_pubkey(&self, pubkey: &Address) -> Option<&RelayerRecord> {
        self.by_pubkey.get(pubkey).map(|id| &self.records[id])
    }

    pub fn task(&self, request_hash: &TxId) -> Option<&TaskRecord> {
        self.tasks.get(request_hash)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskRecord> {
        self.tasks.values()
    }

    /// Requested or delivered tasks, oldest first.
    pub fn open_tasks(&self) -> impl Iterator<Item = &TaskRecord> {
        self.open.values().map(|h| &self.tasks[h])
    }

    pub fn receipt(&self, request_hash: &TxId) -> Option<&Receipt> {
        self.receipts.get(request_hash)
    }

    pub fn receipts(&self) -> impl Iterator<Item = &Receipt> {
        self.receipts.values()
    }

    pub fn escrow_total(&self) -> Tokens {
        self.escrow_total
    }

    pub fn principal_escrow(&self) -> Tokens {
        self.principal_escrow
    }

    pub fn collateral_total(&self) -> u128 {
        self.records.values().map(|r| r.collateral as u128).sum()
    }

    /// Highest counterparty height verified by the light client.
    pub fn counterparty_head(&self) -> Height {
        self.counterparty_head
    }

    pub fn drain_events(&mut self) -> Vec<CoordinatorEvent> {
        std::mem::take(&mut self.events)
    }

    /// Structural invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let active_records = self
            .records
            .values()
            .filter(|r| r.status == RelayerStatus::Active)
            .count();
        if active_records != self.active.len() {
            return Err(format!(
                "|R| = {} but {} records are active",
                self.active.len(),
                active_records
            ));
        }
        let (fees, principal) = self
            .tasks
            .values()
            .filter(|t| t.phase.is_open())
            .fold((0u128, 0u128), |(f, p), t| {
                (f + t.fee as u128, p + t.payload.amount as u128)
            });
        if fees != self.escrow_total as u128 {
            return Err(format!(
                "escrow_total {} != open task fees {fees}",
                self.escrow_total
            ));
        }
        if principal != self.principal_escrow as u128 {
            return Err(format!(
                "principal escrow {} != open task amounts {principal}",
                self.principal_escrow
            ));
        }
        if self.open.len() != self.tasks.values().filter(|t| t.phase.is_open()).count() {
            return Err("open-task index out of sync".to_string());
        }
        Ok(())
    }

    pub(crate) fn counterparty_head_after(
        &self,
        header: Option<Height>,
        counterparty: &dyn CounterpartyView,
    ) -> Result<Height, CoordinatorError> {
        match header {
            None => Ok(self.counterparty_head),
            Some(h) if h > counterparty.head_height() => Err(CoordinatorError::InvalidHeader),
            Some(h) => Ok(h.max(self.counterparty_head)),
        }
    }

    pub(crate) fn advance_head(&mut self, head: Height) {
        if head > self.counterparty_head {
            self.counterparty_head = head;
            self.events.push(CoordinatorEvent::HeaderRelayed {
                counterparty_height: head,
            });
        }
    }

    /// Standalone header relay. Equal heights are accepted as a no-op.
    pub fn relay_header(
        &mut self,
        counterparty_height: Height,
        counterparty: &dyn CounterpartyView,
    ) -> Result<Height, CoordinatorError> {
        if counterparty_height < self.counterparty_head {
            return Err(CoordinatorError::StaleHeader);
        }
        let head = self.counterparty_head_after(Some(counterparty_height), counterparty)?;
        self.advance_head(head);
        Ok(self.counterparty_head)
    }

    fn set_phase(&mut self, request: &TxId, to: TaskPhase) {
        let task = self.tasks.get_mut(request).expect("caller checked");
        let from = task.phase;
        assert!(
            from.can_transition_to(&to),
            "illegal phase transition {from:?} -> {to:?}"
        );
        task.phase = to;
        if !to.is_open() {
            self.open.remove(&task.seq);
        }
        self.events.push(CoordinatorEvent::PhaseChanged {
            request: *request,
            from,
            to,
        });
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_machine_edges() {
        let r = TaskPhase::Requested;
        let d = TaskPhase::Delivered {
            receipt: TxId::ZERO,
        };
        let all = [r, d, TaskPhase::Acked, TaskPhase::TimedOut];
        let mut allowed = Vec::new();
        for a in &all {
            for b in &all {
                if a.can_transition_to(b) {
                    allowed.push((*a, *b));
                }
            }
        }
        assert_eq!(
            allowed,
            vec![(r, d), (r, TaskPhase::TimedOut), (d, TaskPhase::Acked)]
        );
    }

    #[test]
    fn default_params_are_valid() {
        assert!(CoordinatorParams::default().problems().is_empty());
        let bad = CoordinatorParams {
            reporter_share: Share::from_bps(6_000),
            user_refund_share: Share::from_bps(5_000),
            unbonding_margin: 0,
            ..Default::default()
        };
        let fields: Vec<_> = bad.problems().into_iter().map(|(f, _)| f).collect();
        assert_eq!(fields, vec!["reporter_share", "unbonding_margin"]);
    }

    #[test]
    fn relay_header_is_monotone() {
        let src = CoordinatorState::new(ChainId::A, CoordinatorParams::default());
        let mut dst = CoordinatorState::new(ChainId::B, CoordinatorParams::default());
        let view = testutil::View {
            coord: &src,
            head: 20,
        };
        assert_eq!(dst.relay_header(10, &view), Ok(10));
        assert_eq!(dst.relay_header(12, &view), Ok(12));
        assert_eq!(dst.relay_header(12, &view), Ok(12));
        assert_eq!(
            dst.relay_header(9, &view),
            Err(CoordinatorError::StaleHeader)
        );
        assert_eq!(
            dst.relay_header(21, &view),
            Err(CoordinatorError::InvalidHeader)
        );
        assert_eq!(dst.counterparty_head(), 12);
    }
}
