//! Relayer agents.
//!
//! An agent is stepped once per tick by the event loop. It reads only mined
//! chain state, decides what to submit and when, and records what it has
//! already attempted so it never re-sends the same work. Delivery work is
//! modelled as a scan cycle: every task processed costs `scan_latency`, the
//! whole batch is submitted when the cycle ends, and the agent stays busy
//! until then. Proofs, reports and membership calls are not scan work and go
//! out immediately.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::chain::{ChainState, CostTable, Payload};
use crate::coordinator::{
    ProofOfAbsence, ReceiptProof, RelayedRequest, RelayerStatus, TaskPhase, TaskRecord,
};
use crate::types::{Address, ChainId, Height, RelayerId, SimTime, TxId};

/// Behavioural policy of an agent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StrategyKind {
    /// Deliver every pending task at the default gas price.
    CompetitiveDefault,
    /// Like the default, paying `premium` extra per gas unit on deliveries.
    CompetitiveOverbid { premium: u64 },
    /// Process at most `batch` tasks per scan cycle.
    CompetitiveSubsetFirst { batch: usize },
    /// Registers and serves only its own allocated tasks.
    Coordinated,
    /// Unregistered; races the assignees of freshly requested tasks.
    TaskThief,
    /// Registers and delivers its tasks but never acknowledges them.
    Abandoner,
    /// Registers, withdraws as soon as it holds a task, never delivers and
    /// reclaims collateral at the earliest opportunity.
    SilentAfterWithdraw,
    /// Watches for expired tasks and reports them with a proof of absence.
    TimeoutReporter,
}

impl StrategyKind {
    pub fn registers(&self) -> bool {
        matches!(
            self,
            StrategyKind::Coordinated | StrategyKind::Abandoner | StrategyKind::SilentAfterWithdraw
        )
    }

    pub fn is_competitive(&self) -> bool {
        matches!(
            self,
            StrategyKind::CompetitiveDefault
                | StrategyKind::CompetitiveOverbid { .. }
                | StrategyKind::CompetitiveSubsetFirst { .. }
        )
    }

    pub fn label(&self) -> &'static str {
        match self {
            StrategyKind::CompetitiveDefault => "competitive-default",
            StrategyKind::CompetitiveOverbid { .. } => "competitive-overbid",
            StrategyKind::CompetitiveSubsetFirst { .. } => "competitive-subset-first",
            StrategyKind::Coordinated => "coordinated",
            StrategyKind::TaskThief => "task-thief",
            StrategyKind::Abandoner => "abandoner",
            StrategyKind::SilentAfterWithdraw => "silent-after-withdraw",
            StrategyKind::TimeoutReporter => "timeout-reporter",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentStrategy {
    pub variant: StrategyKind,
    /// Time to read and process one pending task.
    pub scan_latency: SimTime,
    /// Base gas price per unit.
    pub gas_price: u64,
    /// Optional cap on tasks processed in one scan cycle.
    pub max_tasks_per_scan: Option<usize>,
}

impl AgentStrategy {
    pub fn new(variant: StrategyKind, scan_latency: SimTime) -> Self {
        AgentStrategy {
            variant,
            scan_latency,
            gas_price: 1,
            max_tasks_per_scan: None,
        }
    }

    pub fn delivery_price(&self) -> u64 {
        match self.variant {
            StrategyKind::CompetitiveOverbid { premium } => self.gas_price + premium,
            _ => self.gas_price,
        }
    }

    fn batch_cap(&self) -> usize {
        let cap = self.max_tasks_per_scan.unwrap_or(usize::MAX);
        match self.variant {
            StrategyKind::CompetitiveSubsetFirst { batch } => cap.min(batch.max(1)),
            _ => cap,
        }
    }
}

/// Expected profit of serving `task` end to end: fee minus delivery gas at
/// the strategy's delivery price minus acknowledgement gas at its base price.
pub fn estimate_profit(strategy: &AgentStrategy, task: &TaskRecord, costs: &CostTable) -> i128 {
    task.fee as i128
        - strategy.delivery_price() as i128 * costs.deliver_tx as i128
        - strategy.gas_price as i128 * costs.prove_delivery as i128
}

/// A transaction an agent wants sent, and when it leaves the agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedTx {
    pub chain: ChainId,
    pub payload: Payload,
    pub gas_price: u64,
    pub submit_at: SimTime,
}

/// What an agent can see: mined state of both chains.
pub struct Observation<'a> {
    pub source: &'a ChainState,
    pub dest: &'a ChainState,
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub name: String,
    pub address: Address,
    pub registered_as: Option<RelayerId>,
    pub known_head: [Height; 2],
    pub busy_until: SimTime,
    attempted: BTreeSet<TxId>,
    awaiting_receipt: BTreeSet<TxId>,
    proved: BTreeSet<TxId>,
    reported: BTreeSet<TxId>,
    register_sent: bool,
    withdraw_sent: bool,
    reclaim_attempt: Option<(Height, Option<TxId>)>,
}

impl AgentState {
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        AgentState {
            address: Address::new(name.clone()),
            name,
            registered_as: None,
            known_head: [0, 0],
            busy_until: SimTime::ZERO,
            attempted: BTreeSet::new(),
            awaiting_receipt: BTreeSet::new(),
            proved: BTreeSet::new(),
            reported: BTreeSet::new(),
            register_sent: false,
            withdraw_sent: false,
            reclaim_attempt: None,
        }
    }

    pub fn is_idle(&self, now: SimTime) -> bool {
        self.busy_until <= now
    }

    /// Called by the event loop with the id of every reclaim it sent, so the
    /// agent can tell whether its last attempt failed.
    pub fn note_reclaim_tx(&mut self, id: TxId) {
        if let Some((h, _)) = self.reclaim_attempt {
            self.reclaim_attempt = Some((h, Some(id)));
        }
    }
}

/// Decide this tick's submissions. Returns nothing while busy.
pub fn step(
    agent: &mut AgentState,
    strategy: &AgentStrategy,
    obs: &Observation<'_>,
    now: SimTime,
) -> Vec<PlannedTx> {
    agent.known_head = [obs.source.height(), obs.dest.height()];
    if !agent.is_idle(now) {
        return Vec::new();
    }
    let mut out = Vec::new();

    if strategy.variant.registers() {
        match obs.source.coordinator().record_by_pubkey(&agent.address) {
            Some(rec) => agent.registered_as = Some(rec.id),
            None if !agent.register_sent => {
                agent.register_sent = true;
                out.push(PlannedTx {
                    chain: obs.source.id(),
                    payload: Payload::Register {
                        deposit: obs.source.coordinator().params().collateral_required,
                    },
                    gas_price: strategy.gas_price,
                    submit_at: now,
                });
                return out;
            }
            None => {}
        }
    }

    match &strategy.variant {
        StrategyKind::CompetitiveDefault
        | StrategyKind::CompetitiveOverbid { .. }
        | StrategyKind::CompetitiveSubsetFirst { .. } => {
            prove_own_deliveries(agent, strategy, obs, now, &mut out);
            deliver_batch(agent, strategy, obs, now, &mut out, |_| true);
        }
        StrategyKind::Coordinated => {
            if let Some(me) = agent.registered_as {
                prove_assigned(agent, strategy, obs, now, me, &mut out);
                deliver_batch(agent, strategy, obs, now, &mut out, |t| {
                    t.is_assigned_to(me)
                });
            }
        }
        StrategyKind::Abandoner => {
            if let Some(me) = agent.registered_as {
                deliver_batch(agent, strategy, obs, now, &mut out, |t| {
                    t.is_assigned_to(me)
                });
            }
        }
        StrategyKind::TaskThief => {
            prove_own_deliveries(agent, strategy, obs, now, &mut out);
            // Races the assignees on requests from the newest source block.
            let me = agent.registered_as;
            let head = obs.source.height();
            deliver_batch(agent, strategy, obs, now, &mut out, |t| {
                t.created_height == head
                    && !t.assigned.is_empty()
                    && me.is_none_or(|id| !t.is_assigned_to(id))
            });
        }
        StrategyKind::SilentAfterWithdraw => silent(agent, strategy, obs, now, &mut out),
        StrategyKind::TimeoutReporter => report_timeouts(agent, strategy, obs, now, &mut out),
    }
    out
}

/// A task still worth delivering: open on the source, no receipt yet and the
/// next destination block is within its timeout.
fn deliverable(task: &TaskRecord, dest: &ChainState) -> bool {
    task.phase == TaskPhase::Requested
        && dest.coordinator().receipt(&task.request_hash).is_none()
        && dest.height() < task.timeout_height
}

fn deliver_batch(
    agent: &mut AgentState,
    strategy: &AgentStrategy,
    obs: &Observation<'_>,
    now: SimTime,
    out: &mut Vec<PlannedTx>,
    wanted: impl Fn(&TaskRecord) -> bool,
) {
    let candidates: Vec<&TaskRecord> = obs
        .source
        .coordinator()
        .open_tasks()
        .filter(|t| !agent.attempted.contains(&t.request_hash))
        .filter(|t| wanted(t) && deliverable(t, obs.dest))
        .collect();
    // The whole batch goes out when the scan ends, so only tasks that can
    // still land by then are worth scanning. Shrinking the batch only makes
    // more tasks feasible, so this settles after at most two passes.
    let mut size = strategy.batch_cap().min(candidates.len());
    let batch: Vec<&TaskRecord> = loop {
        let ready = SimTime(now.micros() + strategy.scan_latency.micros() * size as u64);
        let landing = landing_height(obs.dest, ready);
        let feasible: Vec<&TaskRecord> = candidates
            .iter()
            .copied()
            .filter(|t| landing <= t.timeout_height)
            .take(size)
            .collect();
        if feasible.len() == size {
            break feasible;
        }
        size = feasible.len();
    };
    if batch.is_empty() {
        return;
    }
    let done = SimTime(now.micros() + strategy.scan_latency.micros() * batch.len() as u64);
    let source_head = obs.source.height();
    for task in batch {
        agent.attempted.insert(task.request_hash);
        agent.awaiting_receipt.insert(task.request_hash);
        out.push(PlannedTx {
            chain: obs.dest.id(),
            payload: Payload::DeliverTx {
                request: RelayedRequest::from_task(task),
                proof_height: source_head,
                header: Some(source_head),
            },
            gas_price: strategy.delivery_price(),
            submit_at: done,
        });
    }
    agent.busy_until = done;
}

/// Earliest destination height a transaction sent at `ready` can reach,
/// extrapolating the observed block cadence.
pub fn landing_height(dest: &ChainState, ready: SimTime) -> Height {
    let head = dest.head();
    if head.height == 0 {
        return 1;
    }
    let interval = (head.time.micros() / head.height).max(1);
    head.height + ready.micros().saturating_sub(head.time.micros()) / interval + 1
}

fn prove_tx(
    obs: &Observation<'_>,
    request: TxId,
    strategy: &AgentStrategy,
    now: SimTime,
) -> Option<PlannedTx> {
    let receipt = obs.dest.coordinator().receipt(&request)?;
    Some(PlannedTx {
        chain: obs.source.id(),
        payload: Payload::ProveDelivery {
            proof: ReceiptProof {
                request_hash: request,
                receipt_hash: receipt.receipt_hash,
                dest_height: receipt.height,
            },
            header: Some(obs.dest.height()),
        },
        gas_price: strategy.gas_price,
        submit_at: now,
    })
}

/// Acknowledge receipts this agent produced itself.
fn prove_own_deliveries(
    agent: &mut AgentState,
    strategy: &AgentStrategy,
    obs: &Observation<'_>,
    now: SimTime,
    out: &mut Vec<PlannedTx>,
) {
    let dest = obs.dest.coordinator();
    let landed: Vec<TxId> = agent
        .awaiting_receipt
        .iter()
        .copied()
        .filter(|h| dest.receipt(h).is_some())
        .collect();
    for h in landed {
        agent.awaiting_receipt.remove(&h);
        let mine = dest
            .receipt(&h)
            .is_some_and(|r| r.deliverer == agent.address);
        let open = obs
            .source
            .coordinator()
            .task(&h)
            .is_some_and(|t| t.phase == TaskPhase::Requested);
        if mine && open && agent.proved.insert(h) {
            out.extend(prove_tx(obs, h, strategy, now));
        }
    }
}

/// Acknowledge every delivered task allocated to `me`, whoever delivered it.
fn prove_assigned(
    agent: &mut AgentState,
    strategy: &AgentStrategy,
    obs: &Observation<'_>,
    now: SimTime,
    me: RelayerId,
    out: &mut Vec<PlannedTx>,
) {
    let ready: Vec<TxId> = obs
        .source
        .coordinator()
        .open_tasks()
        .filter(|t| t.is_assigned_to(me) && !agent.proved.contains(&t.request_hash))
        .filter(|t| obs.dest.coordinator().receipt(&t.request_hash).is_some())
        .map(|t| t.request_hash)
        .collect();
    for h in ready {
        agent.proved.insert(h);
        agent.awaiting_receipt.remove(&h);
        out.extend(prove_tx(obs, h, strategy, now));
    }
}

fn silent(
    agent: &mut AgentState,
    strategy: &AgentStrategy,
    obs: &Observation<'_>,
    now: SimTime,
    out: &mut Vec<PlannedTx>,
) {
    let coord = obs.source.coordinator();
    let Some(me) = agent.registered_as else {
        return;
    };
    let Some(rec) = coord.record(me) else { return };
    let head = obs.source.height();
    match rec.status {
        RelayerStatus::Active if !agent.withdraw_sent => {
            if coord.open_tasks().any(|t| t.is_assigned_to(me)) {
                agent.withdraw_sent = true;
                out.push(PlannedTx {
                    chain: obs.source.id(),
                    payload: Payload::Withdraw,
                    gas_price: strategy.gas_price,
                    submit_at: now,
                });
            }
        }
        RelayerStatus::Unbonding { end_height } => {
            // Try one block early, then again after every failed attempt.
            if head + 2 < end_height {
                return;
            }
            let retry = match agent.reclaim_attempt {
                None => true,
                Some((_, Some(id))) => obs
                    .source
                    .tx_location(&id)
                    .is_some_and(|loc| !loc.result.is_success()),
                Some((_, None)) => false,
            };
            if retry {
                agent.reclaim_attempt = Some((head, None));
                out.push(PlannedTx {
                    chain: obs.source.id(),
                    payload: Payload::Reclaim,
                    gas_price: strategy.gas_price,
                    submit_at: now,
                });
            }
        }
        _ => {}
    }
}

fn report_timeouts(
    agent: &mut AgentState,
    strategy: &AgentStrategy,
    obs: &Observation<'_>,
    now: SimTime,
    out: &mut Vec<PlannedTx>,
) {
    let dest_head = obs.dest.height();
    let dest = obs.dest.coordinator();
    let expired: Vec<(TxId, Height)> = obs
        .source
        .coordinator()
        .open_tasks()
        .filter(|t| t.phase == TaskPhase::Requested && t.timeout_height <= dest_head)
        .filter(|t| !agent.reported.contains(&t.request_hash))
        .filter(|t| {
            dest.receipt(&t.request_hash)
                .is_none_or(|r| r.height > dest_head)
        })
        .map(|t| (t.request_hash, t.timeout_height))
        .collect();
    for (h, timeout_height) in expired {
        agent.reported.insert(h);
        out.push(PlannedTx {
            chain: obs.source.id(),
            payload: Payload::SubmitTimeout {
                proof: ProofOfAbsence {
                    request_hash: h,
                    timeout_height,
                    attested_dest_height: dest_head,
                },
                header: Some(dest_head),
            },
            gas_price: strategy.gas_price,
            submit_at: now,
        });
    }
}
