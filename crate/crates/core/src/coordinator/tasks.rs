use super::allocation::{allocate, assignees};
use super::{
    Ack, AllocationMode, AssignOutcome, CallContext, CoordinatorError, CoordinatorEvent,
    CoordinatorState, CounterpartyView, ProofOfAbsence, Receipt, ReceiptProof, RelayedRequest,
    SlashOutcome, SlashRecord, TaskPhase, TaskRecord, TransferDetails,
};
use crate::ledger::{Bank, Memo, Pot};
use crate::types::{Address, Canonical, Height, RelayerId, Tokens, TxId};

impl CoordinatorState {
    /// Start a cross-chain transfer from the calling account. The request hash
    /// is the hash of the enclosing transaction.
    pub fn transfer(
        &mut self,
        bank: &mut Bank,
        ctx: &CallContext,
        recipient: &Address,
        amount: Tokens,
        timeout_height: Height,
        fee: Tokens,
    ) -> Result<TaskRecord, CoordinatorError> {
        let sender = &ctx.submitter;
        if amount == 0 {
            return Err(CoordinatorError::ZeroAmount);
        }
        let needed = amount
            .checked_add(fee)
            .ok_or(CoordinatorError::InsufficientBalance)?;
        if bank.balance(sender) < needed {
            return Err(CoordinatorError::InsufficientBalance);
        }
        if timeout_height <= self.counterparty_head {
            return Err(CoordinatorError::InvalidTimeout);
        }
        let assigned = match self.params.mode {
            AllocationMode::Competitive => Vec::new(),
            AllocationMode::Approach1 => {
                assignees(&ctx.tx_id, &self.eligible_set(), self.params.redundancy)?
            }
            AllocationMode::Approach2 => {
                if self.eligible_set().is_empty() {
                    return Err(CoordinatorError::EmptyRelayerSet);
                }
                Vec::new()
            }
        };
        if self.tasks.contains_key(&ctx.tx_id) {
            return Err(CoordinatorError::DuplicateDelivery);
        }

        if self.params.mode == AllocationMode::Approach1 {
            self.sweep_floor(ctx.height);
        }
        bank.move_tokens(
            Pot::Account(sender.clone()),
            Pot::PrincipalEscrow,
            amount,
            Memo::PrincipalEscrow,
        )
        .expect("balance checked");
        bank.move_tokens(
            Pot::Account(sender.clone()),
            Pot::FeeEscrow,
            fee,
            Memo::FeeEscrow,
        )
        .expect("balance checked");
        self.principal_escrow += amount;
        self.escrow_total += fee;

        let seq = self.next_seq;
        self.next_seq += 1;
        let task = TaskRecord {
            request_hash: ctx.tx_id,
            seq,
            assigned,
            timeout_height,
            fee,
            origin_user: sender.clone(),
            phase: TaskPhase::Requested,
            payload: TransferDetails {
                sender: sender.clone(),
                recipient: recipient.clone(),
                amount,
            },
            created_height: ctx.height,
            created_at: ctx.time,
            fee_adequate: fee >= self.params.min_profitable_fee,
        };
        self.tasks.insert(ctx.tx_id, task.clone());
        self.open.insert(seq, ctx.tx_id);
        self.events.push(CoordinatorEvent::TaskCreated {
            request: ctx.tx_id,
            origin: sender.clone(),
            assigned: task.assigned.clone(),
            timeout_height,
            fee,
            amount,
            fee_adequate: task.fee_adequate,
        });
        Ok(task)
    }

    /// Accept externally computed allocations after recomputing each one
    /// against the current eligible set. Fails as a whole only when no entry
    /// is accepted.
    pub fn assign_tasks(
        &mut self,
        bank: &mut Bank,
        ctx: &CallContext,
        assignments: &[(TxId, RelayerId)],
    ) -> Result<Vec<AssignOutcome>, CoordinatorError> {
        if self.params.mode != AllocationMode::Approach2 {
            return Err(CoordinatorError::WrongMode);
        }
        if assignments.is_empty() {
            return Err(CoordinatorError::EmptyAssignment);
        }
        let eligible = self.eligible_set();
        let mut seen = std::collections::BTreeSet::new();
        let outcomes: Vec<AssignOutcome> = assignments
            .iter()
            .map(|(hash, claimed)| {
                let task = match self.tasks.get(hash) {
                    Some(t) if t.phase == TaskPhase::Requested => t,
                    _ => return AssignOutcome::Reverted(CoordinatorError::UnknownTask),
                };
                if !task.assigned.is_empty() || !seen.insert(*hash) {
                    return AssignOutcome::Reverted(CoordinatorError::AlreadyAssigned);
                }
                match allocate(hash, &eligible) {
                    Ok(expected) if expected == *claimed => AssignOutcome::Accepted,
                    _ => AssignOutcome::Reverted(CoordinatorError::WrongAllocation),
                }
            })
            .collect();

        if let Some(first) = outcomes.iter().find_map(|o| match o {
            AssignOutcome::Reverted(e) => Some(*e),
            AssignOutcome::Accepted => None,
        }) {
            if !outcomes.contains(&AssignOutcome::Accepted) {
                return Err(first);
            }
        }

        self.sweep_floor(ctx.height);
        for ((hash, _), outcome) in assignments.iter().zip(&outcomes) {
            if *outcome != AssignOutcome::Accepted {
                continue;
            }
            let chosen = assignees(hash, &eligible, self.params.redundancy)
                .expect("non-empty when accepted");
            self.tasks.get_mut(hash).expect("checked").assigned = chosen.clone();
            self.events.push(CoordinatorEvent::TaskAssigned {
                request: *hash,
                assigned: chosen,
                allocator: ctx.submitter.clone(),
            });
        }
        let fully_correct = outcomes.iter().all(|o| *o == AssignOutcome::Accepted);
        if fully_correct && self.params.allocator_reward > 0 {
            bank.move_tokens(
                Pot::Supply,
                Pot::Account(ctx.submitter.clone()),
                self.params.allocator_reward,
                Memo::AllocatorReward,
            )
            .expect("supply is not an account");
            self.events.push(CoordinatorEvent::AllocatorRewarded {
                allocator: ctx.submitter.clone(),
                amount: self.params.allocator_reward,
            });
        }
        Ok(outcomes)
    }

    /// Destination side: execute a relayed request and record its receipt.
    /// Any account may deliver.
    pub fn deliver_tx(
        &mut self,
        bank: &mut Bank,
        ctx: &CallContext,
        request: &RelayedRequest,
        proof_height: Height,
        header: Option<Height>,
        counterparty: &dyn CounterpartyView,
    ) -> Result<TxId, CoordinatorError> {
        let head = self.counterparty_head_after(header, counterparty)?;
        if proof_height > head {
            return Err(CoordinatorError::HeaderNotRelayed);
        }
        let hash = request.request_hash;
        match counterparty.request(&hash) {
            Some(src)
                if src.created_height <= proof_height
                    && RelayedRequest::from_task(src) == *request => {}
            _ => return Err(CoordinatorError::UnknownRequest),
        }
        if self.receipts.contains_key(&hash) {
            return Err(CoordinatorError::DuplicateDelivery);
        }
        if ctx.height > request.timeout_height {
            return Err(CoordinatorError::PastTimeout);
        }

        self.advance_head(head);
        bank.move_tokens(
            Pot::Supply,
            Pot::Account(request.payload.recipient.clone()),
            request.payload.amount,
            Memo::DeliveryMint,
        )
        .expect("supply is not an account");
        let receipt_hash = Canonical::new("receipt")
            .id(&hash)
            .u8(self.chain.tag())
            .id(&ctx.tx_id)
            .finish();
        self.receipts.insert(
            hash,
            Receipt {
                request_hash: hash,
                receipt_hash,
                deliverer: ctx.submitter.clone(),
                height: ctx.height,
                time: ctx.time,
            },
        );
        self.events.push(CoordinatorEvent::TaskDelivered {
            request: hash,
            receipt: receipt_hash,
            deliverer: ctx.submitter.clone(),
        });
        Ok(receipt_hash)
    }

    /// Source side: accept a destination receipt, complete the operation and
    /// release the fee to the assigned relayer.
    pub fn prove_delivery(
        &mut self,
        bank: &mut Bank,
        ctx: &CallContext,
        proof: &ReceiptProof,
        header: Option<Height>,
        counterparty: &dyn CounterpartyView,
    ) -> Result<Ack, CoordinatorError> {
        let head = self.counterparty_head_after(header, counterparty)?;
        let task = self
            .tasks
            .get(&proof.request_hash)
            .ok_or(CoordinatorError::InvalidReceipt)?;
        match task.phase {
            TaskPhase::Acked => return Err(CoordinatorError::AlreadyAcked),
            TaskPhase::TimedOut => return Err(CoordinatorError::TaskTimedOut),
            TaskPhase::Requested | TaskPhase::Delivered { .. } => {}
        }
        if proof.dest_height > head {
            return Err(CoordinatorError::HeaderNotRelayed);
        }
        let receipt = match counterparty.receipt(&proof.request_hash) {
            Some(r) if r.height <= proof.dest_height && r.receipt_hash == proof.receipt_hash => r,
            _ => return Err(CoordinatorError::InvalidReceipt),
        };
        let payee = self.payee(task, receipt)?;
        let (fee, amount, request) = (task.fee, task.payload.amount, task.request_hash);

        self.advance_head(head);
        self.set_phase(
            &request,
            TaskPhase::Delivered {
                receipt: proof.receipt_hash,
            },
        );
        self.set_phase(&request, TaskPhase::Acked);
        bank.move_tokens(
            Pot::PrincipalEscrow,
            Pot::Supply,
            amount,
            Memo::PrincipalBurn,
        )
        .expect("escrow is not an account");
        bank.move_tokens(
            Pot::FeeEscrow,
            Pot::Account(payee.clone()),
            fee,
            Memo::FeeReward,
        )
        .expect("escrow is not an account");
        self.principal_escrow -= amount;
        self.escrow_total -= fee;
        self.events.push(CoordinatorEvent::TaskAcked {
            request,
            payee: payee.clone(),
            fee,
            prover: ctx.submitter.clone(),
        });
        Ok(Ack {
            request_hash: request,
            payee,
            fee,
        })
    }

    /// Who earns the fee. Competitive mode pays whoever delivered first. With
    /// allocation, the fee goes to the assignee that delivered, or to the
    /// primary assignee when the delivery came from outside the assigned set.
    fn payee(&self, task: &TaskRecord, receipt: &Receipt) -> Result<Address, CoordinatorError> {
        if self.params.mode == AllocationMode::Competitive {
            return Ok(receipt.deliverer.clone());
        }
        let primary = *task
            .assigned
            .first()
            .ok_or(CoordinatorError::TaskUnassigned)?;
        let chosen = task
            .assigned
            .iter()
            .copied()
            .find(|id| self.records[id].pubkey == receipt.deliverer)
            .unwrap_or(primary);
        Ok(self.records[&chosen].pubkey.clone())
    }

    /// Source side: resolve a task that was never delivered. Slashes each
    /// assignee and refunds the user.
    pub fn submit_timeout(
        &mut self,
        bank: &mut Bank,
        ctx: &CallContext,
        proof: &ProofOfAbsence,
        header: Option<Height>,
        counterparty: &dyn CounterpartyView,
    ) -> Result<SlashOutcome, CoordinatorError> {
        let head = self.counterparty_head_after(header, counterparty)?;
        let task = self
            .tasks
            .get(&proof.request_hash)
            .ok_or(CoordinatorError::InvalidProof)?;
        if task.phase != TaskPhase::Requested {
            return Err(CoordinatorError::AlreadyResolved);
        }
        if proof.timeout_height != task.timeout_height
            || proof.attested_dest_height < task.timeout_height
            || proof.attested_dest_height > head
        {
            return Err(CoordinatorError::InvalidProof);
        }
        if let Some(r) = counterparty.receipt(&proof.request_hash) {
            if r.height <= proof.attested_dest_height {
                return Err(CoordinatorError::NotTimedOut);
            }
        }
        let request = task.request_hash;
        let assigned = task.assigned.clone();
        let user = task.origin_user.clone();
        let (fee, amount) = (task.fee, task.payload.amount);
        let reporter = ctx.submitter.clone();

        self.advance_head(head);
        self.set_phase(&request, TaskPhase::TimedOut);
        let mut slashes = Vec::with_capacity(assigned.len());
        for id in assigned {
            let taken = self.take_collateral(id, self.params.slash_per_timeout);
            let reporter_cut = self.params.reporter_share.of(taken);
            let user_cut = self.params.user_refund_share.of(taken);
            let burned = taken - reporter_cut - user_cut;
            let from = || Pot::Collateral(id);
            bank.move_tokens(
                from(),
                Pot::Account(reporter.clone()),
                reporter_cut,
                Memo::SlashReporter,
            )
            .expect("collateral is not an account");
            bank.move_tokens(
                from(),
                Pot::Account(user.clone()),
                user_cut,
                Memo::SlashUser,
            )
            .expect("collateral is not an account");
            bank.move_tokens(from(), Pot::Supply, burned, Memo::SlashBurn)
                .expect("collateral is not an account");
            slashes.push(SlashRecord {
                relayer: id,
                amount: taken,
                reporter_cut,
                user_cut,
                burned,
            });
        }
        bank.move_tokens(
            Pot::PrincipalEscrow,
            Pot::Account(user.clone()),
            amount,
            Memo::PrincipalRefund,
        )
        .expect("escrow is not an account");
        bank.move_tokens(Pot::FeeEscrow, Pot::Account(user), fee, Memo::FeeRefund)
            .expect("escrow is not an account");
        self.principal_escrow -= amount;
        self.escrow_total -= fee;
        self.events.push(CoordinatorEvent::TaskTimedOut {
            request,
            reporter,
            slashes: slashes.clone(),
        });
        Ok(SlashOutcome {
            request_hash: request,
            slashes,
            principal_refund: amount,
            fee_refund: fee,
        })
    }
}


#[cfg(test)]
mod props {
    use std::collections::BTreeMap;

    use proptest::prelude::*;

    use super::super::testutil::*;
    use super::super::*;
    use crate::ledger::Bank;
    use crate::types::ChainId;

    const RELAYERS: [&str; 4] = ["r0", "r1", "r2", "r3"];
    const OTHERS: [&str; 3] = ["alice", "thief", "watcher"];

    #[derive(Debug, Clone)]
    enum Op {
        Register(usize),
        Withdraw(usize),
        Reclaim(usize),
        Transfer { timeout: u64, fee: u64 },
        Assign(usize),
        Deliver { task: usize, by: usize },
        Prove { task: usize, by: usize },
        Timeout { task: usize, by: usize, extra: u64 },
        Tick(u64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0..4usize).prop_map(Op::Register),
            (0..4usize).prop_map(Op::Withdraw),
            (0..4usize).prop_map(Op::Reclaim),
            (1..8u64, 1..40u64).prop_map(|(timeout, fee)| Op::Transfer { timeout, fee }),
            (0..16usize).prop_map(Op::Assign),
            (0..16usize, 0..7usize).prop_map(|(task, by)| Op::Deliver { task, by }),
            (0..16usize, 0..7usize).prop_map(|(task, by)| Op::Prove { task, by }),
            (0..16usize, 0..7usize, 0..3u64).prop_map(|(task, by, extra)| Op::Timeout {
                task,
                by,
                extra
            }),
            (1..4u64).prop_map(Op::Tick),
        ]
    }

    fn mode() -> impl Strategy<Value = AllocationMode> {
        prop_oneof![
            Just(AllocationMode::Competitive),
            Just(AllocationMode::Approach1),
            Just(AllocationMode::Approach2),
        ]
    }

    fn who(i: usize) -> Address {
        RELAYERS
            .iter()
            .chain(OTHERS.iter())
            .nth(i)
            .copied()
            .unwrap()
            .into()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        /// Random call sequences keep the phase machine, escrow, rewards,
        /// slash splits and unbonding windows consistent.
        #[test]
        fn random_calls_keep_invariants(
            mode in mode(),
            redundancy in 1..3usize,
            ops in prop::collection::vec(op(), 1..80),
        ) {
            let params = CoordinatorParams {
                mode,
                redundancy,
                collateral_floor: 60,
                slash_per_timeout: 25,
                ..Default::default()
            };
            let names: Vec<&str> = RELAYERS.iter().chain(OTHERS.iter()).copied().collect();
            let mut src = CoordinatorState::new(ChainId::A, params.clone());
            let mut dst = CoordinatorState::new(ChainId::B, params);
            let mut sbank: Bank = funded_bank(ChainId::A, &names, 1_000);
            let mut dbank: Bank = funded_bank(ChainId::B, &names, 1_000);
            let mut tasks: Vec<TaskRecord> = Vec::new();
            let mut phases: BTreeMap<TxId, TaskPhase> = BTreeMap::new();
            let mut paid: BTreeMap<TxId, usize> = BTreeMap::new();
            let mut deposits: BTreeMap<RelayerId, Tokens> = BTreeMap::new();
            let mut h: Height = 1;
            let mut n = 0u64;
            let mut tag = || { n += 1; format!("op{n}") };

            for op in ops {
                match op {
                    Op::Tick(d) => h += d,
                    Op::Register(i) => {
                        if let Ok(id) = src.register(&mut sbank, &who(i), 100, h) {
                            deposits.insert(id, 100);
                        }
                    }
                    Op::Withdraw(i) => {
                        let id = src.record_by_pubkey(&who(i)).map(|r| r.id);
                        let pending = id.and_then(|id| src.max_pending_timeout(id));
                        if let Ok(end) = src.withdraw(&who(i), h) {
                            prop_assert!(end > h);
                            if let Some(t) = pending {
                                prop_assert!(end > t);
                            }
                            prop_assert!(!src.active_set().contains(&id.unwrap()));
                        }
                    }
                    Op::Reclaim(i) => {
                        let rec = src.record_by_pubkey(&who(i)).cloned();
                        if let Ok(amount) = src.reclaim(&mut sbank, &who(i), h) {
                            let rec = rec.unwrap();
                            let RelayerStatus::Unbonding { end_height } = rec.status else {
                                panic!("reclaimed from {:?}", rec.status)
                            };
                            prop_assert!(h >= end_height);
                            prop_assert_eq!(amount, deposits[&rec.id].saturating_sub(rec.slashed_total));
                        }
                    }
                    Op::Transfer { timeout, fee } => {
                        let ctx = ctx(h, &tag(), "alice");
                        let to = src.counterparty_head() + timeout;
                        if let Ok(t) = src.transfer(&mut sbank, &ctx, &"bob".into(), 5, to, fee) {
                            if mode == AllocationMode::Approach1 {
                                prop_assert!(!t.assigned.is_empty() && t.assigned.len() <= redundancy);
                            } else {
                                prop_assert!(t.assigned.is_empty());
                            }
                            phases.insert(t.request_hash, t.phase);
                            tasks.push(t);
                        }
                    }
                    Op::Assign(k) => {
                        let Some(t) = tasks.get(k) else { continue };
                        let eligible = src.eligible_set();
                        let Ok(claim) = allocate(&t.request_hash, &eligible) else { continue };
                        let _ = src.assign_tasks(&mut sbank, &ctx(h, &tag(), "alice"), &[(t.request_hash, claim)]);
                    }
                    Op::Deliver { task, by } => {
                        let Some(t) = tasks.get(task) else { continue };
                        let view = View { coord: &src, head: h };
                        let req = RelayedRequest::from_task(t);
                        let _ = dst.deliver_tx(&mut dbank, &ctx(h, &tag(), who(by).as_str()), &req, t.created_height, Some(t.created_height.min(h)), &view);
                    }
                    Op::Prove { task, by } => {
                        let Some(t) = tasks.get(task) else { continue };
                        let Some(r) = dst.receipt(&t.request_hash).cloned() else { continue };
                        let view = View { coord: &dst, head: h };
                        let proof = ReceiptProof { request_hash: r.request_hash, receipt_hash: r.receipt_hash, dest_height: r.height };
                        let before = src.task(&t.request_hash).cloned().unwrap();
                        if let Ok(ack) = src.prove_delivery(&mut sbank, &ctx(h, &tag(), who(by).as_str()), &proof, Some(r.height.min(h)), &view) {
                            *paid.entry(ack.request_hash).or_default() += 1;
                            prop_assert_eq!(ack.fee, before.fee);
                            if before.assigned.is_empty() {
                                prop_assert_eq!(&ack.payee, &r.deliverer);
                            } else {
                                let owners: Vec<Address> = before.assigned.iter().map(|id| src.record(*id).unwrap().pubkey.clone()).collect();
                                prop_assert!(owners.contains(&ack.payee));
                            }
                        }
                    }
                    Op::Timeout { task, by, extra } => {
                        let Some(t) = tasks.get(task) else { continue };
                        let attested = t.timeout_height + extra;
                        let view = View { coord: &dst, head: h.max(attested) };
                        let proof = ProofOfAbsence { request_hash: t.request_hash, timeout_height: t.timeout_height, attested_dest_height: attested };
                        if let Ok(out) = src.submit_timeout(&mut sbank, &ctx(h, &tag(), who(by).as_str()), &proof, Some(attested), &view) {
                            prop_assert!(dst.receipt(&t.request_hash).is_none_or(|r| r.height > attested));
                            for s in &out.slashes {
                                prop_assert_eq!(s.reporter_cut + s.user_cut + s.burned, s.amount);
                            }
                        }
                    }
                }

                // Phase edges, escrow and supply after every call.
                for t in src.tasks() {
                    let prev = phases.insert(t.request_hash, t.phase).unwrap();
                    // A proof moves a task through Delivered to Acked in one call.
                    let via = TaskPhase::Delivered { receipt: TxId::ZERO };
                    let ok = prev == t.phase
                        || prev.can_transition_to(&t.phase)
                        || (prev.can_transition_to(&via) && via.can_transition_to(&t.phase));
                    prop_assert!(ok, "{:?} -> {:?}", prev, t.phase);
                }
                prop_assert!(paid.values().all(|n| *n == 1));
                for (bank, coord) in [(&sbank, &src), (&dbank, &dst)] {
                    coord.check_invariants().map_err(TestCaseError::fail)?;
                    let held = bank.account_total()
                        + coord.escrow_total() as u128
                        + coord.principal_escrow() as u128
                        + coord.collateral_total();
                    prop_assert_eq!(held, (bank.genesis_supply() + bank.minted() - bank.burned()) as u128);
                }
                for r in src.records() {
                    prop_assert!(r.slashed_total <= deposits[&r.id]);
                    prop_assert_eq!(src.active_set().contains(&r.id), r.status == RelayerStatus::Active);
                }
                // Ids are never reused.
                prop_assert_eq!(src.records().count(), deposits.len());
            }
        }
    }
}
