use std::collections::BTreeMap;

use proptest::prelude::*;
use sha2::{Digest, Sha256};

use super::*;
use crate::coordinator::AllocationMode;

fn config(max_txs: usize) -> ChainConfig {
    ChainConfig {
        block_interval: SimTime::from_secs(10),
        max_txs,
        ordering: Ordering::FeePriority,
        costs: CostTable::default(),
    }
}

fn balances(names: &[&str], amount: Tokens) -> BTreeMap<Address, Tokens> {
    names.iter().map(|n| (Address::from(*n), amount)).collect()
}

fn competitive() -> CoordinatorParams {
    CoordinatorParams {
        mode: AllocationMode::Competitive,
        ..Default::default()
    }
}

struct Pair {
    a: ChainState,
    b: ChainState,
    nonces: BTreeMap<(ChainId, Address), u64>,
    clock: u64,
}

impl Pair {
    fn new(params: CoordinatorParams) -> Self {
        let who = balances(&["user", "R1", "R2", "R3", "poor"], 1_000);
        let mut who = who;
        who.insert("poor".into(), 0);
        Pair {
            a: ChainState::new(ChainId::A, config(100), params.clone(), &who),
            b: ChainState::new(ChainId::B, config(100), params, &who),
            nonces: BTreeMap::new(),
            clock: 0,
        }
    }

    fn tx(&mut self, chain: ChainId, who: &str, payload: Payload, price: u64) -> ChainTx {
        let n = self.nonces.entry((chain, who.into())).or_default();
        let t = ChainTx::new(
            chain,
            who.into(),
            *n,
            payload,
            price,
            &CostTable::default(),
            SimTime::from_secs(self.clock),
        );
        *n += 1;
        t
    }

    fn submit(&mut self, chain: ChainId, who: &str, payload: Payload, price: u64) -> TxId {
        let t = self.tx(chain, who, payload, price);
        match chain {
            ChainId::A => self.a.submit_tx(t).unwrap(),
            ChainId::B => self.b.submit_tx(t).unwrap(),
        }
    }

    fn mint(&mut self, chain: ChainId) -> MintEffects {
        self.clock += 10;
        let t = SimTime::from_secs(self.clock);
        let fx = match chain {
            ChainId::A => self.a.mint_block(t, &self.b),
            ChainId::B => self.b.mint_block(t, &self.a),
        };
        self.a.check_conservation().unwrap();
        self.b.check_conservation().unwrap();
        fx
    }

    /// Three transfers included on A at height 1.
    fn three_requests(&mut self) -> Vec<TaskRecord> {
        for i in 0..3 {
            self.submit(
                ChainId::A,
                "user",
                Payload::Transfer {
                    recipient: format!("bob{i}").as_str().into(),
                    amount: 10,
                    timeout_height: 50,
                    fee: 30,
                },
                1,
            );
        }
        self.mint(ChainId::A);
        self.a.coordinator().open_tasks().cloned().collect()
    }

    fn deliver_payload(&self, t: &TaskRecord) -> Payload {
        Payload::DeliverTx {
            request: RelayedRequest::from_task(t),
            proof_height: self.a.height(),
            header: Some(self.a.height()),
        }
    }
}

#[test]
fn submitted_tx_visible_in_mempool() {
    let mut p = Pair::new(competitive());
    let id = p.submit(ChainId::A, "user", Payload::Plain, 1);
    assert!(p.a.mempool().contains(&id));
    assert_eq!(p.a.balance(&"user".into()), 1_000);
}

#[test]
fn submit_without_gas_funds() {
    let mut p = Pair::new(competitive());
    let t = p.tx(
        ChainId::A,
        "poor",
        Payload::Transfer {
            recipient: "x".into(),
            amount: 1,
            timeout_height: 5,
            fee: 1,
        },
        1,
    );
    assert_eq!(t.gas_cost(), 10);
    assert_eq!(
        p.a.submit_tx(t),
        Err(ChainError::InsufficientBalance {
            available: 0,
            required: 10
        })
    );
}

#[test]
fn submit_rejects_wrong_chain_and_gas() {
    let mut p = Pair::new(competitive());
    let t = p.tx(ChainId::B, "user", Payload::Plain, 1);
    assert_eq!(p.a.submit_tx(t), Err(ChainError::WrongChain(ChainId::B)));
    let mut t = p.tx(ChainId::A, "user", Payload::Plain, 1);
    t.gas_units = 0;
    assert!(matches!(
        p.a.submit_tx(t),
        Err(ChainError::GasMismatch { .. })
    ));
    let t = p.tx(ChainId::A, "user", Payload::Plain, 1);
    p.a.submit_tx(t.clone()).unwrap();
    assert_eq!(p.a.submit_tx(t.clone()), Err(ChainError::DuplicateTx(t.id)));
}

#[test]
fn distinct_nonces_give_distinct_ids() {
    let who = Address::from("R1");
    let id0 = ChainTx::compute_id(ChainId::B, &who, 0, &Payload::Plain, 1);
    let id1 = ChainTx::compute_id(ChainId::B, &who, 1, &Payload::Plain, 1);
    assert_ne!(id0, id1);

    // Independent recomputation of the canonical encoding.
    let mut bytes = Vec::new();
    let domain = b"xcrelay/tx";
    bytes.extend_from_slice(&(domain.len() as u64).to_be_bytes());
    bytes.extend_from_slice(domain);
    bytes.push(b'B');
    bytes.extend_from_slice(&2u64.to_be_bytes());
    bytes.extend_from_slice(b"R1");
    bytes.extend_from_slice(&1u64.to_be_bytes());
    bytes.extend_from_slice(&1u64.to_be_bytes());
    let body = br#"{"call":"plain"}"#;
    bytes.extend_from_slice(&(body.len() as u64).to_be_bytes());
    bytes.extend_from_slice(body);
    let oracle: [u8; 32] = Sha256::digest(&bytes).into();
    assert_eq!(id1.0, oracle);
}

#[test]
fn empty_mempool_mints_empty_block() {
    let mut p = Pair::new(competitive());
    p.mint(ChainId::A);
    assert_eq!(p.a.height(), 1);
    assert!(p.a.head().txs.is_empty());
    assert_eq!(p.a.head().parent, p.a.blocks()[0].id);
}

#[test]
fn race_with_equal_fees_first_submitter_wins() {
    let mut p = Pair::new(competitive());
    let tasks = p.three_requests();
    assert_eq!(tasks.len(), 3);
    for who in ["R3", "R2", "R1"] {
        for t in &tasks {
            let payload = p.deliver_payload(t);
            p.submit(ChainId::B, who, payload, 1);
        }
    }
    p.mint(ChainId::B);
    let block = p.b.head();
    assert_eq!(block.txs.len(), 9);
    for (i, inc) in block.txs.iter().enumerate() {
        if i < 3 {
            assert_eq!(inc.tx.submitter.as_str(), "R1");
            assert_eq!(inc.result, ExecResult::Success);
        } else {
            assert_eq!(
                inc.result,
                ExecResult::Reverted(CoordinatorError::DuplicateDelivery)
            );
        }
    }
    // Every submission paid gas, reverted or not.
    for who in ["R1", "R2", "R3"] {
        assert_eq!(p.b.balance(&who.into()), 1_000 - 3 * 10);
    }
    assert_eq!(p.b.balance(&"miner".into()), 90);
}

#[test]
fn overbid_is_ordered_first() {
    let mut p = Pair::new(competitive());
    let tasks = p.three_requests();
    for (who, price) in [("R1", 1), ("R2", 1), ("R3", 2)] {
        for t in &tasks {
            let payload = p.deliver_payload(t);
            p.submit(ChainId::B, who, payload, price);
        }
    }
    p.mint(ChainId::B);
    let winners: Vec<_> =
        p.b.head()
            .txs
            .iter()
            .filter(|i| i.result.is_success())
            .map(|i| i.tx.submitter.as_str())
            .collect();
    assert_eq!(winners, ["R3", "R3", "R3"]);
    assert_eq!(p.b.head().txs[0].tx.submitter.as_str(), "R3");
    assert_eq!(p.b.balance(&"R3".into()), 1_000 - 3 * 20);
}

#[test]
fn plain_payload_is_noop() {
    let mut p = Pair::new(competitive());
    p.submit(ChainId::A, "user", Payload::Plain, 3);
    let fx = p.mint(ChainId::A);
    assert_eq!(p.a.head().txs[0].result, ExecResult::Success);
    assert!(fx.events.is_empty());
    assert_eq!(p.a.balance(&"user".into()), 997);
}

#[test]
fn unknown_task_reverts_but_pays_gas() {
    let mut p = Pair::new(competitive());
    let fake = TaskRecord {
        request_hash: TxId::digest(b"absent"),
        seq: 0,
        assigned: vec![],
        timeout_height: 9,
        fee: 1,
        origin_user: "user".into(),
        phase: crate::coordinator::TaskPhase::Requested,
        payload: crate::coordinator::TransferDetails {
            sender: "user".into(),
            recipient: "x".into(),
            amount: 1,
        },
        created_height: 0,
        created_at: SimTime::ZERO,
        fee_adequate: true,
    };
    assert!(p.a.coordinator().task(&fake.request_hash).is_none());
    let payload = p.deliver_payload(&fake);
    p.submit(ChainId::B, "R1", payload, 1);
    p.mint(ChainId::B);
    assert_eq!(
        p.b.head().txs[0].result,
        ExecResult::Reverted(CoordinatorError::UnknownRequest)
    );
    assert_eq!(p.b.balance(&"R1".into()), 990);
}

#[test]
fn block_capacity_limits_inclusion() {
    let mut p = Pair::new(competitive());
    p.a = ChainState::new(
        ChainId::A,
        config(2),
        competitive(),
        &balances(&["user"], 100),
    );
    for _ in 0..5 {
        p.submit(ChainId::A, "user", Payload::Plain, 1);
    }
    p.mint(ChainId::A);
    assert_eq!(p.a.head().txs.len(), 2);
    assert_eq!(p.a.mempool().len(), 3);
}

#[test]
fn unaffordable_tx_dropped_at_mint() {
    let mut p = Pair::new(competitive());
    p.a = ChainState::new(
        ChainId::A,
        config(10),
        competitive(),
        &balances(&["user"], 15),
    );
    p.submit(
        ChainId::A,
        "user",
        Payload::Transfer {
            recipient: "x".into(),
            amount: 1,
            timeout_height: 5,
            fee: 1,
        },
        1,
    );
    p.submit(
        ChainId::A,
        "user",
        Payload::Transfer {
            recipient: "x".into(),
            amount: 1,
            timeout_height: 5,
            fee: 2,
        },
        1,
    );
    let fx = p.mint(ChainId::A);
    assert_eq!(p.a.head().txs.len(), 1);
    assert_eq!(fx.dropped.len(), 1);
}

#[test]
fn read_blocks_bounds() {
    let mut p = Pair::new(competitive());
    for _ in 0..5 {
        p.mint(ChainId::A);
    }
    assert_eq!(p.a.read_blocks(5).unwrap().len(), 1);
    assert_eq!(p.a.read_blocks(0).unwrap().len(), 6);
    assert_eq!(
        p.a.read_blocks(6),
        Err(ChainError::OutOfRange { from: 6, head: 5 })
    );
}

#[test]
fn heights_and_parents_link() {
    let mut p = Pair::new(competitive());
    for _ in 0..4 {
        p.submit(ChainId::A, "user", Payload::Plain, 1);
        p.mint(ChainId::A);
    }
    for w in p.a.blocks().windows(2) {
        assert_eq!(w[1].height, w[0].height + 1);
        assert_eq!(w[1].parent, w[0].id);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Per-submitter order and gas finality under random prices and capacity.
    #[test]
    fn submitter_order_and_gas(
        txs in prop::collection::vec((0usize..3, 1u64..5), 1..40),
        cap in 1usize..8,
    ) {
        let names = ["u0", "u1", "u2"];
        let mut a = ChainState::new(ChainId::A, config(cap), competitive(), &balances(&names, 10_000));
        let b = ChainState::new(ChainId::B, config(cap), competitive(), &BTreeMap::new());
        let mut nonce = [0u64; 3];
        let mut spent = [0u64; 3];
        for (k, (who, price)) in txs.iter().enumerate() {
            let t = ChainTx::new(
                ChainId::A,
                names[*who].into(),
                nonce[*who],
                Payload::Plain,
                *price,
                &CostTable::default(),
                SimTime::from_secs(k as u64),
            );
            nonce[*who] += 1;
            a.submit_tx(t).unwrap();
        }
        let mut clock = 100;
        while !a.mempool().is_empty() {
            a.mint_block(SimTime::from_secs(clock), &b);
            clock += 10;
            a.check_conservation().unwrap();
        }
        let mut last = [None::<u64>; 3];
        for block in a.blocks() {
            for inc in &block.txs {
                let w = names.iter().position(|n| *n == inc.tx.submitter.as_str()).unwrap();
                if let Some(prev) = last[w] {
                    prop_assert!(inc.tx.nonce > prev);
                }
                last[w] = Some(inc.tx.nonce);
                spent[w] += inc.tx.gas_cost();
            }
        }
        for (w, n) in names.iter().enumerate() {
            prop_assert_eq!(a.balance(&(*n).into()), 10_000 - spent[w]);
        }
    }
}
