//! Discrete-event engine.
//!
//! One run owns both chains, the agents and the users. Events are processed
//! in `(time, rank, sequence)` order, where the rank fixes what happens
//! first at equal times: transaction arrivals, then block minting, then
//! workload injection, then agent polls. All randomness comes from
//! generators seeded by the config, one stream per concern, so a run is a
//! pure function of its config.

mod config;
mod workload;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::{ChainConfig, ChainState, ChainTx, Payload};
use crate::coordinator::{assignees, AllocationMode, TaskPhase};
use crate::relayer::{self, AgentState, AgentStrategy, Observation, PlannedTx};
use crate::trace::{AgentInfo, RunTrace, TraceRecord, TxSummary};
use crate::types::{Address, ChainId, SimTime, Tokens, TxId};

pub use config::{
    AgentGroup, Burst, ChainSection, ConfigError, FieldProblem, Pattern, SimConfig, WorkloadConfig,
    RECIPIENT_PREFIX, USER_PREFIX,
};
pub use workload::schedule;

#[derive(Debug)]
enum EventKind {
    TxArrival(Box<ChainTx>),
    MintBlock(ChainId),
    Workload(usize),
    AgentTick,
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::TxArrival(_) => 0,
            EventKind::MintBlock(_) => 1,
            EventKind::Workload(_) => 2,
            EventKind::AgentTick => 3,
        }
    }
}

#[derive(Debug)]
struct Queued {
    at: SimTime,
    rank: u8,
    seq: u64,
    kind: EventKind,
}

impl Queued {
    fn key(&self) -> (SimTime, u8, u64) {
        (self.at, self.rank, self.seq)
    }
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

struct Agent {
    state: AgentState,
    strategy: AgentStrategy,
}

/// Pending allocation attempts of an origin user, by request.
#[derive(Default)]
struct UserState {
    attempts: BTreeMap<TxId, TxId>,
}

struct Simulation {
    chains: ChainPair,
    cfg: SimConfig,
    end: SimTime,
    agents: Vec<Agent>,
    users: Vec<Address>,
    user_state: BTreeMap<Address, UserState>,
    nonces: BTreeMap<(Address, ChainId), u64>,
    last_arrival: BTreeMap<(Address, ChainId), SimTime>,
    queue: BinaryHeap<Reverse<Queued>>,
    seq: u64,
    workload_rng: ChaCha8Rng,
    network_rng: ChaCha8Rng,
    order_rng: ChaCha8Rng,
    records: Vec<TraceRecord>,
    violations: Vec<String>,
}

struct ChainPair {
    a: ChainState,
    b: ChainState,
}

impl ChainPair {
    fn get(&self, id: ChainId) -> &ChainState {
        match id {
            ChainId::A => &self.a,
            ChainId::B => &self.b,
        }
    }

    fn get_mut(&mut self, id: ChainId) -> &mut ChainState {
        match id {
            ChainId::A => &mut self.a,
            ChainId::B => &mut self.b,
        }
    }

    fn mint(&mut self, id: ChainId, time: SimTime) -> crate::chain::MintEffects {
        match id {
            ChainId::A => self.a.mint_block(time, &self.b),
            ChainId::B => self.b.mint_block(time, &self.a),
        }
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Execute a validated config to completion.
pub fn run(cfg: &SimConfig) -> Result<RunTrace, ConfigError> {
    cfg.validate()?;
    let mut sim = Simulation::new(cfg.clone());
    sim.run();
    Ok(RunTrace {
        records: sim.records,
    })
}

impl Simulation {
    fn new(cfg: SimConfig) -> Self {
        let users: Vec<Address> = cfg.user_names().into_iter().map(Address::new).collect();
        let mut agents = Vec::new();
        let mut infos = Vec::new();
        for g in &cfg.agents {
            for name in g.member_names() {
                infos.push(AgentInfo {
                    name: name.clone(),
                    group: g.name.clone(),
                    strategy: g.strategy.label().to_string(),
                });
                agents.push(Agent {
                    state: AgentState::new(name),
                    strategy: g.strategy(),
                });
            }
        }

        let mut balances_a: BTreeMap<Address, Tokens> = BTreeMap::new();
        let mut balances_b: BTreeMap<Address, Tokens> = BTreeMap::new();
        for u in &users {
            balances_a.insert(u.clone(), cfg.workload.user_balance);
        }
        for g in &cfg.agents {
            for name in g.member_names() {
                balances_a.insert(Address::new(name.clone()), g.balance);
                balances_b.insert(Address::new(name), g.balance);
            }
        }
        let chain_cfg = |s: &ChainSection| ChainConfig {
            block_interval: SimTime::from_secs_f64(s.block_interval),
            max_txs: s.max_txs,
            ordering: cfg.ordering,
            costs: cfg.gas.clone(),
        };
        let mut a = ChainState::new(
            ChainId::A,
            chain_cfg(&cfg.chain_a),
            cfg.coordinator.clone(),
            &balances_a,
        );
        let mut b = ChainState::new(
            ChainId::B,
            chain_cfg(&cfg.chain_b),
            cfg.coordinator.clone(),
            &balances_b,
        );

        let mut records = vec![TraceRecord::Header {
            config: Box::new(cfg.clone()),
            fingerprint: cfg.fingerprint(),
            agents: infos,
            users: users.clone(),
        }];
        for entry in a
            .take_genesis_ledger()
            .into_iter()
            .chain(b.take_genesis_ledger())
        {
            records.push(TraceRecord::Ledger { entry });
        }

        let seed = cfg.seed;
        let mut sim = Simulation {
            chains: ChainPair { a, b },
            end: SimTime::from_secs_f64(cfg.duration),
            agents,
            user_state: users
                .iter()
                .map(|u| (u.clone(), UserState::default()))
                .collect(),
            users,
            nonces: BTreeMap::new(),
            last_arrival: BTreeMap::new(),
            queue: BinaryHeap::new(),
            seq: 0,
            workload_rng: rng(seed, 1),
            network_rng: rng(seed, 2),
            order_rng: rng(seed, 3),
            records,
            violations: Vec::new(),
            cfg,
        };
        for id in [ChainId::A, ChainId::B] {
            let interval = sim.chains.get(id).config().block_interval;
            sim.push(interval, EventKind::MintBlock(id));
        }
        for (at, n) in schedule(&sim.cfg.workload.pattern, sim.cfg.duration) {
            sim.push(at, EventKind::Workload(n));
        }
        sim.push(SimTime::ZERO, EventKind::AgentTick);
        sim
    }

    fn push(&mut self, at: SimTime, kind: EventKind) {
        if at > self.end {
            return;
        }
        self.seq += 1;
        self.queue.push(Reverse(Queued {
            at,
            rank: kind.rank(),
            seq: self.seq,
            kind,
        }));
    }

    fn run(&mut self) {
        while let Some(Reverse(ev)) = self.queue.pop() {
            let now = ev.at;
            match ev.kind {
                EventKind::TxArrival(tx) => self.arrive(*tx, now),
                EventKind::MintBlock(id) => {
                    self.mint(id, now);
                    let next = SimTime(
                        now.micros() + self.chains.get(id).config().block_interval.micros(),
                    );
                    self.push(next, EventKind::MintBlock(id));
                }
                EventKind::Workload(n) => self.inject(n, now),
                EventKind::AgentTick => {
                    self.tick(now);
                    let next = now + SimTime::from_secs_f64(self.cfg.agent_tick);
                    self.push(next, EventKind::AgentTick);
                }
            }
        }
        self.finish();
    }

    /// Hand a transaction to the network. Arrival is uniform in (0, Δ] after
    /// submission, and never overtakes the same sender's previous message to
    /// the same chain.
    fn send(
        &mut self,
        who: &Address,
        chain: ChainId,
        payload: Payload,
        gas_price: u64,
        submit_at: SimTime,
        now: SimTime,
    ) -> TxId {
        let nonce = self.nonces.entry((who.clone(), chain)).or_insert(0);
        let mut tx = ChainTx::new(
            chain,
            who.clone(),
            *nonce,
            payload,
            gas_price,
            &self.cfg.gas,
            submit_at,
        );
        *nonce += 1;
        let bound = SimTime::from_secs_f64(self.cfg.network_delay)
            .micros()
            .max(1);
        let delay = self.network_rng.random_range(1..=bound);
        let last = self
            .last_arrival
            .entry((who.clone(), chain))
            .or_insert(SimTime::ZERO);
        let arrive = SimTime(submit_at.micros() + delay).max(*last);
        *last = arrive;
        tx.arrived_at = arrive;
        let id = tx.id;
        self.records.push(TraceRecord::Action {
            time: now,
            actor: who.clone(),
            chain,
            tx: id,
            kind: tx.payload.kind(),
            submit_at,
            arrive_at: arrive,
        });
        self.push(arrive, EventKind::TxArrival(Box::new(tx)));
        id
    }

    fn arrive(&mut self, tx: ChainTx, now: SimTime) {
        let (chain, id, who) = (tx.chain, tx.id, tx.submitter.clone());
        if let Err(e) = self.chains.get_mut(chain).submit_tx(tx) {
            self.records.push(TraceRecord::Rejected {
                time: now,
                chain,
                tx: id,
                submitter: who,
                reason: e.to_string(),
            });
        }
    }

    fn mint(&mut self, id: ChainId, now: SimTime) {
        let effects = self.chains.mint(id, now);
        let chain = self.chains.get(id);
        let block = chain.head();
        self.records.push(TraceRecord::Block {
            chain: id,
            height: block.height,
            time: block.time,
            id: block.id,
            txs: block
                .txs
                .iter()
                .map(|t| TxSummary {
                    id: t.tx.id,
                    submitter: t.tx.submitter.clone(),
                    kind: t.tx.payload.kind(),
                    gas_price: t.tx.gas_price,
                    gas_units: t.tx.gas_units,
                    result: t.result,
                    request: t.tx.request_hash(),
                })
                .collect(),
        });
        let height = block.height;
        for entry in effects.ledger {
            self.records.push(TraceRecord::Ledger { entry });
        }
        for (tx, event) in effects.events {
            self.records.push(TraceRecord::Event {
                chain: id,
                height,
                time: now,
                tx,
                event,
            });
        }
        for tx in effects.dropped {
            self.records.push(TraceRecord::Dropped {
                time: now,
                chain: id,
                tx,
            });
        }
        if let Err(e) = chain.check_conservation() {
            self.violations.push(e);
        }
    }

    /// Inject `n` user transfers from the source chain.
    fn inject(&mut self, n: usize, now: SimTime) {
        let w = self.cfg.workload.clone();
        let dest_head = self.chains.b.height();
        for _ in 0..n {
            let u = self.workload_rng.random_range(0..self.users.len());
            let r = self.workload_rng.random_range(0..self.users.len());
            let amount = self.workload_rng.random_range(w.amount_min..=w.amount_max);
            let payload = Payload::Transfer {
                recipient: Address::new(format!("{RECIPIENT_PREFIX}{r}")),
                amount,
                timeout_height: dest_head + w.timeout_blocks,
                fee: w.fee,
            };
            let who = self.users[u].clone();
            self.send(&who, ChainId::A, payload, w.gas_price, now, now);
        }
    }

    fn tick(&mut self, now: SimTime) {
        let mut order: Vec<usize> = (0..self.agents.len()).collect();
        order.shuffle(&mut self.order_rng);
        for i in order {
            let planned = {
                let agent = &mut self.agents[i];
                let obs = Observation {
                    source: &self.chains.a,
                    dest: &self.chains.b,
                };
                relayer::step(&mut agent.state, &agent.strategy, &obs, now)
            };
            self.dispatch(i, planned, now);
        }
        if self.cfg.coordinator.mode == AllocationMode::Approach2 {
            self.allocate_pending(now);
        }
    }

    fn dispatch(&mut self, agent: usize, mut planned: Vec<PlannedTx>, now: SimTime) {
        planned.sort_by_key(|p| p.submit_at);
        let who = self.agents[agent].state.address.clone();
        for p in planned {
            let reclaim = matches!(p.payload, Payload::Reclaim);
            let id = self.send(&who, p.chain, p.payload, p.gas_price, p.submit_at, now);
            if reclaim {
                self.agents[agent].state.note_reclaim_tx(id);
            }
        }
    }

    /// Origin users publish allocations for their unassigned requests once
    /// the request is mined, and retry after a rejected attempt lands.
    fn allocate_pending(&mut self, now: SimTime) {
        let source = &self.chains.a;
        let coord = source.coordinator();
        let eligible = coord.eligible_set();
        if eligible.is_empty() {
            return;
        }
        let mut batches: BTreeMap<Address, Vec<(TxId, crate::RelayerId)>> = BTreeMap::new();
        for task in coord.open_tasks() {
            if task.phase != TaskPhase::Requested || !task.assigned.is_empty() {
                continue;
            }
            let Some(state) = self.user_state.get(&task.origin_user) else {
                continue;
            };
            let due = match state.attempts.get(&task.request_hash) {
                None => true,
                Some(prev) => source.tx_location(prev).is_some(),
            };
            if !due {
                continue;
            }
            let chosen = assignees(&task.request_hash, &eligible, 1).expect("eligible non-empty");
            batches
                .entry(task.origin_user.clone())
                .or_default()
                .push((task.request_hash, chosen[0]));
        }
        // Forget requests that no longer need an allocation.
        for (user, state) in self.user_state.iter_mut() {
            if batches.contains_key(user) || !state.attempts.is_empty() {
                state.attempts.retain(|h, _| {
                    coord
                        .task(h)
                        .is_some_and(|t| t.phase == TaskPhase::Requested && t.assigned.is_empty())
                });
            }
        }
        let price = self.cfg.workload.gas_price;
        for (user, items) in batches {
            let hashes: Vec<TxId> = items.iter().map(|(h, _)| *h).collect();
            let id = self.send(
                &user,
                ChainId::A,
                Payload::AssignTasks { assignments: items },
                price,
                now,
                now,
            );
            let state = self.user_state.get_mut(&user).expect("known user");
            for h in hashes {
                state.attempts.insert(h, id);
            }
        }
    }

    fn finish(&mut self) {
        let mut heights = BTreeMap::new();
        let mut balances = BTreeMap::new();
        for id in [ChainId::A, ChainId::B] {
            let c = self.chains.get(id);
            heights.insert(id, c.height());
            balances.insert(id, c.bank().accounts().clone());
            if let Err(e) = c.check_conservation() {
                self.violations.push(e);
            }
        }
        self.records.push(TraceRecord::End {
            time: self.end,
            heights,
            balances,
            violations: std::mem::take(&mut self.violations),
        });
    }
}
