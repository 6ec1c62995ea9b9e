//! Experiment metrics, computed offline from a run trace.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::chain::{ExecResult, PayloadKind};
use crate::coordinator::{CoordinatorError, CoordinatorEvent};
use crate::ledger::{Memo, Pot, Replay};
use crate::relayer::StrategyKind;
use crate::trace::{MalformedTrace, RunTrace, TraceRecord};
use crate::types::{Address, ChainId, RelayerId, SimTime, Tokens, TxId};

/// Order statistics in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub min: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl Stats {
    /// Nearest-rank percentiles. `None` when empty.
    pub fn of(mut xs: Vec<f64>) -> Option<Stats> {
        if xs.is_empty() {
            return None;
        }
        xs.sort_by(f64::total_cmp);
        let rank = |p: f64| xs[((p * xs.len() as f64).ceil() as usize).clamp(1, xs.len()) - 1];
        Some(Stats {
            count: xs.len(),
            min: xs[0],
            median: rank(0.5),
            p95: rank(0.95),
            max: xs[xs.len() - 1],
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayerPnl {
    pub strategy: String,
    pub rewards: Tokens,
    pub gas_spent: Tokens,
    pub slashed: Tokens,
    pub reporter_income: Tokens,
    pub net: i128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    /// Agents that relay, i.e. everyone but timeout watchers.
    pub relayers: usize,
    pub environment: String,
    pub duration: f64,
    pub created: usize,
    pub acked: usize,
    pub timed_out: usize,
    pub fee_flagged: usize,
    /// Acknowledged tasks per second.
    pub throughput: f64,
    /// Request inclusion to acknowledgement inclusion.
    pub latency: Option<Stats>,
    /// Request inclusion to allocation; zero under immediate allocation.
    pub assignment_delay: Option<Stats>,
    pub per_relayer: BTreeMap<String, RelayerPnl>,
    pub duplicate_reverts: usize,
    pub reverts: BTreeMap<String, usize>,
    pub allocation_histogram: BTreeMap<String, u64>,
    pub allocation_chi_square_p: Option<f64>,
    /// Share of acknowledged tasks delivered by the busiest deliverer.
    pub delivery_share_top1: f64,
    pub fees_released: Tokens,
    pub miner_income: Tokens,
}

/// Relayer id to registering address, from the source chain's events.
pub fn relayer_names(trace: &RunTrace) -> BTreeMap<RelayerId, Address> {
    trace
        .events()
        .filter_map(|(c, _, _, e)| match e {
            CoordinatorEvent::RelayerRegistered { id, pubkey, .. } if c == ChainId::A => {
                Some((*id, pubkey.clone()))
            }
            _ => None,
        })
        .collect()
}

pub fn compute(trace: &RunTrace) -> Result<MetricsReport, MalformedTrace> {
    let (config, agents, _) = trace.header()?;
    trace.end()?;
    let names = relayer_names(trace);
    let name_of = |id: &RelayerId| -> Result<String, MalformedTrace> {
        names
            .get(id)
            .map(|a| a.0.clone())
            .ok_or_else(|| MalformedTrace(format!("unregistered relayer {}", id.0)))
    };

    let mut per_relayer: BTreeMap<String, RelayerPnl> = agents
        .iter()
        .map(|a| {
            (
                a.name.clone(),
                RelayerPnl {
                    strategy: a.strategy.clone(),
                    ..RelayerPnl::default()
                },
            )
        })
        .collect();
    let mut fees_released = 0;
    let mut miner_income = 0;
    for e in trace.ledger() {
        let to = match &e.to {
            Pot::Account(a) => per_relayer.get_mut(a.as_str()),
            _ => None,
        };
        match e.memo {
            Memo::FeeReward => {
                fees_released += e.amount;
                if let Some(p) = to {
                    p.rewards += e.amount;
                }
            }
            Memo::SlashReporter => {
                if let Some(p) = to {
                    p.reporter_income += e.amount;
                }
            }
            Memo::Gas => {
                miner_income += e.amount;
                if let Pot::Account(a) = &e.from {
                    if let Some(p) = per_relayer.get_mut(a.as_str()) {
                        p.gas_spent += e.amount;
                    }
                }
            }
            _ => {}
        }
        if matches!(
            e.memo,
            Memo::SlashReporter | Memo::SlashUser | Memo::SlashBurn
        ) {
            let Pot::Collateral(id) = &e.from else {
                return Err(MalformedTrace("slash not drawn from collateral".into()));
            };
            if let Some(p) = per_relayer.get_mut(&name_of(id)?) {
                p.slashed += e.amount;
            }
        }
    }
    for p in per_relayer.values_mut() {
        p.net =
            p.rewards as i128 + p.reporter_income as i128 - p.gas_spent as i128 - p.slashed as i128;
    }

    let mut created_at: BTreeMap<TxId, SimTime> = BTreeMap::new();
    let mut delivered_by: BTreeMap<TxId, Address> = BTreeMap::new();
    let mut histogram: BTreeMap<String, u64> = names.values().map(|a| (a.0.clone(), 0)).collect();
    let mut latencies = Vec::new();
    let mut delays = Vec::new();
    let mut acked_requests = Vec::new();
    let (mut timed_out, mut fee_flagged) = (0, 0);
    for (chain, _, t, e) in trace.events() {
        match (chain, e) {
            (
                ChainId::A,
                CoordinatorEvent::TaskCreated {
                    request,
                    assigned,
                    fee_adequate,
                    ..
                },
            ) => {
                created_at.insert(*request, t);
                if !fee_adequate {
                    fee_flagged += 1;
                }
                if !assigned.is_empty() {
                    delays.push(0.0);
                }
                for id in assigned {
                    *histogram.entry(name_of(id)?).or_default() += 1;
                }
            }
            (
                ChainId::A,
                CoordinatorEvent::TaskAssigned {
                    request, assigned, ..
                },
            ) => {
                let c = created_at
                    .get(request)
                    .ok_or_else(|| MalformedTrace("assignment of unknown task".into()))?;
                delays.push(t.saturating_sub(*c).as_secs_f64());
                for id in assigned {
                    *histogram.entry(name_of(id)?).or_default() += 1;
                }
            }
            (ChainId::A, CoordinatorEvent::TaskAcked { request, .. }) => {
                let c = created_at
                    .get(request)
                    .ok_or_else(|| MalformedTrace("ack of unknown task".into()))?;
                latencies.push(t.saturating_sub(*c).as_secs_f64());
                acked_requests.push(*request);
            }
            (ChainId::A, CoordinatorEvent::TaskTimedOut { .. }) => timed_out += 1,
            (
                ChainId::B,
                CoordinatorEvent::TaskDelivered {
                    request, deliverer, ..
                },
            ) => {
                delivered_by.insert(*request, deliverer.clone());
            }
            _ => {}
        }
    }

    let mut share: BTreeMap<&Address, usize> = BTreeMap::new();
    for r in &acked_requests {
        if let Some(d) = delivered_by.get(r) {
            *share.entry(d).or_default() += 1;
        }
    }
    let acked = acked_requests.len();
    let delivery_share_top1 = match share.values().max() {
        Some(top) if acked > 0 => *top as f64 / acked as f64,
        _ => 0.0,
    };

    let mut reverts: BTreeMap<String, usize> = BTreeMap::new();
    for (_, _, _, tx) in trace.included_txs() {
        if let ExecResult::Reverted(e) = tx.result {
            *reverts.entry(format!("{e:?}")).or_default() += 1;
        }
    }
    let duplicate_reverts = trace
        .included_txs()
        .filter(|(_, _, _, tx)| {
            tx.kind == PayloadKind::DeliverTx
                && tx.result == ExecResult::Reverted(CoordinatorError::DuplicateDelivery)
        })
        .count();

    let counts: Vec<u64> = histogram.values().copied().collect();
    Ok(MetricsReport {
        seed: config.seed,
        relayers: config
            .agents
            .iter()
            .filter(|g| g.strategy != StrategyKind::TimeoutReporter)
            .map(|g| g.count)
            .sum(),
        environment: config.environment_fingerprint(),
        duration: config.duration,
        created: created_at.len(),
        acked,
        timed_out,
        fee_flagged,
        throughput: acked as f64 / config.duration,
        latency: Stats::of(latencies),
        assignment_delay: Stats::of(delays),
        per_relayer,
        duplicate_reverts,
        reverts,
        allocation_histogram: histogram,
        allocation_chi_square_p: chi_square_uniform_p(&counts),
        delivery_share_top1,
        fees_released,
        miner_income,
    })
}

/// Pearson goodness-of-fit p-value against equal expected counts.
pub fn chi_square_uniform_p(counts: &[u64]) -> Option<f64> {
    let total: u64 = counts.iter().sum();
    if counts.len() < 2 || total == 0 {
        return None;
    }
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).ok()?;
    Some(1.0 - dist.cdf(stat))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("incomparable configs: {0}")]
pub struct IncomparableConfigs(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityVerdict {
    /// `(relayers, throughput)` in sweep order.
    pub points: Vec<(usize, f64)>,
    /// Throughput rises strictly with every added relayer until the
    /// workload is exhausted, and never falls after.
    pub monotone: bool,
    /// Largest relative distance of any point from the first.
    pub max_relative_deviation: f64,
}

impl ScalabilityVerdict {
    pub fn flat_within(&self, tolerance: f64) -> bool {
        self.max_relative_deviation <= tolerance
    }
}

/// Judge a sweep of reports ordered by relayer count.
pub fn compare_scalability(
    reports: &[MetricsReport],
) -> Result<ScalabilityVerdict, IncomparableConfigs> {
    if reports.len() < 2 {
        return Err(IncomparableConfigs("need at least two reports".into()));
    }
    let first = &reports[0];
    for (prev, r) in reports.iter().zip(&reports[1..]) {
        if r.environment != first.environment || r.seed != first.seed {
            return Err(IncomparableConfigs(
                "reports differ in more than relayer count".into(),
            ));
        }
        if r.relayers <= prev.relayers {
            return Err(IncomparableConfigs("relayer counts must increase".into()));
        }
    }
    let monotone = reports.iter().zip(&reports[1..]).all(|(prev, r)| {
        let exhausted = prev.acked >= prev.created;
        r.throughput > prev.throughput || (exhausted && r.throughput >= prev.throughput)
    });
    let base = first.throughput;
    let max_relative_deviation = reports
        .iter()
        .map(|r| {
            if base == 0.0 {
                if r.throughput == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (r.throughput - base).abs() / base
            }
        })
        .fold(0.0, f64::max);
    Ok(ScalabilityVerdict {
        points: reports.iter().map(|r| (r.relayers, r.throughput)).collect(),
        monotone,
        max_relative_deviation,
    })
}

#[derive(Default)]
struct Flows {
    by_memo: BTreeMap<Memo, u128>,
    fees_acked: u128,
    slashes_reported: u128,
}

impl Flows {
    fn memo(&self, m: Memo) -> u128 {
        self.by_memo.get(&m).copied().unwrap_or(0)
    }
}

/// Replay the ledger and check, at every block boundary and at the end,
/// that every token is accounted for:
///
/// - pots never go negative and, per chain, everything held equals genesis
///   plus mints minus burns;
/// - escrowed fees are either paid out, refunded or still escrowed;
/// - escrowed principal is either burned on delivery, refunded or still
///   escrowed;
/// - locked collateral is either returned, slashed or still locked, and
///   every slash is split into reporter, user and burn parts;
/// - gas paid equals the miner's income;
/// - replayed balances match the final balances in the trace.
pub fn accounting_closure(trace: &RunTrace) -> Result<(), String> {
    let mut replay = Replay::default();
    let mut flows: BTreeMap<ChainId, Flows> = BTreeMap::new();
    let check =
        |replay: &Replay, flows: &BTreeMap<ChainId, Flows>, at: &str| -> Result<(), String> {
            for chain in [ChainId::A, ChainId::B] {
                let held = replay.held(chain);
                let supply = replay.get(chain, &Pot::Supply);
                if held + supply != 0 {
                    return Err(format!(
                        "{at}: {chain} holds {held} against supply {}",
                        -supply
                    ));
                }
                let Some(f) = flows.get(&chain) else { continue };
                let pot = |p: Pot| replay.get(chain, &p) as u128;
                let collateral: u128 = replay
                    .pots
                    .iter()
                    .filter(|((c, p), _)| *c == chain && matches!(p, Pot::Collateral(_)))
                    .map(|(_, v)| *v as u128)
                    .sum();
                let slashed =
                    f.memo(Memo::SlashReporter) + f.memo(Memo::SlashUser) + f.memo(Memo::SlashBurn);
                let identities = [
                    (
                        "fees",
                        f.memo(Memo::FeeEscrow),
                        f.memo(Memo::FeeReward) + f.memo(Memo::FeeRefund) + pot(Pot::FeeEscrow),
                    ),
                    (
                        "principal",
                        f.memo(Memo::PrincipalEscrow),
                        f.memo(Memo::PrincipalBurn)
                            + f.memo(Memo::PrincipalRefund)
                            + pot(Pot::PrincipalEscrow),
                    ),
                    (
                        "collateral",
                        f.memo(Memo::CollateralLock),
                        f.memo(Memo::CollateralReturn) + slashed + collateral,
                    ),
                    ("slashes", f.slashes_reported, slashed),
                    ("acks", f.fees_acked, f.memo(Memo::FeeReward)),
                    (
                        "gas",
                        f.memo(Memo::Gas),
                        replay.get(
                            chain,
                            &Pot::Account(Address::new(crate::chain::ChainState::MINER)),
                        ) as u128,
                    ),
                ];
                for (what, left, right) in identities {
                    if left != right {
                        return Err(format!("{at}: {chain} {what} in {left} != out {right}"));
                    }
                }
            }
            Ok(())
        };
    let mut last_block = String::from("genesis");
    for r in &trace.records {
        match r {
            TraceRecord::Ledger { entry } => {
                replay
                    .apply(entry)
                    .map_err(|e| format!("{last_block}: {e}"))?;
                *flows
                    .entry(entry.chain)
                    .or_default()
                    .by_memo
                    .entry(entry.memo)
                    .or_default() += entry.amount as u128;
            }
            TraceRecord::Event { chain, event, .. } => {
                let f = flows.entry(*chain).or_default();
                match event {
                    CoordinatorEvent::TaskAcked { fee, .. } => f.fees_acked += *fee as u128,
                    CoordinatorEvent::TaskTimedOut { slashes, .. } => {
                        for s in slashes {
                            if s.reporter_cut + s.user_cut + s.burned != s.amount {
                                return Err(format!("{last_block}: slash split does not add up"));
                            }
                            f.slashes_reported += s.amount as u128;
                        }
                    }
                    _ => {}
                }
            }
            TraceRecord::Block { chain, height, .. } => {
                check(&replay, &flows, &last_block)?;
                last_block = format!("{chain} block {height}");
            }
            TraceRecord::End { balances, .. } => {
                check(&replay, &flows, "end")?;
                for (chain, accounts) in balances {
                    for (who, amount) in accounts {
                        let got = replay.get(*chain, &Pot::Account(who.clone()));
                        if got != *amount as i128 {
                            return Err(format!(
                                "end: {chain} {who} replays to {got}, trace says {amount}"
                            ));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Long-format CSV rows: `metric, key, value`.
pub fn rows(report: &MetricsReport) -> Vec<(String, String, String)> {
    let mut out = Vec::new();
    let mut put = |metric: &str, key: &str, value: String| {
        out.push((metric.to_string(), key.to_string(), value));
    };
    put("duration", "", report.duration.to_string());
    put("created", "", report.created.to_string());
    put("acked", "", report.acked.to_string());
    put("timed_out", "", report.timed_out.to_string());
    put("fee_flagged", "", report.fee_flagged.to_string());
    put("throughput", "", report.throughput.to_string());
    for (name, stats) in [
        ("latency", &report.latency),
        ("assignment_delay", &report.assignment_delay),
    ] {
        if let Some(s) = stats {
            put(name, "count", s.count.to_string());
            put(name, "min", s.min.to_string());
            put(name, "median", s.median.to_string());
            put(name, "p95", s.p95.to_string());
            put(name, "max", s.max.to_string());
        }
    }
    for (who, p) in &report.per_relayer {
        put("rewards", who, p.rewards.to_string());
        put("gas_spent", who, p.gas_spent.to_string());
        put("slashed", who, p.slashed.to_string());
        put("reporter_income", who, p.reporter_income.to_string());
        put("net", who, p.net.to_string());
    }
    put(
        "duplicate_reverts",
        "",
        report.duplicate_reverts.to_string(),
    );
    for (reason, n) in &report.reverts {
        put("reverts", reason, n.to_string());
    }
    for (who, n) in &report.allocation_histogram {
        put("allocation", who, n.to_string());
    }
    if let Some(p) = report.allocation_chi_square_p {
        put("allocation_chi_square_p", "", p.to_string());
    }
    put(
        "delivery_share_top1",
        "",
        report.delivery_share_top1.to_string(),
    );
    put("fees_released", "", report.fees_released.to_string());
    put("miner_income", "", report.miner_income.to_string());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::sim::{self, SimConfig};

    #[test]
    fn nearest_rank_stats() {
        let s = Stats::of((1..=20).map(f64::from).collect()).unwrap();
        assert_eq!((s.min, s.median, s.p95, s.max), (1.0, 10.0, 19.0, 20.0));
        assert!(Stats::of(vec![]).is_none());
    }

    #[test]
    fn chi_square_known_values() {
        // Equal counts: statistic 0, p = 1.
        assert!((chi_square_uniform_p(&[5, 5, 5, 5]).unwrap() - 1.0).abs() < 1e-12);
        // Statistic 1 with one degree of freedom: p = erfc(1/sqrt 2).
        let p = chi_square_uniform_p(&[55, 45]).unwrap();
        assert!((p - 0.317_310_507_862_914_1).abs() < 1e-9, "{p}");
        assert!(chi_square_uniform_p(&[3]).is_none());
    }

    #[test]
    fn empty_run_reports_zero() {
        let cfg = SimConfig {
            duration: 100.0,
            ..SimConfig::default()
        };
        let r = compute(&sim::run(&cfg).unwrap()).unwrap();
        assert_eq!(r.throughput, 0.0);
        assert!(r.latency.is_none());
        assert_eq!(r.delivery_share_top1, 0.0);
    }

    #[test]
    fn scenario_one_winner_and_losers() {
        let trace = sim::run(&presets::preset("scenario1").unwrap().unwrap()).unwrap();
        let r = compute(&trace).unwrap();
        let nets: Vec<i128> = r.per_relayer.values().map(|p| p.net).collect();
        assert_eq!(nets.iter().filter(|n| **n > 0).count(), 1);
        let deliver_gas = 10;
        for p in r.per_relayer.values().filter(|p| p.net <= 0) {
            assert_eq!(p.net, -3 * deliver_gas);
        }
        assert_eq!(r.duplicate_reverts, 6);
        assert_eq!(r.delivery_share_top1, 1.0);
        let throughput_times_duration = r.throughput * r.duration;
        assert!((throughput_times_duration - r.acked as f64).abs() < 1e-9);
        accounting_closure(&trace).unwrap();
    }

    #[test]
    fn rewards_sum_to_fees_released() {
        let trace = sim::run(&presets::preset("accountability").unwrap().unwrap()).unwrap();
        let r = compute(&trace).unwrap();
        let total: Tokens = r.per_relayer.values().map(|p| p.rewards).sum();
        assert_eq!(total, r.fees_released);
        assert!(r.fees_released > 0);
        accounting_closure(&trace).unwrap();
    }

    #[test]
    fn report_round_trips_through_ndjson() {
        let trace = sim::run(&presets::preset("scenario2").unwrap().unwrap()).unwrap();
        let again = RunTrace::from_ndjson(&trace.to_ndjson()).unwrap();
        assert_eq!(again, trace);
        assert_eq!(compute(&again).unwrap(), compute(&trace).unwrap());
    }

    #[test]
    fn tampered_trace_fails_closure() {
        let mut trace = sim::run(&presets::preset("scenario1").unwrap().unwrap()).unwrap();
        let i = trace
            .records
            .iter()
            .position(
                |r| matches!(r, TraceRecord::Ledger { entry } if entry.memo == Memo::FeeReward),
            )
            .unwrap();
        if let TraceRecord::Ledger { entry } = &mut trace.records[i] {
            entry.amount -= 1;
        }
        assert!(accounting_closure(&trace).is_err());
    }

    #[test]
    fn malformed_inputs() {
        assert!(compute(&RunTrace::default()).is_err());
        assert!(RunTrace::from_ndjson("{\"record\":\"nope\"}").is_err());
    }

    #[test]
    fn single_report_is_incomparable() {
        let cfg = SimConfig {
            duration: 100.0,
            ..SimConfig::default()
        };
        let r = compute(&sim::run(&cfg).unwrap()).unwrap();
        assert!(compare_scalability(std::slice::from_ref(&r)).is_err());
    }

    #[test]
    fn verdict_rules() {
        let mk = |relayers, created, acked, throughput| MetricsReport {
            seed: 1,
            relayers,
            environment: "e".into(),
            duration: 1.0,
            created,
            acked,
            timed_out: 0,
            fee_flagged: 0,
            throughput,
            latency: None,
            assignment_delay: None,
            per_relayer: BTreeMap::new(),
            duplicate_reverts: 0,
            reverts: BTreeMap::new(),
            allocation_histogram: BTreeMap::new(),
            allocation_chi_square_p: None,
            delivery_share_top1: 0.0,
            fees_released: 0,
            miner_income: 0,
        };
        let v =
            compare_scalability(&[mk(1, 9, 1, 1.0), mk(2, 9, 2, 2.0), mk(4, 9, 4, 4.0)]).unwrap();
        assert!(v.monotone);
        assert!(!v.flat_within(0.05));
        let stalled = compare_scalability(&[mk(1, 9, 2, 2.0), mk(2, 9, 2, 2.0)]).unwrap();
        assert!(!stalled.monotone);
        let exhausted = compare_scalability(&[mk(1, 2, 2, 2.0), mk(2, 2, 2, 2.0)]).unwrap();
        assert!(exhausted.monotone);
        assert!(exhausted.flat_within(0.0));
        assert!(compare_scalability(&[mk(2, 9, 1, 1.0), mk(1, 9, 1, 1.0)]).is_err());
    }
}
