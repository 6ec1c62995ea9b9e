//! Machine verdicts for `--check`.

use std::collections::BTreeMap;

use serde::Serialize;
use xcrelay::chain::{ExecResult, PayloadKind};
use xcrelay::coordinator::{AllocationMode, CoordinatorError, CoordinatorEvent};
use xcrelay::metrics::{self, MetricsReport};
use xcrelay::relayer::StrategyKind;
use xcrelay::sim::SimConfig;
use xcrelay::trace::RunTrace;
use xcrelay::{Address, ChainId, Height, TxId};

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub check: String,
    pub seed: u64,
    pub relayers: usize,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    fn new(check: &str, report: &MetricsReport, outcome: Result<String, String>) -> Verdict {
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        Verdict {
            check: check.to_string(),
            seed: report.seed,
            relayers: report.relayers,
            passed,
            detail,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

/// Checks that need only one run.
pub fn per_run(scenario: Option<&str>, trace: &RunTrace, report: &MetricsReport) -> Vec<Verdict> {
    let mut out = vec![Verdict::new("conservation", report, conservation(trace))];
    let cfg = trace.config().expect("trace from the engine has a header");
    let specific = match scenario {
        Some("scenario1") => Some(race(cfg, trace)),
        Some("scenario2") => Some(overbid(cfg, trace)),
        Some("scenario3") => Some(subset_first(cfg, trace)),
        Some("fairness") => Some(fairness(report)),
        Some("accountability") => Some(accountability(cfg, trace, report)),
        Some("approach2-delay") => Some(assignment_delay(cfg, report)),
        _ => None,
    };
    if let (Some(name), Some(outcome)) = (scenario, specific) {
        out.push(Verdict::new(name, report, outcome));
    }
    out
}

/// Scalability sweep checks, one verdict per seed.
pub fn scalability(coordinated: &[MetricsReport], baseline: &[MetricsReport]) -> Vec<Verdict> {
    let mut by_seed: BTreeMap<u64, (Vec<MetricsReport>, Vec<MetricsReport>)> = BTreeMap::new();
    for r in coordinated {
        by_seed.entry(r.seed).or_default().0.push(r.clone());
    }
    for r in baseline {
        by_seed.entry(r.seed).or_default().1.push(r.clone());
    }
    by_seed
        .into_values()
        .map(|(c, b)| {
            let outcome = sweep(&c, &b);
            Verdict {
                relayers: c.last().map_or(0, |r| r.relayers),
                ..Verdict::new("scalability", &c[0], outcome)
            }
        })
        .collect()
}

fn sweep(coordinated: &[MetricsReport], baseline: &[MetricsReport]) -> Result<String, String> {
    let v = metrics::compare_scalability(coordinated).map_err(|e| e.to_string())?;
    let strict = coordinated
        .windows(2)
        .all(|w| w[1].throughput > w[0].throughput);
    ensure!(
        strict,
        "coordinated throughput not strictly increasing: {:?}",
        v.points
    );
    let b = metrics::compare_scalability(baseline).map_err(|e| e.to_string())?;
    ensure!(
        b.flat_within(0.05),
        "competitive throughput moved {:.1}% from one relayer",
        100.0 * b.max_relative_deviation
    );
    Ok(format!(
        "coordinated {:?}; competitive within {:.1}%",
        v.points,
        100.0 * b.max_relative_deviation
    ))
}

fn conservation(trace: &RunTrace) -> Result<String, String> {
    if let Some(v) = trace.violations().first() {
        return Err(v.clone());
    }
    metrics::accounting_closure(trace)?;
    Ok("balances conserved and accounted".into())
}

fn per_task_net(trace: &RunTrace) -> BTreeMap<TxId, BTreeMap<Address, i128>> {
    let mut out: BTreeMap<TxId, BTreeMap<Address, i128>> = BTreeMap::new();
    for (_, _, _, tx) in trace.included_txs() {
        if let (Some(r), true) = (tx.request, tx.kind != PayloadKind::Transfer) {
            *out.entry(r)
                .or_default()
                .entry(tx.submitter.clone())
                .or_default() -= (tx.gas_price * tx.gas_units) as i128;
        }
    }
    for (_, _, _, e) in trace.events() {
        if let CoordinatorEvent::TaskAcked {
            request,
            payee,
            fee,
            ..
        } = e
        {
            *out.entry(*request)
                .or_default()
                .entry(payee.clone())
                .or_default() += *fee as i128;
        }
    }
    out
}

fn deliveries(trace: &RunTrace) -> Vec<(Height, &xcrelay::trace::TxSummary)> {
    trace
        .included_txs()
        .filter(|(c, _, _, t)| *c == ChainId::B && t.kind == PayloadKind::DeliverTx)
        .map(|(_, h, _, t)| (h, t))
        .collect()
}

fn race(cfg: &SimConfig, trace: &RunTrace) -> Result<String, String> {
    let win =
        cfg.workload.fee as i128 - cfg.gas.deliver_tx as i128 - cfg.gas.prove_delivery as i128;
    let nets = per_task_net(trace);
    ensure!(!nets.is_empty(), "no tasks");
    let mut losers = 0;
    for (task, by) in &nets {
        let winners: Vec<_> = by.values().filter(|n| **n > 0).collect();
        ensure!(
            winners == [&win],
            "task {}: winning nets {winners:?}, expected [{win}]",
            task.short()
        );
        losers += by.values().filter(|n| **n < 0).count();
    }
    let dups = deliveries(trace)
        .iter()
        .filter(|(_, t)| t.result == ExecResult::Reverted(CoordinatorError::DuplicateDelivery))
        .count();
    ensure!(
        dups == losers,
        "{dups} duplicate reverts for {losers} losing submissions"
    );
    Ok(format!(
        "{} tasks, one winner each at {win}, {dups} duplicate reverts",
        nets.len()
    ))
}

fn overbid(cfg: &SimConfig, trace: &RunTrace) -> Result<String, String> {
    let g = cfg
        .agents
        .iter()
        .find(|g| matches!(g.strategy, StrategyKind::CompetitiveOverbid { .. }))
        .ok_or("no overbidding relayer")?;
    let StrategyKind::CompetitiveOverbid { premium } = g.strategy else {
        unreachable!()
    };
    let names = g.member_names();
    let expect = cfg.workload.fee as i128
        - (g.gas_price + premium) as i128 * cfg.gas.deliver_tx as i128
        - g.gas_price as i128 * cfg.gas.prove_delivery as i128;
    let default_win =
        cfg.workload.fee as i128 - cfg.gas.deliver_tx as i128 - cfg.gas.prove_delivery as i128;
    ensure!(
        expect < default_win,
        "overbid net {expect} is not below {default_win}"
    );
    let won: Vec<_> = deliveries(trace)
        .into_iter()
        .filter(|(_, t)| t.result.is_success())
        .collect();
    ensure!(!won.is_empty(), "no deliveries");
    ensure!(
        won.iter()
            .all(|(_, t)| names.iter().any(|n| n == t.submitter.as_str())),
        "overbidder lost a task"
    );
    for (task, by) in per_task_net(trace) {
        let n = by
            .iter()
            .find(|(a, _)| names.iter().any(|x| x == a.as_str()))
            .map_or(0, |(_, n)| *n);
        ensure!(
            n == expect,
            "task {}: overbidder net {n}, expected {expect}",
            task.short()
        );
    }
    Ok(format!(
        "overbidder wins {} tasks at {expect} each, default winner would net {default_win}",
        won.len()
    ))
}

fn subset_first(cfg: &SimConfig, trace: &RunTrace) -> Result<String, String> {
    let g = cfg
        .agents
        .iter()
        .find(|g| matches!(g.strategy, StrategyKind::CompetitiveSubsetFirst { .. }))
        .ok_or("no subset-first relayer")?;
    let names = g.member_names();
    let d = deliveries(trace);
    let (mine, rest): (Vec<_>, Vec<_>) = d
        .iter()
        .partition(|(_, t)| names.iter().any(|n| n == t.submitter.as_str()));
    let h = mine
        .iter()
        .map(|(h, _)| *h)
        .min()
        .ok_or("subset scanner never delivered")?;
    let other = rest
        .iter()
        .map(|(h, _)| *h)
        .min()
        .ok_or("full scanners never delivered")?;
    ensure!(
        h < other,
        "subset scanner landed at {h}, full scanners at {other}"
    );
    ensure!(
        mine.iter()
            .filter(|(x, _)| *x == h)
            .all(|(_, t)| t.result.is_success()),
        "subset scanner lost an early delivery"
    );
    Ok(format!(
        "subset scanner lands at height {h}, full scanners at {other}"
    ))
}

fn fairness(report: &MetricsReport) -> Result<String, String> {
    let m = report.allocation_histogram.len();
    ensure!(m > 0 && report.created > 0, "nothing allocated");
    let expected = report.created as f64 / m as f64;
    let worst = report
        .allocation_histogram
        .values()
        .map(|n| (*n as f64 - expected).abs() / expected)
        .fold(0.0, f64::max);
    ensure!(
        worst <= 0.05,
        "a relayer is {:.1}% off an even share",
        100.0 * worst
    );
    let p = report
        .allocation_chi_square_p
        .ok_or("no chi-square statistic")?;
    ensure!(p > 0.01, "chi-square p = {p}");
    Ok(format!("max deviation {:.1}%, p = {p:.3}", 100.0 * worst))
}

fn accountability(
    cfg: &SimConfig,
    trace: &RunTrace,
    report: &MetricsReport,
) -> Result<String, String> {
    let names = metrics::relayer_names(trace);
    let mut assigned = BTreeMap::new();
    let mut timeouts: BTreeMap<&Address, u64> = BTreeMap::new();
    let mut total = 0;
    for (_, _, _, e) in trace.events() {
        match e {
            CoordinatorEvent::TaskCreated {
                request,
                assigned: a,
                ..
            }
            | CoordinatorEvent::TaskAssigned {
                request,
                assigned: a,
                ..
            } => {
                assigned.insert(*request, a.clone());
            }
            CoordinatorEvent::TaskTimedOut { request, .. } => {
                total += 1;
                for id in &assigned[request] {
                    *timeouts.entry(&names[id]).or_default() += 1;
                }
            }
            CoordinatorEvent::TaskAcked { request, payee, .. } => {
                ensure!(
                    assigned[request].iter().any(|id| &names[id] == payee),
                    "fee for {} paid to non-assignee {payee}",
                    request.short()
                );
            }
            _ => {}
        }
    }
    ensure!(total > 0, "no task timed out");
    for addr in names.values() {
        let n = timeouts.get(addr).copied().unwrap_or(0);
        let slashed = report
            .per_relayer
            .get(addr.as_str())
            .map_or(0, |p| p.slashed);
        ensure!(
            slashed == n * cfg.coordinator.slash_per_timeout,
            "{addr} slashed {slashed} for {n} timeouts"
        );
    }
    for g in cfg
        .agents
        .iter()
        .filter(|g| g.strategy == StrategyKind::TaskThief)
    {
        for name in g.member_names() {
            let net = report.per_relayer.get(&name).map_or(0, |p| p.net);
            ensure!(net < 0, "{name} nets {net}");
        }
    }
    Ok(format!(
        "{total} timeouts slashed exactly, fees only to assignees"
    ))
}

fn assignment_delay(cfg: &SimConfig, report: &MetricsReport) -> Result<String, String> {
    let d = report.assignment_delay.as_ref().ok_or("no assignments")?;
    match cfg.coordinator.mode {
        AllocationMode::Approach2 => {
            let block = cfg.chain_a.block_interval;
            ensure!(
                d.min >= block,
                "assignment after {}s, block interval {block}s",
                d.min
            );
            Ok(format!("{} assignments, min delay {}s", d.count, d.min))
        }
        _ => {
            ensure!(
                d.max == 0.0,
                "immediate allocation delayed up to {}s",
                d.max
            );
            Ok(format!("{} assignments, all immediate", d.count))
        }
    }
}
