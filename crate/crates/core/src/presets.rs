//! Named scenarios, as TOML layered over the default config.

use crate::sim::{ConfigError, SimConfig};

pub const NAMES: [&str; 7] = [
    "scenario1",
    "scenario2",
    "scenario3",
    "scalability",
    "fairness",
    "accountability",
    "approach2-delay",
];

/// Three tasks in one source block, raced by three relayers.
const SCENARIO_BASE: &str = r#"
duration = 100.0
network_delay = 0.5

[coordinator]
mode = "competitive"

[workload]
users = 3
fee = 30
pattern = { kind = "burst", bursts = [{ at = 1.0, count = 3 }] }
"#;

const SCENARIO1: &str = r#"
[[agents]]
name = "R"
count = 3
strategy = { kind = "competitive-default" }
scan_latency = 1.0
"#;

const SCENARIO2: &str = r#"
[[agents]]
name = "R"
count = 2
strategy = { kind = "competitive-default" }
scan_latency = 1.0

[[agents]]
name = "R3"
strategy = { kind = "competitive-overbid", premium = 1 }
scan_latency = 1.0
"#;

const SCENARIO3: &str = r#"
[[agents]]
name = "R"
count = 2
strategy = { kind = "competitive-default" }
scan_latency = 4.0

[[agents]]
name = "R3"
strategy = { kind = "competitive-subset-first", batch = 2 }
scan_latency = 4.0
"#;

/// Coordinated relayers under a load no relayer count in the sweep can
/// absorb. Relayer count is set with [`with_relayers`].
const SCALABILITY: &str = r#"
duration = 400.0

[chain_a]
max_txs = 1000

[chain_b]
max_txs = 1000

[coordinator]
mode = "approach1"

[workload]
users = 8
pattern = { kind = "constant", interval = 0.2, start = 15.0 }

[[agents]]
name = "R"
count = 4
strategy = { kind = "coordinated" }
scan_latency = 2.0
max_tasks_per_scan = 5
"#;

/// The same environment raced by competitive relayers.
pub const SCALABILITY_BASELINE: &str = r#"
[coordinator]
mode = "competitive"

[[agents]]
name = "R"
count = 4
strategy = { kind = "competitive-default" }
scan_latency = 2.0
max_tasks_per_scan = 5
"#;

const FAIRNESS: &str = r#"
duration = 1020.0

[chain_a]
max_txs = 400

[chain_b]
max_txs = 400

[coordinator]
mode = "approach1"

[workload]
users = 16
pattern = { kind = "constant", interval = 0.1, start = 15.0, end = 1015.0 }

[[agents]]
name = "R"
count = 4
strategy = { kind = "coordinated" }
scan_latency = 0.01
"#;

/// Honest, lazy, deserting and thieving relayers under two watchers.
const ACCOUNTABILITY: &str = r#"
duration = 600.0

[coordinator]
mode = "approach1"

[workload]
users = 4
timeout_blocks = 6
pattern = { kind = "constant", interval = 4.0, start = 15.0, end = 400.0 }

[[agents]]
name = "honest"
count = 2
strategy = { kind = "coordinated" }
scan_latency = 1.0

[[agents]]
name = "abandoner"
strategy = { kind = "abandoner" }
scan_latency = 1.0

[[agents]]
name = "silent"
count = 3
strategy = { kind = "silent-after-withdraw" }

[[agents]]
name = "thief"
strategy = { kind = "task-thief" }
scan_latency = 10.0
max_tasks_per_scan = 1

[[agents]]
name = "watcher"
count = 2
strategy = { kind = "timeout-reporter" }
"#;

const APPROACH2_DELAY: &str = r#"
duration = 300.0

[coordinator]
mode = "approach2"

[workload]
users = 4
pattern = { kind = "constant", interval = 3.0, start = 15.0, end = 250.0 }

[[agents]]
name = "R"
count = 4
strategy = { kind = "coordinated" }
scan_latency = 1.0
"#;

/// TOML layers of a preset, in merge order.
pub fn layers(name: &str) -> Option<Vec<&'static str>> {
    Some(match name {
        "scenario1" => vec![SCENARIO_BASE, SCENARIO1],
        "scenario2" => vec![SCENARIO_BASE, SCENARIO2],
        "scenario3" => vec![SCENARIO_BASE, SCENARIO3],
        "scalability" => vec![SCALABILITY],
        "fairness" => vec![FAIRNESS],
        "accountability" => vec![ACCOUNTABILITY],
        "approach2-delay" => vec![APPROACH2_DELAY],
        _ => return None,
    })
}

pub fn preset(name: &str) -> Option<Result<SimConfig, ConfigError>> {
    layers(name).map(|l| SimConfig::from_layers(&l))
}

/// Set every relayer group's size to `n`, leaving watchers alone.
pub fn with_relayers(mut cfg: SimConfig, n: usize) -> SimConfig {
    for g in cfg.agents.iter_mut() {
        if g.strategy != crate::relayer::StrategyKind::TimeoutReporter {
            g.count = n;
        }
    }
    cfg
}

/// The competitive counterpart of a scalability config: same environment,
/// competitive relayers.
pub fn scalability_baseline(cfg: &SimConfig) -> Result<SimConfig, ConfigError> {
    let own = cfg.to_toml();
    // Arrays are replaced wholesale, so the roster becomes the baseline's.
    let base = SimConfig::from_layers(&[&own, SCALABILITY_BASELINE])?;
    let n = cfg.agents.first().map_or(1, |g| g.count);
    Ok(with_relayers(base, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_is_valid() {
        for name in NAMES {
            let cfg = preset(name)
                .unwrap()
                .unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(!cfg.agents.is_empty(), "{name}");
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn baseline_keeps_environment() {
        let cfg = with_relayers(preset("scalability").unwrap().unwrap(), 2);
        let base = scalability_baseline(&cfg).unwrap();
        assert_eq!(base.environment_fingerprint(), {
            let mut c = cfg.clone();
            c.coordinator.mode = base.coordinator.mode;
            c.environment_fingerprint()
        });
        assert_eq!(base.agents.len(), 1);
        assert_eq!(base.agents[0].count, 2);
    }
}
