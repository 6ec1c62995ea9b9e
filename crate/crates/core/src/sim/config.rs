use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chain::{CostTable, Ordering};
use crate::coordinator::CoordinatorParams;
use crate::relayer::{AgentStrategy, StrategyKind};
use crate::types::{Canonical, SimTime, Tokens};

/// Per-chain block production.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    /// Seconds between blocks.
    pub block_interval: f64,
    /// Transactions per block.
    pub max_txs: usize,
}

impl Default for ChainSection {
    fn default() -> Self {
        ChainSection {
            block_interval: 10.0,
            max_txs: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Burst {
    /// Seconds.
    pub at: f64,
    pub count: usize,
}

/// When user transfers are injected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Pattern {
    #[default]
    None,
    /// One transfer every `interval` seconds in `[start, end)`.
    Constant {
        interval: f64,
        #[serde(default)]
        start: f64,
        end: Option<f64>,
    },
    Burst {
        bursts: Vec<Burst>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub pattern: Pattern,
    /// Number of source-chain users sending transfers.
    pub users: usize,
    pub user_balance: Tokens,
    pub amount_min: Tokens,
    pub amount_max: Tokens,
    pub fee: Tokens,
    /// Timeout, in destination blocks past the destination head seen at
    /// submission.
    pub timeout_blocks: u64,
    pub gas_price: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            pattern: Pattern::None,
            users: 4,
            user_balance: 1_000_000,
            amount_min: 1,
            amount_max: 100,
            fee: 30,
            timeout_blocks: 20,
            gas_price: 1,
        }
    }
}

/// A group of identically configured agents. A group of one is named
/// `name`; larger groups are named `name1`, `name2`, ...
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentGroup {
    pub name: String,
    #[serde(default = "one")]
    pub count: usize,
    pub strategy: StrategyKind,
    #[serde(default = "one_f64")]
    pub scan_latency: f64,
    #[serde(default = "one_u64")]
    pub gas_price: u64,
    #[serde(default)]
    pub max_tasks_per_scan: Option<usize>,
    /// Starting balance on each chain.
    #[serde(default = "agent_balance")]
    pub balance: Tokens,
}

fn one() -> usize {
    1
}
fn one_f64() -> f64 {
    1.0
}
fn one_u64() -> u64 {
    1
}
fn agent_balance() -> Tokens {
    1_000_000
}

impl AgentGroup {
    pub fn new(name: &str, count: usize, strategy: StrategyKind) -> Self {
        AgentGroup {
            name: name.to_string(),
            count,
            strategy,
            scan_latency: 1.0,
            gas_price: 1,
            max_tasks_per_scan: None,
            balance: agent_balance(),
        }
    }

    pub fn member_names(&self) -> Vec<String> {
        if self.count == 1 {
            vec![self.name.clone()]
        } else {
            (1..=self.count)
                .map(|i| format!("{}{i}", self.name))
                .collect()
        }
    }

    pub fn strategy(&self) -> AgentStrategy {
        AgentStrategy {
            variant: self.strategy.clone(),
            scan_latency: SimTime::from_secs_f64(self.scan_latency),
            gas_price: self.gas_price,
            max_tasks_per_scan: self.max_tasks_per_scan,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    /// Seconds of simulated time.
    pub duration: f64,
    /// Upper bound on message delay, seconds.
    pub network_delay: f64,
    /// Seconds between agent polls.
    pub agent_tick: f64,
    pub ordering: Ordering,
    pub chain_a: ChainSection,
    pub chain_b: ChainSection,
    pub coordinator: CoordinatorParams,
    pub gas: CostTable,
    pub workload: WorkloadConfig,
    pub agents: Vec<AgentGroup>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 42,
            duration: 200.0,
            network_delay: 0.5,
            agent_tick: 1.0,
            ordering: Ordering::FeePriority,
            chain_a: ChainSection::default(),
            chain_b: ChainSection::default(),
            coordinator: CoordinatorParams::default(),
            gas: CostTable::default(),
            workload: WorkloadConfig::default(),
            agents: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldProblem {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config:{}", list(.0))]
    Invalid(Vec<FieldProblem>),
}

fn list(problems: &[FieldProblem]) -> String {
    problems.iter().map(|p| format!("\n  {p}")).collect()
}

impl fmt::Display for FieldProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

pub const USER_PREFIX: &str = "user";
pub const RECIPIENT_PREFIX: &str = "recipient";

impl SimConfig {
    /// Parse one TOML document on top of the defaults.
    pub fn from_toml(text: &str) -> Result<SimConfig, ConfigError> {
        Self::from_layers(&[text])
    }

    /// Merge TOML documents left to right on top of the defaults. Tables are
    /// merged key by key; anything else is replaced.
    pub fn from_layers(layers: &[&str]) -> Result<SimConfig, ConfigError> {
        let mut merged = toml::Table::new();
        for text in layers {
            let table: toml::Table = text
                .parse()
                .map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))?;
            merge(&mut merged, table);
        }
        let cfg: SimConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn agent_names(&self) -> Vec<String> {
        self.agents.iter().flat_map(|g| g.member_names()).collect()
    }

    pub fn user_names(&self) -> Vec<String> {
        (0..self.workload.users)
            .map(|i| format!("{USER_PREFIX}{i}"))
            .collect()
    }

    /// Hash of everything except the seed and the agent roster: runs that
    /// share it differ only in who relays.
    pub fn environment_fingerprint(&self) -> String {
        let mut env = self.clone();
        env.seed = 0;
        env.agents.clear();
        Canonical::new("xcrelay/env")
            .str(&env.to_toml())
            .finish()
            .to_hex()
    }

    pub fn fingerprint(&self) -> String {
        Canonical::new("xcrelay/config")
            .str(&self.to_toml())
            .finish()
            .to_hex()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut out = Vec::new();
        let mut bad = |field: &str, message: String| {
            out.push(FieldProblem {
                field: field.to_string(),
                message,
            })
        };
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.duration) {
            bad("duration", "must be positive".into());
        }
        if !positive(self.network_delay) {
            bad("network_delay", "must be positive".into());
        }
        if !positive(self.agent_tick) {
            bad("agent_tick", "must be positive".into());
        }
        for (name, c) in [("chain_a", &self.chain_a), ("chain_b", &self.chain_b)] {
            if !positive(c.block_interval) {
                bad(&format!("{name}.block_interval"), "must be positive".into());
            }
            if c.max_txs == 0 {
                bad(&format!("{name}.max_txs"), "must be at least 1".into());
            }
        }
        let slower = self.chain_a.block_interval.max(self.chain_b.block_interval);
        if positive(slower) && self.duration < 10.0 * slower {
            bad(
                "duration",
                format!(
                    "must cover at least 10 blocks of the slower chain ({}s)",
                    10.0 * slower
                ),
            );
        }
        for (field, msg) in self.coordinator.problems() {
            bad(&format!("coordinator.{field}"), msg);
        }
        let w = &self.workload;
        if w.amount_min == 0 {
            bad("workload.amount_min", "must be at least 1".into());
        }
        if w.amount_min > w.amount_max {
            bad("workload.amount_max", "must not be below amount_min".into());
        }
        if w.timeout_blocks == 0 {
            bad("workload.timeout_blocks", "must be at least 1".into());
        }
        match &w.pattern {
            Pattern::None => {}
            Pattern::Constant {
                interval,
                start,
                end,
            } => {
                if !positive(*interval) {
                    bad("workload.pattern.interval", "must be positive".into());
                }
                if !(start.is_finite() && *start >= 0.0) {
                    bad("workload.pattern.start", "must be non-negative".into());
                }
                if end.is_some_and(|e| e < *start) {
                    bad("workload.pattern.end", "must not precede start".into());
                }
            }
            Pattern::Burst { bursts } => {
                for (i, b) in bursts.iter().enumerate() {
                    if !(b.at.is_finite() && b.at >= 0.0) {
                        bad(
                            &format!("workload.pattern.bursts[{i}].at"),
                            "must be non-negative".into(),
                        );
                    }
                }
            }
        }
        if w.pattern != Pattern::None && w.users == 0 {
            bad(
                "workload.users",
                "must be at least 1 when a pattern is set".into(),
            );
        }
        let mut seen = BTreeSet::new();
        for (i, g) in self.agents.iter().enumerate() {
            let at = |f: &str| format!("agents[{i}].{f}");
            if g.count == 0 {
                bad(&at("count"), "must be at least 1".into());
            }
            if !positive(g.scan_latency) {
                bad(&at("scan_latency"), "must be positive".into());
            }
            if let StrategyKind::CompetitiveSubsetFirst { batch: 0 } = g.strategy {
                bad(&at("strategy.batch"), "must be at least 1".into());
            }
            if g.max_tasks_per_scan == Some(0) {
                bad(&at("max_tasks_per_scan"), "must be at least 1".into());
            }
            for name in g.member_names() {
                let reserved = name == crate::chain::ChainState::MINER
                    || name.starts_with(USER_PREFIX)
                    || name.starts_with(RECIPIENT_PREFIX);
                if reserved {
                    bad(
                        &at("name"),
                        format!("`{name}` collides with a reserved account"),
                    );
                } else if !seen.insert(name.clone()) {
                    bad(&at("name"), format!("duplicate agent `{name}`"));
                }
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(out))
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SimConfig::default().validate().unwrap();
        assert_eq!(SimConfig::from_toml("").unwrap(), SimConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = SimConfig::default();
        c.agents.push(AgentGroup::new(
            "R",
            3,
            StrategyKind::CompetitiveOverbid { premium: 1 },
        ));
        c.workload.pattern = Pattern::Burst {
            bursts: vec![Burst { at: 1.0, count: 3 }],
        };
        assert_eq!(SimConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn layers_merge_tables() {
        let c = SimConfig::from_layers(&[
            "[chain_a]\nblock_interval = 5.0\nmax_txs = 7",
            "[chain_a]\nmax_txs = 9",
        ])
        .unwrap();
        assert_eq!(c.chain_a.block_interval, 5.0);
        assert_eq!(c.chain_a.max_txs, 9);
    }

    #[test]
    fn field_level_diagnostics() {
        let err = SimConfig::from_toml(
            "network_delay = 0.0\n[chain_b]\nblock_interval = -1.0\n[coordinator]\nreporter_share = 0.9",
        )
        .unwrap_err();
        let ConfigError::Invalid(problems) = err else {
            panic!("{err}")
        };
        let fields: Vec<_> = problems.iter().map(|p| p.field.as_str()).collect();
        assert!(fields.contains(&"network_delay"));
        assert!(fields.contains(&"chain_b.block_interval"));
        assert!(fields.iter().any(|f| f.starts_with("coordinator.")));
    }

    #[test]
    fn short_duration_rejected() {
        let err = SimConfig::from_toml("duration = 50.0").unwrap_err();
        assert!(err.to_string().contains("duration"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            SimConfig::from_toml("bogus = 1"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn duplicate_and_reserved_names() {
        let mut c = SimConfig::default();
        c.agents
            .push(AgentGroup::new("R", 2, StrategyKind::Coordinated));
        c.agents
            .push(AgentGroup::new("R1", 1, StrategyKind::Coordinated));
        c.agents
            .push(AgentGroup::new("miner", 1, StrategyKind::Coordinated));
        let ConfigError::Invalid(p) = c.validate().unwrap_err() else {
            panic!()
        };
        assert_eq!(p.len(), 2);
    }
}
