//! `simulate`: run presets or config files, sweep seeds and relayer counts,
//! write reports and traces.

mod checks;

use std::fs;
use std::io::Write as _;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use xcrelay::coordinator::AllocationMode;
use xcrelay::metrics::{self, MetricsReport};
use xcrelay::presets;
use xcrelay::sim::{self, SimConfig};

use checks::Verdict;

const SCALABILITY_SWEEP: [usize; 4] = [1, 2, 4, 8];

#[derive(Debug, Parser)]
#[command(
    name = "simulate",
    version,
    about = "Run cross-chain relaying simulations"
)]
struct Args {
    /// Named preset.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(presets::NAMES))]
    scenario: Option<String>,
    /// TOML config, layered over the preset if both are given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Inclusive seed range, e.g. `1..5`.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<RangeInclusive<u64>>,
    /// Comma-separated relayer counts; every relaying group is resized.
    #[arg(long, value_delimiter = ',')]
    relayers: Vec<usize>,
    #[arg(long, value_enum)]
    allocation: Option<Allocation>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Write only this report format. Both are written by default.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Also write the full event trace.
    #[arg(long)]
    trace: bool,
    /// Judge the runs and exit 2 if any verdict fails.
    #[arg(long)]
    check: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Allocation {
    Approach1,
    Approach2,
    Competitive,
}

impl From<Allocation> for AllocationMode {
    fn from(a: Allocation) -> AllocationMode {
        match a {
            Allocation::Approach1 => AllocationMode::Approach1,
            Allocation::Approach2 => AllocationMode::Approach2,
            Allocation::Competitive => AllocationMode::Competitive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn parse_seeds(s: &str) -> Result<RangeInclusive<u64>, String> {
    let (a, b) = s.split_once("..").ok_or("expected <start>..<end>")?;
    let a: u64 = a.trim().parse().map_err(|e| format!("start: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("end: {e}"))?;
    if a > b {
        return Err(format!("empty range {a}..{b}"));
    }
    Ok(a..=b)
}

#[derive(Debug, Serialize)]
struct Output {
    scenario: Option<String>,
    runs: Vec<MetricsReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    baseline: Vec<MetricsReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    checks: Vec<Verdict>,
}

struct Plan {
    seed: u64,
    relayers: Option<usize>,
    config: SimConfig,
}

struct Done {
    report: MetricsReport,
    verdicts: Vec<Verdict>,
}

enum Failure {
    Usage(String),
    Check,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Check) => ExitCode::from(2),
    }
}

fn base_config(args: &Args) -> Result<SimConfig, Failure> {
    let mut layers: Vec<String> = Vec::new();
    if let Some(name) = &args.scenario {
        let preset = presets::layers(name)
            .ok_or_else(|| Failure::Usage(format!("unknown scenario {name}")))?;
        layers.extend(preset.into_iter().map(String::from));
    }
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
        layers.push(text);
    }
    if layers.is_empty() {
        return Err(Failure::Usage("pass --scenario, --config or both".into()));
    }
    let refs: Vec<&str> = layers.iter().map(String::as_str).collect();
    let mut cfg = SimConfig::from_layers(&refs).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(a) = args.allocation {
        cfg.coordinator.mode = a.into();
    }
    Ok(cfg)
}

fn plans(args: &Args, base: &SimConfig) -> Result<Vec<Plan>, Failure> {
    let seeds: Vec<u64> = match (&args.seeds, args.seed) {
        (Some(r), _) => r.clone().collect(),
        (None, Some(s)) => vec![s],
        (None, None) => vec![base.seed],
    };
    let mut counts: Vec<Option<usize>> = args.relayers.iter().map(|n| Some(*n)).collect();
    if counts.is_empty() {
        if args.scenario.as_deref() == Some("scalability") {
            counts = SCALABILITY_SWEEP.iter().map(|n| Some(*n)).collect();
        } else {
            counts.push(None);
        }
    }
    let mut out = Vec::new();
    for &seed in &seeds {
        for &n in &counts {
            let mut config = SimConfig {
                seed,
                ..base.clone()
            };
            if let Some(n) = n {
                config = presets::with_relayers(config, n);
            }
            config
                .validate()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            out.push(Plan {
                seed,
                relayers: n,
                config,
            });
        }
    }
    Ok(out)
}

fn trace_name(plan: &Plan, single: bool, prefix: &str) -> String {
    if single {
        return format!("{prefix}trace.ndjson");
    }
    match plan.relayers {
        Some(n) => format!("{prefix}trace-seed{}-relayers{n}.ndjson", plan.seed),
        None => format!("{prefix}trace-seed{}.ndjson", plan.seed),
    }
}

fn run_all(args: &Args, plans: &[Plan], prefix: &str) -> Result<Vec<Done>, Failure> {
    let single = plans.len() == 1;
    let scenario = args.scenario.as_deref();
    plans
        .par_iter()
        .map(|plan| {
            let trace = sim::run(&plan.config).map_err(|e| Failure::Usage(e.to_string()))?;
            let report = metrics::compute(&trace).map_err(|e| Failure::Usage(e.to_string()))?;
            if args.trace {
                write(
                    &args.out.join(trace_name(plan, single, prefix)),
                    trace.to_ndjson().as_bytes(),
                )?;
            }
            let verdicts = if args.check && prefix.is_empty() {
                checks::per_run(scenario, &trace, &report)
            } else if args.check {
                checks::per_run(None, &trace, &report)
            } else {
                Vec::new()
            };
            Ok(Done { report, verdicts })
        })
        .collect()
}

fn execute(args: &Args) -> Result<(), Failure> {
    let base = base_config(args)?;
    let plans = plans(args, &base)?;
    fs::create_dir_all(&args.out)
        .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", args.out.display())))?;

    let done = run_all(args, &plans, "")?;
    let mut verdicts: Vec<Verdict> = Vec::new();
    let mut runs = Vec::new();
    for d in done {
        verdicts.extend(d.verdicts);
        runs.push(d.report);
    }

    let mut baseline = Vec::new();
    if args.check && args.scenario.as_deref() == Some("scalability") {
        let mut competitive = Vec::new();
        for p in &plans {
            let config = presets::scalability_baseline(&p.config)
                .map_err(|e| Failure::Usage(e.to_string()))?;
            competitive.push(Plan { config, ..*p });
        }
        for d in run_all(args, &competitive, "baseline-")? {
            verdicts.extend(d.verdicts);
            baseline.push(d.report);
        }
        verdicts.extend(checks::scalability(&runs, &baseline));
    }

    let output = Output {
        scenario: args.scenario.clone(),
        runs,
        baseline,
        checks: verdicts,
    };
    if args.format != Some(Format::Csv) {
        let json = serde_json::to_string_pretty(&output).expect("report serializes");
        write(
            &args.out.join("report.json"),
            format!("{json}\n").as_bytes(),
        )?;
    }
    if args.format != Some(Format::Json) {
        write(&args.out.join("report.csv"), &csv_rows(&output)?)?;
    }
    summarize(&output);

    if output.checks.iter().any(|v| !v.passed) {
        return Err(Failure::Check);
    }
    Ok(())
}

fn csv_rows(output: &Output) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Failure::Usage(format!("csv: {e}"));
    w.write_record(["variant", "seed", "relayers", "metric", "key", "value"])
        .map_err(fail)?;
    for (variant, reports) in [("main", &output.runs), ("baseline", &output.baseline)] {
        for r in reports.iter() {
            let (seed, n) = (r.seed.to_string(), r.relayers.to_string());
            for (metric, key, value) in metrics::rows(r) {
                w.write_record([variant, &seed, &n, &metric, &key, &value])
                    .map_err(fail)?;
            }
        }
    }
    w.into_inner()
        .map_err(|e| Failure::Usage(format!("csv: {e}")))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes)
        .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

fn summarize(output: &Output) {
    let mut out = std::io::stdout().lock();
    for r in &output.runs {
        let _ = writeln!(
            out,
            "seed {} relayers {}: {} created, {} acked, {} timed out, {:.3} tasks/s",
            r.seed, r.relayers, r.created, r.acked, r.timed_out, r.throughput
        );
        for (who, p) in &r.per_relayer {
            let _ = writeln!(out, "  {who:<12} {:<24} net {}", p.strategy, p.net);
        }
    }
    for v in &output.checks {
        let mark = if v.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(
            out,
            "{mark} {} (seed {}, relayers {}): {}",
            v.check, v.seed, v.relayers, v.detail
        );
    }
}
