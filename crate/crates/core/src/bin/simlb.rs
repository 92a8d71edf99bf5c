use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use simlb::balancer::BalancerKind;
use simlb::config::Config;
use simlb::engine::SimError;
use simlb::output::{compare_dirs, unix_now, write_outputs, write_stats, SummaryRow};
use simlb::scenario::{run_scenario, Scenario, ScenarioConfig, ScenarioError};

#[derive(Parser)]
#[command(name = "simlb", version, about = "Score-based vs throttled load balancing in a simulated multi-DC cloud")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write CSV/JSON results.
    Run(RunArgs),
    /// Pair two result directories point by point and write a stats CSV.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BalancerArg {
    Sbdlb,
    Throttled,
    Both,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, value_parser = parse_scenario)]
    scenario: Scenario,
    #[arg(long, value_enum, default_value = "both")]
    balancer: BalancerArg,
    /// Base seed; sweep point i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Batch-size multiplier in (0, 1].
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated DC counts.
    #[arg(long, value_delimiter = ',')]
    dcs: Option<Vec<usize>>,
    /// Comma-separated VMs-per-DC counts.
    #[arg(long, value_delimiter = ',')]
    vms: Option<Vec<usize>>,
    /// Total tasks per run (flat batch plan only).
    #[arg(long)]
    tasks: Option<usize>,
    /// Task threshold for the score-based balancer.
    #[arg(long)]
    threshold: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Independent repetitions per sweep point.
    #[arg(long, default_value_t = 1)]
    reps: usize,
}

#[derive(clap::Args)]
struct CompareArgs {
    /// Baseline results directory.
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Balancer label to take from `--a` when it holds several.
    #[arg(long)]
    label_a: Option<String>,
    #[arg(long)]
    label_b: Option<String>,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse()
}

const EXIT_CONFIG: u8 = 1;
const EXIT_INVARIANT: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Compare(args) => compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let invariant = e.chain().any(|c| {
                matches!(c.downcast_ref::<ScenarioError>(), Some(ScenarioError::Simulation { source: SimError::Invariant { .. }, .. }))
                    || matches!(c.downcast_ref::<SimError>(), Some(SimError::Invariant { .. }))
            });
            ExitCode::from(if invariant { EXIT_INVARIANT } else { EXIT_CONFIG })
        }
    }
}

fn run(args: RunArgs) -> Result<()> {
    let config = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let mut cfg = ScenarioConfig::new(args.scenario, config);
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(scale) = args.scale {
        cfg.scale = scale;
    }
    if let Some(dcs) = args.dcs {
        cfg.dcs = dcs;
    }
    if let Some(vms) = args.vms {
        cfg.vms_per_dc = vms;
    }
    if let Some(t) = args.threshold {
        cfg.thresholds = vec![t];
    }
    cfg.total_tasks = args.tasks;
    cfg.reps = args.reps;
    cfg.balancers = match args.balancer {
        BalancerArg::Sbdlb => vec![BalancerKind::Sbdlb],
        BalancerArg::Throttled => vec![BalancerKind::Throttled],
        BalancerArg::Both => vec![BalancerKind::Throttled, BalancerKind::Sbdlb],
    };
    cfg.trace = std::env::var("SIMLB_TRACE").is_ok_and(|v| v == "1");

    let started = unix_now();
    let out = run_scenario(&cfg)?;
    write_outputs(&out, &args.out, started).with_context(|| format!("writing results to {}", args.out.display()))?;

    println!("{:<36} {:>14} {:>16} {:>14}", "run", "avg_resp_ms", "avg_dc_proc_ms", "cost_usd");
    for r in &out.runs {
        let row = SummaryRow::of(r);
        println!("{:<36} {:>14.1} {:>16.1} {:>14.2}", row.run_id, row.avg_response_ms, row.avg_dc_processing_ms, row.total_cost_usd);
    }
    for c in &out.comparisons {
        let p = c.test.as_ref().map_or("n/a".to_string(), |t| format!("{:.3e}", t.p_two_sided));
        println!("{} {} vs {}: improvement {:.2}% (n={}, p={p})", c.metric, c.balancer_a, c.balancer_b, c.improvement_pct, c.n);
    }
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let rows = compare_dirs(&args.a, args.label_a.as_deref(), &args.b, args.label_b.as_deref())?;
    write_stats(&args.out, &rows)?;
    for r in &rows {
        println!("{}: {} vs {} improvement {:.2}% (n={})", r.metric, r.balancer_a, r.balancer_b, r.improvement_pct, r.n);
    }
    Ok(())
}
