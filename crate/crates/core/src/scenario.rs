//! Experiment orchestration: sweep points, balancer variants, repetitions and
//! the paired comparisons between them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balancer::{BalancerKind, Policy};
use crate::cloud::{build_cloud_with, CloudError, VmTier};
use crate::config::{Config, ConfigError};
use crate::engine::{simulate, tasks_per_vm, vm_dc_index, SimError, SimOptions};
use crate::kernel::SimTime;
use crate::metrics::{hourly_breakdown, records_from_tasks, summarize, MetricsError, RunSummary, TaskRecord};
use crate::stats::{paired_t_test, percent_improvement, PairedSample, TestResult};
use crate::workload::{build_batch_schedule, build_diurnal_plan, BatchPlan, Workload, SECONDS_PER_HOUR};

/// Seed offset between repetitions of the same sweep point.
pub const REP_SEED_STRIDE: u64 = 1000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error("run {run_id}: {source}")]
    Simulation { run_id: String, source: SimError },
    #[error("run {run_id}: {source}")]
    Metrics { run_id: String, source: MetricsError },
    #[error("sweeps do not match: {0}")]
    MismatchedSweeps(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    S1,
    S2,
    S3,
    S4,
    Threshold,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::S1 => "s1",
            Scenario::S2 => "s2",
            Scenario::S3 => "s3",
            Scenario::S4 => "s4",
            Scenario::Threshold => "threshold",
        }
    }

    fn is_diurnal(self) -> bool {
        self == Scenario::S4
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(Scenario::S1),
            "s2" => Ok(Scenario::S2),
            "s3" => Ok(Scenario::S3),
            "s4" => Ok(Scenario::S4),
            "threshold" => Ok(Scenario::Threshold),
            other => Err(format!("unknown scenario `{other}` (expected s1 | s2 | s3 | s4 | threshold)")),
        }
    }
}

/// Fully resolved description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub dcs: Vec<usize>,
    pub vms_per_dc: Vec<usize>,
    /// Overrides the batch plan's task total (flat plans only).
    pub total_tasks: Option<usize>,
    pub balancers: Vec<BalancerKind>,
    /// Score-based thresholds to run; more than one only for the threshold sweep.
    pub thresholds: Vec<usize>,
    pub seed: u64,
    pub scale: f64,
    pub reps: usize,
    pub trace: bool,
    /// Check every VM after every event, not just the ones the event touched.
    pub full_checks: bool,
    pub config: Config,
}

impl ScenarioConfig {
    /// Scenario defaults, with DC and VM counts taken from `config` when it sets them.
    pub fn new(scenario: Scenario, config: Config) -> Self {
        let (dcs, vms, thresholds): (Vec<usize>, Vec<usize>, Vec<usize>) = match scenario {
            Scenario::S1 => (vec![8], (1..=8).map(|k| 10 * k).collect(), vec![config.balancer.task_threshold]),
            Scenario::S2 => ((1..=8).collect(), vec![60], vec![config.balancer.task_threshold]),
            Scenario::S3 => (vec![8], vec![80], vec![config.balancer.task_threshold]),
            Scenario::S4 => (vec![8], vec![60], vec![config.balancer.task_threshold]),
            Scenario::Threshold => ((1..=8).collect(), vec![60], vec![2, 3, 4]),
        };
        let balancers = match scenario {
            Scenario::Threshold => vec![BalancerKind::Sbdlb],
            _ => vec![BalancerKind::Throttled, BalancerKind::Sbdlb],
        };
        Self {
            scenario,
            dcs: config.cloud.dcs.map_or(dcs, |d| vec![d]),
            vms_per_dc: config.cloud.vms_per_dc.map_or(vms, |v| vec![v]),
            total_tasks: None,
            balancers,
            thresholds,
            seed: config.workload.seed,
            scale: config.workload.scale,
            reps: 1,
            trace: false,
            full_checks: false,
            config,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.dcs.is_empty() || self.vms_per_dc.is_empty() || self.balancers.is_empty() || self.thresholds.is_empty() {
            return bad("sweep lists must be non-empty");
        }
        if self.dcs.contains(&0) || self.vms_per_dc.contains(&0) {
            return bad("DC and VM counts must be positive");
        }
        if self.thresholds.contains(&0) {
            return bad("task thresholds must be at least 1");
        }
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return bad("scale must be in (0, 1]");
        }
        if self.reps == 0 {
            return bad("reps must be at least 1");
        }
        if self.total_tasks == Some(0) {
            return bad("task count must be positive");
        }
        if self.total_tasks.is_some() && self.scenario.is_diurnal() {
            return bad("a fixed task count does not apply to the diurnal plan");
        }
        self.config.validate()
    }

    /// `(dcs, vms_per_dc)` pairs in sweep order.
    pub fn points(&self) -> Vec<(usize, usize)> {
        self.dcs.iter().flat_map(|&d| self.vms_per_dc.iter().map(move |&v| (d, v))).collect()
    }

    pub fn seed_for(&self, point_index: usize, rep: usize) -> u64 {
        self.seed + point_index as u64 + REP_SEED_STRIDE * rep as u64
    }

    fn variants(&self) -> Vec<Variant> {
        let mut out = Vec::new();
        for &kind in &self.balancers {
            match kind {
                BalancerKind::Throttled => out.push(Variant { kind, threshold: None }),
                BalancerKind::Sbdlb => out.extend(self.thresholds.iter().map(|&t| Variant { kind, threshold: Some(t) })),
            }
        }
        out
    }

    /// Batch schedule for one workload draw. The diurnal plan consumes the
    /// front of `rng` before tasks are drawn.
    fn schedule(&self, rng: &mut ChaCha8Rng) -> Result<Vec<(SimTime, usize)>, ConfigError> {
        let w = &self.config.workload;
        if self.scenario.is_diurnal() || w.diurnal {
            return Ok(build_diurnal_plan(rng).schedule(self.scale));
        }
        if let Some(total) = self.total_tasks {
            let batches = w.batch_count.min(total);
            let (base, extra) = (total / batches, total % batches);
            return Ok((0..batches)
                .map(|i| (SimTime::from_secs(i as f64 * w.inter_batch_interval_sec), base + usize::from(i < extra)))
                .collect());
        }
        let size = crate::workload::scaled(w.batch_size, self.scale);
        let plan = BatchPlan::new(w.batch_count, size, w.inter_batch_interval_sec)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(build_batch_schedule(&plan))
    }

    pub fn workload(&self, seed: u64) -> Result<Workload, ConfigError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schedule = self.schedule(&mut rng)?;
        Ok(Workload::generate(&mut rng, &self.config.workload.table(), &schedule))
    }

    fn hours(&self) -> usize {
        if self.scenario.is_diurnal() || self.config.workload.diurnal {
            24
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Variant {
    kind: BalancerKind,
    threshold: Option<usize>,
}

impl Variant {
    fn label(&self, sweep: bool) -> String {
        match (self.kind, self.threshold) {
            (BalancerKind::Sbdlb, Some(t)) if sweep => format!("sbdlb-t{t}"),
            (kind, _) => kind.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VmCount {
    pub vm_id: usize,
    pub dc_id: usize,
    pub tier: VmTier,
    pub tasks: usize,
}

/// Everything produced by one simulation.
#[derive(Debug, Clone)]
pub struct RunResult {
    /// Unique per run: `<point_id>-<label>`.
    pub run_id: String,
    /// Shared by every run on the same workload; the pairing key.
    pub point_id: String,
    /// Balancer label, e.g. `sbdlb`, `throttled` or `sbdlb-t2`.
    pub label: String,
    pub kind: BalancerKind,
    pub threshold: Option<usize>,
    pub dcs: usize,
    pub vms_per_dc: usize,
    pub rep: usize,
    pub seed: u64,
    pub workload_digest: String,
    pub summary: RunSummary,
    pub records: Vec<TaskRecord>,
    pub per_vm: Vec<VmCount>,
    pub events: usize,
    pub peak_active: usize,
    pub trace: Vec<String>,
}

/// One stats.csv row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub metric: String,
    pub balancer_a: String,
    pub balancer_b: String,
    pub n: usize,
    /// `None` when fewer than two pairs exist or all differences are equal.
    pub test: Option<TestResult>,
    pub improvement_pct: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub config: ScenarioConfig,
    pub runs: Vec<RunResult>,
    pub comparisons: Vec<Comparison>,
}

impl ScenarioOutput {
    /// Runs with `label` in sweep order.
    pub fn by_label(&self, label: &str) -> Vec<&RunResult> {
        self.runs.iter().filter(|r| r.label == label).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for r in &self.runs {
            if !seen.contains(&r.label) {
                seen.push(r.label.clone());
            }
        }
        seen
    }
}

struct Job {
    rep: usize,
    dcs: usize,
    vms_per_dc: usize,
    seed: u64,
}

fn run_one(cfg: &ScenarioConfig, job: &Job, workload: &Workload, digest: &str, variant: Variant) -> Result<RunResult, ScenarioError> {
    let c = &cfg.config;
    let point_id = format!("{}-dcs{}-vms{}-rep{}", cfg.scenario, job.dcs, job.vms_per_dc, job.rep);
    let label = variant.label(cfg.scenario == Scenario::Threshold);
    let run_id = format!("{point_id}-{label}");
    let (centers, vms) = build_cloud_with(job.dcs, job.vms_per_dc, c.cloud.tier_mix, &c.cloud.host_types, c.cloud.cost_rates)?;
    let tiers: Vec<VmTier> = vms.iter().map(|v| v.spec.tier).collect();
    let vm_dc = vm_dc_index(&centers, vms.len());
    let policy = match variant.threshold {
        Some(t) => c.sbdlb_policy(t)?,
        None => Policy::Throttled,
    };
    let mut opts = SimOptions::new(policy);
    opts.queue_mode = c.balancer.queue_mode;
    opts.execution = c.balancer.execution;
    opts.trace = cfg.trace;
    opts.full_checks = cfg.full_checks;
    if cfg.scenario.is_diurnal() {
        opts.hour_boundaries = 24;
    }
    let out = simulate(workload, vms, &opts).map_err(|source| ScenarioError::Simulation { run_id: run_id.clone(), source })?;
    let records = records_from_tasks(&out.tasks, &vm_dc);
    let mut summary = summarize(&records, &c.cloud.cost_rates, out.unfinished)
        .map_err(|source| ScenarioError::Metrics { run_id: run_id.clone(), source })?;
    summary.hourly = Some(hourly_breakdown(&records, SECONDS_PER_HOUR, cfg.hours(), &c.cloud.cost_rates));
    let per_vm = tasks_per_vm(&out)
        .into_iter()
        .enumerate()
        .map(|(vm_id, tasks)| VmCount { vm_id, dc_id: vm_dc[vm_id], tier: tiers[vm_id], tasks })
        .collect();
    Ok(RunResult {
        run_id,
        point_id,
        label,
        kind: variant.kind,
        threshold: variant.threshold,
        dcs: job.dcs,
        vms_per_dc: job.vms_per_dc,
        rep: job.rep,
        seed: job.seed,
        workload_digest: digest.to_string(),
        summary,
        records,
        per_vm,
        events: out.events_processed,
        peak_active: out.peak_active,
        trace: out.trace,
    })
}

/// Runs every sweep point × repetition × balancer variant. Points run in
/// parallel; each simulation is single-threaded and the result order is the
/// sweep order regardless of scheduling.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput, ScenarioError> {
    cfg.validate()?;
    let jobs: Vec<Job> = cfg
        .points()
        .into_iter()
        .enumerate()
        .flat_map(|(point, (dcs, vms_per_dc))| {
            (0..cfg.reps).map(move |rep| Job { rep, dcs, vms_per_dc, seed: cfg.seed_for(point, rep) })
        })
        .collect();
    let variants = cfg.variants();
    let nested: Vec<Vec<RunResult>> = jobs
        .par_iter()
        .map(|job| {
            let workload = cfg.workload(job.seed)?;
            let digest = workload.digest();
            variants.par_iter().map(|v| run_one(cfg, job, &workload, &digest, *v)).collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, ScenarioError>>()?;
    let mut runs: Vec<RunResult> = nested.into_iter().flatten().collect();
    // Sweep order, then balancer label order, for stable output files.
    let order: BTreeMap<String, usize> = variants
        .iter()
        .enumerate()
        .map(|(i, v)| (v.label(cfg.scenario == Scenario::Threshold), i))
        .collect();
    let job_index = |r: &RunResult| {
        jobs.iter().position(|j| j.dcs == r.dcs && j.vms_per_dc == r.vms_per_dc && j.rep == r.rep).unwrap_or(usize::MAX)
    };
    runs.sort_by_key(|r| (job_index(r), order[&r.label]));
    let comparisons = default_comparisons(cfg, &runs)?;
    Ok(ScenarioOutput { config: cfg.clone(), runs, comparisons })
}

/// Headline metrics compared between balancers.
pub const METRICS: [&str; 3] = ["avg_response_ms", "avg_dc_processing_ms", "total_cost_usd"];

pub fn metric_value(summary: &RunSummary, metric: &str) -> Option<f64> {
    match metric {
        "avg_response_ms" => Some(summary.avg_response * 1000.0),
        "avg_dc_processing_ms" => Some(summary.avg_dc_processing * 1000.0),
        "total_dc_processing_ms" => Some(summary.total_dc_processing * 1000.0),
        "total_cost_usd" => Some(summary.total_cost),
        _ => None,
    }
}

/// Pairs the values of `metric` under labels `a` and `b` by point id.
/// `a` is the baseline; positive improvement means `b` is lower.
pub fn compare_runs(runs: &[RunResult], metric: &str, a: &str, b: &str) -> Result<Comparison, ScenarioError> {
    let side = |label: &str| -> BTreeMap<&str, &RunResult> {
        runs.iter().filter(|r| r.label == label).map(|r| (r.point_id.as_str(), r)).collect()
    };
    let (sa, sb) = (side(a), side(b));
    let keys_a: BTreeSet<&str> = sa.keys().copied().collect();
    let keys_b: BTreeSet<&str> = sb.keys().copied().collect();
    if keys_a != keys_b || keys_a.is_empty() {
        return Err(ScenarioError::MismatchedSweeps(format!("{a} has points {keys_a:?}, {b} has {keys_b:?}")));
    }
    for k in &keys_a {
        if sa[k].seed != sb[k].seed || sa[k].workload_digest != sb[k].workload_digest {
            return Err(ScenarioError::MismatchedSweeps(format!("point {k} ran different workloads under {a} and {b}")));
        }
    }
    let value = |r: &RunResult| {
        metric_value(&r.summary, metric).ok_or_else(|| ConfigError::Invalid(format!("unknown metric `{metric}`")))
    };
    let mut sample = PairedSample { labels: Vec::new(), a: Vec::new(), b: Vec::new() };
    for k in &keys_a {
        sample.labels.push(k.to_string());
        sample.a.push(value(sa[k])?);
        sample.b.push(value(sb[k])?);
    }
    Ok(comparison_from(metric, a, b, &sample))
}

pub fn comparison_from(metric: &str, a: &str, b: &str, sample: &PairedSample) -> Comparison {
    Comparison {
        metric: metric.to_string(),
        balancer_a: a.to_string(),
        balancer_b: b.to_string(),
        n: sample.a.len(),
        test: paired_t_test(sample).ok(),
        improvement_pct: percent_improvement(&sample.a, &sample.b).unwrap_or(f64::NAN),
    }
}

fn default_comparisons(cfg: &ScenarioConfig, runs: &[RunResult]) -> Result<Vec<Comparison>, ScenarioError> {
    let labels: BTreeSet<&str> = runs.iter().map(|r| r.label.as_str()).collect();
    let mut pairs: Vec<(String, String)> = Vec::new();
    if cfg.scenario == Scenario::Threshold {
        let base = "sbdlb-t3";
        for t in &cfg.thresholds {
            let l = format!("sbdlb-t{t}");
            if *t != 3 && labels.contains(l.as_str()) && labels.contains(base) {
                pairs.push((l, base.to_string()));
            }
        }
        if labels.contains("throttled") && labels.contains(base) {
            pairs.push(("throttled".to_string(), base.to_string()));
        }
    } else if labels.contains("throttled") && labels.contains("sbdlb") {
        pairs.push(("throttled".to_string(), "sbdlb".to_string()));
    }
    let mut out = Vec::new();
    for (a, b) in pairs {
        for metric in METRICS {
            out.push(compare_runs(runs, metric, &a, &b)?);
        }
        if cfg.scenario.is_diurnal() || cfg.config.workload.diurnal {
            out.push(compare_hourly(runs, &a, &b)?);
        }
    }
    Ok(out)
}

/// Pairs hourly average response times across every (point, hour) with tasks under both labels.
fn compare_hourly(runs: &[RunResult], a: &str, b: &str) -> Result<Comparison, ScenarioError> {
    let mut sample = PairedSample { labels: Vec::new(), a: Vec::new(), b: Vec::new() };
    for ra in runs.iter().filter(|r| r.label == a) {
        let rb = runs
            .iter()
            .find(|r| r.label == b && r.point_id == ra.point_id)
            .ok_or_else(|| ScenarioError::MismatchedSweeps(format!("{} has no {b} run", ra.point_id)))?;
        let (ha, hb) = (ra.summary.hourly.as_deref().unwrap_or(&[]), rb.summary.hourly.as_deref().unwrap_or(&[]));
        for x in ha {
            if let (Some(va), Some(vb)) = (x.avg_response, hb.iter().find(|y| y.hour == x.hour).and_then(|y| y.avg_response)) {
                sample.labels.push(format!("{}-h{}", ra.point_id, x.hour));
                sample.a.push(va * 1000.0);
                sample.b.push(vb * 1000.0);
            }
        }
    }
    Ok(comparison_from("hourly_avg_response_ms", a, b, &sample))
}
