//! CSV and JSON artifacts of a scenario run, and the directory-level
//! comparison that reads them back.
//!
//! Layout of an output directory:
//!
//! ```text
//! manifest.json        resolved config, hash, seeds and workload digests
//! summary.csv          one row per run
//! hourly.csv           one row per run and hour bin
//! stats.csv            paired comparisons between balancers
//! vm_allocation.csv    tasks executed per VM
//! tasks/<run_id>.csv   one row per finished task
//! traces/<run_id>.csv  event trace, only when tracing is on
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{comparison_from, Comparison, RunResult, ScenarioConfig, ScenarioOutput, METRICS};
use crate::stats::PairedSample;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("sweeps do not match: {0}")]
    MismatchedSweeps(String),
    #[error("{0}")]
    Selection(String),
}

pub const SUMMARY_HEADER: [&str; 9] =
    ["run_id", "balancer", "dcs", "vms_per_dc", "tasks", "avg_response_ms", "avg_dc_processing_ms", "total_cost_usd", "unfinished"];
pub const HOURLY_HEADER: [&str; 6] = ["run_id", "hour", "tasks", "avg_response_ms", "dc_processing_ms", "cost_usd"];
pub const STATS_HEADER: [&str; 8] = ["metric", "balancer_a", "balancer_b", "n", "t", "df", "p_two_sided", "improvement_pct"];
pub const TASKS_HEADER: [&str; 9] =
    ["task_id", "category", "length_mi", "vm_id", "dc_id", "arrival_s", "start_s", "finish_s", "response_ms"];
pub const VM_ALLOCATION_HEADER: [&str; 6] = ["run_id", "balancer", "dc_id", "vm_id", "tier", "tasks"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub balancer: String,
    pub dcs: usize,
    pub vms_per_dc: usize,
    pub tasks: usize,
    pub avg_response_ms: f64,
    pub avg_dc_processing_ms: f64,
    pub total_cost_usd: f64,
    pub unfinished: usize,
}

impl SummaryRow {
    pub fn of(run: &RunResult) -> Self {
        let s = &run.summary;
        Self {
            run_id: run.run_id.clone(),
            balancer: run.label.clone(),
            dcs: run.dcs,
            vms_per_dc: run.vms_per_dc,
            tasks: s.task_count,
            avg_response_ms: s.avg_response * 1000.0,
            avg_dc_processing_ms: s.avg_dc_processing * 1000.0,
            total_cost_usd: s.total_cost,
            unfinished: s.unfinished,
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "avg_response_ms" => Some(self.avg_response_ms),
            "avg_dc_processing_ms" => Some(self.avg_dc_processing_ms),
            "total_cost_usd" => Some(self.total_cost_usd),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyRow {
    pub run_id: String,
    pub hour: usize,
    pub tasks: usize,
    pub avg_response_ms: Option<f64>,
    pub dc_processing_ms: Option<f64>,
    pub cost_usd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub metric: String,
    pub balancer_a: String,
    pub balancer_b: String,
    pub n: usize,
    pub t: Option<f64>,
    pub df: Option<usize>,
    pub p_two_sided: Option<f64>,
    pub improvement_pct: f64,
}

impl StatsRow {
    pub fn of(c: &Comparison) -> Self {
        Self {
            metric: c.metric.clone(),
            balancer_a: c.balancer_a.clone(),
            balancer_b: c.balancer_b.clone(),
            n: c.n,
            t: c.test.as_ref().map(|t| t.t_statistic),
            df: c.test.as_ref().map(|t| t.degrees_of_freedom),
            p_two_sided: c.test.as_ref().map(|t| t.p_two_sided),
            improvement_pct: c.improvement_pct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: usize,
    pub category: String,
    pub length_mi: f64,
    pub vm_id: usize,
    pub dc_id: usize,
    pub arrival_s: f64,
    pub start_s: f64,
    pub finish_s: f64,
    pub response_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmAllocationRow {
    pub run_id: String,
    pub balancer: String,
    pub dc_id: usize,
    pub vm_id: usize,
    pub tier: String,
    pub tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub run_id: String,
    pub point_id: String,
    pub balancer: String,
    pub dcs: usize,
    pub vms_per_dc: usize,
    pub rep: usize,
    pub seed: u64,
    pub workload_digest: String,
    pub events: usize,
    pub peak_active: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub config_hash: String,
    /// Scenario parameters plus the full config, as run.
    pub resolved: serde_json::Value,
    pub runs: Vec<ManifestRun>,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Hex SHA-256 over the resolved scenario (config plus sweep parameters).
pub fn scenario_hash(cfg: &ScenarioConfig) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_string(cfg).expect("scenario config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.to_path_buf(), source }
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<(), OutputError> {
    let csv_err = |source| OutputError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>, OutputError> {
    let csv_err = |source| OutputError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let found: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if found != header {
        return Err(OutputError::Selection(format!("{}: unexpected header {found:?}", path.display())));
    }
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(csv_err)
}

pub fn task_rows(run: &RunResult) -> impl Iterator<Item = TaskRow> + '_ {
    run.records.iter().map(|r| TaskRow {
        task_id: r.task_id,
        category: r.category.as_str().to_string(),
        length_mi: r.length_mi,
        vm_id: r.vm_id,
        dc_id: r.dc_id,
        arrival_s: r.arrival,
        start_s: r.start,
        finish_s: r.finish,
        response_ms: r.response() * 1000.0,
    })
}

pub fn hourly_rows(run: &RunResult) -> impl Iterator<Item = HourlyRow> + '_ {
    run.summary.hourly.iter().flatten().map(|h| HourlyRow {
        run_id: run.run_id.clone(),
        hour: h.hour,
        tasks: h.tasks,
        avg_response_ms: h.avg_response.map(|s| s * 1000.0),
        dc_processing_ms: h.dc_processing.map(|s| s * 1000.0),
        cost_usd: h.cost,
    })
}

pub fn manifest(out: &ScenarioOutput, started: u64, finished: u64) -> Manifest {
    Manifest {
        tool: "simlb".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        scenario: out.config.scenario.as_str().into(),
        config_hash: scenario_hash(&out.config),
        resolved: serde_json::to_value(&out.config).expect("scenario config serializes"),
        runs: out
            .runs
            .iter()
            .map(|r| ManifestRun {
                run_id: r.run_id.clone(),
                point_id: r.point_id.clone(),
                balancer: r.label.clone(),
                dcs: r.dcs,
                vms_per_dc: r.vms_per_dc,
                rep: r.rep,
                seed: r.seed,
                workload_digest: r.workload_digest.clone(),
                events: r.events,
                peak_active: r.peak_active,
            })
            .collect(),
        started_unix_s: started,
        finished_unix_s: finished,
    }
}

/// Writes every artifact of `out` into `dir`, creating it if needed.
pub fn write_outputs(out: &ScenarioOutput, dir: &Path, started: u64) -> Result<(), OutputError> {
    fs::create_dir_all(dir.join("tasks")).map_err(io_err(dir))?;
    write_rows(&dir.join("summary.csv"), &SUMMARY_HEADER, out.runs.iter().map(SummaryRow::of))?;
    write_rows(&dir.join("hourly.csv"), &HOURLY_HEADER, out.runs.iter().flat_map(hourly_rows))?;
    write_rows(&dir.join("stats.csv"), &STATS_HEADER, out.comparisons.iter().map(StatsRow::of))?;
    write_rows(
        &dir.join("vm_allocation.csv"),
        &VM_ALLOCATION_HEADER,
        out.runs.iter().flat_map(|r| {
            r.per_vm.iter().map(|v| VmAllocationRow {
                run_id: r.run_id.clone(),
                balancer: r.label.clone(),
                dc_id: v.dc_id,
                vm_id: v.vm_id,
                tier: v.tier.as_str().to_string(),
                tasks: v.tasks,
            })
        }),
    )?;
    for run in &out.runs {
        write_rows(&dir.join("tasks").join(format!("{}.csv", run.run_id)), &TASKS_HEADER, task_rows(run))?;
        if !run.trace.is_empty() {
            let traces = dir.join("traces");
            fs::create_dir_all(&traces).map_err(io_err(&traces))?;
            let path = traces.join(format!("{}.csv", run.run_id));
            let mut text = String::from("time,seq,kind,payload\n");
            for line in &run.trace {
                text.push_str(line);
                text.push('\n');
            }
            fs::write(&path, text).map_err(io_err(&path))?;
        }
    }
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest(out, started, unix_now()))
        .map_err(|source| OutputError::Json { path: path.clone(), source })?;
    fs::write(&path, json).map_err(io_err(&path))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, OutputError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|source| OutputError::Json { path, source })
}

/// A run directory's summaries keyed by point id, for one balancer label.
struct Side {
    label: String,
    points: BTreeMap<String, (ManifestRun, SummaryRow)>,
}

fn load_side(dir: &Path, label: Option<&str>) -> Result<Side, OutputError> {
    let manifest = read_manifest(dir)?;
    let rows: Vec<SummaryRow> = read_rows(&dir.join("summary.csv"), &SUMMARY_HEADER)?;
    let labels: BTreeSet<&str> = rows.iter().map(|r| r.balancer.as_str()).collect();
    let label = match label {
        Some(l) if labels.contains(l) => l.to_string(),
        Some(l) => return Err(OutputError::Selection(format!("{}: no runs labelled `{l}` (found {labels:?})", dir.display()))),
        None if labels.len() == 1 => labels.iter().next().expect("one label").to_string(),
        None => {
            return Err(OutputError::Selection(format!(
                "{} holds several balancers {labels:?}; choose one with a label",
                dir.display()
            )))
        }
    };
    let mut points = BTreeMap::new();
    for row in rows.into_iter().filter(|r| r.balancer == label) {
        let run = manifest
            .runs
            .iter()
            .find(|m| m.run_id == row.run_id)
            .ok_or_else(|| OutputError::Selection(format!("run {} missing from manifest", row.run_id)))?;
        points.insert(run.point_id.clone(), (run.clone(), row));
    }
    Ok(Side { label, points })
}

/// Pairs the summaries in two run directories by sweep point and tests every
/// headline metric. `a` is the baseline.
pub fn compare_dirs(a: &Path, label_a: Option<&str>, b: &Path, label_b: Option<&str>) -> Result<Vec<StatsRow>, OutputError> {
    let (sa, sb) = (load_side(a, label_a)?, load_side(b, label_b)?);
    let keys_a: Vec<&String> = sa.points.keys().collect();
    let keys_b: Vec<&String> = sb.points.keys().collect();
    if keys_a != keys_b {
        return Err(OutputError::MismatchedSweeps(format!("points {keys_a:?} vs {keys_b:?}")));
    }
    for k in keys_a {
        let (ma, mb) = (&sa.points[k].0, &sb.points[k].0);
        if ma.seed != mb.seed || ma.workload_digest != mb.workload_digest {
            return Err(OutputError::MismatchedSweeps(format!("point {k}: seed {} vs {}", ma.seed, mb.seed)));
        }
    }
    Ok(METRICS
        .iter()
        .map(|metric| {
            let mut sample = PairedSample { labels: Vec::new(), a: Vec::new(), b: Vec::new() };
            for (k, (_, row)) in &sa.points {
                sample.labels.push(k.clone());
                sample.a.push(row.metric(metric).expect("known metric"));
                sample.b.push(sb.points[k].1.metric(metric).expect("known metric"));
            }
            StatsRow::of(&comparison_from(metric, &sa.label, &sb.label, &sample))
        })
        .collect())
}

pub fn write_stats(path: &Path, rows: &[StatsRow]) -> Result<(), OutputError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_rows(path, &STATS_HEADER, rows)
}
