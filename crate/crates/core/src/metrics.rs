//! Response time, per-DC processing time and operating cost, overall and per hour.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::cloud::CostRates;
use crate::workload::{CategoryName, Task};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no task records")]
    EmptyRecordSet,
    #[error("no tasks ran in data center {0}")]
    NoTasksForDc(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskRecord {
    pub task_id: usize,
    pub category: CategoryName,
    pub length_mi: f64,
    pub vm_id: usize,
    pub dc_id: usize,
    pub arrival: f64,
    pub start: f64,
    pub finish: f64,
}

impl TaskRecord {
    pub fn response(&self) -> f64 {
        self.finish - self.arrival
    }
}

/// Records for every finished task; `vm_dc` maps VM id to DC id.
pub fn records_from_tasks(tasks: &[Task], vm_dc: &[usize]) -> Vec<TaskRecord> {
    tasks
        .iter()
        .filter_map(|t| {
            let (vm, start, finish) = (t.assigned_vm?, t.start?, t.finish?);
            Some(TaskRecord {
                task_id: t.task_id,
                category: t.category,
                length_mi: t.length_mi,
                vm_id: vm,
                dc_id: vm_dc[vm],
                arrival: t.arrival.secs(),
                start: start.secs(),
                finish: finish.secs(),
            })
        })
        .collect()
}

pub fn avg_response_time(records: &[TaskRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecordSet);
    }
    Ok(records.iter().map(TaskRecord::response).sum::<f64>() / records.len() as f64)
}

/// Last finish minus first start over the DC's tasks.
pub fn dc_processing_time(records: &[TaskRecord], dc_id: usize) -> Result<f64, MetricsError> {
    span(records.iter().filter(|r| r.dc_id == dc_id).map(|r| (r.start, r.finish)))
        .ok_or(MetricsError::NoTasksForDc(dc_id))
}

fn span<I: Iterator<Item = (f64, f64)>>(intervals: I) -> Option<f64> {
    let (first, last) = intervals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (s, f)| (lo.min(s), hi.max(f)));
    (first <= last).then_some(last - first)
}

pub fn dc_operating_cost(processing_time: f64, rates: &CostRates) -> f64 {
    processing_time * rates.cpu_per_sec
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DcRecord {
    pub dc_id: usize,
    pub first_start: f64,
    pub last_finish: f64,
    pub processing_time: f64,
    pub cost: f64,
    pub tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HourSummary {
    pub hour: usize,
    pub tasks: usize,
    /// `None` for hours in which no task arrived.
    pub avg_response: Option<f64>,
    pub dc_processing: Option<f64>,
    pub cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub avg_response: f64,
    pub per_dc: Vec<DcRecord>,
    pub avg_dc_processing: f64,
    pub total_dc_processing: f64,
    pub total_cost: f64,
    pub task_count: usize,
    pub unfinished: usize,
    pub hourly: Option<Vec<HourSummary>>,
}

fn dc_records(records: &[TaskRecord], rates: &CostRates) -> Vec<DcRecord> {
    let mut by_dc: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for r in records {
        let (s, f) = (r.start, r.finish);
        let e = by_dc.entry(r.dc_id).or_insert((f64::INFINITY, f64::NEG_INFINITY, 0));
        e.0 = e.0.min(s);
        e.1 = e.1.max(f);
        e.2 += 1;
    }
    by_dc
        .into_iter()
        .map(|(dc_id, (first_start, last_finish, tasks))| {
            let processing_time = last_finish - first_start;
            DcRecord { dc_id, first_start, last_finish, processing_time, cost: dc_operating_cost(processing_time, rates), tasks }
        })
        .collect()
}

/// Whole-run summary. DCs that executed no task are left out of the per-DC list.
pub fn summarize(records: &[TaskRecord], rates: &CostRates, unfinished: usize) -> Result<RunSummary, MetricsError> {
    let avg_response = avg_response_time(records)?;
    let per_dc = dc_records(records, rates);
    let total_dc_processing: f64 = per_dc.iter().map(|d| d.processing_time).sum();
    Ok(RunSummary {
        avg_response,
        avg_dc_processing: total_dc_processing / per_dc.len() as f64,
        total_dc_processing,
        total_cost: per_dc.iter().map(|d| d.cost).sum(),
        per_dc,
        task_count: records.len(),
        unfinished,
        hourly: None,
    })
}

/// Bins tasks by `floor(arrival / hour_len)` for hours `0..hours` (more if a
/// task arrives later). Each bin's DC processing time is the span of that
/// bin's own tasks, so work that spills past the hour still counts.
pub fn hourly_breakdown(records: &[TaskRecord], hour_len: f64, hours: usize, rates: &CostRates) -> Vec<HourSummary> {
    let mut bins: BTreeMap<usize, Vec<&TaskRecord>> = (0..hours).map(|h| (h, Vec::new())).collect();
    for r in records {
        bins.entry((r.arrival / hour_len).floor() as usize).or_default().push(r);
    }
    bins.into_iter()
        .map(|(hour, recs)| {
            if recs.is_empty() {
                return HourSummary { hour, tasks: 0, avg_response: None, dc_processing: None, cost: None };
            }
            let owned: Vec<TaskRecord> = recs.into_iter().cloned().collect();
            let per_dc = dc_records(&owned, rates);
            let total: f64 = per_dc.iter().map(|d| d.processing_time).sum();
            HourSummary {
                hour,
                tasks: owned.len(),
                avg_response: avg_response_time(&owned).ok(),
                dc_processing: Some(total / per_dc.len() as f64),
                cost: Some(per_dc.iter().map(|d| d.cost).sum()),
            }
        })
        .collect()
}
