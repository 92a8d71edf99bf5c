//! Progress of the tasks running on one VM.
//!
//! Each task carries a weight equal to the MIPS it was granted at admission.
//! Under [`ExecutionModel::Proportional`] the VM's full MIPS are split among
//! its running tasks in proportion to those weights, so a VM never idles
//! while it has work. Under [`ExecutionModel::Reserved`] every task runs at
//! exactly its granted MIPS for its whole lifetime.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kernel::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecutionModel {
    #[default]
    Proportional,
    Reserved,
}

impl FromStr for ExecutionModel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proportional" => Ok(ExecutionModel::Proportional),
            "reserved" => Ok(ExecutionModel::Reserved),
            other => Err(format!("unknown execution model `{other}` (expected proportional | reserved)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Running {
    task: usize,
    remaining_mi: f64,
    weight: f64,
}

#[derive(Debug, Clone)]
pub struct VmExecution {
    capacity_mips: f64,
    model: ExecutionModel,
    running: Vec<Running>,
    last_update: f64,
    /// Key of this VM's scheduled completion event, if any.
    pub pending: Option<(SimTime, u64)>,
}

impl VmExecution {
    pub fn new(capacity_mips: f64, model: ExecutionModel) -> Self {
        Self { capacity_mips, model, running: Vec::new(), last_update: 0.0, pending: None }
    }

    pub fn len(&self) -> usize {
        self.running.len()
    }

    pub fn is_empty(&self) -> bool {
        self.running.is_empty()
    }

    fn scale(&self) -> f64 {
        match self.model {
            ExecutionModel::Reserved => 1.0,
            ExecutionModel::Proportional => {
                let total: f64 = self.running.iter().map(|r| r.weight).sum();
                self.capacity_mips / total
            }
        }
    }

    /// MIPS currently delivered to `task`.
    pub fn rate_of(&self, task: usize) -> Option<f64> {
        let scale = self.scale();
        self.running.iter().find(|r| r.task == task).map(|r| r.weight * scale)
    }

    /// Sum of delivered MIPS over running tasks.
    pub fn delivered_mips(&self) -> f64 {
        let scale = self.scale();
        self.running.iter().map(|r| r.weight * scale).sum()
    }

    pub fn advance(&mut self, now: f64) {
        let dt = now - self.last_update;
        if dt > 0.0 && !self.running.is_empty() {
            let scale = self.scale();
            for r in &mut self.running {
                r.remaining_mi = (r.remaining_mi - r.weight * scale * dt).max(0.0);
            }
        }
        self.last_update = self.last_update.max(now);
    }

    /// Starts `task` at `now` with `length_mi` of work and admission weight `weight_mips > 0`.
    pub fn add(&mut self, now: f64, task: usize, length_mi: f64, weight_mips: f64) {
        assert!(weight_mips > 0.0, "task {task} admitted with no MIPS");
        self.advance(now);
        self.running.push(Running { task, remaining_mi: length_mi, weight: weight_mips });
    }

    /// Stops `task` at `now`; returns the work it still had left.
    pub fn remove(&mut self, now: f64, task: usize) -> Option<f64> {
        self.advance(now);
        let i = self.running.iter().position(|r| r.task == task)?;
        Some(self.running.remove(i).remaining_mi)
    }

    /// Earliest projected finish as `(time, task)`, lowest task id on ties.
    pub fn next_completion(&self) -> Option<(f64, usize)> {
        let scale = self.scale();
        self.running
            .iter()
            .map(|r| (self.last_update + r.remaining_mi / (r.weight * scale), r.task))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
    }
}
