//! Load-balancing decisions: the score-based balancer with min-max demand
//! normalization and a per-VM task threshold, the throttled baseline, and the
//! FIFO wait queue that is reassessed whenever a task completes.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{CloudError, ResourceVector, VmSpec, VmState, total_capacity};
use crate::workload::Task;

#[derive(Debug, Error, PartialEq)]
pub enum BalancerError {
    #[error("task length {length_mi} MI outside normalization range [{min}, {max}]")]
    OutOfBounds { length_mi: f64, min: f64, max: f64 },
    #[error("invalid normalization bounds: {0}")]
    InvalidBounds(String),
    #[error("task threshold must be at least 1")]
    InvalidThreshold,
    #[error("task {0} is already queued")]
    AlreadyQueued(usize),
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

/// Source range for min-max scaling of task lengths, plus the fraction of a
/// VM's capacity that the shortest possible task still reserves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationBounds {
    pub mi_min: f64,
    pub mi_max: f64,
    pub floor_fraction: f64,
}

impl NormalizationBounds {
    pub fn new(mi_min: f64, mi_max: f64, floor_fraction: f64) -> Result<Self, BalancerError> {
        if !(mi_min.is_finite() && mi_max.is_finite() && mi_min < mi_max) {
            return Err(BalancerError::InvalidBounds(format!("need mi_min < mi_max, got [{mi_min}, {mi_max}]")));
        }
        if !(0.0..1.0).contains(&floor_fraction) {
            return Err(BalancerError::InvalidBounds(format!("floor fraction {floor_fraction} not in [0, 1)")));
        }
        Ok(Self { mi_min, mi_max, floor_fraction })
    }
}

/// Min-max scaling of `x` from `[x_min, x_max]` onto `[y_min, y_max]`.
pub fn min_max_scale(x: f64, x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> f64 {
    (x - x_min) / (x_max - x_min) * (y_max - y_min) + y_min
}

/// Resource demand of a task of `length_mi` on a VM of `spec`: each component is
/// the task length scaled onto `[floor × capacity, capacity]` of that resource.
pub fn normalize_demand(
    length_mi: f64,
    spec: &VmSpec,
    bounds: &NormalizationBounds,
) -> Result<ResourceVector, BalancerError> {
    if !(bounds.mi_min..=bounds.mi_max).contains(&length_mi) {
        return Err(BalancerError::OutOfBounds { length_mi, min: bounds.mi_min, max: bounds.mi_max });
    }
    let cap = total_capacity(spec);
    let scale = |c: f64| min_max_scale(length_mi, bounds.mi_min, bounds.mi_max, bounds.floor_fraction * c, c);
    Ok(ResourceVector::new(scale(cap.mips()), scale(cap.ram_mb()), scale(cap.bw_mbps())))
}

/// Seconds needed to run `length_mi` at the reserved MIPS (infinite for a zero grant).
pub fn execution_duration(length_mi: f64, demand: &ResourceVector) -> f64 {
    length_mi / demand.mips()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskThreshold(usize);

impl TaskThreshold {
    pub fn new(max_active: usize) -> Result<Self, BalancerError> {
        if max_active == 0 {
            Err(BalancerError::InvalidThreshold)
        } else {
            Ok(Self(max_active))
        }
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl Default for TaskThreshold {
    fn default() -> Self {
        Self(3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VmScore {
    /// At or above the task threshold; not a candidate at all.
    Excluded,
    /// Some demanded component exceeds what is available.
    Infeasible,
    Feasible(f64),
}

impl VmScore {
    pub const SENTINEL: f64 = -1.0;

    /// Numeric score with `-1` for infeasible VMs; `None` for excluded ones.
    pub fn value(self) -> Option<f64> {
        match self {
            VmScore::Excluded => None,
            VmScore::Infeasible => Some(Self::SENTINEL),
            VmScore::Feasible(s) => Some(s),
        }
    }
}

pub fn sbdlb_score(vm: &VmState, demand: &ResourceVector, threshold: TaskThreshold) -> VmScore {
    if vm.active_tasks() >= threshold.get() {
        VmScore::Excluded
    } else if !demand.fits_within(&vm.available()) {
        VmScore::Infeasible
    } else {
        VmScore::Feasible(vm.available().component_sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BalancerDecision {
    Assign { vm: usize, demand: ResourceVector },
    Enqueue,
}

/// Picks the feasible VM with the highest score among `candidates`; lowest id wins ties.
fn sbdlb_select_among<I>(
    vms: &[VmState],
    candidates: I,
    length_mi: f64,
    bounds: &NormalizationBounds,
    threshold: TaskThreshold,
) -> Result<BalancerDecision, BalancerError>
where
    I: IntoIterator<Item = usize>,
{
    let mut best: Option<(f64, usize, ResourceVector)> = None;
    for id in candidates {
        let vm = &vms[id];
        if vm.active_tasks() >= threshold.get() {
            continue;
        }
        let demand = normalize_demand(length_mi, &vm.spec, bounds)?;
        if let VmScore::Feasible(score) = sbdlb_score(vm, &demand, threshold) {
            let better = match best {
                None => true,
                Some((s, v, _)) => score > s || (score == s && id < v),
            };
            if better {
                best = Some((score, id, demand));
            }
        }
    }
    Ok(match best {
        Some((_, vm, demand)) => BalancerDecision::Assign { vm, demand },
        None => BalancerDecision::Enqueue,
    })
}

/// Score-based selection over every VM. VM ids must equal their index in `vms`.
pub fn sbdlb_select(
    vms: &[VmState],
    task: &Task,
    bounds: &NormalizationBounds,
    threshold: TaskThreshold,
) -> Result<BalancerDecision, BalancerError> {
    sbdlb_select_among(vms, 0..vms.len(), task.length_mi, bounds, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VmAvailability {
    Available,
    Busy,
}

/// Throttled index table: one row per VM id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThrottledTable {
    states: Vec<VmAvailability>,
}

impl ThrottledTable {
    pub fn new(vm_count: usize) -> Self {
        Self { states: vec![VmAvailability::Available; vm_count] }
    }

    pub fn from_states(states: Vec<VmAvailability>) -> Self {
        Self { states }
    }

    pub fn state(&self, vm: usize) -> VmAvailability {
        self.states[vm]
    }

    pub fn states(&self) -> &[VmAvailability] {
        &self.states
    }

    pub fn mark_available(&mut self, vm: usize) {
        self.states[vm] = VmAvailability::Available;
    }
}

/// First available VM in ascending id order gets the task exclusively.
pub fn throttled_select(table: &mut ThrottledTable, vms: &[VmState]) -> BalancerDecision {
    match table.states.iter().position(|s| *s == VmAvailability::Available) {
        Some(vm) => {
            table.states[vm] = VmAvailability::Busy;
            BalancerDecision::Assign { vm, demand: vms[vm].capacity() }
        }
        None => BalancerDecision::Enqueue,
    }
}

/// FIFO of waiting task ids without duplicates.
#[derive(Debug, Clone, Default)]
pub struct WaitQueue {
    order: VecDeque<usize>,
    members: HashSet<usize>,
}

impl WaitQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, task: usize) -> Result<(), BalancerError> {
        if !self.members.insert(task) {
            return Err(BalancerError::AlreadyQueued(task));
        }
        self.order.push_back(task);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn contains(&self, task: usize) -> bool {
        self.members.contains(&task)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.order.iter().copied()
    }

    fn front(&self) -> Option<usize> {
        self.order.front().copied()
    }

    fn pop_front(&mut self) -> Option<usize> {
        let t = self.order.pop_front()?;
        self.members.remove(&t);
        Some(t)
    }

    fn retain<F: FnMut(usize) -> bool>(&mut self, mut keep: F) {
        let members = &mut self.members;
        self.order.retain(|&t| {
            let k = keep(t);
            if !k {
                members.remove(&t);
            }
            k
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueueMode {
    /// Walk the whole queue on every reassessment, assigning any task that fits.
    #[default]
    Scan,
    /// Only the head may leave; reassessment stops at the first task that cannot be placed.
    HeadOnly,
}

impl FromStr for QueueMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scan" => Ok(QueueMode::Scan),
            "head-only" => Ok(QueueMode::HeadOnly),
            other => Err(format!("unknown queue mode `{other}` (expected scan | head-only)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalancerKind {
    Sbdlb,
    Throttled,
}

impl BalancerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BalancerKind::Sbdlb => "sbdlb",
            BalancerKind::Throttled => "throttled",
        }
    }
}

impl fmt::Display for BalancerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BalancerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sbdlb" => Ok(BalancerKind::Sbdlb),
            "throttled" => Ok(BalancerKind::Throttled),
            other => Err(format!("unknown balancer `{other}` (expected sbdlb | throttled)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    Sbdlb { bounds: NormalizationBounds, threshold: TaskThreshold },
    Throttled,
}

impl Policy {
    pub fn kind(&self) -> BalancerKind {
        match self {
            Policy::Sbdlb { .. } => BalancerKind::Sbdlb,
            Policy::Throttled => BalancerKind::Throttled,
        }
    }

    /// Concurrent-task cap enforced on every VM.
    pub fn max_active(&self) -> usize {
        match self {
            Policy::Sbdlb { threshold, .. } => threshold.get(),
            Policy::Throttled => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub task: usize,
    pub vm: usize,
    pub demand: ResourceVector,
    pub duration: f64,
}

/// Which VMs a scan-mode reassessment considers after a completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReassessScope {
    /// Only the VM that just freed resources. Every other VM was already found
    /// unable to take any queued task and has only lost capacity since, so the
    /// outcome matches a full rescan.
    #[default]
    FreedVm,
    /// Re-run the full selection for every queued task.
    AllVms,
}

/// Balancer state owned by one simulation: policy, wait queue and (for the
/// throttled policy) the availability table.
#[derive(Debug, Clone)]
pub struct Balancer {
    policy: Policy,
    mode: QueueMode,
    scope: ReassessScope,
    queue: WaitQueue,
    table: ThrottledTable,
}

impl Balancer {
    pub fn new(policy: Policy, mode: QueueMode, vm_count: usize) -> Self {
        Self { policy, mode, scope: ReassessScope::default(), queue: WaitQueue::new(), table: ThrottledTable::new(vm_count) }
    }

    pub fn with_scope(mut self, scope: ReassessScope) -> Self {
        self.scope = scope;
        self
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn queue(&self) -> &WaitQueue {
        &self.queue
    }

    pub fn table(&self) -> &ThrottledTable {
        &self.table
    }

    fn decide(&mut self, vms: &[VmState], task: &Task, only: Option<usize>) -> Result<BalancerDecision, BalancerError> {
        match &self.policy {
            Policy::Sbdlb { bounds, threshold } => match only {
                Some(vm) => sbdlb_select_among(vms, [vm], task.length_mi, bounds, *threshold),
                None => sbdlb_select(vms, task, bounds, *threshold),
            },
            Policy::Throttled => match only {
                Some(vm) if self.table.state(vm) == VmAvailability::Available => {
                    self.table.states[vm] = VmAvailability::Busy;
                    Ok(BalancerDecision::Assign { vm, demand: vms[vm].capacity() })
                }
                Some(_) => Ok(BalancerDecision::Enqueue),
                None => Ok(throttled_select(&mut self.table, vms)),
            },
        }
    }

    fn commit(&self, vms: &mut [VmState], task: &Task, vm: usize, demand: ResourceVector) -> Result<Assignment, BalancerError> {
        vms[vm].allocate(task.task_id, demand, self.policy.max_active())?;
        Ok(Assignment { task: task.task_id, vm, demand, duration: execution_duration(task.length_mi, &demand) })
    }

    /// Handles a newly arrived task: assigns it or appends it to the wait queue.
    pub fn submit(&mut self, task: &Task, vms: &mut [VmState]) -> Result<Option<Assignment>, BalancerError> {
        if self.mode == QueueMode::HeadOnly && !self.queue.is_empty() {
            self.queue.push(task.task_id)?;
            return Ok(None);
        }
        match self.decide(vms, task, None)? {
            BalancerDecision::Assign { vm, demand } => self.commit(vms, task, vm, demand).map(Some),
            BalancerDecision::Enqueue => {
                self.queue.push(task.task_id)?;
                Ok(None)
            }
        }
    }

    /// Releases the finished task's resources on `vm`, then reassesses the wait
    /// queue in FIFO order. Returns the new assignments in the order made.
    pub fn on_completion(
        &mut self,
        task: usize,
        vm: usize,
        tasks: &[Task],
        vms: &mut [VmState],
    ) -> Result<Vec<Assignment>, BalancerError> {
        vms[vm].release(task)?;
        if self.policy == Policy::Throttled {
            self.table.mark_available(vm);
        }
        let mut assigned = Vec::new();
        match self.mode {
            QueueMode::HeadOnly => {
                while let Some(head) = self.queue.front() {
                    match self.decide(vms, &tasks[head], None)? {
                        BalancerDecision::Assign { vm, demand } => {
                            self.queue.pop_front();
                            assigned.push(self.commit(vms, &tasks[head], vm, demand)?);
                        }
                        BalancerDecision::Enqueue => break,
                    }
                }
            }
            QueueMode::Scan => {
                let only = match self.scope {
                    ReassessScope::FreedVm => Some(vm),
                    ReassessScope::AllVms => None,
                };
                let waiting: Vec<usize> = self.queue.iter().collect();
                let mut placed = HashSet::new();
                for id in waiting {
                    if only.is_some_and(|v| vms[v].active_tasks() >= self.policy.max_active()) {
                        break;
                    }
                    if let BalancerDecision::Assign { vm, demand } = self.decide(vms, &tasks[id], only)? {
                        assigned.push(self.commit(vms, &tasks[id], vm, demand)?);
                        placed.insert(id);
                    }
                }
                if !placed.is_empty() {
                    self.queue.retain(|t| !placed.contains(&t));
                }
            }
        }
        Ok(assigned)
    }
}
