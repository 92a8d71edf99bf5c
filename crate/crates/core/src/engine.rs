//! Event loop tying the kernel, the cloud model and a balancer together.

use thiserror::Error;

use crate::balancer::{Assignment, Balancer, BalancerError, Policy, QueueMode, ReassessScope};
use crate::cloud::{DataCenter, VmState};
use crate::execution::{ExecutionModel, VmExecution};
use crate::kernel::{EventKind, EventQueue, KernelError, SimEvent, SimTime};
use crate::workload::{Task, Workload, SECONDS_PER_HOUR};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Balancer(#[from] BalancerError),
    #[error("invariant violated at t={time}: {what}")]
    Invariant { time: f64, what: String },
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub policy: Policy,
    pub queue_mode: QueueMode,
    pub scope: ReassessScope,
    pub execution: ExecutionModel,
    /// Stop at this time; tasks not finished by then are reported as unfinished.
    pub horizon: Option<SimTime>,
    /// Emit `HourBoundary` events for hours `0..hours`.
    pub hour_boundaries: usize,
    pub trace: bool,
    /// Check conservation on every VM after every event instead of only on touched VMs.
    pub full_checks: bool,
}

impl SimOptions {
    pub fn new(policy: Policy) -> Self {
        Self {
            policy,
            queue_mode: QueueMode::Scan,
            scope: ReassessScope::FreedVm,
            execution: ExecutionModel::Proportional,
            horizon: None,
            hour_boundaries: 0,
            trace: false,
            full_checks: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    /// Tasks with `start`, `finish` and `assigned_vm` filled in where reached.
    pub tasks: Vec<Task>,
    pub vms: Vec<VmState>,
    pub events_processed: usize,
    pub end_time: SimTime,
    pub unfinished: usize,
    /// Largest concurrent task count seen on any VM.
    pub peak_active: usize,
    pub trace: Vec<String>,
}

struct World {
    tasks: Vec<Task>,
    batches: Vec<(usize, usize)>,
    vms: Vec<VmState>,
    exec: Vec<VmExecution>,
    balancer: Balancer,
    max_active: usize,
    peak_active: usize,
    full_checks: bool,
    trace: Option<Vec<String>>,
    error: Option<SimError>,
}

impl World {
    fn check_vm(&self, vm: usize, time: SimTime) -> Result<(), SimError> {
        let v = &self.vms[vm];
        if !v.is_conserved() || v.active_tasks() != self.exec[vm].len() {
            return Err(SimError::Invariant { time: time.secs(), what: format!("resources not conserved on VM {vm}") });
        }
        if v.active_tasks() > self.max_active {
            return Err(SimError::Invariant {
                time: time.secs(),
                what: format!("VM {vm} runs {} tasks, limit {}", v.active_tasks(), self.max_active),
            });
        }
        Ok(())
    }

    fn start(&mut self, now: SimTime, a: Assignment) -> Result<(), SimError> {
        if a.demand.mips() <= 0.0 {
            return Err(SimError::Invariant { time: now.secs(), what: format!("task {} granted no MIPS", a.task) });
        }
        let task = &mut self.tasks[a.task];
        task.start = Some(now);
        task.assigned_vm = Some(a.vm);
        self.exec[a.vm].add(now.secs(), a.task, task.length_mi, a.demand.mips());
        self.peak_active = self.peak_active.max(self.vms[a.vm].active_tasks());
        Ok(())
    }

    /// Replaces the VM's pending completion event with one for its next finishing task.
    fn reschedule(&mut self, q: &mut EventQueue, vm: usize) -> Result<(), SimError> {
        let exec = &mut self.exec[vm];
        if let Some((time, seq)) = exec.pending.take() {
            q.cancel(time, seq);
        }
        if let Some((at, task)) = exec.next_completion() {
            let at = SimTime::new(at.max(q.now().secs()))?;
            let seq = q.schedule(at, EventKind::TaskCompletion { task, vm })?;
            exec.pending = Some((at, seq));
        }
        Ok(())
    }

    fn handle(&mut self, q: &mut EventQueue, ev: SimEvent) -> Result<bool, SimError> {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(ev.trace_line());
        }
        let mut touched: Vec<usize> = Vec::new();
        match ev.kind {
            EventKind::BatchArrival { batch } => {
                let (first, len) = self.batches[batch];
                for task in first..first + len {
                    q.schedule(ev.time, EventKind::TaskArrival { task })?;
                }
            }
            EventKind::TaskArrival { task } => {
                if let Some(a) = self.balancer.submit(&self.tasks[task], &mut self.vms)? {
                    touched.push(a.vm);
                    self.start(ev.time, a)?;
                }
            }
            EventKind::TaskCompletion { task, vm } => {
                self.tasks[task].finish = Some(ev.time);
                self.exec[vm].pending = None;
                self.exec[vm].remove(ev.time.secs(), task);
                touched.push(vm);
                let started = self.balancer.on_completion(task, vm, &self.tasks, &mut self.vms)?;
                for a in started {
                    touched.push(a.vm);
                    self.start(ev.time, a)?;
                }
            }
            EventKind::HourBoundary { .. } => {
                touched.extend(0..self.vms.len());
            }
            EventKind::SimulationEnd => return Ok(false),
        }
        if matches!(ev.kind, EventKind::TaskArrival { .. } | EventKind::TaskCompletion { .. }) {
            touched.sort_unstable();
            touched.dedup();
            for &vm in &touched {
                self.reschedule(q, vm)?;
            }
        }
        if self.full_checks {
            touched = (0..self.vms.len()).collect();
        }
        for vm in touched {
            self.check_vm(vm, ev.time)?;
        }
        Ok(true)
    }
}

/// Runs one simulation of `workload` on `vms` under `opts`.
pub fn simulate(workload: &Workload, vms: Vec<VmState>, opts: &SimOptions) -> Result<SimOutcome, SimError> {
    let vm_count = vms.len();
    let exec = vms.iter().map(|v| VmExecution::new(v.capacity().mips(), opts.execution)).collect();
    let mut world = World {
        tasks: workload.tasks.clone(),
        batches: workload.batches.iter().map(|b| (b.first, b.len)).collect(),
        vms,
        exec,
        balancer: Balancer::new(opts.policy, opts.queue_mode, vm_count).with_scope(opts.scope),
        max_active: opts.policy.max_active(),
        peak_active: 0,
        full_checks: opts.full_checks,
        trace: opts.trace.then(Vec::new),
        error: None,
    };
    let mut q = EventQueue::new();
    for (i, b) in workload.batches.iter().enumerate() {
        q.schedule(b.time, EventKind::BatchArrival { batch: i })?;
    }
    for hour in 0..opts.hour_boundaries {
        q.schedule(SimTime::from_secs(hour as f64 * SECONDS_PER_HOUR), EventKind::HourBoundary { hour })?;
    }
    if let Some(h) = opts.horizon {
        q.schedule(h, EventKind::SimulationEnd)?;
    }

    let mut processed = q.run(opts.horizon, |q, ev| match world.handle(q, ev) {
        Ok(go_on) => go_on,
        Err(e) => {
            world.error = Some(e);
            false
        }
    });
    if let Some(e) = world.error.take() {
        return Err(e);
    }
    if opts.horizon.is_none() {
        q.schedule(q.now(), EventKind::SimulationEnd)?;
        processed += q.run(None, |_, ev| {
            if let Some(trace) = world.trace.as_mut() {
                trace.push(ev.trace_line());
            }
            false
        });
        let unpaired: Vec<usize> = world
            .tasks
            .iter()
            .filter(|t| t.finish.is_none())
            .map(|t| t.task_id)
            .take(5)
            .collect();
        if !unpaired.is_empty() || !world.balancer.queue().is_empty() {
            return Err(SimError::Invariant {
                time: q.now().secs(),
                what: format!("tasks left without completion at end of run: {unpaired:?}"),
            });
        }
    }
    for vm in 0..world.vms.len() {
        world.check_vm(vm, q.now())?;
    }

    let unfinished = world.tasks.iter().filter(|t| t.finish.is_none()).count();
    Ok(SimOutcome {
        tasks: world.tasks,
        vms: world.vms,
        events_processed: processed,
        end_time: q.now(),
        unfinished,
        peak_active: world.peak_active,
        trace: world.trace.unwrap_or_default(),
    })
}

/// Tasks executed per VM, indexed by VM id.
pub fn tasks_per_vm(outcome: &SimOutcome) -> Vec<usize> {
    let mut counts = vec![0; outcome.vms.len()];
    for t in &outcome.tasks {
        if let (Some(vm), Some(_)) = (t.assigned_vm, t.finish) {
            counts[vm] += 1;
        }
    }
    counts
}

/// Global VM id → data center id.
pub fn vm_dc_index(dcs: &[DataCenter], vm_count: usize) -> Vec<usize> {
    let mut idx = vec![0; vm_count];
    for dc in dcs {
        for &vm in &dc.vm_ids {
            idx[vm] = dc.dc_id;
        }
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balancer::{NormalizationBounds, TaskThreshold};
    use crate::cloud::{build_cloud, CostRates, HostType};
    use crate::workload::{build_batch_schedule, BatchPlan, CategoryTable};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(batches: usize, size: usize) -> (Workload, Vec<VmState>) {
        let table = CategoryTable::default();
        let schedule = build_batch_schedule(&BatchPlan::new(batches, size, 1.0).unwrap());
        let w = Workload::generate(&mut ChaCha8Rng::seed_from_u64(5), &table, &schedule);
        let (_, vms) = build_cloud(2, 4, &[HostType::Type1, HostType::Type2], CostRates::default()).unwrap();
        (w, vms)
    }

    fn sbdlb() -> Policy {
        Policy::Sbdlb { bounds: NormalizationBounds::new(0.1, 1e7, 0.05).unwrap(), threshold: TaskThreshold::default() }
    }

    #[test]
    fn every_task_completes_once() {
        let (w, vms) = setup(20, 5);
        for policy in [sbdlb(), Policy::Throttled] {
            let out = simulate(&w, vms.clone(), &SimOptions::new(policy)).unwrap();
            assert_eq!(out.unfinished, 0);
            // batches + arrivals + completions + end
            assert_eq!(out.events_processed, 20 + 100 + 100 + 1);
            for t in &out.tasks {
                assert!(t.arrival <= t.start.unwrap() && t.start.unwrap() <= t.finish.unwrap());
            }
            assert!(out.vms.iter().all(|v| v.active_tasks() == 0 && v.available() == v.capacity()));
        }
    }

    #[test]
    fn trace_is_monotone_and_reproducible() {
        let (w, vms) = setup(10, 8);
        let mut opts = SimOptions::new(sbdlb());
        opts.trace = true;
        let a = simulate(&w, vms.clone(), &opts).unwrap();
        let b = simulate(&w, vms, &opts).unwrap();
        assert_eq!(a.trace, b.trace);
        let times: Vec<f64> = a.trace.iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
        assert!(times.windows(2).all(|p| p[0] <= p[1]));
        assert!(a.trace.last().unwrap().contains("SimulationEnd"));
    }

    #[test]
    fn horizon_leaves_unfinished_tasks() {
        let (w, vms) = setup(10, 20);
        let mut opts = SimOptions::new(Policy::Throttled);
        opts.horizon = Some(SimTime::from_secs(5.0));
        let out = simulate(&w, vms, &opts).unwrap();
        assert!(out.unfinished > 0);
        assert!(out.end_time.secs() <= 5.0);
    }

    #[test]
    fn throttled_never_doubles_up() {
        let (w, vms) = setup(10, 10);
        let mut opts = SimOptions::new(Policy::Throttled);
        opts.full_checks = true;
        let out = simulate(&w, vms, &opts).unwrap();
        assert_eq!(out.peak_active, 1);
    }
}
