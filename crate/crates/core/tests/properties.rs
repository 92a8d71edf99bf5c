mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simlb::balancer::{
    normalize_demand, sbdlb_score, sbdlb_select, BalancerDecision, NormalizationBounds, Policy, QueueMode, ReassessScope,
    TaskThreshold, VmScore, WaitQueue,
};
use simlb::cloud::{build_cloud, CostRates, HostType, ResourceVector, VmSpec, VmState};
use simlb::engine::{simulate, SimOptions};
use simlb::kernel::SimTime;
use simlb::metrics::{summarize, TaskRecord};
use simlb::stats::{paired_t_test, student_t_two_sided, PairedSample};
use simlb::workload::{build_batch_schedule, BatchPlan, CategoryName, CategoryTable, Task, Workload};

fn bounds() -> NormalizationBounds {
    NormalizationBounds::new(0.1, 1e7, 0.2).unwrap()
}

fn small_world(seed: u64, batches: usize, size: usize, dcs: usize, vms: usize) -> (Workload, Vec<VmState>) {
    let schedule = build_batch_schedule(&BatchPlan::new(batches, size, 1.0).unwrap());
    let w = Workload::generate(&mut ChaCha8Rng::seed_from_u64(seed), &CategoryTable::default(), &schedule);
    let (_, vms) = build_cloud(dcs, vms, &[HostType::Type1, HostType::Type2], CostRates::default()).unwrap();
    (w, vms)
}

fn task(id: usize, length_mi: f64) -> Task {
    Task { length_mi, ..Task::new(id, CategoryName::Images, 1, 1.0, SimTime::ZERO) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Allocating and releasing any set of tasks in any order restores the VM exactly.
    #[test]
    fn allocate_release_conserves(lengths in prop::collection::vec(0.1f64..1e7, 1..4), order in any::<u64>(), high in any::<bool>()) {
        let spec = if high { VmSpec::high_spec() } else { VmSpec::low_spec() };
        let mut vm = VmState::new(0, 0, spec).unwrap();
        let mut held = Vec::new();
        for (i, len) in lengths.iter().enumerate() {
            let d = normalize_demand(*len, &spec, &bounds()).unwrap();
            if vm.allocate(i, d, 3).is_ok() {
                held.push(i);
            }
            prop_assert!(vm.is_conserved());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(order);
        rand::seq::SliceRandom::shuffle(held.as_mut_slice(), &mut rng);
        for t in held {
            vm.release(t).unwrap();
            prop_assert!(vm.is_conserved());
        }
        prop_assert_eq!(vm.available(), vm.capacity());
    }

    /// Whole runs conserve resources on every VM after every event and end with every VM idle.
    #[test]
    fn simulation_conserves_everywhere(seed in 0u64..1000, size in 1usize..12, sbdlb in any::<bool>()) {
        let (w, vms) = small_world(seed, 8, size, 2, 3);
        let policy = if sbdlb { Policy::Sbdlb { bounds: bounds(), threshold: TaskThreshold::default() } } else { Policy::Throttled };
        let mut opts = SimOptions::new(policy);
        opts.full_checks = true;
        let out = simulate(&w, vms, &opts).unwrap();
        prop_assert_eq!(out.unfinished, 0);
        prop_assert!(out.vms.iter().all(|v| v.available() == v.capacity() && v.active_tasks() == 0));
        prop_assert!(out.peak_active <= opts.policy.max_active());
    }

    /// Reassessing only the freed VM gives the same schedule as rescanning every VM.
    #[test]
    fn freed_vm_scope_matches_full_rescan(seed in 0u64..1000, size in 2usize..15, sbdlb in any::<bool>(), threshold in 1usize..5) {
        let (w, vms) = small_world(seed, 6, size, 1, 4);
        let policy = if sbdlb { Policy::Sbdlb { bounds: bounds(), threshold: TaskThreshold::new(threshold).unwrap() } } else { Policy::Throttled };
        let mut fast = SimOptions::new(policy);
        fast.trace = true;
        let mut full = fast.clone();
        full.scope = ReassessScope::AllVms;
        let a = simulate(&w, vms.clone(), &fast).unwrap();
        let b = simulate(&w, vms, &full).unwrap();
        prop_assert_eq!(a.trace, b.trace);
        for (x, y) in a.tasks.iter().zip(&b.tasks) {
            prop_assert_eq!((x.assigned_vm, x.start, x.finish), (y.assigned_vm, y.start, y.finish));
        }
    }

    /// Adding a task strictly lowers the VM's next score.
    #[test]
    fn score_decreases_after_allocation(len in 0.1f64..1e7, probe in 0.1f64..1e7, high in any::<bool>()) {
        let spec = if high { VmSpec::high_spec() } else { VmSpec::low_spec() };
        let mut vm = VmState::new(0, 0, spec).unwrap();
        let th = TaskThreshold::new(5).unwrap();
        let p = normalize_demand(probe, &spec, &bounds()).unwrap();
        let before = sbdlb_score(&vm, &p, th);
        vm.allocate(1, normalize_demand(len, &spec, &bounds()).unwrap(), 5).unwrap();
        let after = sbdlb_score(&vm, &p, th);
        let value = |s: VmScore| s.value().unwrap();
        prop_assert!(value(after) < value(before));
    }

    /// The selection agrees with a brute-force argmax over independently computed scores.
    #[test]
    fn selection_matches_brute_force(seed in any::<u64>(), threshold in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = bounds();
        let vms = common::random_vms(&mut rng, &b, threshold);
        let len = common::random_length(&mut rng, &b);
        let th = TaskThreshold::new(threshold).unwrap();
        let got = match sbdlb_select(&vms, &task(0, len), &b, th).unwrap() {
            BalancerDecision::Assign { vm, .. } => Some(vm),
            BalancerDecision::Enqueue => None,
        };
        prop_assert_eq!(got, common::oracle_select(&vms, len, &b, th));
    }

    /// The wait queue hands tasks back in insertion order.
    #[test]
    fn wait_queue_is_fifo(ids in prop::collection::btree_set(0usize..10_000, 0..50)) {
        let mut q = WaitQueue::new();
        let ids: Vec<usize> = ids.into_iter().rev().collect();
        for &id in &ids {
            q.push(id).unwrap();
        }
        if let Some(&first) = ids.first() {
            prop_assert!(q.push(first).is_err());
        }
        prop_assert_eq!(q.iter().collect::<Vec<_>>(), ids);
    }

    /// Multiplying every timestamp by k multiplies response, processing time and cost by k.
    #[test]
    fn metrics_scale_with_time(times in prop::collection::vec((0.0f64..1e4, 0.0f64..1e3, 0.0f64..1e3, 0usize..3), 1..30), k in 0.1f64..100.0) {
        let recs = |scale: f64| -> Vec<TaskRecord> {
            times.iter().enumerate().map(|(i, &(a, wait, run, dc))| TaskRecord {
                task_id: i, category: CategoryName::Text, length_mi: 1.0, vm_id: dc, dc_id: dc,
                arrival: a * scale, start: (a + wait) * scale, finish: (a + wait + run) * scale,
            }).collect()
        };
        let rates = CostRates::default();
        let base = summarize(&recs(1.0), &rates, 0).unwrap();
        let scaled = summarize(&recs(k), &rates, 0).unwrap();
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * y.abs().max(1.0);
        prop_assert!(close(scaled.avg_response, k * base.avg_response));
        prop_assert!(close(scaled.total_dc_processing, k * base.total_dc_processing));
        prop_assert!(close(scaled.total_cost, k * base.total_cost));
    }

    /// Shifting both samples by the same constant leaves the paired test unchanged.
    #[test]
    fn t_test_is_location_invariant(pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..20), c in -1e3f64..1e3) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let base = paired_t_test(&PairedSample { labels: vec![], a: a.clone(), b: b.clone() });
        let moved = paired_t_test(&PairedSample {
            labels: vec![],
            a: a.iter().map(|x| x + c).collect(),
            b: b.iter().map(|x| x + c).collect(),
        });
        if let (Ok(x), Ok(y)) = (base, moved) {
            prop_assert!((x.t_statistic - y.t_statistic).abs() <= 1e-6 * x.t_statistic.abs().max(1.0));
            prop_assert!((x.p_two_sided - y.p_two_sided).abs() <= 1e-8);
        }
    }

    /// Larger |t| never gives a larger two-sided p.
    #[test]
    fn p_decreases_with_abs_t(t1 in 0.0f64..50.0, dt in 0.0f64..50.0, df in 1usize..60) {
        let (p1, p2) = (student_t_two_sided(t1, df as f64), student_t_two_sided(t1 + dt, df as f64));
        prop_assert!(p2 <= p1 + 1e-12);
        prop_assert!((0.0..=1.0).contains(&p1));
        prop_assert_eq!(student_t_two_sided(-t1, df as f64), p1);
    }
}

#[test]
fn head_only_mode_never_lets_a_later_task_start_first() {
    let (w, vms) = small_world(9, 20, 10, 1, 4);
    let mut opts = SimOptions::new(Policy::Sbdlb { bounds: bounds(), threshold: TaskThreshold::default() });
    opts.queue_mode = QueueMode::HeadOnly;
    let out = simulate(&w, vms, &opts).unwrap();
    assert!(out.tasks.windows(2).all(|p| p[0].start.unwrap() <= p[1].start.unwrap()));
}

#[test]
fn fixed_point_vectors_round_trip() {
    let v = ResourceVector::new(262.5, 537.6, 525.0);
    assert_eq!(v + ResourceVector::ZERO, v);
    assert_eq!((v + v).checked_sub(&v), Some(v));
}
