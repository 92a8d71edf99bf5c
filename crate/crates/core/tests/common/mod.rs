//! Oracles shared by the integration tests. They are written from the
//! definitions, without calling the crate code they check.

#![allow(dead_code)]

use rand::Rng;
use simlb::balancer::{NormalizationBounds, TaskThreshold};
use simlb::cloud::{ResourceVector, VmSpec, VmState};

/// Γ(n/2) for a positive integer n, from Γ(1/2) = √π and Γ(1) = 1.
pub fn gamma_half(n: u32) -> f64 {
    let mut g = if n.is_multiple_of(2) { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut k = if n.is_multiple_of(2) { 2 } else { 1 };
    while k < n {
        g *= k as f64 / 2.0;
        k += 2;
    }
    g
}

/// Student-t density with `df` degrees of freedom.
pub fn t_density(s: f64, df: u32) -> f64 {
    let v = df as f64;
    gamma_half(df + 1) / ((v * std::f64::consts::PI).sqrt() * gamma_half(df)) * (1.0 + s * s / v).powf(-(v + 1.0) / 2.0)
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let m = 0.5 * (a + b);
    (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (l, r) = (simpson(f, a, m), simpson(f, m, b));
    if depth == 0 || (l + r - whole).abs() <= 15.0 * tol {
        l + r + (l + r - whole) / 15.0
    } else {
        adaptive(f, a, m, l, tol / 2.0, depth - 1) + adaptive(f, m, b, r, tol / 2.0, depth - 1)
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    adaptive(f, a, b, simpson(f, a, b), tol, 50)
}

/// Two-sided Student-t tail `P(|T| >= t)` by quadrature of the density.
/// The far tail is integrated over `1/u` to keep the range finite.
pub fn t_two_sided_by_quadrature(t: f64, df: u32) -> f64 {
    let t = t.abs();
    let f = |s: f64| t_density(s, df);
    let tail = if t >= 1.0 {
        // ∫_t^∞ f(s) ds = ∫_0^{1/t} f(1/u) / u² du
        integrate(&|u: f64| if u == 0.0 { 0.0 } else { f(1.0 / u) / (u * u) }, 0.0, 1.0 / t, 1e-15)
    } else {
        integrate(&f, t, 1.0, 1e-15) + integrate(&|u: f64| if u == 0.0 { 0.0 } else { f(1.0 / u) / (u * u) }, 0.0, 1.0, 1e-15)
    };
    2.0 * tail
}

/// Demand by the min-max formula, written out longhand.
pub fn oracle_demand(length_mi: f64, spec: &VmSpec, b: &NormalizationBounds) -> [f64; 3] {
    let caps = [spec.mips_per_core * spec.cores as f64, spec.ram_mb as f64, spec.bw_mbps as f64];
    caps.map(|c| {
        let lo = b.floor_fraction * c;
        lo + (length_mi - b.mi_min) * (c - lo) / (b.mi_max - b.mi_min)
    })
}

/// Brute-force score-based choice: `Some(vm)` or `None` for "enqueue".
pub fn oracle_select(vms: &[VmState], length_mi: f64, b: &NormalizationBounds, threshold: TaskThreshold) -> Option<usize> {
    let mut scores: Vec<(usize, f64)> = Vec::new();
    for vm in vms {
        if vm.active_tasks() >= threshold.get() {
            continue;
        }
        let d = oracle_demand(length_mi, &vm.spec, b);
        let demand = ResourceVector::new(d[0], d[1], d[2]);
        let avail = vm.available();
        let fits = demand.mips() <= avail.mips() && demand.ram_mb() <= avail.ram_mb() && demand.bw_mbps() <= avail.bw_mbps();
        let score = if fits { avail.mips() + avail.ram_mb() + avail.bw_mbps() } else { -1.0 };
        scores.push((vm.vm_id, score));
    }
    let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    if best < 0.0 {
        return None;
    }
    scores.iter().filter(|s| s.1 == best).map(|s| s.0).min()
}

/// A random set of VMs with random tasks already running on them.
pub fn random_vms<R: Rng>(rng: &mut R, b: &NormalizationBounds, threshold: usize) -> Vec<VmState> {
    let n = rng.gen_range(1..=6);
    let mut next_task = 10_000;
    (0..n)
        .map(|id| {
            let spec = if rng.gen_bool(0.5) { VmSpec::low_spec() } else { VmSpec::high_spec() };
            let mut vm = VmState::new(id, 0, spec).unwrap();
            for _ in 0..rng.gen_range(0..=threshold) {
                let len = random_length(rng, b);
                let d = oracle_demand(len, &spec, b);
                let demand = ResourceVector::new(d[0], d[1], d[2]);
                if vm.allocate(next_task, demand, threshold).is_ok() {
                    next_task += 1;
                }
            }
            vm
        })
        .collect()
}

/// Log-uniform task length inside the bounds, so small and large tasks both occur.
pub fn random_length<R: Rng>(rng: &mut R, b: &NormalizationBounds) -> f64 {
    rng.gen_range(b.mi_min.ln()..=b.mi_max.ln()).exp().clamp(b.mi_min, b.mi_max)
}
