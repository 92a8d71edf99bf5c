//! Data centers, hosts and VMs, with per-VM resource accounting.
//!
//! Resource amounts are held in fixed point (thousandths of a unit) so that
//! allocate/release round-trips are exact and conservation checks can use
//! equality instead of tolerances.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

const MILLI: f64 = 1000.0;

#[derive(Debug, Error, PartialEq)]
pub enum CloudError {
    #[error("invalid {what}: {reason}")]
    InvalidSpec { what: &'static str, reason: String },
    #[error("VM {vm} lacks resources: demand {demand} exceeds available {available}")]
    InsufficientResources {
        vm: usize,
        demand: ResourceVector,
        available: ResourceVector,
    },
    #[error("VM {vm} already runs {active} tasks (threshold {threshold})")]
    ThresholdExceeded { vm: usize, active: usize, threshold: usize },
    #[error("task {task} is not running on VM {vm}")]
    UnknownTask { vm: usize, task: usize },
    #[error("task {task} is already running on VM {vm}")]
    DuplicateTask { vm: usize, task: usize },
    #[error("VM {vm_index} ({tier:?}) does not fit on any host of data center {dc}")]
    PlacementFailure { dc: usize, vm_index: usize, tier: VmTier },
}

/// Per-DC prices. Only `cpu_per_sec` feeds the headline cost metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRates {
    pub cpu_per_sec: f64,
    pub ram_per_mb: f64,
    pub bw_per_mbps: f64,
    pub storage_per_mb: f64,
}

impl Default for CostRates {
    fn default() -> Self {
        Self {
            cpu_per_sec: 3.0,
            ram_per_mb: 0.004,
            bw_per_mbps: 0.01,
            storage_per_mb: 0.0001,
        }
    }
}

impl CostRates {
    pub fn validate(&self) -> Result<(), CloudError> {
        let all = [self.cpu_per_sec, self.ram_per_mb, self.bw_per_mbps, self.storage_per_mb];
        if all.iter().all(|r| r.is_finite() && *r >= 0.0) {
            Ok(())
        } else {
            Err(CloudError::InvalidSpec {
                what: "cost rates",
                reason: format!("{self:?} must be finite and non-negative"),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HostType {
    Type1,
    Type2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostSpec {
    pub ram_mb: u32,
    pub storage_gb: u32,
    pub bw_mbps: u32,
    pub cores: u32,
}

impl HostSpec {
    pub fn of(kind: HostType) -> Self {
        match kind {
            HostType::Type1 => HostSpec { ram_mb: 1024, storage_gb: 10, bw_mbps: 1000, cores: 4 },
            HostType::Type2 => HostSpec { ram_mb: 2048, storage_gb: 20, bw_mbps: 2000, cores: 8 },
        }
    }

    pub fn validate(&self) -> Result<(), CloudError> {
        if self.ram_mb == 0 || self.storage_gb == 0 || self.bw_mbps == 0 || self.cores == 0 {
            return Err(CloudError::InvalidSpec {
                what: "host spec",
                reason: format!("{self:?} has a zero field"),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VmTier {
    LowSpec,
    HighSpec,
}

impl VmTier {
    pub fn as_str(self) -> &'static str {
        match self {
            VmTier::LowSpec => "low",
            VmTier::HighSpec => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VmSpec {
    pub mips_per_core: f64,
    pub cores: u32,
    pub ram_mb: u32,
    pub bw_mbps: u32,
    pub storage_gb: u32,
    pub tier: VmTier,
}

impl VmSpec {
    pub fn low_spec() -> Self {
        VmSpec { mips_per_core: 500.0, cores: 1, ram_mb: 1024, bw_mbps: 1000, storage_gb: 10, tier: VmTier::LowSpec }
    }

    pub fn high_spec() -> Self {
        VmSpec { mips_per_core: 1000.0, cores: 2, ram_mb: 2048, bw_mbps: 2000, storage_gb: 20, tier: VmTier::HighSpec }
    }

    pub fn of(tier: VmTier) -> Self {
        match tier {
            VmTier::LowSpec => Self::low_spec(),
            VmTier::HighSpec => Self::high_spec(),
        }
    }

    pub fn validate(&self) -> Result<(), CloudError> {
        let ok = self.mips_per_core.is_finite()
            && self.mips_per_core > 0.0
            && self.cores > 0
            && self.ram_mb > 0
            && self.bw_mbps > 0
            && self.storage_gb > 0;
        if ok {
            Ok(())
        } else {
            Err(CloudError::InvalidSpec {
                what: "VM spec",
                reason: format!("{self:?} must have all fields > 0"),
            })
        }
    }
}

/// Total schedulable capacity of a VM: MIPS summed over cores, RAM and BW as given.
pub fn total_capacity(spec: &VmSpec) -> ResourceVector {
    ResourceVector::new(spec.mips_per_core * f64::from(spec.cores), f64::from(spec.ram_mb), f64::from(spec.bw_mbps))
}

/// MIPS, RAM (MB) and bandwidth (MB/s), stored in thousandths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct ResourceVector {
    mips: u64,
    ram: u64,
    bw: u64,
}

fn to_milli(v: f64) -> u64 {
    assert!(v.is_finite() && v >= 0.0, "resource amount must be finite and non-negative, got {v}");
    (v * MILLI).round() as u64
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector { mips: 0, ram: 0, bw: 0 };

    /// Panics on negative or non-finite components.
    pub fn new(mips: f64, ram_mb: f64, bw_mbps: f64) -> Self {
        Self { mips: to_milli(mips), ram: to_milli(ram_mb), bw: to_milli(bw_mbps) }
    }

    pub fn mips(&self) -> f64 {
        self.mips as f64 / MILLI
    }

    pub fn ram_mb(&self) -> f64 {
        self.ram as f64 / MILLI
    }

    pub fn bw_mbps(&self) -> f64 {
        self.bw as f64 / MILLI
    }

    /// Componentwise `self <= other`.
    pub fn fits_within(&self, other: &ResourceVector) -> bool {
        self.mips <= other.mips && self.ram <= other.ram && self.bw <= other.bw
    }

    /// Sum of the three components in their natural units.
    pub fn component_sum(&self) -> f64 {
        (self.mips + self.ram + self.bw) as f64 / MILLI
    }

    pub fn checked_sub(&self, other: &ResourceVector) -> Option<ResourceVector> {
        Some(ResourceVector {
            mips: self.mips.checked_sub(other.mips)?,
            ram: self.ram.checked_sub(other.ram)?,
            bw: self.bw.checked_sub(other.bw)?,
        })
    }
}

impl Add for ResourceVector {
    type Output = ResourceVector;
    fn add(self, rhs: Self) -> Self {
        ResourceVector { mips: self.mips + rhs.mips, ram: self.ram + rhs.ram, bw: self.bw + rhs.bw }
    }
}

impl Sub for ResourceVector {
    type Output = ResourceVector;
    /// Panics on underflow; use [`ResourceVector::checked_sub`] when that can happen.
    fn sub(self, rhs: Self) -> Self {
        self.checked_sub(&rhs).expect("resource vector underflow")
    }
}

impl std::iter::Sum for ResourceVector {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ResourceVector::ZERO, Add::add)
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.mips(), self.ram_mb(), self.bw_mbps())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VmState {
    pub vm_id: usize,
    pub dc_id: usize,
    pub spec: VmSpec,
    capacity: ResourceVector,
    available: ResourceVector,
    per_task_demand: BTreeMap<usize, ResourceVector>,
}

impl VmState {
    pub fn new(vm_id: usize, dc_id: usize, spec: VmSpec) -> Result<Self, CloudError> {
        spec.validate()?;
        let capacity = total_capacity(&spec);
        Ok(Self { vm_id, dc_id, spec, capacity, available: capacity, per_task_demand: BTreeMap::new() })
    }

    pub fn capacity(&self) -> ResourceVector {
        self.capacity
    }

    pub fn available(&self) -> ResourceVector {
        self.available
    }

    pub fn active_tasks(&self) -> usize {
        self.per_task_demand.len()
    }

    pub fn demand_of(&self, task: usize) -> Option<ResourceVector> {
        self.per_task_demand.get(&task).copied()
    }

    pub fn running_tasks(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_task_demand.keys().copied()
    }

    /// Reserves `demand` for `task`. `threshold` caps the number of concurrent tasks.
    pub fn allocate(&mut self, task: usize, demand: ResourceVector, threshold: usize) -> Result<(), CloudError> {
        if self.active_tasks() >= threshold {
            return Err(CloudError::ThresholdExceeded { vm: self.vm_id, active: self.active_tasks(), threshold });
        }
        if self.per_task_demand.contains_key(&task) {
            return Err(CloudError::DuplicateTask { vm: self.vm_id, task });
        }
        let Some(rest) = self.available.checked_sub(&demand) else {
            return Err(CloudError::InsufficientResources { vm: self.vm_id, demand, available: self.available });
        };
        self.available = rest;
        self.per_task_demand.insert(task, demand);
        Ok(())
    }

    /// Returns the demand that was held by `task`.
    pub fn release(&mut self, task: usize) -> Result<ResourceVector, CloudError> {
        let demand = self
            .per_task_demand
            .remove(&task)
            .ok_or(CloudError::UnknownTask { vm: self.vm_id, task })?;
        self.available = self.available + demand;
        debug_assert!(self.available.fits_within(&self.capacity));
        Ok(demand)
    }

    /// `capacity - available == sum of per-task demands` and `available <= capacity`.
    pub fn is_conserved(&self) -> bool {
        let held: ResourceVector = self.per_task_demand.values().copied().sum();
        self.available.fits_within(&self.capacity) && self.available + held == self.capacity
    }
}

/// Host index for each VM, in VM order.
pub type Placement = Vec<usize>;

#[derive(Debug, Clone, Copy)]
struct HostRoom {
    cores: u32,
    ram_mb: u32,
    storage_gb: u32,
}

impl HostRoom {
    fn take(&mut self, vm: &VmSpec) -> bool {
        if vm.cores <= self.cores && vm.ram_mb <= self.ram_mb && vm.storage_gb <= self.storage_gb {
            self.cores -= vm.cores;
            self.ram_mb -= vm.ram_mb;
            self.storage_gb -= vm.storage_gb;
            true
        } else {
            false
        }
    }
}

/// First-fit placement by host index on cores, RAM and storage.
pub fn place_vms(dc_id: usize, hosts: &[HostSpec], vms: &[VmSpec]) -> Result<Placement, CloudError> {
    let mut room: Vec<HostRoom> = hosts
        .iter()
        .map(|h| HostRoom { cores: h.cores, ram_mb: h.ram_mb, storage_gb: h.storage_gb })
        .collect();
    vms.iter()
        .enumerate()
        .map(|(i, vm)| {
            room.iter_mut()
                .position(|r| r.take(vm))
                .ok_or(CloudError::PlacementFailure { dc: dc_id, vm_index: i, tier: vm.tier })
        })
        .collect()
}

/// Opens hosts on demand while placing first-fit: when no open host can take
/// the next VM, the smallest host type that fits it is added.
pub fn provision_hosts(dc_id: usize, host_types: &[HostType], vms: &[VmSpec]) -> Result<Vec<HostSpec>, CloudError> {
    let mut kinds: Vec<HostSpec> = host_types.iter().map(|k| HostSpec::of(*k)).collect();
    kinds.sort_by_key(|h| (h.cores, h.ram_mb, h.storage_gb));
    let mut hosts = Vec::new();
    let mut room: Vec<HostRoom> = Vec::new();
    for (i, vm) in vms.iter().enumerate() {
        if room.iter_mut().any(|r| r.take(vm)) {
            continue;
        }
        let fresh = kinds
            .iter()
            .find_map(|h| {
                let mut r = HostRoom { cores: h.cores, ram_mb: h.ram_mb, storage_gb: h.storage_gb };
                r.take(vm).then_some((*h, r))
            })
            .ok_or(CloudError::PlacementFailure { dc: dc_id, vm_index: i, tier: vm.tier })?;
        hosts.push(fresh.0);
        room.push(fresh.1);
    }
    Ok(hosts)
}

#[derive(Debug, Clone)]
pub struct DataCenter {
    pub dc_id: usize,
    pub cost_rates: CostRates,
    pub hosts: Vec<HostSpec>,
    /// Global ids of the VMs hosted here.
    pub vm_ids: Vec<usize>,
    pub placement: Placement,
}

impl DataCenter {
    /// Static daily-rate style cost of the provisioned VM footprint (RAM, BW, storage).
    pub fn extended_cost(&self, vms: &[VmState]) -> f64 {
        self.vm_ids
            .iter()
            .map(|&id| {
                let s = &vms[id].spec;
                f64::from(s.ram_mb) * self.cost_rates.ram_per_mb
                    + f64::from(s.bw_mbps) * self.cost_rates.bw_per_mbps
                    + f64::from(s.storage_gb) * 1000.0 * self.cost_rates.storage_per_mb
            })
            .sum()
    }
}

/// Global VM id → tier. Even ids are low-spec, odd ids high-spec.
pub fn alternating_tier(vm_id: usize) -> VmTier {
    if vm_id.is_multiple_of(2) {
        VmTier::LowSpec
    } else {
        VmTier::HighSpec
    }
}

/// How VM ids map to tiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TierMix {
    /// Even ids low-spec, odd ids high-spec.
    #[default]
    Alternating,
    AllLow,
    AllHigh,
}

impl TierMix {
    pub fn tier(self, vm_id: usize) -> VmTier {
        match self {
            TierMix::Alternating => alternating_tier(vm_id),
            TierMix::AllLow => VmTier::LowSpec,
            TierMix::AllHigh => VmTier::HighSpec,
        }
    }
}

/// [`build_cloud_with`] using the alternating tier mix.
pub fn build_cloud(
    dcs: usize,
    vms_per_dc: usize,
    host_types: &[HostType],
    rates: CostRates,
) -> Result<(Vec<DataCenter>, Vec<VmState>), CloudError> {
    build_cloud_with(dcs, vms_per_dc, TierMix::Alternating, host_types, rates)
}

/// Builds `dcs` data centers of `vms_per_dc` VMs each, provisioning hosts and
/// placing VMs. VM ids are global and contiguous per DC.
pub fn build_cloud_with(
    dcs: usize,
    vms_per_dc: usize,
    mix: TierMix,
    host_types: &[HostType],
    rates: CostRates,
) -> Result<(Vec<DataCenter>, Vec<VmState>), CloudError> {
    if dcs == 0 || vms_per_dc == 0 || host_types.is_empty() {
        return Err(CloudError::InvalidSpec {
            what: "cloud layout",
            reason: format!("need at least one DC, VM and host type (got {dcs}, {vms_per_dc}, {})", host_types.len()),
        });
    }
    rates.validate()?;
    let mut centers = Vec::with_capacity(dcs);
    let mut vms = Vec::with_capacity(dcs * vms_per_dc);
    for dc_id in 0..dcs {
        let ids: Vec<usize> = (dc_id * vms_per_dc..(dc_id + 1) * vms_per_dc).collect();
        let specs: Vec<VmSpec> = ids.iter().map(|&id| VmSpec::of(mix.tier(id))).collect();
        let hosts = provision_hosts(dc_id, host_types, &specs)?;
        let placement = place_vms(dc_id, &hosts, &specs)?;
        for (&id, spec) in ids.iter().zip(&specs) {
            vms.push(VmState::new(id, dc_id, *spec)?);
        }
        centers.push(DataCenter { dc_id, cost_rates: rates, hosts, vm_ids: ids, placement });
    }
    Ok((centers, vms))
}
