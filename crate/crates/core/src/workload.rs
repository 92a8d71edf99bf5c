//! Task streams: category sampling, MI lengths, batch schedules and the
//! 24-hour peak/non-peak plan.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kernel::SimTime;

pub const SECONDS_PER_HOUR: f64 = 3600.0;
const MI_DIVISOR: f64 = 1e6;

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("invalid category table: {0}")]
    InvalidCategories(String),
    #[error("invalid batch plan: {0}")]
    InvalidPlan(String),
    #[error("unknown task category `{0}`")]
    UnknownCategory(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CategoryName {
    Reels,
    Images,
    Text,
}

impl CategoryName {
    pub fn as_str(self) -> &'static str {
        match self {
            CategoryName::Reels => "reels",
            CategoryName::Images => "images",
            CategoryName::Text => "text",
        }
    }
}

impl fmt::Display for CategoryName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CategoryName {
    type Err = WorkloadError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "reels" => Ok(CategoryName::Reels),
            "images" => Ok(CategoryName::Images),
            "text" => Ok(CategoryName::Text),
            other => Err(WorkloadError::UnknownCategory(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCategory {
    pub name: CategoryName,
    /// Inclusive byte-size range.
    pub size_range_bytes: [u64; 2],
    /// Instructions per byte.
    pub ci_range: [f64; 2],
    pub share: f64,
}

impl TaskCategory {
    pub fn mi_bounds(&self) -> (f64, f64) {
        (
            compute_mi(self.size_range_bytes[0], self.ci_range[0]),
            compute_mi(self.size_range_bytes[1], self.ci_range[1]),
        )
    }
}

/// How sizes are drawn inside a category's range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeSampling {
    #[default]
    Uniform,
    LogUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryTable {
    pub categories: Vec<TaskCategory>,
    #[serde(default)]
    pub size_sampling: SizeSampling,
}

impl Default for CategoryTable {
    fn default() -> Self {
        Self {
            categories: vec![
                TaskCategory {
                    name: CategoryName::Reels,
                    size_range_bytes: [10_000_000, 1_000_000_000],
                    ci_range: [1000.0, 10_000.0],
                    share: 0.60,
                },
                TaskCategory {
                    name: CategoryName::Images,
                    size_range_bytes: [1_000_000, 30_000_000],
                    ci_range: [500.0, 1000.0],
                    share: 0.30,
                },
                TaskCategory {
                    name: CategoryName::Text,
                    size_range_bytes: [10_000, 100_000],
                    ci_range: [10.0, 100.0],
                    share: 0.10,
                },
            ],
            size_sampling: SizeSampling::Uniform,
        }
    }
}

impl CategoryTable {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.categories.is_empty() {
            return Err(WorkloadError::InvalidCategories("no categories".into()));
        }
        for c in &self.categories {
            let [s0, s1] = c.size_range_bytes;
            let [c0, c1] = c.ci_range;
            if s0 == 0 || s0 > s1 || !(c0 > 0.0 && c0 <= c1 && c1.is_finite()) || c.share.is_nan() || c.share < 0.0 {
                return Err(WorkloadError::InvalidCategories(format!("bad ranges for {}", c.name)));
            }
        }
        let total: f64 = self.categories.iter().map(|c| c.share).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(WorkloadError::InvalidCategories(format!("shares sum to {total}, expected 1")));
        }
        Ok(())
    }

    /// Smallest and largest MI any category can produce.
    pub fn mi_bounds(&self) -> (f64, f64) {
        self.categories.iter().map(TaskCategory::mi_bounds).fold((f64::INFINITY, 0.0), |(lo, hi), (a, b)| {
            (lo.min(a), hi.max(b))
        })
    }

    pub fn get(&self, name: CategoryName) -> Option<&TaskCategory> {
        self.categories.iter().find(|c| c.name == name)
    }
}

/// `bytes × CI / 10⁶`.
pub fn compute_mi(size_bytes: u64, ci: f64) -> f64 {
    size_bytes as f64 * ci / MI_DIVISOR
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub task_id: usize,
    pub category: CategoryName,
    pub size_bytes: u64,
    pub ci: f64,
    pub length_mi: f64,
    pub arrival: SimTime,
    pub start: Option<SimTime>,
    pub finish: Option<SimTime>,
    pub assigned_vm: Option<usize>,
}

impl Task {
    pub fn new(task_id: usize, category: CategoryName, size_bytes: u64, ci: f64, arrival: SimTime) -> Self {
        Self {
            task_id,
            category,
            size_bytes,
            ci,
            length_mi: compute_mi(size_bytes, ci),
            arrival,
            start: None,
            finish: None,
            assigned_vm: None,
        }
    }
}

fn sample_in<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64, how: SizeSampling) -> f64 {
    if lo == hi {
        return lo;
    }
    match how {
        SizeSampling::Uniform => rng.gen_range(lo..=hi),
        SizeSampling::LogUniform => rng.gen_range(lo.ln()..=hi.ln()).exp().clamp(lo, hi),
    }
}

/// Draws one task: category by share, size and CI inside the category's ranges.
pub fn sample_task<R: Rng + ?Sized>(rng: &mut R, table: &CategoryTable, task_id: usize, arrival: SimTime) -> Task {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let last = table.categories.len() - 1;
    let category = table
        .categories
        .iter()
        .enumerate()
        .find(|(i, c)| {
            acc += c.share;
            u < acc || *i == last
        })
        .map(|(_, c)| c)
        .expect("category table is non-empty");
    let [s0, s1] = category.size_range_bytes;
    let size = match table.size_sampling {
        SizeSampling::Uniform => rng.gen_range(s0..=s1),
        SizeSampling::LogUniform => sample_in(rng, s0 as f64, s1 as f64, SizeSampling::LogUniform).round() as u64,
    };
    let ci = sample_in(rng, category.ci_range[0], category.ci_range[1], SizeSampling::Uniform);
    Task::new(task_id, category.name, size.clamp(s0, s1), ci, arrival)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_count: usize,
    pub batch_size: usize,
    pub inter_batch_interval_sec: f64,
}

impl BatchPlan {
    pub fn new(batch_count: usize, batch_size: usize, inter_batch_interval_sec: f64) -> Result<Self, WorkloadError> {
        if batch_count == 0 || batch_size == 0 || !(inter_batch_interval_sec > 0.0 && inter_batch_interval_sec.is_finite()) {
            return Err(WorkloadError::InvalidPlan(format!(
                "batches={batch_count} size={batch_size} interval={inter_batch_interval_sec} must all be > 0"
            )));
        }
        Ok(Self { batch_count, batch_size, inter_batch_interval_sec })
    }

    pub fn total_tasks(&self) -> usize {
        self.batch_count * self.batch_size
    }
}

/// One entry per batch: arrival time and number of tasks.
pub fn build_batch_schedule(plan: &BatchPlan) -> Vec<(SimTime, usize)> {
    (0..plan.batch_count)
        .map(|i| (SimTime::from_secs(i as f64 * plan.inter_batch_interval_sec), plan.batch_size))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HourType {
    Peak,
    NonPeak,
}

pub const PEAK_HOURS: [usize; 11] = [8, 9, 10, 13, 14, 17, 18, 19, 20, 21, 22];
const PEAK_BATCH_SIZES: [usize; 3] = [5000, 5500, 6000];
const PEAK_BATCH_COUNTS: [usize; 3] = [18, 19, 20];
const NON_PEAK_BATCH_SIZES: [usize; 3] = [3000, 3500, 4000];
const NON_PEAK_BATCH_COUNTS: [usize; 3] = [9, 10, 11];

pub fn hour_type(hour: usize) -> HourType {
    if PEAK_HOURS.contains(&hour) {
        HourType::Peak
    } else {
        HourType::NonPeak
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourPlan {
    pub hour: usize,
    pub hour_type: HourType,
    pub batch_size: usize,
    pub total_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiurnalPlan {
    pub hours: Vec<HourPlan>,
}

impl DiurnalPlan {
    pub fn total_tasks(&self) -> usize {
        self.hours.iter().map(|h| h.batch_size * h.total_batches).sum()
    }

    /// Batch schedule with every batch size multiplied by `scale` (at least one
    /// task per batch). Batches are evenly spaced inside their hour.
    pub fn schedule(&self, scale: f64) -> Vec<(SimTime, usize)> {
        self.hours
            .iter()
            .flat_map(|h| {
                let size = scaled(h.batch_size, scale);
                let step = SECONDS_PER_HOUR / h.total_batches as f64;
                (0..h.total_batches)
                    .map(move |j| (SimTime::from_secs(h.hour as f64 * SECONDS_PER_HOUR + j as f64 * step), size))
            })
            .collect()
    }
}

/// `count × scale`, rounded, never below one.
pub fn scaled(count: usize, scale: f64) -> usize {
    ((count as f64 * scale).round() as usize).max(1)
}

pub fn build_diurnal_plan<R: Rng + ?Sized>(rng: &mut R) -> DiurnalPlan {
    let hours = (0..24)
        .map(|hour| {
            let hour_type = hour_type(hour);
            let (sizes, counts) = match hour_type {
                HourType::Peak => (PEAK_BATCH_SIZES, PEAK_BATCH_COUNTS),
                HourType::NonPeak => (NON_PEAK_BATCH_SIZES, NON_PEAK_BATCH_COUNTS),
            };
            let batch_size = sizes[rng.gen_range(0..sizes.len())];
            let total_batches = counts[rng.gen_range(0..counts.len())];
            HourPlan { hour, hour_type, batch_size, total_batches }
        })
        .collect();
    DiurnalPlan { hours }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub time: SimTime,
    /// Task ids `first..first + len`.
    pub first: usize,
    pub len: usize,
}

/// A fully materialized task stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub tasks: Vec<Task>,
    pub batches: Vec<Batch>,
}

impl Workload {
    pub fn generate<R: Rng + ?Sized>(rng: &mut R, table: &CategoryTable, schedule: &[(SimTime, usize)]) -> Self {
        let mut tasks = Vec::with_capacity(schedule.iter().map(|(_, n)| n).sum());
        let mut batches = Vec::with_capacity(schedule.len());
        for &(time, count) in schedule {
            let first = tasks.len();
            for k in 0..count {
                tasks.push(sample_task(rng, table, first + k, time));
            }
            batches.push(Batch { time, first, len: count });
        }
        Self { tasks, batches }
    }

    /// Hex SHA-256 over every task's identity, category, size, CI bits and arrival bits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tasks {
            h.update((t.task_id as u64).to_le_bytes());
            h.update(t.category.as_str().as_bytes());
            h.update(t.size_bytes.to_le_bytes());
            h.update(t.ci.to_bits().to_le_bytes());
            h.update(t.arrival.secs().to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mi_formula() {
        assert_eq!(compute_mi(10_000_000, 500.0), 5000.0);
        assert!((compute_mi(10_000, 10.0) - 0.1).abs() < 1e-15);
        assert_eq!(compute_mi(1_000_000_000, 10_000.0), 1e7);
    }

    #[test]
    fn default_table_bounds() {
        let table = CategoryTable::default();
        table.validate().unwrap();
        let (lo, hi) = table.mi_bounds();
        assert!((lo - 0.1).abs() < 1e-15);
        assert_eq!(hi, 1e7);
        assert_eq!(table.get(CategoryName::Images).unwrap().mi_bounds(), (500.0, 30_000.0));
        assert_eq!(table.get(CategoryName::Reels).unwrap().mi_bounds(), (1e4, 1e7));
    }

    #[test]
    fn shares_must_sum_to_one() {
        let mut table = CategoryTable::default();
        table.categories[0].share = 0.5;
        assert!(table.validate().is_err());
    }

    #[test]
    fn category_frequencies_match_shares() {
        let table = CategoryTable::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for i in 0..n {
            let t = sample_task(&mut rng, &table, i, SimTime::ZERO);
            counts[t.category as usize] += 1;
        }
        for (count, share) in counts.iter().zip([0.60, 0.30, 0.10]) {
            assert!((*count as f64 / n as f64 - share).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn sampled_lengths_respect_category_bounds() {
        let table = CategoryTable::default();
        for sampling in [SizeSampling::Uniform, SizeSampling::LogUniform] {
            let table = CategoryTable { size_sampling: sampling, ..table.clone() };
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for i in 0..20_000 {
                let t = sample_task(&mut rng, &table, i, SimTime::ZERO);
                let (lo, hi) = table.get(t.category).unwrap().mi_bounds();
                assert!(t.length_mi >= lo * (1.0 - 1e-12) && t.length_mi <= hi * (1.0 + 1e-12));
                assert_eq!(t.length_mi, compute_mi(t.size_bytes, t.ci));
                if t.category == CategoryName::Text {
                    assert!((0.1 - 1e-12..=10.0 + 1e-12).contains(&t.length_mi));
                }
            }
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let table = CategoryTable::default();
        let plan = BatchPlan::new(5, 20, 1.0).unwrap();
        let schedule = build_batch_schedule(&plan);
        let a = Workload::generate(&mut ChaCha8Rng::seed_from_u64(3), &table, &schedule);
        let b = Workload::generate(&mut ChaCha8Rng::seed_from_u64(3), &table, &schedule);
        let c = Workload::generate(&mut ChaCha8Rng::seed_from_u64(4), &table, &schedule);
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn batch_schedule_for_full_load() {
        let plan = BatchPlan::new(250, 2000, 1.0).unwrap();
        let s = build_batch_schedule(&plan);
        assert_eq!(s.iter().map(|(_, n)| n).sum::<usize>(), 500_000);
        assert_eq!(s.last().unwrap().0, SimTime::from_secs(249.0));
    }

    #[test]
    fn single_batch_arrives_at_zero() {
        let s = build_batch_schedule(&BatchPlan::new(1, 10, 1.0).unwrap());
        assert_eq!(s, vec![(SimTime::ZERO, 10)]);
    }

    #[test]
    fn zero_batches_rejected() {
        assert!(BatchPlan::new(0, 10, 1.0).is_err());
        assert!(BatchPlan::new(1, 0, 1.0).is_err());
        assert!(BatchPlan::new(1, 1, 0.0).is_err());
    }

    #[test]
    fn diurnal_draws_from_hour_type_sets() {
        for seed in 0..50 {
            let plan = build_diurnal_plan(&mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(plan.hours.len(), 24);
            let h9 = plan.hours[9];
            assert_eq!(h9.hour_type, HourType::Peak);
            assert!(PEAK_BATCH_SIZES.contains(&h9.batch_size) && PEAK_BATCH_COUNTS.contains(&h9.total_batches));
            let h3 = plan.hours[3];
            assert_eq!(h3.hour_type, HourType::NonPeak);
            assert!(NON_PEAK_BATCH_SIZES.contains(&h3.batch_size) && NON_PEAK_BATCH_COUNTS.contains(&h3.total_batches));
        }
    }

    #[test]
    fn peak_hours_match_table() {
        let peaks: Vec<usize> = (0..24).filter(|h| hour_type(*h) == HourType::Peak).collect();
        assert_eq!(peaks, vec![8, 9, 10, 13, 14, 17, 18, 19, 20, 21, 22]);
    }

    #[test]
    fn diurnal_expected_total() {
        // Exact expectation by enumerating the three equally likely draws per set.
        let mean = |xs: [usize; 3]| xs.iter().sum::<usize>() as f64 / 3.0;
        let expected = 11.0 * mean(PEAK_BATCH_COUNTS) * mean(PEAK_BATCH_SIZES)
            + 13.0 * mean(NON_PEAK_BATCH_COUNTS) * mean(NON_PEAK_BATCH_SIZES);
        assert_eq!(expected, 1_604_500.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 4000;
        let avg = (0..n).map(|_| build_diurnal_plan(&mut rng).total_tasks() as f64).sum::<f64>() / n as f64;
        assert!((avg - expected).abs() / expected < 0.005, "{avg}");
    }

    #[test]
    fn diurnal_batches_evenly_spaced_within_hour() {
        let plan = build_diurnal_plan(&mut ChaCha8Rng::seed_from_u64(1));
        let schedule = plan.schedule(0.01);
        assert_eq!(schedule.len(), plan.hours.iter().map(|h| h.total_batches).sum::<usize>());
        let h0 = plan.hours[0];
        let step = 3600.0 / h0.total_batches as f64;
        assert_eq!(schedule[1].0.secs(), step);
        assert_eq!(schedule[0].1, scaled(h0.batch_size, 0.01));
        assert!(schedule.iter().all(|(t, _)| t.secs() < 24.0 * 3600.0));
    }
}
