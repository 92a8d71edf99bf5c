//! Minimal discrete-event kernel: a simulation clock plus a priority queue of
//! events popped in `(time, seq)` order.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Simulated time in seconds.
///
/// Always finite and non-negative, which makes the total order below a real
/// order on the values the kernel ever sees.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    pub fn new(seconds: f64) -> Result<Self, KernelError> {
        if seconds.is_finite() && seconds >= 0.0 {
            Ok(SimTime(seconds))
        } else {
            Err(KernelError::InvalidTime(seconds))
        }
    }

    /// Builds a time from a value already known to be valid. Panics otherwise.
    pub fn from_secs(seconds: f64) -> Self {
        Self::new(seconds).expect("simulation time must be finite and non-negative")
    }

    pub fn secs(self) -> f64 {
        self.0
    }
}

impl Eq for SimTime {}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    BatchArrival { batch: usize },
    TaskArrival { task: usize },
    TaskCompletion { task: usize, vm: usize },
    HourBoundary { hour: usize },
    SimulationEnd,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::BatchArrival { .. } => "BatchArrival",
            EventKind::TaskArrival { .. } => "TaskArrival",
            EventKind::TaskCompletion { .. } => "TaskCompletion",
            EventKind::HourBoundary { .. } => "HourBoundary",
            EventKind::SimulationEnd => "SimulationEnd",
        }
    }

    fn payload(&self) -> String {
        match *self {
            EventKind::BatchArrival { batch } => format!("batch={batch}"),
            EventKind::TaskArrival { task } => format!("task={task}"),
            EventKind::TaskCompletion { task, vm } => format!("task={task};vm={vm}"),
            EventKind::HourBoundary { hour } => format!("hour={hour}"),
            EventKind::SimulationEnd => String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimEvent {
    pub time: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

impl SimEvent {
    /// One trace line: `time,seq,kind,payload`.
    pub fn trace_line(&self) -> String {
        format!("{},{},{},{}", self.time, self.seq, self.kind.name(), self.kind.payload())
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("cannot schedule event at t={at} before current clock t={now}")]
    SchedulingInPast { at: f64, now: f64 },
    #[error("invalid simulation time {0}")]
    InvalidTime(f64),
}

/// Time-ordered event queue owning the simulation clock. Pending events can
/// be cancelled by `(time, seq)`.
#[derive(Debug, Default)]
pub struct EventQueue {
    pending: BTreeMap<(SimTime, u64), EventKind>,
    next_seq: u64,
    now: SimTime,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Schedules `kind` at `time` and returns the assigned sequence number.
    pub fn schedule(&mut self, time: SimTime, kind: EventKind) -> Result<u64, KernelError> {
        if time < self.now {
            return Err(KernelError::SchedulingInPast {
                at: time.secs(),
                now: self.now.secs(),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.insert((time, seq), kind);
        Ok(seq)
    }

    /// Removes a pending event. Returns whether it was still pending.
    pub fn cancel(&mut self, time: SimTime, seq: u64) -> bool {
        self.pending.remove(&(time, seq)).is_some()
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.pending.first_key_value().map(|((t, _), _)| *t)
    }

    /// Pops the earliest event and advances the clock to its time.
    pub fn pop(&mut self) -> Option<SimEvent> {
        let ((time, seq), kind) = self.pending.pop_first()?;
        debug_assert!(time >= self.now);
        self.now = time;
        Some(SimEvent { time, seq, kind })
    }

    /// Processes events with `time <= until` (all events when `until` is `None`),
    /// handing each to `handler`. Handlers may schedule further events through
    /// the queue they are given. Returns the number of events processed.
    ///
    /// A handler returning `false` stops the run after that event.
    pub fn run<F>(&mut self, until: Option<SimTime>, mut handler: F) -> usize
    where
        F: FnMut(&mut EventQueue, SimEvent) -> bool,
    {
        let mut processed = 0;
        while let Some(next) = self.peek_time() {
            if until.is_some_and(|limit| next > limit) {
                break;
            }
            let ev = self.pop().expect("peeked event present");
            processed += 1;
            if !handler(self, ev) {
                return processed;
            }
        }
        if processed == 0 {
            if let Some(limit) = until {
                if limit > self.now {
                    self.now = limit;
                }
            }
        }
        processed
    }
}
