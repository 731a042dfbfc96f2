use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Phase, Task};

/// One provider call. `task` is `None` for embedding calls.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub phase: Phase,
    pub task: Option<Task>,
    pub prompt_tokens: u64,
    pub response_tokens: u64,
    pub wall_time_ms: u64,
}

/// Append-only call log shared by all threads using a provider.
#[derive(Debug, Default)]
pub struct UsageTracker {
    records: Mutex<Vec<UsageRecord>>,
}

impl UsageTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, record: UsageRecord) {
        self.records.lock().expect("usage log poisoned").push(record);
    }

    /// Number of records so far; pass to [`UsageTracker::report_since`].
    pub fn mark(&self) -> usize {
        self.records.lock().expect("usage log poisoned").len()
    }

    pub fn records(&self) -> Vec<UsageRecord> {
        self.records.lock().expect("usage log poisoned").clone()
    }

    pub fn report(&self) -> UsageReport {
        self.report_since(0)
    }

    pub fn report_since(&self, mark: usize) -> UsageReport {
        let records = self.records.lock().expect("usage log poisoned");
        UsageReport::from_records(records.get(mark..).unwrap_or(&[]))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTotals {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub response_tokens: u64,
    pub wall_time_ms: u64,
}

impl PhaseTotals {
    fn add(&mut self, r: &UsageRecord) {
        self.calls += 1;
        self.prompt_tokens += r.prompt_tokens;
        self.response_tokens += r.response_tokens;
        self.wall_time_ms += r.wall_time_ms;
    }
}

/// Per-phase token and time totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageReport {
    pub construction: PhaseTotals,
    pub generation: PhaseTotals,
}

impl UsageReport {
    pub fn from_records(records: &[UsageRecord]) -> Self {
        let mut report = UsageReport::default();
        for r in records {
            match r.phase {
                Phase::Construction => report.construction.add(r),
                Phase::Generation => report.generation.add(r),
            }
        }
        report
    }

    pub fn phase(&self, phase: Phase) -> &PhaseTotals {
        match phase {
            Phase::Construction => &self.construction,
            Phase::Generation => &self.generation,
        }
    }
}

impl fmt::Display for UsageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<14} {:>8} {:>14} {:>16} {:>12}",
            "phase", "calls", "prompt_tokens", "response_tokens", "wall_ms"
        )?;
        for (name, t) in [("construction", &self.construction), ("generation", &self.generation)] {
            writeln!(
                f,
                "{:<14} {:>8} {:>14} {:>16} {:>12}",
                name, t.calls, t.prompt_tokens, t.response_tokens, t.wall_time_ms
            )?;
        }
        Ok(())
    }
}
