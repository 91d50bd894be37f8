//! Sharing programs for three data-sharing problems, the canonical dataflow
//! patterns, seeded data generators and the benchmark harness.

pub mod ads;
pub mod bench;
pub mod fraud;
pub mod fuzzy;
pub mod synth;
pub mod health;
pub mod ml;
pub mod patterns;
pub mod stage;
pub mod table;

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use escrow_core::EscrowError;
use escrow_core::runtime::SharingProgram;
use serde::Serialize;
use serde_json::Value;

pub use stage::{Stage, StepOutcome};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Escrow(#[from] EscrowError),
    #[error("bad data: {0}")]
    Data(String),
    #[error("script: {0}")]
    Script(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for ScenarioError {
    fn from(e: csv::Error) -> Self {
        ScenarioError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for ScenarioError {
    fn from(e: serde_json::Error) -> Self {
        ScenarioError::Data(e.to_string())
    }
}

/// Data problems inside a contract function surface as function failures.
impl From<ScenarioError> for EscrowError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Escrow(e) => e,
            other => EscrowError::FunctionFailed(other.to_string()),
        }
    }
}

pub type Result<T, E = ScenarioError> = std::result::Result<T, E>;

/// A sharing program plus the parameters its fixtures are generated from.
#[derive(Debug, Clone)]
pub struct ScenarioProgram {
    pub name: String,
    pub program: SharingProgram,
    pub fixtures: Value,
}

/// Counters and phase clocks that program bodies update while running.
/// Shared with the harness through an `Arc`.
#[derive(Debug, Default)]
pub struct Probe {
    joins: AtomicU64,
    combine_ns: AtomicU64,
    compute_ns: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ProbeReading {
    pub joins: u64,
    pub combine: Duration,
    pub compute: Duration,
}

impl Probe {
    pub fn record_join(&self) {
        self.joins.fetch_add(1, Ordering::Relaxed);
    }

    pub fn add_combine(&self, d: Duration) {
        self.combine_ns.fetch_add(d.as_nanos() as u64, Ordering::Relaxed);
    }

    pub fn add_compute(&self, d: Duration) {
        self.compute_ns.fetch_add(d.as_nanos() as u64, Ordering::Relaxed);
    }

    pub fn joins(&self) -> u64 {
        self.joins.load(Ordering::Relaxed)
    }

    /// Reads the phase clocks and zeroes them; the join counter keeps counting.
    pub fn take_phases(&self) -> ProbeReading {
        ProbeReading {
            joins: self.joins(),
            combine: Duration::from_nanos(self.combine_ns.swap(0, Ordering::Relaxed)),
            compute: Duration::from_nanos(self.compute_ns.swap(0, Ordering::Relaxed)),
        }
    }
}

/// Required argument helpers for program bodies.
pub(crate) mod args {
    use escrow_core::contract::Args;
    use escrow_core::{DataElementId, EscrowError};
    use serde_json::Value;

    fn missing(name: &str) -> EscrowError {
        EscrowError::InvalidArgument(format!("missing or malformed argument {name:?}"))
    }

    pub fn get<'a>(a: &'a Args, name: &str) -> Result<&'a Value, EscrowError> {
        a.get(name).ok_or_else(|| missing(name))
    }

    pub fn str<'a>(a: &'a Args, name: &str) -> Result<&'a str, EscrowError> {
        get(a, name)?.as_str().ok_or_else(|| missing(name))
    }

    pub fn f64(a: &Args, name: &str) -> Result<f64, EscrowError> {
        get(a, name)?.as_f64().ok_or_else(|| missing(name))
    }

    pub fn u64(a: &Args, name: &str) -> Result<u64, EscrowError> {
        get(a, name)?.as_u64().ok_or_else(|| missing(name))
    }

    pub fn de(a: &Args, name: &str) -> Result<DataElementId, EscrowError> {
        u64(a, name).map(DataElementId)
    }

    pub fn de_list(a: &Args, name: &str) -> Result<Vec<DataElementId>, EscrowError> {
        get(a, name)?
            .as_array()
            .ok_or_else(|| missing(name))?
            .iter()
            .map(|v| v.as_u64().map(DataElementId).ok_or_else(|| missing(name)))
            .collect()
    }

    pub fn str_list(a: &Args, name: &str) -> Result<Vec<String>, EscrowError> {
        get(a, name)?
            .as_array()
            .ok_or_else(|| missing(name))?
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(|| missing(name)))
            .collect()
    }
}
