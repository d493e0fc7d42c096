//! Per-step simulation records.

use serde::{Deserialize, Serialize};

/// One (t, bus) row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub day: usize,
    pub hour: usize,
    pub bus: usize,
    pub lmp: f64,
    pub hub_price: f64,
    /// Total bus demand bid, MWh.
    pub demand_bid: f64,
    /// Belief for this hour used when acting.
    pub belief_h: f64,
    /// Aggregate storage fraction at the start of the step.
    pub storage_level: f64,
    pub cost_prosumer: f64,
    pub cost_consumer: f64,
    pub prosumer_mwh: f64,
    pub consumer_mwh: f64,
    /// Grid-side storage energy Σ Φ·Ē_i, MWh (positive = charging).
    pub storage_flow_mwh: f64,
}

/// One prosumer's contribution at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub t: usize,
    pub bus: usize,
    pub agent: usize,
    pub e: f64,
    pub nd: f64,
    pub action: f64,
    pub bid_mwh: f64,
}

/// Nonzero mean-field mass at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldEntry {
    pub t: usize,
    pub bus: usize,
    pub state: usize,
    pub action: usize,
    pub mass: f64,
}

/// Static per-bus quantities needed to normalize trace columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusInfo {
    pub prosumer_capacity: f64,
    pub consumer_capacity: f64,
    pub prosumer_nd_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub seed: u64,
    pub hours: usize,
    pub n_buses: usize,
    pub buses: Vec<BusInfo>,
    pub records: Vec<TraceRecord>,
    pub agents: Vec<AgentRecord>,
    pub mean_fields: Vec<MeanFieldEntry>,
    /// Column names for `dispatch`: t, then the dispatch solution's flat record.
    #[serde(default)]
    pub dispatch_header: Vec<String>,
    #[serde(default)]
    pub dispatch: Vec<Vec<String>>,
}

impl SimulationTrace {
    pub fn n_days(&self) -> usize {
        if self.hours == 0 || self.n_buses == 0 {
            return 0;
        }
        self.records.len() / (self.hours * self.n_buses)
    }

    pub fn bus_records(&self, bus: usize) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.bus == bus)
    }

    /// Records whose day lies in the last `days` complete days.
    pub fn last_days(&self, days: usize) -> impl Iterator<Item = &TraceRecord> {
        let first = self.n_days().saturating_sub(days);
        self.records.iter().filter(move |r| r.day >= first)
    }
}
