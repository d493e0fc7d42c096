//! Per-bus hourly price beliefs and their stochastic-approximation update.

use thiserror::Error;

use crate::env::TimeIndex;
use crate::network::{solve_ed, DemandVector, DispatchError, Network};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BeliefError {
    #[error("delta {0} outside [0.5, 1]")]
    DeltaOutOfRange(f64),
    #[error("belief entry {0} is not finite")]
    NonFinite(usize),
    #[error("initial dispatch for hour {hour} failed: {source}")]
    Dispatch {
        hour: usize,
        #[source]
        source: DispatchError,
    },
}

/// Length-H price belief λ̂ with learning rate δ.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefVector {
    pub values: Vec<f64>,
    pub delta: f64,
}

impl BeliefVector {
    pub fn new(values: Vec<f64>, delta: f64) -> Result<Self, BeliefError> {
        if !(0.5..=1.0).contains(&delta) {
            return Err(BeliefError::DeltaOutOfRange(delta));
        }
        Self::new_unchecked(values, delta)
    }

    /// Accepts any δ in (0, ∞); the caller is responsible for warning.
    pub fn new_unchecked(values: Vec<f64>, delta: f64) -> Result<Self, BeliefError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(BeliefError::NonFinite(i));
        }
        Ok(Self { values, delta })
    }

    pub fn step_size(&self, t: TimeIndex) -> f64 {
        self.delta / ((t.day() + 1) as f64).sqrt()
    }

    pub fn update(&mut self, t: TimeIndex, realized_lmp: f64) {
        let h = t.hour();
        let step = self.step_size(t);
        self.values[h] -= step * (self.values[h] - realized_lmp);
    }
}

/// λ̂[h] ← λ̂[h] − (δ/√(day+1))(λ̂[h] − λ_t) at h = hour(t).
pub fn update_belief(b: &BeliefVector, t: TimeIndex, realized_lmp: f64) -> BeliefVector {
    let mut out = b.clone();
    out.update(t, realized_lmp);
    out
}

/// Per-bus LMP profiles from one dispatch per hour; `hourly_demand[h]` is the
/// expected demand with storage idle.
pub fn initial_beliefs(
    net: &Network,
    hourly_demand: &[DemandVector],
) -> Result<Vec<Vec<f64>>, BeliefError> {
    let mut per_bus = vec![Vec::with_capacity(hourly_demand.len()); net.n_buses];
    for (hour, d) in hourly_demand.iter().enumerate() {
        let sol = solve_ed(net, d).map_err(|source| BeliefError::Dispatch { hour, source })?;
        for (n, l) in sol.lmps.iter().enumerate() {
            per_bus[n].push(*l);
        }
    }
    Ok(per_bus)
}
