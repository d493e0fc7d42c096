//! Transmission network model and economic dispatch.
//!
//! The dispatch problem is the single-interval DC economic dispatch with a
//! system power balance, PTDF-based line limits and generator bounds:
//!
//! ```text
//! min  Σ_g a_g p_g² + b_g p_g
//! s.t. Σ_g p_g = Σ_n D_n                                  (λ_hub)
//!      -F_l ≤ Σ_n PTDF_ln (Σ_{g∈G_n} p_g − D_n) ≤ F_l       (μ_lo, μ_hi)
//!      0 ≤ p_g ≤ p̄_g                                      (ν_lo, ν_hi)
//! ```
//!
//! Energies are MWh per interval, prices $/MWh.

mod dispatch;
mod qp;
pub mod random;

pub use dispatch::{
    compute_lmps, estimate_lmp_lipschitz, kkt_residuals, lmp_sensitivity_oracle, solve_ed,
    DispatchError, EdSolution, InfeasibilityCertificate, KktResiduals, LipschitzReport,
    KKT_TOLERANCE,
};
pub use qp::{QpError, QpProblem, QpSolution};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A bulk generator with quadratic cost `cost_a·p² + cost_b·p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub id: usize,
    pub bus: usize,
    /// $/MWh².
    pub cost_a: f64,
    /// $/MWh.
    pub cost_b: f64,
    /// MWh per interval.
    pub p_max: f64,
}

impl GeneratorSpec {
    pub fn cost(&self, p: f64) -> f64 {
        self.cost_a * p * p + self.cost_b * p
    }

    pub fn marginal_cost(&self, p: f64) -> f64 {
        2.0 * self.cost_a * p + self.cost_b
    }
}

/// A transmission line described by its PTDF row and thermal limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSpec {
    pub id: usize,
    pub ptdf: Vec<f64>,
    /// MWh per interval; `f64::INFINITY` means unconstrained.
    pub f_max: f64,
}

impl LineSpec {
    /// Flow on the line for the given net bus injections.
    pub fn flow(&self, injections: &[f64]) -> f64 {
        self.ptdf.iter().zip(injections).map(|(k, x)| k * x).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub n_buses: usize,
    pub lines: Vec<LineSpec>,
    pub generators: Vec<GeneratorSpec>,
    /// Generator ids attached to each bus.
    pub gens_by_bus: Vec<Vec<usize>>,
}

impl Network {
    /// Builds a network, deriving the bus partition from each generator's `bus`.
    pub fn new(n_buses: usize, lines: Vec<LineSpec>, generators: Vec<GeneratorSpec>) -> Self {
        let mut gens_by_bus = vec![Vec::new(); n_buses];
        for g in &generators {
            if g.bus < n_buses {
                gens_by_bus[g.bus].push(g.id);
            }
        }
        Self {
            n_buses,
            lines,
            generators,
            gens_by_bus,
        }
    }

    pub fn total_capacity(&self) -> f64 {
        self.generators.iter().map(|g| g.p_max).sum()
    }

    /// Net injection per bus for a dispatch and demand.
    pub fn injections(&self, dispatch: &[f64], demand: &DemandVector) -> Vec<f64> {
        let mut inj: Vec<f64> = demand.0.iter().map(|d| -d).collect();
        for (g, p) in self.generators.iter().zip(dispatch) {
            inj[g.bus] += p;
        }
        inj
    }

    pub fn line_flows(&self, dispatch: &[f64], demand: &DemandVector) -> Vec<f64> {
        let inj = self.injections(dispatch, demand);
        self.lines.iter().map(|l| l.flow(&inj)).collect()
    }
}

/// Demand per bus, MWh per interval. Entries may be negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandVector(pub Vec<f64>);

impl DemandVector {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn l1_distance(&self, other: &DemandVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }
}

/// A broken network invariant, naming the offending element.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("generator {0} in multiple bus sets")]
    GeneratorInMultipleBuses(usize),
    #[error("generator {0} in no bus set")]
    GeneratorUnassigned(usize),
    #[error("generator {gen} listed under bus {listed} but attached to bus {attached}")]
    GeneratorBusMismatch {
        gen: usize,
        listed: usize,
        attached: usize,
    },
    #[error("bus set {bus} references unknown generator {gen}")]
    UnknownGenerator { bus: usize, gen: usize },
    #[error("generator {0} has id out of order")]
    GeneratorIdMismatch(usize),
    #[error("generator {0} bus index out of range")]
    GeneratorBusOutOfRange(usize),
    #[error("generator {0} cost_a must be positive for strong convexity")]
    NonConvexCost(usize),
    #[error("generator {0} has non-finite cost coefficient")]
    NonFiniteCost(usize),
    #[error("generator {0} has negative or non-finite p_max")]
    InvalidCapacity(usize),
    #[error("line {0} has non-positive flow limit")]
    NonPositiveFlowLimit(usize),
    #[error("line {line} ptdf has length {len}, expected {expected}")]
    PtdfLength {
        line: usize,
        len: usize,
        expected: usize,
    },
    #[error("line {0} has non-finite ptdf entry")]
    NonFinitePtdf(usize),
    #[error("line {0} has id out of order")]
    LineIdMismatch(usize),
    #[error("gens_by_bus has {len} entries for {n_buses} buses")]
    PartitionLength { len: usize, n_buses: usize },
}

/// Checks every structural invariant of the network; an empty list means valid.
pub fn validate_network(net: &Network) -> Vec<Violation> {
    let mut out = Vec::new();
    let n_gens = net.generators.len();

    for (i, g) in net.generators.iter().enumerate() {
        if g.id != i {
            out.push(Violation::GeneratorIdMismatch(i));
        }
        if g.bus >= net.n_buses {
            out.push(Violation::GeneratorBusOutOfRange(i));
        }
        if !g.cost_a.is_finite() || !g.cost_b.is_finite() {
            out.push(Violation::NonFiniteCost(i));
        } else if g.cost_a <= 0.0 {
            out.push(Violation::NonConvexCost(i));
        }
        if !(g.p_max >= 0.0 && g.p_max.is_finite()) {
            out.push(Violation::InvalidCapacity(i));
        }
    }

    for (i, l) in net.lines.iter().enumerate() {
        if l.id != i {
            out.push(Violation::LineIdMismatch(i));
        }
        if !(l.f_max > 0.0) {
            out.push(Violation::NonPositiveFlowLimit(i));
        }
        if l.ptdf.len() != net.n_buses {
            out.push(Violation::PtdfLength {
                line: i,
                len: l.ptdf.len(),
                expected: net.n_buses,
            });
        }
        if l.ptdf.iter().any(|x| !x.is_finite()) {
            out.push(Violation::NonFinitePtdf(i));
        }
    }

    if net.gens_by_bus.len() != net.n_buses {
        out.push(Violation::PartitionLength {
            len: net.gens_by_bus.len(),
            n_buses: net.n_buses,
        });
    }
    let mut owner: Vec<Option<usize>> = vec![None; n_gens];
    for (bus, set) in net.gens_by_bus.iter().enumerate() {
        for &gen in set {
            if gen >= n_gens {
                out.push(Violation::UnknownGenerator { bus, gen });
                continue;
            }
            if owner[gen].is_some() {
                if !out.contains(&Violation::GeneratorInMultipleBuses(gen)) {
                    out.push(Violation::GeneratorInMultipleBuses(gen));
                }
                continue;
            }
            owner[gen] = Some(bus);
            if net.generators[gen].bus != bus {
                out.push(Violation::GeneratorBusMismatch {
                    gen,
                    listed: bus,
                    attached: net.generators[gen].bus,
                });
            }
        }
    }
    for (gen, o) in owner.iter().enumerate() {
        if o.is_none() {
            out.push(Violation::GeneratorUnassigned(gen));
        }
    }
    out
}
