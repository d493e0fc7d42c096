use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::qp::{QpError, QpProblem};
use super::{validate_network, DemandVector, Network, Violation};

/// Absolute tolerance on every KKT residual of a successful solve.
pub const KKT_TOLERANCE: f64 = 1e-8;

/// Machine-readable reason an ED instance has no feasible dispatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InfeasibilityCertificate {
    CapacityShortfall {
        total_capacity: f64,
        total_demand: f64,
    },
    NegativeTotalDemand {
        total_demand: f64,
    },
    /// The named constraint cannot be met together with the listed binding ones.
    FlowInfeasible {
        constraint: String,
        binding: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DispatchError {
    #[error("invalid network: {0:?}")]
    InvalidNetwork(Vec<Violation>),
    #[error("demand vector has {got} entries for {expected} buses")]
    DemandLength { got: usize, expected: usize },
    #[error("economic dispatch infeasible: {0:?}")]
    Infeasible(InfeasibilityCertificate),
    #[error("active-set iteration cap of {0} reached")]
    NonConvergence(usize),
    #[error("degenerate working set (LICQ failure)")]
    Degenerate,
}

/// Primal dispatch with every dual of the ED problem and the resulting LMPs.
///
/// Line duals are labelled so that `lmp_n = hub − Σ_l PTDF_ln (μ_lo − μ_hi)`
/// is the marginal cost of demand at bus n: `line_duals_lo` prices the
/// forward limit `flow ≤ F` and `line_duals_hi` the reverse limit `flow ≥ −F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdSolution {
    pub dispatch: Vec<f64>,
    pub hub_price: f64,
    pub line_duals_lo: Vec<f64>,
    pub line_duals_hi: Vec<f64>,
    pub gen_duals_lo: Vec<f64>,
    pub gen_duals_hi: Vec<f64>,
    pub lmps: Vec<f64>,
    pub objective: f64,
    pub flows: Vec<f64>,
    /// Binding inequalities, encoded as in [`constraint_name`].
    pub active_set: Vec<String>,
}

impl EdSolution {
    pub fn csv_header(n_buses: usize, n_gens: usize) -> Vec<String> {
        let mut h = vec!["hub_price".to_string()];
        h.extend((0..n_buses).map(|n| format!("lmp_{n}")));
        h.extend((0..n_gens).map(|g| format!("p_{g}")));
        h
    }

    /// Flat record: hub price, per-bus LMPs, per-generator dispatch.
    pub fn csv_record(&self) -> Vec<String> {
        std::iter::once(self.hub_price)
            .chain(self.lmps.iter().copied())
            .chain(self.dispatch.iter().copied())
            .map(|v| v.to_string())
            .collect()
    }
}

/// LMPs from the hub price and line duals, in a fixed summation order.
pub fn compute_lmps(
    net: &Network,
    hub_price: f64,
    line_duals_lo: &[f64],
    line_duals_hi: &[f64],
) -> Vec<f64> {
    (0..net.n_buses)
        .map(|n| {
            let mut congestion = 0.0;
            for (l, line) in net.lines.iter().enumerate() {
                congestion += line.ptdf[n] * (line_duals_lo[l] - line_duals_hi[l]);
            }
            hub_price - congestion
        })
        .collect()
}

fn constraint_name(net: &Network, k: usize) -> String {
    let g = net.generators.len();
    let l = net.lines.len();
    match k {
        k if k < g => format!("gen {k} lower bound"),
        k if k < 2 * g => format!("gen {} upper bound", k - g),
        k if k < 2 * g + l => format!("line {} forward limit", k - 2 * g),
        k => format!("line {} reverse limit", k - 2 * g - l),
    }
}

/// Solves the economic dispatch QP and prices it.
pub fn solve_ed(net: &Network, demand: &DemandVector) -> Result<EdSolution, DispatchError> {
    let violations = validate_network(net);
    if !violations.is_empty() {
        return Err(DispatchError::InvalidNetwork(violations));
    }
    if demand.len() != net.n_buses {
        return Err(DispatchError::DemandLength {
            got: demand.len(),
            expected: net.n_buses,
        });
    }
    let total_demand = demand.total();
    if total_demand < 0.0 {
        return Err(DispatchError::Infeasible(
            InfeasibilityCertificate::NegativeTotalDemand { total_demand },
        ));
    }
    let total_capacity = net.total_capacity();
    if total_capacity < total_demand {
        return Err(DispatchError::Infeasible(
            InfeasibilityCertificate::CapacityShortfall {
                total_capacity,
                total_demand,
            },
        ));
    }

    let n_gens = net.generators.len();
    let n_lines = net.lines.len();
    // Zero-capacity units are pinned at 0 outside the QP so the bound pair
    // never enters the working set together.
    let free: Vec<usize> = (0..n_gens)
        .filter(|&g| net.generators[g].p_max > 0.0)
        .collect();
    let nv = free.len();

    let shift: Vec<f64> = net
        .lines
        .iter()
        .map(|l| l.ptdf.iter().zip(&demand.0).map(|(k, d)| k * d).sum())
        .collect();
    let gen_ptdf = |l: usize, g: usize| net.lines[l].ptdf[net.generators[g].bus];

    let mut ineq_rows = Vec::with_capacity(2 * nv + 2 * n_lines);
    let mut ineq_rhs = Vec::with_capacity(2 * nv + 2 * n_lines);
    // constraint index k in the full (G, G, L, L) layout for each QP row
    let mut row_key = Vec::new();
    for (j, &g) in free.iter().enumerate() {
        let mut r = vec![0.0; nv];
        r[j] = 1.0;
        ineq_rows.push(r);
        ineq_rhs.push(0.0);
        row_key.push(g);
    }
    for (j, &g) in free.iter().enumerate() {
        let mut r = vec![0.0; nv];
        r[j] = -1.0;
        ineq_rows.push(r);
        ineq_rhs.push(-net.generators[g].p_max);
        row_key.push(n_gens + g);
    }
    for (l, line) in net.lines.iter().enumerate() {
        ineq_rows.push(free.iter().map(|&g| -gen_ptdf(l, g)).collect());
        ineq_rhs.push(-line.f_max - shift[l]);
        row_key.push(2 * n_gens + l);
    }
    for (l, line) in net.lines.iter().enumerate() {
        ineq_rows.push(free.iter().map(|&g| gen_ptdf(l, g)).collect());
        ineq_rhs.push(-line.f_max + shift[l]);
        row_key.push(2 * n_gens + n_lines + l);
    }

    let qp = QpProblem {
        hessian_diag: free.iter().map(|&g| 2.0 * net.generators[g].cost_a).collect(),
        linear: free.iter().map(|&g| net.generators[g].cost_b).collect(),
        eq_rows: vec![vec![1.0; nv]],
        eq_rhs: vec![total_demand],
        ineq_rows,
        ineq_rhs,
    };

    let cap = (50 * (n_gens + n_lines)).max(50);
    let sol = match qp.solve(cap) {
        Ok(s) => s,
        Err(QpError::Infeasible {
            constraint,
            working,
        }) => {
            return Err(DispatchError::Infeasible(
                InfeasibilityCertificate::FlowInfeasible {
                    constraint: constraint_name(net, row_key[constraint]),
                    binding: working
                        .iter()
                        .map(|&w| constraint_name(net, row_key[w]))
                        .collect(),
                },
            ))
        }
        Err(QpError::NonConvergence(n)) => return Err(DispatchError::NonConvergence(n)),
        Err(QpError::Singular) => return Err(DispatchError::Degenerate),
    };

    let mut dispatch = vec![0.0; n_gens];
    let mut gen_duals_lo = vec![0.0; n_gens];
    let mut gen_duals_hi = vec![0.0; n_gens];
    let mut line_duals_lo = vec![0.0; n_lines];
    let mut line_duals_hi = vec![0.0; n_lines];
    for (j, &g) in free.iter().enumerate() {
        dispatch[g] = sol.x[j];
    }
    for (row, &k) in row_key.iter().enumerate() {
        let u = sol.ineq_multipliers[row];
        match k {
            k if k < n_gens => gen_duals_lo[k] = u,
            k if k < 2 * n_gens => gen_duals_hi[k - n_gens] = u,
            k if k < 2 * n_gens + n_lines => line_duals_lo[k - 2 * n_gens] = u,
            k => line_duals_hi[k - 2 * n_gens - n_lines] = u,
        }
    }
    let hub_price = sol.eq_multipliers[0];
    let lmps = compute_lmps(net, hub_price, &line_duals_lo, &line_duals_hi);

    // pinned units: split the stationarity gap into the bound duals
    for g in 0..n_gens {
        if net.generators[g].p_max > 0.0 {
            continue;
        }
        let gap = net.generators[g].marginal_cost(0.0) - lmps[net.generators[g].bus];
        gen_duals_lo[g] = gap.max(0.0);
        gen_duals_hi[g] = (-gap).max(0.0);
    }

    let objective = net
        .generators
        .iter()
        .zip(&dispatch)
        .map(|(g, p)| g.cost(*p))
        .sum();
    let flows = net.line_flows(&dispatch, demand);
    let active_set = sol
        .active
        .iter()
        .map(|&r| constraint_name(net, row_key[r]))
        .collect();

    Ok(EdSolution {
        dispatch,
        hub_price,
        line_duals_lo,
        line_duals_hi,
        gen_duals_lo,
        gen_duals_hi,
        lmps,
        objective,
        flows,
        active_set,
    })
}

/// Largest violation of each KKT condition at a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

pub fn kkt_residuals(net: &Network, demand: &DemandVector, sol: &EdSolution) -> KktResiduals {
    let mut stationarity: f64 = 0.0;
    for (g, spec) in net.generators.iter().enumerate() {
        let congestion: f64 = net
            .lines
            .iter()
            .enumerate()
            .map(|(l, line)| line.ptdf[spec.bus] * (sol.line_duals_lo[l] - sol.line_duals_hi[l]))
            .sum();
        let r = spec.marginal_cost(sol.dispatch[g])
            - (sol.hub_price - congestion + sol.gen_duals_lo[g] - sol.gen_duals_hi[g]);
        stationarity = stationarity.max(r.abs());
    }

    let mut primal = (sol.dispatch.iter().sum::<f64>() - demand.total()).abs();
    let mut complementarity: f64 = 0.0;
    for (g, spec) in net.generators.iter().enumerate() {
        let p = sol.dispatch[g];
        primal = primal.max(-p).max(p - spec.p_max);
        complementarity = complementarity
            .max((sol.gen_duals_lo[g] * p).abs())
            .max((sol.gen_duals_hi[g] * (spec.p_max - p)).abs());
    }
    let flows = net.line_flows(&sol.dispatch, demand);
    for (l, line) in net.lines.iter().enumerate() {
        primal = primal.max(flows[l].abs() - line.f_max);
        if line.f_max.is_finite() {
            complementarity = complementarity
                .max((sol.line_duals_lo[l] * (line.f_max - flows[l])).abs())
                .max((sol.line_duals_hi[l] * (line.f_max + flows[l])).abs());
        }
    }
    let dual = sol
        .gen_duals_lo
        .iter()
        .chain(&sol.gen_duals_hi)
        .chain(&sol.line_duals_lo)
        .chain(&sol.line_duals_hi)
        .fold(0.0f64, |m, &v| m.max(-v));

    KktResiduals {
        stationarity,
        primal: primal.max(0.0),
        dual,
        complementarity,
    }
}

/// Central finite difference of the optimal cost with respect to demand at `bus`.
pub fn lmp_sensitivity_oracle(
    net: &Network,
    demand: &DemandVector,
    bus: usize,
    h: f64,
) -> Result<f64, DispatchError> {
    let mut up = demand.clone();
    up.0[bus] += h;
    let mut down = demand.clone();
    down.0[bus] -= h;
    let f_up = solve_ed(net, &up)?.objective;
    let f_down = solve_ed(net, &down)?.objective;
    Ok((f_up - f_down) / (2.0 * h))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    /// max over pairs and buses of |Δλ_n| / ‖ΔD‖₁.
    pub estimate: f64,
    /// Per-pair ratio (max over buses), for pairs that solved.
    pub ratios: Vec<f64>,
    pub skipped: usize,
}

impl LipschitzReport {
    pub fn median_ratio(&self) -> f64 {
        let mut r: Vec<f64> = self.ratios.iter().copied().filter(|x| *x > 0.0).collect();
        if r.is_empty() {
            return 0.0;
        }
        r.sort_by(|a, b| a.total_cmp(b));
        r[r.len() / 2]
    }
}

/// Empirical Lipschitz constant of the LMP map over sampled demand pairs.
/// Infeasible pairs are skipped and counted.
pub fn estimate_lmp_lipschitz<F>(net: &Network, mut sampler: F, n_pairs: usize) -> LipschitzReport
where
    F: FnMut() -> (DemandVector, DemandVector),
{
    let mut ratios = Vec::with_capacity(n_pairs);
    let mut skipped = 0;
    for _ in 0..n_pairs {
        let (d1, d2) = sampler();
        let (s1, s2) = match (solve_ed(net, &d1), solve_ed(net, &d2)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => {
                skipped += 1;
                continue;
            }
        };
        let dist = d1.l1_distance(&d2);
        let ratio = if dist == 0.0 {
            0.0
        } else {
            s1.lmps
                .iter()
                .zip(&s2.lmps)
                .map(|(a, b)| (a - b).abs() / dist)
                .fold(0.0, f64::max)
        };
        ratios.push(ratio);
    }
    let estimate = ratios.iter().copied().fold(0.0, f64::max);
    LipschitzReport {
        estimate,
        ratios,
        skipped,
    }
}
