//! Day-over-day fixed-point iteration in the limit-mean-field model.

use rayon::prelude::*;

use super::{
    expected_consumer_mwh, expected_renewables, initial_belief_vectors, network_with_renewables,
    optimal_policy, BusModel, Mode, SimError, SimulationConfig,
};
use crate::meanfield::{consistency_update, prosumer_demand, MeanField};
use crate::network::{solve_ed, DemandVector};
use crate::policy::{Policy, SoftQTable};

#[derive(Debug, Clone)]
pub struct MfeReport {
    /// ‖λ_day − λ_{day−1}‖₁ summed over buses; day 0 is measured against the initial belief.
    pub norms: Vec<f64>,
    pub initial_beliefs: Vec<Vec<f64>>,
    /// Final day's LMP profile per bus.
    pub beliefs: Vec<Vec<f64>>,
    /// Belief the final day's policies were computed from.
    pub policy_beliefs: Vec<Vec<f64>>,
    pub policies: Vec<Policy>,
    pub q_tables: Vec<SoftQTable>,
    /// Mean field after the final hour of the final day.
    pub mean_fields: Vec<MeanField>,
    pub converged: bool,
    pub days: usize,
}

/// Advances every bus mean field through one day under fixed policies and
/// returns the per-bus hourly LMPs.
pub fn limit_day(
    cfg: &SimulationConfig,
    models: &[BusModel],
    policies: &[Policy],
    mfs: &mut [Option<MeanField>],
) -> Result<Vec<Vec<f64>>, SimError> {
    let n = models.len();
    let mut lmps = vec![vec![0.0; cfg.hours]; n];
    for h in 0..cfg.hours {
        let mut demand = Vec::with_capacity(n);
        for b in 0..n {
            let bm = &models[b];
            let next = match mfs[b].take() {
                None => MeanField::from_states(&bm.initial_states(cfg.initial_storage), &policies[b]),
                Some(prev) => consistency_update(&prev, &policies[b], &bm.model, cfg.zeta, cfg.gamma2),
            };
            let spec = &cfg.buses[b];
            demand.push(
                prosumer_demand(&next, &bm.unit, spec.population.total_capacity)
                    + expected_consumer_mwh(spec, h),
            );
            mfs[b] = Some(next);
        }
        let net = network_with_renewables(&cfg.network, &expected_renewables(cfg, h));
        let sol = solve_ed(&net, &DemandVector(demand))
            .map_err(|source| SimError::Dispatch { t: h, source })?;
        for b in 0..n {
            lmps[b][h] = sol.lmps[b];
        }
    }
    Ok(lmps)
}

/// Alternates Γ1 (soft value iteration on the current profile) with one day
/// of Γ2 plus dispatch until consecutive daily LMP profiles agree within `tol`.
pub fn run_mfe_iteration(
    cfg: &SimulationConfig,
    tol: f64,
    max_days: usize,
    init: Option<Vec<Vec<f64>>>,
) -> Result<MfeReport, SimError> {
    if cfg.mode != Mode::LimitMeanField {
        return Err(SimError::WrongMode);
    }
    cfg.validate()?;
    let models: Vec<BusModel> = cfg
        .buses
        .iter()
        .map(|b| BusModel::build(cfg, b))
        .collect::<Result<_, _>>()?;
    let initial = match init {
        Some(v) => v,
        None => initial_belief_vectors(cfg)?
            .into_iter()
            .map(|b| b.values)
            .collect(),
    };
    let mut belief = initial.clone();
    let mut qs: Vec<Option<SoftQTable>> = vec![None; models.len()];
    let mut mfs: Vec<Option<MeanField>> = vec![None; models.len()];
    let mut norms = Vec::new();
    for day in 0..max_days {
        let solved: Vec<(SoftQTable, Policy)> = models
            .par_iter()
            .zip(belief.par_iter())
            .zip(qs.par_iter_mut())
            .map(|((bm, b), q)| optimal_policy(cfg, bm, b, q.take()))
            .collect::<Result<_, _>>()?;
        let (tables, policies): (Vec<_>, Vec<_>) = solved.into_iter().unzip();
        let lmps = limit_day(cfg, &models, &policies, &mut mfs)?;
        let norm: f64 = lmps
            .iter()
            .zip(&belief)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .sum();
        norms.push(norm);
        let policy_beliefs = std::mem::replace(&mut belief, lmps);
        if norm <= tol {
            return Ok(MfeReport {
                norms,
                initial_beliefs: initial,
                beliefs: belief,
                policy_beliefs,
                policies,
                q_tables: tables,
                mean_fields: mfs.into_iter().map(|m| m.expect("filled")).collect(),
                converged: true,
                days: day + 1,
            });
        }
        qs = tables.into_iter().map(Some).collect();
    }
    Err(SimError::MaxDaysExceeded {
        days: max_days,
        norms,
    })
}
