//! Metrics over traces and numerical checks of the fixed-point theory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::meanfield::MeanField;
use crate::network::{estimate_lmp_lipschitz, DemandVector};
use crate::policy::{estimate_gamma1_lipschitz, Policy};
use crate::sim::{
    expected_consumer_mwh, expected_idle_prosumer_mwh, expected_renewables, initial_belief_vectors, limit_day,
    network_with_renewables, optimal_policy, BusModel, MfeReport, SimError, SimulationConfig,
    SimulationTrace,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("series needs at least 2 points (got {0})")]
    TooShort(usize),
    #[error("window of {window} days exceeds the {available} complete days in the trace")]
    Window { window: usize, available: usize },
}

/// Mean absolute first difference.
pub fn imv(series: &[f64]) -> Result<f64, AnalysisError> {
    if series.len() < 2 {
        return Err(AnalysisError::TooShort(series.len()));
    }
    let s: f64 = series.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    Ok(s / (series.len() - 1) as f64)
}

fn check_window(trace: &SimulationTrace, days: usize) -> Result<(), AnalysisError> {
    let available = trace.n_days();
    if days == 0 || days > available {
        return Err(AnalysisError::Window {
            window: days,
            available,
        });
    }
    Ok(())
}

/// IMV of each bus's LMP series over the last `days`, averaged over buses.
pub fn trace_imv(trace: &SimulationTrace, days: usize) -> Result<f64, AnalysisError> {
    check_window(trace, days)?;
    let first = trace.n_days() - days;
    let mut total = 0.0;
    for n in 0..trace.n_buses {
        let s: Vec<f64> = trace
            .bus_records(n)
            .filter(|r| r.day >= first)
            .map(|r| r.lmp)
            .collect();
        total += imv(&s)?;
    }
    Ok(total / trace.n_buses as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentClass {
    Prosumer,
    Consumer,
}

/// Ex-post cost of one class on one day, summed over buses.
pub fn daily_cost(trace: &SimulationTrace, class: AgentClass, day: usize) -> f64 {
    trace
        .records
        .iter()
        .filter(|r| r.day == day)
        .map(|r| match class {
            AgentClass::Prosumer => r.lmp * r.prosumer_mwh,
            AgentClass::Consumer => r.lmp * r.consumer_mwh,
        })
        .sum()
}

/// Mean of `daily_cost` over the last `days`.
pub fn mean_daily_cost(
    trace: &SimulationTrace,
    class: AgentClass,
    days: usize,
) -> Result<f64, AnalysisError> {
    check_window(trace, days)?;
    let n = trace.n_days();
    Ok((n - days..n).map(|d| daily_cost(trace, class, d)).sum::<f64>() / days as f64)
}

/// Σ_n λ^n_t D^n_t over one day.
pub fn system_cost(trace: &SimulationTrace, day: usize) -> f64 {
    trace
        .records
        .iter()
        .filter(|r| r.day == day)
        .map(|r| r.lmp * r.demand_bid)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourShape {
    pub hour: usize,
    pub prosumer_mean: f64,
    pub prosumer_std: f64,
    pub consumer_mean: f64,
    pub consumer_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// System net demand per hour as a fraction of class capacity, mean ± std over days.
pub fn demand_shape_report(
    trace: &SimulationTrace,
    days: usize,
) -> Result<Vec<HourShape>, AnalysisError> {
    check_window(trace, days)?;
    let first = trace.n_days() - days;
    let pcap: f64 = trace.buses.iter().map(|b| b.prosumer_capacity).sum();
    let ccap: f64 = trace.buses.iter().map(|b| b.consumer_capacity).sum();
    let mut p = vec![vec![0.0; days]; trace.hours];
    let mut c = vec![vec![0.0; days]; trace.hours];
    for r in trace.records.iter().filter(|r| r.day >= first) {
        p[r.hour][r.day - first] += r.prosumer_mwh;
        c[r.hour][r.day - first] += r.consumer_mwh;
    }
    Ok((0..trace.hours)
        .map(|h| {
            let pr: Vec<f64> = p[h].iter().map(|x| x / pcap).collect();
            let cr: Vec<f64> = c[h]
                .iter()
                .map(|x| if ccap > 0.0 { x / ccap } else { 0.0 })
                .collect();
            let (pm, ps) = mean_std(&pr);
            let (cm, cs) = mean_std(&cr);
            HourShape {
                hour: h,
                prosumer_mean: pm,
                prosumer_std: ps,
                consumer_mean: cm,
                consumer_std: cs,
            }
        })
        .collect())
}

/// Hourly storage behaviour over a window, averaged across buses and days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageCycle {
    pub level: Vec<f64>,
    /// Grid-side flow as a fraction of total storage capacity.
    pub flow: Vec<f64>,
    pub belief: Vec<f64>,
    /// Mean belief over hours weighted by charging flow.
    pub charge_price: f64,
    /// Mean belief over hours weighted by discharging flow.
    pub discharge_price: f64,
    /// Pearson correlation of hourly flow and hourly belief.
    pub flow_price_corr: f64,
    /// Max − min of the hourly mean level.
    pub amplitude: f64,
    /// Mean over hours of the day-to-day std of the level.
    pub spread: f64,
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, sx) = mean_std(x);
    let (my, sy) = mean_std(y);
    if sx == 0.0 || sy == 0.0 {
        return 0.0;
    }
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (x.len() as f64 * sx * sy)
}

pub fn storage_cycle_report(
    trace: &SimulationTrace,
    days: usize,
) -> Result<StorageCycle, AnalysisError> {
    check_window(trace, days)?;
    let first = trace.n_days() - days;
    let h = trace.hours;
    let nb = trace.n_buses as f64;
    let cap: f64 = trace.buses.iter().map(|b| b.prosumer_capacity).sum();
    let mut level = vec![vec![0.0; days]; h];
    let mut flow = vec![0.0; h];
    let mut belief = vec![0.0; h];
    for r in trace.records.iter().filter(|r| r.day >= first) {
        level[r.hour][r.day - first] += r.storage_level / nb;
        flow[r.hour] += r.storage_flow_mwh / (cap * days as f64);
        belief[r.hour] += r.belief_h / (nb * days as f64);
    }
    let stats: Vec<(f64, f64)> = level.iter().map(|l| mean_std(l)).collect();
    let lm: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let spread = stats.iter().map(|s| s.1).sum::<f64>() / h as f64;
    let amplitude = lm.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - lm.iter().cloned().fold(f64::INFINITY, f64::min);
    let weighted = |sign: f64| {
        let w: Vec<f64> = flow.iter().map(|f| (sign * f).max(0.0)).collect();
        let tw: f64 = w.iter().sum();
        if tw == 0.0 {
            f64::NAN
        } else {
            w.iter().zip(&belief).map(|(a, b)| a * b).sum::<f64>() / tw
        }
    };
    Ok(StorageCycle {
        charge_price: weighted(1.0),
        discharge_price: weighted(-1.0),
        flow_price_corr: pearson(&flow, &belief),
        amplitude,
        spread,
        level: lm,
        flow,
        belief,
    })
}

/// Lipschitz constants entering the contraction condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimates {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l_lambda: f64,
    pub l_mf: f64,
    pub contraction_value: f64,
}

impl LipschitzEstimates {
    pub fn is_contraction(&self) -> bool {
        self.contraction_value < 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionOptions {
    pub lambda_pairs: usize,
    pub demand_pairs: usize,
    /// Half-width of price perturbations, $/MWh.
    pub price_spread: f64,
    /// Half-width of demand perturbations relative to expected demand.
    pub demand_spread: f64,
    pub seed: u64,
}

impl Default for ContractionOptions {
    fn default() -> Self {
        Self {
            lambda_pairs: 20,
            demand_pairs: 200,
            price_spread: 5.0,
            demand_spread: 0.2,
            seed: 0,
        }
    }
}

/// L₂ = L₃ = 1 − ζ; L₁ and L_λ sampled around the initial operating point.
pub fn estimate_contraction(
    cfg: &SimulationConfig,
    opts: &ContractionOptions,
) -> Result<LipschitzEstimates, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let beliefs = initial_belief_vectors(cfg)?;
    let mut l1: f64 = 0.0;
    for (spec, b) in cfg.buses.iter().zip(&beliefs) {
        let bm = BusModel::build(cfg, spec)?;
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..opts.lambda_pairs)
            .map(|_| {
                let x: Vec<f64> = b
                    .values
                    .iter()
                    .map(|v| v + rng.gen_range(-opts.price_spread..=opts.price_spread))
                    .collect();
                let y: Vec<f64> = x
                    .iter()
                    .map(|v| v + rng.gen_range(-opts.price_spread..=opts.price_spread))
                    .collect();
                (x, y)
            })
            .collect();
        l1 = l1.max(estimate_gamma1_lipschitz(&bm.model, &bm.reward, &cfg.reg, cfg.gamma, &pairs)?);
    }

    let mut l_lambda: f64 = 0.0;
    for h in 0..cfg.hours {
        let renew = expected_renewables(cfg, h);
        let net = network_with_renewables(&cfg.network, &renew);
        let base: Vec<f64> = cfg
            .buses
            .iter()
            .map(|b| expected_idle_prosumer_mwh(b, h) + expected_consumer_mwh(b, h))
            .collect();
        let scale: Vec<f64> = cfg
            .buses
            .iter()
            .zip(&base)
            .map(|(b, d)| d.abs().max(b.population.total_capacity) * opts.demand_spread)
            .collect();
        let draw = |rng: &mut ChaCha8Rng| {
            DemandVector(
                base.iter()
                    .zip(&scale)
                    .map(|(d, s)| d + rng.gen_range(-*s..=*s))
                    .collect(),
            )
        };
        let rep = estimate_lmp_lipschitz(
            &net,
            || {
                let a = draw(&mut rng);
                let b = draw(&mut rng);
                (a, b)
            },
            opts.demand_pairs,
        );
        if rep.estimate.is_finite() {
            l_lambda = l_lambda.max(rep.estimate);
        }
    }

    let max_cap = cfg
        .buses
        .iter()
        .map(|b| b.population.total_capacity)
        .fold(0.0, f64::max);
    let l2 = 1.0 - cfg.zeta;
    let l3 = 1.0 - cfg.zeta;
    let l_mf = l_lambda * max_cap;
    Ok(LipschitzEstimates {
        l1,
        l2,
        l3,
        l_lambda,
        l_mf,
        contraction_value: l1 * l_mf * l3 + l2,
    })
}

/// Outcome of the three equilibrium checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfeVerification {
    pub optimality_residual: f64,
    pub consistency_residual: f64,
    pub price_residual: f64,
    pub optimality_ok: bool,
    pub consistency_ok: bool,
    pub price_ok: bool,
}

impl MfeVerification {
    pub fn all_ok(&self) -> bool {
        self.optimality_ok && self.consistency_ok && self.price_ok
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.optimality_ok {
            out.push("optimality");
        }
        if !self.consistency_ok {
            out.push("consistency");
        }
        if !self.price_ok {
            out.push("price");
        }
        out
    }
}

/// Sup-norm tolerance of the optimality check.
pub const OPTIMALITY_TOL: f64 = 1e-6;

/// Checks (i) the terminal policies are Γ1 of the terminal prices, (ii) one
/// more day of Γ2 returns the terminal mean fields and (iii) the prices
/// re-cleared over that day match the terminal profile, each within `tol`
/// except (i) which uses `OPTIMALITY_TOL`.
pub fn verify_mfe(
    cfg: &SimulationConfig,
    report: &MfeReport,
    tol: f64,
) -> Result<MfeVerification, SimError> {
    let models: Vec<BusModel> = cfg
        .buses
        .iter()
        .map(|b| BusModel::build(cfg, b))
        .collect::<Result<_, _>>()?;
    let mut tight = cfg.clone();
    tight.vi_tol = cfg.vi_tol.min(1e-10);
    let mut optimality: f64 = 0.0;
    for ((bm, b), p) in models.iter().zip(&report.beliefs).zip(&report.policies) {
        let (_, fresh) = optimal_policy(&tight, bm, b, None)?;
        optimality = optimality.max(sup_abs(&fresh, p));
    }

    let mut mfs: Vec<Option<MeanField>> = report.mean_fields.iter().cloned().map(Some).collect();
    let lmps = limit_day(cfg, &models, &report.policies, &mut mfs)?;
    let consistency = mfs
        .iter()
        .zip(&report.mean_fields)
        .map(|(a, b)| a.as_ref().expect("filled").l1_distance(b))
        .fold(0.0, f64::max);
    let price = lmps
        .iter()
        .zip(&report.beliefs)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    Ok(MfeVerification {
        optimality_residual: optimality,
        consistency_residual: consistency,
        price_residual: price,
        optimality_ok: optimality <= OPTIMALITY_TOL,
        consistency_ok: consistency <= tol,
        price_ok: price <= tol,
    })
}

fn sup_abs(a: &Policy, b: &Policy) -> f64 {
    a.probs
        .iter()
        .zip(&b.probs)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Least-squares fit of ln(y) = c + k·x; returns (slope, R²).
pub fn log_linear_fit(ys: &[f64]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = ys
        .iter()
        .enumerate()
        .filter(|(_, y)| **y > 0.0)
        .map(|(i, y)| (i as f64, y.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let k = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (k, r2)
}
