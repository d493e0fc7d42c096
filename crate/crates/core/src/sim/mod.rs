//! The two-phase market loop: train per bus against beliefs, execute the
//! population, clear the market, update beliefs.

mod mfe;
pub mod rng;
mod trace;

pub use mfe::{limit_day, run_mfe_iteration, MfeReport};
pub use trace::{AgentRecord, BusInfo, MeanFieldEntry, SimulationTrace, TraceRecord};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beliefs::{initial_beliefs, BeliefError, BeliefVector};
use crate::env::{
    efficiency_adjust, storage_transition, ActionGrid, EnvError, NetLoadGrid, PopulationSpec,
    ScenarioProfiles, StateSpace, StorageGrid, TimeIndex,
};
use crate::meanfield::{
    build_transition_model, consistency_update, prosumer_demand, unit_demand, Gamma2Variant,
    MeanField, TransitionModel,
};
use crate::network::{
    solve_ed, validate_network, DemandVector, DispatchError, EdSolution, GeneratorSpec, Network,
};
use crate::policy::{
    policy_from_q, soft_value_iteration_from, LrSchedule, Policy, PolicyError, PriceLinearReward,
    RegularizerSpec, RewardFn, SoftQLearner, SoftQTable,
};
use rng::{stream, Purpose};

/// Quadratic coefficient given to renewable units to keep the dispatch strongly convex.
pub const RENEWABLE_COST_A: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    FiniteAgent,
    LimitMeanField,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub storage_points: usize,
    pub action_points: usize,
    pub netload_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            storage_points: 21,
            action_points: 9,
            netload_points: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BeliefInit {
    /// Per-hour dispatch with idle storage and expected loads.
    Dispatch,
    Flat(f64),
}

/// Everything attached to one bus.
#[derive(Debug, Clone, PartialEq)]
pub struct BusSpec {
    pub population: PopulationSpec,
    pub profiles: ScenarioProfiles,
    /// MWh per interval at capacity factor 1, one per renewable profile.
    pub renewable_capacity: Vec<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub network: Network,
    pub buses: Vec<BusSpec>,
    pub grids: GridSpec,
    pub reg: RegularizerSpec,
    pub gamma: f64,
    pub zeta: f64,
    pub t_train: usize,
    pub hours: usize,
    pub n_days: usize,
    pub seed: u64,
    pub mode: Mode,
    pub initial_storage: f64,
    /// When false prosumers never act and no training happens.
    pub storage_enabled: bool,
    pub reset_q: bool,
    pub lr: LrSchedule,
    pub gamma2: Gamma2Variant,
    pub belief_init: BeliefInit,
    pub allow_any_delta: bool,
    pub vi_tol: f64,
    pub record_agents: bool,
    pub record_mean_fields: bool,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("dispatch failed at t = {t}: {source}")]
    Dispatch {
        t: usize,
        #[source]
        source: DispatchError,
    },
    #[error("no convergence within {days} days (last norm {last})", last = norms.last().copied().unwrap_or(f64::NAN))]
    MaxDaysExceeded { days: usize, norms: Vec<f64> },
    #[error("mean-field iteration requires limit-mean-field mode")]
    WrongMode,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        let v = validate_network(&self.network);
        if !v.is_empty() {
            let msgs: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            return bad(format!("network: {}", msgs.join("; ")));
        }
        if self.buses.len() != self.network.n_buses {
            return bad(format!(
                "{} bus specs for {} buses",
                self.buses.len(),
                self.network.n_buses
            ));
        }
        if self.n_days < 1 {
            return bad("n_days must be >= 1".into());
        }
        if self.hours < 1 {
            return bad("hours must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1) (got {})", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return bad(format!("zeta must lie in [0, 1] (got {})", self.zeta));
        }
        if !(0.0..=1.0).contains(&self.initial_storage) {
            return bad("initial_storage must lie in [0, 1]".into());
        }
        if !(self.vi_tol > 0.0) {
            return bad("vi_tol must be positive".into());
        }
        self.reg.validate()?;
        for (n, b) in self.buses.iter().enumerate() {
            b.population
                .validate()
                .map_err(|e| SimError::Config(format!("bus {n}: {e}")))?;
            b.profiles
                .validate(self.hours)
                .map_err(|e| SimError::Config(format!("bus {n}: {e}")))?;
            if b.renewable_capacity.len() != b.profiles.renewable_cf_mean.len() {
                return bad(format!("bus {n}: one capacity per renewable profile"));
            }
            if b.renewable_capacity.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
                return bad(format!("bus {n}: renewable capacity must be non-negative"));
            }
            if !self.allow_any_delta && !(0.5..=1.0).contains(&b.delta) {
                return bad(format!("bus {n}: delta {} outside [0.5, 1]", b.delta));
            }
            if !(b.delta > 0.0) {
                return bad(format!("bus {n}: delta must be positive"));
            }
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.n_days * self.hours
    }
}

/// Grids, kernel and reward of one bus.
#[derive(Debug, Clone)]
pub struct BusModel {
    pub space: StateSpace,
    pub model: TransitionModel,
    pub reward: PriceLinearReward,
    pub unit: Vec<f64>,
    pub capacities: Vec<f64>,
}

impl BusModel {
    pub fn build(cfg: &SimulationConfig, bus: &BusSpec) -> Result<Self, SimError> {
        let space = StateSpace::new(
            StorageGrid::uniform(cfg.grids.storage_points)?,
            NetLoadGrid::new(
                &bus.profiles.prosumer_nd_mean,
                bus.profiles.noise,
                cfg.grids.netload_points,
            )?,
            ActionGrid::uniform(cfg.grids.action_points)?,
        );
        let model = build_transition_model(&space, cfg.zeta);
        let reward = PriceLinearReward::from_space(&space, &bus.population);
        let unit = unit_demand(&space, bus.population.efficiency);
        let capacities = bus.population.prosumer_capacities();
        Ok(Self {
            space,
            model,
            reward,
            unit,
            capacities,
        })
    }

    /// Start-of-run state distribution: hour 0, storage at `e0`.
    pub fn initial_states(&self, e0: f64) -> Vec<f64> {
        let mut mu = vec![0.0; self.space.n_states()];
        let ei = self.space.storage.snap(e0);
        for (n, p) in self.space.netload.probs[0].iter().enumerate() {
            mu[self.space.index(0, n, ei)] += p;
        }
        mu
    }

    /// Expected storage fraction under a mean field.
    pub fn storage_level(&self, mf: &MeanField) -> f64 {
        mf.state_marginal()
            .iter()
            .enumerate()
            .map(|(s, m)| m * self.space.state(s).e)
            .sum()
    }

    /// Expected grid-side storage flow as a fraction of capacity.
    pub fn storage_flow(&self, mf: &MeanField, eta: f64) -> f64 {
        let na = self.space.n_actions();
        let mut out = 0.0;
        for s in 0..self.space.n_states() {
            let e = self.space.state(s).e;
            for (a, &lvl) in self.space.actions.levels.iter().enumerate() {
                out += mf.dist[s * na + a] * efficiency_adjust(e, lvl, eta);
            }
        }
        out
    }
}

/// Appends renewable units with the given availability to the bulk network.
pub fn network_with_renewables(base: &Network, availability: &[Vec<(usize, f64)>]) -> Network {
    let mut gens = base.generators.clone();
    for units in availability {
        for &(bus, p) in units {
            gens.push(GeneratorSpec {
                id: gens.len(),
                bus,
                cost_a: RENEWABLE_COST_A,
                cost_b: 0.0,
                p_max: p,
            });
        }
    }
    Network::new(base.n_buses, base.lines.clone(), gens)
}

/// Renewable availability at its expected capacity factor, grouped by bus.
pub fn expected_renewables(cfg: &SimulationConfig, hour: usize) -> Vec<Vec<(usize, f64)>> {
    cfg.buses
        .iter()
        .enumerate()
        .map(|(n, b)| {
            b.renewable_capacity
                .iter()
                .zip(&b.profiles.renewable_cf_mean)
                .zip(&b.profiles.renewable_noise)
                .map(|((c, cf), nz)| (n, c * cf[hour] * nz.mean()))
                .collect()
        })
        .collect()
}

fn sampled_renewables(cfg: &SimulationConfig, t: usize) -> Vec<Vec<(usize, f64)>> {
    let hour = t % cfg.hours;
    cfg.buses
        .iter()
        .enumerate()
        .map(|(n, b)| {
            b.renewable_capacity
                .iter()
                .zip(&b.profiles.renewable_cf_mean)
                .zip(&b.profiles.renewable_noise)
                .enumerate()
                .map(|(k, ((c, cf), nz))| {
                    let mut r = stream(cfg.seed, Purpose::Renewable, t as u64, n as u64, k as u64);
                    (n, c * cf[hour] * nz.sample(&mut r))
                })
                .collect()
        })
        .collect()
}

/// Expected consumer demand of a bus at `hour`, MWh.
pub fn expected_consumer_mwh(bus: &BusSpec, hour: usize) -> f64 {
    bus.population.consumer_capacity()
        * bus.profiles.consumer_nd_mean[hour]
        * bus.profiles.noise.mean()
}

/// Expected prosumer demand at `hour` with idle storage, MWh.
pub fn expected_idle_prosumer_mwh(bus: &BusSpec, hour: usize) -> f64 {
    bus.population.total_capacity * bus.profiles.prosumer_nd_mean[hour] * bus.profiles.noise.mean()
}

/// Initial belief vectors per bus.
pub fn initial_belief_vectors(cfg: &SimulationConfig) -> Result<Vec<BeliefVector>, SimError> {
    let values = match cfg.belief_init {
        BeliefInit::Flat(p) => vec![vec![p; cfg.hours]; cfg.buses.len()],
        BeliefInit::Dispatch => {
            let mut per_hour = Vec::with_capacity(cfg.hours);
            let mut nets = Vec::with_capacity(cfg.hours);
            for h in 0..cfg.hours {
                per_hour.push(DemandVector(
                    cfg.buses
                        .iter()
                        .map(|b| expected_idle_prosumer_mwh(b, h) + expected_consumer_mwh(b, h))
                        .collect(),
                ));
                nets.push(network_with_renewables(&cfg.network, &expected_renewables(cfg, h)));
            }
            let mut out = vec![Vec::with_capacity(cfg.hours); cfg.buses.len()];
            for h in 0..cfg.hours {
                let b = initial_beliefs(&nets[h], std::slice::from_ref(&per_hour[h]))?;
                for (n, v) in b.into_iter().enumerate() {
                    out[n].push(v[0]);
                }
            }
            out
        }
    };
    values
        .into_iter()
        .zip(&cfg.buses)
        .map(|(v, b)| {
            if cfg.allow_any_delta {
                BeliefVector::new_unchecked(v, b.delta)
            } else {
                BeliefVector::new(v, b.delta)
            }
            .map_err(SimError::from)
        })
        .collect()
}

/// Policy that never touches storage.
pub fn idle_policy(model: &TransitionModel, zero_action: usize) -> Policy {
    let na = model.n_actions;
    let mut probs = vec![0.0; model.n_states * na];
    for s in 0..model.n_states {
        probs[s * na + zero_action] = 1.0;
    }
    Policy::from_probs(model.n_states, na, probs)
}

struct BusState {
    belief: BeliefVector,
    learner: Option<SoftQLearner>,
    q: Option<SoftQTable>,
    agent_e: Vec<usize>,
    mf: Option<MeanField>,
}

struct StepOutcome {
    prosumer_mwh: f64,
    consumer_mwh: f64,
    flow_mwh: f64,
    storage_level: f64,
    agents: Vec<AgentRecord>,
    mean_field: Vec<MeanFieldEntry>,
}

/// Runs the full loop for `n_days · hours` steps.
pub fn run_simulation(cfg: &SimulationConfig) -> Result<SimulationTrace, SimError> {
    cfg.validate()?;
    let models: Vec<BusModel> = cfg
        .buses
        .iter()
        .map(|b| BusModel::build(cfg, b))
        .collect::<Result<_, _>>()?;
    let beliefs = initial_belief_vectors(cfg)?;
    let mut states: Vec<BusState> = beliefs
        .into_iter()
        .zip(&models)
        .map(|(belief, m)| BusState {
            belief,
            learner: (cfg.mode == Mode::FiniteAgent && cfg.storage_enabled)
                .then(|| SoftQLearner::new(&m.model, cfg.gamma)),
            q: None,
            agent_e: vec![m.space.storage.snap(cfg.initial_storage); m.capacities.len()],
            mf: None,
        })
        .collect();

    let mut trace = SimulationTrace {
        seed: cfg.seed,
        hours: cfg.hours,
        n_buses: cfg.buses.len(),
        buses: cfg
            .buses
            .iter()
            .map(|b| BusInfo {
                prosumer_capacity: b.population.total_capacity,
                consumer_capacity: b.population.consumer_capacity(),
                prosumer_nd_mean: b.profiles.prosumer_nd_mean.clone(),
            })
            .collect(),
        ..Default::default()
    };

    for t in 0..cfg.total_steps() {
        let time = TimeIndex::new(t, cfg.hours);
        let hour = time.hour();
        let outcomes: Vec<StepOutcome> = states
            .par_iter_mut()
            .zip(models.par_iter())
            .zip(cfg.buses.par_iter())
            .enumerate()
            .map(|(n, ((st, bm), spec))| step_bus(cfg, n, t, st, bm, spec))
            .collect::<Result<_, _>>()?;

        let demand = DemandVector(
            outcomes
                .iter()
                .map(|o| o.prosumer_mwh + o.consumer_mwh)
                .collect(),
        );
        let renewables = match cfg.mode {
            Mode::FiniteAgent => sampled_renewables(cfg, t),
            Mode::LimitMeanField => expected_renewables(cfg, hour),
        };
        let net = network_with_renewables(&cfg.network, &renewables);
        let sol: EdSolution =
            solve_ed(&net, &demand).map_err(|source| SimError::Dispatch { t, source })?;
        if trace.dispatch_header.is_empty() {
            trace.dispatch_header = std::iter::once("t".to_string())
                .chain(EdSolution::csv_header(net.n_buses, net.generators.len()))
                .collect();
        }
        trace
            .dispatch
            .push(std::iter::once(t.to_string()).chain(sol.csv_record()).collect());

        for (n, (o, st)) in outcomes.into_iter().zip(states.iter_mut()).enumerate() {
            let lmp = sol.lmps[n];
            trace.records.push(TraceRecord {
                t,
                day: time.day(),
                hour,
                bus: n,
                lmp,
                hub_price: sol.hub_price,
                demand_bid: demand.0[n],
                belief_h: st.belief.values[hour],
                storage_level: o.storage_level,
                cost_prosumer: lmp * o.prosumer_mwh,
                cost_consumer: lmp * o.consumer_mwh,
                prosumer_mwh: o.prosumer_mwh,
                consumer_mwh: o.consumer_mwh,
                storage_flow_mwh: o.flow_mwh,
            });
            trace.agents.extend(o.agents);
            trace.mean_fields.extend(o.mean_field);
            st.belief.update(time, lmp);
        }
    }
    Ok(trace)
}

fn step_bus(
    cfg: &SimulationConfig,
    n: usize,
    t: usize,
    st: &mut BusState,
    bm: &BusModel,
    spec: &BusSpec,
) -> Result<StepOutcome, SimError> {
    match cfg.mode {
        Mode::FiniteAgent => Ok(step_finite(cfg, n, t, st, bm, spec)),
        Mode::LimitMeanField => step_limit(cfg, n, t, st, bm, spec),
    }
}

fn step_finite(
    cfg: &SimulationConfig,
    n: usize,
    t: usize,
    st: &mut BusState,
    bm: &BusModel,
    spec: &BusSpec,
) -> StepOutcome {
    let hour = t % cfg.hours;
    let space = &bm.space;
    let levels = &space.storage.levels;
    let level: f64 = crate::meanfield::aggregate_storage(
        &st.agent_e.iter().map(|i| levels[*i]).collect::<Vec<_>>(),
        &bm.capacities,
    );

    // training phase
    let policy = match st.learner.as_mut() {
        Some(learner) => {
            if cfg.reset_q {
                learner.reset();
            }
            let mut rng = stream(cfg.seed, Purpose::Training, t as u64, n as u64, 0);
            let (nd_idx, _) = space.netload.sample(hour, &mut rng);
            let start = space.index(hour, nd_idx, space.storage.snap(level));
            learner.train(
                &bm.model,
                &bm.reward,
                &st.belief.values,
                &cfg.reg,
                cfg.t_train,
                cfg.lr,
                start,
                &mut rng,
            );
            Some(policy_from_q(&learner.table, &cfg.reg))
        }
        None => None,
    };

    // execution phase
    let zero = space.actions.zero_index();
    let eta = spec.population.efficiency;
    let ne = space.storage.len();
    let draws: Vec<(usize, AgentRecord, f64)> = st
        .agent_e
        .par_iter()
        .zip(bm.capacities.par_iter())
        .enumerate()
        .map(|(i, (&ei, &cap))| {
            let mut rng = stream(cfg.seed, Purpose::Prosumer, t as u64, n as u64, i as u64);
            let (nd_idx, nd) = space.netload.sample(hour, &mut rng);
            let s = space.index(hour, nd_idx, ei);
            let u: f64 = rng.gen();
            let ai = match &policy {
                Some(p) => p.sample_with(s, u),
                None => zero,
            };
            let e = levels[ei];
            let a = space.actions.levels[ai];
            let phi = efficiency_adjust(e, a, eta);
            let next = if rng.gen::<f64>() < cfg.zeta {
                rng.gen_range(0..ne)
            } else {
                space.storage.snap(storage_transition(e, a))
            };
            let rec = AgentRecord {
                t,
                bus: n,
                agent: i,
                e,
                nd,
                action: a,
                bid_mwh: (phi + nd) * cap,
            };
            (next, rec, phi * cap)
        })
        .collect();

    let mut prosumer_mwh = 0.0;
    let mut flow_mwh = 0.0;
    let mut agents = Vec::new();
    for (i, (next, rec, flow)) in draws.into_iter().enumerate() {
        st.agent_e[i] = next;
        prosumer_mwh += rec.bid_mwh;
        flow_mwh += flow;
        if cfg.record_agents {
            agents.push(rec);
        }
    }

    let cmean = spec.profiles.consumer_nd_mean[hour];
    let noise = spec.profiles.noise;
    let consumer_ratio: f64 = (0..spec.population.m_consumers)
        .map(|j| {
            let mut rng = stream(cfg.seed, Purpose::Consumer, t as u64, n as u64, j as u64);
            cmean * noise.sample(&mut rng)
        })
        .sum();

    StepOutcome {
        prosumer_mwh,
        consumer_mwh: consumer_ratio * spec.population.consumer_ref_capacity,
        flow_mwh,
        storage_level: level,
        agents,
        mean_field: Vec::new(),
    }
}

/// Γ1 by soft value iteration against the belief, warm-started from `prev`.
pub fn optimal_policy(
    cfg: &SimulationConfig,
    bm: &BusModel,
    belief: &[f64],
    prev: Option<SoftQTable>,
) -> Result<(SoftQTable, Policy), SimError> {
    let r = bm.reward.table(bm.model.n_states, bm.model.n_actions, belief);
    let init = prev.unwrap_or_else(|| SoftQTable::zeros(&bm.model, cfg.gamma));
    let (q, _) = soft_value_iteration_from(&bm.model, &r, &cfg.reg, init, cfg.vi_tol)?;
    let p = policy_from_q(&q, &cfg.reg);
    Ok((q, p))
}

fn step_limit(
    cfg: &SimulationConfig,
    n: usize,
    t: usize,
    st: &mut BusState,
    bm: &BusModel,
    spec: &BusSpec,
) -> Result<StepOutcome, SimError> {
    let hour = t % cfg.hours;
    let policy = if cfg.storage_enabled {
        let (q, p) = optimal_policy(cfg, bm, &st.belief.values, st.q.take())?;
        st.q = Some(q);
        p
    } else {
        idle_policy(&bm.model, bm.space.actions.zero_index())
    };
    let mf = match st.mf.take() {
        None => MeanField::from_states(&bm.initial_states(cfg.initial_storage), &policy),
        Some(prev) => consistency_update(&prev, &policy, &bm.model, cfg.zeta, cfg.gamma2),
    };
    let cap = spec.population.total_capacity;
    let out = StepOutcome {
        prosumer_mwh: prosumer_demand(&mf, &bm.unit, cap),
        consumer_mwh: expected_consumer_mwh(spec, hour),
        flow_mwh: cap * bm.storage_flow(&mf, spec.population.efficiency),
        storage_level: bm.storage_level(&mf),
        agents: Vec::new(),
        mean_field: if cfg.record_mean_fields {
            mean_field_entries(&mf, t, n)
        } else {
            Vec::new()
        },
    };
    st.mf = Some(mf);
    Ok(out)
}

fn mean_field_entries(mf: &MeanField, t: usize, bus: usize) -> Vec<MeanFieldEntry> {
    let na = mf.n_actions;
    mf.dist
        .iter()
        .enumerate()
        .filter(|(_, m)| **m > 0.0)
        .map(|(i, m)| MeanFieldEntry {
            t,
            bus,
            state: i / na,
            action: i % na,
            mass: *m,
        })
        .collect()
}
