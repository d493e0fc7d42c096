//! TOML scenario files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{PopulationSpec, ScenarioProfiles, Triangular};
use crate::meanfield::Gamma2Variant;
use crate::network::{GeneratorSpec, LineSpec, Network};
use crate::policy::{LrSchedule, RegularizerSpec};
use crate::sim::{BeliefInit, BusSpec, GridSpec, Mode, SimulationConfig};

const BUNDLED: &[(&str, &str)] = &[
    ("toy_1bus", include_str!("../../scenarios/toy_1bus.toml")),
    ("oahu_desk", include_str!("../../scenarios/oahu_desk.toml")),
    (
        "oahu_desk_baseline",
        include_str!("../../scenarios/oahu_desk_baseline.toml"),
    ),
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{}", .0.join("\n"))]
    Validation(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnergyUnit {
    #[serde(rename = "kWh")]
    KWh,
    #[serde(rename = "MWh")]
    MWh,
}

impl EnergyUnit {
    fn to_mwh(self) -> f64 {
        match self {
            EnergyUnit::KWh => 1e-3,
            EnergyUnit::MWh => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gamma2Choice {
    Literal,
    OldAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BeliefInitFile {
    Named(String),
    Flat { flat: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmFile {
    pub alpha: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub t_train: usize,
    #[serde(default = "default_e0")]
    pub initial_storage: f64,
    #[serde(default = "yes")]
    pub storage_enabled: bool,
    #[serde(default)]
    pub reset_q: bool,
    #[serde(default)]
    pub lr: LrSchedule,
    #[serde(default = "default_gamma2")]
    pub gamma2_variant: Gamma2Choice,
    #[serde(default = "default_belief_init")]
    pub belief_init: BeliefInitFile,
    #[serde(default)]
    pub allow_any_delta: bool,
    #[serde(default = "default_vi_tol")]
    pub vi_tol: f64,
}

fn default_e0() -> f64 {
    0.5
}
fn yes() -> bool {
    true
}
fn default_gamma2() -> Gamma2Choice {
    Gamma2Choice::Literal
}
fn default_belief_init() -> BeliefInitFile {
    BeliefInitFile::Named("dispatch".into())
}
fn default_vi_tol() -> f64 {
    1e-8
}
fn default_delta() -> f64 {
    0.7
}
fn default_mode() -> Mode {
    Mode::FiniteAgent
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorFile {
    pub bus: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub cost_a: f64,
    pub cost_b: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineFile {
    pub ptdf: Vec<f64>,
    /// Omitted means unconstrained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewableFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub capacity: f64,
    pub cf_mean: Vec<f64>,
    pub noise: Triangular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusFile {
    pub m_prosumers: usize,
    pub m_consumers: usize,
    pub type_share: Vec<f64>,
    pub type_theta: Vec<f64>,
    pub total_capacity: f64,
    pub efficiency: f64,
    pub consumer_ref_capacity: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub prosumer_nd_mean: Vec<f64>,
    pub consumer_nd_mean: Vec<f64>,
    pub noise: Triangular,
    #[serde(default)]
    pub renewables: Vec<RenewableFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub energy_unit: EnergyUnit,
    pub hours: usize,
    pub n_days: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    pub algorithm: AlgorithmFile,
    #[serde(default)]
    pub grids: GridSpec,
    pub generators: Vec<GeneratorFile>,
    #[serde(default)]
    pub lines: Vec<LineFile>,
    pub buses: Vec<BusFile>,
}

/// A validated configuration together with its run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seeds: Vec<u64>,
    pub config: SimulationConfig,
}

impl Scenario {
    /// SHA-256 of the normalized (MWh) TOML form.
    pub fn config_hash(&self) -> String {
        let text = write_scenario(self);
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn with_seed(&self, seed: u64) -> SimulationConfig {
        let mut c = self.config.clone();
        c.seed = seed;
        c
    }
}

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

/// Loads a scenario from a path, or a bundled scenario by name.
pub fn load_scenario(path_or_name: &str) -> Result<Scenario, ScenarioError> {
    let p = Path::new(path_or_name);
    if !p.exists() {
        if let Some((_, text)) = BUNDLED.iter().find(|(n, _)| *n == path_or_name) {
            return parse_scenario(text);
        }
    }
    let text = std::fs::read_to_string(p).map_err(|source| ScenarioError::Io {
        path: path_or_name.to_string(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    from_file(file)
}

fn check_len(errs: &mut Vec<String>, field: String, len: usize, expected: usize) {
    if len != expected {
        errs.push(format!("{field}: expected {expected} values, got {len}"));
    }
}

pub fn from_file(f: ScenarioFile) -> Result<Scenario, ScenarioError> {
    let mut errs = Vec::new();
    let u = f.energy_unit.to_mwh();
    let n_buses = f.buses.len();
    if n_buses == 0 {
        errs.push("buses: at least one bus required".into());
    }
    if f.seeds.is_empty() {
        errs.push("seeds: at least one seed required".into());
    }
    for (i, g) in f.generators.iter().enumerate() {
        if g.bus >= n_buses {
            errs.push(format!("generators[{i}].bus: {} out of range", g.bus));
        }
    }
    for (i, l) in f.lines.iter().enumerate() {
        check_len(&mut errs, format!("lines[{i}].ptdf"), l.ptdf.len(), n_buses);
    }
    for (n, b) in f.buses.iter().enumerate() {
        check_len(&mut errs, format!("buses[{n}].prosumer_nd_mean"), b.prosumer_nd_mean.len(), f.hours);
        check_len(&mut errs, format!("buses[{n}].consumer_nd_mean"), b.consumer_nd_mean.len(), f.hours);
        let s: f64 = b.type_share.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            errs.push(format!("buses[{n}].type_share: must sum to 1 (got {s})"));
        }
        if b.type_share.len() != b.type_theta.len() {
            errs.push(format!("buses[{n}].type_theta: length must match type_share"));
        }
        for (k, r) in b.renewables.iter().enumerate() {
            check_len(&mut errs, format!("buses[{n}].renewables[{k}].cf_mean"), r.cf_mean.len(), f.hours);
        }
    }
    if !errs.is_empty() {
        return Err(ScenarioError::Validation(errs));
    }

    let generators = f
        .generators
        .iter()
        .enumerate()
        .map(|(id, g)| GeneratorSpec {
            id,
            bus: g.bus,
            cost_a: g.cost_a,
            cost_b: g.cost_b,
            p_max: g.p_max * u,
        })
        .collect();
    let lines = f
        .lines
        .iter()
        .enumerate()
        .map(|(id, l)| LineSpec {
            id,
            ptdf: l.ptdf.clone(),
            f_max: l.f_max.map_or(f64::INFINITY, |x| x * u),
        })
        .collect();
    let network = Network::new(n_buses, lines, generators);
    let buses = f
        .buses
        .iter()
        .map(|b| BusSpec {
            population: PopulationSpec {
                m_prosumers: b.m_prosumers,
                m_consumers: b.m_consumers,
                type_share: b.type_share.clone(),
                type_theta: b.type_theta.clone(),
                total_capacity: b.total_capacity * u,
                efficiency: b.efficiency,
                consumer_ref_capacity: b.consumer_ref_capacity * u,
            },
            profiles: ScenarioProfiles {
                prosumer_nd_mean: b.prosumer_nd_mean.clone(),
                consumer_nd_mean: b.consumer_nd_mean.clone(),
                noise: b.noise,
                renewable_cf_mean: b.renewables.iter().map(|r| r.cf_mean.clone()).collect(),
                renewable_noise: b.renewables.iter().map(|r| r.noise).collect(),
            },
            renewable_capacity: b.renewables.iter().map(|r| r.capacity * u).collect(),
            delta: b.delta,
        })
        .collect();
    let a = &f.algorithm;
    let belief_init = match &a.belief_init {
        BeliefInitFile::Flat { flat } => BeliefInit::Flat(*flat),
        BeliefInitFile::Named(s) if s == "dispatch" => BeliefInit::Dispatch,
        BeliefInitFile::Named(s) => {
            return Err(ScenarioError::Validation(vec![format!(
                "algorithm.belief_init: unknown value {s:?} (use \"dispatch\" or {{ flat = <price> }})"
            )]))
        }
    };
    let config = SimulationConfig {
        network,
        buses,
        grids: f.grids,
        reg: RegularizerSpec::new(a.alpha),
        gamma: a.gamma,
        zeta: a.zeta,
        t_train: a.t_train,
        hours: f.hours,
        n_days: f.n_days,
        seed: f.seeds.first().copied().unwrap_or(0),
        mode: f.mode,
        initial_storage: a.initial_storage,
        storage_enabled: a.storage_enabled,
        reset_q: a.reset_q,
        lr: a.lr,
        gamma2: match a.gamma2_variant {
            Gamma2Choice::Literal => Gamma2Variant::Literal,
            Gamma2Choice::OldAction => Gamma2Variant::OldAction,
        },
        belief_init,
        allow_any_delta: a.allow_any_delta,
        vi_tol: a.vi_tol,
        record_agents: false,
        record_mean_fields: false,
    };
    config
        .validate()
        .map_err(|e| ScenarioError::Validation(vec![e.to_string()]))?;
    Ok(Scenario {
        name: f.name,
        seeds: f.seeds,
        config,
    })
}

/// Inverse of `from_file`, always in MWh.
pub fn to_file(s: &Scenario) -> ScenarioFile {
    let c = &s.config;
    let n_base = c.network.generators.len();
    ScenarioFile {
        name: s.name.clone(),
        energy_unit: EnergyUnit::MWh,
        hours: c.hours,
        n_days: c.n_days,
        seeds: s.seeds.clone(),
        mode: c.mode,
        algorithm: AlgorithmFile {
            alpha: c.reg.alpha,
            gamma: c.gamma,
            zeta: c.zeta,
            t_train: c.t_train,
            initial_storage: c.initial_storage,
            storage_enabled: c.storage_enabled,
            reset_q: c.reset_q,
            lr: c.lr,
            gamma2_variant: match c.gamma2 {
                Gamma2Variant::Literal => Gamma2Choice::Literal,
                Gamma2Variant::OldAction => Gamma2Choice::OldAction,
            },
            belief_init: match c.belief_init {
                BeliefInit::Dispatch => BeliefInitFile::Named("dispatch".into()),
                BeliefInit::Flat(p) => BeliefInitFile::Flat { flat: p },
            },
            allow_any_delta: c.allow_any_delta,
            vi_tol: c.vi_tol,
        },
        grids: c.grids,
        generators: c.network.generators[..n_base]
            .iter()
            .map(|g| GeneratorFile {
                bus: g.bus,
                name: None,
                cost_a: g.cost_a,
                cost_b: g.cost_b,
                p_max: g.p_max,
            })
            .collect(),
        lines: c
            .network
            .lines
            .iter()
            .map(|l| LineFile {
                ptdf: l.ptdf.clone(),
                f_max: l.f_max.is_finite().then_some(l.f_max),
            })
            .collect(),
        buses: c
            .buses
            .iter()
            .map(|b| BusFile {
                m_prosumers: b.population.m_prosumers,
                m_consumers: b.population.m_consumers,
                type_share: b.population.type_share.clone(),
                type_theta: b.population.type_theta.clone(),
                total_capacity: b.population.total_capacity,
                efficiency: b.population.efficiency,
                consumer_ref_capacity: b.population.consumer_ref_capacity,
                delta: b.delta,
                prosumer_nd_mean: b.profiles.prosumer_nd_mean.clone(),
                consumer_nd_mean: b.profiles.consumer_nd_mean.clone(),
                noise: b.profiles.noise,
                renewables: b
                    .renewable_capacity
                    .iter()
                    .zip(&b.profiles.renewable_cf_mean)
                    .zip(&b.profiles.renewable_noise)
                    .map(|((c, cf), nz)| RenewableFile {
                        name: None,
                        capacity: *c,
                        cf_mean: cf.clone(),
                        noise: *nz,
                    })
                    .collect(),
            })
            .collect(),
    }
}

pub fn write_scenario(s: &Scenario) -> String {
    toml::to_string(&to_file(s)).expect("scenario serializes")
}
