//! The prosumer MDP: time maps, discrete grids, storage dynamics, rewards and
//! exogenous net-load sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::RegularizerSpec;

/// Global step counter with `h` steps per day.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeIndex {
    pub t: usize,
    pub h: usize,
}

impl TimeIndex {
    pub fn new(t: usize, h: usize) -> Self {
        assert!(h >= 1, "a day needs at least one step");
        Self { t, h }
    }

    pub fn hour(&self) -> usize {
        self.t % self.h
    }

    pub fn day(&self) -> usize {
        self.t / self.h
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> EnvError {
    EnvError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Triangular distribution Δ(lo, hi, mode).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triangular {
    pub lo: f64,
    pub hi: f64,
    pub mode: f64,
}

impl Triangular {
    pub fn new(lo: f64, hi: f64, mode: f64) -> Result<Self, EnvError> {
        let t = Self { lo, hi, mode };
        t.validate()?;
        Ok(t)
    }

    pub fn degenerate(v: f64) -> Self {
        Self { lo: v, hi: v, mode: v }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.mode.is_finite()) {
            return Err(invalid("noise", "non-finite parameter"));
        }
        if !(self.lo <= self.mode && self.mode <= self.hi) {
            return Err(invalid("noise", "requires lo <= mode <= hi"));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        (self.lo + self.hi + self.mode) / 3.0
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (a, b, c) = (self.lo, self.hi, self.mode);
        if x < a {
            return 0.0;
        }
        if x >= b {
            return 1.0;
        }
        if x <= c {
            (x - a) * (x - a) / ((b - a) * (c - a))
        } else {
            1.0 - (b - x) * (b - x) / ((b - a) * (b - c))
        }
    }

    /// Inverse CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        let (a, b, c) = (self.lo, self.hi, self.mode);
        if b == a {
            return a;
        }
        let fc = (c - a) / (b - a);
        if u < fc {
            a + (u * (b - a) * (c - a)).sqrt()
        } else {
            b - ((1.0 - u) * (b - a) * (b - c)).sqrt()
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.gen::<f64>())
    }
}

/// Storage-adjusted grid energy as a fraction of capacity.
pub fn efficiency_adjust(e: f64, a: f64, eta: f64) -> f64 {
    if a < 0.0 {
        (-e).max(a) * eta
    } else {
        (1.0 - e).min(a) / eta
    }
}

/// Storage level after action `a`, clipped to [0, 1].
pub fn storage_transition(e: f64, a: f64) -> f64 {
    (e + a).min(1.0).max(0.0)
}

/// Index of the nearest grid point; equidistant points resolve to the lower one.
/// `points` must be sorted ascending.
pub fn snap_index(points: &[f64], x: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = (x - p).abs();
        if d < best_d - 1e-12 {
            best = i;
            best_d = d;
        }
    }
    best
}

const MASK_TOL: f64 = 1e-9;

/// Sorted action levels in [−1, 1], always containing 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionGrid {
    pub levels: Vec<f64>,
}

impl ActionGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self, EnvError> {
        let g = Self { levels };
        g.validate()?;
        Ok(g)
    }

    /// `n` evenly spaced levels from −1 to 1 (n odd so 0 is included).
    pub fn uniform(n: usize) -> Result<Self, EnvError> {
        if n < 1 || n.is_multiple_of(2) {
            return Err(invalid("action_points", "must be odd and >= 1"));
        }
        if n == 1 {
            return Self::new(vec![0.0]);
        }
        let half = (n - 1) / 2;
        let levels = (0..n)
            .map(|i| (i as f64 - half as f64) / half as f64)
            .collect();
        Self::new(levels)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.levels.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            return Err(invalid("action_grid", "levels must lie in [-1, 1]"));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("action_grid", "levels must be sorted and distinct"));
        }
        if !self.levels.contains(&0.0) {
            return Err(invalid("action_grid", "must contain 0"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn zero_index(&self) -> usize {
        self.levels.iter().position(|a| *a == 0.0).expect("grid contains 0")
    }
}

/// Feasibility of each action at storage level `e`: −e ≤ a ≤ 1 − e.
pub fn action_mask(e: f64, grid: &ActionGrid) -> Vec<bool> {
    grid.levels
        .iter()
        .map(|&a| a == 0.0 || (a >= -e - MASK_TOL && a <= 1.0 - e + MASK_TOL))
        .collect()
}

/// Evenly spaced storage levels from 0 to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageGrid {
    pub levels: Vec<f64>,
}

impl StorageGrid {
    pub fn uniform(n: usize) -> Result<Self, EnvError> {
        if n < 2 {
            return Err(invalid("storage_points", "need at least 2 points"));
        }
        Ok(Self {
            levels: (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn snap(&self, e: f64) -> usize {
        snap_index(&self.levels, e)
    }
}

/// Per-hour net-load ratio grid: quantile-representative points of
/// `mean[h] × Δ` and the probability that a raw sample snaps to each point.
#[derive(Debug, Clone, PartialEq)]
pub struct NetLoadGrid {
    pub mean: Vec<f64>,
    pub noise: Triangular,
    pub points: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
}

impl NetLoadGrid {
    pub fn new(mean: &[f64], noise: Triangular, n_points: usize) -> Result<Self, EnvError> {
        noise.validate()?;
        if n_points < 1 {
            return Err(invalid("netload_points", "need at least 1 point"));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(invalid("profile", "non-finite mean"));
        }
        let mut points = Vec::with_capacity(mean.len());
        let mut probs = Vec::with_capacity(mean.len());
        for &m in mean {
            let mut pts: Vec<f64> = (0..n_points)
                .map(|i| m * noise.quantile((i as f64 + 0.5) / n_points as f64))
                .collect();
            pts.sort_by(|a, b| a.total_cmp(b));
            probs.push(snap_cell_masses(&pts, m, &noise));
            points.push(pts);
        }
        Ok(Self {
            mean: mean.to_vec(),
            noise,
            points,
            probs,
        })
    }

    pub fn hours(&self) -> usize {
        self.points.len()
    }

    pub fn n_points(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    /// Raw (unsnapped) draw of `mean[h] × Δ`.
    pub fn sample_raw<R: Rng + ?Sized>(&self, hour: usize, rng: &mut R) -> f64 {
        self.mean[hour] * self.noise.sample(rng)
    }

    /// Grid-snapped draw: (index, value).
    pub fn sample<R: Rng + ?Sized>(&self, hour: usize, rng: &mut R) -> (usize, f64) {
        let x = self.sample_raw(hour, rng);
        let i = snap_index(&self.points[hour], x);
        (i, self.points[hour][i])
    }
}

/// Probability that `m × T` snaps to each of the sorted `pts`.
fn snap_cell_masses(pts: &[f64], m: f64, noise: &Triangular) -> Vec<f64> {
    let cdf = |x: f64| -> f64 {
        if m > 0.0 {
            noise.cdf(x / m)
        } else if m < 0.0 {
            1.0 - noise.cdf(x / m)
        } else if x >= 0.0 {
            1.0
        } else {
            0.0
        }
    };
    let degenerate = noise.hi == noise.lo || m == 0.0;
    let mut probs = vec![0.0; pts.len()];
    if degenerate {
        probs[0] = 1.0;
        return probs;
    }
    // distinct values keep the first index; later duplicates get no mass
    let mut firsts: Vec<usize> = Vec::new();
    for i in 0..pts.len() {
        if firsts.last().is_none_or(|&j| pts[j] != pts[i]) {
            firsts.push(i);
        }
    }
    let mut prev = 0.0;
    for (k, &i) in firsts.iter().enumerate() {
        let upper = match firsts.get(k + 1) {
            Some(&j) => cdf(0.5 * (pts[i] + pts[j])),
            None => 1.0,
        };
        probs[i] = (upper - prev).max(0.0);
        prev = upper;
    }
    probs
}

/// Draws a net-load ratio for `hour` and snaps it to the grid.
pub fn sample_net_load<R: Rng + ?Sized>(grid: &NetLoadGrid, hour: usize, rng: &mut R) -> f64 {
    grid.sample(hour, rng).1
}

/// Hourly demand shapes and noise for one bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioProfiles {
    /// Prosumer net-load ratio per hour.
    pub prosumer_nd_mean: Vec<f64>,
    /// Consumer demand ratio per hour.
    pub consumer_nd_mean: Vec<f64>,
    pub noise: Triangular,
    /// Capacity factor per hour for each renewable unit at the bus.
    #[serde(default)]
    pub renewable_cf_mean: Vec<Vec<f64>>,
    #[serde(default)]
    pub renewable_noise: Vec<Triangular>,
}

impl ScenarioProfiles {
    pub fn validate(&self, hours: usize) -> Result<(), EnvError> {
        self.noise.validate()?;
        if self.prosumer_nd_mean.len() != hours || self.consumer_nd_mean.len() != hours {
            return Err(invalid("profiles", format!("expected {hours} hourly values")));
        }
        if self
            .prosumer_nd_mean
            .iter()
            .chain(&self.consumer_nd_mean)
            .any(|v| !v.is_finite())
        {
            return Err(invalid("profiles", "non-finite value"));
        }
        if self.renewable_cf_mean.len() != self.renewable_noise.len() {
            return Err(invalid("renewables", "one noise spec per renewable profile"));
        }
        for (cf, nz) in self.renewable_cf_mean.iter().zip(&self.renewable_noise) {
            nz.validate()?;
            if cf.len() != hours || cf.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(invalid(
                    "renewables",
                    format!("capacity factors need {hours} non-negative values"),
                ));
            }
        }
        Ok(())
    }
}

/// Prosumer/consumer population at one bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub m_prosumers: usize,
    pub m_consumers: usize,
    pub type_share: Vec<f64>,
    pub type_theta: Vec<f64>,
    /// Bus-level storage capacity Ē^n, MWh.
    pub total_capacity: f64,
    pub efficiency: f64,
    /// Notional capacity of each consumer, MWh.
    pub consumer_ref_capacity: f64,
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.type_share.is_empty() || self.type_share.len() != self.type_theta.len() {
            return Err(invalid("type_share", "must be non-empty and match type_theta"));
        }
        if self.type_share.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(invalid("type_share", "entries must lie in [0, 1]"));
        }
        let s: f64 = self.type_share.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(invalid("type_share", format!("must sum to 1 (got {s})")));
        }
        if self.type_theta.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(invalid("type_theta", "entries must be positive"));
        }
        if self.m_prosumers == 0 {
            return Err(invalid("m_prosumers", "need at least one prosumer"));
        }
        if !(self.total_capacity > 0.0 && self.total_capacity.is_finite()) {
            return Err(invalid("total_capacity", "must be positive"));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(invalid("efficiency", "must lie in (0, 1]"));
        }
        if !(self.consumer_ref_capacity >= 0.0 && self.consumer_ref_capacity.is_finite()) {
            return Err(invalid("consumer_ref_capacity", "must be non-negative"));
        }
        Ok(())
    }

    /// Capacity of one type-k prosumer: θ_k Ē / (M Σ θ b).
    pub fn type_capacity(&self, k: usize) -> f64 {
        let denom: f64 = self
            .type_theta
            .iter()
            .zip(&self.type_share)
            .map(|(t, b)| t * b)
            .sum();
        self.type_theta[k] * self.total_capacity / (self.m_prosumers as f64 * denom)
    }

    /// Integer head-count per type (largest remainder rounding of b_k·M).
    pub fn type_counts(&self) -> Vec<usize> {
        let m = self.m_prosumers as f64;
        let raw: Vec<f64> = self.type_share.iter().map(|b| b * m).collect();
        let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
        let mut left = self.m_prosumers - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&i, &j| {
            let fi = raw[i] - raw[i].floor();
            let fj = raw[j] - raw[j].floor();
            fj.total_cmp(&fi).then(i.cmp(&j))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        counts
    }

    /// Capacity of every prosumer, type-ordered.
    pub fn prosumer_capacities(&self) -> Vec<f64> {
        self.type_counts()
            .iter()
            .enumerate()
            .flat_map(|(k, &c)| std::iter::repeat_n(self.type_capacity(k), c))
            .collect()
    }

    pub fn consumer_capacity(&self) -> f64 {
        self.m_consumers as f64 * self.consumer_ref_capacity
    }
}

/// One representative prosumer state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub e: f64,
    pub nd: f64,
    pub hour: usize,
}

/// Net profit of action `a`: −λ_hour · Ē · (Φ(e, a, η) + nd).
pub fn reward(s: &AgentState, a: f64, lmp_profile: &[f64], pop: &PopulationSpec) -> f64 {
    -lmp_profile[s.hour] * pop.total_capacity * (efficiency_adjust(s.e, a, pop.efficiency) + s.nd)
}

/// Expected reward under `dist` over `actions` minus α Σ π log π.
pub fn regularized_reward(
    s: &AgentState,
    actions: &[f64],
    dist: &[f64],
    lmp_profile: &[f64],
    pop: &PopulationSpec,
    reg: &RegularizerSpec,
) -> f64 {
    let expected: f64 = actions
        .iter()
        .zip(dist)
        .map(|(a, p)| p * reward(s, *a, lmp_profile, pop))
        .sum();
    expected - reg.omega(dist)
}

/// Flat index over (hour, net-load point, storage point).
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub storage: StorageGrid,
    pub netload: NetLoadGrid,
    pub actions: ActionGrid,
}

impl StateSpace {
    pub fn new(storage: StorageGrid, netload: NetLoadGrid, actions: ActionGrid) -> Self {
        Self {
            storage,
            netload,
            actions,
        }
    }

    pub fn hours(&self) -> usize {
        self.netload.hours()
    }

    pub fn n_states(&self) -> usize {
        self.hours() * self.netload.n_points() * self.storage.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn index(&self, hour: usize, nd_idx: usize, e_idx: usize) -> usize {
        (hour * self.netload.n_points() + nd_idx) * self.storage.len() + e_idx
    }

    /// (hour, nd index, storage index).
    pub fn decode(&self, s: usize) -> (usize, usize, usize) {
        let ne = self.storage.len();
        let nn = self.netload.n_points();
        (s / (ne * nn), (s / ne) % nn, s % ne)
    }

    pub fn state(&self, s: usize) -> AgentState {
        let (h, n, e) = self.decode(s);
        AgentState {
            e: self.storage.levels[e],
            nd: self.netload.points[h][n],
            hour: h,
        }
    }

    pub fn feasible(&self, s: usize) -> Vec<bool> {
        action_mask(self.state(s).e, &self.actions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pop(cap: f64, eta: f64) -> PopulationSpec {
        PopulationSpec {
            m_prosumers: 650,
            m_consumers: 2000,
            type_share: vec![500.0 / 650.0, 100.0 / 650.0, 50.0 / 650.0],
            type_theta: vec![1.0, 2.0, 3.0],
            total_capacity: cap,
            efficiency: eta,
            consumer_ref_capacity: 0.01,
        }
    }

    #[test]
    fn time_maps() {
        let t = TimeIndex::new(27, 12);
        assert_eq!((t.hour(), t.day()), (3, 2));
    }

    #[test]
    fn phi_examples() {
        assert!((efficiency_adjust(0.5, -0.8, 0.9) + 0.45).abs() < 1e-15);
        assert!((efficiency_adjust(0.8, 0.5, 0.8) - 0.25).abs() < 1e-15);
        for e in [0.0, 0.3, 1.0] {
            for eta in [0.5, 1.0] {
                assert_eq!(efficiency_adjust(e, 0.0, eta), 0.0);
            }
        }
    }

    #[test]
    fn storage_clips() {
        assert_eq!(storage_transition(0.9, 0.5), 1.0);
        assert_eq!(storage_transition(0.2, -0.5), 0.0);
        assert_eq!(storage_transition(0.5, 0.25), 0.75);
    }

    #[test]
    fn mask_at_eighty_percent() {
        let grid = ActionGrid::new((0..=10).map(|i| -1.0 + 0.2 * i as f64).map(|x| (x * 10.0f64).round() / 10.0).collect()).unwrap();
        let m = action_mask(0.8, &grid);
        let feasible: Vec<f64> = grid.levels.iter().zip(&m).filter(|(_, f)| **f).map(|(a, _)| *a).collect();
        assert_eq!(feasible, vec![-0.8, -0.6, -0.4, -0.2, 0.0, 0.2]);
    }

    #[test]
    fn mask_at_extremes() {
        let grid = ActionGrid::uniform(9).unwrap();
        let empty = action_mask(0.0, &grid);
        let full = action_mask(1.0, &grid);
        for (i, a) in grid.levels.iter().enumerate() {
            if *a < 0.0 {
                assert!(!empty[i]);
            }
            if *a > 0.0 {
                assert!(!full[i]);
            }
            if *a == 0.0 {
                assert!(empty[i] && full[i]);
            }
        }
    }

    #[test]
    fn capacity_allocation_matches_case_study() {
        let p = pop(8.5, 1.0);
        p.validate().unwrap();
        assert_eq!(p.type_counts(), vec![500, 100, 50]);
        for (k, kwh) in [10.0, 20.0, 30.0].iter().enumerate() {
            assert!((p.type_capacity(k) * 1000.0 - kwh).abs() < 1e-9);
        }
        let total: f64 = p.prosumer_capacities().iter().sum();
        assert!((total - 8.5).abs() < 1e-9);
    }

    #[test]
    fn share_must_sum_to_one() {
        let mut p = pop(8.5, 1.0);
        p.type_share = vec![0.5, 0.2, 0.2];
        match p.validate() {
            Err(EnvError::Invalid { field, .. }) => assert_eq!(field, "type_share"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reward_examples() {
        let mut p = pop(10.0, 1.0);
        let lmp = vec![50.0, 40.0];
        let s = AgentState { e: 0.5, nd: 0.2, hour: 0 };
        assert!((reward(&s, 0.0, &lmp, &p) + 100.0).abs() < 1e-12);
        let s0 = AgentState { e: 0.5, nd: 0.0, hour: 0 };
        assert_eq!(reward(&s0, 0.0, &lmp, &p), 0.0);
        let s1 = AgentState { e: 0.5, nd: 0.1, hour: 1 };
        assert!((reward(&s1, -0.5, &lmp, &p) - 160.0).abs() < 1e-12);
        // linear in λ and Ē
        p.total_capacity = 20.0;
        let doubled: Vec<f64> = lmp.iter().map(|x| 2.0 * x).collect();
        assert!((reward(&s1, -0.5, &doubled, &p) - 640.0).abs() < 1e-9);
    }

    #[test]
    fn regularized_reward_cases() {
        let p = pop(10.0, 1.0);
        let lmp = vec![50.0];
        let s = AgentState { e: 0.5, nd: 0.2, hour: 0 };
        let acts = [-0.25, 0.0, 0.25];
        let reg = RegularizerSpec::new(0.3);
        let one_hot = [0.0, 1.0, 0.0];
        assert!((regularized_reward(&s, &acts, &one_hot, &lmp, &p, &reg) - reward(&s, 0.0, &lmp, &p)).abs() < 1e-12);
        let uni = [1.0 / 3.0; 3];
        let expected: f64 = acts.iter().map(|a| reward(&s, *a, &lmp, &p)).sum::<f64>() / 3.0;
        let v = regularized_reward(&s, &acts, &uni, &lmp, &p, &reg);
        assert!((v - expected - 0.3 * 3f64.ln()).abs() < 1e-12);
        let off = RegularizerSpec { alpha: 0.0, rho: 0.0 };
        assert!((regularized_reward(&s, &acts, &uni, &lmp, &p, &off) - expected).abs() < 1e-12);
    }

    #[test]
    fn triangular_quantile_inverts_cdf() {
        let t = Triangular::new(0.8, 1.2, 1.0).unwrap();
        for i in 1..100 {
            let u = i as f64 / 100.0;
            assert!((t.cdf(t.quantile(u)) - u).abs() < 1e-12);
        }
        assert!((t.mean() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_noise_returns_mean() {
        let g = NetLoadGrid::new(&[0.3, -0.2], Triangular::degenerate(1.0), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(sample_net_load(&g, 0, &mut rng), 0.3);
            assert_eq!(sample_net_load(&g, 1, &mut rng), -0.2);
        }
        assert_eq!(g.probs[0], vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_mean_hour_is_zero() {
        let g = NetLoadGrid::new(&[0.0], Triangular::new(0.8, 1.2, 1.0).unwrap(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(sample_net_load(&g, 0, &mut rng), 0.0);
    }

    #[test]
    fn raw_sample_mean_matches_profile() {
        let g = NetLoadGrid::new(&[0.4], Triangular::new(0.8, 1.2, 1.0).unwrap(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let m: f64 = (0..n).map(|_| g.sample_raw(0, &mut rng)).sum::<f64>() / n as f64;
        assert!((m - 0.4).abs() < 0.01 * 0.4, "{m}");
    }

    #[test]
    fn snap_cell_masses_match_sampling() {
        let g = NetLoadGrid::new(&[-0.3], Triangular::new(0.8, 1.2, 1.0).unwrap(), 5).unwrap();
        assert!((g.probs[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 5];
        let n = 200_000;
        for _ in 0..n {
            counts[g.sample(0, &mut rng).0] += 1;
        }
        for i in 0..5 {
            assert!((counts[i] as f64 / n as f64 - g.probs[0][i]).abs() < 5e-3);
        }
    }

    #[test]
    fn snapping_ties_go_low() {
        assert_eq!(snap_index(&[0.0, 1.0], 0.5), 0);
        assert_eq!(snap_index(&[0.0, 0.5, 1.0], 0.76), 2);
    }

    #[test]
    fn state_index_roundtrip() {
        let ss = StateSpace::new(
            StorageGrid::uniform(21).unwrap(),
            NetLoadGrid::new(&[0.1, 0.2, 0.3], Triangular::new(0.8, 1.2, 1.0).unwrap(), 5).unwrap(),
            ActionGrid::uniform(9).unwrap(),
        );
        assert_eq!(ss.n_states(), 3 * 5 * 21);
        for s in 0..ss.n_states() {
            let (h, n, e) = ss.decode(s);
            assert_eq!(ss.index(h, n, e), s);
        }
    }
}
