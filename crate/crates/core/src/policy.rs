//! Entropy-regularized control: the softmax policy map, exact soft value
//! iteration, tabular soft Q-learning and exact policy evaluation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{PopulationSpec, StateSpace};
use crate::meanfield::{unit_demand, TransitionModel};

const ALPHA_FLOOR: f64 = 1e-6;

/// Negative-entropy regularizer Ω(π) = α Σ π ln π.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    pub alpha: f64,
    pub rho: f64,
}

impl RegularizerSpec {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, rho: alpha }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(PolicyError::InvalidAlpha(self.alpha));
        }
        Ok(())
    }

    pub fn omega(&self, dist: &[f64]) -> f64 {
        self.alpha * dist.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    fn effective_alpha(&self) -> f64 {
        self.alpha.max(ALPHA_FLOOR)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("soft value iteration did not converge in {0} iterations")]
    NonConvergence(usize),
    #[error("alpha must be positive (got {0})")]
    InvalidAlpha(f64),
    #[error("gamma must lie in [0, 1) (got {0})")]
    InvalidGamma(f64),
}

/// Per-state action distributions, flat index `s * n_actions + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl Policy {
    pub fn from_probs(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Self {
        assert_eq!(probs.len(), n_states * n_actions);
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    /// Uniform over the feasible actions of each state.
    pub fn uniform(model: &TransitionModel) -> Self {
        let na = model.n_actions;
        let mut probs = vec![0.0; model.n_states * na];
        for s in 0..model.n_states {
            let f = model.feasible_row(s);
            let m = f.iter().filter(|x| **x).count() as f64;
            for a in 0..na {
                if f[a] {
                    probs[s * na + a] = 1.0 / m;
                }
            }
        }
        Self::from_probs(model.n_states, na, probs)
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Samples an action for state `s` with uniform variate `u`.
    pub fn sample_with(&self, s: usize, u: f64) -> usize {
        let row = self.row(s);
        let mut acc = 0.0;
        let mut last = 0;
        for (a, p) in row.iter().enumerate() {
            if *p <= 0.0 {
                continue;
            }
            acc += p;
            last = a;
            if u < acc {
                return a;
            }
        }
        last
    }

    /// sup_s ‖π(·|s) − π̃(·|s)‖₁.
    pub fn sup_l1_distance(&self, other: &Policy) -> f64 {
        (0..self.n_states)
            .map(|s| {
                self.row(s)
                    .iter()
                    .zip(other.row(s))
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// Regularized Q-values; masked entries are never read.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftQTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub q: Vec<f64>,
    pub mask: Vec<bool>,
    pub gamma: f64,
}

impl SoftQTable {
    pub fn zeros(model: &TransitionModel, gamma: f64) -> Self {
        Self {
            n_states: model.n_states,
            n_actions: model.n_actions,
            q: vec![0.0; model.n_states * model.n_actions],
            mask: model.feasible.clone(),
            gamma,
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    /// V(s) = α ln Σ_{a unmasked} exp(q(s,a)/α).
    pub fn soft_value(&self, s: usize, reg: &RegularizerSpec) -> f64 {
        let na = self.n_actions;
        soft_max_value(
            &self.q[s * na..(s + 1) * na],
            &self.mask[s * na..(s + 1) * na],
            reg.effective_alpha(),
        )
    }

    pub fn sup_distance(&self, other: &SoftQTable) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .zip(&self.mask)
            .filter(|(_, m)| **m)
            .map(|((a, b), _)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn soft_max_value(q: &[f64], mask: &[bool], alpha: f64) -> f64 {
    let mx = q
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(x, _)| *x)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = q
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(x, _)| ((x - mx) / alpha).exp())
        .sum();
    mx + alpha * s.ln()
}

fn softmax_row(q: &[f64], mask: &[bool], alpha: f64, out: &mut [f64]) {
    let mx = q
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(x, _)| *x)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for ((o, x), m) in out.iter_mut().zip(q).zip(mask) {
        *o = if *m { ((x - mx) / alpha).exp() } else { 0.0 };
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// π(a|s) ∝ exp(q(s,a)/α) over unmasked actions.
pub fn policy_from_q(q: &SoftQTable, reg: &RegularizerSpec) -> Policy {
    let na = q.n_actions;
    let alpha = reg.effective_alpha();
    let mut probs = vec![0.0; q.q.len()];
    for s in 0..q.n_states {
        let r = s * na..(s + 1) * na;
        softmax_row(&q.q[r.clone()], &q.mask[r.clone()], alpha, &mut probs[r]);
    }
    Policy::from_probs(q.n_states, na, probs)
}

/// Reward r(s, a) given an hourly price profile.
pub trait RewardFn: Sync {
    fn reward(&self, s: usize, a: usize, lmp: &[f64]) -> f64;

    fn table(&self, n_states: usize, n_actions: usize, lmp: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                out.push(self.reward(s, a, lmp));
            }
        }
        out
    }
}

/// Fixed rewards independent of prices.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularReward {
    pub n_actions: usize,
    pub r: Vec<f64>,
}

impl RewardFn for TabularReward {
    fn reward(&self, s: usize, a: usize, _lmp: &[f64]) -> f64 {
        self.r[s * self.n_actions + a]
    }
}

/// r(s, a) = −λ[hour(s)] · coef(s, a).
#[derive(Debug, Clone, PartialEq)]
pub struct PriceLinearReward {
    pub n_actions: usize,
    pub hour: Vec<usize>,
    pub coef: Vec<f64>,
}

impl PriceLinearReward {
    /// The prosumer reward: coef = Ē · (Φ(e, a, η) + nd).
    pub fn from_space(space: &StateSpace, pop: &PopulationSpec) -> Self {
        let coef = unit_demand(space, pop.efficiency)
            .into_iter()
            .map(|u| u * pop.total_capacity)
            .collect();
        let hour = (0..space.n_states()).map(|s| space.decode(s).0).collect();
        Self {
            n_actions: space.n_actions(),
            hour,
            coef,
        }
    }

    /// Lipschitz constant of r in the price profile (sup-norm over (s, a)).
    pub fn price_lipschitz(&self) -> f64 {
        self.coef.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

impl RewardFn for PriceLinearReward {
    fn reward(&self, s: usize, a: usize, lmp: &[f64]) -> f64 {
        -lmp[self.hour[s]] * self.coef[s * self.n_actions + a]
    }
}

fn check_gamma(gamma: f64) -> Result<(), PolicyError> {
    if (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(PolicyError::InvalidGamma(gamma))
    }
}

/// One application of the soft Bellman operator to `q`.
pub fn soft_bellman(
    model: &TransitionModel,
    rewards: &[f64],
    q: &SoftQTable,
    reg: &RegularizerSpec,
) -> SoftQTable {
    let v: Vec<f64> = (0..q.n_states).map(|s| q.soft_value(s, reg)).collect();
    let na = q.n_actions;
    let mut next = q.clone();
    for s in 0..q.n_states {
        for a in 0..na {
            let i = s * na + a;
            if q.mask[i] {
                next.q[i] = rewards[i] + q.gamma * model.expect(s, a, &v);
            }
        }
    }
    next
}

/// Outcome of soft value iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ViReport {
    pub iterations: usize,
    pub residual: f64,
}

/// Soft value iteration to sup-norm accuracy `tol`.
pub fn soft_value_iteration(
    model: &TransitionModel,
    reward_fn: &dyn RewardFn,
    lmp_profile: &[f64],
    reg: &RegularizerSpec,
    gamma: f64,
    tol: f64,
) -> Result<SoftQTable, PolicyError> {
    let r = reward_fn.table(model.n_states, model.n_actions, lmp_profile);
    let init = SoftQTable::zeros(model, gamma);
    soft_value_iteration_from(model, &r, reg, init, tol).map(|(q, _)| q)
}

/// Soft value iteration from an explicit starting table with precomputed rewards.
pub fn soft_value_iteration_from(
    model: &TransitionModel,
    rewards: &[f64],
    reg: &RegularizerSpec,
    init: SoftQTable,
    tol: f64,
) -> Result<(SoftQTable, ViReport), PolicyError> {
    let gamma = init.gamma;
    check_gamma(gamma)?;
    if gamma == 0.0 {
        let q = soft_bellman(model, rewards, &init, reg);
        return Ok((
            q,
            ViReport {
                iterations: 1,
                residual: 0.0,
            },
        ));
    }
    let cap = ((10.0 * tol.ln() / gamma.ln()).ceil().max(0.0) as usize).max(100);
    let stop = tol * (1.0 - gamma) / gamma;
    let mut q = init;
    for it in 1..=cap {
        let next = soft_bellman(model, rewards, &q, reg);
        let d = next.sup_distance(&q);
        q = next;
        if d <= stop {
            return Ok((
                q,
                ViReport {
                    iterations: it,
                    residual: d,
                },
            ));
        }
    }
    Err(PolicyError::NonConvergence(cap))
}

/// Step-size rule indexed by the visit count k ≥ 1 of a (state, action) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// c / (k^power + 1).
    Polynomial { c: f64, power: f64 },
    /// 1 / k.
    Harmonic,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Polynomial { c: 0.5, power: 0.6 }
    }
}

impl LrSchedule {
    pub fn rate(&self, k: u64) -> f64 {
        match *self {
            LrSchedule::Polynomial { c, power } => c / ((k as f64).powf(power) + 1.0),
            LrSchedule::Harmonic => 1.0 / k as f64,
        }
    }
}

/// Something that can draw successor states.
pub trait TransitionSource {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn feasible(&self, s: usize) -> &[bool];
    fn sample<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize;
}

impl TransitionSource for TransitionModel {
    fn n_states(&self) -> usize {
        self.n_states
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn feasible(&self, s: usize) -> &[bool] {
        self.feasible_row(s)
    }

    fn sample<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        self.sample_with(s, a, rng.gen::<f64>())
    }
}

/// A Q table with per-pair visit counts, kept across training calls.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftQLearner {
    pub table: SoftQTable,
    pub visits: Vec<u64>,
}

impl SoftQLearner {
    pub fn new(model: &TransitionModel, gamma: f64) -> Self {
        let table = SoftQTable::zeros(model, gamma);
        let visits = vec![0; table.q.len()];
        Self { table, visits }
    }

    pub fn reset(&mut self) {
        self.table.q.iter_mut().for_each(|x| *x = 0.0);
        self.visits.iter_mut().for_each(|x| *x = 0);
    }

    /// Runs `t_train` steps along one trajectory starting in `start`;
    /// returns the final state.
    #[allow(clippy::too_many_arguments)]
    pub fn train<E: TransitionSource, R: Rng + ?Sized>(
        &mut self,
        env: &E,
        reward_fn: &dyn RewardFn,
        lmp_profile: &[f64],
        reg: &RegularizerSpec,
        t_train: usize,
        schedule: LrSchedule,
        start: usize,
        rng: &mut R,
    ) -> usize {
        let na = self.table.n_actions;
        let alpha = reg.effective_alpha();
        let mut probs = vec![0.0; na];
        let mut s = start;
        for _ in 0..t_train {
            let r = s * na..(s + 1) * na;
            softmax_row(&self.table.q[r.clone()], env.feasible(s), alpha, &mut probs);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut a = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p <= 0.0 {
                    continue;
                }
                acc += p;
                a = i;
                if u < acc {
                    break;
                }
            }
            let s2 = env.sample(s, a, rng);
            let target = reward_fn.reward(s, a, lmp_profile)
                + self.table.gamma * self.table.soft_value(s2, reg);
            let i = s * na + a;
            self.visits[i] += 1;
            let lr = schedule.rate(self.visits[i]);
            self.table.q[i] += lr * (target - self.table.q[i]);
            s = s2;
        }
        s
    }
}

/// Tabular soft Q-learning from a zero table.
#[allow(clippy::too_many_arguments)]
pub fn soft_q_learning<R: Rng + ?Sized>(
    env: &TransitionModel,
    reward_fn: &dyn RewardFn,
    lmp_profile: &[f64],
    reg: &RegularizerSpec,
    gamma: f64,
    t_train: usize,
    schedule: LrSchedule,
    start: usize,
    rng: &mut R,
) -> SoftQTable {
    let mut learner = SoftQLearner::new(env, gamma);
    learner.train(env, reward_fn, lmp_profile, reg, t_train, schedule, start, rng);
    learner.table
}

/// V^reg under `policy` at every state, by a direct linear solve.
pub fn evaluate_policy_all(
    policy: &Policy,
    model: &TransitionModel,
    reward_fn: &dyn RewardFn,
    lmp_profile: &[f64],
    reg: &RegularizerSpec,
    gamma: f64,
) -> Vec<f64> {
    let ns = model.n_states;
    let na = model.n_actions;
    let mut m = DMatrix::<f64>::identity(ns, ns);
    let mut rhs = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        let row = policy.row(s);
        rhs[s] = -reg.omega(row);
        for (a, &p) in row.iter().enumerate().take(na) {
            if p == 0.0 {
                continue;
            }
            rhs[s] += p * reward_fn.reward(s, a, lmp_profile);
            for (t, pt) in model.row(s, a) {
                m[(s, t)] -= gamma * p * pt;
            }
        }
    }
    let v = m.lu().solve(&rhs).expect("I - γP is nonsingular for γ < 1");
    v.iter().copied().collect()
}

/// V^reg(s0) under `policy`.
pub fn evaluate_policy(
    policy: &Policy,
    model: &TransitionModel,
    reward_fn: &dyn RewardFn,
    lmp_profile: &[f64],
    reg: &RegularizerSpec,
    gamma: f64,
    s0: usize,
) -> f64 {
    evaluate_policy_all(policy, model, reward_fn, lmp_profile, reg, gamma)[s0]
}

/// max over pairs of sup_s ‖Γ1(λ)(·|s) − Γ1(λ')(·|s)‖₁ / ‖λ − λ'‖₁.
pub fn estimate_gamma1_lipschitz(
    model: &TransitionModel,
    reward_fn: &dyn RewardFn,
    reg: &RegularizerSpec,
    gamma: f64,
    lambda_pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64, PolicyError> {
    let mut best: f64 = 0.0;
    for (l1, l2) in lambda_pairs {
        let dl: f64 = l1.iter().zip(l2).map(|(a, b)| (a - b).abs()).sum();
        if dl == 0.0 {
            continue;
        }
        let p1 = policy_from_q(&soft_value_iteration(model, reward_fn, l1, reg, gamma, 1e-10)?, reg);
        let p2 = policy_from_q(&soft_value_iteration(model, reward_fn, l2, reg, gamma, 1e-10)?, reg);
        best = best.max(p1.sup_l1_distance(&p2) / dl);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_state(n_actions: usize) -> TransitionModel {
        TransitionModel::from_rows(
            1,
            n_actions,
            (0..n_actions).map(|_| vec![(0, 1.0)]).collect(),
            vec![true; n_actions],
        )
    }

    fn table(q: Vec<f64>, mask: Vec<bool>) -> SoftQTable {
        SoftQTable {
            n_states: 1,
            n_actions: q.len(),
            q,
            mask,
            gamma: 0.9,
        }
    }

    #[test]
    fn equal_q_gives_uniform() {
        for alpha in [0.01, 1.0, 50.0] {
            let p = policy_from_q(&table(vec![1.0, 1.0], vec![true, true]), &RegularizerSpec::new(alpha));
            assert_eq!(p.probs, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn small_alpha_is_argmax() {
        let p = policy_from_q(&table(vec![3.0, 3.1], vec![true, true]), &RegularizerSpec::new(1e-4));
        assert!(p.probs[1] > 1.0 - 1e-12);
    }

    #[test]
    fn shift_invariance_and_masking() {
        let reg = RegularizerSpec::new(0.7);
        let a = policy_from_q(&table(vec![0.3, -1.0, 2.0], vec![true, false, true]), &reg);
        let b = policy_from_q(&table(vec![100.3, 99.0, 102.0], vec![true, false, true]), &reg);
        for (x, y) in a.probs.iter().zip(&b.probs) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(a.probs[1], 0.0);
        assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_step_problem() {
        let m = single_state(2);
        let r = TabularReward { n_actions: 2, r: vec![1.0, 2.0] };
        let reg = RegularizerSpec::new(0.5);
        let q = soft_value_iteration(&m, &r, &[], &reg, 0.0, 1e-10).unwrap();
        assert_eq!(q.q, vec![1.0, 2.0]);
        let v = 0.5 * ((1.0f64 / 0.5).exp() + (2.0f64 / 0.5).exp()).ln();
        assert!((q.soft_value(0, &reg) - v).abs() < 1e-12);
    }

    #[test]
    fn zero_reward_fixed_point() {
        let m = single_state(3);
        let r = TabularReward { n_actions: 3, r: vec![0.0; 3] };
        let reg = RegularizerSpec::new(0.2);
        let gamma = 0.8;
        let q = soft_value_iteration(&m, &r, &[], &reg, gamma, 1e-12).unwrap();
        let expect = gamma / (1.0 - gamma) * 0.2 * 3f64.ln();
        for x in &q.q {
            assert!((x - expect).abs() < 1e-10);
        }
        let pol = Policy::uniform(&m);
        let v = evaluate_policy(&pol, &m, &r, &[], &reg, gamma, 0);
        assert!((v - 0.2 * 3f64.ln() / (1.0 - gamma)).abs() < 1e-12);
    }

    #[test]
    fn evaluation_with_zero_gamma_is_regularized_reward() {
        let m = single_state(2);
        let r = TabularReward { n_actions: 2, r: vec![1.0, -1.0] };
        let reg = RegularizerSpec::new(0.3);
        let pol = Policy::from_probs(1, 2, vec![0.25, 0.75]);
        let v = evaluate_policy(&pol, &m, &r, &[], &reg, 0.0, 0);
        let expect = 0.25 - 0.75 - reg.omega(&[0.25, 0.75]);
        assert!((v - expect).abs() < 1e-14);
    }

    #[test]
    fn zero_steps_leaves_table() {
        let m = single_state(2);
        let r = TabularReward { n_actions: 2, r: vec![1.0, 0.0] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = soft_q_learning(&m, &r, &[], &RegularizerSpec::new(0.1), 0.9, 0, LrSchedule::default(), 0, &mut rng);
        assert_eq!(q, SoftQTable::zeros(&m, 0.9));
    }

    #[test]
    fn bandit_q_learning_matches_vi() {
        let m = single_state(2);
        let r = TabularReward { n_actions: 2, r: vec![1.0, 0.5] };
        let reg = RegularizerSpec::new(0.5);
        let gamma = 0.5;
        let exact = soft_value_iteration(&m, &r, &[], &reg, gamma, 1e-12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = soft_q_learning(&m, &r, &[], &reg, gamma, 100_000, LrSchedule::Harmonic, 0, &mut rng);
        assert!(q.sup_distance(&exact) < 1e-2, "{:?} vs {:?}", q.q, exact.q);
    }

    #[test]
    fn q_learning_is_deterministic() {
        let m = single_state(3);
        let r = TabularReward { n_actions: 3, r: vec![1.0, 0.5, 0.2] };
        let reg = RegularizerSpec::new(0.3);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            soft_q_learning(&m, &r, &[], &reg, 0.9, 5000, LrSchedule::default(), 0, &mut rng)
        };
        assert_eq!(run(5).q, run(5).q);
    }

    #[test]
    fn identical_price_pair_contributes_nothing() {
        let m = single_state(2);
        let r = PriceLinearReward { n_actions: 2, hour: vec![0], coef: vec![1.0, -1.0] };
        let reg = RegularizerSpec::new(1.0);
        let l = estimate_gamma1_lipschitz(&m, &r, &reg, 0.5, &[(vec![3.0], vec![3.0])]).unwrap();
        assert_eq!(l, 0.0);
    }
}
