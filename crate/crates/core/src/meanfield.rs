//! Joint state–action distributions, the transition kernel and the
//! consistency operator Γ2.

use crate::env::{efficiency_adjust, storage_transition, PopulationSpec, StateSpace};
use crate::network::DemandVector;
use crate::policy::Policy;

/// Sparse kernel P(s' | s, a) stored row-wise, row index `s * n_actions + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    pub n_states: usize,
    pub n_actions: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    probs: Vec<f64>,
    /// Action feasibility per (s, a).
    pub feasible: Vec<bool>,
}

impl TransitionModel {
    /// Builds from explicit rows; `rows[s * n_actions + a]` lists (s', p).
    pub fn from_rows(
        n_states: usize,
        n_actions: usize,
        rows: Vec<Vec<(usize, f64)>>,
        feasible: Vec<bool>,
    ) -> Self {
        assert_eq!(rows.len(), n_states * n_actions);
        assert_eq!(feasible.len(), n_states * n_actions);
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut probs = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (s, p) in row {
                assert!(s < n_states);
                if p > 0.0 {
                    cols.push(s as u32);
                    probs.push(p);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            n_states,
            n_actions,
            row_ptr,
            cols,
            probs,
            feasible,
        }
    }

    pub fn row(&self, s: usize, a: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = s * self.n_actions + a;
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[lo..hi]
            .iter()
            .zip(&self.probs[lo..hi])
            .map(|(c, p)| (*c as usize, *p))
    }

    pub fn is_feasible(&self, s: usize, a: usize) -> bool {
        self.feasible[s * self.n_actions + a]
    }

    pub fn feasible_row(&self, s: usize) -> &[bool] {
        &self.feasible[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Σ_{s'} P(s'|s,a) v(s').
    pub fn expect(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.row(s, a).map(|(t, p)| p * v[t]).sum()
    }

    /// Draws s' from P(·|s,a) with a uniform variate `u`.
    pub fn sample_with(&self, s: usize, a: usize, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last = s;
        for (t, p) in self.row(s, a) {
            acc += p;
            last = t;
            if u < acc {
                return t;
            }
        }
        last
    }

    pub fn row_sum(&self, s: usize, a: usize) -> f64 {
        self.row(s, a).map(|(_, p)| p).sum()
    }
}

/// Kernel over a grid state space: hour advances, nd' follows the next hour's
/// grid distribution, storage follows the clipped transition with
/// probability 1 − ζ and is uniform over the storage grid with probability ζ.
pub fn build_transition_model(space: &StateSpace, zeta: f64) -> TransitionModel {
    assert!((0.0..=1.0).contains(&zeta), "zeta must lie in [0, 1]");
    let ns = space.n_states();
    let na = space.n_actions();
    let ne = space.storage.len();
    let hours = space.hours();
    let mut rows = Vec::with_capacity(ns * na);
    let mut feasible = Vec::with_capacity(ns * na);
    for s in 0..ns {
        let (h, _, ei) = space.decode(s);
        let e = space.storage.levels[ei];
        let h2 = (h + 1) % hours;
        let mask = space.feasible(s);
        for (ai, &a) in space.actions.levels.iter().enumerate() {
            feasible.push(mask[ai]);
            let e_next = space.storage.snap(storage_transition(e, a));
            let mut row = Vec::new();
            for (n2, &q) in space.netload.probs[h2].iter().enumerate() {
                if q <= 0.0 {
                    continue;
                }
                for e2 in 0..ne {
                    let mut p = zeta / ne as f64;
                    if e2 == e_next {
                        p += 1.0 - zeta;
                    }
                    if p > 0.0 {
                        row.push((space.index(h2, n2, e2), q * p));
                    }
                }
            }
            rows.push(row);
        }
    }
    TransitionModel::from_rows(ns, na, rows, feasible)
}

/// Distribution over (state, action) pairs, flat index `s * n_actions + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanField {
    pub n_states: usize,
    pub n_actions: usize,
    pub dist: Vec<f64>,
}

impl MeanField {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let m = (n_states * n_actions) as f64;
        Self {
            n_states,
            n_actions,
            dist: vec![1.0 / m; n_states * n_actions],
        }
    }

    pub fn point(n_states: usize, n_actions: usize, s: usize, a: usize) -> Self {
        let mut dist = vec![0.0; n_states * n_actions];
        dist[s * n_actions + a] = 1.0;
        Self {
            n_states,
            n_actions,
            dist,
        }
    }

    /// ℒ(s, a) = μ(s) π(a|s).
    pub fn from_states(state_dist: &[f64], policy: &Policy) -> Self {
        let na = policy.n_actions;
        let mut dist = vec![0.0; state_dist.len() * na];
        for (s, m) in state_dist.iter().enumerate() {
            for a in 0..na {
                dist[s * na + a] = m * policy.prob(s, a);
            }
        }
        Self {
            n_states: state_dist.len(),
            n_actions: na,
            dist,
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.dist[s * self.n_actions + a]
    }

    pub fn total(&self) -> f64 {
        self.dist.iter().sum()
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        self.dist
            .chunks(self.n_actions)
            .map(|c| c.iter().sum())
            .collect()
    }

    pub fn l1_distance(&self, other: &MeanField) -> f64 {
        self.dist
            .iter()
            .zip(&other.dist)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// Which successor kernel Γ2 composes with the new action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Gamma2Variant {
    /// ℒ'(s',a') = ζ/(|S||A|) + (1−ζ) Σ ℒ(s,a) P(s'|s,a') π(a'|s).
    #[default]
    Literal,
    /// ℒ'(s',a') = ζ/(|S||A|) + (1−ζ) Σ ℒ(s,a) P(s'|s,a) π(a'|s').
    OldAction,
}

/// One application of Γ2.
pub fn consistency_update(
    mf: &MeanField,
    policy: &Policy,
    model: &TransitionModel,
    zeta: f64,
    variant: Gamma2Variant,
) -> MeanField {
    let ns = model.n_states;
    let na = model.n_actions;
    let floor = zeta / (ns * na) as f64;
    let mut out = vec![0.0; ns * na];
    match variant {
        Gamma2Variant::Literal => {
            let marg = mf.state_marginal();
            for (s, &m) in marg.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                for a2 in 0..na {
                    let w = m * policy.prob(s, a2);
                    if w == 0.0 {
                        continue;
                    }
                    for (t, p) in model.row(s, a2) {
                        out[t * na + a2] += w * p;
                    }
                }
            }
        }
        Gamma2Variant::OldAction => {
            let mut next = vec![0.0; ns];
            for s in 0..ns {
                for a in 0..na {
                    let w = mf.get(s, a);
                    if w == 0.0 {
                        continue;
                    }
                    for (t, p) in model.row(s, a) {
                        next[t] += w * p;
                    }
                }
            }
            for (t, m) in next.iter().enumerate() {
                for a2 in 0..na {
                    out[t * na + a2] = m * policy.prob(t, a2);
                }
            }
        }
    }
    for x in out.iter_mut() {
        *x = floor + (1.0 - zeta) * *x;
    }
    MeanField {
        n_states: ns,
        n_actions: na,
        dist: out,
    }
}

/// Φ(e(s), a, η) + nd(s) for every (s, a).
pub fn unit_demand(space: &StateSpace, eta: f64) -> Vec<f64> {
    let na = space.n_actions();
    let mut out = Vec::with_capacity(space.n_states() * na);
    for s in 0..space.n_states() {
        let st = space.state(s);
        for &a in &space.actions.levels {
            out.push(efficiency_adjust(st.e, a, eta) + st.nd);
        }
    }
    out
}

/// Prosumer bid of one bus in MWh: Ē Σ ℒ(s,a)(Φ + nd).
pub fn prosumer_demand(mf: &MeanField, unit: &[f64], total_capacity: f64) -> f64 {
    total_capacity * mf.dist.iter().zip(unit).map(|(m, u)| m * u).sum::<f64>()
}

/// Bus demand vector from per-bus mean fields plus consumer ratio sums.
pub fn meanfield_to_demand(
    mfs: &[MeanField],
    spaces: &[&StateSpace],
    pops: &[PopulationSpec],
    consumer_draws: &[f64],
) -> DemandVector {
    DemandVector(
        mfs.iter()
            .zip(spaces)
            .zip(pops)
            .zip(consumer_draws)
            .map(|(((mf, sp), pop), c)| {
                let unit = unit_demand(sp, pop.efficiency);
                prosumer_demand(mf, &unit, pop.total_capacity) + pop.consumer_ref_capacity * c
            })
            .collect(),
    )
}

/// Capacity-weighted storage level.
pub fn aggregate_storage(levels: &[f64], capacities: &[f64]) -> f64 {
    let total: f64 = capacities.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    levels.iter().zip(capacities).map(|(e, c)| e * c).sum::<f64>() / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ActionGrid, NetLoadGrid, StorageGrid, Triangular};

    fn space(noise: Triangular) -> StateSpace {
        StateSpace::new(
            StorageGrid::uniform(5).unwrap(),
            NetLoadGrid::new(&[0.2, -0.1, 0.3], noise, 3).unwrap(),
            ActionGrid::uniform(5).unwrap(),
        )
    }

    #[test]
    fn rows_are_stochastic() {
        let sp = space(Triangular::new(0.8, 1.2, 1.0).unwrap());
        let m = build_transition_model(&sp, 0.3);
        for s in 0..m.n_states {
            for a in 0..m.n_actions {
                assert!((m.row_sum(s, a) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_chain_is_one_hot() {
        let sp = space(Triangular::degenerate(1.0));
        let m = build_transition_model(&sp, 0.0);
        for s in 0..m.n_states {
            for a in 0..m.n_actions {
                let row: Vec<_> = m.row(s, a).collect();
                assert_eq!(row.len(), 1);
                assert_eq!(row[0].1, 1.0);
            }
        }
        // e = 0.5, a = +0.5 from hour 2 wraps to hour 0 with e = 1
        let s = sp.index(2, 0, 2);
        let (t, _) = m.row(s, 3).next().unwrap();
        assert_eq!(sp.decode(t), (0, 0, 4));
    }

    #[test]
    fn full_regeneration_ignores_action() {
        let sp = space(Triangular::degenerate(1.0));
        let m = build_transition_model(&sp, 1.0);
        let s = sp.index(0, 0, 1);
        let rows: Vec<Vec<_>> = (0..m.n_actions).map(|a| m.row(s, a).collect()).collect();
        for r in &rows {
            assert_eq!(r, &rows[0]);
            assert_eq!(r.len(), 5);
            for (_, p) in r {
                assert!((p - 0.2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gamma2_full_noise_is_uniform() {
        let sp = space(Triangular::new(0.8, 1.2, 1.0).unwrap());
        let m = build_transition_model(&sp, 0.2);
        let pol = Policy::uniform(&m);
        let mf = MeanField::point(m.n_states, m.n_actions, 7, 2);
        let out = consistency_update(&mf, &pol, &m, 1.0, Gamma2Variant::Literal);
        let u = 1.0 / (m.n_states * m.n_actions) as f64;
        assert!(out.dist.iter().all(|x| (x - u).abs() < 1e-15));
    }

    #[test]
    fn gamma2_point_mass_propagates() {
        let sp = space(Triangular::degenerate(1.0));
        let m = build_transition_model(&sp, 0.0);
        let na = m.n_actions;
        let s0 = sp.index(0, 0, 2);
        let a1 = 3;
        let mut probs = vec![0.0; m.n_states * na];
        for s in 0..m.n_states {
            let a = if m.is_feasible(s, a1) { a1 } else { 2 };
            probs[s * na + a] = 1.0;
        }
        let pol = Policy::from_probs(m.n_states, na, probs);
        let mf = MeanField::point(m.n_states, na, s0, 0);
        let out = consistency_update(&mf, &pol, &m, 0.0, Gamma2Variant::Literal);
        let (s1, _) = m.row(s0, a1).next().unwrap();
        assert_eq!(out, MeanField::point(m.n_states, na, s1, a1));
    }

    #[test]
    fn demand_from_point_mass() {
        let sp = StateSpace::new(
            StorageGrid::uniform(3).unwrap(),
            NetLoadGrid::new(&[0.2], Triangular::degenerate(1.0), 1).unwrap(),
            ActionGrid::uniform(3).unwrap(),
        );
        let pop = PopulationSpec {
            m_prosumers: 1,
            m_consumers: 0,
            type_share: vec![1.0],
            type_theta: vec![1.0],
            total_capacity: 100.0,
            efficiency: 0.9,
            consumer_ref_capacity: 0.0,
        };
        let s = sp.index(0, 0, 1);
        let mf = MeanField::point(sp.n_states(), 3, s, 1);
        let d = meanfield_to_demand(&[mf], &[&sp], std::slice::from_ref(&pop), &[0.0]);
        assert!((d.0[0] - 20.0).abs() < 1e-12);

        let zero = StateSpace::new(
            StorageGrid::uniform(3).unwrap(),
            NetLoadGrid::new(&[0.0], Triangular::degenerate(1.0), 1).unwrap(),
            ActionGrid::uniform(3).unwrap(),
        );
        let mf = MeanField::point(zero.n_states(), 3, 1, 1);
        let mut pop2 = pop;
        pop2.consumer_ref_capacity = 0.01;
        let d = meanfield_to_demand(&[mf], &[&zero], &[pop2], &[150.0]);
        assert!((d.0[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn storage_aggregation() {
        assert!((aggregate_storage(&[0.5, 0.5, 0.5], &[1.0, 2.0, 3.0]) - 0.5).abs() < 1e-15);
        assert!((aggregate_storage(&[0.0, 1.0], &[0.01, 0.03]) - 0.75).abs() < 1e-12);
        assert!((aggregate_storage(&[0.3], &[0.02]) - 0.3).abs() < 1e-15);
    }
}
