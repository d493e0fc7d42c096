#![allow(dead_code)]

use gridmf::beliefs::BeliefVector;
use gridmf::env::{ActionGrid, TimeIndex, NetLoadGrid, StateSpace, StorageGrid, Triangular};
use gridmf::meanfield::{build_transition_model, MeanField, TransitionModel};
use gridmf::network::random::random_instance;
use gridmf::network::{solve_ed, DemandVector, GeneratorSpec, LineSpec, Network};
use gridmf::policy::{Policy, RegularizerSpec, TabularReward};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fuzz_instance(seed: u64) -> (Network, DemandVector) {
    random_instance(&mut rng(seed), 6, 8, 7)
}

/// True when the binding set is the same at d and at d ± h on `bus`.
pub fn stable_active_set(net: &Network, d: &DemandVector, bus: usize, h: f64) -> bool {
    let base = match solve_ed(net, d) {
        Ok(s) => s.active_set,
        Err(_) => return false,
    };
    [h, -h].iter().all(|dh| {
        let mut x = d.clone();
        x.0[bus] += dh;
        matches!(solve_ed(net, &x), Ok(s) if s.active_set == base)
    })
}

pub fn gen(id: usize, bus: usize, a: f64, b: f64, p_max: f64) -> GeneratorSpec {
    GeneratorSpec {
        id,
        bus,
        cost_a: a,
        cost_b: b,
        p_max,
    }
}

/// Two units with the same intercept at buses 0 and 2; the 0–1 line binds
/// under heavy load at bus 1.
pub fn congested_three_bus() -> Network {
    let lines = vec![
        LineSpec {
            id: 0,
            ptdf: vec![0.0, -2.0 / 3.0, -1.0 / 3.0],
            f_max: 40.0,
        },
        LineSpec {
            id: 1,
            ptdf: vec![0.0, 1.0 / 3.0, -1.0 / 3.0],
            f_max: f64::INFINITY,
        },
        LineSpec {
            id: 2,
            ptdf: vec![0.0, -1.0 / 3.0, -2.0 / 3.0],
            f_max: f64::INFINITY,
        },
    ];
    Network::new(
        3,
        lines,
        vec![gen(0, 0, 0.02, 20.0, 200.0), gen(1, 2, 0.05, 20.0, 200.0)],
    )
}

/// A small bus state space: 2 hours, 5 storage levels, 3 actions, 2 net-load points.
pub fn small_space() -> StateSpace {
    let nl = NetLoadGrid::new(&[0.1, -0.1], Triangular::new(0.8, 1.2, 1.0).unwrap(), 2).unwrap();
    StateSpace::new(
        StorageGrid::uniform(5).unwrap(),
        nl,
        ActionGrid::uniform(3).unwrap(),
    )
}

pub fn small_model(zeta: f64) -> (StateSpace, TransitionModel) {
    let space = small_space();
    let model = build_transition_model(&space, zeta);
    (space, model)
}

pub fn random_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

pub fn random_mean_field<R: Rng>(rng: &mut R, ns: usize, na: usize) -> MeanField {
    let mut m = MeanField::uniform(ns, na);
    m.dist = random_simplex(rng, ns * na);
    m
}

/// Random policy supported on the feasible actions of `model`.
pub fn random_policy<R: Rng>(rng: &mut R, model: &TransitionModel) -> Policy {
    let (ns, na) = (model.n_states, model.n_actions);
    let mut probs = vec![0.0; ns * na];
    for s in 0..ns {
        let mask = model.feasible_row(s);
        let k = mask.iter().filter(|m| **m).count();
        let w = random_simplex(rng, k);
        let mut it = w.into_iter();
        for a in 0..na {
            if mask[a] {
                probs[s * na + a] = it.next().unwrap();
            }
        }
    }
    Policy::from_probs(ns, na, probs)
}

/// Two states, two actions; action 0 tends to stay, action 1 tends to switch.
pub fn two_by_two() -> (TransitionModel, TabularReward) {
    let rows = vec![
        vec![(0, 0.9), (1, 0.1)],
        vec![(0, 0.2), (1, 0.8)],
        vec![(0, 0.3), (1, 0.7)],
        vec![(0, 0.6), (1, 0.4)],
    ];
    let model = TransitionModel::from_rows(2, 2, rows, vec![true; 4]);
    let reward = TabularReward {
        n_actions: 2,
        r: vec![1.0, 0.0, -0.5, 2.0],
    };
    (model, reward)
}

/// Regularized values of the 2×2 problem under π(a0|s0) = p, π(a0|s1) = q,
/// solved by Cramer's rule.
pub fn two_by_two_values(p: f64, q: f64, gamma: f64, alpha: f64) -> (f64, f64) {
    let (model, reward) = two_by_two();
    let ent = |x: f64| {
        let t = |y: f64| if y > 0.0 { y * y.ln() } else { 0.0 };
        t(x) + t(1.0 - x)
    };
    let pi = [[p, 1.0 - p], [q, 1.0 - q]];
    let mut pm = [[0.0; 2]; 2];
    let mut r = [0.0; 2];
    for s in 0..2 {
        for a in 0..2 {
            r[s] += pi[s][a] * reward.r[s * 2 + a];
            for (t, pt) in model.row(s, a) {
                pm[s][t] += pi[s][a] * pt;
            }
        }
    }
    r[0] -= alpha * ent(p);
    r[1] -= alpha * ent(q);
    let a11 = 1.0 - gamma * pm[0][0];
    let a12 = -gamma * pm[0][1];
    let a21 = -gamma * pm[1][0];
    let a22 = 1.0 - gamma * pm[1][1];
    let det = a11 * a22 - a12 * a21;
    ((r[0] * a22 - a12 * r[1]) / det, (a11 * r[1] - a21 * r[0]) / det)
}

/// Best values over the policy grid {0, step, …, 1}², one state at a time.
pub fn two_by_two_brute_force(gamma: f64, alpha: f64, step: f64) -> (f64, f64) {
    let n = (1.0 / step).round() as usize;
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..=n {
        for j in 0..=n {
            let v = two_by_two_values(i as f64 * step, j as f64 * step, gamma, alpha);
            best.0 = best.0.max(v.0);
            best.1 = best.1.max(v.1);
        }
    }
    best
}

pub fn reg(alpha: f64) -> RegularizerSpec {
    RegularizerSpec::new(alpha)
}

/// Feeds `days` of i.i.d. prices (per-hour mean ± half_width, uniform) and
/// returns the final belief and the means.
pub fn run_beliefs(seed: u64, days: usize, delta: f64, half_width: f64) -> (Vec<f64>, Vec<f64>) {
    let hours = 12;
    let mut r = rng(seed);
    let means: Vec<f64> = (0..hours).map(|_| r.gen_range(15.0..80.0)).collect();
    let mut b = BeliefVector::new(vec![0.0; hours], delta).unwrap();
    for t in 0..days * hours {
        let time = TimeIndex::new(t, hours);
        let p = means[time.hour()] + r.gen_range(-half_width..half_width);
        b.update(time, p);
    }
    (b.values, means)
}
