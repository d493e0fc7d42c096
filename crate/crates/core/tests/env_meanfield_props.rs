mod common;

use common::{random_mean_field, random_policy, random_simplex, reg, rng, small_model};
use gridmf::env::{
    action_mask, regularized_reward, reward, storage_transition, ActionGrid, AgentState, PopulationSpec,
};
use gridmf::meanfield::{consistency_update, Gamma2Variant, MeanField};
use gridmf::policy::{policy_from_q, SoftQTable};
use proptest::prelude::*;
use rand::Rng;

fn pop(total: f64) -> PopulationSpec {
    PopulationSpec {
        m_prosumers: 650,
        m_consumers: 2000,
        type_share: vec![500.0 / 650.0, 100.0 / 650.0, 50.0 / 650.0],
        type_theta: vec![1.0, 2.0, 3.0],
        total_capacity: total,
        efficiency: 0.95,
        consumer_ref_capacity: 0.01,
    }
}

proptest! {
    #[test]
    fn storage_stays_in_unit_interval(e0 in 0.0f64..=1.0, acts in prop::collection::vec(-3.0f64..3.0, 1..50)) {
        let mut e = e0;
        for a in acts {
            e = storage_transition(e, a);
            prop_assert!((0.0..=1.0).contains(&e));
        }
    }

    #[test]
    fn masked_actions_get_zero_probability(e_idx in 0usize..5, qs in prop::collection::vec(-5.0f64..5.0, 15), alpha in 0.02f64..10.0) {
        let (space, model) = small_model(0.1);
        let s = space.index(1, 0, e_idx);
        let mut table = SoftQTable::zeros(&model, 0.9);
        for a in 0..3 {
            table.q[s * 3 + a] = qs[a];
        }
        let p = policy_from_q(&table, &reg(alpha));
        let mask = action_mask(space.storage.levels[e_idx], &space.actions);
        let row = p.row(s);
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for a in 0..3 {
            if mask[a] {
                prop_assert!(row[a] > 0.0);
            } else {
                prop_assert_eq!(row[a], 0.0);
            }
        }
        let mut r = rng(e_idx as u64);
        for _ in 0..200 {
            let a = p.sample_with(s, r.gen());
            prop_assert!(mask[a]);
        }
    }

    #[test]
    fn reward_is_linear_in_price_and_capacity(
        e in 0.0f64..=1.0, a in -1.0f64..1.0, nd in -0.5f64..0.5, lam in 1.0f64..80.0, k in 0.1f64..10.0
    ) {
        let s = AgentState { e, nd, hour: 0 };
        let base = reward(&s, a, &[lam], &pop(8.5));
        let scaled_price = reward(&s, a, &[k * lam], &pop(8.5));
        let scaled_cap = reward(&s, a, &[lam], &pop(k * 8.5));
        prop_assert!((scaled_price - k * base).abs() <= 1e-9 * (1.0 + base.abs() * k));
        prop_assert!((scaled_cap - k * base).abs() <= 1e-9 * (1.0 + base.abs() * k));
    }

    #[test]
    fn regularized_reward_is_strongly_concave(
        e in 0.05f64..0.95, nd in -0.3f64..0.3, lam in 5.0f64..60.0, alpha in 0.05f64..5.0, seed in any::<u64>()
    ) {
        let grid = ActionGrid::uniform(9).unwrap();
        let mask = action_mask(e, &grid);
        let actions: Vec<f64> = grid.levels.iter().zip(&mask).filter(|(_, m)| **m).map(|(a, _)| *a).collect();
        let mut r = rng(seed);
        let x = random_simplex(&mut r, actions.len());
        let y = random_simplex(&mut r, actions.len());
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let s = AgentState { e, nd, hour: 0 };
        let spec = reg(alpha);
        let p = pop(8.5);
        let f = |d: &[f64]| regularized_reward(&s, &actions, d, &[lam], &p, &spec);
        let dist2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        let lhs = f(&mid);
        let rhs = 0.5 * (f(&x) + f(&y)) + spec.rho / 8.0 * dist2;
        prop_assert!(lhs >= rhs - 1e-9, "{lhs} < {rhs}");
    }
}

#[test]
fn section_six_type_capacities() {
    let p = pop(8.5);
    assert_eq!(p.type_counts(), vec![500, 100, 50]);
    for (k, want) in [0.010, 0.020, 0.030].iter().enumerate() {
        assert!((p.type_capacity(k) - want).abs() < 1e-15, "{k}: {}", p.type_capacity(k));
    }
}

fn gamma2_ratios(zeta: f64, variant: Gamma2Variant, pairs: usize) -> (f64, f64) {
    let (_, model) = small_model(zeta);
    let (ns, na) = (model.n_states, model.n_actions);
    let mut r = rng((zeta * 1000.0) as u64);
    let mut worst_mf: f64 = 0.0;
    let mut worst_pi: f64 = 0.0;
    for _ in 0..pairs {
        let pi = random_policy(&mut r, &model);
        let m1 = random_mean_field(&mut r, ns, na);
        let m2 = random_mean_field(&mut r, ns, na);
        let a = consistency_update(&m1, &pi, &model, zeta, variant);
        let b = consistency_update(&m2, &pi, &model, zeta, variant);
        worst_mf = worst_mf.max(a.l1_distance(&b) / m1.l1_distance(&m2));

        let pi2 = random_policy(&mut r, &model);
        let c = consistency_update(&m1, &pi2, &model, zeta, variant);
        let d = pi.sup_l1_distance(&pi2);
        worst_pi = worst_pi.max(a.l1_distance(&c) / d);
    }
    (worst_mf, worst_pi)
}

#[test]
fn gamma2_lipschitz_bounds() {
    for zeta in [0.05, 0.5, 0.9] {
        for variant in [Gamma2Variant::Literal, Gamma2Variant::OldAction] {
            let (mf, pi) = gamma2_ratios(zeta, variant, 1000);
            assert!(mf <= 1.0 - zeta + 1e-9, "{zeta} {variant:?}: {mf}");
            assert!(pi <= 1.0 - zeta + 1e-9, "{zeta} {variant:?}: {pi}");
        }
    }
}

#[test]
fn gamma2_stays_on_simplex_with_floor() {
    for zeta in [0.0, 0.05, 0.5, 1.0] {
        let (_, model) = small_model(zeta);
        let (ns, na) = (model.n_states, model.n_actions);
        let mut r = rng(3);
        for variant in [Gamma2Variant::Literal, Gamma2Variant::OldAction] {
            for _ in 0..50 {
                let pi = random_policy(&mut r, &model);
                let m = random_mean_field(&mut r, ns, na);
                let out = consistency_update(&m, &pi, &model, zeta, variant);
                assert!((out.total() - 1.0).abs() <= 1e-12);
                let floor = zeta / (ns * na) as f64;
                assert!(out.dist.iter().all(|x| *x >= floor - 1e-15));
            }
        }
    }
}

#[test]
fn gamma2_iterates_converge_geometrically() {
    let zeta = 0.2;
    let (_, model) = small_model(zeta);
    let (ns, na) = (model.n_states, model.n_actions);
    let mut r = rng(9);
    let pi = random_policy(&mut r, &model);
    let mut m = MeanField::point(ns, na, 0, 1);
    let mut prev = f64::INFINITY;
    for _ in 0..60 {
        let next = consistency_update(&m, &pi, &model, zeta, Gamma2Variant::Literal);
        let d = next.l1_distance(&m);
        if prev > 1e-13 {
            assert!(d <= (1.0 - zeta) * prev + 1e-12, "{d} vs {prev}");
        }
        prev = d;
        m = next;
    }
    assert!(prev < 1e-5);
}
