mod common;

use common::{random_policy, reg, rng, small_model, small_space, two_by_two, two_by_two_brute_force};
use gridmf::env::PopulationSpec;
use gridmf::policy::{
    estimate_gamma1_lipschitz, evaluate_policy_all, policy_from_q, soft_bellman, soft_value_iteration,
    soft_value_iteration_from, PriceLinearReward, SoftQTable,
};
use proptest::prelude::*;
use rand::Rng;

fn bus_pop() -> PopulationSpec {
    PopulationSpec {
        m_prosumers: 65,
        m_consumers: 200,
        type_share: vec![1.0],
        type_theta: vec![1.0],
        total_capacity: 0.85,
        efficiency: 0.95,
        consumer_ref_capacity: 0.01,
    }
}

fn random_table<R: Rng>(r: &mut R, template: &SoftQTable, scale: f64) -> SoftQTable {
    let mut t = template.clone();
    for (q, m) in t.q.iter_mut().zip(&template.mask) {
        if *m {
            *q = r.gen_range(-scale..scale);
        }
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn soft_bellman_contracts(seed in any::<u64>(), gamma in 0.1f64..0.99, alpha in 0.05f64..5.0) {
        let (_, model) = small_model(0.1);
        let mut r = rng(seed);
        let rewards: Vec<f64> = (0..model.n_states * model.n_actions).map(|_| r.gen_range(-3.0..3.0)).collect();
        let spec = reg(alpha);
        let zero = SoftQTable::zeros(&model, gamma);
        let mut q = random_table(&mut r, &zero, 20.0);
        let mut prev = f64::INFINITY;
        for _ in 0..30 {
            let next = soft_bellman(&model, &rewards, &q, &spec);
            let d = next.sup_distance(&q);
            if prev > 1e-12 {
                prop_assert!(d <= (gamma + 1e-10) * prev + 1e-12, "{d} vs {prev}");
            }
            prev = d;
            q = next;
        }
    }

    #[test]
    fn value_bound_in_prices(seed in any::<u64>(), gamma in 0.1f64..0.95) {
        let space = small_space();
        let (_, model) = small_model(0.1);
        let reward = PriceLinearReward::from_space(&space, &bus_pop());
        let mut r = rng(seed);
        let l1: Vec<f64> = (0..2).map(|_| r.gen_range(10.0..60.0)).collect();
        let l2: Vec<f64> = l1.iter().map(|x| x + r.gen_range(-5.0..5.0)).collect();
        let spec = reg(0.5);
        let q1 = soft_value_iteration(&model, &reward, &l1, &spec, gamma, 1e-11).unwrap();
        let q2 = soft_value_iteration(&model, &reward, &l2, &spec, gamma, 1e-11).unwrap();
        let dl: f64 = l1.iter().zip(&l2).map(|(a, b)| (a - b).abs()).sum();
        let bound = reward.price_lipschitz() / (1.0 - gamma) * dl;
        prop_assert!(q1.sup_distance(&q2) <= bound + 1e-8, "{} > {bound}", q1.sup_distance(&q2));
    }

    #[test]
    fn soft_optimum_dominates(seed in any::<u64>(), gamma in 0.0f64..0.95, alpha in 0.05f64..3.0) {
        let space = small_space();
        let (_, model) = small_model(0.2);
        let reward = PriceLinearReward::from_space(&space, &bus_pop());
        let lmp = [25.0, 40.0];
        let spec = reg(alpha);
        let best = policy_from_q(&soft_value_iteration(&model, &reward, &lmp, &spec, gamma, 1e-11).unwrap(), &spec);
        let v_best = evaluate_policy_all(&best, &model, &reward, &lmp, &spec, gamma);
        let mut r = rng(seed);
        for _ in 0..5 {
            let other = random_policy(&mut r, &model);
            let v = evaluate_policy_all(&other, &model, &reward, &lmp, &spec, gamma);
            for (a, b) in v_best.iter().zip(&v) {
                prop_assert!(*a >= b - 1e-8, "{a} < {b}");
            }
        }
    }
}

#[test]
fn two_by_two_matches_policy_grid() {
    let (model, reward) = two_by_two();
    let mut r = rng(21);
    for _ in 0..3 {
        let gamma = r.gen_range(0.3..0.9);
        let alpha = r.gen_range(0.2..1.5);
        let spec = reg(alpha);
        let q = soft_value_iteration(&model, &reward, &[], &spec, gamma, 1e-12).unwrap();
        let grid = two_by_two_brute_force(gamma, alpha, 1e-3);
        for s in 0..2 {
            let v = q.soft_value(s, &spec);
            let g = if s == 0 { grid.0 } else { grid.1 };
            assert!((v - g).abs() <= 1e-4, "state {s}: {v} vs {g}");
        }
    }
}

#[test]
fn random_starts_reach_one_fixed_point() {
    let (_, model) = small_model(0.1);
    let mut r = rng(5);
    let rewards: Vec<f64> = (0..model.n_states * model.n_actions).map(|_| r.gen_range(-2.0..2.0)).collect();
    let spec = reg(0.3);
    let zero = SoftQTable::zeros(&model, 0.9);
    let tables: Vec<SoftQTable> = (0..10)
        .map(|_| {
            let init = random_table(&mut r, &zero, 100.0);
            soft_value_iteration_from(&model, &rewards, &spec, init, 1e-9).unwrap().0
        })
        .collect();
    for t in &tables[1..] {
        assert!(t.sup_distance(&tables[0]) <= 1e-6);
    }
}

#[test]
fn doubling_alpha_roughly_halves_l1() {
    let space = small_space();
    let (_, model) = small_model(0.1);
    let reward = PriceLinearReward::from_space(&space, &bus_pop());
    let mut r = rng(8);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..10)
        .map(|_| {
            let a: Vec<f64> = (0..2).map(|_| r.gen_range(20.0..40.0)).collect();
            let b = a.iter().map(|x| x + r.gen_range(-0.5..0.5)).collect();
            (a, b)
        })
        .collect();
    let l_small = estimate_gamma1_lipschitz(&model, &reward, &reg(2.0), 0.9, &pairs).unwrap();
    let l_big = estimate_gamma1_lipschitz(&model, &reward, &reg(4.0), 0.9, &pairs).unwrap();
    let ratio = l_big / l_small;
    assert!((0.35..=0.65).contains(&ratio), "{ratio}");
}

#[test]
fn one_hour_shift_gives_finite_ratio() {
    let space = small_space();
    let (_, model) = small_model(0.1);
    let reward = PriceLinearReward::from_space(&space, &bus_pop());
    let pairs = vec![(vec![30.0, 30.0], vec![31.0, 30.0])];
    let l = estimate_gamma1_lipschitz(&model, &reward, &reg(1.0), 0.9, &pairs).unwrap();
    assert!(l.is_finite() && l > 0.0);
}

