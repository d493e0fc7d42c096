//! Random feasible dispatch instances for fuzzing.

use nalgebra::DMatrix;
use rand::Rng;

use super::{DemandVector, GeneratorSpec, LineSpec, Network};

/// PTDF rows for `lines = [(from, to, susceptance)]` on a connected graph,
/// with bus 0 as the slack.
pub fn ptdf_matrix(n_buses: usize, lines: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
    if n_buses <= 1 {
        return lines.iter().map(|_| vec![0.0; n_buses]).collect();
    }
    let m = n_buses - 1;
    let mut b = DMatrix::<f64>::zeros(m, m);
    for &(i, j, s) in lines {
        for (x, y, v) in [(i, i, s), (j, j, s), (i, j, -s), (j, i, -s)] {
            if x > 0 && y > 0 {
                b[(x - 1, y - 1)] += v;
            }
        }
    }
    let x = b.try_inverse().expect("connected network");
    let angle = |bus: usize, inj: usize| {
        if bus == 0 || inj == 0 {
            0.0
        } else {
            x[(bus - 1, inj - 1)]
        }
    };
    lines
        .iter()
        .map(|&(i, j, s)| {
            (0..n_buses)
                .map(|n| s * (angle(i, n) - angle(j, n)))
                .collect()
        })
        .collect()
}

/// Draws a connected network with a feasible demand vector. Line limits are
/// set from the flows of a random feasible dispatch, so some bind.
pub fn random_instance<R: Rng>(
    rng: &mut R,
    max_buses: usize,
    max_gens: usize,
    max_lines: usize,
) -> (Network, DemandVector) {
    let n = rng.gen_range(1..=max_buses.max(1));
    let max_lines = max_lines.max(n - 1);
    let n_lines = if n == 1 {
        0
    } else {
        rng.gen_range(n - 1..=max_lines)
    };
    let mut topo = Vec::with_capacity(n_lines);
    for k in 1..n {
        topo.push((rng.gen_range(0..k), k, rng.gen_range(1.0..10.0)));
    }
    while topo.len() < n_lines {
        let i = rng.gen_range(0..n);
        let j = (i + rng.gen_range(1..n)) % n;
        topo.push((i, j, rng.gen_range(1.0..10.0)));
    }
    let ptdf = ptdf_matrix(n, &topo);

    let n_gens = rng.gen_range(1..=max_gens.max(1));
    let gens: Vec<GeneratorSpec> = (0..n_gens)
        .map(|id| GeneratorSpec {
            id,
            bus: rng.gen_range(0..n),
            cost_a: rng.gen_range(0.01..2.0),
            cost_b: rng.gen_range(5.0..60.0),
            p_max: rng.gen_range(5.0..50.0),
        })
        .collect();
    let cap: f64 = gens.iter().map(|g| g.p_max).sum();
    let total = rng.gen_range(0.1..0.8) * cap;
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let ws: f64 = w.iter().sum();
    let demand = DemandVector(w.iter().map(|x| total * x / ws).collect());

    // A feasible dispatch: every unit at the same fraction of capacity.
    let frac = total / cap;
    let mut inj = demand.0.iter().map(|d| -d).collect::<Vec<_>>();
    for g in &gens {
        inj[g.bus] += frac * g.p_max;
    }
    let lines = ptdf
        .into_iter()
        .enumerate()
        .map(|(id, row)| {
            let flow: f64 = row.iter().zip(&inj).map(|(p, x)| p * x).sum();
            let f_max = if rng.gen_bool(0.3) {
                f64::INFINITY
            } else {
                flow.abs() * rng.gen_range(1.05..2.0) + 0.05
            };
            LineSpec { id, ptdf: row, f_max }
        })
        .collect();
    (Network::new(n, lines, gens), demand)
}
