//! Dense dual active-set solver for strictly convex QPs with a diagonal Hessian.
//!
//! Solves
//!
//! ```text
//! min ½ xᵀ diag(h) x + cᵀx   s.t.  E x = e,  N x ≥ b
//! ```
//!
//! with the Goldfarb–Idnani dual method: start from the equality-constrained
//! minimizer, then repeatedly add the most violated inequality, dropping
//! working constraints whose multipliers would turn negative. Each
//! equality-constrained subproblem is solved from scratch through the Schur
//! complement `A diag(h)⁻¹ Aᵀ`, which is symmetric positive definite while the
//! working set is linearly independent, and factored by Cholesky.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian_diag: Vec<f64>,
    pub linear: Vec<f64>,
    pub eq_rows: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    /// Rows of `N x ≥ b`.
    pub ineq_rows: Vec<Vec<f64>>,
    pub ineq_rhs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multipliers of the equality rows (free sign); `h∘x + c = Eᵀy + Nᵀu`.
    pub eq_multipliers: Vec<f64>,
    /// Multipliers of the inequality rows, all ≥ 0, zero when inactive.
    pub ineq_multipliers: Vec<f64>,
    /// Inequalities in the final working set, ascending.
    pub active: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    /// No point satisfies the constraints; `constraint` is the inequality that
    /// could not be added to a linearly dependent working set.
    #[error("infeasible: inequality {constraint} cannot be satisfied together with the working set {working:?}")]
    Infeasible {
        constraint: usize,
        working: Vec<usize>,
    },
    #[error("active-set iteration cap of {0} reached")]
    NonConvergence(usize),
    #[error("working set became linearly dependent")]
    Singular,
}

/// Relative feasibility tolerance used when scanning for violated rows.
const FEAS_TOL: f64 = 1e-11;

struct Factor {
    /// Working matrix `A` (rows = eq rows then active inequalities).
    a: DMatrix<f64>,
    s_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    s: DMatrix<f64>,
}

impl QpProblem {
    pub fn n_vars(&self) -> usize {
        self.hessian_diag.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.hessian_diag)
            .zip(&self.linear)
            .map(|((xi, h), c)| 0.5 * h * xi * xi + c * xi)
            .sum()
    }

    fn row(&self, k: usize) -> &[f64] {
        let n_eq = self.eq_rows.len();
        if k < n_eq {
            &self.eq_rows[k]
        } else {
            &self.ineq_rows[k - n_eq]
        }
    }

    fn factor(&self, working: &[usize]) -> Result<Factor, QpError> {
        let n = self.n_vars();
        let n_eq = self.eq_rows.len();
        let m = n_eq + working.len();
        let mut a = DMatrix::zeros(m, n);
        for r in 0..m {
            let src = if r < n_eq {
                self.row(r)
            } else {
                self.row(n_eq + working[r - n_eq])
            };
            for (j, v) in src.iter().enumerate() {
                a[(r, j)] = *v;
            }
        }
        let mut s = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let v: f64 = (0..n)
                    .map(|k| a[(i, k)] * a[(j, k)] / self.hessian_diag[k])
                    .sum();
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        let s_chol = s.clone().cholesky().ok_or(QpError::Singular)?;
        Ok(Factor { a, s_chol, s })
    }

    /// Solves `S y = rhs` with one step of iterative refinement.
    fn schur_solve(f: &Factor, rhs: &DVector<f64>) -> DVector<f64> {
        let mut y = f.s_chol.solve(rhs);
        let resid = rhs - &f.s * &y;
        y += f.s_chol.solve(&resid);
        y
    }

    /// Equality-constrained minimizer on the working set and its multipliers.
    fn solve_working(&self, working: &[usize]) -> Result<(Vec<f64>, DVector<f64>), QpError> {
        let f = self.factor(working)?;
        let n = self.n_vars();
        let n_eq = self.eq_rows.len();
        let m = f.a.nrows();
        // x = H⁻¹(Aᵀu − c); A x = b  ⇒  S u = b + A H⁻¹ c
        let mut rhs = DVector::zeros(m);
        for r in 0..m {
            let b = if r < n_eq {
                self.eq_rhs[r]
            } else {
                self.ineq_rhs[working[r - n_eq]]
            };
            let ahc: f64 = (0..n)
                .map(|k| f.a[(r, k)] * self.linear[k] / self.hessian_diag[k])
                .sum();
            rhs[r] = b + ahc;
        }
        let u = Self::schur_solve(&f, &rhs);
        let x = (0..n)
            .map(|k| {
                let atu: f64 = (0..m).map(|r| f.a[(r, k)] * u[r]).sum();
                (atu - self.linear[k]) / self.hessian_diag[k]
            })
            .collect();
        Ok((x, u))
    }

    /// Primal step `z` (H-projection of `n_p` onto the working null space) and
    /// the multiplier change `r` with `H z = n_p − Aᵀ r`.
    fn direction(&self, working: &[usize], p: usize) -> Result<(Vec<f64>, DVector<f64>), QpError> {
        let f = self.factor(working)?;
        let n = self.n_vars();
        let m = f.a.nrows();
        let np = &self.ineq_rows[p];
        let mut rhs = DVector::zeros(m);
        for r in 0..m {
            rhs[r] = (0..n)
                .map(|k| f.a[(r, k)] * np[k] / self.hessian_diag[k])
                .sum();
        }
        let r = Self::schur_solve(&f, &rhs);
        let z = (0..n)
            .map(|k| {
                let atr: f64 = (0..m).map(|i| f.a[(i, k)] * r[i]).sum();
                (np[k] - atr) / self.hessian_diag[k]
            })
            .collect();
        Ok((z, r))
    }

    fn slack(&self, p: usize, x: &[f64]) -> f64 {
        dot(&self.ineq_rows[p], x) - self.ineq_rhs[p]
    }

    fn most_violated(&self, x: &[f64], working: &[usize]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for p in 0..self.ineq_rows.len() {
            if !self.ineq_rhs[p].is_finite() || working.contains(&p) {
                continue;
            }
            let s = self.slack(p, x);
            if s < -FEAS_TOL * (1.0 + self.ineq_rhs[p].abs()) {
                // strict comparison keeps the lowest index on ties
                if best.is_none_or(|(_, bs)| s < bs) {
                    best = Some((p, s));
                }
            }
        }
        best
    }

    pub fn solve(&self, max_iter: usize) -> Result<QpSolution, QpError> {
        let n_eq = self.eq_rows.len();
        let n_in = self.ineq_rows.len();
        let mut working: Vec<usize> = Vec::new();
        // multipliers for eq rows followed by the working inequalities
        let (mut x, u0) = self.solve_working(&working)?;
        let mut u: Vec<f64> = u0.iter().copied().collect();
        let mut iterations = 0usize;

        while let Some((p, _)) = self.most_violated(&x, &working) {
            let mut u_p = 0.0;
            loop {
                iterations += 1;
                if iterations > max_iter {
                    return Err(QpError::NonConvergence(max_iter));
                }
                let (z, r) = self.direction(&working, p)?;
                let zn = dot(&z, &self.ineq_rows[p]);
                let scale: f64 = self.ineq_rows[p]
                    .iter()
                    .zip(&self.hessian_diag)
                    .map(|(v, h)| v * v / h)
                    .sum();

                // partial step: largest dual step keeping working multipliers ≥ 0
                let mut t1: Option<(f64, usize)> = None;
                for (w, _) in working.iter().enumerate() {
                    let rj = r[n_eq + w];
                    if rj > 0.0 {
                        let t = u[n_eq + w] / rj;
                        if t1.is_none_or(|(bt, _)| t < bt) {
                            t1 = Some((t, w));
                        }
                    }
                }
                let t2 = if zn > 1e-13 * scale {
                    Some(-self.slack(p, &x) / zn)
                } else {
                    None
                };

                let (t, full) = match (t1, t2) {
                    (None, None) => {
                        return Err(QpError::Infeasible {
                            constraint: p,
                            working: working.clone(),
                        })
                    }
                    (Some((a, _)), None) => (a, false),
                    (None, Some(b)) => (b, true),
                    (Some((a, _)), Some(b)) => {
                        if b <= a {
                            (b, true)
                        } else {
                            (a, false)
                        }
                    }
                };

                if t2.is_some() {
                    for (xi, zi) in x.iter_mut().zip(&z) {
                        *xi += t * zi;
                    }
                }
                for (ui, ri) in u.iter_mut().zip(r.iter()) {
                    *ui -= t * ri;
                }
                u_p += t;

                if full {
                    working.push(p);
                    u.push(u_p);
                    break;
                }
                let (_, drop) = t1.expect("partial step requires a blocking multiplier");
                working.remove(drop);
                u.remove(n_eq + drop);
            }
        }

        // Re-solve on the final working set to shed accumulated rounding.
        let (x, uw) = self.solve_working(&working)?;
        let mut ineq_multipliers = vec![0.0; n_in];
        for (w, &p) in working.iter().enumerate() {
            ineq_multipliers[p] = uw[n_eq + w].max(0.0);
        }
        let mut active = working;
        active.sort_unstable();
        Ok(QpSolution {
            x,
            eq_multipliers: uw.iter().take(n_eq).copied().collect(),
            ineq_multipliers,
            active,
            iterations,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_with_equality() {
        // min x² + y²  s.t. x + y = 2  →  (1, 1), multiplier 2
        let qp = QpProblem {
            hessian_diag: vec![2.0, 2.0],
            linear: vec![0.0, 0.0],
            eq_rows: vec![vec![1.0, 1.0]],
            eq_rhs: vec![2.0],
            ineq_rows: vec![],
            ineq_rhs: vec![],
        };
        let s = qp.solve(10).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
        assert!((s.eq_multipliers[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bound_becomes_active() {
        // min x² + y² − 6x  s.t. x + y = 2, y ≥ 0  → unconstrained (2.5,−0.5) → (2,0)
        let qp = QpProblem {
            hessian_diag: vec![2.0, 2.0],
            linear: vec![-6.0, 0.0],
            eq_rows: vec![vec![1.0, 1.0]],
            eq_rhs: vec![2.0],
            ineq_rows: vec![vec![0.0, 1.0]],
            ineq_rhs: vec![0.0],
        };
        let s = qp.solve(10).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-12 && s.x[1].abs() < 1e-12);
        // stationarity: 2x − 6 = y_eq ; 2y = y_eq + u
        let y = s.eq_multipliers[0];
        assert!((2.0 * 2.0 - 6.0 - y).abs() < 1e-12);
        assert!((0.0 - y - s.ineq_multipliers[0]).abs() < 1e-12);
        assert_eq!(s.active, vec![0]);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        // x + y = 3 with x ≤ 1, y ≤ 1
        let qp = QpProblem {
            hessian_diag: vec![1.0, 1.0],
            linear: vec![0.0, 0.0],
            eq_rows: vec![vec![1.0, 1.0]],
            eq_rhs: vec![3.0],
            ineq_rows: vec![vec![-1.0, 0.0], vec![0.0, -1.0]],
            ineq_rhs: vec![-1.0, -1.0],
        };
        assert!(matches!(qp.solve(20), Err(QpError::Infeasible { .. })));
    }

    #[test]
    fn infinite_rhs_rows_are_ignored() {
        let qp = QpProblem {
            hessian_diag: vec![1.0],
            linear: vec![0.0],
            eq_rows: vec![vec![1.0]],
            eq_rhs: vec![5.0],
            ineq_rows: vec![vec![-1.0]],
            ineq_rhs: vec![f64::NEG_INFINITY],
        };
        let s = qp.solve(5).unwrap();
        assert_eq!(s.x, vec![5.0]);
        assert_eq!(s.ineq_multipliers, vec![0.0]);
    }
}
