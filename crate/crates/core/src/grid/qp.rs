//! Dense strictly convex QP solver (Goldfarb–Idnani dual active set).
//!
//! Solves
//!
//! ```text
//! min  ½ xᵀ G x + cᵀ x
//! s.t. aᵢᵀ x + bᵢ = 0   (equalities)
//!      aⱼᵀ x + bⱼ ≥ 0   (inequalities)
//! ```
//!
//! with `G` positive definite. The method starts at the unconstrained
//! minimum and adds violated constraints one at a time, staying dual
//! feasible throughout, so no feasible starting point is needed. Problems
//! here are small, so each step re-solves its projected system directly
//! instead of updating factorizations.
//!
//! Returned multipliers satisfy `G x + c = Σ uᵢ aᵢ` with `uⱼ ≥ 0` for
//! inequalities.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum QpError {
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("equality constraints are linearly dependent")]
    DependentEqualities,
    #[error("iteration limit reached")]
    IterationLimit,
}

/// One linear constraint `aᵀx + b (= or ≥) 0`.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub a: DVector<f64>,
    pub b: f64,
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub g: DMatrix<f64>,
    pub c: DVector<f64>,
    pub eq: Vec<Constraint>,
    pub ineq: Vec<Constraint>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub eq_multipliers: Vec<f64>,
    pub ineq_multipliers: Vec<f64>,
    pub iterations: usize,
}

const EPS: f64 = 1e-12;

impl QpProblem {
    pub fn new(g: DMatrix<f64>, c: DVector<f64>) -> Self {
        QpProblem { g, c, eq: Vec::new(), ineq: Vec::new() }
    }

    fn normal(&self, idx: usize) -> &Constraint {
        if idx < self.eq.len() {
            &self.eq[idx]
        } else {
            &self.ineq[idx - self.eq.len()]
        }
    }

    fn slack(&self, idx: usize, x: &DVector<f64>) -> f64 {
        let c = self.normal(idx);
        c.a.dot(x) + c.b
    }

    pub fn solve(&self) -> Result<QpSolution, QpError> {
        let n = self.c.len();
        let chol = self.g.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
        let ginv = chol.inverse();
        let me = self.eq.len();
        let mut x = -(&ginv * &self.c);
        let mut active: Vec<usize> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        let mut iterations = 0;

        for j in 0..me {
            let np = &self.eq[j].a;
            let (z, r) = step(&ginv, self, &active, np)?;
            let zn = z.dot(np);
            let s = self.slack(j, &x);
            if zn.abs() <= EPS * (1.0 + np.norm_squared()) {
                if s.abs() <= 1e-10 * (1.0 + np.norm()) {
                    // Redundant with earlier equalities; skip it.
                    continue;
                }
                return Err(QpError::DependentEqualities);
            }
            let t = -s / zn;
            x += &z * t;
            for (ui, ri) in u.iter_mut().zip(r.iter()) {
                *ui -= t * ri;
            }
            active.push(j);
            u.push(t);
            iterations += 1;
        }

        let limit = 20 * (n + self.ineq.len()) + 100;
        // Constraints violated only by roundoff that cannot be added
        // without contradicting the active set.
        let mut tolerated: Vec<usize> = Vec::new();
        loop {
            // Most violated inactive inequality.
            let mut worst: Option<(usize, f64)> = None;
            for (k, c) in self.ineq.iter().enumerate() {
                let idx = me + k;
                if active.contains(&idx) || tolerated.contains(&idx) {
                    continue;
                }
                let s = self.slack(idx, &x);
                let tol = 1e-10 * (1.0 + c.a.norm() + c.b.abs());
                if s < -tol && worst.is_none_or(|(_, w)| s < w) {
                    worst = Some((idx, s));
                }
            }
            let Some((p, _)) = worst else { break };
            let np = self.normal(p).a.clone();
            let mut up = 0.0;
            'add: loop {
                iterations += 1;
                if iterations > limit {
                    return Err(QpError::IterationLimit);
                }
                let (z, r) = step(&ginv, self, &active, &np)?;
                let mut t1 = f64::INFINITY;
                let mut drop = None;
                for (pos, idx) in active.iter().enumerate() {
                    if *idx >= me && r[pos] > EPS {
                        let ratio = u[pos] / r[pos];
                        if ratio < t1 {
                            t1 = ratio;
                            drop = Some(pos);
                        }
                    }
                }
                let zn = z.dot(&np);
                let t2 = if z.norm() > 1e-12 * (1.0 + np.norm()) && zn > EPS {
                    -self.slack(p, &x) / zn
                } else {
                    f64::INFINITY
                };
                if t1.is_infinite() && t2.is_infinite() {
                    let c = self.normal(p);
                    if self.slack(p, &x) >= -1e-8 * (1.0 + c.a.norm() + c.b.abs()) {
                        tolerated.push(p);
                        break 'add;
                    }
                    return Err(QpError::Infeasible);
                }
                let t = t1.min(t2);
                if t2.is_finite() {
                    x += &z * t;
                }
                for (ui, ri) in u.iter_mut().zip(r.iter()) {
                    *ui -= t * ri;
                }
                up += t;
                if t2 <= t1 {
                    active.push(p);
                    u.push(up);
                    break;
                }
                let pos = drop.expect("finite t1 names a constraint");
                active.remove(pos);
                u.remove(pos);
            }
        }

        let mut eq_multipliers = vec![0.0; me];
        let mut ineq_multipliers = vec![0.0; self.ineq.len()];
        for (idx, val) in active.iter().zip(u.iter()) {
            if *idx < me {
                eq_multipliers[*idx] = *val;
            } else {
                ineq_multipliers[*idx - me] = *val;
            }
        }
        let objective = 0.5 * x.dot(&(&self.g * &x)) + self.c.dot(&x);
        Ok(QpSolution { x, objective, eq_multipliers, ineq_multipliers, iterations })
    }
}

/// Primal direction `z` and dual direction `r` for adding normal `np` to
/// the active set.
fn step(
    ginv: &DMatrix<f64>,
    qp: &QpProblem,
    active: &[usize],
    np: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), QpError> {
    let gn = ginv * np;
    if active.is_empty() {
        return Ok((gn, DVector::zeros(0)));
    }
    let n = np.len();
    let mut nmat = DMatrix::zeros(n, active.len());
    for (col, idx) in active.iter().enumerate() {
        nmat.set_column(col, &qp.normal(*idx).a);
    }
    let gn_active = ginv * &nmat;
    let w = nmat.transpose() * &gn_active;
    let rhs = nmat.transpose() * &gn;
    let r = w.lu().solve(&rhs).ok_or(QpError::DependentEqualities)?;
    let z = gn - gn_active * &r;
    Ok((z, r))
}
