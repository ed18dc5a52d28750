//! Multistage convex QPs and a structure-exploiting interior-point solver.
//!
//! A problem has stages `k = 0..=N` with variables `z_k` and
//!
//! ```text
//! min  Σ_k ½ z_kᵀ P_k z_k + q_kᵀ z_k + constant
//! s.t. E_k z_k = f_k,  G_k z_k ≤ w_k,  lower_k ≤ z_k ≤ upper_k,
//!      C_k z_k + D_k z_{k+1} = e_k          (k = 0..N-1)
//! ```
//!
//! The Newton systems are solved through the block-tridiagonal Schur
//! complement of the equality rows, so the cost per iteration grows linearly
//! with the horizon.

mod block;
mod ipm;
mod linalg;
mod presolve;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use ipm::IpmOptions;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("invalid cost: {0}")]
    InvalidCost(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    State,
    Input,
    Factor,
    Binary,
}

/// Named contiguous range of stage variables.
#[derive(Debug, Clone, PartialEq)]
pub struct VarBlock {
    pub name: String,
    pub start: usize,
    pub len: usize,
    pub kind: VarKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpStage {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub g: DMatrix<f64>,
    pub w: DVector<f64>,
    pub e: DMatrix<f64>,
    pub f: DVector<f64>,
    pub layout: Vec<VarBlock>,
}

impl QpStage {
    /// Stage with `n` free variables, zero cost and no constraints.
    pub fn new(n: usize) -> Self {
        Self {
            p: DMatrix::zeros(n, n),
            q: DVector::zeros(n),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
            g: DMatrix::zeros(0, n),
            w: DVector::zeros(0),
            e: DMatrix::zeros(0, n),
            f: DVector::zeros(0),
            layout: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn block(&self, name: &str) -> Option<&VarBlock> {
        self.layout.iter().find(|b| b.name == name)
    }

    pub fn push_eq(&mut self, row: &[f64], rhs: f64) {
        push_row(&mut self.e, &mut self.f, row, rhs);
    }

    pub fn push_le(&mut self, row: &[f64], rhs: f64) {
        push_row(&mut self.g, &mut self.w, row, rhs);
    }
}

fn push_row(m: &mut DMatrix<f64>, v: &mut DVector<f64>, row: &[f64], rhs: f64) {
    let r = m.nrows();
    let taken = std::mem::replace(m, DMatrix::zeros(0, 0));
    *m = taken.insert_row(r, 0.0);
    for (j, &a) in row.iter().enumerate() {
        m[(r, j)] = a;
    }
    let taken = std::mem::replace(v, DVector::zeros(0));
    *v = taken.push(rhs);
}

/// Equality rows `C z_k + D z_{k+1} = e` linking consecutive stages.
#[derive(Debug, Clone, PartialEq)]
pub struct QpCoupling {
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub e: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultistageQP {
    pub stages: Vec<QpStage>,
    pub couplings: Vec<QpCoupling>,
    pub constant: f64,
}

impl MultistageQP {
    pub fn horizon(&self) -> usize {
        self.stages.len().saturating_sub(1)
    }

    pub fn num_vars(&self) -> usize {
        self.stages.iter().map(QpStage::n).sum()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let dim = |m: String| Err(QpError::Dimension(m));
        if self.stages.is_empty() {
            return dim("no stages".into());
        }
        if self.couplings.len() + 1 != self.stages.len() {
            return dim(format!("{} couplings for {} stages", self.couplings.len(), self.stages.len()));
        }
        for (k, s) in self.stages.iter().enumerate() {
            let n = s.n();
            if s.p.shape() != (n, n) || s.lower.len() != n || s.upper.len() != n {
                return dim(format!("stage {k} cost/bounds"));
            }
            if s.g.ncols() != n || s.g.nrows() != s.w.len() || s.e.ncols() != n || s.e.nrows() != s.f.len() {
                return dim(format!("stage {k} constraints"));
            }
            if s.lower.iter().chain(s.upper.iter()).any(|v| v.is_nan()) {
                return dim(format!("stage {k} NaN bound"));
            }
            check_psd(&s.p).map_err(|m| QpError::InvalidCost(format!("stage {k}: {m}")))?;
        }
        for (k, c) in self.couplings.iter().enumerate() {
            let r = c.e.len();
            if c.c.shape() != (r, self.stages[k].n()) || c.d.shape() != (r, self.stages[k + 1].n()) {
                return dim(format!("coupling {k}"));
            }
        }
        Ok(())
    }

    /// Objective value at a stage-wise point.
    pub fn objective(&self, z: &[DVector<f64>]) -> f64 {
        self.constant + self.stages.iter().zip(z).map(|(s, zk)| 0.5 * zk.dot(&(&s.p * zk)) + s.q.dot(zk)).sum::<f64>()
    }

    /// Largest violation of any constraint at `z` (absolute units).
    pub fn max_violation(&self, z: &[DVector<f64>]) -> f64 {
        let mut v: f64 = 0.0;
        for (s, zk) in self.stages.iter().zip(z) {
            for i in 0..s.n() {
                v = v.max(s.lower[i] - zk[i]).max(zk[i] - s.upper[i]);
            }
            if s.e.nrows() > 0 {
                v = v.max((&s.e * zk - &s.f).amax());
            }
            if s.g.nrows() > 0 {
                v = v.max((&s.g * zk - &s.w).max());
            }
        }
        for (k, c) in self.couplings.iter().enumerate() {
            if !c.e.is_empty() {
                v = v.max((&c.c * &z[k] + &c.d * &z[k + 1] - &c.e).amax());
            }
        }
        v
    }
}

fn check_psd(p: &DMatrix<f64>) -> Result<(), String> {
    let n = p.nrows();
    if n == 0 {
        return Ok(());
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err("non-finite entry".into());
    }
    let scale = p.amax().max(1e-300);
    let asym = (p - p.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err("matrix not symmetric".into());
    }
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || p[(i, j)] == 0.0));
    if diagonal {
        return if (0..n).all(|i| p[(i, i)] >= 0.0) { Ok(()) } else { Err("negative diagonal".into()) };
    }
    let shifted = p + DMatrix::identity(n, n) * (1e-12 * scale);
    if shifted.cholesky().is_some() {
        return Ok(());
    }
    let eig = p.clone().symmetric_eigen();
    if eig.eigenvalues.min() < -1e-9 * scale {
        return Err(format!("negative eigenvalue {:.3e}", eig.eigenvalues.min()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QPSolution {
    pub z: Vec<DVector<f64>>,
    /// Multipliers of `E_k z_k = f_k`.
    pub y_local: Vec<DVector<f64>>,
    /// Multipliers of the coupling rows.
    pub y_couple: Vec<DVector<f64>>,
    /// Multipliers of `G_k z_k ≤ w_k` (non-negative).
    pub lam_g: Vec<DVector<f64>>,
    pub lam_lower: Vec<DVector<f64>>,
    pub lam_upper: Vec<DVector<f64>>,
    pub objective: f64,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Lower bound on the optimal value from the dual solution.
    pub bound: f64,
}

/// Solve a multistage QP to relative KKT tolerance `tol`.
pub fn solve_qp(qp: &MultistageQP, warm: Option<&QPSolution>, tol: f64) -> Result<QPSolution, QpError> {
    solve_qp_with(qp, warm, &IpmOptions { tol, ..IpmOptions::default() })
}

pub fn solve_qp_with(qp: &MultistageQP, warm: Option<&QPSolution>, opts: &IpmOptions) -> Result<QPSolution, QpError> {
    qp.validate()?;
    Ok(ipm::solve(qp, warm, opts))
}

/// Lower bound on the optimum of `qp` implied by the multipliers in `sol`.
///
/// Infeasible problems give `+∞`. For other statuses the bound is the
/// Lagrangian dual function evaluated at `sol`'s multipliers, minimized over
/// the variable box through a convexity underestimate at `sol.z`.
pub fn objective_bound(qp: &MultistageQP, sol: &QPSolution) -> f64 {
    if sol.status == QpStatus::Infeasible {
        return f64::INFINITY;
    }
    match presolve::presolve(qp) {
        presolve::Presolved::Infeasible => f64::INFINITY,
        presolve::Presolved::Reduced(red) => {
            let (z, y, lam) = red.restrict(sol);
            red.problem.lagrangian_bound(&z, &y, &lam, sol.status == QpStatus::Optimal) + red.constant
        }
    }
}

#[cfg(test)]
mod tests;
