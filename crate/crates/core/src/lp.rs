//! Small dense two-phase simplex used for membership and support oracles.
//!
//! Problems are stated in general form
//!
//! ```text
//! minimize    cᵀx
//! subject to  a_i x  = b_i   (equality rows)
//!             a_i x <= b_i   (inequality rows)
//!             lower <= x <= upper
//! ```
//!
//! and converted internally to standard form. Intended for desk-scale
//! problems (a few hundred variables); the tableau is dense.

use thiserror::Error;

/// Pivot tolerance.
const PIVOT_TOL: f64 = 1e-10;
/// Reduced-cost optimality tolerance.
const COST_TOL: f64 = 1e-10;
/// Phase-one infeasibility tolerance (relative to the scaled right-hand side).
pub const LP_FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("simplex iteration limit reached")]
    IterationLimit,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Eq,
    Le,
}

#[derive(Debug, Clone)]
struct Row {
    coefs: Vec<f64>,
    kind: RowKind,
    rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn is_feasible(&self) -> bool {
        !matches!(self, LpOutcome::Infeasible)
    }
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    n: usize,
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<Row>,
}

impl LinearProgram {
    /// A program over `n` free variables with zero cost.
    pub fn new(n: usize) -> Self {
        Self {
            n,
            cost: vec![0.0; n],
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn set_cost(&mut self, cost: &[f64]) -> &mut Self {
        assert_eq!(cost.len(), self.n);
        self.cost.copy_from_slice(cost);
        self
    }

    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) -> &mut Self {
        self.lower[j] = lower;
        self.upper[j] = upper;
        self
    }

    pub fn set_all_bounds(&mut self, lower: f64, upper: f64) -> &mut Self {
        self.lower.iter_mut().for_each(|l| *l = lower);
        self.upper.iter_mut().for_each(|u| *u = upper);
        self
    }

    pub fn add_eq(&mut self, coefs: &[f64], rhs: f64) -> &mut Self {
        assert_eq!(coefs.len(), self.n);
        self.rows.push(Row { coefs: coefs.to_vec(), kind: RowKind::Eq, rhs });
        self
    }

    pub fn add_le(&mut self, coefs: &[f64], rhs: f64) -> &mut Self {
        assert_eq!(coefs.len(), self.n);
        self.rows.push(Row { coefs: coefs.to_vec(), kind: RowKind::Le, rhs });
        self
    }

    pub fn add_ge(&mut self, coefs: &[f64], rhs: f64) -> &mut Self {
        let neg: Vec<f64> = coefs.iter().map(|a| -a).collect();
        self.add_le(&neg, -rhs)
    }

    pub fn solve(&self) -> Result<LpOutcome, LpError> {
        for j in 0..self.n {
            if self.lower[j] > self.upper[j] {
                return Ok(LpOutcome::Infeasible);
            }
        }
        StandardForm::build(self).solve(self)
    }
}

/// How an original variable maps to standard-form columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = offset + y
    Shift { col: usize, offset: f64 },
    /// x = offset - y
    Mirror { col: usize, offset: f64 },
    /// x = y⁺ - y⁻
    Split { pos: usize, neg: usize },
}

struct StandardForm {
    maps: Vec<VarMap>,
    /// Constraint rows over structural + slack columns, rhs >= 0 after sign flips.
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    /// Column index of a slack that can start in the basis, per row.
    start_basis: Vec<Option<usize>>,
    ncols: usize,
    cost: Vec<f64>,
}

impl StandardForm {
    fn build(lp: &LinearProgram) -> Self {
        let mut maps = Vec::with_capacity(lp.n);
        let mut ncols = 0;
        for j in 0..lp.n {
            let (lo, up) = (lp.lower[j], lp.upper[j]);
            let m = if lo.is_finite() {
                ncols += 1;
                VarMap::Shift { col: ncols - 1, offset: lo }
            } else if up.is_finite() {
                ncols += 1;
                VarMap::Mirror { col: ncols - 1, offset: up }
            } else {
                ncols += 2;
                VarMap::Split { pos: ncols - 2, neg: ncols - 1 }
            };
            maps.push(m);
        }
        let structural = ncols;

        // Rows expressed over structural columns.
        let mut rows: Vec<(Vec<f64>, RowKind, f64)> = Vec::new();
        for r in &lp.rows {
            let mut coefs = vec![0.0; structural];
            let mut rhs = r.rhs;
            for (j, &a) in r.coefs.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                match maps[j] {
                    VarMap::Shift { col, offset } => {
                        coefs[col] += a;
                        rhs -= a * offset;
                    }
                    VarMap::Mirror { col, offset } => {
                        coefs[col] -= a;
                        rhs -= a * offset;
                    }
                    VarMap::Split { pos, neg } => {
                        coefs[pos] += a;
                        coefs[neg] -= a;
                    }
                }
            }
            rows.push((coefs, r.kind, rhs));
        }
        // Finite upper bounds on shifted variables become rows y <= ub - lb.
        for j in 0..lp.n {
            if let VarMap::Shift { col, offset } = maps[j] {
                if lp.upper[j].is_finite() {
                    let mut coefs = vec![0.0; structural];
                    coefs[col] = 1.0;
                    rows.push((coefs, RowKind::Le, lp.upper[j] - offset));
                }
            }
        }

        let n_slack = rows.iter().filter(|r| r.1 == RowKind::Le).count();
        ncols = structural + n_slack;
        let mut a = Vec::with_capacity(rows.len());
        let mut b = Vec::with_capacity(rows.len());
        let mut start_basis = Vec::with_capacity(rows.len());
        let mut slack = structural;
        for (coefs, kind, rhs) in rows {
            let scale = coefs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale = if scale > 0.0 { scale } else { 1.0 };
            let mut row = vec![0.0; ncols];
            for (dst, src) in row.iter_mut().zip(&coefs) {
                *dst = src / scale;
            }
            let mut rhs = rhs / scale;
            let mut slack_col = None;
            if kind == RowKind::Le {
                row[slack] = 1.0;
                slack_col = Some(slack);
                slack += 1;
            }
            if rhs < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
                rhs = -rhs;
                slack_col = None;
            }
            a.push(row);
            b.push(rhs);
            start_basis.push(slack_col);
        }

        let mut cost = vec![0.0; ncols];
        for j in 0..lp.n {
            let c = lp.cost[j];
            match maps[j] {
                VarMap::Shift { col, .. } => cost[col] += c,
                VarMap::Mirror { col, .. } => cost[col] -= c,
                VarMap::Split { pos, neg } => {
                    cost[pos] += c;
                    cost[neg] -= c;
                }
            }
        }

        Self { maps, a, b, start_basis, ncols, cost }
    }

    fn solve(self, lp: &LinearProgram) -> Result<LpOutcome, LpError> {
        let m = self.a.len();
        let n_art = self.start_basis.iter().filter(|s| s.is_none()).count();
        let total = self.ncols + n_art;
        let width = total + 1;

        let mut tab = Tableau { t: vec![0.0; m * width], width, basis: vec![0; m], m };
        let mut art = self.ncols;
        for i in 0..m {
            tab.t[i * width..i * width + self.ncols].copy_from_slice(&self.a[i]);
            tab.t[i * width + total] = self.b[i];
            match self.start_basis[i] {
                Some(col) => tab.basis[i] = col,
                None => {
                    tab.t[i * width + art] = 1.0;
                    tab.basis[i] = art;
                    art += 1;
                }
            }
        }
        let bscale = 1.0 + self.b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let max_iter = 50 * (m + total) + 1000;

        if n_art > 0 {
            let mut c1 = vec![0.0; total];
            c1[self.ncols..total].iter_mut().for_each(|v| *v = 1.0);
            let obj = tab.optimize(&c1, total, max_iter)?;
            let obj = match obj {
                Phase::Optimal(v) => v,
                Phase::Unbounded => unreachable!("phase one is bounded below"),
            };
            if obj > LP_FEAS_TOL * bscale {
                return Ok(LpOutcome::Infeasible);
            }
            // Drive zero-level artificials out of the basis or drop redundant rows.
            let mut i = 0;
            while i < tab.m {
                if tab.basis[i] >= self.ncols {
                    let row = &tab.t[i * width..i * width + self.ncols];
                    let pick = (0..self.ncols)
                        .filter(|&j| row[j].abs() > 1e-9)
                        .max_by(|&p, &q| row[p].abs().total_cmp(&row[q].abs()));
                    match pick {
                        Some(j) => tab.pivot(i, j),
                        None => {
                            tab.remove_row(i);
                            continue;
                        }
                    }
                }
                i += 1;
            }
        }

        let mut c2 = vec![0.0; total];
        c2[..self.ncols].copy_from_slice(&self.cost);
        match tab.optimize(&c2, self.ncols, max_iter)? {
            Phase::Unbounded => Ok(LpOutcome::Unbounded),
            Phase::Optimal(_) => {
                let mut y = vec![0.0; total];
                for i in 0..tab.m {
                    y[tab.basis[i]] = tab.t[i * width + total];
                }
                let x: Vec<f64> = self
                    .maps
                    .iter()
                    .map(|m| match *m {
                        VarMap::Shift { col, offset } => offset + y[col],
                        VarMap::Mirror { col, offset } => offset - y[col],
                        VarMap::Split { pos, neg } => y[pos] - y[neg],
                    })
                    .collect();
                let objective = x.iter().zip(&lp.cost).map(|(a, b)| a * b).sum::<f64>();
                Ok(LpOutcome::Optimal { x, objective })
            }
        }
    }
}

enum Phase {
    Optimal(f64),
    Unbounded,
}

struct Tableau {
    t: Vec<f64>,
    width: usize,
    basis: Vec<usize>,
    m: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.t[i * self.width + self.width - 1]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.t[r * w + c];
        for j in 0..w {
            self.t[r * w + j] /= p;
        }
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for chunk in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = chunk[c];
            if f != 0.0 {
                for (x, &pv) in chunk.iter_mut().zip(prow.iter()) {
                    *x -= f * pv;
                }
                chunk[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    fn remove_row(&mut self, r: usize) {
        let w = self.width;
        self.t.drain(r * w..(r + 1) * w);
        self.basis.remove(r);
        self.m -= 1;
    }

    /// Minimize `cost` over the current basis; only columns `< allowed` may enter.
    fn optimize(&mut self, cost: &[f64], allowed: usize, max_iter: usize) -> Result<Phase, LpError> {
        let w = self.width;
        let mut degenerate_run = 0usize;
        for _ in 0..max_iter {
            // Reduced costs d_j = c_j - c_Bᵀ B⁻¹ a_j computed from the tableau.
            let mut reduced = cost[..allowed].to_vec();
            for i in 0..self.m {
                let cb = cost[self.basis[i]];
                if cb != 0.0 {
                    let row = &self.t[i * w..i * w + allowed];
                    for (d, a) in reduced.iter_mut().zip(row) {
                        *d -= cb * a;
                    }
                }
            }
            let bland = degenerate_run > 50;
            let entering = if bland {
                (0..allowed).find(|&j| reduced[j] < -COST_TOL)
            } else {
                (0..allowed).filter(|&j| reduced[j] < -COST_TOL).min_by(|&p, &q| reduced[p].total_cmp(&reduced[q]))
            };
            let Some(c) = entering else {
                let obj = (0..self.m).map(|i| cost[self.basis[i]] * self.rhs(i)).sum();
                return Ok(Phase::Optimal(obj));
            };

            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.t[i * w + c];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - 1e-12
                                || (ratio <= lr + 1e-12
                                    && if bland { self.basis[i] < self.basis[li] } else { a > self.t[li * w + c] })
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((r, ratio)) = leave else {
                return Ok(Phase::Unbounded);
            };
            if ratio <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, c);
        }
        Err(LpError::IterationLimit)
    }
}
