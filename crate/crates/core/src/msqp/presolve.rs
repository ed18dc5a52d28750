//! Fixed-variable elimination and forcing-row detection.

use nalgebra::{DMatrix, DVector};

use super::block::{BCoupling, BStage, BlockQp};
use super::{MultistageQP, QPSolution};

pub(crate) enum Presolved {
    Reduced(Box<Reduced>),
    Infeasible,
}

/// Problem restricted to the variables and rows that survive presolve.
pub(crate) struct Reduced {
    pub problem: BlockQp,
    pub constant: f64,
    pub cols: Vec<Vec<usize>>,
    pub values: Vec<Vec<Option<f64>>>,
    pub e_rows: Vec<Vec<usize>>,
    pub c_rows: Vec<Vec<usize>>,
    pub g_rows: Vec<Vec<usize>>,
}

#[derive(Clone, Copy)]
enum RowRef {
    Local(usize, usize),
    Couple(usize, usize),
}

struct Row {
    entries: Vec<(usize, usize, f64)>,
    rhs: f64,
    at: RowRef,
}

fn fixed_width(l: f64, u: f64) -> bool {
    l.is_finite() && u.is_finite() && u - l <= 1e-12 * l.abs().max(1.0)
}

pub(crate) fn presolve(qp: &MultistageQP) -> Presolved {
    let ns = qp.stages.len();
    let mut values: Vec<Vec<Option<f64>>> = Vec::with_capacity(ns);
    for s in &qp.stages {
        let mut v = vec![None; s.n()];
        for i in 0..s.n() {
            let (l, u) = (s.lower[i], s.upper[i]);
            if l > u + 1e-9 * l.abs().max(u.abs()).max(1.0) {
                return Presolved::Infeasible;
            }
            if fixed_width(l, u) {
                v[i] = Some(0.5 * (l + u));
            }
        }
        values.push(v);
    }

    let mut rows = Vec::new();
    for (k, s) in qp.stages.iter().enumerate() {
        for r in 0..s.e.nrows() {
            let entries = (0..s.n()).filter(|&j| s.e[(r, j)] != 0.0).map(|j| (k, j, s.e[(r, j)])).collect();
            rows.push(Row { entries, rhs: s.f[r], at: RowRef::Local(k, r) });
        }
    }
    for (k, c) in qp.couplings.iter().enumerate() {
        for r in 0..c.e.len() {
            let mut entries: Vec<(usize, usize, f64)> =
                (0..c.c.ncols()).filter(|&j| c.c[(r, j)] != 0.0).map(|j| (k, j, c.c[(r, j)])).collect();
            entries.extend((0..c.d.ncols()).filter(|&j| c.d[(r, j)] != 0.0).map(|j| (k + 1, j, c.d[(r, j)])));
            rows.push(Row { entries, rhs: c.e[r], at: RowRef::Couple(k, r) });
        }
    }

    let bounds = |k: usize, j: usize| (qp.stages[k].lower[j], qp.stages[k].upper[j]);
    let mut dropped = vec![false; rows.len()];
    let mut changed = true;
    while changed {
        changed = false;
        for (ri, row) in rows.iter().enumerate() {
            if dropped[ri] {
                continue;
            }
            let mut rhs = row.rhs;
            let mut scale = 1.0 + row.rhs.abs();
            let mut free = Vec::new();
            for &(k, j, a) in &row.entries {
                match values[k][j] {
                    Some(v) => {
                        rhs -= a * v;
                        scale += (a * v).abs();
                    }
                    None => {
                        let (l, u) = bounds(k, j);
                        let mag = [l, u].iter().filter(|b| b.is_finite()).fold(1.0f64, |m, b| m.max(b.abs()));
                        scale += a.abs() * mag;
                        free.push((k, j, a));
                    }
                }
            }
            let tol = 1e-9 * scale;
            match free.len() {
                0 => {
                    if rhs.abs() > tol {
                        return Presolved::Infeasible;
                    }
                    dropped[ri] = true;
                    changed = true;
                }
                1 => {
                    let (k, j, a) = free[0];
                    let (l, u) = bounds(k, j);
                    let v = rhs / a;
                    let tv = tol / a.abs();
                    if v < l - tv || v > u + tv {
                        return Presolved::Infeasible;
                    }
                    values[k][j] = Some(v.clamp(l, u));
                    dropped[ri] = true;
                    changed = true;
                }
                _ => {
                    let (mut lo, mut hi) = (0.0, 0.0);
                    for &(k, j, a) in &free {
                        let (l, u) = bounds(k, j);
                        if a > 0.0 {
                            lo += a * l;
                            hi += a * u;
                        } else {
                            lo += a * u;
                            hi += a * l;
                        }
                    }
                    if rhs < lo - tol || rhs > hi + tol {
                        return Presolved::Infeasible;
                    }
                    let at_lo = lo.is_finite() && (rhs - lo).abs() <= tol;
                    let at_hi = hi.is_finite() && (rhs - hi).abs() <= tol;
                    if at_lo || at_hi {
                        for &(k, j, a) in &free {
                            let (l, u) = bounds(k, j);
                            values[k][j] = Some(if (a > 0.0) == at_lo { l } else { u });
                        }
                        dropped[ri] = true;
                        changed = true;
                    }
                }
            }
        }
    }

    let cols: Vec<Vec<usize>> = values.iter().map(|v| (0..v.len()).filter(|&j| v[j].is_none()).collect()).collect();
    let fixed_vec: Vec<DVector<f64>> =
        values.iter().map(|v| DVector::from_iterator(v.len(), v.iter().map(|x| x.unwrap_or(0.0)))).collect();

    let mut e_rows = vec![Vec::new(); ns];
    let mut c_rows = vec![Vec::new(); ns.saturating_sub(1)];
    for (ri, row) in rows.iter().enumerate() {
        if dropped[ri] {
            continue;
        }
        match row.at {
            RowRef::Local(k, r) => e_rows[k].push(r),
            RowRef::Couple(k, r) => c_rows[k].push(r),
        }
    }

    let mut constant = qp.constant;
    let mut stages = Vec::with_capacity(ns);
    let mut g_rows = Vec::with_capacity(ns);
    for (k, s) in qp.stages.iter().enumerate() {
        let fv = &fixed_vec[k];
        let c = &cols[k];
        let pf = &s.p * fv;
        constant += 0.5 * fv.dot(&pf) + s.q.dot(fv);
        let p = s.p.select_rows(c).select_columns(c);
        let q = DVector::from_iterator(c.len(), c.iter().map(|&j| s.q[j] + pf[j]));
        let l = DVector::from_iterator(c.len(), c.iter().map(|&j| s.lower[j]));
        let u = DVector::from_iterator(c.len(), c.iter().map(|&j| s.upper[j]));

        let gfix = &s.g * fv;
        let mut kept_g = Vec::new();
        for r in 0..s.g.nrows() {
            if c.iter().any(|&j| s.g[(r, j)] != 0.0) {
                kept_g.push(r);
            } else if gfix[r] > s.w[r] + 1e-9 * (1.0 + s.w[r].abs() + gfix[r].abs()) {
                return Presolved::Infeasible;
            }
        }
        let g = select(&s.g, &kept_g, c);
        let w = DVector::from_iterator(kept_g.len(), kept_g.iter().map(|&r| s.w[r] - gfix[r]));
        let efix = &s.e * fv;
        let e = select(&s.e, &e_rows[k], c);
        let f = DVector::from_iterator(e_rows[k].len(), e_rows[k].iter().map(|&r| s.f[r] - efix[r]));
        let mut st = BStage { p, q, l, u, g, w, e, f, dense: false };
        st.detect_dense();
        stages.push(st);
        g_rows.push(kept_g);
    }
    let couplings = qp
        .couplings
        .iter()
        .enumerate()
        .map(|(k, cp)| {
            let rows = &c_rows[k];
            let fix = &cp.c * &fixed_vec[k] + &cp.d * &fixed_vec[k + 1];
            BCoupling {
                c: select(&cp.c, rows, &cols[k]),
                d: select(&cp.d, rows, &cols[k + 1]),
                e: DVector::from_iterator(rows.len(), rows.iter().map(|&r| cp.e[r] - fix[r])),
            }
        })
        .collect();

    Presolved::Reduced(Box::new(Reduced {
        problem: BlockQp { stages, couplings },
        constant,
        cols,
        values,
        e_rows,
        c_rows,
        g_rows,
    }))
}

fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

impl Reduced {
    /// Map a full-space solution onto the reduced variables and rows.
    pub fn restrict(&self, sol: &QPSolution) -> (Vec<DVector<f64>>, Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let ns = self.cols.len();
        let z = (0..ns)
            .map(|k| DVector::from_iterator(self.cols[k].len(), self.cols[k].iter().map(|&j| sol.z[k][j])))
            .collect();
        let y = (0..ns)
            .map(|k| {
                let mut v: Vec<f64> = self.e_rows[k].iter().map(|&r| sol.y_local[k][r]).collect();
                if k + 1 < ns {
                    v.extend(self.c_rows[k].iter().map(|&r| sol.y_couple[k][r]));
                }
                DVector::from_vec(v)
            })
            .collect();
        let lam = (0..ns)
            .map(|k| DVector::from_iterator(self.g_rows[k].len(), self.g_rows[k].iter().map(|&r| sol.lam_g[k][r])))
            .collect();
        (z, y, lam)
    }

    /// Full-space primal vectors.
    pub fn expand_z(&self, z: &[DVector<f64>]) -> Vec<DVector<f64>> {
        self.values
            .iter()
            .enumerate()
            .map(|(k, vals)| {
                let mut out = DVector::from_iterator(vals.len(), vals.iter().map(|v| v.unwrap_or(0.0)));
                for (i, &j) in self.cols[k].iter().enumerate() {
                    out[j] = z[k][i];
                }
                out
            })
            .collect()
    }

    /// Scatter reduced per-stage values into full-length vectors of size `full[k]`.
    pub fn scatter(idx: &[Vec<usize>], v: &[DVector<f64>], full: &[usize]) -> Vec<DVector<f64>> {
        idx.iter()
            .zip(v)
            .zip(full)
            .map(|((ix, vk), &n)| {
                let mut out = DVector::zeros(n);
                for (i, &j) in ix.iter().enumerate() {
                    out[j] = vk[i];
                }
                out
            })
            .collect()
    }
}
