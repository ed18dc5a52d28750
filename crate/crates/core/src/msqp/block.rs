//! Internal block form used by presolve and the interior-point iterations.
//!
//! Equality rows are grouped per stage: row block `k` holds the local rows
//! `E_k` followed by the coupling rows `C_k z_k + D_k z_{k+1} = e_k`.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub(crate) struct BStage {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
    pub g: DMatrix<f64>,
    pub w: DVector<f64>,
    pub e: DMatrix<f64>,
    pub f: DVector<f64>,
    /// Whether the stage Hessian needs a dense factorization.
    pub dense: bool,
}

impl BStage {
    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn detect_dense(&mut self) {
        let n = self.n();
        self.dense = self.g.nrows() > 0 || (0..n).any(|i| (0..n).any(|j| i != j && self.p[(i, j)] != 0.0));
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BCoupling {
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub e: DVector<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockQp {
    pub stages: Vec<BStage>,
    pub couplings: Vec<BCoupling>,
}

impl BlockQp {
    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Size of row block `k`.
    pub fn block_rows(&self, k: usize) -> usize {
        self.stages[k].e.nrows() + self.couplings.get(k).map_or(0, |c| c.e.len())
    }

    pub fn zeros_y(&self) -> Vec<DVector<f64>> {
        (0..self.num_stages()).map(|k| DVector::zeros(self.block_rows(k))).collect()
    }

    /// Equality right-hand side per row block.
    pub fn rhs(&self) -> Vec<DVector<f64>> {
        (0..self.num_stages())
            .map(|k| {
                let s = &self.stages[k];
                let mut v = DVector::zeros(self.block_rows(k));
                v.rows_mut(0, s.f.len()).copy_from(&s.f);
                if let Some(c) = self.couplings.get(k) {
                    v.rows_mut(s.f.len(), c.e.len()).copy_from(&c.e);
                }
                v
            })
            .collect()
    }

    /// Equality rows applied to `z`, per row block.
    pub fn mul_a(&self, z: &[DVector<f64>]) -> Vec<DVector<f64>> {
        (0..self.num_stages())
            .map(|k| {
                let s = &self.stages[k];
                let me = s.e.nrows();
                let mut v = DVector::zeros(self.block_rows(k));
                if me > 0 {
                    v.rows_mut(0, me).copy_from(&(&s.e * &z[k]));
                }
                if let Some(c) = self.couplings.get(k) {
                    if !c.e.is_empty() {
                        let r = &c.c * &z[k] + &c.d * &z[k + 1];
                        v.rows_mut(me, c.e.len()).copy_from(&r);
                    }
                }
                v
            })
            .collect()
    }

    /// Transposed equality rows applied to block multipliers `y`.
    pub fn mul_at(&self, y: &[DVector<f64>]) -> Vec<DVector<f64>> {
        (0..self.num_stages())
            .map(|k| {
                let s = &self.stages[k];
                let me = s.e.nrows();
                let mut v = DVector::zeros(s.n());
                if me > 0 {
                    v += s.e.tr_mul(&y[k].rows(0, me).into_owned());
                }
                if let Some(c) = self.couplings.get(k) {
                    if !c.e.is_empty() {
                        v += c.c.tr_mul(&y[k].rows(me, c.e.len()).into_owned());
                    }
                }
                if k > 0 {
                    let prev = &self.couplings[k - 1];
                    if !prev.e.is_empty() {
                        let mp = self.stages[k - 1].e.nrows();
                        v += prev.d.tr_mul(&y[k - 1].rows(mp, prev.e.len()).into_owned());
                    }
                }
                v
            })
            .collect()
    }

    pub fn objective(&self, z: &[DVector<f64>]) -> f64 {
        self.stages.iter().zip(z).map(|(s, zk)| 0.5 * zk.dot(&(&s.p * zk)) + s.q.dot(zk)).sum()
    }

    /// Lagrangian lower bound: `L(z̄, y, λ) + Σ_i min over the box of ∇L_i (z_i − z̄_i)`.
    ///
    /// With `lenient`, gradient components on unbounded coordinates are
    /// treated as converged residuals instead of forcing `-∞`.
    pub fn lagrangian_bound(
        &self,
        z: &[DVector<f64>],
        y: &[DVector<f64>],
        lam_g: &[DVector<f64>],
        lenient: bool,
    ) -> f64 {
        let az = self.mul_a(z);
        let b = self.rhs();
        let aty = self.mul_at(y);
        let mut total = self.objective(z);
        for k in 0..self.num_stages() {
            total += y[k].dot(&(&az[k] - &b[k]));
        }
        for (k, s) in self.stages.iter().enumerate() {
            let lam = lam_g[k].map(|v| v.max(0.0));
            let mut r = &s.p * &z[k] + &s.q + &aty[k];
            if s.g.nrows() > 0 {
                total += lam.dot(&(&s.g * &z[k] - &s.w));
                r += s.g.tr_mul(&lam);
            }
            for i in 0..s.n() {
                let ri = r[i];
                if ri == 0.0 {
                    continue;
                }
                let target = if ri > 0.0 { s.l[i] } else { s.u[i] };
                if target.is_finite() {
                    total += ri * (target - z[k][i]);
                } else if !lenient {
                    return f64::NEG_INFINITY;
                }
            }
        }
        total
    }
}

pub(crate) fn inf_norm(v: &[DVector<f64>]) -> f64 {
    v.iter().map(|x| x.amax()).fold(0.0, f64::max)
}

/// Compressed sparse rows.
#[derive(Debug, Clone)]
pub(crate) struct Csr {
    ptr: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut out = Csr { ptr: vec![0], idx: Vec::new(), val: Vec::new() };
        for r in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(r, j)];
                if v != 0.0 {
                    out.idx.push(j);
                    out.val.push(v);
                }
            }
            out.ptr.push(out.idx.len());
        }
        out
    }

    fn nrows(&self) -> usize {
        self.ptr.len() - 1
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.ptr[r]..self.ptr[r + 1]).map(move |p| (self.idx[p], self.val[p]))
    }

    /// `out[off + r] += (M x)_r`.
    fn mul_add(&self, x: &DVector<f64>, out: &mut DVector<f64>, off: usize) {
        for r in 0..self.nrows() {
            out[off + r] += self.row(r).map(|(j, v)| v * x[j]).sum::<f64>();
        }
    }

    /// `out += Mᵀ y[off..]`.
    fn tr_mul_add(&self, y: &DVector<f64>, off: usize, out: &mut DVector<f64>) {
        for r in 0..self.nrows() {
            let yr = y[off + r];
            if yr != 0.0 {
                for (j, v) in self.row(r) {
                    out[j] += v * yr;
                }
            }
        }
    }

    /// Column lists `(row, value)`.
    fn columns(&self, ncols: usize) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); ncols];
        for r in 0..self.nrows() {
            for (j, v) in self.row(r) {
                cols[j].push((r, v));
            }
        }
        cols
    }
}

/// Sparse copies of the equality operators and diagonal Hessians of a block
/// problem, built once per interior-point run.
pub(crate) struct SparseOps {
    /// `[E_k; C_k]` acting on stage `k`.
    b: Vec<Csr>,
    /// `D_k` acting on stage `k + 1`.
    d: Vec<Csr>,
    /// Column lists of `b` and `d`.
    pub b_cols: Vec<Vec<Vec<(usize, f64)>>>,
    pub d_cols: Vec<Vec<Vec<(usize, f64)>>>,
    pdiag: Vec<Option<DVector<f64>>>,
    me: Vec<usize>,
    n: Vec<usize>,
}

impl SparseOps {
    pub fn new(qp: &BlockQp) -> Self {
        let ns = qp.num_stages();
        let mut b = Vec::with_capacity(ns);
        let mut d = Vec::with_capacity(ns.saturating_sub(1));
        let mut pdiag = Vec::with_capacity(ns);
        for (k, s) in qp.stages.iter().enumerate() {
            match qp.couplings.get(k) {
                Some(c) => {
                    let mut st = DMatrix::zeros(s.e.nrows() + c.e.len(), s.n());
                    st.rows_mut(0, s.e.nrows()).copy_from(&s.e);
                    st.rows_mut(s.e.nrows(), c.e.len()).copy_from(&c.c);
                    b.push(Csr::from_dense(&st));
                }
                None => b.push(Csr::from_dense(&s.e)),
            }
            if let Some(c) = qp.couplings.get(k) {
                d.push(Csr::from_dense(&c.d));
            }
            let n = s.n();
            let diagonal = (0..n).all(|j| (0..n).all(|i| i == j || s.p[(i, j)] == 0.0));
            pdiag.push(diagonal.then(|| s.p.diagonal()));
        }
        let b_cols = b.iter().zip(&qp.stages).map(|(m, s)| m.columns(s.n())).collect();
        let d_cols = d.iter().enumerate().map(|(k, m)| m.columns(qp.stages[k + 1].n())).collect();
        let me = qp.stages.iter().map(|s| s.e.nrows()).collect();
        let n = qp.stages.iter().map(|s| s.n()).collect();
        Self { b, d, b_cols, d_cols, pdiag, me, n }
    }

    pub fn mul_a(&self, z: &[DVector<f64>]) -> Vec<DVector<f64>> {
        (0..self.b.len())
            .map(|k| {
                let mut v = DVector::zeros(self.b[k].nrows());
                self.b[k].mul_add(&z[k], &mut v, 0);
                if let Some(d) = self.d.get(k) {
                    d.mul_add(&z[k + 1], &mut v, self.me[k]);
                }
                v
            })
            .collect()
    }

    pub fn mul_at(&self, y: &[DVector<f64>]) -> Vec<DVector<f64>> {
        (0..self.b.len())
            .map(|k| {
                let mut v = DVector::zeros(self.n[k]);
                self.b[k].tr_mul_add(&y[k], 0, &mut v);
                if k > 0 {
                    self.d[k - 1].tr_mul_add(&y[k - 1], self.me[k - 1], &mut v);
                }
                v
            })
            .collect()
    }

    /// `P_k v`.
    pub fn p_mul(&self, qp: &BlockQp, k: usize, v: &DVector<f64>) -> DVector<f64> {
        match &self.pdiag[k] {
            Some(p) => p.component_mul(v),
            None => &qp.stages[k].p * v,
        }
    }

    pub fn objective(&self, qp: &BlockQp, z: &[DVector<f64>]) -> f64 {
        qp.stages.iter().enumerate().map(|(k, s)| 0.5 * z[k].dot(&self.p_mul(qp, k, &z[k])) + s.q.dot(&z[k])).sum()
    }
}
