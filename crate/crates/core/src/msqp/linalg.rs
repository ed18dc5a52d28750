//! Newton-system solves through the block-tridiagonal Schur complement.
//!
//! The regularized system
//!
//! ```text
//! [ H + ρI   Aᵀ ] [dz]   [r1]
//! [ A      −δI  ] [dy] = [r2]
//! ```
//!
//! is reduced to `(A H⁻¹ Aᵀ + δI) dy = A H⁻¹ r1 − r2`. Stage `k` only
//! touches row blocks `k − 1` and `k`, so the Schur complement is block
//! tridiagonal and is factored by a block Cholesky recursion over stages.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::block::{BlockQp, SparseOps};

enum StageInverse {
    Diag(DVector<f64>),
    Dense(Cholesky<f64, Dyn>),
}

impl StageInverse {
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            StageInverse::Diag(d) => v.component_mul(d),
            StageInverse::Dense(c) => c.solve(v),
        }
    }

    fn apply_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            StageInverse::Diag(d) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= d[i];
                }
                out
            }
            StageInverse::Dense(c) => c.solve(m),
        }
    }
}

pub(crate) struct Kkt<'a> {
    qp: &'a BlockQp,
    ops: &'a SparseOps,
    sigma: &'a [DVector<f64>],
    gsig: &'a [DVector<f64>],
    hinv: Vec<StageInverse>,
    /// Lower Cholesky factors of the Schur diagonal blocks.
    lblk: Vec<DMatrix<f64>>,
    /// Sub-diagonal factor blocks.
    wblk: Vec<DMatrix<f64>>,
}

impl<'a> Kkt<'a> {
    /// Factor with stage Hessians `P_k + diag(σ_k) + G_kᵀ diag(gσ_k) G_k`.
    pub fn factor(
        qp: &'a BlockQp,
        ops: &'a SparseOps,
        sigma: &'a [DVector<f64>],
        gsig: &'a [DVector<f64>],
        rho: f64,
        delta: f64,
    ) -> Option<Self> {
        let ns = qp.num_stages();
        let mut hinv = Vec::with_capacity(ns);
        for (k, s) in qp.stages.iter().enumerate() {
            let n = s.n();
            if s.dense {
                let mut h = s.p.clone();
                for i in 0..n {
                    h[(i, i)] += sigma[k][i] + rho;
                }
                if s.g.nrows() > 0 {
                    let mut sg = s.g.clone();
                    for (r, mut row) in sg.row_iter_mut().enumerate() {
                        row *= gsig[k][r];
                    }
                    h += s.g.tr_mul(&sg);
                }
                hinv.push(StageInverse::Dense(h.cholesky()?));
            } else {
                let mut d = DVector::zeros(n);
                for i in 0..n {
                    let hi = s.p[(i, i)] + sigma[k][i] + rho;
                    if !(hi > 0.0) || !hi.is_finite() {
                        return None;
                    }
                    d[i] = 1.0 / hi;
                }
                hinv.push(StageInverse::Diag(d));
            }
        }

        // B_k = [E_k; C_k] acts on stage k; D_{k-1} also acts on stage k.
        let bmat = |k: usize| -> DMatrix<f64> {
            let s = &qp.stages[k];
            match qp.couplings.get(k) {
                Some(c) if !c.e.is_empty() => {
                    let mut b = DMatrix::zeros(s.e.nrows() + c.e.len(), s.n());
                    b.rows_mut(0, s.e.nrows()).copy_from(&s.e);
                    b.rows_mut(s.e.nrows(), c.e.len()).copy_from(&c.c);
                    b
                }
                _ => s.e.clone(),
            }
        };

        let mut diag: Vec<DMatrix<f64>> = Vec::with_capacity(ns);
        let mut sub: Vec<DMatrix<f64>> = Vec::with_capacity(ns.saturating_sub(1));
        for k in 0..ns {
            let m = qp.block_rows(k);
            let mut skk = match &hinv[k] {
                StageInverse::Diag(h) => {
                    let mut out = DMatrix::zeros(m, m);
                    outer_accumulate(&mut out, &ops.b_cols[k], &ops.b_cols[k], h, 0, 0);
                    out
                }
                StageInverse::Dense(_) => {
                    let b = bmat(k);
                    &b * hinv[k].apply_mat(&b.transpose())
                }
            };
            if let Some(c) = qp.couplings.get(k) {
                let mc = c.e.len();
                let off = m - mc;
                let mut s_sub = DMatrix::zeros(qp.block_rows(k + 1), m);
                if mc > 0 {
                    match &hinv[k + 1] {
                        StageInverse::Diag(h) => {
                            outer_accumulate(&mut skk, &ops.d_cols[k], &ops.d_cols[k], h, off, off);
                            outer_accumulate(&mut s_sub, &ops.b_cols[k + 1], &ops.d_cols[k], h, 0, off);
                        }
                        StageInverse::Dense(_) => {
                            let y = hinv[k + 1].apply_mat(&c.d.transpose());
                            let mut blk = skk.view_mut((off, off), (mc, mc));
                            blk += &c.d * &y;
                            // S_{k+1,k}: rows of block k+1 against coupling columns of block k.
                            s_sub.view_mut((0, off), (s_sub.nrows(), mc)).copy_from(&(bmat(k + 1) * y));
                        }
                    }
                }
                sub.push(s_sub);
            }
            for i in 0..m {
                skk[(i, i)] += delta;
            }
            diag.push(skk);
        }

        let mut lblk: Vec<DMatrix<f64>> = Vec::with_capacity(ns);
        let mut wblk: Vec<DMatrix<f64>> = Vec::with_capacity(ns.saturating_sub(1));
        for k in 0..ns {
            let mut dk = diag[k].clone();
            if k > 0 {
                let w: &DMatrix<f64> = &wblk[k - 1];
                dk -= w * w.transpose();
            }
            let l = if dk.nrows() == 0 { dk } else { dk.cholesky()?.unpack() };
            if k + 1 < ns {
                // W_k = S_{k+1,k} L_k^{-T}
                let mut wt = sub[k].transpose();
                if l.nrows() > 0 && !l.solve_lower_triangular_mut(&mut wt) {
                    return None;
                }
                wblk.push(wt.transpose());
            }
            lblk.push(l);
        }
        Some(Self { qp, ops, sigma, gsig, hinv, lblk, wblk })
    }

    fn schur_solve(&self, r: &mut [DVector<f64>]) {
        let ns = r.len();
        for k in 0..ns {
            if k > 0 && self.wblk[k - 1].ncols() > 0 {
                let t = &self.wblk[k - 1] * &r[k - 1];
                r[k] -= t;
            }
            if self.lblk[k].nrows() > 0 {
                self.lblk[k].solve_lower_triangular_mut(&mut r[k]);
            }
        }
        for k in (0..ns).rev() {
            if k + 1 < ns && self.wblk[k].nrows() > 0 {
                let t = self.wblk[k].tr_mul(&r[k + 1]);
                r[k] -= t;
            }
            if self.lblk[k].nrows() > 0 {
                self.lblk[k].tr_solve_lower_triangular_mut(&mut r[k]);
            }
        }
    }

    fn solve_once(&self, r1: &[DVector<f64>], r2: &[DVector<f64>]) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let t: Vec<DVector<f64>> = r1.iter().zip(&self.hinv).map(|(r, h)| h.apply(r)).collect();
        let mut dy = self.ops.mul_a(&t);
        for (a, b) in dy.iter_mut().zip(r2) {
            *a -= b;
        }
        self.schur_solve(&mut dy);
        let aty = self.ops.mul_at(&dy);
        let dz = r1.iter().zip(&aty).zip(&self.hinv).map(|((r, a), h)| h.apply(&(r - a))).collect();
        (dz, dy)
    }

    /// Unregularized stage Hessian applied to `v`.
    fn apply_h(&self, k: usize, v: &DVector<f64>) -> DVector<f64> {
        let s = &self.qp.stages[k];
        let mut out = self.ops.p_mul(self.qp, k, v) + self.sigma[k].component_mul(v);
        if s.g.nrows() > 0 {
            let gv = (&s.g * v).component_mul(&self.gsig[k]);
            out += s.g.tr_mul(&gv);
        }
        out
    }

    /// Solve the unregularized system with iterative refinement.
    pub fn solve(&self, r1: &[DVector<f64>], r2: &[DVector<f64>]) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let (mut dz, mut dy) = self.solve_once(r1, r2);
        let scale = 1.0 + super::block::inf_norm(r1).max(super::block::inf_norm(r2));
        for _ in 0..3 {
            let aty = self.ops.mul_at(&dy);
            let res1: Vec<DVector<f64>> = (0..dz.len()).map(|k| &r1[k] - self.apply_h(k, &dz[k]) - &aty[k]).collect();
            let az = self.ops.mul_a(&dz);
            let res2: Vec<DVector<f64>> = r2.iter().zip(&az).map(|(r, a)| r - a).collect();
            let err = super::block::inf_norm(&res1).max(super::block::inf_norm(&res2));
            if err <= 1e-14 * scale {
                break;
            }
            let (cz, cy) = self.solve_once(&res1, &res2);
            for (a, b) in dz.iter_mut().zip(cz) {
                *a += b;
            }
            for (a, b) in dy.iter_mut().zip(cy) {
                *a += b;
            }
        }
        (dz, dy)
    }
}

/// `out[roff + i, coff + j] += Σ_l h_l a_il b_jl` over column lists of `a` and `b`.
fn outer_accumulate(
    out: &mut DMatrix<f64>,
    a: &[Vec<(usize, f64)>],
    b: &[Vec<(usize, f64)>],
    h: &DVector<f64>,
    roff: usize,
    coff: usize,
) {
    for (l, (ac, bc)) in a.iter().zip(b).enumerate() {
        for &(i, ai) in ac {
            let t = h[l] * ai;
            for &(j, bj) in bc {
                out[(roff + i, coff + j)] += t * bj;
            }
        }
    }
}
