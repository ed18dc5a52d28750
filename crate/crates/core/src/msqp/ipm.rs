//! Mehrotra predictor-corrector interior-point method on the presolved,
//! equilibrated block problem.

use nalgebra::{DMatrix, DVector};

use super::block::{inf_norm, BCoupling, BStage, BlockQp, SparseOps};
use super::linalg::Kkt;
use super::presolve::{presolve, Presolved, Reduced};
use super::{MultistageQP, QPSolution, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmOptions {
    /// Relative KKT tolerance on the scaled problem.
    pub tol: f64,
    pub max_iter: usize,
    pub ruiz_iters: usize,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100, ruiz_iters: 15 }
    }
}

struct Scaling {
    d: Vec<DVector<f64>>,
    er: Vec<DVector<f64>>,
    eg: Vec<DVector<f64>>,
    c: f64,
}

fn nonzeros(m: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[(i, j)] != 0.0 {
                out.push((i, j));
            }
        }
    }
    out
}

/// Nonzero positions of every matrix in a block problem.
struct Pattern {
    p: Vec<Vec<(usize, usize)>>,
    e: Vec<Vec<(usize, usize)>>,
    g: Vec<Vec<(usize, usize)>>,
    c: Vec<Vec<(usize, usize)>>,
    d: Vec<Vec<(usize, usize)>>,
}

impl Pattern {
    fn new(qp: &BlockQp) -> Self {
        Self {
            p: qp.stages.iter().map(|s| nonzeros(&s.p)).collect(),
            e: qp.stages.iter().map(|s| nonzeros(&s.e)).collect(),
            g: qp.stages.iter().map(|s| nonzeros(&s.g)).collect(),
            c: qp.couplings.iter().map(|c| nonzeros(&c.c)).collect(),
            d: qp.couplings.iter().map(|c| nonzeros(&c.d)).collect(),
        }
    }
}

/// Ruiz equilibration of the cost and constraint matrices, then cost scaling.
fn equilibrate(qp: &mut BlockQp, iters: usize) -> Scaling {
    let ns = qp.num_stages();
    let pat = Pattern::new(qp);
    let mut d: Vec<DVector<f64>> = qp.stages.iter().map(|s| DVector::from_element(s.n(), 1.0)).collect();
    let mut er: Vec<DVector<f64>> = (0..ns).map(|k| DVector::from_element(qp.block_rows(k), 1.0)).collect();
    let mut eg: Vec<DVector<f64>> = qp.stages.iter().map(|s| DVector::from_element(s.g.nrows(), 1.0)).collect();
    let inv_sqrt = |x: f64| if x > 1e-10 { 1.0 / x.sqrt() } else { 1.0 };

    for _ in 0..iters {
        let mut cn: Vec<DVector<f64>> = qp.stages.iter().map(|s| DVector::zeros(s.n())).collect();
        let mut rn: Vec<DVector<f64>> = (0..ns).map(|k| DVector::zeros(qp.block_rows(k))).collect();
        let mut gn: Vec<DVector<f64>> = qp.stages.iter().map(|s| DVector::zeros(s.g.nrows())).collect();
        for (k, s) in qp.stages.iter().enumerate() {
            for &(i, j) in &pat.p[k] {
                cn[k][j] = cn[k][j].max(s.p[(i, j)].abs());
            }
            for &(r, j) in &pat.e[k] {
                let a = s.e[(r, j)].abs();
                cn[k][j] = cn[k][j].max(a);
                rn[k][r] = rn[k][r].max(a);
            }
            for &(r, j) in &pat.g[k] {
                let a = s.g[(r, j)].abs();
                cn[k][j] = cn[k][j].max(a);
                gn[k][r] = gn[k][r].max(a);
            }
        }
        for (k, c) in qp.couplings.iter().enumerate() {
            let off = qp.stages[k].e.nrows();
            for &(r, j) in &pat.c[k] {
                let a = c.c[(r, j)].abs();
                cn[k][j] = cn[k][j].max(a);
                rn[k][off + r] = rn[k][off + r].max(a);
            }
            for &(r, j) in &pat.d[k] {
                let a = c.d[(r, j)].abs();
                cn[k + 1][j] = cn[k + 1][j].max(a);
                rn[k][off + r] = rn[k][off + r].max(a);
            }
        }
        let dd: Vec<DVector<f64>> = cn.iter().map(|v| v.map(inv_sqrt)).collect();
        let de: Vec<DVector<f64>> = rn.iter().map(|v| v.map(inv_sqrt)).collect();
        let dg: Vec<DVector<f64>> = gn.iter().map(|v| v.map(inv_sqrt)).collect();
        apply_scaling(qp, &pat, &dd, &de, &dg);
        for k in 0..ns {
            d[k].component_mul_assign(&dd[k]);
            er[k].component_mul_assign(&de[k]);
            eg[k].component_mul_assign(&dg[k]);
        }
    }

    let mut pmean = 0.0;
    let mut count = 0usize;
    let mut qmax: f64 = 0.0;
    for (k, s) in qp.stages.iter().enumerate() {
        let mut colmax = vec![0.0f64; s.n()];
        for &(i, j) in &pat.p[k] {
            colmax[j] = colmax[j].max(s.p[(i, j)].abs());
        }
        pmean += colmax.iter().sum::<f64>();
        count += s.n();
        if s.n() > 0 {
            qmax = qmax.max(s.q.amax());
        }
    }
    let pmean = if count > 0 { pmean / count as f64 } else { 0.0 };
    let c = (1.0 / pmean.max(qmax).max(1e-300)).clamp(1e-4, 1e4);
    for s in &mut qp.stages {
        s.p *= c;
        s.q *= c;
    }
    Scaling { d, er, eg, c }
}

fn apply_scaling(qp: &mut BlockQp, pat: &Pattern, dd: &[DVector<f64>], de: &[DVector<f64>], dg: &[DVector<f64>]) {
    let ns = qp.num_stages();
    for k in 0..ns {
        let me = qp.stages[k].e.nrows();
        let s = &mut qp.stages[k];
        for &(i, j) in &pat.p[k] {
            s.p[(i, j)] *= dd[k][i] * dd[k][j];
        }
        for j in 0..s.n() {
            s.q[j] *= dd[k][j];
            s.l[j] /= dd[k][j];
            s.u[j] /= dd[k][j];
        }
        for &(r, j) in &pat.e[k] {
            s.e[(r, j)] *= de[k][r] * dd[k][j];
        }
        for r in 0..me {
            s.f[r] *= de[k][r];
        }
        for &(r, j) in &pat.g[k] {
            s.g[(r, j)] *= dg[k][r] * dd[k][j];
        }
        for r in 0..s.g.nrows() {
            s.w[r] *= dg[k][r];
        }
        if k + 1 < ns {
            let c = &mut qp.couplings[k];
            for &(r, j) in &pat.c[k] {
                c.c[(r, j)] *= de[k][me + r] * dd[k][j];
            }
            for &(r, j) in &pat.d[k] {
                c.d[(r, j)] *= de[k][me + r] * dd[k + 1][j];
            }
            for r in 0..c.e.len() {
                c.e[r] *= de[k][me + r];
            }
        }
    }
}

#[derive(Clone)]
struct Iterate {
    z: Vec<DVector<f64>>,
    lam_l: Vec<DVector<f64>>,
    lam_u: Vec<DVector<f64>>,
    sg: Vec<DVector<f64>>,
    lam_g: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
}

struct Residuals {
    rd: Vec<DVector<f64>>,
    rp: Vec<DVector<f64>>,
    rg: Vec<DVector<f64>>,
    mu: f64,
    kkt: f64,
}

struct Problem<'a> {
    qp: &'a BlockQp,
    ops: SparseOps,
    has_l: Vec<Vec<bool>>,
    has_u: Vec<Vec<bool>>,
    n_ineq: usize,
    /// Some variable lacks a finite bound, so Farkas certificates can only
    /// be approximate.
    has_free: bool,
    b: Vec<DVector<f64>>,
}

impl<'a> Problem<'a> {
    fn new(qp: &'a BlockQp) -> Self {
        let has_l: Vec<Vec<bool>> = qp.stages.iter().map(|s| s.l.iter().map(|v| v.is_finite()).collect()).collect();
        let has_u: Vec<Vec<bool>> = qp.stages.iter().map(|s| s.u.iter().map(|v| v.is_finite()).collect()).collect();
        let n_ineq = has_l.iter().flatten().filter(|&&b| b).count()
            + has_u.iter().flatten().filter(|&&b| b).count()
            + qp.stages.iter().map(|s| s.g.nrows()).sum::<usize>();
        let has_free = has_l.iter().zip(&has_u).any(|(l, u)| l.iter().zip(u).any(|(a, b)| !(a & b)));
        Self { qp, ops: SparseOps::new(qp), has_l, has_u, n_ineq, has_free, b: qp.rhs() }
    }

    /// Iterations without progress before feasibility is checked directly.
    /// Fully bounded problems usually produce an exact certificate first.
    fn stall_window(&self) -> usize {
        if self.has_free {
            8
        } else {
            20
        }
    }

    fn cold_start(&self) -> Iterate {
        let qp = self.qp;
        let z: Vec<DVector<f64>> = qp
            .stages
            .iter()
            .map(|s| {
                DVector::from_iterator(
                    s.n(),
                    (0..s.n()).map(|i| {
                        let (l, u) = (s.l[i], s.u[i]);
                        match (l.is_finite(), u.is_finite()) {
                            (true, true) => 0.5 * (l + u),
                            (true, false) => (l + 1.0).max(0.0),
                            (false, true) => (u - 1.0).min(0.0),
                            (false, false) => 0.0,
                        }
                    }),
                )
            })
            .collect();
        self.completed(z, None)
    }

    /// Build an interior iterate around `z`, optionally reusing multipliers.
    fn completed(&self, mut z: Vec<DVector<f64>>, duals: Option<&Iterate>) -> Iterate {
        let qp = self.qp;
        let floor = 1e-2;
        for (k, s) in qp.stages.iter().enumerate() {
            for i in 0..s.n() {
                let (l, u) = (s.l[i], s.u[i]);
                let (lo, hi) = match (l.is_finite(), u.is_finite()) {
                    (true, true) => {
                        let m = 0.01 * (u - l);
                        (l + m, u - m)
                    }
                    (true, false) => (l + floor, f64::INFINITY),
                    (false, true) => (f64::NEG_INFINITY, u - floor),
                    (false, false) => (f64::NEG_INFINITY, f64::INFINITY),
                };
                z[k][i] = z[k][i].clamp(lo, hi);
            }
        }
        let lam = |k: usize, i: usize, has: bool, prev: Option<&Vec<DVector<f64>>>| {
            if !has {
                0.0
            } else {
                prev.map_or(1.0, |p| p[k][i].max(floor))
            }
        };
        let lam_l = (0..qp.num_stages())
            .map(|k| {
                DVector::from_iterator(
                    qp.stages[k].n(),
                    (0..qp.stages[k].n()).map(|i| lam(k, i, self.has_l[k][i], duals.map(|d| &d.lam_l))),
                )
            })
            .collect();
        let lam_u = (0..qp.num_stages())
            .map(|k| {
                DVector::from_iterator(
                    qp.stages[k].n(),
                    (0..qp.stages[k].n()).map(|i| lam(k, i, self.has_u[k][i], duals.map(|d| &d.lam_u))),
                )
            })
            .collect();
        let sg = qp
            .stages
            .iter()
            .zip(&z)
            .map(|(s, zk)| if s.g.nrows() == 0 { DVector::zeros(0) } else { (&s.w - &s.g * zk).map(|v| v.max(1.0)) })
            .collect();
        let lam_g = match duals {
            Some(d) => d.lam_g.iter().map(|v| v.map(|x| x.max(floor))).collect(),
            None => qp.stages.iter().map(|s| DVector::from_element(s.g.nrows(), 1.0)).collect(),
        };
        let y = match duals {
            Some(d) => d.y.clone(),
            None => qp.zeros_y(),
        };
        Iterate { z, lam_l, lam_u, sg, lam_g, y }
    }

    fn residuals(&self, it: &Iterate) -> Residuals {
        let qp = self.qp;
        let aty = self.ops.mul_at(&it.y);
        let az = self.ops.mul_a(&it.z);
        let mut rd = Vec::with_capacity(qp.num_stages());
        let mut rg = Vec::with_capacity(qp.num_stages());
        let mut comp = 0.0;
        let mut dual_scale: f64 = 0.0;
        for (k, s) in qp.stages.iter().enumerate() {
            let pz = self.ops.p_mul(qp, k, &it.z[k]);
            dual_scale = dual_scale.max(amax(&pz)).max(amax(&s.q)).max(amax(&aty[k]));
            let mut r = pz + &s.q + &aty[k] - &it.lam_l[k] + &it.lam_u[k];
            if s.g.nrows() > 0 {
                let gl = s.g.tr_mul(&it.lam_g[k]);
                dual_scale = dual_scale.max(amax(&gl));
                r += gl;
                let gz = &s.g * &it.z[k];
                rg.push(&gz + &it.sg[k] - &s.w);
                comp += it.sg[k].dot(&it.lam_g[k]);
            } else {
                rg.push(DVector::zeros(0));
            }
            for i in 0..s.n() {
                if self.has_l[k][i] {
                    comp += (it.z[k][i] - s.l[i]) * it.lam_l[k][i];
                }
                if self.has_u[k][i] {
                    comp += (s.u[i] - it.z[k][i]) * it.lam_u[k][i];
                }
            }
            rd.push(r);
        }
        let rp: Vec<DVector<f64>> = az.iter().zip(&self.b).map(|(a, b)| a - b).collect();
        let primal_scale = inf_norm(&az).max(inf_norm(&self.b));
        let gscale = qp.stages.iter().map(|s| amax(&s.w)).fold(0.0, f64::max);
        let ep = inf_norm(&rp) / (1.0 + primal_scale);
        let eg = inf_norm(&rg) / (1.0 + gscale.max(inf_norm(&it.sg)));
        let ed = inf_norm(&rd) / (1.0 + dual_scale);
        let obj = self.ops.objective(qp, &it.z);
        let ec = comp / (1.0 + obj.abs());
        let mu = if self.n_ineq > 0 { comp / self.n_ineq as f64 } else { 0.0 };
        let parts = [ep, eg, ed, ec];
        let kkt = if parts.iter().any(|v| v.is_nan()) { f64::NAN } else { ep.max(eg).max(ed).max(ec) };
        Residuals { rd, rp, rg, mu, kkt }
    }

    /// Farkas-type certificate from the current multipliers: if
    /// `min_{z ∈ box} (Aᵀy + Gᵀλ)ᵀz > bᵀy + wᵀλ`, no point satisfies the
    /// constraints. A certificate that leaves residual weight on unbounded
    /// coordinates is only approximate and needs confirmation.
    fn infeasibility_certificate(&self, it: &Iterate) -> Certificate {
        let qp = self.qp;
        let aty = self.ops.mul_at(&it.y);
        let mut lhs = 0.0;
        let mut mag = 0.0;
        let mut rhs = 0.0;
        let mut free_res: f64 = 0.0;
        let mut norm: f64 = inf_norm(&it.y);
        for (k, s) in qp.stages.iter().enumerate() {
            let mut v = aty[k].clone();
            if s.g.nrows() > 0 {
                let lam = it.lam_g[k].map(|x| x.max(0.0));
                norm = norm.max(amax(&lam));
                v += s.g.tr_mul(&lam);
                rhs += s.w.dot(&lam);
                mag += s.w.abs().dot(&lam);
            }
            for i in 0..s.n() {
                let vi = v[i];
                if vi == 0.0 {
                    continue;
                }
                let b = if vi > 0.0 { s.l[i] } else { s.u[i] };
                if !b.is_finite() {
                    free_res = free_res.max(vi.abs());
                    continue;
                }
                lhs += vi * b;
                mag += (vi * b).abs();
            }
        }
        for k in 0..qp.num_stages() {
            rhs += self.b[k].dot(&it.y[k]);
            mag += self.b[k].abs().dot(&it.y[k].abs());
        }
        let gap = lhs - rhs;
        if !(norm > 0.0 && gap > 1e-9 * mag && gap > 1e-7 * norm) {
            Certificate::None
        } else if free_res <= 1e-13 * norm {
            Certificate::Exact
        } else if gap > FREE_RADIUS * free_res {
            Certificate::Approximate
        } else {
            Certificate::None
        }
    }
}

/// Ratio of gap to unbounded-coordinate residual above which an approximate
/// certificate is worth confirming.
const FREE_RADIUS: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Certificate {
    None,
    Exact,
    Approximate,
}

fn amax(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.amax()
    }
}

struct Direction {
    dz: Vec<DVector<f64>>,
    dy: Vec<DVector<f64>>,
    dlam_l: Vec<DVector<f64>>,
    dlam_u: Vec<DVector<f64>>,
    dsg: Vec<DVector<f64>>,
    dlam_g: Vec<DVector<f64>>,
}

/// Complementarity targets `s∘λ − σμ` (+ corrector terms).
struct CompRhs {
    cl: Vec<DVector<f64>>,
    cu: Vec<DVector<f64>>,
    cg: Vec<DVector<f64>>,
}

impl Problem<'_> {
    fn slacks(&self, it: &Iterate) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let sl = self
            .qp
            .stages
            .iter()
            .enumerate()
            .map(|(k, s)| {
                DVector::from_iterator(
                    s.n(),
                    (0..s.n()).map(|i| if self.has_l[k][i] { it.z[k][i] - s.l[i] } else { 1.0 }),
                )
            })
            .collect();
        let su = self
            .qp
            .stages
            .iter()
            .enumerate()
            .map(|(k, s)| {
                DVector::from_iterator(
                    s.n(),
                    (0..s.n()).map(|i| if self.has_u[k][i] { s.u[i] - it.z[k][i] } else { 1.0 }),
                )
            })
            .collect();
        (sl, su)
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        kkt: &Kkt,
        it: &Iterate,
        res: &Residuals,
        sl: &[DVector<f64>],
        su: &[DVector<f64>],
        c: &CompRhs,
    ) -> Direction {
        let qp = self.qp;
        let ns = qp.num_stages();
        let mut r1 = Vec::with_capacity(ns);
        for (k, s) in qp.stages.iter().enumerate() {
            let mut r = -&res.rd[k];
            for i in 0..s.n() {
                if self.has_l[k][i] {
                    r[i] -= c.cl[k][i] / sl[k][i];
                }
                if self.has_u[k][i] {
                    r[i] += c.cu[k][i] / su[k][i];
                }
            }
            if s.g.nrows() > 0 {
                let t = (-&c.cg[k] + it.lam_g[k].component_mul(&res.rg[k])).component_div(&it.sg[k]);
                r -= s.g.tr_mul(&t);
            }
            r1.push(r);
        }
        let r2: Vec<DVector<f64>> = res.rp.iter().map(|v| -v).collect();
        let (dz, dy) = kkt.solve(&r1, &r2);
        let mut dlam_l = Vec::with_capacity(ns);
        let mut dlam_u = Vec::with_capacity(ns);
        let mut dsg = Vec::with_capacity(ns);
        let mut dlam_g = Vec::with_capacity(ns);
        for (k, s) in qp.stages.iter().enumerate() {
            let n = s.n();
            dlam_l.push(DVector::from_iterator(
                n,
                (0..n).map(
                    |i| {
                        if self.has_l[k][i] {
                            (-c.cl[k][i] - it.lam_l[k][i] * dz[k][i]) / sl[k][i]
                        } else {
                            0.0
                        }
                    },
                ),
            ));
            dlam_u.push(DVector::from_iterator(
                n,
                (0..n).map(
                    |i| {
                        if self.has_u[k][i] {
                            (-c.cu[k][i] + it.lam_u[k][i] * dz[k][i]) / su[k][i]
                        } else {
                            0.0
                        }
                    },
                ),
            ));
            if s.g.nrows() > 0 {
                let ds = -&res.rg[k] - &s.g * &dz[k];
                let dl = (-&c.cg[k] - it.lam_g[k].component_mul(&ds)).component_div(&it.sg[k]);
                dsg.push(ds);
                dlam_g.push(dl);
            } else {
                dsg.push(DVector::zeros(0));
                dlam_g.push(DVector::zeros(0));
            }
        }
        Direction { dz, dy, dlam_l, dlam_u, dsg, dlam_g }
    }

    /// Largest step keeping slacks and multipliers non-negative (unbounded
    /// when nothing blocks).
    fn max_step(&self, it: &Iterate, sl: &[DVector<f64>], su: &[DVector<f64>], d: &Direction) -> f64 {
        let mut a: f64 = f64::INFINITY;
        let mut limit = |x: f64, dx: f64| {
            if dx < 0.0 {
                a = a.min(-x / dx);
            }
        };
        for (k, s) in self.qp.stages.iter().enumerate() {
            for i in 0..s.n() {
                if self.has_l[k][i] {
                    limit(sl[k][i], d.dz[k][i]);
                    limit(it.lam_l[k][i], d.dlam_l[k][i]);
                }
                if self.has_u[k][i] {
                    limit(su[k][i], -d.dz[k][i]);
                    limit(it.lam_u[k][i], d.dlam_u[k][i]);
                }
            }
            for r in 0..s.g.nrows() {
                limit(it.sg[k][r], d.dsg[k][r]);
                limit(it.lam_g[k][r], d.dlam_g[k][r]);
            }
        }
        a
    }

    /// Shorten `a` until every complementarity product stays above a fixed
    /// fraction of the average, which prevents the iterates from cycling near
    /// the boundary.
    fn neighborhood_step(
        &self,
        it: &Iterate,
        sl: &[DVector<f64>],
        su: &[DVector<f64>],
        d: &Direction,
        mut a: f64,
    ) -> f64 {
        const GAMMA: f64 = 1e-3;
        if self.n_ineq == 0 {
            return a;
        }
        for _ in 0..30 {
            let mut total = 0.0;
            let mut least = f64::INFINITY;
            let mut add = |p: f64| {
                total += p;
                least = least.min(p);
            };
            for (k, s) in self.qp.stages.iter().enumerate() {
                for i in 0..s.n() {
                    if self.has_l[k][i] {
                        add((sl[k][i] + a * d.dz[k][i]) * (it.lam_l[k][i] + a * d.dlam_l[k][i]));
                    }
                    if self.has_u[k][i] {
                        add((su[k][i] - a * d.dz[k][i]) * (it.lam_u[k][i] + a * d.dlam_u[k][i]));
                    }
                }
                for r in 0..s.g.nrows() {
                    add((it.sg[k][r] + a * d.dsg[k][r]) * (it.lam_g[k][r] + a * d.dlam_g[k][r]));
                }
            }
            if least >= GAMMA * total / self.n_ineq as f64 {
                break;
            }
            a *= 0.8;
        }
        a
    }

    fn complementarity_after(
        &self,
        it: &Iterate,
        sl: &[DVector<f64>],
        su: &[DVector<f64>],
        d: &Direction,
        a: f64,
    ) -> f64 {
        let mut total = 0.0;
        for (k, s) in self.qp.stages.iter().enumerate() {
            for i in 0..s.n() {
                if self.has_l[k][i] {
                    total += (sl[k][i] + a * d.dz[k][i]) * (it.lam_l[k][i] + a * d.dlam_l[k][i]);
                }
                if self.has_u[k][i] {
                    total += (su[k][i] - a * d.dz[k][i]) * (it.lam_u[k][i] + a * d.dlam_u[k][i]);
                }
            }
            for r in 0..s.g.nrows() {
                total += (it.sg[k][r] + a * d.dsg[k][r]) * (it.lam_g[k][r] + a * d.dlam_g[k][r]);
            }
        }
        total / self.n_ineq.max(1) as f64
    }
}

fn axpy(x: &mut [DVector<f64>], a: f64, dx: &[DVector<f64>]) {
    for (xi, di) in x.iter_mut().zip(dx) {
        xi.axpy(a, di, 1.0);
    }
}

pub(crate) struct RawSolution {
    pub z: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub lam_g: Vec<DVector<f64>>,
    pub lam_l: Vec<DVector<f64>>,
    pub lam_u: Vec<DVector<f64>>,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt: f64,
}

/// Interior-point iterations on an already scaled problem.
struct Outcome {
    it: Iterate,
    status: QpStatus,
    iterations: usize,
    kkt: f64,
    /// Iterations broke down in a way that suggests infeasibility.
    suspect: bool,
}

fn outcome(it: Iterate, status: QpStatus, iterations: usize, kkt: f64, suspect: bool) -> Outcome {
    Outcome { it, status, iterations, kkt, suspect }
}

/// With `confirm`, approximate infeasibility certificates are checked
/// against the elastic problem as soon as they appear.
fn iterate(qp: &BlockQp, start: Iterate, alt: Option<Iterate>, opts: &IpmOptions, confirm: bool) -> Outcome {
    let prob = Problem::new(qp);
    let mut it = start;
    if let Some(alt) = alt {
        // Keep whichever starting point is closer to optimality.
        let a = prob.residuals(&it);
        let b = prob.residuals(&alt);
        if b.kkt.max(b.mu) < a.kkt.max(a.mu) {
            it = alt;
        }
    }
    let mut last_kkt = f64::INFINITY;
    let mut stalls = 0;
    let mut last_good = it.clone();
    let mut known_feasible = !confirm;
    let mut best_kkt = f64::INFINITY;
    let mut best_iter = 0;
    for iter in 0..opts.max_iter {
        let res = prob.residuals(&it);
        if !res.kkt.is_finite() || !res.mu.is_finite() {
            return outcome(last_good, QpStatus::MaxIter, iter, last_kkt, !known_feasible);
        }
        last_kkt = res.kkt;
        last_good.clone_from(&it);
        if res.kkt < 0.9 * best_kkt {
            best_kkt = res.kkt;
            best_iter = iter;
        } else if iter - best_iter >= prob.stall_window() && !known_feasible {
            match elastic(qp, opts) {
                Elastic::Infeasible => return outcome(it, QpStatus::Infeasible, iter, res.kkt, false),
                Elastic::Feasible(z) => {
                    // Restart from the feasible point with fresh multipliers.
                    it = prob.completed(z, None);
                    best_kkt = f64::INFINITY;
                    best_iter = iter;
                    known_feasible = true;
                    continue;
                }
                Elastic::Unknown => known_feasible = true,
            }
        }
        if res.kkt <= opts.tol {
            return outcome(it, QpStatus::Optimal, iter, res.kkt, false);
        }
        if iter > 0 {
            match prob.infeasibility_certificate(&it) {
                Certificate::Exact => return outcome(it, QpStatus::Infeasible, iter, res.kkt, false),
                Certificate::Approximate if !known_feasible => {
                    if matches!(elastic(qp, opts), Elastic::Infeasible) {
                        return outcome(it, QpStatus::Infeasible, iter, res.kkt, false);
                    }
                    known_feasible = true;
                }
                _ => {}
            }
        }
        let (sl, su) = prob.slacks(&it);
        let sigma: Vec<DVector<f64>> = (0..qp.num_stages())
            .map(|k| {
                let s = &qp.stages[k];
                DVector::from_iterator(
                    s.n(),
                    (0..s.n()).map(|i| {
                        let mut v = 0.0;
                        if prob.has_l[k][i] {
                            v += it.lam_l[k][i] / sl[k][i];
                        }
                        if prob.has_u[k][i] {
                            v += it.lam_u[k][i] / su[k][i];
                        }
                        v
                    }),
                )
            })
            .collect();
        let gsig: Vec<DVector<f64>> = it.lam_g.iter().zip(&it.sg).map(|(l, s)| l.component_div(s)).collect();
        let mut reg = 1e-10;
        let kkt = loop {
            if let Some(f) = Kkt::factor(qp, &prob.ops, &sigma, &gsig, reg, reg) {
                break Some(f);
            }
            reg *= 100.0;
            if reg > 1e-2 {
                break None;
            }
        };
        let Some(kkt) = kkt else {
            return outcome(it, QpStatus::MaxIter, iter, res.kkt, !known_feasible);
        };

        // Predictor.
        let prod = |a: &[DVector<f64>], b: &[DVector<f64>]| -> Vec<DVector<f64>> {
            a.iter().zip(b).map(|(x, y)| x.component_mul(y)).collect()
        };
        let mask = |v: Vec<DVector<f64>>, has: &Vec<Vec<bool>>| -> Vec<DVector<f64>> {
            v.into_iter()
                .zip(has)
                .map(|(x, h)| DVector::from_iterator(x.len(), x.iter().zip(h).map(|(v, &b)| if b { *v } else { 0.0 })))
                .collect()
        };
        let base = CompRhs {
            cl: mask(prod(&sl, &it.lam_l), &prob.has_l),
            cu: mask(prod(&su, &it.lam_u), &prob.has_u),
            cg: prod(&it.sg, &it.lam_g),
        };
        let aff = prob.direction(&kkt, &it, &res, &sl, &su, &base);
        let a_aff = prob.max_step(&it, &sl, &su, &aff).min(1.0);
        let sigma_c = if prob.n_ineq > 0 && res.mu > 0.0 {
            let mu_aff = prob.complementarity_after(&it, &sl, &su, &aff, a_aff);
            (mu_aff / res.mu).powi(3).min(1.0)
        } else {
            0.0
        };
        let target = sigma_c * res.mu;

        // Corrector.
        let corr =
            |base: &Vec<DVector<f64>>, ds: Vec<DVector<f64>>, dl: &[DVector<f64>], has: Option<&Vec<Vec<bool>>>| {
                base.iter()
                    .zip(ds.iter().zip(dl))
                    .enumerate()
                    .map(|(k, (b, (s, l)))| {
                        DVector::from_iterator(
                            b.len(),
                            (0..b.len()).map(|i| {
                                if has.is_some_and(|h| !h[k][i]) {
                                    0.0
                                } else {
                                    b[i] + s[i] * l[i] - target
                                }
                            }),
                        )
                    })
                    .collect::<Vec<_>>()
            };
        let neg_dz: Vec<DVector<f64>> = aff.dz.iter().map(|v| -v).collect();
        let cc = CompRhs {
            cl: corr(&base.cl, aff.dz.clone(), &aff.dlam_l, Some(&prob.has_l)),
            cu: corr(&base.cu, neg_dz, &aff.dlam_u, Some(&prob.has_u)),
            cg: corr(&base.cg, aff.dsg.clone(), &aff.dlam_g, None),
        };
        let dir = prob.direction(&kkt, &it, &res, &sl, &su, &cc);
        let a_max = prob.max_step(&it, &sl, &su, &dir);
        let full = (0.995 * a_max).min(1.0);
        let mut a = prob.neighborhood_step(&it, &sl, &su, &dir, full);
        let mut dir = dir;
        if a < 0.5 * full {
            // Poorly centred iterate: fall back to plain centring directions.
            for sigma in [0.1, 0.5, 0.9] {
                let t = sigma * res.mu;
                let shift = |v: &Vec<DVector<f64>>, has: Option<&Vec<Vec<bool>>>| -> Vec<DVector<f64>> {
                    v.iter()
                        .enumerate()
                        .map(|(k, b)| {
                            DVector::from_iterator(
                                b.len(),
                                (0..b.len()).map(|i| if has.is_some_and(|h| !h[k][i]) { 0.0 } else { b[i] - t }),
                            )
                        })
                        .collect()
                };
                let centred = CompRhs {
                    cl: shift(&base.cl, Some(&prob.has_l)),
                    cu: shift(&base.cu, Some(&prob.has_u)),
                    cg: shift(&base.cg, None),
                };
                let d = prob.direction(&kkt, &it, &res, &sl, &su, &centred);
                let f = (0.995 * prob.max_step(&it, &sl, &su, &d)).min(1.0);
                let ac = prob.neighborhood_step(&it, &sl, &su, &d, f);
                if ac > a {
                    a = ac;
                    dir = d;
                }
            }
        }
        if a < 1e-10 {
            stalls += 1;
            if stalls > 3 {
                return outcome(it, QpStatus::MaxIter, iter, res.kkt, !known_feasible);
            }
        }
        axpy(&mut it.z, a, &dir.dz);
        axpy(&mut it.y, a, &dir.dy);
        axpy(&mut it.lam_l, a, &dir.dlam_l);
        axpy(&mut it.lam_u, a, &dir.dlam_u);
        axpy(&mut it.sg, a, &dir.dsg);
        axpy(&mut it.lam_g, a, &dir.dlam_g);
    }
    let res = prob.residuals(&it);
    if res.kkt <= opts.tol {
        return outcome(it, QpStatus::Optimal, opts.max_iter, res.kkt, false);
    }
    match prob.infeasibility_certificate(&it) {
        Certificate::Exact => outcome(it, QpStatus::Infeasible, opts.max_iter, res.kkt, false),
        cert => outcome(
            it,
            QpStatus::MaxIter,
            opts.max_iter,
            last_kkt.min(res.kkt),
            cert == Certificate::Approximate && !known_feasible,
        ),
    }
}

fn solve_reduced(red: &Reduced, warm: Option<&QPSolution>, opts: &IpmOptions) -> RawSolution {
    let mut qp = red.problem.clone();
    let sc = equilibrate(&mut qp, opts.ruiz_iters);
    let prob = Problem::new(&qp);
    let cold = prob.cold_start();
    let warm_it = warm.map(|w| {
        let (z, y, lam_g) = red.restrict(w);
        let zs: Vec<DVector<f64>> = z.iter().zip(&sc.d).map(|(z, d)| z.component_div(d)).collect();
        let ys: Vec<DVector<f64>> = y.iter().zip(&sc.er).map(|(y, e)| y.component_div(e) * sc.c).collect();
        let gs: Vec<DVector<f64>> = lam_g.iter().zip(&sc.eg).map(|(l, e)| l.component_div(e) * sc.c).collect();
        let bl = |src: &Vec<DVector<f64>>| -> Vec<DVector<f64>> {
            red.cols
                .iter()
                .enumerate()
                .map(|(k, cols)| {
                    DVector::from_iterator(
                        cols.len(),
                        cols.iter().enumerate().map(|(i, &j)| src[k][j] * sc.c * sc.d[k][i]),
                    )
                })
                .collect()
        };
        let seed = Iterate {
            z: zs.clone(),
            lam_l: bl(&w.lam_lower),
            lam_u: bl(&w.lam_upper),
            sg: Vec::new(),
            lam_g: gs,
            y: ys,
        };
        prob.completed(zs, Some(&seed))
    });
    let out = match warm_it {
        Some(w) => iterate(&qp, w, Some(cold), opts, true),
        None => iterate(&qp, cold, None, opts, true),
    };
    drop(prob);
    let Outcome { it, mut status, iterations, kkt, suspect } = out;
    if suspect && matches!(elastic(&qp, opts), Elastic::Infeasible) {
        status = QpStatus::Infeasible;
    }
    RawSolution {
        z: it.z.iter().zip(&sc.d).map(|(z, d)| z.component_mul(d)).collect(),
        y: it.y.iter().zip(&sc.er).map(|(y, e)| y.component_mul(e) / sc.c).collect(),
        lam_g: it.lam_g.iter().zip(&sc.eg).map(|(l, e)| l.component_mul(e) / sc.c).collect(),
        lam_l: it.lam_l.iter().zip(&sc.d).map(|(l, d)| l.component_div(d) / sc.c).collect(),
        lam_u: it.lam_u.iter().zip(&sc.d).map(|(l, d)| l.component_div(d) / sc.c).collect(),
        status,
        iterations,
        kkt,
    }
}

enum Elastic {
    Infeasible,
    /// A point with negligible violation.
    Feasible(Vec<DVector<f64>>),
    Unknown,
}

/// Decide feasibility of a scaled problem by minimizing the total constraint
/// violation. The elastic problem is always feasible, so the interior-point
/// iterations converge where the original ones broke down.
fn elastic(qp: &BlockQp, opts: &IpmOptions) -> Elastic {
    let ns = qp.num_stages();
    let mut stages = Vec::with_capacity(ns);
    let mut couplings = Vec::with_capacity(ns.saturating_sub(1));
    let mut extra = Vec::with_capacity(ns);
    for k in 0..ns {
        let s = &qp.stages[k];
        let (n, me, mg) = (s.n(), s.e.nrows(), s.g.nrows());
        let mc = qp.couplings.get(k).map_or(0, |c| c.e.len());
        let nt = 2 * me + 2 * mc + mg;
        let nn = n + nt;
        let mut p = DMatrix::zeros(nn, nn);
        for i in 0..n {
            p[(i, i)] = 1e-8;
        }
        let mut q = DVector::zeros(nn);
        q.rows_mut(n, nt).fill(1.0);
        let mut l = DVector::zeros(nn);
        l.rows_mut(0, n).copy_from(&s.l);
        let mut u = DVector::from_element(nn, f64::INFINITY);
        u.rows_mut(0, n).copy_from(&s.u);
        let mut e = DMatrix::zeros(me, nn);
        e.view_mut((0, 0), (me, n)).copy_from(&s.e);
        for r in 0..me {
            e[(r, n + r)] = 1.0;
            e[(r, n + me + r)] = -1.0;
        }
        let mut g = DMatrix::zeros(mg, nn);
        g.view_mut((0, 0), (mg, n)).copy_from(&s.g);
        for r in 0..mg {
            g[(r, n + 2 * me + 2 * mc + r)] = -1.0;
        }
        let mut st = BStage { p, q, l, u, g, w: s.w.clone(), e, f: s.f.clone(), dense: false };
        st.detect_dense();
        stages.push(st);
        extra.push((n, me, mc));
    }
    for (k, c) in qp.couplings.iter().enumerate() {
        let (n, me, mc) = extra[k];
        let mut cc = DMatrix::zeros(mc, stages[k].n());
        cc.view_mut((0, 0), (mc, n)).copy_from(&c.c);
        for r in 0..mc {
            cc[(r, n + 2 * me + r)] = 1.0;
            cc[(r, n + 2 * me + mc + r)] = -1.0;
        }
        let mut dd = DMatrix::zeros(mc, stages[k + 1].n());
        dd.view_mut((0, 0), (mc, extra[k + 1].0)).copy_from(&c.d);
        couplings.push(BCoupling { c: cc, d: dd, e: c.e.clone() });
    }
    let elastic = BlockQp { stages, couplings };
    let prob = Problem::new(&elastic);
    let start = prob.cold_start();
    drop(prob);
    let out =
        iterate(&elastic, start, None, &IpmOptions { tol: 1e-8, max_iter: opts.max_iter.max(100), ..*opts }, false);
    if out.status != QpStatus::Optimal && !(out.kkt <= 1e-6) {
        return Elastic::Unknown;
    }
    let violation: f64 = out.it.z.iter().zip(&extra).map(|(z, &(n, _, _))| z.rows(n, z.len() - n).sum()).sum();
    let scale = 1.0 + qp.rhs().iter().chain(qp.stages.iter().map(|s| &s.w)).map(amax).fold(0.0, f64::max);
    if violation > 1e-6 * scale {
        Elastic::Infeasible
    } else {
        Elastic::Feasible(out.it.z.iter().zip(&extra).map(|(z, &(n, _, _))| z.rows(0, n).into_owned()).collect())
    }
}

fn infeasible_solution(qp: &MultistageQP) -> QPSolution {
    QPSolution {
        z: qp.stages.iter().map(|s| DVector::zeros(s.n())).collect(),
        y_local: qp.stages.iter().map(|s| DVector::zeros(s.f.len())).collect(),
        y_couple: qp.couplings.iter().map(|c| DVector::zeros(c.e.len())).collect(),
        lam_g: qp.stages.iter().map(|s| DVector::zeros(s.w.len())).collect(),
        lam_lower: qp.stages.iter().map(|s| DVector::zeros(s.n())).collect(),
        lam_upper: qp.stages.iter().map(|s| DVector::zeros(s.n())).collect(),
        objective: f64::INFINITY,
        status: QpStatus::Infeasible,
        kkt_residual: f64::INFINITY,
        iterations: 0,
        bound: f64::INFINITY,
    }
}

pub(crate) fn solve(qp: &MultistageQP, warm: Option<&QPSolution>, opts: &IpmOptions) -> QPSolution {
    let red = match presolve(qp) {
        Presolved::Infeasible => return infeasible_solution(qp),
        Presolved::Reduced(r) => r,
    };
    let raw = solve_reduced(&red, warm, opts);
    if raw.status == QpStatus::Infeasible {
        let mut s = infeasible_solution(qp);
        s.iterations = raw.iterations;
        return s;
    }
    let ns = qp.stages.len();
    let full_n: Vec<usize> = qp.stages.iter().map(|s| s.n()).collect();
    let z = red.expand_z(&raw.z);
    let mut y_local = Vec::with_capacity(ns);
    let mut y_couple = Vec::with_capacity(ns.saturating_sub(1));
    for k in 0..ns {
        let me = red.e_rows[k].len();
        let mut yl = DVector::zeros(qp.stages[k].f.len());
        for (i, &r) in red.e_rows[k].iter().enumerate() {
            yl[r] = raw.y[k][i];
        }
        y_local.push(yl);
        if k + 1 < ns {
            let mut yc = DVector::zeros(qp.couplings[k].e.len());
            for (i, &r) in red.c_rows[k].iter().enumerate() {
                yc[r] = raw.y[k][me + i];
            }
            y_couple.push(yc);
        }
    }
    let full_g: Vec<usize> = qp.stages.iter().map(|s| s.w.len()).collect();
    let lam_g = Reduced::scatter(&red.g_rows, &raw.lam_g, &full_g);
    let lam_lower = Reduced::scatter(&red.cols, &raw.lam_l, &full_n);
    let lam_upper = Reduced::scatter(&red.cols, &raw.lam_u, &full_n);
    let objective = qp.objective(&z);
    let bound =
        red.problem.lagrangian_bound(&raw.z, &raw.y, &raw.lam_g, raw.status == QpStatus::Optimal) + red.constant;
    QPSolution {
        z,
        y_local,
        y_couple,
        lam_g,
        lam_lower,
        lam_upper,
        objective,
        status: raw.status,
        kkt_residual: raw.kkt,
        iterations: raw.iterations,
        bound,
    }
}
