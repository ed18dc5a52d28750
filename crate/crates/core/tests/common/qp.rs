//! Dense reference QP solver by active-set enumeration, for small strictly
//! convex problems only.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use uasplan::msqp::{MultistageQP, QpCoupling, QpStage};

pub struct DenseQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Inequalities `g z ≤ h`, boxes included.
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub constant: f64,
}

pub fn flatten(qp: &MultistageQP) -> DenseQp {
    let offs: Vec<usize> = qp
        .stages
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s.n();
            Some(o)
        })
        .collect();
    let n = qp.num_vars();
    let mut p = DMatrix::zeros(n, n);
    let mut q = DVector::zeros(n);
    let mut eq: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut le: Vec<(Vec<f64>, f64)> = Vec::new();
    for (k, s) in qp.stages.iter().enumerate() {
        let o = offs[k];
        p.view_mut((o, o), (s.n(), s.n())).copy_from(&s.p);
        q.rows_mut(o, s.n()).copy_from(&s.q);
        for r in 0..s.e.nrows() {
            let mut row = vec![0.0; n];
            for j in 0..s.n() {
                row[o + j] = s.e[(r, j)];
            }
            eq.push((row, s.f[r]));
        }
        for r in 0..s.g.nrows() {
            let mut row = vec![0.0; n];
            for j in 0..s.n() {
                row[o + j] = s.g[(r, j)];
            }
            le.push((row, s.w[r]));
        }
        for j in 0..s.n() {
            if s.upper[j].is_finite() {
                let mut row = vec![0.0; n];
                row[o + j] = 1.0;
                le.push((row, s.upper[j]));
            }
            if s.lower[j].is_finite() {
                let mut row = vec![0.0; n];
                row[o + j] = -1.0;
                le.push((row, -s.lower[j]));
            }
        }
    }
    for (k, c) in qp.couplings.iter().enumerate() {
        for r in 0..c.e.len() {
            let mut row = vec![0.0; n];
            for j in 0..c.c.ncols() {
                row[offs[k] + j] = c.c[(r, j)];
            }
            for j in 0..c.d.ncols() {
                row[offs[k + 1] + j] = c.d[(r, j)];
            }
            eq.push((row, c.e[r]));
        }
    }
    let to_mat = |rows: &[(Vec<f64>, f64)]| {
        (
            DMatrix::from_fn(rows.len(), n, |i, j| rows[i].0[j]),
            DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1)),
        )
    };
    let (a, b) = to_mat(&eq);
    let (g, h) = to_mat(&le);
    DenseQp { p, q, a, b, g, h, constant: qp.constant }
}

pub struct OracleSolution {
    pub z: DVector<f64>,
    pub objective: f64,
}

fn subsets(m: usize, max: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(start: usize, m: usize, max: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        f(cur);
        if cur.len() == max {
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(i + 1, m, max, cur, f);
            cur.pop();
        }
    }
    rec(0, m, max, &mut Vec::new(), f);
}

/// Global optimum of a strictly convex QP, or `None` if infeasible.
pub fn solve_dense(d: &DenseQp) -> Option<OracleSolution> {
    let n = d.p.nrows();
    let me = d.a.nrows();
    let mut best: Option<OracleSolution> = None;
    subsets(d.g.nrows(), n.saturating_sub(me), &mut |w| {
        let m = me + w.len();
        if m > n {
            return;
        }
        let mut k = DMatrix::zeros(n + m, n + m);
        let mut rhs = DVector::zeros(n + m);
        k.view_mut((0, 0), (n, n)).copy_from(&d.p);
        rhs.rows_mut(0, n).copy_from(&(-&d.q));
        for r in 0..me {
            for j in 0..n {
                k[(n + r, j)] = d.a[(r, j)];
                k[(j, n + r)] = d.a[(r, j)];
            }
            rhs[n + r] = d.b[r];
        }
        for (i, &r) in w.iter().enumerate() {
            for j in 0..n {
                k[(n + me + i, j)] = d.g[(r, j)];
                k[(j, n + me + i)] = d.g[(r, j)];
            }
            rhs[n + me + i] = d.h[r];
        }
        let Some(sol) = k.clone().lu().solve(&rhs) else { return };
        if sol.iter().any(|v| !v.is_finite()) || (&k * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
            return;
        }
        let z = sol.rows(0, n).into_owned();
        let zn = z.amax();
        if (0..w.len()).any(|i| sol[n + me + i] < -1e-9 * (1.0 + sol.amax())) {
            return;
        }
        let row_tol = |row: nalgebra::DMatrixView<f64>, rhs: f64| 1e-8 * (1.0 + rhs.abs() + row.amax() * zn);
        for r in 0..d.g.nrows() {
            let row = d.g.rows(r, 1);
            if (row * &z)[0] - d.h[r] > row_tol(row, d.h[r]) {
                return;
            }
        }
        for r in 0..me {
            let row = d.a.rows(r, 1);
            if ((row * &z)[0] - d.b[r]).abs() > row_tol(row, d.b[r]) {
                return;
            }
        }
        let objective = 0.5 * z.dot(&(&d.p * &z)) + d.q.dot(&z) + d.constant;
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(OracleSolution { z, objective });
        }
    });
    best
}

/// Random strictly convex multistage QP built around a feasible point, with
/// optional badly scaled rows and columns.
pub fn random_multistage(rng: &mut ChaCha8Rng, stages: usize, n: usize, badly_scaled: bool) -> MultistageQP {
    let zstar: Vec<DVector<f64>> = (0..stages).map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-0.8..0.8))).collect();
    let colscale: Vec<DVector<f64>> = (0..stages)
        .map(|_| DVector::from_fn(n, |_, _| if badly_scaled { 10f64.powf(rng.gen_range(-2.0..2.0)) } else { 1.0 }))
        .collect();
    let mut out = Vec::new();
    for k in 0..stages {
        let mut s = QpStage::new(n);
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        s.p = if k % 2 == 0 {
            &m * m.transpose() + DMatrix::identity(n, n) * 0.1
        } else {
            DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.gen_range(0.1..2.0)))
        };
        s.q = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
        for j in 0..n {
            if rng.gen_bool(0.85) {
                s.lower[j] = -1.0;
            }
            if rng.gen_bool(0.85) {
                s.upper[j] = 1.0;
            }
        }
        let g = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let slack = rng.gen_range(0.0..0.5);
        s.push_le(g.as_slice(), g.dot(&zstar[k]) + slack);
        if k == 0 {
            let e = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            s.push_eq(e.as_slice(), e.dot(&zstar[0]));
        }
        out.push(s);
    }
    let couplings = (0..stages - 1)
        .map(|k| {
            let mc = (n / 2).max(1);
            let c = DMatrix::from_fn(mc, n, |_, _| rng.gen_range(-1.0..1.0));
            let d = DMatrix::from_fn(mc, n, |_, _| rng.gen_range(-1.0..1.0));
            let e = &c * &zstar[k] + &d * &zstar[k + 1];
            QpCoupling { c, d, e }
        })
        .collect();
    let mut qp = MultistageQP { stages: out, couplings, constant: rng.gen_range(-1.0..1.0) };
    if badly_scaled {
        // Substitute z = S z' and scale every row of stage k by a random power of ten.
        for (k, s) in qp.stages.iter_mut().enumerate() {
            let sc = &colscale[k];
            for i in 0..n {
                for j in 0..n {
                    s.p[(i, j)] *= sc[i] * sc[j];
                }
                s.q[i] *= sc[i];
                s.lower[i] /= sc[i];
                s.upper[i] /= sc[i];
            }
            for j in 0..n {
                for r in 0..s.g.nrows() {
                    s.g[(r, j)] *= sc[j];
                }
                for r in 0..s.e.nrows() {
                    s.e[(r, j)] *= sc[j];
                }
            }
            let rs = 10f64.powf(rng.gen_range(-3.0..3.0));
            s.g *= rs;
            s.w *= rs;
        }
        for (k, c) in qp.couplings.iter_mut().enumerate() {
            for j in 0..n {
                for r in 0..c.e.len() {
                    c.c[(r, j)] *= colscale[k][j];
                    c.d[(r, j)] *= colscale[k + 1][j];
                }
            }
            let rs = 10f64.powf(rng.gen_range(-3.0..3.0));
            c.c *= rs;
            c.d *= rs;
            c.e *= rs;
        }
    }
    qp
}
