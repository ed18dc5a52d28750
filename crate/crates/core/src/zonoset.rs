//! Zonotope, constrained zonotope and hybrid zonotope set representations.
//!
//! A constrained zonotope `⟨G, c, A, b⟩` is the set `{Gξ + c : ‖ξ‖∞ ≤ 1, Aξ = b}`.
//! A hybrid zonotope adds binary factors `ξ_b ∈ {−1, 1}^nb` with their own
//! generator and constraint columns. Membership and support queries go through
//! the dense simplex in [`crate::lp`].

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::lp::{LinearProgram, LpError, LpOutcome};

/// Tolerance used to identify duplicate vertices.
pub const VERTEX_DEDUP_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SetError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("polytope is unbounded")]
    Unbounded,
    #[error("set is empty")]
    Empty,
    #[error("too many binary factors for enumeration ({0})")]
    TooManyBinaries(usize),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// `{G ξ + c : ξ ∈ [−1, 1]^ng}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope {
    pub g: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl Zonotope {
    pub fn new(g: DMatrix<f64>, c: DVector<f64>) -> Result<Self, SetError> {
        if g.nrows() != c.len() {
            return Err(SetError::Dimension(format!("generator rows {} vs center {}", g.nrows(), c.len())));
        }
        Ok(Self { g, c })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn into_conzono(self) -> ConstrainedZonotope {
        let ng = self.g.ncols();
        ConstrainedZonotope { g: self.g, c: self.c, a: DMatrix::zeros(0, ng), b: DVector::zeros(0) }
    }
}

/// `{G ξ + c : ξ ∈ [−1, 1]^ng, A ξ = b}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedZonotope {
    pub g: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Closed interval per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl IntervalBox {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter().enumerate().all(|(i, &v)| v >= self.lower[i] - tol && v <= self.upper[i] + tol)
    }
}

impl ConstrainedZonotope {
    pub fn new(g: DMatrix<f64>, c: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, SetError> {
        if g.nrows() != c.len() {
            return Err(SetError::Dimension(format!("generator rows {} vs center {}", g.nrows(), c.len())));
        }
        if a.ncols() != g.ncols() {
            return Err(SetError::Dimension(format!("constraint columns {} vs factors {}", a.ncols(), g.ncols())));
        }
        if a.nrows() != b.len() {
            return Err(SetError::Dimension(format!("constraint rows {} vs rhs {}", a.nrows(), b.len())));
        }
        Ok(Self { g, c, a, b })
    }

    /// Axis-aligned box `[lower, upper]` as a zonotope (no constraints).
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Self {
        let n = lower.len();
        let g = DMatrix::from_fn(n, n, |i, j| if i == j { 0.5 * (upper[i] - lower[i]) } else { 0.0 });
        let c = DVector::from_fn(n, |i, _| 0.5 * (upper[i] + lower[i]));
        Zonotope { g, c }.into_conzono()
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn num_factors(&self) -> usize {
        self.g.ncols()
    }

    pub fn num_constraints(&self) -> usize {
        self.a.nrows()
    }

    /// Cartesian product `self × other`.
    pub fn cartesian(&self, other: &ConstrainedZonotope) -> ConstrainedZonotope {
        let (n1, n2) = (self.dim(), other.dim());
        let (g1, g2) = (self.num_factors(), other.num_factors());
        let (c1, c2) = (self.num_constraints(), other.num_constraints());
        let mut g = DMatrix::zeros(n1 + n2, g1 + g2);
        g.view_mut((0, 0), (n1, g1)).copy_from(&self.g);
        g.view_mut((n1, g1), (n2, g2)).copy_from(&other.g);
        let mut a = DMatrix::zeros(c1 + c2, g1 + g2);
        a.view_mut((0, 0), (c1, g1)).copy_from(&self.a);
        a.view_mut((c1, g1), (c2, g2)).copy_from(&other.a);
        let c = DVector::from_iterator(n1 + n2, self.c.iter().chain(other.c.iter()).copied());
        let b = DVector::from_iterator(c1 + c2, self.b.iter().chain(other.b.iter()).copied());
        ConstrainedZonotope { g, c, a, b }
    }

    fn factor_lp(&self) -> LinearProgram {
        let ng = self.num_factors();
        let mut lp = LinearProgram::new(ng);
        lp.set_all_bounds(-1.0, 1.0);
        for i in 0..self.num_constraints() {
            let row: Vec<f64> = self.a.row(i).iter().copied().collect();
            lp.add_eq(&row, self.b[i]);
        }
        lp
    }

    /// Support value `max dᵀx` over the set; `None` when the set is empty.
    pub fn support(&self, direction: &[f64]) -> Result<Option<f64>, SetError> {
        let n = self.dim();
        if direction.len() != n {
            return Err(SetError::Dimension(format!("direction {} vs set {}", direction.len(), n)));
        }
        let d = DVector::from_column_slice(direction);
        let w = self.g.transpose() * &d;
        let mut lp = self.factor_lp();
        let cost: Vec<f64> = w.iter().map(|v| -v).collect();
        lp.set_cost(&cost);
        match lp.solve()? {
            LpOutcome::Optimal { objective, .. } => Ok(Some(-objective + d.dot(&self.c))),
            LpOutcome::Infeasible => Ok(None),
            LpOutcome::Unbounded => unreachable!("factors are bounded"),
        }
    }

    pub fn is_empty(&self) -> Result<bool, SetError> {
        Ok(!self.factor_lp().solve()?.is_feasible())
    }

    /// Per-coordinate bounds from `2n` support LPs.
    pub fn bounding_box(&self) -> Result<IntervalBox, SetError> {
        let n = self.dim();
        let mut lower = DVector::zeros(n);
        let mut upper = DVector::zeros(n);
        let mut e = vec![0.0; n];
        for i in 0..n {
            e[i] = 1.0;
            upper[i] = self.support(&e)?.ok_or(SetError::Empty)?;
            e[i] = -1.0;
            lower[i] = -self.support(&e)?.ok_or(SetError::Empty)?;
            e[i] = 0.0;
        }
        Ok(IntervalBox { lower, upper })
    }

    /// Feasibility LP: ∃ξ ∈ [−1,1]^ng with Aξ = b and ‖Gξ + c − x‖∞ ≤ tol.
    pub fn contains(&self, x: &[f64], tol: f64) -> Result<bool, SetError> {
        let n = self.dim();
        if x.len() != n {
            return Err(SetError::Dimension(format!("point {} vs set {}", x.len(), n)));
        }
        let mut lp = self.factor_lp();
        for i in 0..n {
            let row: Vec<f64> = self.g.row(i).iter().copied().collect();
            let r = x[i] - self.c[i];
            lp.add_le(&row, r + tol);
            lp.add_ge(&row, r - tol);
        }
        Ok(lp.solve()?.is_feasible())
    }

    /// `self ∩ {x : aᵀx ≤ beta}` with one extra factor and one extra constraint.
    pub fn intersect_halfspace(&self, a: &[f64], beta: f64) -> Result<ConstrainedZonotope, SetError> {
        let n = self.dim();
        if a.len() != n {
            return Err(SetError::Dimension(format!("halfspace {} vs set {}", a.len(), n)));
        }
        let av = DVector::from_column_slice(a);
        let ag = self.g.transpose() * &av;
        // Lower bound of aᵀx over the unconstrained zonotope.
        let lowest = av.dot(&self.c) - ag.iter().map(|v| v.abs()).sum::<f64>();
        // A halfspace below the whole zonotope yields aᵀx = β, which is infeasible.
        let d = (beta - lowest).max(0.0);
        let ng = self.num_factors();
        let nc = self.num_constraints();

        let mut g = DMatrix::zeros(n, ng + 1);
        g.view_mut((0, 0), (n, ng)).copy_from(&self.g);
        let mut amat = DMatrix::zeros(nc + 1, ng + 1);
        amat.view_mut((0, 0), (nc, ng)).copy_from(&self.a);
        for j in 0..ng {
            amat[(nc, j)] = ag[j];
        }
        amat[(nc, ng)] = 0.5 * d;
        let mut b = DVector::zeros(nc + 1);
        b.rows_mut(0, nc).copy_from(&self.b);
        b[nc] = beta - av.dot(&self.c) - 0.5 * d;
        Ok(ConstrainedZonotope { g, c: self.c.clone(), a: amat, b })
    }

    /// Image under `x ↦ M x`.
    pub fn linear_map(&self, m: &DMatrix<f64>) -> ConstrainedZonotope {
        ConstrainedZonotope { g: m * &self.g, c: m * &self.c, a: self.a.clone(), b: self.b.clone() }
    }
}

/// Convert `{x : Hx ≤ f}` to a constrained zonotope: bounding box from support
/// LPs, then one slack factor and one equality per inequality row.
pub fn conzono_from_hrep(h: &DMatrix<f64>, f: &DVector<f64>) -> Result<ConstrainedZonotope, SetError> {
    let (m, n) = h.shape();
    if f.len() != m {
        return Err(SetError::Dimension(format!("H rows {} vs f {}", m, f.len())));
    }
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let mut lp = LinearProgram::new(n);
            let mut cost = vec![0.0; n];
            cost[i] = -sign;
            lp.set_cost(&cost);
            for r in 0..m {
                let row: Vec<f64> = h.row(r).iter().copied().collect();
                lp.add_le(&row, f[r]);
            }
            match lp.solve()? {
                LpOutcome::Optimal { objective, .. } => {
                    if sign > 0.0 {
                        upper[i] = -objective;
                    } else {
                        lower[i] = objective;
                    }
                }
                LpOutcome::Infeasible => return Err(SetError::Empty),
                LpOutcome::Unbounded => return Err(SetError::Unbounded),
            }
        }
    }
    let bbox = ConstrainedZonotope::from_box(&lower, &upper);
    let hg = h * &bbox.g;
    let hc = h * &bbox.c;

    let mut g = DMatrix::zeros(n, n + m);
    g.view_mut((0, 0), (n, n)).copy_from(&bbox.g);
    let mut a = DMatrix::zeros(m, n + m);
    a.view_mut((0, 0), (m, n)).copy_from(&hg);
    let mut b = DVector::zeros(m);
    for r in 0..m {
        let lowest = hc[r] - hg.row(r).iter().map(|v| v.abs()).sum::<f64>();
        let d = (f[r] - lowest).max(0.0);
        a[(r, n + r)] = 0.5 * d;
        b[r] = f[r] - hc[r] - 0.5 * d;
    }
    Ok(ConstrainedZonotope { g, c: bbox.c, a, b })
}

/// Polytope given by its vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct VPolytope {
    vertices: Vec<DVector<f64>>,
}

impl VPolytope {
    pub fn new(vertices: Vec<DVector<f64>>) -> Result<Self, SetError> {
        let Some(first) = vertices.first() else {
            return Err(SetError::Dimension("polytope needs at least one vertex".into()));
        };
        let n = first.len();
        if vertices.iter().any(|v| v.len() != n) {
            return Err(SetError::Dimension("vertices of differing dimension".into()));
        }
        if vertices.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(SetError::Dimension("non-finite vertex".into()));
        }
        let mut unique: Vec<DVector<f64>> = Vec::with_capacity(vertices.len());
        for v in vertices {
            if !unique.iter().any(|u| (u - &v).amax() <= VERTEX_DEDUP_TOL) {
                unique.push(v);
            }
        }
        Ok(Self { vertices: unique })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self, SetError> {
        Self::new(points.iter().map(|p| DVector::from_column_slice(p)).collect())
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }
}

/// `{[Gc Gb][ξc; ξb] + c : ξc ∈ [−1,1]^ng, ξb ∈ {−1,1}^nb, [Ac Ab][ξc; ξb] = b}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridZonotope {
    pub gc: DMatrix<f64>,
    pub gb: DMatrix<f64>,
    pub c: DVector<f64>,
    pub ac: DMatrix<f64>,
    pub ab: DMatrix<f64>,
    pub b: DVector<f64>,
    /// One-hot groups over binary columns; exactly one member of a group is +1.
    pub binary_groups: Vec<Vec<usize>>,
}

impl HybridZonotope {
    pub fn new(
        gc: DMatrix<f64>,
        gb: DMatrix<f64>,
        c: DVector<f64>,
        ac: DMatrix<f64>,
        ab: DMatrix<f64>,
        b: DVector<f64>,
        binary_groups: Vec<Vec<usize>>,
    ) -> Result<Self, SetError> {
        let n = c.len();
        let nc = b.len();
        if gc.nrows() != n || gb.nrows() != n {
            return Err(SetError::Dimension("generator rows vs center".into()));
        }
        if ac.nrows() != nc || ab.nrows() != nc {
            return Err(SetError::Dimension("constraint rows vs rhs".into()));
        }
        if ac.ncols() != gc.ncols() || ab.ncols() != gb.ncols() {
            return Err(SetError::Dimension("constraint columns vs factors".into()));
        }
        let mut seen = vec![false; gb.ncols()];
        for group in &binary_groups {
            for &i in group {
                if i >= seen.len() || seen[i] {
                    return Err(SetError::Dimension(format!("binary index {i} invalid or grouped twice")));
                }
                seen[i] = true;
            }
        }
        Ok(Self { gc, gb, c, ac, ab, b, binary_groups })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn num_continuous(&self) -> usize {
        self.gc.ncols()
    }

    pub fn num_binaries(&self) -> usize {
        self.gb.ncols()
    }

    pub fn num_constraints(&self) -> usize {
        self.b.len()
    }

    /// Reinterpret binary factors as continuous factors in `[−1, 1]`.
    pub fn convex_relaxation(&self) -> ConstrainedZonotope {
        let n = self.dim();
        let (ng, nb, nc) = (self.num_continuous(), self.num_binaries(), self.num_constraints());
        let mut g = DMatrix::zeros(n, ng + nb);
        g.view_mut((0, 0), (n, ng)).copy_from(&self.gc);
        g.view_mut((0, ng), (n, nb)).copy_from(&self.gb);
        let mut a = DMatrix::zeros(nc, ng + nb);
        a.view_mut((0, 0), (nc, ng)).copy_from(&self.ac);
        a.view_mut((0, ng), (nc, nb)).copy_from(&self.ab);
        ConstrainedZonotope { g, c: self.c.clone(), a, b: self.b.clone() }
    }

    /// The constrained zonotope obtained by fixing every binary factor.
    pub fn fix_binaries(&self, xb: &[f64]) -> ConstrainedZonotope {
        let xb = DVector::from_column_slice(xb);
        ConstrainedZonotope {
            g: self.gc.clone(),
            c: &self.c + &self.gb * &xb,
            a: self.ac.clone(),
            b: &self.b - &self.ab * &xb,
        }
    }

    /// Binary assignments consistent with the one-hot groups; ungrouped binaries take both values.
    pub fn group_consistent_assignments(&self, limit: usize) -> Result<Vec<Vec<f64>>, SetError> {
        let nb = self.num_binaries();
        let mut grouped = vec![false; nb];
        for g in &self.binary_groups {
            g.iter().for_each(|&i| grouped[i] = true);
        }
        let free: Vec<usize> = (0..nb).filter(|&i| !grouped[i]).collect();
        let mut count: usize = 1;
        for g in &self.binary_groups {
            count = count.saturating_mul(g.len().max(1));
        }
        count = count.saturating_mul(1usize.checked_shl(free.len() as u32).unwrap_or(usize::MAX));
        if count > limit {
            return Err(SetError::TooManyBinaries(nb));
        }
        let mut out = vec![vec![-1.0; nb]];
        for g in &self.binary_groups {
            if g.is_empty() {
                continue;
            }
            out = out
                .into_iter()
                .flat_map(|a| {
                    g.iter().map(move |&i| {
                        let mut a = a.clone();
                        a[i] = 1.0;
                        a
                    })
                })
                .collect();
        }
        for &i in &free {
            out = out
                .into_iter()
                .flat_map(|a| {
                    let mut b = a.clone();
                    b[i] = 1.0;
                    [a, b]
                })
                .collect();
        }
        Ok(out)
    }

    /// Membership: some binary assignment yields a feasible continuous LP.
    ///
    /// Group-consistent assignments are enumerated when they number at most
    /// 2¹⁶; otherwise an LP-based branch and bound over the binaries is used.
    pub fn contains(&self, x: &[f64], tol: f64) -> Result<bool, SetError> {
        if x.len() != self.dim() {
            return Err(SetError::Dimension(format!("point {} vs set {}", x.len(), self.dim())));
        }
        match self.group_consistent_assignments(1 << 16) {
            Ok(assignments) => {
                for xb in assignments {
                    if self.fix_binaries(&xb).contains(x, tol)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Err(SetError::TooManyBinaries(_)) => self.contains_branching(x, tol),
            Err(e) => Err(e),
        }
    }

    fn contains_branching(&self, x: &[f64], tol: f64) -> Result<bool, SetError> {
        let nb = self.num_binaries();
        let relaxed = self.convex_relaxation();
        let ng = self.num_continuous();
        let mut stack: Vec<Vec<Option<f64>>> = vec![vec![None; nb]];
        while let Some(fixed) = stack.pop() {
            let mut lp = relaxed.factor_lp();
            for (i, f) in fixed.iter().enumerate() {
                if let Some(v) = f {
                    lp.set_bounds(ng + i, *v, *v);
                }
            }
            for i in 0..self.dim() {
                let row: Vec<f64> = relaxed.g.row(i).iter().copied().collect();
                let r = x[i] - relaxed.c[i];
                lp.add_le(&row, r + tol);
                lp.add_ge(&row, r - tol);
            }
            let LpOutcome::Optimal { x: sol, .. } = lp.solve()? else {
                continue;
            };
            let frac = (0..nb)
                .filter(|&i| fixed[i].is_none())
                .map(|i| (i, 1.0 - sol[ng + i].abs()))
                .filter(|&(_, f)| f > 1e-9)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            match frac {
                None => {
                    let xb: Vec<f64> =
                        (0..nb).map(|i| fixed[i].unwrap_or(if sol[ng + i] >= 0.0 { 1.0 } else { -1.0 })).collect();
                    if self.fix_binaries(&xb).contains(x, tol)? {
                        return Ok(true);
                    }
                }
                Some((i, _)) => {
                    for v in [-1.0, 1.0] {
                        let mut child = fixed.clone();
                        child[i] = Some(v);
                        stack.push(child);
                    }
                }
            }
        }
        Ok(false)
    }
}

/// Union of convex hulls of `polys` as a hybrid zonotope.
///
/// Each (polytope, vertex) pair gets a continuous weight `λ = (ξ + 1)/2` and
/// each polytope a selector `δ = (ξb + 1)/2`, with `Σ_j λ_ij = δ_i` and
/// `Σ_i δ_i = 1`. Relaxing the selectors to `[0, 1]` yields exactly the convex
/// hull of the union.
pub fn hybzono_from_vrep(polys: &[VPolytope]) -> Result<HybridZonotope, SetError> {
    let Some(first) = polys.first() else {
        return Err(SetError::Dimension("no polytopes given".into()));
    };
    let n = first.dim();
    if polys.iter().any(|p| p.dim() != n) {
        return Err(SetError::Dimension("polytopes of differing dimension".into()));
    }
    let np = polys.len();
    let nv: usize = polys.iter().map(|p| p.vertices().len()).sum();
    let mut gc = DMatrix::zeros(n, nv);
    let mut c = DVector::zeros(n);
    let mut ac = DMatrix::zeros(np + 1, nv);
    let mut ab = DMatrix::zeros(np + 1, np);
    let mut b = DVector::zeros(np + 1);
    let mut col = 0;
    for (i, p) in polys.iter().enumerate() {
        for v in p.vertices() {
            gc.column_mut(col).copy_from(&(v * 0.5));
            c += v * 0.5;
            ac[(i, col)] = 1.0;
            col += 1;
        }
        ab[(i, i)] = -1.0;
        b[i] = 1.0 - p.vertices().len() as f64;
        ab[(np, i)] = 1.0;
    }
    b[np] = 2.0 - np as f64;
    let gb = DMatrix::zeros(n, np);
    HybridZonotope::new(gc, gb, c, ac, ab, b, vec![(0..np).collect()])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> ConstrainedZonotope {
        ConstrainedZonotope::from_box(&[-1.0, -1.0], &[1.0, 1.0])
    }

    fn hrep(rows: &[[f64; 2]], f: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let h = DMatrix::from_fn(rows.len(), 2, |i, j| rows[i][j]);
        (h, DVector::from_column_slice(f))
    }

    #[test]
    fn box_hrep_matches_grid() {
        let (h, f) = hrep(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]], &[1.0; 4]);
        let z = conzono_from_hrep(&h, &f).unwrap();
        for i in 0..21 {
            for j in 0..21 {
                let p = [-1.5 + 0.15 * i as f64, -1.5 + 0.15 * j as f64];
                let inside = p[0].abs() <= 1.0 + 1e-12 && p[1].abs() <= 1.0 + 1e-12;
                assert_eq!(z.contains(&p, 1e-9).unwrap(), inside, "{p:?}");
            }
        }
    }

    #[test]
    fn diamond_hrep() {
        let (h, f) = hrep(&[[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]], &[1.0; 4]);
        let z = conzono_from_hrep(&h, &f).unwrap();
        assert_eq!(z.num_factors(), 2 + 4);
        assert_eq!(z.num_constraints(), 4);
        assert!(z.contains(&[0.5, 0.5], 1e-9).unwrap());
        assert!(!z.contains(&[0.6, 0.6], 1e-9).unwrap());
    }

    #[test]
    fn hrep_errors() {
        let (h, f) = hrep(&[[1.0, 0.0], [0.0, 1.0]], &[1.0, 1.0]);
        assert_eq!(conzono_from_hrep(&h, &f), Err(SetError::Unbounded));
        let (h, f) = hrep(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]], &[-1.0, -1.0, 1.0, 1.0]);
        assert_eq!(conzono_from_hrep(&h, &f), Err(SetError::Empty));
    }

    #[test]
    fn halfspace_axis_cut() {
        let z = unit_box().intersect_halfspace(&[1.0, 0.0], 0.0).unwrap();
        assert_eq!(z.num_factors(), 3);
        assert_eq!(z.num_constraints(), 1);
        assert!(z.contains(&[-0.5, 0.0], 1e-9).unwrap());
        assert!(!z.contains(&[0.5, 0.0], 1e-9).unwrap());
    }

    #[test]
    fn redundant_halfspace_keeps_set() {
        let z = unit_box().intersect_halfspace(&[1.0, 0.0], 2.0).unwrap();
        for p in [[1.0, 1.0], [-1.0, 0.3], [0.9, -1.0]] {
            assert!(z.contains(&p, 1e-9).unwrap());
        }
        assert!(!z.contains(&[1.01, 0.0], 1e-9).unwrap());
    }

    #[test]
    fn empty_halfspace_intersection_detected() {
        let z = unit_box().intersect_halfspace(&[1.0, 0.0], -2.0).unwrap();
        assert!(z.is_empty().unwrap());
        assert_eq!(z.bounding_box(), Err(SetError::Empty));
    }

    #[test]
    fn unit_box_membership_edges() {
        let tol = 1e-6;
        let z = unit_box();
        assert!(z.contains(&[0.0, 0.0], tol).unwrap());
        assert!(!z.contains(&[1.0 + 2.0 * tol, 0.0], tol).unwrap());
        let bb = z.bounding_box().unwrap();
        assert_eq!(bb.lower.as_slice(), &[-1.0, -1.0]);
        assert_eq!(bb.upper.as_slice(), &[1.0, 1.0]);
    }

    fn square(x0: f64) -> VPolytope {
        VPolytope::from_points(&[vec![x0, 0.0], vec![x0 + 1.0, 0.0], vec![x0 + 1.0, 1.0], vec![x0, 1.0]]).unwrap()
    }

    #[test]
    fn two_square_union() {
        let hz = hybzono_from_vrep(&[square(0.0), square(2.0)]).unwrap();
        assert!(hz.contains(&[0.5, 0.5], 1e-9).unwrap());
        assert!(!hz.contains(&[1.5, 0.5], 1e-9).unwrap());
        assert!(hz.convex_relaxation().contains(&[1.5, 0.5], 1e-9).unwrap());
        assert!(!hz.convex_relaxation().contains(&[1.5, 1.1], 1e-9).unwrap());
    }

    #[test]
    fn single_triangle_barycentric() {
        let tri = VPolytope::from_points(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let hz = hybzono_from_vrep(&[tri]).unwrap();
        for i in 0..11 {
            for j in 0..11 {
                let p = [-0.25 + 0.15 * i as f64, -0.25 + 0.15 * j as f64];
                let inside = p[0] >= -1e-12 && p[1] >= -1e-12 && p[0] + p[1] <= 1.0 + 1e-12;
                assert_eq!(hz.contains(&p, 1e-9).unwrap(), inside, "{p:?}");
            }
        }
    }

    #[test]
    fn relaxation_without_binaries_is_identity() {
        let z = unit_box();
        let hz = HybridZonotope::new(
            z.g.clone(),
            DMatrix::zeros(2, 0),
            z.c.clone(),
            z.a.clone(),
            DMatrix::zeros(0, 0),
            z.b.clone(),
            vec![],
        )
        .unwrap();
        assert_eq!(hz.convex_relaxation(), z);
    }

    #[test]
    fn branching_membership_matches_enumeration() {
        // Same union, but hide the group so the branch-and-bound path is used.
        let mut hz = hybzono_from_vrep(&[square(0.0), square(2.0), square(4.0)]).unwrap();
        hz.binary_groups.clear();
        for (p, expect) in [([0.5, 0.5], true), ([4.5, 0.9], true), ([1.5, 0.5], false), ([3.5, 0.5], false)] {
            assert_eq!(hz.contains_branching(&p, 1e-9).unwrap(), expect, "{p:?}");
        }
    }

    #[test]
    fn duplicate_and_collinear_vertices() {
        let p =
            VPolytope::from_points(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0 + 1e-12, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(p.vertices().len(), 3);
        let hz = hybzono_from_vrep(&[p]).unwrap();
        assert!(hz.contains(&[1.5, 0.0], 1e-9).unwrap());
        assert!(!hz.contains(&[1.5, 0.1], 1e-9).unwrap());
    }
}
