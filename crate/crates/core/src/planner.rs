//! Mixed-integer MPC for coupled motion and energy planning.
//!
//! Stage `k` of the assembled problem holds `z_k = [x_k; u_k; α_k]`, where
//! `α_k` collects the factors of the state, input, terminal and map sets.
//! Set memberships become stage-local equalities `S x − G ξ = c`, `A ξ = b`
//! with factors boxed in `[−1, 1]`; the dynamics are the stage couplings.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geomap::{FeasibleMap, MapError};
use crate::miqp::{solve_miqp, BinaryGroup, MIQPConfig, MIQPResult, MiqpError, MiqpStatus, MultistageMIQP};
use crate::msqp::{solve_qp, MultistageQP, QpCoupling, QpStage, QpStatus, VarBlock, VarKind};
use crate::uasmodel::{DiscreteModel, ModelError, StateLayout};
use crate::zonoset::{ConstrainedZonotope, IntervalBox, SetError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Solver(#[from] MiqpError),
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("reference rejected: {0}")]
    Reference(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("no feasible plan found within the node limit")]
    NoSolution,
    #[error("plan failed verification: {0}")]
    Verification(String),
}

/// Stage cost `(x − xʳ)ᵀQ(x − xʳ) + uᵀRu + q_linᵀx + qʳ(y)`, terminal weight `Q_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct MPCWeights {
    pub q: DMatrix<f64>,
    pub q_n: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_lin: DVector<f64>,
    /// Cost per map cell while the output lies in it.
    pub region_costs: Vec<f64>,
}

impl MPCWeights {
    fn validate(&self, nx: usize, nu: usize, cells: usize) -> Result<(), PlanError> {
        let bad = |m: String| Err(PlanError::Invalid(m));
        if self.q.shape() != (nx, nx) || self.q_n.shape() != (nx, nx) || self.r.shape() != (nu, nu) {
            return bad(format!("weight matrices must be {nx}x{nx} (Q, Q_N) and {nu}x{nu} (R)"));
        }
        if self.q_lin.len() != nx {
            return bad(format!("linear cost has length {}, expected {nx}", self.q_lin.len()));
        }
        if self.region_costs.len() != cells {
            return bad(format!("{} region costs for {cells} cells", self.region_costs.len()));
        }
        if self.region_costs.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return bad("region costs must be finite and non-negative".into());
        }
        for (name, m) in [("Q", &self.q), ("Q_N", &self.q_n), ("R", &self.r)] {
            if !is_psd(m) {
                return bad(format!("{name} is not symmetric positive semidefinite"));
            }
        }
        Ok(())
    }
}

fn is_psd(m: &DMatrix<f64>) -> bool {
    if m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = m.amax().max(1e-300);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return false;
    }
    m.nrows() == 0 || m.clone().symmetric_eigen().eigenvalues.min() >= -1e-10 * scale
}

#[derive(Debug, Clone)]
pub struct MPCProblem {
    pub model: DiscreteModel,
    pub map: FeasibleMap,
    pub weights: MPCWeights,
    pub horizon: usize,
    /// Reference per stage, `horizon + 1` entries.
    pub reference: Vec<DVector<f64>>,
}

impl MPCProblem {
    /// Problem tracking a single goal state at every stage.
    pub fn new(
        model: DiscreteModel,
        map: FeasibleMap,
        weights: MPCWeights,
        horizon: usize,
        goal: DVector<f64>,
    ) -> Result<Self, PlanError> {
        let p = Self { reference: vec![goal; horizon + 1], model, map, weights, horizon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let l = &self.model.layout;
        if self.horizon == 0 {
            return Err(PlanError::Invalid("horizon must be at least 1".into()));
        }
        self.weights.validate(l.n_states, l.n_inputs, self.map.partition.num_cells())?;
        if self.reference.len() != self.horizon + 1 || self.reference.iter().any(|r| r.len() != l.n_states) {
            return Err(PlanError::Invalid("reference must hold horizon + 1 full states".into()));
        }
        if self.reference.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(PlanError::Invalid("reference is not finite".into()));
        }
        if self.map.dim() != self.model.h.nrows() {
            return Err(PlanError::Invalid(format!(
                "map has dimension {}, model output has {}",
                self.map.dim(),
                self.model.h.nrows()
            )));
        }
        Ok(())
    }

    /// States with nonzero tracking weight.
    pub fn tracked_states(&self) -> Vec<usize> {
        (0..self.model.layout.n_states)
            .filter(|&i| {
                (0..self.model.layout.n_states)
                    .any(|j| self.weights.q[(i, j)] != 0.0 || self.weights.q_n[(i, j)] != 0.0)
            })
            .collect()
    }

    /// Tracked reference coordinates must be attainable in the terminal set
    /// and, for positions, inside the traversable map.
    pub fn check_reference(&self) -> Result<(), PlanError> {
        let tracked = self.tracked_states();
        let l = &self.model.layout;
        let mut coords: Vec<usize> = l.coupled_states();
        coords.extend([l.xi, l.eta, l.soc]);
        let xr = self.reference.last().expect("horizon + 1 references");
        let in_xn: Vec<(usize, usize)> =
            tracked.iter().filter_map(|&s| coords.iter().position(|&c| c == s).map(|p| (p, s))).collect();
        if !in_xn.is_empty() {
            let sel = DMatrix::from_fn(in_xn.len(), coords.len(), |i, j| if in_xn[i].0 == j { 1.0 } else { 0.0 });
            let proj = self.model.xn_set.linear_map(&sel);
            let point: Vec<f64> = in_xn.iter().map(|&(_, s)| xr[s]).collect();
            if !proj.contains(&point, tol_for(&point))? {
                return Err(PlanError::Reference("goal is outside the terminal set".into()));
            }
        }
        for &s in &tracked {
            let b = &self.model.state_box;
            if !coords.contains(&s) && !(xr[s] >= b.lower[s] - 1e-9 && xr[s] <= b.upper[s] + 1e-9) {
                return Err(PlanError::Reference(format!("goal state {s} outside its bounds")));
            }
        }
        if tracked.contains(&l.xi) && tracked.contains(&l.eta) {
            let p = [xr[l.xi], xr[l.eta]];
            if self.map.partition.locate(p, 1e-9).is_none() {
                return Err(PlanError::Reference(format!(
                    "goal position ({}, {}) is not in the traversable map",
                    p[0], p[1]
                )));
            }
        }
        Ok(())
    }

    /// Cheapest cell containing the output position of `x`.
    pub fn region_at(&self, x: &DVector<f64>) -> Option<usize> {
        let l = &self.model.layout;
        let p = [x[l.xi], x[l.eta]];
        (0..self.map.partition.num_cells())
            .filter(|&i| self.map.partition.polygon(i).contains(p, 1e-6))
            .min_by(|&a, &b| self.weights.region_costs[a].total_cmp(&self.weights.region_costs[b]))
    }
}

fn tol_for(v: &[f64]) -> f64 {
    1e-6 * v.iter().fold(1.0f64, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, Copy)]
struct Include {
    map: bool,
    terminal: bool,
}

const ALL: Include = Include { map: true, terminal: true };

/// Build the multistage MIQP for initial state `x0`.
pub fn assemble(problem: &MPCProblem, x0: &DVector<f64>) -> Result<MultistageMIQP, PlanError> {
    problem.validate()?;
    problem.check_reference()?;
    if x0.len() != problem.model.layout.n_states || x0.iter().any(|v| !v.is_finite()) {
        return Err(PlanError::Invalid("initial state must be finite with one entry per state".into()));
    }
    assemble_with(problem, x0, ALL)
}

fn selection(rows: &[usize], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), n, |i, j| if rows[i] == j { 1.0 } else { 0.0 })
}

struct StageBuilder {
    stage: QpStage,
    next: usize,
}

impl StageBuilder {
    fn new(n: usize) -> Self {
        Self { stage: QpStage::new(n), next: 0 }
    }

    fn block(&mut self, name: &str, len: usize, kind: VarKind) -> usize {
        let start = self.next;
        self.stage.layout.push(VarBlock { name: name.into(), start, len, kind });
        self.next += len;
        start
    }

    fn factors(&mut self, name: &str, len: usize) -> usize {
        let start = self.block(name, len, VarKind::Factor);
        for i in start..start + len {
            self.stage.lower[i] = -1.0;
            self.stage.upper[i] = 1.0;
        }
        start
    }

    /// `S v − G ξ = c` and `A ξ = b`, with `v` the variables at `vars` mapped by `s`.
    fn membership(&mut self, s: &DMatrix<f64>, vars: usize, set: &ConstrainedZonotope, xi: usize) {
        self.membership_parts(s, vars, &set.g, xi, &set.c, &set.a, &set.b);
    }

    #[allow(clippy::too_many_arguments)]
    fn membership_parts(
        &mut self,
        s: &DMatrix<f64>,
        vars: usize,
        g: &DMatrix<f64>,
        xi: usize,
        c: &DVector<f64>,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
    ) {
        let n = self.stage.n();
        for r in 0..s.nrows() {
            let mut row = vec![0.0; n];
            for j in 0..s.ncols() {
                row[vars + j] = s[(r, j)];
            }
            for j in 0..g.ncols() {
                row[xi + j] = -g[(r, j)];
            }
            self.stage.push_eq(&row, c[r]);
        }
        for r in 0..a.nrows() {
            let mut row = vec![0.0; n];
            for j in 0..a.ncols() {
                row[xi + j] = a[(r, j)];
            }
            self.stage.push_eq(&row, b[r]);
        }
    }
}

fn stage_size(problem: &MPCProblem, k: usize, inc: Include) -> usize {
    let m = &problem.model;
    let (nx, nu) = (m.layout.n_states, m.layout.n_inputs);
    let f = &problem.map.f;
    let map = if inc.map { f.num_continuous() + f.num_binaries() } else { 0 };
    if k == 0 {
        nx + nu + m.u_set.num_factors()
    } else if k < problem.horizon {
        nx + nu + m.x_set.num_factors() + m.u_set.num_factors() + map
    } else {
        nx + if inc.terminal { m.xn_set.num_factors() } else { m.x_set.num_factors() } + map
    }
}

fn assemble_with(problem: &MPCProblem, x0: &DVector<f64>, inc: Include) -> Result<MultistageMIQP, PlanError> {
    let m = &problem.model;
    let l = m.layout;
    let (nx, nu, n) = (l.n_states, l.n_inputs, problem.horizon);
    let w = &problem.weights;
    let f = &problem.map.f;
    let coupled = selection(&l.coupled_states(), nx);
    let mut term_rows = l.coupled_states();
    term_rows.extend([l.xi, l.eta, l.soc]);
    let terminal = selection(&term_rows, nx);

    // Redundant boxes on the coupled states and inputs keep every variable bounded.
    let xbox = m.x_set.bounding_box()?;
    let ubox = m.u_set.bounding_box()?;
    let mut state_lower = m.state_box.lower.clone();
    let mut state_upper = m.state_box.upper.clone();
    for (i, &s) in l.coupled_states().iter().enumerate() {
        let pad = 0.01 * (xbox.upper[i] - xbox.lower[i]).max(1.0);
        state_lower[s] = state_lower[s].max(xbox.lower[i] - pad);
        state_upper[s] = state_upper[s].min(xbox.upper[i] + pad);
    }

    let reach = reachable_boxes(m, x0, n, &state_lower, &state_upper, &ubox);

    let mut constant = 0.0;
    if let Some(cell) = problem.region_at(x0) {
        constant += w.region_costs[cell];
    }
    let mut stages = Vec::with_capacity(n + 1);
    let mut binaries = Vec::with_capacity(n + 1);
    let mut groups = Vec::new();
    for k in 0..=n {
        let mut sb = StageBuilder::new(stage_size(problem, k, inc));
        let x = sb.block("x", nx, VarKind::State);
        let xr = &problem.reference[k];
        let qk = if k == n { &w.q_n } else { &w.q };
        let qx = qk * xr;
        for i in 0..nx {
            for j in 0..nx {
                sb.stage.p[(x + i, x + j)] = 2.0 * qk[(i, j)];
            }
            sb.stage.q[x + i] = -2.0 * qx[i] + w.q_lin[i];
        }
        constant += xr.dot(&qx);
        if k == 0 {
            for i in 0..nx {
                sb.stage.lower[x + i] = x0[i];
                sb.stage.upper[x + i] = x0[i];
            }
        } else {
            for i in 0..nx {
                sb.stage.lower[x + i] = state_lower[i];
                sb.stage.upper[x + i] = state_upper[i];
            }
        }
        if k < n {
            let u = sb.block("u", nu, VarKind::Input);
            for i in 0..nu {
                let pad = 0.01 * (ubox.upper[i] - ubox.lower[i]).max(1.0);
                sb.stage.lower[u + i] = ubox.lower[i] - pad;
                sb.stage.upper[u + i] = ubox.upper[i] + pad;
            }
            for i in 0..nu {
                for j in 0..nu {
                    sb.stage.p[(u + i, u + j)] = 2.0 * w.r[(i, j)];
                }
            }
            if k > 0 {
                let xi = sb.factors("xi_x", m.x_set.num_factors());
                sb.membership(&coupled, x, &m.x_set, xi);
            }
            let xi = sb.factors("xi_u", m.u_set.num_factors());
            sb.membership(&DMatrix::identity(nu, nu), u, &m.u_set, xi);
        } else if inc.terminal {
            let xi = sb.factors("xi_xn", m.xn_set.num_factors());
            sb.membership(&terminal, x, &m.xn_set, xi);
        } else {
            let xi = sb.factors("xi_x", m.x_set.num_factors());
            sb.membership(&coupled, x, &m.x_set, xi);
        }
        let mut stage_bins = Vec::new();
        if k > 0 && inc.map {
            let fc = sb.factors("xi_fc", f.num_continuous());
            let fb = sb.factors("xi_fb", f.num_binaries());
            sb.stage.layout.last_mut().expect("binary block").kind = VarKind::Binary;
            let mut g = DMatrix::zeros(f.dim(), f.num_continuous() + f.num_binaries());
            g.view_mut((0, 0), f.gc.shape()).copy_from(&f.gc);
            g.view_mut((0, f.num_continuous()), f.gb.shape()).copy_from(&f.gb);
            let mut a = DMatrix::zeros(f.num_constraints(), g.ncols());
            a.view_mut((0, 0), f.ac.shape()).copy_from(&f.ac);
            a.view_mut((0, f.num_continuous()), f.ab.shape()).copy_from(&f.ab);
            sb.membership_parts(&m.h, x, &g, fc, &f.c, &a, &f.b);
            for j in 0..f.num_binaries() {
                // cost · (ξ_b + 1)/2 for the selected cell
                let c = w.region_costs[problem.map.region_of_binary[j]];
                sb.stage.q[fb + j] += 0.5 * c;
                constant += 0.5 * c;
                stage_bins.push(fb + j);
                if !cell_reachable(problem, &m.h, &reach[k], problem.map.region_of_binary[j]) {
                    sb.stage.upper[fb + j] = -1.0;
                }
            }
            for grp in &f.binary_groups {
                groups.push(BinaryGroup { stage: k, members: grp.iter().map(|&j| fb + j).collect() });
            }
        }
        debug_assert_eq!(sb.next, sb.stage.n());
        stages.push(sb.stage);
        binaries.push(stage_bins);
    }

    let couplings = (0..n)
        .map(|k| {
            let (n0, n1) = (stages[k].n(), stages[k + 1].n());
            let mut c = DMatrix::zeros(nx, n0);
            c.view_mut((0, 0), (nx, nx)).copy_from(&(-&m.ad));
            c.view_mut((0, nx), (nx, nu)).copy_from(&(-&m.bd));
            let mut d = DMatrix::zeros(nx, n1);
            d.view_mut((0, 0), (nx, nx)).fill_with_identity();
            QpCoupling { c, d, e: DVector::zeros(nx) }
        })
        .collect();
    let qp = MultistageQP { stages, couplings, constant };
    Ok(MultistageMIQP { qp, binaries, groups })
}

/// Interval enclosures of the states reachable at each stage from `x0`.
fn reachable_boxes(
    m: &DiscreteModel,
    x0: &DVector<f64>,
    n: usize,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    ubox: &IntervalBox,
) -> Vec<(DVector<f64>, DVector<f64>)> {
    let ad_abs = m.ad.abs();
    let bd_abs = m.bd.abs();
    let uc = (&ubox.lower + &ubox.upper) * 0.5;
    let ur = (&ubox.upper - &ubox.lower) * 0.5;
    let mut out = vec![(x0.clone(), x0.clone())];
    for _ in 0..n {
        let (lo, hi) = out.last().expect("initial box");
        let c = (lo + hi) * 0.5;
        let r = (hi - lo) * 0.5;
        let c1 = &m.ad * c + &m.bd * &uc;
        let r1 = &ad_abs * r + &bd_abs * &ur;
        let lo1 = (&c1 - &r1).zip_map(lower, f64::max);
        let hi1 = (&c1 + &r1).zip_map(upper, f64::min);
        out.push((lo1, hi1));
    }
    out
}

fn cell_reachable(problem: &MPCProblem, h: &DMatrix<f64>, reach: &(DVector<f64>, DVector<f64>), cell: usize) -> bool {
    let (lo, hi) = reach;
    let c = (lo + hi) * 0.5;
    let r = (hi - lo) * 0.5;
    let pc = h * c;
    let pr = h.abs() * r;
    let (cmin, cmax) = problem.map.partition.polygons()[cell].bounds();
    // The leading two outputs are the planar position.
    (0..2).all(|i| {
        let tol = 1e-6 * (1.0 + pc[i].abs());
        pc[i] - pr[i] <= cmax[i] + tol && pc[i] + pr[i] >= cmin[i] - tol
    })
}

/// Solver statistics of one MIQP solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveStats {
    pub status: MiqpStatus,
    pub objective: f64,
    pub bound: f64,
    pub gap: f64,
    pub root_bound: f64,
    pub nodes: usize,
    pub qp_solves: usize,
    pub wall_time: f64,
}

impl From<&MIQPResult> for SolveStats {
    fn from(r: &MIQPResult) -> Self {
        Self {
            status: r.status,
            objective: r.objective,
            bound: r.bound,
            gap: r.gap,
            root_bound: r.root_bound,
            nodes: r.nodes_explored,
            qp_solves: r.qp_solves,
            wall_time: r.wall_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub k: usize,
    pub t: f64,
    pub x: DVector<f64>,
    /// Input applied from this step; `None` at the final point.
    pub u: Option<DVector<f64>>,
    pub region: Option<usize>,
    pub region_cost: f64,
    pub v: f64,
    pub theta: f64,
    pub omega: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub layout: StateLayout,
    pub dt: f64,
    pub points: Vec<TrajectoryPoint>,
    /// MPC cost of the trajectory, final point weighted by `Q_N`.
    pub cost: f64,
    pub max_dynamics_residual: f64,
    pub stats: Vec<SolveStats>,
    /// Why a receding-horizon run ended early.
    pub stopped: Option<String>,
}

impl Trajectory {
    pub fn states(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.points.iter().map(|p| &p.x)
    }
}

fn point(
    problem: &MPCProblem,
    k: usize,
    x: DVector<f64>,
    u: Option<DVector<f64>>,
    region: Option<usize>,
) -> TrajectoryPoint {
    let l = &problem.model.layout;
    let (vx, vy) = (x[l.xi_dot], x[l.eta_dot]);
    let v = vx.hypot(vy);
    let omega = u.as_ref().map(|u| if v > 1e-9 { (vx * u[l.eta_ddot] - vy * u[l.xi_ddot]) / (v * v) } else { 0.0 });
    TrajectoryPoint {
        k,
        t: k as f64 * problem.model.dt,
        region_cost: region.map_or(0.0, |c| problem.weights.region_costs[c]),
        theta: vy.atan2(vx),
        v,
        omega,
        x,
        u,
        region,
    }
}

/// MPC cost of a state/input sequence, the last point weighted by `Q_N`.
pub fn trajectory_cost(problem: &MPCProblem, points: &[TrajectoryPoint]) -> f64 {
    let w = &problem.weights;
    let last = points.len().saturating_sub(1);
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let xr = &problem.reference[i.min(problem.horizon)];
            let q = if i == last { &w.q_n } else { &w.q };
            let dx = &p.x - xr;
            let mut c = dx.dot(&(q * &dx)) + w.q_lin.dot(&p.x) + p.region_cost;
            if let Some(u) = &p.u {
                c += u.dot(&(&w.r * u));
            }
            c
        })
        .sum()
}

/// Open-loop optimal plan from `x0`.
pub fn plan_step(
    problem: &MPCProblem,
    x0: &DVector<f64>,
    cfg: &MIQPConfig,
) -> Result<(Trajectory, MIQPResult), PlanError> {
    let miqp = assemble(problem, x0)?;
    let result = solve_miqp(&miqp, cfg)?;
    if result.z_star.is_empty() {
        return Err(match result.status {
            MiqpStatus::Infeasible => PlanError::Infeasible(diagnose(problem, x0)),
            _ => PlanError::NoSolution,
        });
    }
    let m = &problem.model;
    let l = m.layout;
    let n = problem.horizon;
    let mut points = Vec::with_capacity(n + 1);
    let mut x = x0.clone();
    let mut residual: f64 = 0.0;
    for k in 0..=n {
        let z = &result.z_star[k];
        let stage = &miqp.qp.stages[k];
        let region = if k == 0 {
            problem.region_at(&x)
        } else {
            let fb = stage.block("xi_fb").expect("map factors");
            let xb: Vec<f64> = z.rows(fb.start, fb.len).iter().copied().collect();
            problem.map.cell_of_binaries(&xb)
        };
        let u = (k < n).then(|| z.rows(l.n_states, l.n_inputs).into_owned());
        let next = u.as_ref().map(|u| m.step(&x, u));
        if let Some(nx) = &next {
            let solver_next = result.z_star[k + 1].rows(0, l.n_states);
            residual = residual.max((nx - solver_next).amax() / (1.0 + nx.amax()));
        }
        points.push(point(problem, k, x.clone(), u, region));
        if let Some(nx) = next {
            x = nx;
        }
    }
    let mut traj = Trajectory {
        layout: l,
        dt: m.dt,
        cost: trajectory_cost(problem, &points),
        points,
        max_dynamics_residual: 0.0,
        stats: vec![SolveStats::from(&result)],
        stopped: None,
    };
    traj.max_dynamics_residual = verify(problem, &traj)?;
    if residual > 1e-6 {
        return Err(PlanError::Verification(format!("solver states drift from the model by {residual:.2e}")));
    }
    Ok((traj, result))
}

/// Check every constraint on an open-loop plan; returns the largest dynamics residual.
pub fn verify(problem: &MPCProblem, traj: &Trajectory) -> Result<f64, PlanError> {
    let m = &problem.model;
    let n = traj.points.len() - 1;
    let fail = |k: usize, what: &str| Err(PlanError::Verification(format!("step {k}: {what}")));
    let mut residual: f64 = 0.0;
    for (k, p) in traj.points.iter().enumerate() {
        let xs: Vec<f64> = p.x.iter().copied().collect();
        if let Some(u) = &p.u {
            let us: Vec<f64> = u.iter().copied().collect();
            if !m.u_set.contains(&us, tol_for(&us))? {
                return fail(k, "input outside the input set");
            }
            let next = m.step(&p.x, u);
            residual = residual.max((&next - &traj.points[k + 1].x).amax());
        }
        if k == 0 {
            continue;
        }
        if !boxed(&m.state_box, &xs) {
            return fail(k, "state outside its box");
        }
        if k == n {
            let c = m.terminal_coords(&xs);
            if !m.xn_set.contains(&c, tol_for(&c))? {
                return fail(k, "state outside the terminal set");
            }
        } else {
            let c = m.coupled(&xs);
            if !m.x_set.contains(&c, tol_for(&c))? {
                return fail(k, "state outside the state set");
            }
        }
        let y: Vec<f64> = (&m.h * &p.x).iter().copied().collect();
        if !problem.map.f.contains(&y, tol_for(&y))? {
            return fail(k, "output outside the feasible map");
        }
    }
    if residual > 1e-8 * (1.0 + traj.points.iter().map(|p| p.x.amax()).fold(0.0, f64::max)) {
        return Err(PlanError::Verification(format!("dynamics residual {residual:.2e}")));
    }
    Ok(residual)
}

fn boxed(b: &IntervalBox, x: &[f64]) -> bool {
    x.iter()
        .enumerate()
        .all(|(i, &v)| v >= b.lower[i] - tol_for(&[b.lower[i]]) && v <= b.upper[i] + tol_for(&[b.upper[i]]))
}

/// Name the first constraint group that makes the problem infeasible.
fn diagnose(problem: &MPCProblem, x0: &DVector<f64>) -> String {
    let relaxed_feasible = |inc: Include| -> bool {
        assemble_with(problem, x0, inc)
            .ok()
            .and_then(|p| solve_qp(&p.qp, None, 1e-8).ok())
            .is_some_and(|s| s.status != QpStatus::Infeasible)
    };
    if !relaxed_feasible(Include { map: false, terminal: false }) {
        "state, input and power limits cannot be met from the initial state".into()
    } else if !relaxed_feasible(Include { map: false, terminal: true }) {
        "terminal set is not reachable within the horizon".into()
    } else {
        "map constraints (obstacles or noise limits) block every route to the terminal set".into()
    }
}

/// Closed-loop run: solve, apply the first input, propagate, repeat.
pub fn receding_horizon(
    problem: &MPCProblem,
    x0: &DVector<f64>,
    steps: usize,
    cfg: &MIQPConfig,
) -> Result<Trajectory, PlanError> {
    if steps == 0 {
        return Err(PlanError::Invalid("steps must be at least 1".into()));
    }
    problem.validate()?;
    problem.check_reference()?;
    let m = &problem.model;
    let mut x = x0.clone();
    let mut points = Vec::with_capacity(steps + 1);
    let mut stats = Vec::with_capacity(steps);
    let mut stopped = None;
    let mut region = problem.region_at(&x);
    for k in 0..steps {
        match plan_step(problem, &x, cfg) {
            Ok((plan, result)) => {
                stats.push(SolveStats::from(&result));
                let u = plan.points[0].u.clone().expect("first input");
                points.push(point(problem, k, x.clone(), Some(u.clone()), region));
                region = plan.points[1].region;
                x = m.step(&x, &u);
            }
            Err(e @ (PlanError::Infeasible(_) | PlanError::NoSolution)) => {
                stopped = Some(format!("step {k}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let k = points.len();
    points.push(point(problem, k, x, None, region));
    let mut residual: f64 = 0.0;
    for w in points.windows(2) {
        let u = w[0].u.as_ref().expect("input");
        residual = residual.max((m.step(&w[0].x, u) - &w[1].x).amax());
    }
    Ok(Trajectory {
        layout: m.layout,
        dt: m.dt,
        cost: trajectory_cost(problem, &points),
        points,
        max_dynamics_residual: residual,
        stats,
        stopped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomap::{build_feasible_set_2d, convex_partition, CostRegion, Polygon, PolygonMap};
    use crate::uasmodel::tests::case2_params;

    fn square(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
        Polygon::new(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }

    fn drone_problem(map: PolygonMap, horizon: usize, goal: DVector<f64>, q_n: DMatrix<f64>) -> MPCProblem {
        let part = convex_partition(&map).unwrap();
        let fm = build_feasible_set_2d(&part).unwrap();
        let model = DiscreteModel::new(case2_params(), 1.0, ([0.0, 0.0], [20.0, 20.0]), None).unwrap();
        let weights = MPCWeights {
            q: DMatrix::zeros(6, 6),
            q_n,
            r: DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 1.0, 1e-4])),
            q_lin: DVector::zeros(6),
            region_costs: part.cell_costs.clone(),
        };
        MPCProblem::new(model, fm, weights, horizon, goal).unwrap()
    }

    fn cfg() -> MIQPConfig {
        MIQPConfig { threads: 2, ..MIQPConfig::default() }
    }

    fn hover(x: f64, y: f64) -> DVector<f64> {
        DVector::from_column_slice(&[x, 0.0, y, 0.0, 0.8, 1.25])
    }

    #[test]
    fn already_at_reference() {
        let map = PolygonMap { boundary: square(0.0, 0.0, 20.0, 20.0), ..Default::default() };
        let x0 = hover(10.0, 10.0);
        let p = drone_problem(map, 1, x0.clone(), DMatrix::identity(6, 6));
        let (traj, res) = plan_step(&p, &x0, &cfg()).unwrap();
        assert_eq!(res.status, MiqpStatus::Optimal);
        assert!(traj.points[0].u.as_ref().unwrap().amax() < 1e-3);
        assert!(res.objective.abs() < 1e-6, "{}", res.objective);
        assert!((traj.cost - res.objective).abs() < 1e-6);
    }

    #[test]
    fn cost_region_charged_per_stage() {
        let map = PolygonMap {
            boundary: square(0.0, 0.0, 20.0, 20.0),
            cost_regions: vec![CostRegion { polygon: square(5.0, 5.0, 15.0, 15.0), cost: 10.0 }],
            ..Default::default()
        };
        let x0 = hover(10.0, 10.0);
        let p = drone_problem(map, 2, x0.clone(), DMatrix::identity(6, 6));
        let (traj, res) = plan_step(&p, &x0, &cfg()).unwrap();
        assert!((res.objective - 30.0).abs() < 1e-3, "{}", res.objective);
        assert!(traj.points.iter().all(|pt| pt.region_cost == 10.0));
        assert!((traj.cost - res.objective).abs() < 1e-3);
    }

    #[test]
    fn goal_inside_obstacle_rejected() {
        let map = PolygonMap {
            boundary: square(0.0, 0.0, 20.0, 20.0),
            obstacles: vec![square(8.0, 8.0, 12.0, 12.0)],
            ..Default::default()
        };
        let part = convex_partition(&map).unwrap();
        let fm = build_feasible_set_2d(&part).unwrap();
        let model = DiscreteModel::new(case2_params(), 1.0, ([0.0, 0.0], [20.0, 20.0]), None).unwrap();
        let mut q_n = DMatrix::zeros(6, 6);
        q_n[(0, 0)] = 1.0;
        q_n[(2, 2)] = 1.0;
        let weights = MPCWeights {
            q: DMatrix::zeros(6, 6),
            q_n,
            r: DMatrix::identity(3, 3),
            q_lin: DVector::zeros(6),
            region_costs: part.cell_costs.clone(),
        };
        let p = MPCProblem::new(model, fm, weights, 3, hover(10.0, 10.0)).unwrap();
        let err = plan_step(&p, &hover(2.0, 2.0), &cfg()).unwrap_err();
        assert!(matches!(err, PlanError::Reference(_)), "{err}");
    }

    #[test]
    fn unreachable_terminal_set_is_diagnosed() {
        let map = PolygonMap { boundary: square(0.0, 0.0, 20.0, 20.0), ..Default::default() };
        let part = convex_partition(&map).unwrap();
        let fm = build_feasible_set_2d(&part).unwrap();
        let wayset = crate::uasmodel::Wayset { xi: (18.0, 19.0), eta: (18.0, 19.0), soc: (0.0, 1.0) };
        let model = DiscreteModel::new(case2_params(), 1.0, ([0.0, 0.0], [20.0, 20.0]), Some(wayset)).unwrap();
        let weights = MPCWeights {
            q: DMatrix::zeros(6, 6),
            q_n: DMatrix::zeros(6, 6),
            r: DMatrix::identity(3, 3),
            q_lin: DVector::zeros(6),
            region_costs: part.cell_costs.clone(),
        };
        let p = MPCProblem::new(model, fm, weights, 3, hover(18.5, 18.5)).unwrap();
        match plan_step(&p, &hover(1.0, 1.0), &cfg()) {
            Err(PlanError::Infeasible(msg)) => assert!(msg.contains("terminal"), "{msg}"),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn receding_single_step_matches_plan() {
        let map = PolygonMap { boundary: square(0.0, 0.0, 20.0, 20.0), ..Default::default() };
        let mut q_n = DMatrix::zeros(6, 6);
        q_n[(0, 0)] = 1.0;
        q_n[(2, 2)] = 1.0;
        let p = drone_problem(map, 4, hover(15.0, 12.0), q_n);
        let x0 = hover(5.0, 5.0);
        let (plan, _) = plan_step(&p, &x0, &cfg()).unwrap();
        let rh = receding_horizon(&p, &x0, 1, &cfg()).unwrap();
        assert_eq!(rh.points.len(), 2);
        let du = rh.points[0].u.as_ref().unwrap() - plan.points[0].u.as_ref().unwrap();
        assert!(du.amax() < 1e-6);
        assert!((&rh.points[1].x - &plan.points[1].x).amax() < 1e-6);
        let long = receding_horizon(&p, &x0, 6, &cfg()).unwrap();
        assert!(long.stopped.is_none());
        assert!(long.max_dynamics_residual < 1e-9);
    }
}
