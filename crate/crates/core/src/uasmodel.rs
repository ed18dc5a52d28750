//! Reduced-order coupled motion/energy model.
//!
//! Motion is a planar double integrator in the flat outputs (ξ, η); energy
//! states are first-order integrators of battery and engine power. The two
//! are coupled only through the constrained-zonotope state set, which caps
//! the speed at the quasi-steady value implied by total output power.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::zonoset::{ConstrainedZonotope, IntervalBox, SetError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
    #[error("infeasible state set: {0}")]
    InfeasibleStateSet(String),
    #[error("velocity {v} outside [{lo}, {hi}]")]
    VelocityOutOfRange { v: f64, lo: f64, hi: f64 },
    #[error("empty interval for {0}")]
    EmptyInterval(&'static str),
    #[error("time step must be positive")]
    InvalidTimeStep,
    #[error(transparent)]
    Set(#[from] SetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    HybridElectric,
    Electric,
}

/// Vehicle limits in SI units (W, J, s, m, kg, rad).
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleParams {
    pub variant: Variant,
    pub v_min: f64,
    pub v_max: f64,
    /// Turn-rate limit, rad/s.
    pub omega_lim: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub pb_min: f64,
    pub pb_max: f64,
    pub pe_min: f64,
    pub pe_max: f64,
    /// Battery power rate limit, W/s.
    pub pb_rate: f64,
    /// Engine power rate limit, W/s.
    pub pe_rate: f64,
    /// Battery capacity, J.
    pub c_b: f64,
    /// Specific fuel consumption, kg/J.
    pub sfc: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub mf_max: f64,
    pub forward_progress: bool,
}

/// State and input indices shared by both variants. Engine entries are
/// `None` for the electric variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub xi: usize,
    pub xi_dot: usize,
    pub eta: usize,
    pub eta_dot: usize,
    pub soc: usize,
    pub pb: usize,
    pub mf: Option<usize>,
    pub pe: Option<usize>,
    pub n_states: usize,
    pub xi_ddot: usize,
    pub eta_ddot: usize,
    pub pb_dot: usize,
    pub pe_dot: Option<usize>,
    pub n_inputs: usize,
}

impl StateLayout {
    pub fn for_variant(variant: Variant) -> Self {
        let hybrid = variant == Variant::HybridElectric;
        Self {
            xi: 0,
            xi_dot: 1,
            eta: 2,
            eta_dot: 3,
            soc: 4,
            pb: 5,
            mf: hybrid.then_some(6),
            pe: hybrid.then_some(7),
            n_states: if hybrid { 8 } else { 6 },
            xi_ddot: 0,
            eta_ddot: 1,
            pb_dot: 2,
            pe_dot: hybrid.then_some(3),
            n_inputs: if hybrid { 4 } else { 3 },
        }
    }

    /// State indices covered by the coupled state set, in set-coordinate order.
    pub fn coupled_states(&self) -> Vec<usize> {
        let mut v = vec![self.xi_dot, self.eta_dot, self.pb];
        v.extend(self.pe);
        v
    }

    /// State indices of the map output y = Hx.
    pub fn output_states(&self) -> Vec<usize> {
        let mut v = vec![self.xi, self.eta];
        v.extend(self.pe);
        v
    }
}

impl VehicleParams {
    pub fn layout(&self) -> StateLayout {
        StateLayout::for_variant(self.variant)
    }

    pub fn is_hybrid(&self) -> bool {
        self.variant == Variant::HybridElectric
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidParams(m.to_string()));
        let all = [
            self.v_min,
            self.v_max,
            self.omega_lim,
            self.p_min,
            self.p_max,
            self.pb_min,
            self.pb_max,
            self.pb_rate,
            self.c_b,
            self.soc_min,
            self.soc_max,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter");
        }
        if !(self.v_max > self.v_min && self.v_min > 0.0) {
            return bad("require v_max > v_min > 0");
        }
        if !(self.p_max > self.p_min && self.p_min > 0.0) {
            return bad("require P_max > P_min > 0");
        }
        if self.pb_min > self.pb_max {
            return bad("require Pb_min <= Pb_max");
        }
        if self.c_b <= 0.0 {
            return bad("battery capacity must be positive");
        }
        if self.omega_lim <= 0.0 || self.pb_rate < 0.0 {
            return bad("rate limits must be non-negative");
        }
        if self.soc_min > self.soc_max {
            return bad("require SOC_min <= SOC_max");
        }
        if self.is_hybrid() {
            if !(self.pe_min.is_finite() && self.pe_max.is_finite() && self.pe_rate.is_finite() && self.sfc.is_finite())
            {
                return bad("non-finite engine parameter");
            }
            if self.pe_min > self.pe_max || self.pe_rate < 0.0 || self.mf_max < 0.0 {
                return bad("invalid engine limits");
            }
        }
        Ok(())
    }

    /// Linear quasi-steady power needed for speed `v`.
    pub fn power_velocity(&self, v: f64) -> Result<f64, ModelError> {
        if !(v >= self.v_min - 1e-12 && v <= self.v_max + 1e-12) {
            return Err(ModelError::VelocityOutOfRange { v, lo: self.v_min, hi: self.v_max });
        }
        Ok((self.p_max - self.p_min) / (self.v_max - self.v_min) * (v - self.v_min) + self.p_min)
    }

    /// Inverse of [`power_velocity`](Self::power_velocity), unclamped.
    pub fn velocity_for_power(&self, p: f64) -> f64 {
        self.v_min + (p - self.p_min) * (self.v_max - self.v_min) / (self.p_max - self.p_min)
    }

    pub fn state_constraint_params(&self) -> StateConstraintParams {
        let c_z = 0.5 * (self.p_max - self.p_min);
        let a_z = (self.v_max + self.v_min) / (self.v_max - self.v_min) * c_z;
        let b_z = a_z / (a_z + c_z) * self.v_max;
        let g_b = 0.5 * (self.pb_max - self.pb_min);
        let c_b = 0.5 * (self.pb_max + self.pb_min);
        let (g_e, c_e) = if self.is_hybrid() {
            (0.5 * (self.pe_max - self.pe_min), 0.5 * (self.pe_max + self.pe_min))
        } else {
            (0.0, 0.0)
        };
        let c_1 = 2.0 * a_z - (a_z - c_z) + self.p_min;
        StateConstraintParams { c_z, a_z, b_z, g_b, c_b, g_e, c_e, c_1 }
    }

    /// Total output power limits implied by the component boxes.
    fn total_power_range(&self) -> (f64, f64) {
        if self.is_hybrid() {
            (self.pb_min + self.pe_min, self.pb_max + self.pe_max)
        } else {
            (self.pb_min, self.pb_max)
        }
    }
}

/// Scalars of the coupled state-set construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateConstraintParams {
    pub c_z: f64,
    pub a_z: f64,
    pub b_z: f64,
    pub g_b: f64,
    pub c_b: f64,
    pub g_e: f64,
    pub c_e: f64,
    pub c_1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub state_labels: Vec<&'static str>,
    pub input_labels: Vec<&'static str>,
}

pub fn continuous_dynamics(p: &VehicleParams) -> ContinuousModel {
    let l = p.layout();
    let mut a = DMatrix::zeros(l.n_states, l.n_states);
    let mut b = DMatrix::zeros(l.n_states, l.n_inputs);
    a[(l.xi, l.xi_dot)] = 1.0;
    a[(l.eta, l.eta_dot)] = 1.0;
    a[(l.soc, l.pb)] = -1.0 / p.c_b;
    b[(l.xi_dot, l.xi_ddot)] = 1.0;
    b[(l.eta_dot, l.eta_ddot)] = 1.0;
    b[(l.pb, l.pb_dot)] = 1.0;
    let mut state_labels = vec!["xi", "xi_dot", "eta", "eta_dot", "soc", "p_b"];
    let mut input_labels = vec!["xi_ddot", "eta_ddot", "p_b_dot"];
    if let (Some(mf), Some(pe), Some(pe_dot)) = (l.mf, l.pe, l.pe_dot) {
        a[(mf, pe)] = -p.sfc;
        b[(pe, pe_dot)] = 1.0;
        state_labels.extend(["m_f", "p_e"]);
        input_labels.push("p_e_dot");
    }
    ContinuousModel { a, b, state_labels, input_labels }
}

/// Zero-order-hold discretization via the matrix-exponential series.
///
/// For nilpotent `A` the series terminates and the result is exact; otherwise
/// terms are summed until they fall below machine precision.
pub fn discretize(m: &ContinuousModel, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>), ModelError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ModelError::InvalidTimeStep);
    }
    let n = m.a.nrows();
    let mut ad = DMatrix::identity(n, n);
    // Γ = Σ A^k dt^(k+1) / (k+1)!
    let mut gamma = DMatrix::identity(n, n) * dt;
    let mut term = DMatrix::identity(n, n);
    for k in 1..64 {
        term = &term * &m.a * (dt / k as f64);
        if term.amax() == 0.0 {
            break;
        }
        ad += &term;
        let g = &term * (dt / (k + 1) as f64);
        gamma += &g;
        if term.amax() < 1e-18 * ad.amax() {
            break;
        }
    }
    Ok((ad, gamma * &m.b))
}

/// Acceleration diamond `±ξ̈ ±η̈ ≤ v_min ω_lim` as a rotated box, extended
/// with rate boxes on the power inputs.
pub fn build_input_set(p: &VehicleParams) -> ConstrainedZonotope {
    let s = 0.5 * p.v_min * p.omega_lim;
    let accel = ConstrainedZonotope::new(
        DMatrix::from_row_slice(2, 2, &[s, s, -s, s]),
        DVector::zeros(2),
        DMatrix::zeros(0, 2),
        DVector::zeros(0),
    )
    .expect("consistent dimensions");
    let mut set = accel.cartesian(&ConstrainedZonotope::from_box(&[-p.pb_rate], &[p.pb_rate]));
    if p.is_hybrid() {
        set = set.cartesian(&ConstrainedZonotope::from_box(&[-p.pe_rate], &[p.pe_rate]));
    }
    set
}

/// Coupled constrained-zonotope state set over (ξ̇, η̇, P_b[, P_e]).
///
/// Hybrid variant: 7 factors / 3 constraints (8 / 4 with forward progress).
/// Electric variant drops the engine column: 6 factors / 3 constraints.
pub fn build_state_set(p: &VehicleParams) -> Result<ConstrainedZonotope, ModelError> {
    p.validate()?;
    let (lo, hi) = p.total_power_range();
    if p.p_min > hi {
        return Err(ModelError::InfeasibleStateSet(format!(
            "P_min = {} exceeds the largest available power {}",
            p.p_min, hi
        )));
    }
    if p.p_max < lo {
        return Err(ModelError::InfeasibleStateSet(format!(
            "P_max = {} below the smallest available power {}",
            p.p_max, lo
        )));
    }
    let k = p.state_constraint_params();
    let h = 0.5 * k.b_z;
    let set = if p.is_hybrid() {
        #[rustfmt::skip]
        let g = DMatrix::from_row_slice(4, 7, &[
            0.0, 0.0,  h,  -h,  h, -h, 0.0,
            0.0, 0.0, -h,   h,  h, -h, 0.0,
            k.g_b, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, k.g_e, 0.0, 0.0, 0.0, 0.0, 0.0,
        ]);
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(3, 7, &[
            k.g_b, k.g_e, k.a_z, k.a_z, 0.0, 0.0, 0.0,
            0.0, 0.0, k.a_z, k.a_z, 0.0, 0.0, k.c_z,
            0.0, 0.0, 0.0, 0.0, k.a_z, k.a_z, k.c_z,
        ]);
        let c = DVector::from_column_slice(&[0.0, 0.0, k.c_b, k.c_e]);
        let b = DVector::from_column_slice(&[k.c_1 - k.c_b - k.c_e, k.a_z, k.a_z]);
        ConstrainedZonotope::new(g, c, a, b)?
    } else {
        #[rustfmt::skip]
        let g = DMatrix::from_row_slice(3, 6, &[
            0.0,  h, -h,  h, -h, 0.0,
            0.0, -h,  h,  h, -h, 0.0,
            k.g_b, 0.0, 0.0, 0.0, 0.0, 0.0,
        ]);
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(3, 6, &[
            k.g_b, k.a_z, k.a_z, 0.0, 0.0, 0.0,
            0.0, k.a_z, k.a_z, 0.0, 0.0, k.c_z,
            0.0, 0.0, 0.0, k.a_z, k.a_z, k.c_z,
        ]);
        let c = DVector::from_column_slice(&[0.0, 0.0, k.c_b]);
        let b = DVector::from_column_slice(&[k.c_1 - k.c_b, k.a_z, k.a_z]);
        ConstrainedZonotope::new(g, c, a, b)?
    };
    let set = if p.forward_progress {
        let mut a = vec![0.0; set.dim()];
        a[0] = -1.0;
        set.intersect_halfspace(&a, -p.v_min)?
    } else {
        set
    };
    if set.is_empty()? {
        return Err(ModelError::InfeasibleStateSet("coupled state set is empty".into()));
    }
    Ok(set)
}

/// Halfspace description of the coupled state set: speed limit from the
/// linear power map, minimum total power, power boxes, optional forward
/// progress, and `P ≤ P_max` when the boxes do not already imply it.
pub fn state_set_hrep(p: &VehicleParams) -> (DMatrix<f64>, DVector<f64>) {
    let hybrid = p.is_hybrid();
    let n = if hybrid { 4 } else { 3 };
    let slope = (p.v_max - p.v_min) / (p.p_max - p.p_min);
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    let power = |coef: f64| {
        let mut r = vec![0.0; n];
        r[2] = coef;
        if hybrid {
            r[3] = coef;
        }
        r
    };
    for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let mut r = power(-slope);
        r[0] = sx;
        r[1] = sy;
        rows.push((r, p.v_min - slope * p.p_min));
    }
    rows.push((power(-1.0), -p.p_min));
    let unit = |i: usize, s: f64| {
        let mut r = vec![0.0; n];
        r[i] = s;
        r
    };
    rows.push((unit(2, 1.0), p.pb_max));
    rows.push((unit(2, -1.0), -p.pb_min));
    if hybrid {
        rows.push((unit(3, 1.0), p.pe_max));
        rows.push((unit(3, -1.0), -p.pe_min));
    }
    if p.p_max < p.total_power_range().1 {
        rows.push((power(1.0), p.p_max));
    }
    if p.forward_progress {
        rows.push((unit(0, -1.0), -p.v_min));
    }
    let h = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].0[j]);
    let f = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    (h, f)
}

/// Terminal wayset: closed intervals on ξ, η and SOC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wayset {
    pub xi: (f64, f64),
    pub eta: (f64, f64),
    pub soc: (f64, f64),
}

/// Extend the state set with interval generators on ξ, η and SOC.
///
/// The result lives over (coupled coordinates..., ξ, η, SOC) and has the same
/// equality constraints as `x_set`.
pub fn build_terminal_set(x_set: &ConstrainedZonotope, wayset: &Wayset) -> Result<ConstrainedZonotope, ModelError> {
    for (name, (lo, hi)) in [("xi", wayset.xi), ("eta", wayset.eta), ("soc", wayset.soc)] {
        if !(lo <= hi) {
            return Err(ModelError::EmptyInterval(name));
        }
    }
    let lo = [wayset.xi.0, wayset.eta.0, wayset.soc.0];
    let hi = [wayset.xi.1, wayset.eta.1, wayset.soc.1];
    Ok(x_set.cartesian(&ConstrainedZonotope::from_box(&lo, &hi)))
}

/// Discrete-time model with its constraint sets.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    pub params: VehicleParams,
    pub layout: StateLayout,
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub dt: f64,
    /// Coupled state set over `layout.coupled_states()`.
    pub x_set: ConstrainedZonotope,
    pub u_set: ConstrainedZonotope,
    /// Terminal set over coupled states followed by (ξ, η, SOC).
    pub xn_set: ConstrainedZonotope,
    /// Output matrix selecting `layout.output_states()`.
    pub h: DMatrix<f64>,
    /// Box on states not covered by the coupled set (positions, SOC, fuel).
    pub state_box: IntervalBox,
    pub wayset: Option<Wayset>,
}

impl DiscreteModel {
    pub fn new(
        params: VehicleParams,
        dt: f64,
        position_box: ([f64; 2], [f64; 2]),
        wayset: Option<Wayset>,
    ) -> Result<Self, ModelError> {
        params.validate()?;
        let layout = params.layout();
        let cont = continuous_dynamics(&params);
        let (ad, bd) = discretize(&cont, dt)?;
        let x_set = build_state_set(&params)?;
        let u_set = build_input_set(&params);
        let (pos_lo, pos_hi) = position_box;
        let full =
            Wayset { xi: (pos_lo[0], pos_hi[0]), eta: (pos_lo[1], pos_hi[1]), soc: (params.soc_min, params.soc_max) };
        let xn_set = build_terminal_set(&x_set, wayset.as_ref().unwrap_or(&full))?;
        let outputs = layout.output_states();
        let h = DMatrix::from_fn(outputs.len(), layout.n_states, |i, j| if outputs[i] == j { 1.0 } else { 0.0 });

        let mut lower = DVector::from_element(layout.n_states, f64::NEG_INFINITY);
        let mut upper = DVector::from_element(layout.n_states, f64::INFINITY);
        lower[layout.xi] = pos_lo[0];
        upper[layout.xi] = pos_hi[0];
        lower[layout.eta] = pos_lo[1];
        upper[layout.eta] = pos_hi[1];
        lower[layout.soc] = params.soc_min;
        upper[layout.soc] = params.soc_max;
        if let Some(mf) = layout.mf {
            lower[mf] = 0.0;
            upper[mf] = params.mf_max;
        }
        Ok(Self {
            params,
            layout,
            ad,
            bd,
            dt,
            x_set,
            u_set,
            xn_set,
            h,
            state_box: IntervalBox { lower, upper },
            wayset,
        })
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.ad * x + &self.bd * u
    }

    /// Coupled-state coordinates of a full state vector.
    pub fn coupled(&self, x: &[f64]) -> Vec<f64> {
        self.layout.coupled_states().iter().map(|&i| x[i]).collect()
    }

    /// Terminal-set coordinates of a full state vector.
    pub fn terminal_coords(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.coupled(x);
        v.extend([x[self.layout.xi], x[self.layout.eta], x[self.layout.soc]]);
        v
    }

    /// Plain-text dump of the model matrices.
    pub fn to_text(&self) -> String {
        fn mat(name: &str, m: &DMatrix<f64>) -> String {
            let mut s = format!("{name} {}x{}\n", m.nrows(), m.ncols());
            for r in m.row_iter() {
                let row: Vec<String> = r.iter().map(|v| format!("{v:.12e}")).collect();
                s.push_str(&row.join(" "));
                s.push('\n');
            }
            s
        }
        let mut out = format!("dt {}\n", self.dt);
        out += &mat("Ad", &self.ad);
        out += &mat("Bd", &self.bd);
        out += &mat("H", &self.h);
        out += &mat("X.G", &self.x_set.g);
        out += &mat("X.A", &self.x_set.a);
        out += &mat("U.G", &self.u_set.g);
        out
    }
}
