//! TOML scenario files.
//!
//! Units are SI except turn rate (deg/s), specific fuel consumption (kg/kWh)
//! and battery capacity, which is given in joules.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geomap::{
    build_feasible_set_2d, build_feasible_set_3d, convex_partition, ConvexPartition, CostRegion, MapError, Point,
    Polygon, PolygonMap,
};
use crate::miqp::MIQPConfig;
use crate::planner::{MPCProblem, MPCWeights, PlanError};
use crate::uasmodel::{DiscreteModel, ModelError, Variant, VehicleParams, Wayset};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("field `{field}`: {msg}")]
    Field { field: String, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

fn field_err(field: &str, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Field { field: field.into(), msg: msg.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub vehicle: VehicleSpec,
    pub map: MapSpec,
    pub start: StateSpec,
    pub goal: StateSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wayset: Option<WaysetSpec>,
    pub weights: WeightsSpec,
    #[serde(default)]
    pub solver: MIQPConfig,
    #[serde(default)]
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub variant: Variant,
    pub dt: f64,
    pub horizon: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub omega_max_deg: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub pb_min: f64,
    pub pb_max: f64,
    pub pb_rate: f64,
    pub battery_capacity_j: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    #[serde(default)]
    pub forward_progress: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine: Option<EngineSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSpec {
    pub pe_min: f64,
    pub pe_max: f64,
    pub pe_rate: f64,
    pub sfc_kg_per_kwh: f64,
    pub mf_max: f64,
    /// Engine power ceiling inside noise regions.
    pub p_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub boundary: Vec<Point>,
    #[serde(default)]
    pub obstacles: Vec<Vec<Point>>,
    #[serde(default)]
    pub noise_regions: Vec<Vec<Point>>,
    #[serde(default)]
    pub cost_regions: Vec<CostRegionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostRegionSpec {
    pub cost: f64,
    pub polygon: Vec<Point>,
}

/// Full state by name; omitted entries are zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateSpec {
    pub xi: f64,
    pub eta: f64,
    pub xi_dot: f64,
    pub eta_dot: f64,
    pub soc: f64,
    pub pb: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaysetSpec {
    pub xi: [f64; 2],
    pub eta: [f64; 2],
    pub soc: [f64; 2],
}

/// Diagonal weights over states (`q`, `q_n`, `q_lin`) and inputs (`r`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSpec {
    pub q: Vec<f64>,
    pub q_n: Vec<f64>,
    pub r: Vec<f64>,
    pub q_lin: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mode {
    #[default]
    OpenLoop,
    RecedingHorizon {
        steps: usize,
    },
}

/// Everything needed to plan, derived from a scenario.
#[derive(Debug, Clone)]
pub struct Setup {
    pub map: PolygonMap,
    pub partition: ConvexPartition,
    pub problem: MPCProblem,
    pub x0: DVector<f64>,
}

fn polygon(points: &[Point], field: &str) -> Result<Polygon, ScenarioError> {
    if points.len() < 3 {
        return Err(field_err(field, "polygon needs at least 3 vertices"));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(field_err(field, "non-finite vertex"));
    }
    Ok(Polygon::new(points.to_vec()))
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.check()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario fields are serializable")
    }

    pub fn is_hybrid(&self) -> bool {
        self.vehicle.variant == Variant::HybridElectric
    }

    /// Field-level checks that do not need the geometry or set machinery.
    pub fn check(&self) -> Result<(), ScenarioError> {
        let v = &self.vehicle;
        if !(v.dt > 0.0 && v.dt.is_finite()) {
            return Err(field_err("vehicle.dt", "must be positive"));
        }
        if v.horizon == 0 {
            return Err(field_err("vehicle.horizon", "must be at least 1"));
        }
        match (self.is_hybrid(), &v.engine) {
            (true, None) => return Err(field_err("vehicle.engine", "required for the hybrid-electric variant")),
            (false, Some(_)) => return Err(field_err("vehicle.engine", "not allowed for the electric variant")),
            _ => {}
        }
        let (nx, nu) = if self.is_hybrid() { (8, 4) } else { (6, 3) };
        let w = &self.weights;
        for (name, vals, n) in [
            ("weights.q", &w.q, nx),
            ("weights.q_n", &w.q_n, nx),
            ("weights.r", &w.r, nu),
            ("weights.q_lin", &w.q_lin, nx),
        ] {
            if vals.len() != n {
                return Err(field_err(name, format!("expected {n} entries, found {}", vals.len())));
            }
            if vals.iter().any(|x| !x.is_finite()) {
                return Err(field_err(name, "entries must be finite"));
            }
        }
        for (name, vals) in [("weights.q", &w.q), ("weights.q_n", &w.q_n), ("weights.r", &w.r)] {
            if vals.iter().any(|&x| x < 0.0) {
                return Err(field_err(name, "diagonal weights must be non-negative"));
            }
        }
        for (name, s) in [("start", &self.start), ("goal", &self.goal)] {
            if !self.is_hybrid() && (s.mf.is_some() || s.pe.is_some()) {
                return Err(field_err(name, "mf and pe are not states of the electric variant"));
            }
        }
        for (i, r) in self.map.cost_regions.iter().enumerate() {
            if !(r.cost >= 0.0 && r.cost.is_finite()) {
                return Err(field_err(&format!("map.cost_regions[{i}].cost"), "must be finite and non-negative"));
            }
        }
        if let Mode::RecedingHorizon { steps: 0 } = self.mode {
            return Err(field_err("mode.steps", "must be at least 1"));
        }
        self.solver.validate().map_err(|e| field_err("solver", e.to_string()))?;
        Ok(())
    }

    pub fn params(&self) -> VehicleParams {
        let v = &self.vehicle;
        let e = v.engine.as_ref();
        VehicleParams {
            variant: v.variant,
            v_min: v.v_min,
            v_max: v.v_max,
            omega_lim: v.omega_max_deg.to_radians(),
            p_min: v.p_min,
            p_max: v.p_max,
            pb_min: v.pb_min,
            pb_max: v.pb_max,
            pe_min: e.map_or(0.0, |e| e.pe_min),
            pe_max: e.map_or(0.0, |e| e.pe_max),
            pb_rate: v.pb_rate,
            pe_rate: e.map_or(0.0, |e| e.pe_rate),
            c_b: v.battery_capacity_j,
            sfc: e.map_or(0.0, |e| e.sfc_kg_per_kwh / 3.6e6),
            soc_min: v.soc_min,
            soc_max: v.soc_max,
            mf_max: e.map_or(0.0, |e| e.mf_max),
            forward_progress: v.forward_progress,
        }
    }

    pub fn polygon_map(&self) -> Result<PolygonMap, ScenarioError> {
        let m = &self.map;
        Ok(PolygonMap {
            boundary: polygon(&m.boundary, "map.boundary")?,
            obstacles: m
                .obstacles
                .iter()
                .enumerate()
                .map(|(i, p)| polygon(p, &format!("map.obstacles[{i}]")))
                .collect::<Result<_, _>>()?,
            noise_regions: m
                .noise_regions
                .iter()
                .enumerate()
                .map(|(i, p)| polygon(p, &format!("map.noise_regions[{i}]")))
                .collect::<Result<_, _>>()?,
            cost_regions: m
                .cost_regions
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    Ok(CostRegion {
                        polygon: polygon(&r.polygon, &format!("map.cost_regions[{i}].polygon"))?,
                        cost: r.cost,
                    })
                })
                .collect::<Result<_, ScenarioError>>()?,
        })
    }

    fn state(&self, s: &StateSpec) -> DVector<f64> {
        let mut v = vec![s.xi, s.xi_dot, s.eta, s.eta_dot, s.soc, s.pb];
        if self.is_hybrid() {
            v.extend([s.mf.unwrap_or(0.0), s.pe.unwrap_or(0.0)]);
        }
        DVector::from_vec(v)
    }

    pub fn start_state(&self) -> DVector<f64> {
        self.state(&self.start)
    }

    pub fn goal_state(&self) -> DVector<f64> {
        self.state(&self.goal)
    }

    /// Partition the map only.
    pub fn partition(&self) -> Result<(PolygonMap, ConvexPartition), ScenarioError> {
        let map = self.polygon_map()?;
        let part = convex_partition(&map)?;
        Ok((map, part))
    }

    /// Build the model, map set and MPC problem.
    pub fn setup(&self) -> Result<Setup, ScenarioError> {
        self.check()?;
        let (map, partition) = self.partition()?;
        let params = self.params();
        let fmap = match &self.vehicle.engine {
            Some(e) => build_feasible_set_3d(&partition, e.pe_max, e.p_noise)?,
            None => build_feasible_set_2d(&partition)?,
        };
        let (lo, hi) = map.boundary.bounds();
        let wayset = self.wayset.as_ref().map(|w| Wayset {
            xi: (w.xi[0], w.xi[1]),
            eta: (w.eta[0], w.eta[1]),
            soc: (w.soc[0], w.soc[1]),
        });
        let model = DiscreteModel::new(params, self.vehicle.dt, (lo, hi), wayset)?;
        let w = &self.weights;
        let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
        let weights = MPCWeights {
            q: diag(&w.q),
            q_n: diag(&w.q_n),
            r: diag(&w.r),
            q_lin: DVector::from_column_slice(&w.q_lin),
            region_costs: partition.cell_costs.clone(),
        };
        let problem = MPCProblem::new(model, fmap, weights, self.vehicle.horizon, self.goal_state())?;
        Ok(Setup { map, partition, problem, x0: self.start_state() })
    }
}
