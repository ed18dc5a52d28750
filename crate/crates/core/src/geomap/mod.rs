//! Environment maps: polygonal regions, convex partitions and the
//! hybrid-zonotope feasible output set.

pub mod partition;
pub mod polygon;

use std::fmt::Write as _;

use nalgebra::DVector;
use thiserror::Error;

use crate::zonoset::{hybzono_from_vrep, HybridZonotope, SetError, VPolytope};
pub use polygon::{Point, Polygon};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("invalid extrusion limits: P_noise = {p_noise}, Pe_max = {pe_max}")]
    InvalidExtrusion { p_noise: f64, pe_max: f64 },
    #[error(transparent)]
    Set(#[from] SetError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostRegion {
    pub polygon: Polygon,
    pub cost: f64,
}

/// Operating area with keep-out, noise-restricted and elevated-cost regions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolygonMap {
    pub boundary: Polygon,
    pub obstacles: Vec<Polygon>,
    pub noise_regions: Vec<Polygon>,
    pub cost_regions: Vec<CostRegion>,
}

impl PolygonMap {
    /// Check simplicity, containment and pairwise disjointness.
    ///
    /// Obstacles, noise regions and cost regions must lie strictly inside the
    /// boundary and must not touch each other, except that an obstacle may lie
    /// strictly inside a single noise or cost region.
    pub fn validate(&self) -> Result<(), MapError> {
        if !self.boundary.is_simple() {
            return Err(MapError::InvalidPolygon("boundary is not a simple polygon".into()));
        }
        let holes = self.holes();
        for (name, _, h) in &holes {
            if !h.is_simple() {
                return Err(MapError::InvalidPolygon(format!("{name} is not a simple polygon")));
            }
        }
        let tol = self.tol();
        for (name, _, h) in &holes {
            if !strictly_inside(h, &self.boundary, tol) {
                return Err(MapError::InvalidMap(format!("{name} is not strictly inside the boundary")));
            }
        }
        for i in 0..holes.len() {
            for j in (i + 1)..holes.len() {
                let (ni, oi, hi) = &holes[i];
                let (nj, oj, hj) = &holes[j];
                if *oi != *oj && (*oi && strictly_inside(hi, hj, tol) || *oj && strictly_inside(hj, hi, tol)) {
                    continue;
                }
                let touch = hi.edges().any(|(a, b)| hj.edges().any(|(c, d)| polygon::segments_touch(a, b, c, d, tol)));
                let nested = hi.contains(hj.vertices[0], tol) || hj.contains(hi.vertices[0], tol);
                if touch || nested {
                    return Err(MapError::InvalidMap(format!("{ni} overlaps {nj}")));
                }
            }
        }
        Ok(())
    }

    fn tol(&self) -> f64 {
        1e-9 * self.boundary.scale().max(1.0)
    }

    /// Named regions, flagged `true` for obstacles.
    fn holes(&self) -> Vec<(String, bool, &Polygon)> {
        let mut v: Vec<(String, bool, &Polygon)> = Vec::new();
        v.extend(self.obstacles.iter().enumerate().map(|(i, p)| (format!("obstacle {i}"), true, p)));
        v.extend(self.noise_regions.iter().enumerate().map(|(i, p)| (format!("noise region {i}"), false, p)));
        v.extend(self.cost_regions.iter().enumerate().map(|(i, r)| (format!("cost region {i}"), false, &r.polygon)));
        v
    }

    /// Obstacles lying inside `region`.
    fn obstacles_within(&self, region: &Polygon) -> Vec<Polygon> {
        let tol = self.tol();
        self.obstacles.iter().filter(|o| strictly_inside(o, region, tol)).cloned().collect()
    }

    fn is_nested(&self, obstacle: &Polygon) -> bool {
        let tol = self.tol();
        self.noise_regions
            .iter()
            .chain(self.cost_regions.iter().map(|r| &r.polygon))
            .any(|r| strictly_inside(obstacle, r, tol))
    }

    /// Area of the boundary minus every obstacle.
    pub fn traversable_area(&self) -> f64 {
        self.boundary.area() - self.obstacles.iter().map(Polygon::area).sum::<f64>()
    }

    /// Whether `p` lies in the traversable area (free, noise or cost cells).
    pub fn is_traversable(&self, p: Point) -> bool {
        self.boundary.contains(p, 0.0) && !self.obstacles.iter().any(|o| o.contains_interior(p, 0.0))
    }
}

fn strictly_inside(inner: &Polygon, outer: &Polygon, tol: f64) -> bool {
    inner.vertices.iter().all(|&p| outer.contains_interior(p, tol))
        && !inner.edges().any(|(a, b)| outer.edges().any(|(c, d)| polygon::segments_touch(a, b, c, d, tol)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Free,
    Cost,
    Noise,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Free => "free",
            CellKind::Cost => "cost",
            CellKind::Noise => "noise",
        }
    }
}

/// Convex cells of the traversable area. Elevated-cost cells are listed with
/// the free cells and carry their cost; noise cells follow.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPartition {
    pub free_cells: Vec<VPolytope>,
    pub noise_cells: Vec<VPolytope>,
    /// Cost per cell, indexed over `free_cells` then `noise_cells`.
    pub cell_costs: Vec<f64>,
    pub kinds: Vec<CellKind>,
    polygons: Vec<Polygon>,
}

impl ConvexPartition {
    pub fn num_cells(&self) -> usize {
        self.polygons.len()
    }

    /// Counter-clockwise polygon of cell `i`.
    pub fn polygon(&self, i: usize) -> &Polygon {
        &self.polygons[i]
    }

    pub fn polygons(&self) -> &[Polygon] {
        &self.polygons
    }

    pub fn is_noise(&self, i: usize) -> bool {
        self.kinds[i] == CellKind::Noise
    }

    /// First cell containing `p` within `tol`.
    pub fn locate(&self, p: Point, tol: f64) -> Option<usize> {
        self.polygons.iter().position(|c| c.contains(p, tol))
    }

    pub fn total_area(&self) -> f64 {
        self.polygons.iter().map(Polygon::area).sum()
    }

    /// Plain-text vertex lists, one block per cell.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "cells {}", self.num_cells());
        for (i, poly) in self.polygons.iter().enumerate() {
            let _ = writeln!(s, "cell {i} {} {} {}", self.kinds[i].as_str(), self.cell_costs[i], poly.len());
            for v in &poly.vertices {
                let _ = writeln!(s, "{} {}", v[0], v[1]);
            }
        }
        s
    }
}

fn to_vpoly(p: &Polygon) -> Result<VPolytope, MapError> {
    Ok(VPolytope::new(p.vertices.iter().map(|v| DVector::from_column_slice(v)).collect())?)
}

/// Partition free space, noise regions and cost regions into convex cells.
pub fn convex_partition(map: &PolygonMap) -> Result<ConvexPartition, MapError> {
    map.validate()?;
    let mut holes: Vec<Polygon> = map.obstacles.iter().filter(|o| !map.is_nested(o)).cloned().collect();
    holes.extend(map.noise_regions.iter().cloned());
    holes.extend(map.cost_regions.iter().map(|r| r.polygon.clone()));

    let mut polygons = Vec::new();
    let mut kinds = Vec::new();
    let mut costs = Vec::new();
    for c in partition::convex_decompose(&map.boundary, &holes)? {
        polygons.push(c);
        kinds.push(CellKind::Free);
        costs.push(0.0);
    }
    for r in &map.cost_regions {
        for c in partition::convex_decompose(&r.polygon, &map.obstacles_within(&r.polygon))? {
            polygons.push(c);
            kinds.push(CellKind::Cost);
            costs.push(r.cost);
        }
    }
    let n_free = polygons.len();
    for r in &map.noise_regions {
        for c in partition::convex_decompose(r, &map.obstacles_within(r))? {
            polygons.push(c);
            kinds.push(CellKind::Noise);
            costs.push(0.0);
        }
    }
    let free_cells = polygons[..n_free].iter().map(to_vpoly).collect::<Result<_, _>>()?;
    let noise_cells = polygons[n_free..].iter().map(to_vpoly).collect::<Result<_, _>>()?;
    Ok(ConvexPartition { free_cells, noise_cells, cell_costs: costs, kinds, polygons })
}

/// Hybrid-zonotope feasible output set with its cell bookkeeping.
#[derive(Debug, Clone)]
pub struct FeasibleMap {
    pub partition: ConvexPartition,
    pub f: HybridZonotope,
    /// Cell index of each binary factor of `f`.
    pub region_of_binary: Vec<usize>,
}

impl FeasibleMap {
    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    pub fn region_cost(&self, cell: usize) -> f64 {
        self.partition.cell_costs[cell]
    }

    /// Cell selected by a binary assignment (largest binary wins).
    pub fn cell_of_binaries(&self, xb: &[f64]) -> Option<usize> {
        xb.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| self.region_of_binary[i])
    }
}

/// Extrude free cells over `P_e ∈ [0, Pe_max]` and noise cells over
/// `P_e ∈ [0, P_noise]`, giving a set over (ξ, η, P_e).
pub fn build_feasible_set_3d(partition: &ConvexPartition, pe_max: f64, p_noise: f64) -> Result<FeasibleMap, MapError> {
    if !(pe_max >= p_noise && p_noise >= 0.0) {
        return Err(MapError::InvalidExtrusion { p_noise, pe_max });
    }
    let polys: Vec<VPolytope> = partition
        .polygons
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let top = if partition.is_noise(i) { p_noise } else { pe_max };
            let mut verts: Vec<DVector<f64>> =
                p.vertices.iter().map(|v| DVector::from_column_slice(&[v[0], v[1], 0.0])).collect();
            verts.extend(p.vertices.iter().map(|v| DVector::from_column_slice(&[v[0], v[1], top])));
            VPolytope::new(verts)
        })
        .collect::<Result<_, _>>()?;
    let f = hybzono_from_vrep(&polys)?;
    Ok(FeasibleMap { partition: partition.clone(), f, region_of_binary: (0..polys.len()).collect() })
}

/// Set over position outputs (ξ, η) only.
pub fn build_feasible_set_2d(partition: &ConvexPartition) -> Result<FeasibleMap, MapError> {
    if partition.num_cells() == 0 {
        return Err(MapError::InvalidMap("empty partition".into()));
    }
    let polys: Vec<VPolytope> = partition.polygons.iter().map(to_vpoly).collect::<Result<_, _>>()?;
    let f = hybzono_from_vrep(&polys)?;
    Ok(FeasibleMap { partition: partition.clone(), f, region_of_binary: (0..polys.len()).collect() })
}
