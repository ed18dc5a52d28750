//! Text, CSV and SVG outputs for plans and partitions.

use std::fmt::Write as _;

use crate::geomap::{CellKind, ConvexPartition, Polygon, PolygonMap};
use crate::planner::Trajectory;

/// Column names of the trajectory CSV for the given variant.
pub fn trajectory_columns(hybrid: bool) -> Vec<&'static str> {
    let mut cols = vec!["k", "t_s", "xi_m", "eta_m", "xidot_mps", "etadot_mps", "soc", "pb_w"];
    if hybrid {
        cols.extend(["mf_kg", "pe_w"]);
    }
    cols.extend(["xiddot", "etaddot", "pbdot"]);
    if hybrid {
        cols.push("pedot");
    }
    cols.extend(["region_idx", "region_cost", "v_mps", "theta_rad", "omega_radps"]);
    cols
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let l = &traj.layout;
    let hybrid = l.pe.is_some();
    let mut out = trajectory_columns(hybrid).join(",");
    out.push('\n');
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for p in &traj.points {
        let mut row = vec![p.k.to_string(), p.t.to_string()];
        let mut states = vec![l.xi, l.eta, l.xi_dot, l.eta_dot, l.soc, l.pb];
        states.extend(l.mf);
        states.extend(l.pe);
        row.extend(states.iter().map(|&i| p.x[i].to_string()));
        let mut inputs = vec![l.xi_ddot, l.eta_ddot, l.pb_dot];
        inputs.extend(l.pe_dot);
        row.extend(inputs.iter().map(|&i| opt(p.u.as_ref().map(|u| u[i]))));
        row.push(p.region.map_or(String::new(), |r| r.to_string()));
        row.push(p.region_cost.to_string());
        row.push(p.v.to_string());
        row.push(p.theta.to_string());
        row.push(opt(p.omega));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// `key: value` summary of every solve behind a trajectory.
pub fn solver_stats_text(traj: &Trajectory) -> String {
    let mut s = String::new();
    let total: f64 = traj.stats.iter().map(|st| st.wall_time).sum();
    let _ = writeln!(s, "solves: {}", traj.stats.len());
    let _ = writeln!(s, "total_wall_time_s: {total:.6}");
    let _ = writeln!(s, "trajectory_cost: {}", traj.cost);
    let _ = writeln!(s, "max_dynamics_residual: {:.3e}", traj.max_dynamics_residual);
    if let Some(reason) = &traj.stopped {
        let _ = writeln!(s, "stopped: {reason}");
    }
    for (i, st) in traj.stats.iter().enumerate() {
        let _ = writeln!(s, "\n[solve {i}]");
        let _ = writeln!(s, "status: {}", st.status.as_str());
        let _ = writeln!(s, "objective: {}", st.objective);
        let _ = writeln!(s, "bound: {}", st.bound);
        let _ = writeln!(s, "gap: {}", st.gap);
        let _ = writeln!(s, "root_bound: {}", st.root_bound);
        let _ = writeln!(s, "nodes: {}", st.nodes);
        let _ = writeln!(s, "qp_solves: {}", st.qp_solves);
        let _ = writeln!(s, "wall_time_s: {:.6}", st.wall_time);
    }
    s
}

/// Cell listing followed by convexity and coverage checks.
pub fn partition_report(map: &PolygonMap, part: &ConvexPartition) -> String {
    let mut s = part.to_text();
    let convex = part.polygons().iter().filter(|p| p.is_convex()).count();
    let covered = part.total_area();
    let expected = map.traversable_area();
    let rel = (covered - expected).abs() / expected.abs().max(1e-300);
    let _ = writeln!(s, "convex_cells: {convex}/{}", part.num_cells());
    let _ = writeln!(s, "covered_area: {covered}");
    let _ = writeln!(s, "traversable_area: {expected}");
    let _ = writeln!(s, "coverage_relative_error: {rel:.3e}");
    let ok = convex == part.num_cells() && rel < 1e-9;
    let _ = writeln!(s, "valid: {ok}");
    s
}

struct View {
    x0: f64,
    y1: f64,
    scale: f64,
}

impl View {
    fn pt(&self, p: [f64; 2]) -> (f64, f64) {
        ((p[0] - self.x0) * self.scale + 20.0, (self.y1 - p[1]) * self.scale + 20.0)
    }

    fn path(&self, poly: &Polygon) -> String {
        let pts: Vec<String> = poly
            .vertices
            .iter()
            .map(|&v| {
                let (x, y) = self.pt(v);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        pts.join(" ")
    }
}

/// Static plot: cells shaded by kind, obstacles, and trajectory points.
pub fn plan_svg(map: &PolygonMap, part: &ConvexPartition, traj: Option<&Trajectory>) -> String {
    let (lo, hi) = map.boundary.bounds();
    let (w, h) = (hi[0] - lo[0], hi[1] - lo[1]);
    let scale = 800.0 / w.max(h).max(1e-12);
    let view = View { x0: lo[0], y1: hi[1], scale };
    let (pw, ph) = (w * scale + 40.0, h * scale + 40.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{pw:.0}" height="{ph:.0}" viewBox="0 0 {pw:.2} {ph:.2}">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r##"<polygon points="{}" fill="#f4f4f4" stroke="#000000" stroke-width="1.5"/>"##,
        view.path(&map.boundary)
    );
    for (i, poly) in part.polygons().iter().enumerate() {
        let fill = match part.kinds[i] {
            CellKind::Free => "#e8f1e4",
            CellKind::Cost => "#f6d7a7",
            CellKind::Noise => "#f2b8b8",
        };
        let _ = writeln!(
            s,
            r##"<polygon class="cell {}" points="{}" fill="{fill}" stroke="#9a9a9a" stroke-width="0.5"/>"##,
            part.kinds[i].as_str(),
            view.path(poly)
        );
    }
    for o in &map.obstacles {
        let _ = writeln!(s, r##"<polygon class="obstacle" points="{}" fill="#555555"/>"##, view.path(o));
    }
    if let Some(t) = traj {
        let pts: Vec<String> = t
            .points
            .iter()
            .map(|p| {
                let (x, y) = view.pt([p.x[t.layout.xi], p.x[t.layout.eta]]);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ =
            writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f4e9c" stroke-width="1"/>"##, pts.join(" "));
        for p in &t.points {
            let (x, y) = view.pt([p.x[t.layout.xi], p.x[t.layout.eta]]);
            let special = p.region.is_some_and(|r| part.kinds[r] != CellKind::Free);
            let color = if special { "#c62828" } else { "#1f4e9c" };
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
        }
    }
    s.push_str("</svg>\n");
    s
}
