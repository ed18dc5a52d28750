//! Scenario loading, small random planning instances and an enumeration
//! oracle for mixed-integer problems.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uasplan::miqp::MultistageMIQP;
use uasplan::msqp::{solve_qp, QpStatus};
use uasplan::scenario::{CostRegionSpec, Scenario, Setup};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

pub fn load_scenario(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn rect_pts(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 2]> {
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

fn triangle(c: [f64; 2], r: f64) -> Vec<[f64; 2]> {
    vec![[c[0] - r, c[1] - r], [c[0] + 2.0 * r, c[1] - r], [c[0] - r, c[1] + 2.0 * r]]
}

/// Electric-vehicle instance on a small random map with at most `max_cells`
/// cells and a horizon of 2 to 4 steps.
pub fn random_instance(seed: u64, max_cells: usize) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut s = load_scenario("case2a");
        s.name = format!("random{seed}");
        s.vehicle.horizon = rng.gen_range(2..=4);
        s.wayset = None;
        s.map.boundary = rect_pts(-2.0, -4.0, 8.0, 4.0);
        s.map.obstacles.clear();
        s.map.cost_regions.clear();
        let x0 = rng.gen_range(1.0..4.0);
        let y0 = rng.gen_range(-2.5..1.0);
        let (w, h) = (rng.gen_range(0.5..2.5), rng.gen_range(0.5..2.5));
        if rng.gen_bool(0.5) {
            s.map.obstacles.push(rect_pts(x0, y0, x0 + w, y0 + h));
        } else {
            // A triangular hole in a triangle splits into three cells plus the hole.
            s.map.boundary = triangle([2.0, 0.0], 5.0);
            let polygon = triangle([x0, y0], rng.gen_range(0.5..1.2));
            s.map.cost_regions.push(CostRegionSpec { cost: rng.gen_range(1.0..10.0), polygon });
        }
        s.start.xi = 0.0;
        s.start.eta = rng.gen_range(-1.0..1.0);
        s.start.xi_dot = rng.gen_range(0.5..1.2);
        s.start.eta_dot = rng.gen_range(-0.3..0.3);
        s.start.soc = rng.gen_range(0.5..1.0);
        s.goal.xi = rng.gen_range(3.0..7.5);
        s.goal.eta = rng.gen_range(-3.5..3.5);
        let Ok(setup) = s.setup() else { continue };
        if setup.partition.num_cells() <= max_cells && setup.partition.locate([s.goal.xi, s.goal.eta], 0.0).is_some() {
            return setup;
        }
    }
}

/// Optimum found by solving every group-consistent binary assignment with
/// the binaries pinned, ignoring any tightened binary bounds.
pub struct Enumerated {
    pub objective: Option<f64>,
    pub assignments: usize,
}

pub fn enumerate_miqp(problem: &MultistageMIQP) -> Enumerated {
    let mut choices: Vec<Vec<Vec<(usize, usize, f64)>>> = problem
        .groups
        .iter()
        .map(|g| {
            g.members
                .iter()
                .map(|&on| g.members.iter().map(|&i| (g.stage, i, if i == on { 1.0 } else { -1.0 })).collect())
                .collect()
        })
        .collect();
    for (k, list) in problem.binaries.iter().enumerate() {
        for &i in list {
            if !problem.groups.iter().any(|g| g.stage == k && g.members.contains(&i)) {
                choices.push(vec![vec![(k, i, -1.0)], vec![(k, i, 1.0)]]);
            }
        }
    }
    let total: usize = choices.iter().map(Vec::len).product();
    assert!(total <= 20_000, "{total} assignments is too many to enumerate");
    let mut best: Option<f64> = None;
    for mut idx in 0..total {
        let mut qp = problem.qp.clone();
        for c in &choices {
            for &(k, i, v) in &c[idx % c.len()] {
                qp.stages[k].lower[i] = v;
                qp.stages[k].upper[i] = v;
            }
            idx /= c.len();
        }
        let sol = solve_qp(&qp, None, 1e-9).expect("well-formed QP");
        if sol.status == QpStatus::Optimal && best.is_none_or(|b| sol.objective < b) {
            best = Some(sol.objective);
        }
    }
    Enumerated { objective: best, assignments: total }
}
