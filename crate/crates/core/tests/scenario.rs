mod common;

use common::planning::{load_scenario, scenario_path};
use nalgebra::DVector;
use uasplan::miqp::MIQPConfig;
use uasplan::planner::{plan_step, receding_horizon, trajectory_cost, PlanError};
use uasplan::scenario::{Mode, Scenario, ScenarioError};

#[test]
fn shipped_scenarios_round_trip_through_toml() {
    for name in ["case1", "case2a", "case2b"] {
        let s = load_scenario(name);
        let back = Scenario::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, back, "{name}");
        assert!(s.setup().is_ok(), "{name}");
    }
}

#[test]
fn unknown_fields_and_bad_values_are_rejected() {
    let text = std::fs::read_to_string(scenario_path("case2a")).unwrap();
    let extra = text.replace("dt = 1.0", "dt = 1.0\ncolour = \"red\"");
    assert!(matches!(Scenario::from_toml_str(&extra), Err(ScenarioError::Parse(_))));
    let short = text.replace("r = [1.0, 1.0, 1e-4]", "r = [1.0, 1.0]");
    assert!(matches!(Scenario::from_toml_str(&short), Err(ScenarioError::Field { .. })));
    let engine = text.replace("[map]", "[vehicle.engine]\npe_min = 0.0\npe_max = 1.0\npe_rate = 1.0\nsfc_kg_per_kwh = 1.0\nmf_max = 1.0\np_noise = 1.0\n\n[map]");
    assert!(Scenario::from_toml_str(&engine).is_err());
}

#[test]
fn first_receding_step_equals_open_loop_plan() {
    let mut s = load_scenario("case2a");
    s.vehicle.horizon = 6;
    s.wayset = None;
    s.mode = Mode::RecedingHorizon { steps: 1 };
    let setup = s.setup().unwrap();
    let cfg = MIQPConfig { threads: 1, ..s.solver.clone() };
    let (plan, _) = plan_step(&setup.problem, &setup.x0, &cfg).unwrap();
    let closed = receding_horizon(&setup.problem, &setup.x0, 1, &cfg).unwrap();
    assert_eq!(closed.points.len(), 2);
    assert_eq!(closed.points[0].x, plan.points[0].x);
    let (u0, u1) = (plan.points[0].u.as_ref().unwrap(), closed.points[0].u.as_ref().unwrap());
    assert!((u0 - u1).amax() < 1e-9);
    assert!((&closed.points[1].x - &plan.points[1].x).amax() < 1e-9);
}

#[test]
fn start_at_goal_needs_no_effort() {
    let mut s = load_scenario("case2a");
    s.vehicle.horizon = 1;
    s.wayset = None;
    s.map.obstacles.clear();
    s.map.cost_regions.clear();
    s.weights.q_lin = vec![0.0; 6];
    s.weights.q_n = vec![1.0; 6];
    s.start.eta_dot = 0.0;
    s.start.xi_dot = 0.0;
    s.start.pb = 1.25;
    s.goal = s.start.clone();
    s.vehicle.forward_progress = false;
    let setup = s.setup().unwrap();
    let cfg = MIQPConfig { threads: 1, ..MIQPConfig::default() };
    let (traj, res) = plan_step(&setup.problem, &setup.x0, &cfg).unwrap();
    assert!(res.objective.abs() < 1e-6, "{}", res.objective);
    assert!(traj.points[0].u.as_ref().unwrap().amax() < 1e-4);
}

#[test]
fn reported_objective_matches_recomputed_cost() {
    for name in ["case1", "case2a"] {
        let s = load_scenario(name);
        let setup = s.setup().unwrap();
        let (traj, res) = plan_step(&setup.problem, &setup.x0, &s.solver).unwrap();
        let j = trajectory_cost(&setup.problem, &traj.points);
        let tol = s.solver.eps_abs.max(s.solver.eps_rel * j.abs());
        assert!((j - res.objective).abs() <= tol, "{name}: {j} vs {}", res.objective);
        let l = traj.layout;
        let p = &setup.problem.model.params;
        for pt in &traj.points[1..] {
            let power = pt.x[l.pb] + l.pe.map_or(0.0, |i| pt.x[i]);
            let v_lim = p.velocity_for_power(power.min(p.p_max));
            assert!(pt.v <= v_lim + 1e-6 * (1.0 + v_lim), "{name} step {}: v {} above {v_lim}", pt.k, pt.v);
        }
    }
}

#[test]
fn region_cost_is_counted_once_per_step() {
    let s = load_scenario("case2b");
    let setup = s.setup().unwrap();
    let (traj, _) = plan_step(&setup.problem, &setup.x0, &s.solver).unwrap();
    let charged: f64 = traj.points.iter().map(|p| p.region_cost).sum();
    let steps = traj.points.iter().filter(|p| p.region_cost > 0.0).count();
    assert!(steps >= 1);
    assert!((charged - 10.0 * steps as f64).abs() < 1e-12);
}

#[test]
fn unreachable_goal_is_reported() {
    let mut s = load_scenario("case2a");
    s.goal.xi = 8.0;
    s.wayset = None;
    s.mode = Mode::RecedingHorizon { steps: 2 };
    let setup = s.setup().unwrap();
    let err = receding_horizon(&setup.problem, &setup.x0, 2, &s.solver).unwrap_err();
    assert!(matches!(err, PlanError::Reference(_)), "{err}");
    let x = DVector::from_element(6, f64::NAN);
    assert!(plan_step(&setup.problem, &x, &s.solver).is_err());
}
