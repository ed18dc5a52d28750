mod common;

use common::planning::{enumerate_miqp, random_instance};
use uasplan::miqp::{brute_force, solve_miqp, MIQPConfig, MiqpStatus};
use uasplan::planner::assemble;

fn cfg(threads: usize) -> MIQPConfig {
    MIQPConfig { threads, record_nodes: true, ..MIQPConfig::default() }
}

fn tolerance(j: f64) -> f64 {
    0.1f64.max(0.01 * j.abs())
}

#[test]
fn branch_and_bound_matches_enumeration() {
    for seed in 0..12 {
        let setup = random_instance(seed, 4);
        let miqp = assemble(&setup.problem, &setup.x0).unwrap();
        let oracle = enumerate_miqp(&miqp);
        let res = solve_miqp(&miqp, &cfg(1)).unwrap();
        match oracle.objective {
            None => assert_eq!(res.status, MiqpStatus::Infeasible, "seed {seed}"),
            Some(j) => {
                assert_eq!(res.status, MiqpStatus::Optimal, "seed {seed}");
                assert!((res.objective - j).abs() <= tolerance(j), "seed {seed}: {} vs {j}", res.objective);
                assert!(res.bound <= j + 1e-6 * (1.0 + j.abs()), "seed {seed}: bound {} above optimum {j}", res.bound);
                assert!(res.root_bound <= res.objective + 1e-9, "seed {seed}");
            }
        }
    }
}

#[test]
fn library_brute_force_agrees_with_enumeration() {
    for seed in 20..26 {
        let setup = random_instance(seed, 4);
        let miqp = assemble(&setup.problem, &setup.x0).unwrap();
        let oracle = enumerate_miqp(&miqp);
        let bf = brute_force(&miqp).unwrap();
        match oracle.objective {
            None => assert_eq!(bf.status, MiqpStatus::Infeasible),
            Some(j) => {
                assert!((bf.objective - j).abs() <= 1e-6 * (1.0 + j.abs()), "seed {seed}: {} vs {j}", bf.objective)
            }
        }
    }
}

#[test]
fn node_bounds_never_drop_below_parent() {
    for seed in 40..46 {
        let setup = random_instance(seed, 4);
        let miqp = assemble(&setup.problem, &setup.x0).unwrap();
        let res = solve_miqp(&miqp, &cfg(1)).unwrap();
        for n in &res.nodes {
            let Some(p) = n.parent else { continue };
            let parent = res.nodes.iter().find(|m| m.id == p).expect("parent recorded");
            if n.relaxation_bound.is_finite() && parent.relaxation_bound.is_finite() {
                let tol = 1e-6 * (1.0 + parent.relaxation_bound.abs());
                assert!(n.relaxation_bound >= parent.relaxation_bound - tol, "seed {seed}: node {} below parent", n.id);
            }
        }
    }
}

#[test]
fn thread_count_does_not_change_the_answer() {
    for seed in 60..64 {
        let setup = random_instance(seed, 4);
        let miqp = assemble(&setup.problem, &setup.x0).unwrap();
        let a = solve_miqp(&miqp, &cfg(1)).unwrap();
        let b = solve_miqp(&miqp, &cfg(3)).unwrap();
        assert_eq!(a.status, b.status, "seed {seed}");
        if a.status == MiqpStatus::Optimal {
            assert!((a.objective - b.objective).abs() <= tolerance(a.objective), "seed {seed}");
        }
    }
}

#[test]
fn node_limit_is_reported() {
    let setup = random_instance(3, 4);
    let miqp = assemble(&setup.problem, &setup.x0).unwrap();
    let full = solve_miqp(&miqp, &cfg(1)).unwrap();
    let res = solve_miqp(&miqp, &MIQPConfig { max_nodes: 1, eps_abs: 1e-9, eps_rel: 1e-12, ..cfg(1) }).unwrap();
    assert!(res.nodes_explored <= 2);
    if full.nodes_explored > 1 {
        assert_ne!(res.status, MiqpStatus::Optimal);
    }
}

#[test]
fn random_instances_cover_every_map_kind() {
    let (mut obstacles, mut costs) = (0, 0);
    for seed in 1000..1050 {
        let setup = random_instance(seed, 4);
        obstacles += usize::from(!setup.map.obstacles.is_empty());
        costs += usize::from(!setup.map.cost_regions.is_empty());
        assert!(setup.partition.num_cells() <= 4);
    }
    assert!(obstacles >= 5 && costs >= 5, "{obstacles} obstacle maps, {costs} cost maps");
}
