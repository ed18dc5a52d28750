mod common;

use common::qp::{flatten, random_multistage, solve_dense};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uasplan::msqp::{objective_bound, solve_qp, solve_qp_with, IpmOptions, QpStatus};

fn check_against_oracle(seed: u64, badly_scaled: bool, tighten: bool) -> QpStatus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stages = rng.gen_range(2..=3);
    let n = rng.gen_range(2..=3);
    let mut qp = random_multistage(&mut rng, stages, n, badly_scaled);
    if tighten {
        let last = qp.stages.len() - 1;
        let w = &mut qp.stages[last].w;
        w[0] -= rng.gen_range(0.0..1.5) * (1.0 + w[0].abs());
    }
    let reference = solve_dense(&flatten(&qp));
    let sol = solve_qp(&qp, None, 1e-10).unwrap();
    match reference {
        None => assert_eq!(sol.status, QpStatus::Infeasible, "seed {seed}: oracle says infeasible"),
        Some(r) => {
            assert_eq!(sol.status, QpStatus::Optimal, "seed {seed}");
            let rel = (sol.objective - r.objective).abs() / (1.0 + r.objective.abs());
            assert!(rel < 1e-6, "seed {seed}: {} vs {}", sol.objective, r.objective);
            let z: Vec<f64> = sol.z.iter().flat_map(|v| v.iter().copied()).collect();
            let zmax = r.z.amax().max(1.0);
            for (a, b) in z.iter().zip(r.z.iter()) {
                assert!((a - b).abs() < 1e-5 * zmax, "seed {seed}: {a} vs {b}");
            }
            assert!(qp.max_violation(&sol.z) < 1e-7 * zmax);
            let bound = objective_bound(&qp, &sol);
            assert!(bound <= r.objective + 1e-7 * (1.0 + r.objective.abs()));
            assert!(r.objective - bound < 1e-6 * (1.0 + r.objective.abs()));
        }
    }
    sol.status
}

#[test]
fn random_qps_match_enumeration_oracle() {
    for seed in 0..60 {
        check_against_oracle(seed, false, false);
    }
}

#[test]
fn badly_scaled_qps_match_oracle() {
    for seed in 100..160 {
        check_against_oracle(seed, true, false);
    }
}

#[test]
fn infeasibility_agrees_with_oracle() {
    let mut infeasible = 0;
    for seed in 200..280 {
        if check_against_oracle(seed, seed % 2 == 0, true) == QpStatus::Infeasible {
            infeasible += 1;
        }
    }
    assert!(infeasible > 5, "too few infeasible instances: {infeasible}");
}

#[test]
fn truncated_solves_give_valid_bounds() {
    for seed in 300..330 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qp = random_multistage(&mut rng, 3, 3, false);
        let Some(r) = solve_dense(&flatten(&qp)) else { continue };
        for iters in [1, 2, 4] {
            let sol = solve_qp_with(&qp, None, &IpmOptions { max_iter: iters, ..IpmOptions::default() }).unwrap();
            let b = objective_bound(&qp, &sol);
            assert!(
                b <= r.objective + 1e-8 * (1.0 + r.objective.abs()),
                "seed {seed} iters {iters}: {b} > {}",
                r.objective
            );
        }
    }
}
