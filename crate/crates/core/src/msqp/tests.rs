use nalgebra::{DMatrix, DVector};

use super::*;

fn one_stage(n: usize) -> MultistageQP {
    MultistageQP { stages: vec![QpStage::new(n)], couplings: vec![], constant: 0.0 }
}

/// Equality-constrained reference: dense KKT solve over all stages.
fn dense_eq_reference(qp: &MultistageQP) -> Vec<f64> {
    let offs: Vec<usize> = qp
        .stages
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s.n();
            Some(o)
        })
        .collect();
    let n = qp.num_vars();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for (k, s) in qp.stages.iter().enumerate() {
        for r in 0..s.e.nrows() {
            let mut a = vec![0.0; n];
            for j in 0..s.n() {
                a[offs[k] + j] = s.e[(r, j)];
            }
            rows.push((a, s.f[r]));
        }
    }
    for (k, c) in qp.couplings.iter().enumerate() {
        for r in 0..c.e.len() {
            let mut a = vec![0.0; n];
            for j in 0..c.c.ncols() {
                a[offs[k] + j] = c.c[(r, j)];
            }
            for j in 0..c.d.ncols() {
                a[offs[k + 1] + j] = c.d[(r, j)];
            }
            rows.push((a, c.e[r]));
        }
    }
    let m = rows.len();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    let mut rhs = DVector::zeros(n + m);
    for (k, s) in qp.stages.iter().enumerate() {
        for i in 0..s.n() {
            for j in 0..s.n() {
                kkt[(offs[k] + i, offs[k] + j)] = s.p[(i, j)];
            }
            rhs[offs[k] + i] = -s.q[i];
        }
    }
    for (r, (a, b)) in rows.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = a[j];
            kkt[(j, n + r)] = a[j];
        }
        rhs[n + r] = *b;
    }
    let sol = kkt.lu().solve(&rhs).unwrap();
    sol.rows(0, n).iter().copied().collect()
}

fn double_integrator(n_stages: usize) -> MultistageQP {
    let dt = 0.5;
    let mut stages = Vec::new();
    for k in 0..n_stages {
        let mut s = QpStage::new(3);
        s.p = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.5, 0.1]));
        s.q = DVector::from_column_slice(&[-0.3 * k as f64, 0.0, 0.0]);
        if k == 0 {
            s.push_eq(&[1.0, 0.0, 0.0], 1.0);
            s.push_eq(&[0.0, 1.0, 0.0], -0.5);
        }
        stages.push(s);
    }
    let couplings = (0..n_stages - 1)
        .map(|_| QpCoupling {
            c: DMatrix::from_row_slice(2, 3, &[1.0, dt, 0.5 * dt * dt, 0.0, 1.0, dt]),
            d: DMatrix::from_row_slice(2, 3, &[-1.0, 0.0, 0.0, 0.0, -1.0, 0.0]),
            e: DVector::zeros(2),
        })
        .collect();
    MultistageQP { stages, couplings, constant: 0.0 }
}

#[test]
fn single_stage_equality() {
    let mut qp = one_stage(3);
    qp.stages[0].p = DMatrix::identity(3, 3);
    for i in 0..3 {
        let mut row = [0.0; 3];
        row[i] = 1.0;
        qp.stages[0].push_eq(&row, 1.0);
    }
    let sol = solve_qp(&qp, None, 1e-9).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    for v in sol.z[0].iter() {
        assert!((v - 1.0).abs() < 1e-9);
    }
    assert!((sol.objective - 1.5).abs() < 1e-9);
}

#[test]
fn lqr_matches_dense_kkt() {
    let qp = double_integrator(6);
    let sol = solve_qp(&qp, None, 1e-10).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    let reference = dense_eq_reference(&qp);
    let got: Vec<f64> = sol.z.iter().flat_map(|v| v.iter().copied()).collect();
    for (a, b) in got.iter().zip(&reference) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn contradictory_bounds_infeasible() {
    let mut qp = one_stage(1);
    qp.stages[0].lower[0] = 1.0;
    qp.stages[0].upper[0] = 0.0;
    let sol = solve_qp(&qp, None, 1e-8).unwrap();
    assert_eq!(sol.status, QpStatus::Infeasible);
    assert_eq!(objective_bound(&qp, &sol), f64::INFINITY);
}

#[test]
fn infeasible_system_certified_by_iterations() {
    let mut qp = one_stage(2);
    qp.stages[0].p = DMatrix::identity(2, 2);
    qp.stages[0].lower = DVector::zeros(2);
    qp.stages[0].upper = DVector::from_element(2, 1.0);
    qp.stages[0].push_eq(&[1.0, 1.0], 1.0);
    qp.stages[0].push_eq(&[1.0, -1.0], 0.5);
    qp.stages[0].push_eq(&[1.0, 2.0], 0.2);
    let sol = solve_qp(&qp, None, 1e-8).unwrap();
    assert_eq!(sol.status, QpStatus::Infeasible);
}

#[test]
fn inequality_constrained_projection() {
    // Project (2, 2) onto x + y ≤ 1, x, y ≥ 0.
    let mut qp = one_stage(2);
    qp.stages[0].p = DMatrix::identity(2, 2);
    qp.stages[0].q = DVector::from_column_slice(&[-2.0, -2.0]);
    qp.stages[0].lower = DVector::zeros(2);
    qp.stages[0].push_le(&[1.0, 1.0], 1.0);
    let sol = solve_qp(&qp, None, 1e-10).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    assert!((sol.z[0][0] - 0.5).abs() < 1e-7 && (sol.z[0][1] - 0.5).abs() < 1e-7);
    assert!((sol.lam_g[0][0] - 1.5).abs() < 1e-6);
    assert!((objective_bound(&qp, &sol) - sol.objective).abs() < 1e-6);
}

#[test]
fn early_termination_bound_is_valid() {
    let mut qp = double_integrator(5);
    for s in &mut qp.stages {
        s.lower = DVector::from_element(3, -2.0);
        s.upper = DVector::from_element(3, 2.0);
    }
    let full = solve_qp(&qp, None, 1e-10).unwrap();
    for iters in 1..6 {
        let early = solve_qp_with(&qp, None, &IpmOptions { max_iter: iters, ..IpmOptions::default() }).unwrap();
        let b = objective_bound(&qp, &early);
        assert!(b <= full.objective + 1e-9, "iters {iters}: {b} > {}", full.objective);
    }
    assert!((objective_bound(&qp, &full) - full.objective).abs() < 1e-6);
}

#[test]
fn fixed_variables_are_eliminated() {
    let mut qp = double_integrator(4);
    qp.stages[2].lower[2] = 0.25;
    qp.stages[2].upper[2] = 0.25;
    let sol = solve_qp(&qp, None, 1e-10).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    assert_eq!(sol.z[2][2], 0.25);
    assert!(qp.max_violation(&sol.z) < 1e-8);
}

#[test]
fn rejects_indefinite_cost() {
    let mut qp = one_stage(2);
    qp.stages[0].p = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(matches!(solve_qp(&qp, None, 1e-8), Err(QpError::InvalidCost(_))));
}

#[test]
fn warm_start_from_solution() {
    let mut qp = double_integrator(5);
    for s in &mut qp.stages {
        s.lower = DVector::from_element(3, -2.0);
        s.upper = DVector::from_element(3, 2.0);
    }
    let cold = solve_qp(&qp, None, 1e-9).unwrap();
    qp.couplings[1].e[0] += 1e-3;
    let warm = solve_qp(&qp, Some(&cold), 1e-9).unwrap();
    let recold = solve_qp(&qp, None, 1e-9).unwrap();
    assert_eq!(warm.status, QpStatus::Optimal);
    assert!((warm.objective - recold.objective).abs() < 1e-7);
}
