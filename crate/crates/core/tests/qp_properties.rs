//! Randomized audits of the QP solver against independent arithmetic.

mod common;

use common::{qp_oracle_objective, random_qp};
use mmg_ems::qp::{kkt_residual, qp_solve, QpProblem, QpSolution, QpStatus, DEFAULT_KKT_TOL};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Lagrangian dual value implied by a solution's multipliers, computed from
/// scratch: minimize the Lagrangian over x (least-squares stationarity
/// solve), then evaluate. Returns `None` when the Lagrangian is unbounded
/// below, which makes the weak-duality claim vacuous.
fn dual_value_from_multipliers(p: &QpProblem, s: &QpSolution) -> Option<f64> {
    let n = p.n_vars();
    let mut lin = p.lin.clone();
    if p.a_eq.nrows() > 0 {
        lin += p.a_eq.transpose() * &s.duals_eq;
    }
    if p.a_in.nrows() > 0 {
        lin += p.a_in.transpose() * &s.duals_in;
    }
    for i in 0..n {
        lin[i] += s.duals_upper[i] - s.duals_lower[i];
    }
    let svd = p.q_mat.clone().svd(true, true);
    let x = svd.solve(&(-&lin), 1e-12).ok()?;
    if (&p.q_mat * &x + &lin).amax() > 1e-6 {
        return None;
    }
    let mut value = p.objective(&x);
    if p.a_eq.nrows() > 0 {
        value += s.duals_eq.dot(&(&p.a_eq * &x - &p.b_eq));
    }
    if p.a_in.nrows() > 0 {
        value += s.duals_in.dot(&(&p.a_in * &x - &p.b_in));
    }
    for i in 0..n {
        if p.upper[i].is_finite() {
            value += s.duals_upper[i] * (x[i] - p.upper[i]);
        }
        if p.lower[i].is_finite() {
            value -= s.duals_lower[i] * (x[i] - p.lower[i]);
        }
    }
    Some(value)
}

#[test]
fn solver_matches_enumeration_oracle_on_random_qps() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x51ab);
    for trial in 0..100 {
        let p = random_qp(&mut rng);
        let sol = qp_solve(&p, DEFAULT_KKT_TOL)
            .unwrap_or_else(|e| panic!("trial {trial}: solver error {e}"));
        assert_eq!(
            sol.status,
            QpStatus::Optimal,
            "trial {trial}: {:?}",
            sol.status
        );
        let oracle = qp_oracle_objective(&p).expect("oracle finds a candidate");
        let denom = 1.0f64.max(oracle.abs());
        assert!(
            (sol.objective - oracle).abs() / denom <= 1e-6,
            "trial {trial}: solver {} vs oracle {}",
            sol.objective,
            oracle
        );
    }
}

#[test]
fn kkt_residuals_within_tolerance_on_random_qps() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xfeed);
    for trial in 0..100 {
        let p = random_qp(&mut rng);
        let sol = qp_solve(&p, DEFAULT_KKT_TOL).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "trial {trial}");
        let r = kkt_residual(&p, &sol);
        assert!(
            r.max() <= DEFAULT_KKT_TOL,
            "trial {trial}: residuals {r:?}"
        );
    }
}

#[test]
fn weak_duality_from_returned_multipliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xd0a1);
    let mut checked = 0;
    for _ in 0..100 {
        let p = random_qp(&mut rng);
        let sol = qp_solve(&p, DEFAULT_KKT_TOL).unwrap();
        if sol.status != QpStatus::Optimal {
            continue;
        }
        if let Some(dual) = dual_value_from_multipliers(&p, &sol) {
            checked += 1;
            assert!(
                dual <= sol.objective + 1e-6 * (1.0 + sol.objective.abs()),
                "dual {dual} exceeds primal {}",
                sol.objective
            );
        }
    }
    assert!(checked > 50, "only {checked} dual values were computable");
}

#[test]
fn repeated_solves_are_bitwise_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xbeef);
    for _ in 0..20 {
        let p = random_qp(&mut rng);
        let a = qp_solve(&p, DEFAULT_KKT_TOL).unwrap();
        let b = qp_solve(&p, DEFAULT_KKT_TOL).unwrap();
        let bits = |v: &DVector<f64>| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.x), bits(&b.x));
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        assert_eq!(bits(&a.duals_eq), bits(&b.duals_eq));
    }
}
