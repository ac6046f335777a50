//! Shared test oracles, deliberately independent of the production solver
//! paths they audit.
//!
//! * [`qp_oracle_objective`] solves a small convex QP by exhaustive
//!   active-set enumeration: for every subset of inequality-type rows, solve
//!   the equality-constrained stationarity system and keep the best feasible
//!   candidate. For a bounded (pointed) feasible set the optimal face has a
//!   vertex, and a vertex's active set yields that exact point, so the
//!   minimum over candidates is the true optimum.
//! * [`random_qp`] generates feasible bounded QPs with a mix of strictly
//!   convex and singular-PSD objectives.
//! * [`random_case`] generates small feasible microgrid networks.

use mmg_ems::model::{CaseConfig, MicrogridParams};
use mmg_ems::qp::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// One inequality-type row `a·x ≤ b` (general rows and bounds alike).
struct Row {
    a: DVector<f64>,
    b: f64,
}

fn inequality_rows(p: &QpProblem) -> Vec<Row> {
    let n = p.n_vars();
    let mut rows = Vec::new();
    for r in 0..p.a_in.nrows() {
        rows.push(Row {
            a: p.a_in.row(r).transpose().into_owned(),
            b: p.b_in[r],
        });
    }
    for i in 0..n {
        if p.upper[i].is_finite() {
            let mut a = DVector::zeros(n);
            a[i] = 1.0;
            rows.push(Row { a, b: p.upper[i] });
        }
        if p.lower[i].is_finite() {
            let mut a = DVector::zeros(n);
            a[i] = -1.0;
            rows.push(Row { a, b: -p.lower[i] });
        }
    }
    rows
}

fn is_feasible(p: &QpProblem, rows: &[Row], x: &DVector<f64>, tol: f64) -> bool {
    if p.a_eq.nrows() > 0 && (&p.a_eq * x - &p.b_eq).amax() > tol {
        return false;
    }
    rows.iter().all(|row| row.a.dot(x) - row.b <= tol)
}

/// Brute-force optimal objective of a small QP (n ≤ ~10, ≤ ~14 inequality
/// sides), or `None` if no feasible candidate was found.
pub fn qp_oracle_objective(p: &QpProblem) -> Option<f64> {
    let n = p.n_vars();
    let n_eq = p.a_eq.nrows();
    let rows = inequality_rows(p);
    let m = rows.len();
    assert!(m <= 20, "oracle is exponential in inequality count");

    let mut best: Option<f64> = None;
    for mask in 0usize..(1 << m) {
        let active: Vec<usize> = (0..m).filter(|k| mask & (1 << k) != 0).collect();
        if n_eq + active.len() > n {
            continue; // more tight constraints than dimensions never needed
        }
        let rows_total = n_eq + active.len();
        let dim = n + rows_total;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.q_mat);
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&(-&p.lin));
        if n_eq > 0 {
            kkt.view_mut((0, n), (n, n_eq)).copy_from(&p.a_eq.transpose());
            kkt.view_mut((n, 0), (n_eq, n)).copy_from(&p.a_eq);
            rhs.rows_mut(n, n_eq).copy_from(&p.b_eq);
        }
        for (j, &k) in active.iter().enumerate() {
            let col = n + n_eq + j;
            for i in 0..n {
                kkt[(i, col)] = rows[k].a[i];
                kkt[(col, i)] = rows[k].a[i];
            }
            rhs[col] = rows[k].b;
        }
        // Least-squares solve handles singular stationarity systems (any
        // consistent solution of a convex problem's KKT system is a global
        // minimizer of the equality-constrained subproblem).
        let svd = kkt.clone().svd(true, true);
        let Ok(sol) = svd.solve(&rhs, 1e-11) else {
            continue;
        };
        if (&kkt * &sol - &rhs).amax() > 1e-7 {
            continue; // inconsistent: subproblem unbounded or infeasible
        }
        let x = DVector::from_fn(n, |i, _| sol[i]);
        if !x.iter().all(|v| v.is_finite()) || !is_feasible(p, &rows, &x, 1e-7) {
            continue;
        }
        let obj = p.objective(&x);
        best = Some(best.map_or(obj, |b: f64| b.min(obj)));
    }
    best
}

/// A random feasible bounded convex QP: all variables carry finite lower
/// bounds, one or two all-positive general rows keep the feasible set
/// bounded, and `Q` is singular PSD roughly a third of the time.
pub fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let n = rng.random_range(1..=8);
    let max_general = 10usize.saturating_sub(n).min(2).max(1);
    let m_in = rng.random_range(1..=max_general);
    let n_eq = if n >= 3 { rng.random_range(0..=1) } else { 0 };

    let mut p = QpProblem::new(n);
    // Q = G'G with G possibly rank-deficient.
    let rank = if rng.random_bool(0.35) {
        rng.random_range(0..n.max(1))
    } else {
        n
    };
    let g = DMatrix::from_fn(rank, n, |_, _| rng.random_range(-1.0..1.0));
    p.q_mat = g.transpose() * g;
    // Symmetrize exactly against rounding.
    let q = p.q_mat.clone();
    p.q_mat = (q.clone() + q.transpose()) * 0.5;
    p.lin = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));

    // Feasible point first, then constraints around it.
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    for i in 0..n {
        p.lower[i] = x0[i] - rng.random_range(0.1..2.0);
    }
    p.a_in = DMatrix::from_fn(m_in, n, |_, _| rng.random_range(0.05..1.0));
    p.b_in = &p.a_in * &x0 + DVector::from_fn(m_in, |_, _| rng.random_range(0.1..2.0));
    if n_eq > 0 {
        p.a_eq = DMatrix::from_fn(n_eq, n, |_, _| rng.random_range(-1.0..1.0));
        p.b_eq = &p.a_eq * &x0;
    }
    p
}

/// A random feasible 2–4 MG case: every MG can cover demand from its own
/// generator plus a full PCC of imports, prices and costs in sane ranges.
pub fn random_case(rng: &mut ChaCha8Rng) -> CaseConfig {
    let n = rng.random_range(2..=4);
    random_case_n(rng, n)
}

/// [`random_case`] with a fixed MG count.
pub fn random_case_n(rng: &mut ChaCha8Rng, n: usize) -> CaseConfig {
    let microgrids = (1..=n)
        .map(|id| {
            let gen_max = rng.random_range(50.0..300.0);
            let pcc_max = rng.random_range(20.0..150.0);
            let demand = rng.random_range(0.0..0.9 * (gen_max + pcc_max));
            MicrogridParams {
                id,
                a: rng.random_range(0.0..0.001),
                b: rng.random_range(0.05..2.0),
                c: rng.random_range(0.0..10.0),
                demand,
                gen_max,
                pcc_max,
                buy_price: rng.random_range(0.05..5.0),
                sell_price: rng.random_range(0.01..0.05),
            }
        })
        .collect();
    CaseConfig {
        microgrids,
        alpha: rng.random_range(0.0005..0.01),
        beta: rng.random_range(0.05..0.5),
        max_iters: 1000,
        gap_tol: None,
        lambda_init: vec![0.0; n],
    }
}
