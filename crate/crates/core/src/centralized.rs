//! Centralized reference solvers.
//!
//! Three variants of the network dispatch problem:
//!
//! * **original** — generation + grid-trade costs only, with the bilinear
//!   requirement that no MG pair trades in both directions at once. Solved
//!   exactly by enumerating, per pair, which direction is forced to zero
//!   (2^pairs convex QPs) and keeping the best.
//! * **modified** — adds the quadratic transfer charge `β·(P^e)²` to every
//!   exchange. The charge makes two-way trades strictly wasteful, so the
//!   bilinear constraint can be dropped and the problem becomes one convex
//!   QP. This is the problem the distributed algorithm decomposes.
//! * **individual** — every MG islanded (PCC treated as zero): no exchanges,
//!   no grid trades, each MG simply generates its own demand.
//!
//! All variants report the balance-constraint duals λ_m, the marginal cost
//! of serving one more kW of demand at MG m.

use nalgebra::DVector;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{
    check_feasibility, evaluate_objective, transfer_cost, CaseConfig, DispatchSolution,
    ModelError, SOLVER_FEASIBILITY_TOL,
};
use crate::qp::{qp_solve, QpError, QpProblem, QpStatus, DEFAULT_KKT_TOL};

/// Enumeration guard: at most this many MG pairs (2^pairs subproblems).
pub const MAX_ENUMERATION_PAIRS: usize = 15;

/// A dispatch together with the balance duals of the QP it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedSolution {
    pub dispatch: DispatchSolution,
    /// λ_m per MG [$/kW]: shadow price of demand at MG m.
    pub lambda: Vec<f64>,
}

/// Which direction of each unordered MG pair is pinned to zero when solving
/// the original problem by support enumeration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplementarityPattern {
    /// All unordered pairs `(m, n)` with `m < n`, in lexicographic order.
    pub pairs: Vec<(usize, usize)>,
    /// `true` at k ⇒ the forward direction `m → n` of `pairs[k]` is zeroed;
    /// `false` ⇒ the reverse `n → m` is zeroed.
    pub forward_zeroed: Vec<bool>,
}

impl ComplementarityPattern {
    fn from_mask(n_mgs: usize, mask: usize) -> Self {
        let pairs = unordered_pairs(n_mgs);
        let forward_zeroed = (0..pairs.len()).map(|k| mask & (1 << k) == 0).collect();
        Self {
            pairs,
            forward_zeroed,
        }
    }

    /// Directed exchanges `(seller, buyer)` this pattern forces to zero.
    pub fn zeroed_directions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs
            .iter()
            .zip(&self.forward_zeroed)
            .map(|(&(m, n), &fwd)| if fwd { (m, n) } else { (n, m) })
    }
}

fn unordered_pairs(n_mgs: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(n_mgs * (n_mgs - 1) / 2);
    for m in 0..n_mgs {
        for n in (m + 1)..n_mgs {
            pairs.push((m, n));
        }
    }
    pairs
}

/// Variable layout shared by both centralized QPs:
/// `[gen | grid_buy | grid_sell | exchanges (seller-major, diag skipped) | eps]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct VarLayout {
    n: usize,
}

impl VarLayout {
    pub(crate) fn new(n: usize) -> Self {
        Self { n }
    }
    pub(crate) fn gen(&self, m: usize) -> usize {
        m
    }
    pub(crate) fn grid_buy(&self, m: usize) -> usize {
        self.n + m
    }
    pub(crate) fn grid_sell(&self, m: usize) -> usize {
        2 * self.n + m
    }
    pub(crate) fn exch(&self, seller: usize, buyer: usize) -> usize {
        debug_assert_ne!(seller, buyer);
        3 * self.n + seller * (self.n - 1) + buyer - usize::from(buyer > seller)
    }
    pub(crate) fn eps(&self, m: usize) -> usize {
        3 * self.n + self.n * (self.n - 1) + m
    }
    pub(crate) fn n_vars(&self) -> usize {
        4 * self.n + self.n * (self.n - 1)
    }
}

/// Assembles the centralized dispatch QP. The quadratic transfer charge is
/// included iff `include_transfer`; the constant cost terms Σ c_m are *not*
/// in the QP objective and must be added back.
///
/// Rows 0..n of the equality system are the per-MG balances (their duals,
/// negated, are the λ reported by the solvers); rows n..2n define
/// `eps_m = Σ_b exch(m, b)`.
pub fn assemble_centralized_qp(case: &CaseConfig, include_transfer: bool) -> QpProblem {
    let n = case.n_mgs();
    let vars = VarLayout::new(n);
    let mut p = QpProblem::new(vars.n_vars());

    for (m, mg) in case.microgrids.iter().enumerate() {
        p.q_mat[(vars.gen(m), vars.gen(m))] = 2.0 * mg.a;
        p.lin[vars.gen(m)] = mg.b;
        p.lin[vars.grid_buy(m)] = mg.buy_price;
        p.lin[vars.grid_sell(m)] = -mg.sell_price;
        p.lower[vars.gen(m)] = 0.0;
        p.upper[vars.gen(m)] = mg.gen_max;
        p.lower[vars.grid_buy(m)] = 0.0;
        p.lower[vars.grid_sell(m)] = 0.0;
        p.lower[vars.eps(m)] = 0.0;
        for b in 0..n {
            if b != m {
                p.lower[vars.exch(m, b)] = 0.0;
                if include_transfer {
                    p.q_mat[(vars.exch(m, b), vars.exch(m, b))] = 2.0 * case.beta;
                }
            }
        }
    }

    let n_eq = 2 * n;
    let mut a_eq = nalgebra::DMatrix::zeros(n_eq, vars.n_vars());
    let mut b_eq = DVector::zeros(n_eq);
    for (m, mg) in case.microgrids.iter().enumerate() {
        // gen + imports + grid_buy − eps − grid_sell = demand
        a_eq[(m, vars.gen(m))] = 1.0;
        a_eq[(m, vars.grid_buy(m))] = 1.0;
        a_eq[(m, vars.grid_sell(m))] = -1.0;
        a_eq[(m, vars.eps(m))] = -1.0;
        for s in 0..n {
            if s != m {
                a_eq[(m, vars.exch(s, m))] = 1.0;
            }
        }
        b_eq[m] = mg.demand;
        // eps − Σ_b exch(m, b) = 0
        a_eq[(n + m, vars.eps(m))] = 1.0;
        for b in 0..n {
            if b != m {
                a_eq[(n + m, vars.exch(m, b))] = -1.0;
            }
        }
    }
    p.a_eq = a_eq;
    p.b_eq = b_eq;

    let mut a_in = nalgebra::DMatrix::zeros(2 * n, vars.n_vars());
    let mut b_in = DVector::zeros(2 * n);
    for (m, mg) in case.microgrids.iter().enumerate() {
        // export: eps + grid_sell ≤ pcc
        a_in[(m, vars.eps(m))] = 1.0;
        a_in[(m, vars.grid_sell(m))] = 1.0;
        b_in[m] = mg.pcc_max;
        // import: Σ_s exch(s, m) + grid_buy ≤ pcc
        for s in 0..n {
            if s != m {
                a_in[(n + m, vars.exch(s, m))] = 1.0;
            }
        }
        a_in[(n + m, vars.grid_buy(m))] = 1.0;
        b_in[n + m] = mg.pcc_max;
    }
    p.a_in = a_in;
    p.b_in = b_in;
    p
}

fn extract_solution(
    case: &CaseConfig,
    p: &QpProblem,
    x: &DVector<f64>,
    duals_eq: &DVector<f64>,
    include_transfer: bool,
) -> Result<CentralizedSolution, SolveError> {
    let n = case.n_mgs();
    let vars = VarLayout::new(n);
    let mut dispatch = DispatchSolution::zeros(n);
    for m in 0..n {
        dispatch.gen[m] = x[vars.gen(m)];
        dispatch.grid_buy[m] = x[vars.grid_buy(m)];
        dispatch.grid_sell[m] = x[vars.grid_sell(m)];
        dispatch.eps[m] = x[vars.eps(m)];
        for b in 0..n {
            if b != m {
                dispatch.exchange.set(m, b, x[vars.exch(m, b)]);
            }
        }
    }
    let breakdown = evaluate_objective(case, &dispatch, include_transfer)?;
    dispatch.objective = breakdown.total;
    dispatch.gen_cost_total = breakdown.gen_cost_total;
    dispatch.transfer_cost_total = breakdown.transfer_cost_total;
    debug_assert!((p.objective(x) + constant_cost(case) - breakdown.total).abs() < 1e-6);

    let report = check_feasibility(case, &dispatch, SOLVER_FEASIBILITY_TOL);
    if !report.feasible && report.max_residual() > SOLVER_FEASIBILITY_TOL {
        // Complementarity can sit slightly above the kW tolerance for the
        // original problem's free directions; everything else must hold.
        if report.max_residual() != report.complementarity_violation
            || report.complementarity_violation > 1e-4
        {
            return Err(SolveError::FeasibilityCheck {
                max_residual: report.max_residual(),
            });
        }
    }

    // Balance duals: stationarity uses +A_eq'y, so the shadow price of one
    // extra kW of demand is −y.
    let lambda = (0..n).map(|m| -duals_eq[m]).collect();
    Ok(CentralizedSolution { dispatch, lambda })
}

fn constant_cost(case: &CaseConfig) -> f64 {
    case.microgrids.iter().map(|mg| mg.c).sum()
}

/// Per-MG supply can never exceed own generation plus a full PCC of imports;
/// a case violating that is infeasible regardless of what the others do.
fn precheck_feasibility(case: &CaseConfig) -> Result<(), SolveError> {
    for mg in &case.microgrids {
        if mg.demand > mg.gen_max + mg.pcc_max {
            return Err(SolveError::InfeasibleDemand {
                mg: mg.id,
                demand: mg.demand,
                max_supply: mg.gen_max + mg.pcc_max,
            });
        }
    }
    Ok(())
}

/// Solves the convexified problem (quadratic transfer charge on every
/// exchange) as a single QP.
pub fn solve_modified_centralized(case: &CaseConfig) -> Result<CentralizedSolution, SolveError> {
    case.validate()?;
    precheck_feasibility(case)?;
    let p = assemble_centralized_qp(case, true);
    let sol = qp_solve(&p, DEFAULT_KKT_TOL)?;
    match sol.status {
        QpStatus::Optimal => extract_solution(case, &p, &sol.x, &sol.duals_eq, true),
        QpStatus::Infeasible => Err(SolveError::Infeasible {
            certificate: sol.certificate.unwrap_or(f64::NAN),
        }),
        status => Err(SolveError::SolverFailed { status }),
    }
}

/// Solves the original problem (no transfer charge, no simultaneous
/// opposite-direction exchanges) by support enumeration: one convex QP per
/// [`ComplementarityPattern`], minimum objective wins, lexicographically
/// smallest pattern on ties. The reported objective excludes transfer cost.
pub fn solve_original_centralized(case: &CaseConfig) -> Result<CentralizedSolution, SolveError> {
    case.validate()?;
    precheck_feasibility(case)?;
    let n = case.n_mgs();
    let n_pairs = n * (n - 1) / 2;
    if n_pairs > MAX_ENUMERATION_PAIRS {
        return Err(SolveError::TooManyPairs {
            pairs: n_pairs,
            limit: MAX_ENUMERATION_PAIRS,
        });
    }
    let template = assemble_centralized_qp(case, false);
    let vars = VarLayout::new(n);

    let candidates: Vec<Option<(f64, DVector<f64>, DVector<f64>)>> = (0..(1usize << n_pairs))
        .into_par_iter()
        .map(|mask| {
            let pattern = ComplementarityPattern::from_mask(n, mask);
            let mut p = template.clone();
            for (s, b) in pattern.zeroed_directions() {
                p.upper[vars.exch(s, b)] = 0.0;
            }
            match qp_solve(&p, DEFAULT_KKT_TOL) {
                Ok(sol) if sol.status == QpStatus::Optimal => {
                    Some((sol.objective, sol.x, sol.duals_eq))
                }
                _ => None,
            }
        })
        .collect();

    // Scan in mask order: strict improvement keeps the smallest mask on ties.
    let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
    for cand in candidates.into_iter().flatten() {
        match &best {
            Some((obj, _, _)) if cand.0 >= *obj => {}
            _ => best = Some(cand),
        }
    }
    let (_, x, duals) = best.ok_or(SolveError::AllPatternsInfeasible)?;
    extract_solution(case, &template, &x, &duals, false)
}

/// Per-MG costs when every MG runs islanded.
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualOutcome {
    /// Cost per MG [$]: its generation cost at `P = D`.
    pub per_mg_cost: Vec<f64>,
    pub total: f64,
}

/// Islanded operation: PCC treated as zero, which disables both MG-to-MG
/// exchanges and grid trades, so each MG generates exactly its demand.
pub fn solve_individual(case: &CaseConfig) -> Result<IndividualOutcome, SolveError> {
    case.validate()?;
    let mut per_mg_cost = Vec::with_capacity(case.n_mgs());
    for mg in &case.microgrids {
        if mg.demand > mg.gen_max {
            return Err(SolveError::InfeasibleDemand {
                mg: mg.id,
                demand: mg.demand,
                max_supply: mg.gen_max,
            });
        }
        per_mg_cost.push(mg.generation_cost(mg.demand));
    }
    let total = per_mg_cost.iter().sum();
    Ok(IndividualOutcome { per_mg_cost, total })
}

/// Splits a cooperative (modified-centralized) system cost across MGs:
/// each MG keeps its generation cost, pays its grid bill, pays the transfer
/// charge on power it imports, pays sellers for imports at the seller's
/// balance dual λ_s, and earns λ_m on its own sales. Inter-MG payments
/// cancel in the sum, so the attribution totals the system objective.
pub fn cooperative_cost_attribution(case: &CaseConfig, sol: &CentralizedSolution) -> Vec<f64> {
    let n = case.n_mgs();
    (0..n)
        .map(|m| {
            let mg = &case.microgrids[m];
            let d = &sol.dispatch;
            let mut cost = mg.generation_cost(d.gen[m]) + mg.buy_price * d.grid_buy[m]
                - mg.sell_price * d.grid_sell[m]
                - sol.lambda[m] * d.eps[m];
            for s in 0..n {
                if s != m {
                    let import = d.exchange.get(s, m);
                    cost += transfer_cost(case.beta, import) + sol.lambda[s] * import;
                }
            }
            cost
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid case: {0}")]
    Model(#[from] ModelError),
    #[error("microgrid {mg} is infeasible: demand {demand} kW exceeds the {max_supply} kW it can supply")]
    InfeasibleDemand {
        mg: usize,
        demand: f64,
        max_supply: f64,
    },
    #[error("problem infeasible (least possible constraint violation {certificate} kW)")]
    Infeasible { certificate: f64 },
    #[error("every complementarity pattern is infeasible")]
    AllPatternsInfeasible,
    #[error("{pairs} MG pairs exceed the enumeration guard of {limit}")]
    TooManyPairs { pairs: usize, limit: usize },
    #[error("solver failed with status {status:?}")]
    SolverFailed { status: QpStatus },
    #[error("solution failed the feasibility check (max residual {max_residual} kW)")]
    FeasibilityCheck { max_residual: f64 },
    #[error(transparent)]
    Qp(#[from] QpError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MicrogridParams;
    use crate::scenarios::builtin_case;
    use approx::assert_relative_eq;

    #[test]
    fn modified_base_reproduces_published_dispatch() {
        let case = builtin_case("base").unwrap();
        let sol = solve_modified_centralized(&case).unwrap();
        let d = &sol.dispatch;
        assert!((d.objective - 70.54).abs() <= 0.01, "obj {}", d.objective);
        assert!((d.gen_cost_total - 47.99).abs() <= 0.01);
        assert!(d.transfer_cost_total.abs() <= 1e-6);
        for (m, want) in [110.0, 25.0, 0.0].iter().enumerate() {
            assert!((d.gen[m] - want).abs() <= 0.1, "gen {m}: {}", d.gen[m]);
        }
        for (m, want) in [99.99, 99.99, 75.0].iter().enumerate() {
            assert!(
                (d.grid_buy[m] - want).abs() <= 0.1,
                "grid_buy {m}: {}",
                d.grid_buy[m]
            );
        }
        for (s, b, kw) in d.exchange.entries() {
            assert!(kw.abs() <= 0.01, "exchange {s}->{b} = {kw}");
        }
    }

    #[test]
    fn modified_stressed_reproduces_published_dispatch() {
        let case = builtin_case("stressed").unwrap();
        let sol = solve_modified_centralized(&case).unwrap();
        let d = &sol.dispatch;
        assert!((d.objective - 12187.31).abs() <= 1.0, "obj {}", d.objective);
        assert!((d.exchange.get(0, 1) - 26.67).abs() <= 0.5);
        assert!((d.exchange.get(2, 0) - 36.67).abs() <= 0.5);
        assert!((d.exchange.get(2, 1) - 63.33).abs() <= 0.5);
        assert!((d.grid_buy[1] - 85.0).abs() <= 0.5);
        // balance duals: λ = (76.67, 82, 0.259) for the modified problem
        assert!((sol.lambda[0] - 76.67).abs() <= 0.05, "{:?}", sol.lambda);
        assert!((sol.lambda[1] - 82.0).abs() <= 0.05);
        assert!((sol.lambda[2] - 0.259).abs() <= 0.01);
    }

    #[test]
    fn original_base_and_stressed_objectives() {
        let base = builtin_case("base").unwrap();
        let sol = solve_original_centralized(&base).unwrap();
        assert!((sol.dispatch.objective - 70.54).abs() <= 0.01);
        assert_eq!(sol.dispatch.transfer_cost_total, 0.0);

        let stressed = builtin_case("stressed").unwrap();
        let sol = solve_original_centralized(&stressed).unwrap();
        assert!(
            (sol.dispatch.objective - 11580.64).abs() <= 1.0,
            "obj {}",
            sol.dispatch.objective
        );
    }

    #[test]
    fn base_original_equals_modified_when_no_exchanges() {
        let case = builtin_case("base").unwrap();
        let original = solve_original_centralized(&case).unwrap();
        let modified = solve_modified_centralized(&case).unwrap();
        assert!(modified
            .dispatch
            .exchange
            .entries()
            .all(|(_, _, kw)| kw.abs() < 1e-4));
        assert_relative_eq!(
            original.dispatch.objective,
            modified.dispatch.objective,
            epsilon = 1e-4
        );
    }

    fn symmetric_pair() -> CaseConfig {
        let mg = |id| MicrogridParams {
            id,
            a: 0.001,
            b: 0.01,
            c: 1.0,
            demand: 50.0,
            gen_max: 100.0,
            pcc_max: 50.0,
            buy_price: 0.5,
            sell_price: 0.005,
        };
        CaseConfig {
            microgrids: vec![mg(1), mg(2)],
            alpha: 0.001,
            beta: 0.1,
            max_iters: 10,
            gap_tol: None,
            lambda_init: vec![0.0; 2],
        }
    }

    #[test]
    fn symmetric_pair_has_no_trade_at_all() {
        let case = symmetric_pair();
        let sol = solve_modified_centralized(&case).unwrap();
        let d = &sol.dispatch;
        for m in 0..2 {
            assert!((d.gen[m] - 50.0).abs() <= 1e-4);
            assert!(d.grid_buy[m].abs() <= 1e-4);
            assert!(d.grid_sell[m].abs() <= 1e-4);
        }
        assert!(d.exchange.entries().all(|(_, _, kw)| kw.abs() <= 1e-4));
    }

    #[test]
    fn infeasible_case_names_the_binding_mg() {
        let mut case = builtin_case("base").unwrap();
        case.microgrids[1].demand = 1000.0; // above gen_max 300 + pcc 100
        match solve_modified_centralized(&case) {
            Err(SolveError::InfeasibleDemand { mg: 2, .. }) => {}
            other => panic!("expected infeasible on MG2, got {other:?}"),
        }
    }

    #[test]
    fn individual_mode_matches_published_costs() {
        let case = builtin_case("individual_vs_coop").unwrap();
        let out = solve_individual(&case).unwrap();
        for (got, want) in out.per_mg_cost.iter().zip([50.52, 9787.79, 24.86]) {
            assert!((got - want).abs() <= 0.5, "{got} vs {want}");
        }
        assert!((out.total - 9863.17).abs() <= 0.5, "total {}", out.total);
    }

    #[test]
    fn individual_mode_zero_demand_costs_constant_term() {
        let mut case = builtin_case("individual_vs_coop").unwrap();
        case.microgrids[2].demand = 0.0;
        let out = solve_individual(&case).unwrap();
        assert_relative_eq!(out.per_mg_cost[2], 7.5);
    }

    #[test]
    fn individual_mode_rejects_uncoverable_demand() {
        let case = builtin_case("base").unwrap(); // MG1 demand 210 > gen_max 150
        match solve_individual(&case) {
            Err(SolveError::InfeasibleDemand { mg: 1, .. }) => {}
            other => panic!("expected infeasible on MG1, got {other:?}"),
        }
    }

    #[test]
    fn cooperative_run_matches_published_total() {
        let case = builtin_case("individual_vs_coop").unwrap();
        let sol = solve_modified_centralized(&case).unwrap();
        assert!(
            (sol.dispatch.objective - 6716.93).abs() <= 1.0,
            "obj {}",
            sol.dispatch.objective
        );
        let attribution = cooperative_cost_attribution(&case, &sol);
        let attributed_total: f64 = attribution.iter().sum();
        assert_relative_eq!(attributed_total, sol.dispatch.objective, epsilon = 1e-6);
        // Published split: (−980.68, 7673.75, 23.86).
        for (got, want) in attribution.iter().zip([-980.68, 7673.75, 23.86]) {
            assert!(
                (got - want).abs() <= 0.05 * want.abs(),
                "attribution {got} vs {want}"
            );
        }
    }

    #[test]
    fn original_never_beats_modified_without_its_transfer_term() {
        for name in ["base", "stressed", "individual_vs_coop"] {
            let case = builtin_case(name).unwrap();
            let original = solve_original_centralized(&case).unwrap();
            let modified = solve_modified_centralized(&case).unwrap();
            let modified_sans_transfer =
                modified.dispatch.objective - modified.dispatch.transfer_cost_total;
            assert!(
                original.dispatch.objective <= modified_sans_transfer + 1e-4,
                "{name}: {} vs {}",
                original.dispatch.objective,
                modified_sans_transfer
            );
        }
    }

    #[test]
    fn every_solver_output_passes_feasibility() {
        for name in ["base", "stressed", "individual_vs_coop"] {
            let case = builtin_case(name).unwrap();
            for sol in [
                solve_modified_centralized(&case).unwrap(),
                solve_original_centralized(&case).unwrap(),
            ] {
                let report = check_feasibility(&case, &sol.dispatch, SOLVER_FEASIBILITY_TOL);
                assert!(
                    report.feasible || report.complementarity_violation <= 1e-4,
                    "{name}: {report:?}"
                );
            }
        }
    }

    #[test]
    fn modified_optima_satisfy_complementarity() {
        for name in ["base", "stressed", "individual_vs_coop"] {
            let case = builtin_case(name).unwrap();
            let sol = solve_modified_centralized(&case).unwrap();
            let report = check_feasibility(&case, &sol.dispatch, SOLVER_FEASIBILITY_TOL);
            assert!(
                report.complementarity_violation <= 1e-4,
                "{name}: {}",
                report.complementarity_violation
            );
        }
    }

    #[test]
    fn enumeration_guard_rejects_large_networks() {
        let mg = |id| MicrogridParams {
            id,
            a: 0.001,
            b: 0.1,
            c: 0.0,
            demand: 1.0,
            gen_max: 10.0,
            pcc_max: 10.0,
            buy_price: 1.0,
            sell_price: 0.5,
        };
        let case = CaseConfig {
            microgrids: (1..=7).map(mg).collect(), // 21 pairs
            alpha: 0.001,
            beta: 0.1,
            max_iters: 1,
            gap_tol: None,
            lambda_init: vec![0.0; 7],
        };
        assert!(matches!(
            solve_original_centralized(&case),
            Err(SolveError::TooManyPairs { pairs: 21, .. })
        ));
    }
}
