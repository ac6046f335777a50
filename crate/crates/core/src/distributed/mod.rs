//! The privacy-preserving distributed solver.
//!
//! Each microgrid keeps its cost function and demand to itself and solves a
//! local dispatch subproblem against the announced selling prices λ. A
//! synchronous round then plays out as:
//!
//! 1. every MG announces its current λ_m on the bus;
//! 2. every MG solves its subproblem — choosing generation, grid trades, how
//!    much to buy from each other MG at their announced prices, and how much
//!    total power ε_m to offer for sale at its own price;
//! 3. every MG reports its purchases and its offer on the bus;
//! 4. every MG nudges its own price along the exchange imbalance:
//!    `λ_m ← λ_m + α·(Σ_n purchases of m's power − ε_m)`.
//!
//! The imbalance is a supergradient of the concave dual function, so the
//! loop is plain dual ascent with a constant step. Prices, purchases and
//! offers are the only data that ever cross agent boundaries; the
//! [`bus::audit_privacy`] walk over the recorded wire traffic verifies that
//! on every run.
//!
//! The coordinator mirrors the same public arithmetic to maintain the
//! canonical [`PriceVector`], recover a feasible primal dispatch each round,
//! and record the [`IterationTrace`].

pub mod bus;
pub mod trace;

use rayon::prelude::*;
use thiserror::Error;

pub use bus::{audit_privacy, BusLog, Message, MessageBus, Payload, PrivacyAudit, Purchase};
pub use trace::{IterationTrace, RoundRecord};

use crate::model::{
    check_feasibility, evaluate_objective, CaseConfig, DispatchSolution, MicrogridParams,
    ModelError, SOLVER_FEASIBILITY_TOL,
};
use crate::qp::{qp_solve, QpError, QpProblem, QpStatus, DEFAULT_KKT_TOL};

/// Abort threshold on |λ|: past this the step size is clearly too large.
pub const DIVERGENCE_LAMBDA_LIMIT: f64 = 1e6;

/// The selling prices at some round — the only coordination signal.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceVector {
    /// λ per MG [$/kW], indexed like `CaseConfig::microgrids`.
    pub lambda: Vec<f64>,
    /// Round counter; 0 before the first round.
    pub round: usize,
}

/// One MG's optimal local response to a price vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemResult {
    /// 0-based MG index.
    pub mg: usize,
    /// Power bought from each MG [kW], indexed by seller; own entry is 0.
    pub purchases: Vec<f64>,
    /// Total power offered for sale ε_m [kW].
    pub eps_offer: f64,
    pub gen: f64,
    pub grid_buy: f64,
    pub grid_sell: f64,
    /// Local objective value [$], constant cost term included.
    pub objective: f64,
}

/// Builds MG `m`'s local subproblem at the given prices: minimize
///
/// ```text
///   C_m(P) + Σ_s β·(buy_s)² + buy_price·grid_buy − sell_price·grid_sell
///          + Σ_s λ_s·buy_s − λ_m·ε
/// ```
///
/// subject to its own balance `P + Σ_s buy_s + grid_buy = D + ε + grid_sell`,
/// generation limits, both PCC limits, and nonnegativity. Variables are
/// `[P, grid_buy, grid_sell, buy_s (sellers ascending), ε]` — for three MGs
/// that is 3 + 2 + 1 = 6 variables. The constant c_m is not in the QP
/// objective.
pub fn build_subproblem(
    mg: &MicrogridParams,
    prices: &PriceVector,
    beta: f64,
    n_mgs: usize,
) -> Result<QpProblem, DistributedError> {
    if prices.lambda.len() != n_mgs {
        return Err(DistributedError::MissingPrice {
            expected: n_mgs,
            got: prices.lambda.len(),
        });
    }
    let m = mg.id - 1;
    assert!(m < n_mgs, "mg id out of range");
    let sellers: Vec<usize> = (0..n_mgs).filter(|&s| s != m).collect();
    let n_vars = 4 + sellers.len();
    let (gen, grid_buy, grid_sell) = (0usize, 1usize, 2usize);
    let buy = |k: usize| 3 + k;
    let eps = 3 + sellers.len();

    let mut p = QpProblem::new(n_vars);
    p.q_mat[(gen, gen)] = 2.0 * mg.a;
    p.lin[gen] = mg.b;
    p.lin[grid_buy] = mg.buy_price;
    p.lin[grid_sell] = -mg.sell_price;
    p.lin[eps] = -prices.lambda[m];
    for (k, &s) in sellers.iter().enumerate() {
        p.q_mat[(buy(k), buy(k))] = 2.0 * beta;
        p.lin[buy(k)] = prices.lambda[s];
        p.lower[buy(k)] = 0.0;
    }
    p.lower[gen] = 0.0;
    p.upper[gen] = mg.gen_max;
    p.lower[grid_buy] = 0.0;
    p.lower[grid_sell] = 0.0;
    p.lower[eps] = 0.0;

    let mut a_eq = nalgebra::DMatrix::zeros(1, n_vars);
    a_eq[(0, gen)] = 1.0;
    a_eq[(0, grid_buy)] = 1.0;
    a_eq[(0, grid_sell)] = -1.0;
    a_eq[(0, eps)] = -1.0;
    for k in 0..sellers.len() {
        a_eq[(0, buy(k))] = 1.0;
    }
    p.a_eq = a_eq;
    p.b_eq = nalgebra::DVector::from_vec(vec![mg.demand]);

    let mut a_in = nalgebra::DMatrix::zeros(2, n_vars);
    // export: ε + grid_sell ≤ pcc
    a_in[(0, eps)] = 1.0;
    a_in[(0, grid_sell)] = 1.0;
    // import: Σ buy + grid_buy ≤ pcc
    for k in 0..sellers.len() {
        a_in[(1, buy(k))] = 1.0;
    }
    a_in[(1, grid_buy)] = 1.0;
    p.a_in = a_in;
    p.b_in = nalgebra::DVector::from_vec(vec![mg.pcc_max, mg.pcc_max]);
    Ok(p)
}

/// Solves MG `m`'s subproblem. The subproblem is feasible whenever the MG
/// can cover its demand from its own generator plus a full PCC of imports;
/// anything else is an agent fault that aborts the run.
pub fn solve_subproblem(
    mg: &MicrogridParams,
    prices: &PriceVector,
    beta: f64,
    n_mgs: usize,
) -> Result<SubproblemResult, DistributedError> {
    if mg.demand > mg.gen_max + mg.pcc_max {
        return Err(DistributedError::AgentInfeasible {
            mg: mg.id,
            demand: mg.demand,
            max_supply: mg.gen_max + mg.pcc_max,
        });
    }
    let p = build_subproblem(mg, prices, beta, n_mgs)?;
    let sol = qp_solve(&p, DEFAULT_KKT_TOL)?;
    if sol.status != QpStatus::Optimal {
        return Err(DistributedError::AgentFault {
            mg: mg.id,
            status: sol.status,
        });
    }
    let m = mg.id - 1;
    let sellers: Vec<usize> = (0..n_mgs).filter(|&s| s != m).collect();
    let mut purchases = vec![0.0; n_mgs];
    for (k, &s) in sellers.iter().enumerate() {
        purchases[s] = sol.x[3 + k];
    }
    Ok(SubproblemResult {
        mg: m,
        purchases,
        eps_offer: sol.x[3 + sellers.len()],
        gen: sol.x[0],
        grid_buy: sol.x[1],
        grid_sell: sol.x[2],
        objective: sol.objective + mg.c,
    })
}

/// Exchange residual per MG [kW]: what the others bought from m this round
/// minus what m offered. This is the supergradient used by the price update.
pub fn exchange_residuals(results: &[SubproblemResult]) -> Vec<f64> {
    let n = results.len();
    (0..n)
        .map(|m| {
            let bought: f64 = (0..n)
                .filter(|&b| b != m)
                .map(|b| results[b].purchases[m])
                .sum();
            bought - results[m].eps_offer
        })
        .collect()
}

/// One subgradient step: `λ_m ← λ_m + α·r_m`, round counter advanced.
pub fn subgradient_update(
    prices: &PriceVector,
    results: &[SubproblemResult],
    alpha: f64,
) -> PriceVector {
    let residuals = exchange_residuals(results);
    PriceVector {
        lambda: prices
            .lambda
            .iter()
            .zip(&residuals)
            .map(|(l, r)| l + alpha * r)
            .collect(),
        round: prices.round + 1,
    }
}

/// The dual function value at the prices the results were solved under: the
/// separable Lagrangian evaluated at its minimizers, i.e. the sum of local
/// objective values.
pub fn dual_objective(results: &[SubproblemResult]) -> f64 {
    results.iter().map(|r| r.objective).sum()
}

/// Assembles a feasible dispatch from one round of subproblem results.
///
/// Exchanges are taken from the buyers' reports and each ε_m is overwritten
/// with the seller's actual sales Σ_n P^e_{m,n}. If a seller's requested
/// sales exceed what it can physically deliver (its PCC, or generation plus
/// grid headroom), its outgoing exchanges are scaled down proportionally and
/// the round is flagged. Each MG's own generation and grid trade are then
/// re-solved with its exchanges held fixed, restoring exact balance. Returns
/// the dispatch and whether clamping occurred.
pub fn recover_primal(
    case: &CaseConfig,
    results: &[SubproblemResult],
) -> Result<(DispatchSolution, bool), DistributedError> {
    let n = case.n_mgs();
    assert_eq!(results.len(), n, "one result per MG");
    let mut dispatch = DispatchSolution::zeros(n);
    for b in 0..n {
        for s in 0..n {
            if s != b {
                dispatch.exchange.set(s, b, results[b].purchases[s]);
            }
        }
    }

    // Clamp sellers that physically cannot deliver what buyers asked for.
    // Excesses at rounding scale get clamped too but are not worth flagging.
    let mut clamped = false;
    for (s, mg) in case.microgrids.iter().enumerate() {
        let requested = dispatch.exchange.sold_by(s);
        let deliverable = mg.pcc_max.min(mg.gen_max + mg.pcc_max - mg.demand);
        if requested > deliverable {
            if requested > deliverable * (1.0 + 1e-9) {
                clamped = true;
            }
            let scale = if requested > 0.0 {
                (deliverable / requested).max(0.0)
            } else {
                0.0
            };
            for b in 0..n {
                if b != s {
                    let kw = dispatch.exchange.get(s, b);
                    dispatch.exchange.set(s, b, kw * scale);
                }
            }
        }
    }

    // Local re-solve per MG with exchanges fixed: choose generation and grid
    // trade to restore exact balance at minimum cost. The QP can lose its
    // interior when a clamped seller is pinned to its exact capability, so a
    // closed-form fallback covers that corner.
    for (m, mg) in case.microgrids.iter().enumerate() {
        let incoming = dispatch.exchange.bought_by(m);
        let outgoing = dispatch.exchange.sold_by(m);
        dispatch.eps[m] = outgoing;
        let net_need = mg.demand + outgoing - incoming;
        let buy_max = (mg.pcc_max - incoming).max(0.0);
        let sell_max = (mg.pcc_max - outgoing).max(0.0);

        let mut p = QpProblem::new(3);
        p.q_mat[(0, 0)] = 2.0 * mg.a;
        p.lin[0] = mg.b;
        p.lin[1] = mg.buy_price;
        p.lin[2] = -mg.sell_price;
        p.lower = nalgebra::DVector::from_vec(vec![0.0; 3]);
        p.upper = nalgebra::DVector::from_vec(vec![mg.gen_max, buy_max, sell_max]);
        p.a_eq = nalgebra::DMatrix::from_row_slice(1, 3, &[1.0, 1.0, -1.0]);
        p.b_eq = nalgebra::DVector::from_vec(vec![net_need]);
        let sol = qp_solve(&p, DEFAULT_KKT_TOL)?;
        let (gen, grid_buy, grid_sell) = if sol.status == QpStatus::Optimal {
            (sol.x[0], sol.x[1], sol.x[2])
        } else {
            local_dispatch_fallback(mg, net_need, buy_max, sell_max).ok_or(
                DistributedError::RecoveryFailed {
                    mg: mg.id,
                    status: sol.status,
                },
            )?
        };
        dispatch.gen[m] = gen;
        dispatch.grid_buy[m] = grid_buy;
        dispatch.grid_sell[m] = grid_sell;
    }

    let breakdown = evaluate_objective(case, &dispatch, true)?;
    dispatch.objective = breakdown.total;
    dispatch.gen_cost_total = breakdown.gen_cost_total;
    dispatch.transfer_cost_total = breakdown.transfer_cost_total;
    Ok((dispatch, clamped))
}

/// Closed-form single-MG dispatch with exchanges fixed: pick generation
/// `g ∈ [0, gen_max]`, buy `net_need − g` from the grid when positive or sell
/// the surplus otherwise, within the remaining PCC headroom. The objective is
/// piecewise quadratic in `g` with a kink at `g = net_need`, so the optimum
/// is among the per-piece minimizers, the kink, and the interval endpoints.
/// Returns `None` when even full generation plus headroom cannot balance.
fn local_dispatch_fallback(
    mg: &MicrogridParams,
    net_need: f64,
    buy_max: f64,
    sell_max: f64,
) -> Option<(f64, f64, f64)> {
    let lo = (net_need - buy_max).max(0.0);
    let hi = (net_need + sell_max).min(mg.gen_max);
    if lo > hi + 1e-7 {
        return None;
    }
    let hi = hi.max(lo);
    let cost = |g: f64| {
        let net = net_need - g;
        mg.generation_cost(g)
            + if net >= 0.0 {
                mg.buy_price * net
            } else {
                mg.sell_price * net // net < 0: revenue
            }
    };
    let mut candidates = vec![lo, hi, net_need.clamp(lo, hi)];
    if mg.a > 0.0 {
        // interior minimizers of the buy-side and sell-side quadratics
        candidates.push(((mg.buy_price - mg.b) / (2.0 * mg.a)).clamp(lo, hi));
        candidates.push(((mg.sell_price - mg.b) / (2.0 * mg.a)).clamp(lo, hi));
    }
    let g = candidates
        .into_iter()
        .min_by(|x, y| cost(*x).total_cmp(&cost(*y)))?;
    let net = net_need - g;
    if net >= 0.0 {
        Some((g, net, 0.0))
    } else {
        Some((g, 0.0, -net))
    }
}

/// One microgrid participant. Holds the private parameters and this MG's own
/// price; learns about the others exclusively through [`Message`]s.
struct Agent {
    params: MicrogridParams,
    beta: f64,
    n_mgs: usize,
    lambda: f64,
}

impl Agent {
    fn announce(&self, round: usize) -> Message {
        Message {
            sender: self.params.id,
            round,
            payload: Payload::PriceAnnouncement {
                lambda: self.lambda,
            },
        }
    }

    /// Parses the announced prices and solves the local subproblem.
    fn solve(
        &self,
        announcements: &[Message],
        round: usize,
    ) -> Result<(SubproblemResult, Message), DistributedError> {
        let mut lambda = vec![None; self.n_mgs];
        for msg in announcements {
            if let Payload::PriceAnnouncement { lambda: l } = msg.payload {
                if msg.sender >= 1 && msg.sender <= self.n_mgs {
                    lambda[msg.sender - 1] = Some(l);
                }
            }
        }
        let got = lambda.iter().flatten().count();
        let lambda: Vec<f64> = lambda
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or(DistributedError::MissingPrice {
                expected: self.n_mgs,
                got,
            })?;
        let prices = PriceVector { lambda, round };
        let result = solve_subproblem(&self.params, &prices, self.beta, self.n_mgs)?;
        let report = Message {
            sender: self.params.id,
            round,
            payload: Payload::ExchangeReport {
                purchases: (0..self.n_mgs)
                    .filter(|&s| s != result.mg)
                    .map(|s| Purchase {
                        seller: s + 1,
                        kw: result.purchases[s],
                    })
                    .collect(),
                eps_offer: result.eps_offer,
            },
        };
        Ok((result, report))
    }

    /// The price update each MG applies to itself from the public exchange
    /// reports: purchases of this MG's power, minus its own offer (read back
    /// from its own report), times the step size.
    fn observe_reports(&mut self, reports: &[Message], alpha: f64) {
        let mut bought = 0.0;
        let mut own_offer = 0.0;
        for msg in reports {
            if let Payload::ExchangeReport {
                purchases,
                eps_offer,
            } = &msg.payload
            {
                if msg.sender == self.params.id {
                    own_offer = *eps_offer;
                } else if let Some(p) = purchases.iter().find(|p| p.seller == self.params.id) {
                    bought += p.kw;
                }
            }
        }
        self.lambda += alpha * (bought - own_offer);
    }
}

/// Everything a distributed run produces.
#[derive(Debug)]
pub struct DistributedRun {
    /// The recovered feasible dispatch at the final round.
    pub dispatch: DispatchSolution,
    /// Prices after the final update.
    pub final_prices: PriceVector,
    pub trace: IterationTrace,
    /// Recorded wire traffic (2·|M| messages per round).
    pub log: BusLog,
    pub diagnostics: RunDiagnostics,
}

/// Run-level observations that are not part of the trace contract.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunDiagnostics {
    /// Rounds whose price vector contained a negative entry.
    pub negative_price_rounds: Vec<usize>,
    /// Rounds where primal recovery clamped a seller.
    pub clamped_rounds: Vec<usize>,
    /// Round at which the relative-gap stop fired, if it did.
    pub converged_at: Option<usize>,
}

/// Runs the synchronous coordination loop for `case.max_iters` rounds (or
/// until the optional relative duality-gap threshold is met), recording the
/// trace and every message. Subproblems within a round solve concurrently;
/// results are keyed by MG, so scheduling order cannot affect anything.
pub fn run_distributed(case: &CaseConfig) -> Result<DistributedRun, DistributedError> {
    case.validate()?;
    let n = case.n_mgs();
    let mut agents: Vec<Agent> = case
        .microgrids
        .iter()
        .zip(&case.lambda_init)
        .map(|(params, &lambda)| Agent {
            params: params.clone(),
            beta: case.beta,
            n_mgs: n,
            lambda,
        })
        .collect();
    let mut bus = MessageBus::new();
    let mut trace = IterationTrace::new(n);
    let mut diagnostics = RunDiagnostics::default();
    let mut prices = PriceVector {
        lambda: case.lambda_init.clone(),
        round: 0,
    };
    let mut last_dispatch: Option<DispatchSolution> = None;

    for iter in 1..=case.max_iters {
        let max_abs_lambda = prices.lambda.iter().fold(0.0f64, |a, l| a.max(l.abs()));
        if max_abs_lambda > DIVERGENCE_LAMBDA_LIMIT {
            return Err(DistributedError::Diverged {
                round: iter,
                max_lambda: max_abs_lambda,
            });
        }

        // Step 1: price announcements.
        let announcements: Vec<Message> = agents
            .iter()
            .map(|a| bus.send(a.announce(iter)))
            .collect();

        // Steps 2–3: concurrent local solves, then exchange reports.
        let solved: Result<Vec<_>, _> = agents
            .par_iter()
            .map(|a| a.solve(&announcements, iter))
            .collect();
        let solved = solved?;
        let mut results = Vec::with_capacity(n);
        let mut reports = Vec::with_capacity(n);
        for (result, report) in solved {
            reports.push(bus.send(report));
            results.push(result);
        }

        // Coordinator telemetry: residuals, dual value, recovered primal.
        let residuals = exchange_residuals(&results);
        let dual_obj = dual_objective(&results);
        let (dispatch, clamped) = recover_primal(case, &results)?;
        let primal_obj = dispatch.objective;
        let gap = primal_obj - dual_obj;
        let gap_rel = gap.abs() / primal_obj.abs().max(1e-12);
        let negative_price = prices.lambda.iter().any(|l| *l < 0.0);
        if negative_price {
            diagnostics.negative_price_rounds.push(iter);
        }
        if clamped {
            diagnostics.clamped_rounds.push(iter);
        }
        trace.push(RoundRecord {
            iter,
            lambda: prices.lambda.clone(),
            residual: residuals.clone(),
            dual_obj,
            primal_obj,
            gap,
            gap_pct: 100.0 * gap / primal_obj.abs().max(1e-12),
            clamped,
            negative_price,
        });
        last_dispatch = Some(dispatch);

        // Step 4: every MG updates its own price from the public reports;
        // the coordinator mirrors the same arithmetic for the canonical
        // vector.
        for agent in &mut agents {
            agent.observe_reports(&reports, case.alpha);
        }
        prices = subgradient_update(&prices, &results, case.alpha);
        debug_assert!(agents
            .iter()
            .zip(&prices.lambda)
            .all(|(a, l)| a.lambda == *l));

        if let Some(tol) = case.gap_tol {
            if gap_rel <= tol {
                diagnostics.converged_at = Some(iter);
                break;
            }
        }
    }

    if !diagnostics.negative_price_rounds.is_empty() {
        log::warn!(
            "negative selling prices in {} round(s), first at round {}",
            diagnostics.negative_price_rounds.len(),
            diagnostics.negative_price_rounds[0]
        );
    }

    let dispatch = last_dispatch.expect("max_iters >= 1 was validated");
    debug_assert!(
        check_feasibility(case, &dispatch, SOLVER_FEASIBILITY_TOL).max_physical_residual() < 1e-4
    );
    Ok(DistributedRun {
        dispatch,
        final_prices: prices,
        trace,
        log: bus.into_log(),
        diagnostics,
    })
}

#[derive(Debug, Error)]
pub enum DistributedError {
    #[error("invalid case: {0}")]
    Model(#[from] ModelError),
    #[error("price vector incomplete: expected {expected} entries, got {got}")]
    MissingPrice { expected: usize, got: usize },
    #[error("microgrid {mg} cannot cover its demand locally ({demand} kW > {max_supply} kW); aborting the run")]
    AgentInfeasible {
        mg: usize,
        demand: f64,
        max_supply: f64,
    },
    #[error("agent {mg} subproblem ended with status {status:?}")]
    AgentFault { mg: usize, status: QpStatus },
    #[error("primal recovery failed for microgrid {mg} (status {status:?})")]
    RecoveryFailed { mg: usize, status: QpStatus },
    #[error(
        "prices diverged at round {round} (max |lambda| = {max_lambda:.3e} > 1e6); \
         try a smaller step size alpha"
    )]
    Diverged { round: usize, max_lambda: f64 },
    #[error(transparent)]
    Qp(#[from] QpError),
}
