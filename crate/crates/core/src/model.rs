//! Domain types and the shared MMG arithmetic: generation and transfer cost
//! evaluation, objective breakdown, and constraint-by-constraint feasibility
//! checks. Every solver in this crate produces or consumes these types, so
//! the formulas live here and nowhere else.
//!
//! Conventions: microgrid ids are 1-based and contiguous; all vectors and the
//! exchange matrix are indexed 0-based in the order of
//! [`CaseConfig::microgrids`], so MG `id` lives at index `id − 1`. A single
//! one-hour scheduling period is assumed throughout, which is why tariffs in
//! `$/kW` act directly as energy prices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One microgrid's private data: quadratic generation cost `a·P² + b·P + c`,
/// fixed demand, generation capacity, PCC transfer capacity, and the tariffs
/// for trading with the main grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrogridParams {
    /// 1-based microgrid index.
    pub id: usize,
    /// Quadratic cost coefficient [$/kW²]. Must be ≥ 0 for convexity.
    pub a: f64,
    /// Linear cost coefficient [$/kW].
    pub b: f64,
    /// Constant cost term [$].
    pub c: f64,
    /// Power demand [kW].
    pub demand: f64,
    /// Maximum generator output [kW].
    pub gen_max: f64,
    /// PCC transfer capacity [kW]; limits total import and total export
    /// separately.
    pub pcc_max: f64,
    /// Price paid when buying from the main grid [$/kW].
    pub buy_price: f64,
    /// Price received when selling to the main grid [$/kW].
    pub sell_price: f64,
}

impl MicrogridParams {
    /// Generation cost `a·p² + b·p + c` [$]. Pure evaluation, no clamping.
    pub fn generation_cost(&self, p: f64) -> f64 {
        self.a * p * p + self.b * p + self.c
    }
}

/// Quadratic charge `β·p²` [$] for moving `p` kW through the distribution
/// network. Strictly convex in `p` for β > 0, which is what rules out
/// simultaneous opposite-direction exchanges at an optimum.
pub fn transfer_cost(beta: f64, p: f64) -> f64 {
    beta * p * p
}

/// A complete scenario: the microgrid set plus the coordination parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseConfig {
    /// The microgrids, ordered by id (1..=n).
    pub microgrids: Vec<MicrogridParams>,
    /// Subgradient step size [$ per kW per iteration]. Zero freezes prices.
    pub alpha: f64,
    /// Transfer-cost scaling β [$/kW²].
    pub beta: f64,
    /// Iteration budget for the distributed solver.
    pub max_iters: usize,
    /// Optional stop threshold on the relative duality gap (a fraction, not
    /// a percentage). `None` runs the full iteration budget.
    pub gap_tol: Option<f64>,
    /// Initial selling price per microgrid [$/kW].
    pub lambda_init: Vec<f64>,
}

impl CaseConfig {
    pub fn n_mgs(&self) -> usize {
        self.microgrids.len()
    }

    /// Validates every invariant. Returns the list of non-fatal warnings
    /// (e.g. a sell price above the buy price, which invites grid arbitrage
    /// but is deliberate in the stressed study case).
    pub fn validate(&self) -> Result<Vec<String>, ModelError> {
        let n = self.microgrids.len();
        if n < 2 {
            return Err(ModelError::TooFewMicrogrids(n));
        }
        let mut warnings = Vec::new();
        for (pos, mg) in self.microgrids.iter().enumerate() {
            if mg.id != pos + 1 {
                return Err(ModelError::BadId {
                    found: mg.id,
                    position: pos,
                });
            }
            for (field, value) in [
                ("a", mg.a),
                ("b", mg.b),
                ("c", mg.c),
                ("demand", mg.demand),
                ("gen_max", mg.gen_max),
                ("pcc_max", mg.pcc_max),
                ("buy_price", mg.buy_price),
                ("sell_price", mg.sell_price),
            ] {
                if !value.is_finite() {
                    return Err(ModelError::BadParameter {
                        id: mg.id,
                        field,
                        requirement: "finite",
                        value,
                    });
                }
            }
            if mg.a < 0.0 {
                return Err(ModelError::BadParameter {
                    id: mg.id,
                    field: "a",
                    requirement: "nonnegative (convex cost)",
                    value: mg.a,
                });
            }
            for (field, value) in [
                ("demand", mg.demand),
                ("gen_max", mg.gen_max),
                ("pcc_max", mg.pcc_max),
            ] {
                if value < 0.0 {
                    return Err(ModelError::BadParameter {
                        id: mg.id,
                        field,
                        requirement: "nonnegative",
                        value,
                    });
                }
            }
            if mg.sell_price > mg.buy_price {
                warnings.push(format!(
                    "microgrid {}: sell_price {} exceeds buy_price {}; grid arbitrage is possible",
                    mg.id, mg.sell_price, mg.buy_price
                ));
            }
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(ModelError::BadSolverParameter {
                field: "alpha",
                requirement: "> 0 (0 is accepted and freezes prices)",
                value: self.alpha,
            });
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(ModelError::BadSolverParameter {
                field: "beta",
                requirement: "> 0",
                value: self.beta,
            });
        }
        if self.max_iters < 1 {
            return Err(ModelError::BadSolverParameter {
                field: "max_iters",
                requirement: ">= 1",
                value: self.max_iters as f64,
            });
        }
        if let Some(tol) = self.gap_tol {
            if !tol.is_finite() || tol <= 0.0 {
                return Err(ModelError::BadSolverParameter {
                    field: "gap_tol",
                    requirement: "> 0",
                    value: tol,
                });
            }
        }
        if self.lambda_init.len() != n {
            return Err(ModelError::LambdaInitLength {
                expected: n,
                got: self.lambda_init.len(),
            });
        }
        for (i, lam) in self.lambda_init.iter().enumerate() {
            if !lam.is_finite() || *lam < 0.0 {
                return Err(ModelError::BadParameter {
                    id: i + 1,
                    field: "lambda_init",
                    requirement: "finite and nonnegative",
                    value: *lam,
                });
            }
        }
        Ok(warnings)
    }
}

/// Directed microgrid-to-microgrid power exchanges. Only off-diagonal entries
/// are stored: an MG cannot trade with itself by construction, so the
/// diagonal does not exist rather than being constrained to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeMatrix {
    n: usize,
    values: Vec<f64>,
}

impl ExchangeMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![0.0; n * n.saturating_sub(1)],
        }
    }

    pub fn n_mgs(&self) -> usize {
        self.n
    }

    fn slot(&self, seller: usize, buyer: usize) -> usize {
        assert!(seller < self.n && buyer < self.n, "mg index out of range");
        assert_ne!(seller, buyer, "self-exchange does not exist");
        seller * (self.n - 1) + buyer - usize::from(buyer > seller)
    }

    /// Power sold by `seller` to `buyer` [kW]. Panics if `seller == buyer`.
    pub fn get(&self, seller: usize, buyer: usize) -> f64 {
        self.values[self.slot(seller, buyer)]
    }

    pub fn set(&mut self, seller: usize, buyer: usize, kw: f64) {
        let slot = self.slot(seller, buyer);
        self.values[slot] = kw;
    }

    /// Total power sold by `seller` to all other MGs [kW].
    pub fn sold_by(&self, seller: usize) -> f64 {
        (0..self.n)
            .filter(|&b| b != seller)
            .map(|b| self.get(seller, b))
            .sum()
    }

    /// Total power bought by `buyer` from all other MGs [kW].
    pub fn bought_by(&self, buyer: usize) -> f64 {
        (0..self.n)
            .filter(|&s| s != buyer)
            .map(|s| self.get(s, buyer))
            .sum()
    }

    /// Iterates all directed `(seller, buyer, kw)` entries.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |s| {
            (0..self.n)
                .filter(move |&b| b != s)
                .map(move |b| (s, b, self.get(s, b)))
        })
    }
}

/// A candidate dispatch for the whole network, with its objective breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution {
    /// Generator output per MG [kW].
    pub gen: Vec<f64>,
    /// Directed MG-to-MG exchanges [kW].
    pub exchange: ExchangeMatrix,
    /// Power bought from the main grid per MG [kW].
    pub grid_buy: Vec<f64>,
    /// Power sold to the main grid per MG [kW].
    pub grid_sell: Vec<f64>,
    /// Total power sold to other MGs per MG [kW]; equals the row sums of
    /// `exchange` at any consistent solution.
    pub eps: Vec<f64>,
    /// Total cost [$] (generation + transfer + grid purchases − grid sales).
    pub objective: f64,
    /// Σ generation cost [$].
    pub gen_cost_total: f64,
    /// Σ transfer cost [$]; zero when the transfer charge is not modeled.
    pub transfer_cost_total: f64,
}

impl DispatchSolution {
    /// An all-zero dispatch for `n` microgrids (costs included: the constant
    /// cost terms are only added by [`evaluate_objective`]).
    pub fn zeros(n: usize) -> Self {
        Self {
            gen: vec![0.0; n],
            exchange: ExchangeMatrix::zeros(n),
            grid_buy: vec![0.0; n],
            grid_sell: vec![0.0; n],
            eps: vec![0.0; n],
            objective: 0.0,
            gen_cost_total: 0.0,
            transfer_cost_total: 0.0,
        }
    }

    fn check_dims(&self, n: usize) -> Result<(), ModelError> {
        for (what, len) in [
            ("gen", self.gen.len()),
            ("grid_buy", self.grid_buy.len()),
            ("grid_sell", self.grid_sell.len()),
            ("eps", self.eps.len()),
            ("exchange", self.exchange.n_mgs()),
        ] {
            if len != n {
                return Err(ModelError::DimensionMismatch {
                    what,
                    expected: n,
                    got: len,
                });
            }
        }
        Ok(())
    }
}

/// Objective value split into its components. `total` always equals
/// `gen_cost_total + transfer_cost_total + grid_buy_cost − grid_sell_revenue`
/// exactly, because it is computed as that sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub total: f64,
    pub gen_cost_total: f64,
    pub transfer_cost_total: f64,
    pub grid_buy_cost: f64,
    pub grid_sell_revenue: f64,
}

/// Evaluates the system objective for any candidate dispatch.
///
/// With `include_transfer` the quadratic network charge is applied to every
/// exchange (the convexified problem); without it only generation and grid
/// trades are priced (the original problem).
pub fn evaluate_objective(
    case: &CaseConfig,
    sol: &DispatchSolution,
    include_transfer: bool,
) -> Result<ObjectiveBreakdown, ModelError> {
    sol.check_dims(case.n_mgs())?;
    let mut gen_cost_total = 0.0;
    let mut grid_buy_cost = 0.0;
    let mut grid_sell_revenue = 0.0;
    for (m, mg) in case.microgrids.iter().enumerate() {
        gen_cost_total += mg.generation_cost(sol.gen[m]);
        grid_buy_cost += mg.buy_price * sol.grid_buy[m];
        grid_sell_revenue += mg.sell_price * sol.grid_sell[m];
    }
    let transfer_cost_total = if include_transfer {
        sol.exchange
            .entries()
            .map(|(_, _, kw)| transfer_cost(case.beta, kw))
            .sum()
    } else {
        0.0
    };
    Ok(ObjectiveBreakdown {
        total: gen_cost_total + transfer_cost_total + grid_buy_cost - grid_sell_revenue,
        gen_cost_total,
        transfer_cost_total,
        grid_buy_cost,
        grid_sell_revenue,
    })
}

/// Constraint residuals of a candidate dispatch, all as violations (zero when
/// satisfied). `feasible` is true iff every residual is within the tolerance
/// the report was built with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Tolerance [kW] the verdict was taken at.
    pub tol: f64,
    /// Signed balance residual per MG [kW]:
    /// `(P_m + Σ imports + grid_buy) − (D_m + Σ exports + grid_sell)`.
    pub balance_residual: Vec<f64>,
    /// Max violation of `0 ≤ P_m ≤ gen_max` [kW].
    pub gen_violation: f64,
    /// Max violation of `Σ exports + grid_sell ≤ pcc_max` [kW].
    pub pcc_export_violation: f64,
    /// Max violation of `Σ imports + grid_buy ≤ pcc_max` [kW].
    pub pcc_import_violation: f64,
    /// Max negativity of any exchange / grid / eps variable [kW].
    pub negativity_violation: f64,
    /// Max over MG pairs of the product of opposite-direction exchanges
    /// [kW²]; nonzero means a simultaneous two-way trade.
    pub complementarity_violation: f64,
    pub feasible: bool,
}

impl FeasibilityReport {
    /// Largest residual in the report (balance taken in absolute value).
    pub fn max_residual(&self) -> f64 {
        self.max_physical_residual()
            .max(self.complementarity_violation)
    }

    /// Largest residual excluding the complementarity product. The convex
    /// (transfer-charged) problem has no complementarity constraint, so this
    /// is the right feasibility measure for its candidate points — two-way
    /// trades occur transiently while prices are still converging.
    pub fn max_physical_residual(&self) -> f64 {
        let balance = self
            .balance_residual
            .iter()
            .fold(0.0f64, |acc, r| acc.max(r.abs()));
        balance
            .max(self.gen_violation)
            .max(self.pcc_export_violation)
            .max(self.pcc_import_violation)
            .max(self.negativity_violation)
    }
}

/// Checks every constraint of the dispatch problem at tolerance `tol` [kW].
///
/// The complementarity product is compared against the same `tol` even though
/// its natural unit is kW²; callers that need a separate complementarity
/// tolerance can read the field directly.
pub fn check_feasibility(case: &CaseConfig, sol: &DispatchSolution, tol: f64) -> FeasibilityReport {
    let n = case.n_mgs();
    sol.check_dims(n).expect("dispatch dimensions match the case");

    let mut balance_residual = Vec::with_capacity(n);
    let mut gen_violation = 0.0f64;
    let mut pcc_export_violation = 0.0f64;
    let mut pcc_import_violation = 0.0f64;
    let mut negativity_violation = 0.0f64;
    for (m, mg) in case.microgrids.iter().enumerate() {
        let imports = sol.exchange.bought_by(m);
        let exports = sol.exchange.sold_by(m);
        let supply = sol.gen[m] + imports + sol.grid_buy[m];
        let use_side = mg.demand + exports + sol.grid_sell[m];
        balance_residual.push(supply - use_side);

        gen_violation = gen_violation
            .max(-sol.gen[m])
            .max(sol.gen[m] - mg.gen_max);
        pcc_export_violation =
            pcc_export_violation.max(exports + sol.grid_sell[m] - mg.pcc_max);
        pcc_import_violation =
            pcc_import_violation.max(imports + sol.grid_buy[m] - mg.pcc_max);
        negativity_violation = negativity_violation
            .max(-sol.grid_buy[m])
            .max(-sol.grid_sell[m])
            .max(-sol.eps[m]);
    }
    for (_, _, kw) in sol.exchange.entries() {
        negativity_violation = negativity_violation.max(-kw);
    }
    let mut complementarity_violation = 0.0f64;
    for m in 0..n {
        for b in m + 1..n {
            complementarity_violation =
                complementarity_violation.max(sol.exchange.get(m, b) * sol.exchange.get(b, m));
        }
    }
    let gen_violation = gen_violation.max(0.0);
    let pcc_export_violation = pcc_export_violation.max(0.0);
    let pcc_import_violation = pcc_import_violation.max(0.0);
    let negativity_violation = negativity_violation.max(0.0);
    let feasible = balance_residual.iter().all(|r| r.abs() <= tol)
        && gen_violation <= tol
        && pcc_export_violation <= tol
        && pcc_import_violation <= tol
        && negativity_violation <= tol
        && complementarity_violation <= tol;
    FeasibilityReport {
        tol,
        balance_residual,
        gen_violation,
        pcc_export_violation,
        pcc_import_violation,
        negativity_violation,
        complementarity_violation,
        feasible,
    }
}

/// Feasibility tolerance [kW] applied to solver outputs.
pub const SOLVER_FEASIBILITY_TOL: f64 = 1e-6;
/// Looser tolerance [kW] for comparisons against two-decimal published
/// dispatch tables.
pub const TABLE_COMPARISON_TOL: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("case must contain at least two microgrids (got {0})")]
    TooFewMicrogrids(usize),
    #[error("microgrid ids must be contiguous from 1: found id {found} at position {position}")]
    BadId { found: usize, position: usize },
    #[error("microgrid {id}: {field} must be {requirement} (got {value})")]
    BadParameter {
        id: usize,
        field: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("solver parameter {field} must be {requirement} (got {value})")]
    BadSolverParameter {
        field: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("lambda_init must have one entry per microgrid (expected {expected}, got {got})")]
    LambdaInitLength { expected: usize, got: usize },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}
