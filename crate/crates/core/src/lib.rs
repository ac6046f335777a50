//! Energy management for multi-microgrid (MMG) networks.
//!
//! A set of microgrids, each with a single dispatchable generator and a fixed
//! demand, can trade power with each other and with the main grid through
//! their points of common coupling (PCC). This crate solves the one-period
//! economic dispatch of such a network three ways:
//!
//! * [`centralized::solve_original_centralized`] — the reference problem with
//!   a bilinear no-simultaneous-exchange constraint, solved exactly by
//!   enumerating exchange-direction patterns;
//! * [`centralized::solve_modified_centralized`] — the convex variant that
//!   adds a quadratic network-transfer charge on every exchange, which makes
//!   opposite-direction trades uneconomic and the problem decomposable;
//! * [`distributed::run_distributed`] — a price-coordination loop in which
//!   each microgrid solves a local subproblem against announced selling
//!   prices and the prices are adjusted by a subgradient step, so that no
//!   participant ever reveals its cost function or demand.
//!
//! [`qp`] provides the dense convex quadratic-program solver under all three,
//! and [`scenarios`] the case-file schema plus the built-in study cases.

pub mod centralized;
pub mod distributed;
pub mod model;
pub mod qp;
pub mod scenarios;

pub use model::{CaseConfig, DispatchSolution, FeasibilityReport, MicrogridParams};
