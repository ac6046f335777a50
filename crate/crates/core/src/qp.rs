//! Dense convex quadratic programming.
//!
//! Solves
//!
//! ```text
//!     minimize    1/2 x' Q x + q' x
//!     subject to  A_eq x  = b_eq
//!                 A_in x <= b_in
//!                 l <= x <= u        (entries may be ±infinity)
//! ```
//!
//! with `Q` symmetric positive semidefinite, via a primal-dual interior-point
//! method (Mehrotra predictor-corrector). The problems in this crate are tiny
//! (a few dozen variables), so everything is dense and a full LU of the
//! reduced Newton system is taken each iteration.
//!
//! The contract is the KKT residual, not the algorithm: a solution reported
//! [`QpStatus::Optimal`] satisfies stationarity, primal and dual feasibility,
//! and complementary slackness to the requested tolerance, as recomputable by
//! [`kkt_residual`]. Identical inputs produce bitwise-identical solutions.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default tolerance applied to every KKT residual component.
pub const DEFAULT_KKT_TOL: f64 = 1e-8;
/// Iteration cap for the interior-point loop.
pub const MAX_ITERATIONS: usize = 500;

/// A convex QP in standard form. Infinite bounds use `f64::INFINITY` /
/// `f64::NEG_INFINITY` sentinels.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Symmetric PSD quadratic term (the objective is `1/2 x'Qx + q'x`).
    pub q_mat: DMatrix<f64>,
    /// Linear term.
    pub lin: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    /// An unconstrained problem skeleton with `n` variables, zero objective,
    /// and free bounds; fill in the pieces you need.
    pub fn new(n: usize) -> Self {
        Self {
            q_mat: DMatrix::zeros(n, n),
            lin: DVector::zeros(n),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.lin.len()
    }

    /// `1/2 x'Qx + q'x` at `x`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (&self.q_mat * x).dot(x) + self.lin.dot(x)
    }

    /// Checks dimensions, symmetry (to 1e-12 relative), bound ordering, and
    /// positive semidefiniteness (Cholesky of `Q + 1e-10·scale·I`).
    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n_vars();
        if self.q_mat.nrows() != n || self.q_mat.ncols() != n {
            return Err(QpError::Dimensions("Q must be n×n"));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return Err(QpError::Dimensions("A_eq/b_eq shape"));
        }
        if self.a_in.ncols() != n || self.a_in.nrows() != self.b_in.len() {
            return Err(QpError::Dimensions("A_in/b_in shape"));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(QpError::Dimensions("bounds length"));
        }
        let mut q_scale = 1.0f64;
        for i in 0..n {
            for j in 0..n {
                q_scale = q_scale.max(self.q_mat[(i, j)].abs());
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.q_mat[(i, j)] - self.q_mat[(j, i)]).abs() > 1e-12 * q_scale {
                    return Err(QpError::NotSymmetric { i, j });
                }
            }
        }
        for i in 0..n {
            if self.lower[i] > self.upper[i] {
                return Err(QpError::BoundsCrossed { var: i });
            }
        }
        let mut shifted = self.q_mat.clone();
        for i in 0..n {
            shifted[(i, i)] += 1e-10 * q_scale;
        }
        if shifted.cholesky().is_none() {
            return Err(QpError::NotPositiveSemidefinite);
        }
        Ok(())
    }
}

/// Solver verdict for a [`QpSolution`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

/// Primal/dual solution. Sign convention: stationarity reads
/// `Qx + q + A_eq' duals_eq + A_in' duals_in + duals_upper − duals_lower = 0`
/// with `duals_in`, `duals_lower`, `duals_upper` all ≥ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub duals_eq: DVector<f64>,
    pub duals_in: DVector<f64>,
    pub duals_lower: DVector<f64>,
    pub duals_upper: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    /// For [`QpStatus::Infeasible`]: the smallest achievable max-norm
    /// constraint violation, as certified by an auxiliary feasibility solve.
    pub certificate: Option<f64>,
}

/// Max-norm KKT residuals, recomputed from the problem data alone so any
/// claimed solution can be audited independently of the solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_in: f64,
    pub dual_feas: f64,
    pub comp_slack: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_eq)
            .max(self.primal_in)
            .max(self.dual_feas)
            .max(self.comp_slack)
    }
}

/// Recomputes all KKT residuals of `s` for `p`. Pure evaluation.
pub fn kkt_residual(p: &QpProblem, s: &QpSolution) -> KktResidual {
    let n = p.n_vars();
    assert_eq!(s.x.len(), n, "solution dimension");
    let mut grad = &p.q_mat * &s.x + &p.lin;
    if p.a_eq.nrows() > 0 {
        grad += p.a_eq.transpose() * &s.duals_eq;
    }
    if p.a_in.nrows() > 0 {
        grad += p.a_in.transpose() * &s.duals_in;
    }
    for i in 0..n {
        grad[i] += s.duals_upper[i] - s.duals_lower[i];
    }
    let stationarity = grad.amax();

    let primal_eq = if p.a_eq.nrows() > 0 {
        (&p.a_eq * &s.x - &p.b_eq).amax()
    } else {
        0.0
    };

    let mut primal_in = 0.0f64;
    let mut comp_slack = 0.0f64;
    if p.a_in.nrows() > 0 {
        let slack = &p.b_in - &p.a_in * &s.x;
        for i in 0..slack.len() {
            primal_in = primal_in.max(-slack[i]);
            comp_slack = comp_slack.max((s.duals_in[i] * slack[i]).abs());
        }
    }
    for i in 0..n {
        if p.lower[i].is_finite() {
            primal_in = primal_in.max(p.lower[i] - s.x[i]);
            comp_slack = comp_slack.max((s.duals_lower[i] * (s.x[i] - p.lower[i])).abs());
        }
        if p.upper[i].is_finite() {
            primal_in = primal_in.max(s.x[i] - p.upper[i]);
            comp_slack = comp_slack.max((s.duals_upper[i] * (p.upper[i] - s.x[i])).abs());
        }
    }

    let mut dual_feas = 0.0f64;
    for z in s
        .duals_in
        .iter()
        .chain(s.duals_lower.iter())
        .chain(s.duals_upper.iter())
    {
        dual_feas = dual_feas.max(-z);
    }

    KktResidual {
        stationarity,
        primal_eq,
        primal_in: primal_in.max(0.0),
        dual_feas: dual_feas.max(0.0),
        comp_slack,
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("inconsistent problem dimensions: {0}")]
    Dimensions(&'static str),
    #[error("Q is not symmetric at ({i}, {j})")]
    NotSymmetric { i: usize, j: usize },
    #[error("Q is not positive semidefinite")]
    NotPositiveSemidefinite,
    #[error("lower bound exceeds upper bound for variable {var}")]
    BoundsCrossed { var: usize },
    #[error("linear algebra failure: {0}")]
    Numerical(&'static str),
}

/// Solves `p` to KKT tolerance `tol`. Infeasibility and unboundedness are
/// statuses on the returned solution, not errors; errors are reserved for
/// structurally invalid problems.
pub fn qp_solve(p: &QpProblem, tol: f64) -> Result<QpSolution, QpError> {
    p.validate()?;
    solve_validated(p, tol, true)
}

/// [`qp_solve`] at [`DEFAULT_KKT_TOL`].
pub fn qp_solve_default(p: &QpProblem) -> Result<QpSolution, QpError> {
    qp_solve(p, DEFAULT_KKT_TOL)
}

/// The inequality system `G x <= h` assembled from general rows plus bound
/// rows. Bound rows are ±unit vectors, so matrix products treat them
/// specially instead of materializing G.
struct IneqSystem {
    m_in: usize,
    upper: Vec<(usize, f64)>,
    lower: Vec<(usize, f64)>,
}

impl IneqSystem {
    fn build(p: &QpProblem) -> Self {
        let upper: Vec<(usize, f64)> = (0..p.n_vars())
            .filter(|&i| p.upper[i].is_finite())
            .map(|i| (i, p.upper[i]))
            .collect();
        let lower: Vec<(usize, f64)> = (0..p.n_vars())
            .filter(|&i| p.lower[i].is_finite())
            .map(|i| (i, p.lower[i]))
            .collect();
        Self {
            m_in: p.a_in.nrows(),
            upper,
            lower,
        }
    }

    fn rows(&self) -> usize {
        self.m_in + self.upper.len() + self.lower.len()
    }

    /// `G x`.
    fn g_mul(&self, p: &QpProblem, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows());
        if self.m_in > 0 {
            out.rows_mut(0, self.m_in).copy_from(&(&p.a_in * x));
        }
        for (k, &(var, _)) in self.upper.iter().enumerate() {
            out[self.m_in + k] = x[var];
        }
        let off = self.m_in + self.upper.len();
        for (k, &(var, _)) in self.lower.iter().enumerate() {
            out[off + k] = -x[var];
        }
        out
    }

    /// `G' v`.
    fn gt_mul(&self, p: &QpProblem, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(p.n_vars());
        if self.m_in > 0 {
            out += p.a_in.transpose() * v.rows(0, self.m_in);
        }
        for (k, &(var, _)) in self.upper.iter().enumerate() {
            out[var] += v[self.m_in + k];
        }
        let off = self.m_in + self.upper.len();
        for (k, &(var, _)) in self.lower.iter().enumerate() {
            out[var] -= v[off + k];
        }
        out
    }

    fn h(&self, p: &QpProblem) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows());
        if self.m_in > 0 {
            out.rows_mut(0, self.m_in).copy_from(&p.b_in);
        }
        for (k, &(_, bound)) in self.upper.iter().enumerate() {
            out[self.m_in + k] = bound;
        }
        let off = self.m_in + self.upper.len();
        for (k, &(_, bound)) in self.lower.iter().enumerate() {
            out[off + k] = -bound;
        }
        out
    }

    /// Adds `G' diag(d) G` into the top-left n×n block of `m`.
    fn add_gtdg(&self, p: &QpProblem, d: &DVector<f64>, m: &mut DMatrix<f64>) {
        let n = p.n_vars();
        for r in 0..self.m_in {
            let dr = d[r];
            for i in 0..n {
                let gi = p.a_in[(r, i)];
                if gi == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let gj = p.a_in[(r, j)];
                    if gj != 0.0 {
                        m[(i, j)] += dr * gi * gj;
                    }
                }
            }
        }
        for (k, &(var, _)) in self.upper.iter().enumerate() {
            m[(var, var)] += d[self.m_in + k];
        }
        let off = self.m_in + self.upper.len();
        for (k, &(var, _)) in self.lower.iter().enumerate() {
            m[(var, var)] += d[off + k];
        }
    }

    /// Splits a stacked dual vector back into (duals_in, duals_lower,
    /// duals_upper) indexed by variable.
    fn split_duals(
        &self,
        p: &QpProblem,
        z: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let n = p.n_vars();
        let duals_in = DVector::from_fn(self.m_in, |i, _| z[i]);
        let mut duals_upper = DVector::zeros(n);
        let mut duals_lower = DVector::zeros(n);
        for (k, &(var, _)) in self.upper.iter().enumerate() {
            duals_upper[var] = z[self.m_in + k];
        }
        let off = self.m_in + self.upper.len();
        for (k, &(var, _)) in self.lower.iter().enumerate() {
            duals_lower[var] = z[off + k];
        }
        (duals_in, duals_lower, duals_upper)
    }
}

fn data_scale(p: &QpProblem) -> f64 {
    let mut s = 1.0f64;
    for v in p.q_mat.iter().chain(p.lin.iter()) {
        s = s.max(v.abs());
    }
    for v in p.b_eq.iter().chain(p.b_in.iter()) {
        s = s.max(v.abs());
    }
    for v in p.lower.iter().chain(p.upper.iter()) {
        if v.is_finite() {
            s = s.max(v.abs());
        }
    }
    s
}

/// Factorization wrapper with escalating diagonal regularization so the
/// reduced Newton saddle system is always solvable.
fn solve_saddle(
    h_block: &DMatrix<f64>,
    a_eq: &DMatrix<f64>,
    rhs: &DVector<f64>,
    scale: f64,
) -> Result<DVector<f64>, QpError> {
    let n = h_block.nrows();
    let p = a_eq.nrows();
    let dim = n + p;
    let mut m = DMatrix::zeros(dim, dim);
    m.view_mut((0, 0), (n, n)).copy_from(h_block);
    if p > 0 {
        m.view_mut((0, n), (n, p)).copy_from(&a_eq.transpose());
        m.view_mut((n, 0), (p, n)).copy_from(a_eq);
    }
    let mut reg = 0.0;
    for _ in 0..4 {
        let mut mm = m.clone();
        for i in 0..n {
            mm[(i, i)] += reg;
        }
        for i in n..dim {
            mm[(i, i)] -= reg;
        }
        if let Some(lu) = mm.clone().lu().solve(rhs).map(|sol| {
            // One step of iterative refinement against the regularized matrix.
            let resid = rhs - &mm * &sol;
            match mm.clone().lu().solve(&resid) {
                Some(corr) => sol + corr,
                None => sol,
            }
        }) {
            if lu.iter().all(|v| v.is_finite()) {
                return Ok(lu);
            }
        }
        reg = if reg == 0.0 { 1e-12 * scale } else { reg * 100.0 };
    }
    Err(QpError::Numerical("Newton system factorization failed"))
}

fn solution(
    p: &QpProblem,
    ineq: &IneqSystem,
    x: DVector<f64>,
    y: DVector<f64>,
    z: &DVector<f64>,
    status: QpStatus,
    iterations: usize,
    certificate: Option<f64>,
) -> QpSolution {
    let (duals_in, duals_lower, duals_upper) = ineq.split_duals(p, z);
    let objective = p.objective(&x);
    QpSolution {
        x,
        duals_eq: y,
        duals_in,
        duals_lower,
        duals_upper,
        objective,
        status,
        iterations,
        certificate,
    }
}

fn solve_validated(p: &QpProblem, tol: f64, allow_phase1: bool) -> Result<QpSolution, QpError> {
    let n = p.n_vars();
    let n_eq = p.a_eq.nrows();
    let ineq = IneqSystem::build(p);
    let m = ineq.rows();
    let scale = data_scale(p);

    if m == 0 {
        return solve_equality_only(p, tol, scale);
    }

    let h = ineq.h(p);

    // Starting point: a regularized equality solve for x, unit slacks where
    // the inequalities start violated.
    let mut x = {
        let mut hb = p.q_mat.clone();
        for i in 0..n {
            hb[(i, i)] += 1.0;
        }
        let mut rhs = DVector::zeros(n + n_eq);
        rhs.rows_mut(0, n).copy_from(&(-&p.lin));
        if n_eq > 0 {
            rhs.rows_mut(n, n_eq).copy_from(&p.b_eq);
        }
        match solve_saddle(&hb, &p.a_eq, &rhs, scale) {
            Ok(sol) => DVector::from_fn(n, |i, _| sol[i]),
            Err(_) => DVector::zeros(n),
        }
    };
    if !x.iter().all(|v| v.is_finite()) {
        x = DVector::zeros(n);
    }
    let gx = ineq.g_mul(p, &x);
    let mut s = DVector::from_fn(m, |i, _| (h[i] - gx[i]).max(1.0));
    let mut z = DVector::from_element(m, 1.0);
    let mut y = DVector::zeros(n_eq);

    // Once the tolerance is met we keep polishing for a few iterations: at a
    // degenerate boundary optimum a variable sits at sqrt(mu/curvature), so
    // pushing complementarity well below `tol` sharpens active-set variables
    // toward their bounds. The best tolerable iterate is kept and returned.
    let mut accepted: Option<(DVector<f64>, DVector<f64>, DVector<f64>, usize, f64)> = None;
    let mut polish_left = 30usize;
    let mut mu_history: Vec<f64> = Vec::with_capacity(MAX_ITERATIONS);

    let mut iterations = 0;
    for iter in 0..MAX_ITERATIONS {
        iterations = iter;
        // Residuals.
        let gx = ineq.g_mul(p, &x);
        let mut rd = &p.q_mat * &x + &p.lin + ineq.gt_mul(p, &z);
        if n_eq > 0 {
            rd += p.a_eq.transpose() * &y;
        }
        let rp = if n_eq > 0 {
            &p.a_eq * &x - &p.b_eq
        } else {
            DVector::zeros(0)
        };
        let ri = &gx + &s - &h;
        let comp = (0..m).fold(0.0f64, |acc, i| acc.max((s[i] * z[i]).abs()));
        let resid = rd
            .amax()
            .max(if n_eq > 0 { rp.amax() } else { 0.0 })
            .max(ri.amax());

        if resid <= tol && comp <= tol {
            match &accepted {
                Some((_, _, _, _, best_comp)) if *best_comp <= comp => {}
                _ => accepted = Some((x.clone(), y.clone(), z.clone(), iter, comp)),
            }
            if comp <= 1e-5 * tol || polish_left == 0 {
                break;
            }
            polish_left -= 1;
        } else if let Some((bx, by, bz, biter, _)) = &accepted {
            // A polish step made things worse; return the saved iterate.
            let (bx, by, bz, biter) = (bx.clone(), by.clone(), bz.clone(), *biter);
            return Ok(solution(p, &ineq, bx, by, &bz, QpStatus::Optimal, biter, None));
        }
        if x.amax() > 1e10 * scale {
            return Ok(solution(
                p,
                &ineq,
                x,
                y,
                &z,
                QpStatus::Unbounded,
                iter,
                None,
            ));
        }
        if z.amax().max(if n_eq > 0 { y.amax() } else { 0.0 }) > 1e13 * scale {
            break; // dual blow-up: almost surely primal infeasible
        }

        let mu = s.dot(&z) / m as f64;

        // Reduced Newton matrix Q + G' diag(z/s) G, shared by both solves.
        // The scaling is capped so near-zero slacks late in the polish phase
        // cannot poison the factorization.
        let d = DVector::from_fn(m, |i, _| {
            let di = z[i] / s[i];
            if di.is_finite() && di >= 0.0 {
                di.min(1e16)
            } else {
                1e16
            }
        });
        let mut h_block = p.q_mat.clone();
        ineq.add_gtdg(p, &d, &mut h_block);

        let newton = |rs: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>), QpError> {
            let tmp = DVector::from_fn(m, |i, _| {
                let t = (z[i] * ri[i] - rs[i]) / s[i];
                if t.is_finite() {
                    t
                } else {
                    0.0
                }
            });
            let mut rhs = DVector::zeros(n + n_eq);
            rhs.rows_mut(0, n).copy_from(&(-&rd - ineq.gt_mul(p, &tmp)));
            if n_eq > 0 {
                rhs.rows_mut(n, n_eq).copy_from(&(-&rp));
            }
            let sol = solve_saddle(&h_block, &p.a_eq, &rhs, scale)?;
            let dx = DVector::from_fn(n, |i, _| sol[i]);
            let dy = DVector::from_fn(n_eq, |i, _| sol[n + i]);
            Ok((dx, dy))
        };

        // Affine (predictor) direction. If the linear algebra gives out after
        // an iterate has already met the tolerance, return that iterate.
        let rs_aff = DVector::from_fn(m, |i, _| s[i] * z[i]);
        let (dx_a, _) = match newton(&rs_aff) {
            Ok(d) => d,
            Err(e) => {
                if let Some((bx, by, bz, biter, _)) = accepted {
                    return Ok(solution(p, &ineq, bx, by, &bz, QpStatus::Optimal, biter, None));
                }
                return Err(e);
            }
        };
        let gdx_a = ineq.g_mul(p, &dx_a);
        let ds_a = -&ri - &gdx_a;
        let dz_a = DVector::from_fn(m, |i, _| (z[i] * (gdx_a[i] + ri[i]) - rs_aff[i]) / s[i]);

        let alpha_aff = max_step(&s, &ds_a, 1.0).min(max_step(&z, &dz_a, 1.0));
        let mu_aff = (0..m)
            .map(|i| (s[i] + alpha_aff * ds_a[i]) * (z[i] + alpha_aff * dz_a[i]))
            .sum::<f64>()
            / m as f64;
        let mut sigma = if mu > 0.0 {
            (mu_aff / mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };

        // Corrector direction. The second-order term is weighted by the
        // affine step length squared: with short steps it is unreliable and
        // unweighted use makes μ cycle instead of decrease. If μ has made no
        // real progress over a window, drop the corrector entirely and take a
        // heavily centered step.
        let mut corrector_weight = alpha_aff * alpha_aff;
        mu_history.push(mu);
        if mu_history.len() >= 12 && mu >= 0.9 * mu_history[mu_history.len() - 12] {
            sigma = sigma.max(0.5);
            corrector_weight = 0.0;
        }
        let rs = DVector::from_fn(m, |i, _| {
            s[i] * z[i] - sigma * mu + corrector_weight * ds_a[i] * dz_a[i]
        });
        let (dx, dy) = match newton(&rs) {
            Ok(d) => d,
            Err(e) => {
                if let Some((bx, by, bz, biter, _)) = accepted {
                    return Ok(solution(p, &ineq, bx, by, &bz, QpStatus::Optimal, biter, None));
                }
                return Err(e);
            }
        };
        let gdx = ineq.g_mul(p, &dx);
        let ds = -&ri - &gdx;
        let dz = DVector::from_fn(m, |i, _| (z[i] * (gdx[i] + ri[i]) - rs[i]) / s[i]);

        // A single common step length for primal and dual avoids the μ
        // oscillation that separate steps can fall into on infeasible starts.
        let eta = 0.995;
        let alpha = max_step(&s, &ds, eta)
            .min(max_step(&z, &dz, eta))
            .min(1.0);
        x += alpha * &dx;
        s += alpha * &ds;
        y += alpha * &dy;
        z += alpha * &dz;
    }

    if let Some((bx, by, bz, biter, _)) = accepted {
        return Ok(solution(p, &ineq, bx, by, &bz, QpStatus::Optimal, biter, None));
    }

    // No convergence: decide between infeasible and plain iteration cap via an
    // always-feasible relaxation that measures the least possible violation.
    if allow_phase1 {
        let cert = phase1_violation(p, tol)?;
        if cert > (10.0 * tol).max(1e-7 * scale) {
            return Ok(solution(
                p,
                &ineq,
                x,
                y,
                &z,
                QpStatus::Infeasible,
                iterations,
                Some(cert),
            ));
        }
    }
    Ok(solution(
        p,
        &ineq,
        x,
        y,
        &z,
        QpStatus::MaxIter,
        iterations,
        None,
    ))
}

/// Largest `alpha ∈ (0, 1]` with `v + alpha·eta_adjusted·dv ≥ 0`.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>, eta: f64) -> f64 {
    let mut alpha = 1.0f64;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    (eta * alpha).min(1.0)
}

/// No inequalities at all: the KKT conditions are one linear system.
fn solve_equality_only(p: &QpProblem, tol: f64, scale: f64) -> Result<QpSolution, QpError> {
    let n = p.n_vars();
    let n_eq = p.a_eq.nrows();
    let dim = n + n_eq;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.q_mat);
    if n_eq > 0 {
        kkt.view_mut((0, n), (n, n_eq))
            .copy_from(&p.a_eq.transpose());
        kkt.view_mut((n, 0), (n_eq, n)).copy_from(&p.a_eq);
    }
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&p.lin));
    if n_eq > 0 {
        rhs.rows_mut(n, n_eq).copy_from(&p.b_eq);
    }

    let sol = match kkt.clone().lu().solve(&rhs) {
        Some(sol) if sol.iter().all(|v| v.is_finite()) => sol,
        _ => kkt
            .clone()
            .svd(true, true)
            .solve(&rhs, 1e-13 * scale)
            .map_err(|_| QpError::Numerical("SVD failed"))?,
    };
    let x = DVector::from_fn(n, |i, _| sol[i]);
    let y = DVector::from_fn(n_eq, |i, _| sol[n + i]);

    let eq_resid = if n_eq > 0 {
        (&p.a_eq * &x - &p.b_eq).amax()
    } else {
        0.0
    };
    let stat_resid = {
        let mut g = &p.q_mat * &x + &p.lin;
        if n_eq > 0 {
            g += p.a_eq.transpose() * &y;
        }
        g.amax()
    };
    let status = if eq_resid > tol.max(1e-9 * scale) {
        QpStatus::Infeasible
    } else if stat_resid > tol.max(1e-9 * scale) {
        QpStatus::Unbounded
    } else {
        QpStatus::Optimal
    };
    let certificate = (status == QpStatus::Infeasible).then_some(eq_resid);
    let ineq = IneqSystem::build(p);
    let z = DVector::zeros(0);
    Ok(solution(p, &ineq, x, y, &z, status, 1, certificate))
}

/// Minimum achievable max-norm violation of the equality and general
/// inequality rows, with bounds kept hard (bounds alone are always
/// satisfiable once validated). Solved as an always-feasible convex QP over
/// `(x, t, w)`: minimize `1/2(|t|² + |w|²)` with `A_eq x − t = b_eq` and
/// `A_in x − w ≤ b_in`, `w ≥ 0`.
fn phase1_violation(p: &QpProblem, tol: f64) -> Result<f64, QpError> {
    let n = p.n_vars();
    let n_eq = p.a_eq.nrows();
    let m_in = p.a_in.nrows();
    if n_eq == 0 && m_in == 0 {
        return Ok(0.0);
    }
    let nv = n + n_eq + m_in;
    let mut aux = QpProblem::new(nv);
    for i in 0..(n_eq + m_in) {
        aux.q_mat[(n + i, n + i)] = 1.0;
    }
    for i in 0..n {
        aux.lower[i] = p.lower[i];
        aux.upper[i] = p.upper[i];
    }
    for i in 0..m_in {
        aux.lower[n + n_eq + i] = 0.0;
    }
    if n_eq > 0 {
        let mut a = DMatrix::zeros(n_eq, nv);
        a.view_mut((0, 0), (n_eq, n)).copy_from(&p.a_eq);
        for i in 0..n_eq {
            a[(i, n + i)] = -1.0;
        }
        aux.a_eq = a;
        aux.b_eq = p.b_eq.clone();
    }
    if m_in > 0 {
        let mut a = DMatrix::zeros(m_in, nv);
        a.view_mut((0, 0), (m_in, n)).copy_from(&p.a_in);
        for i in 0..m_in {
            a[(i, n + n_eq + i)] = -1.0;
        }
        aux.a_in = a;
        aux.b_in = p.b_in.clone();
    }
    let sol = solve_validated(&aux, tol.max(1e-9), false)?;
    let mut violation = 0.0f64;
    for i in 0..(n_eq + m_in) {
        violation = violation.max(sol.x[n + i].abs());
    }
    Ok(violation)
}
