//! Entropic optimal transport between discrete measures.
//!
//! The solver runs Sinkhorn iterations entirely in the log domain, so small
//! regularization strengths (down to `1e-3` on unit-scale costs) are handled
//! without over/underflow. Costs are squared Euclidean distances throughout.
//!
//! Conventions:
//! - the regularized problem is `min_P <P, C> + eps * sum_ij P_ij log P_ij`
//!   over couplings `P` with uniform marginals `1/n` and `1/m`;
//! - `transport_cost` is `<P, C>` at the converged coupling and
//!   `entropic_cost` is the full primal objective at the same coupling;
//! - the debiased divergence subtracts the two self-transport terms, which
//!   cancels the additive constant separating this convention from the
//!   relative-entropy one, so the value agrees with the usual Sinkhorn
//!   divergence.

use ndarray::{Array1, Array2};

use crate::measure::DiscreteMeasure;
use crate::{Error, Result};

/// Default regularization strength.
pub const DEFAULT_EPSILON: f64 = 0.1;
/// Default Sinkhorn iteration cap.
pub const DEFAULT_MAX_ITER: usize = 2000;
/// Default convergence tolerance on the worst marginal violation.
pub const DEFAULT_TOL: f64 = 1e-6;

/// How often the (relatively costly) marginal check runs.
const CHECK_EVERY: usize = 5;

/// Iterations spent per warm-start level during epsilon scaling.
const WARM_ITERS: usize = 10;

/// Warm-start schedule: geometric ladder from a quarter of the cost range
/// down to the requested epsilon. Small regularization on a wide cost range
/// makes plain Sinkhorn stall; a handful of iterations at progressively
/// smaller epsilon hands the final phase near-converged potentials.
fn epsilon_ladder(c: &Array2<f64>, epsilon: f64) -> Vec<f64> {
    let c_max = c.iter().fold(0.0f64, |a, &v| a.max(v));
    let mut ladder = Vec::new();
    let mut level = c_max * 0.25;
    while level > epsilon * 2.0 {
        ladder.push(level);
        level *= 0.5;
    }
    ladder
}

/// Solver settings shared by everything that runs Sinkhorn internally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Entropic regularization strength, strictly positive.
    pub epsilon: f64,
    /// Iteration cap.
    pub max_iter: usize,
    /// Convergence tolerance: largest absolute deviation of a row or column
    /// sum of the coupling from its target marginal.
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

impl SolverConfig {
    /// Config with the given `epsilon` and default iteration cap/tolerance.
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid(format!(
                "epsilon must be finite and positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::invalid(format!(
                "tolerance must be finite and positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Converged (or best-effort) state of a Sinkhorn solve.
#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    /// `<P, C>` at the final coupling.
    pub transport_cost: f64,
    /// `<P, C> + eps * sum P log P` at the final coupling.
    pub entropic_cost: f64,
    /// Dual potential on the source points.
    pub potential_f: Array1<f64>,
    /// Dual potential on the target points.
    pub potential_g: Array1<f64>,
    /// `log P`, kept in the log domain; `P_ij = exp(log_coupling[(i, j)])`.
    pub log_coupling: Array2<f64>,
    /// Iterations actually run.
    pub iterations: usize,
    /// Worst marginal violation at the last check.
    pub marginal_error: f64,
    /// Whether `marginal_error <= tol` was reached within the iteration cap.
    pub converged: bool,
}

impl SinkhornSolution {
    /// Materializes the coupling matrix `P`.
    pub fn coupling(&self) -> Array2<f64> {
        self.log_coupling.mapv(f64::exp)
    }

    fn require_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                residual: self.marginal_error,
                tolerance: f64::NAN,
            })
        }
    }
}

/// Pairwise squared Euclidean costs, `C[(i, j)] = |x_i - y_j|^2`.
///
/// Fails when the two measures live in different ambient dimensions.
pub fn cost_matrix(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<Array2<f64>> {
    if mu.dim() != nu.dim() {
        return Err(Error::shape(format!(
            "cost matrix needs equal point dimensions, got {} and {}",
            mu.dim(),
            nu.dim()
        )));
    }
    let x = mu.points();
    let y = nu.points();
    let (n, m, d) = (x.nrows(), y.nrows(), x.ncols());
    let mut c = Array2::<f64>::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for k in 0..d {
                let diff = x[[i, k]] - y[[j, k]];
                acc += diff * diff;
            }
            c[[i, j]] = acc;
        }
    }
    Ok(c)
}

/// Solves entropic OT between `mu` and `nu` with uniform weights.
///
/// Runs log-domain Sinkhorn until the worst marginal violation drops to
/// `tol` or `max_iter` is reached. Non-convergence is not an error: the
/// best-effort solution is returned with `converged == false` and the caller
/// decides whether that is acceptable.
pub fn sinkhorn(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SinkhornSolution> {
    sinkhorn_with(
        mu,
        nu,
        &SolverConfig {
            epsilon,
            max_iter,
            tol,
        },
    )
}

/// [`sinkhorn`] with settings bundled in a [`SolverConfig`].
pub fn sinkhorn_with(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cfg: &SolverConfig,
) -> Result<SinkhornSolution> {
    cfg.validate()?;
    let c = cost_matrix(mu, nu)?;
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("cost matrix has non-finite entries"));
    }
    if mu.points() == nu.points() {
        sinkhorn_symmetric(&c, mu.len(), cfg)
    } else {
        sinkhorn_general(&c, mu.len(), nu.len(), cfg)
    }
}

/// One full alternating dual update at the given regularization.
///
/// `f_i <- eps * (log a_i - LSE_j((g_j - C_ij) / eps))`, then the mirrored
/// update for `g`. The column pass is accumulated during row-major sweeps to
/// stay cache friendly.
fn general_update(
    c: &Array2<f64>,
    f: &mut [f64],
    g: &mut [f64],
    eps: f64,
    log_a: f64,
    log_b: f64,
) {
    let (n, m) = c.dim();
    let inv_eps = 1.0 / eps;
    for i in 0..n {
        let row = c.row(i);
        let row = row.as_slice().expect("row-major cost matrix");
        let mut hi = f64::NEG_INFINITY;
        for j in 0..m {
            let v = (g[j] - row[j]) * inv_eps;
            if v > hi {
                hi = v;
            }
        }
        let mut sum = 0.0;
        for j in 0..m {
            sum += ((g[j] - row[j]) * inv_eps - hi).exp();
        }
        f[i] = eps * (log_a - (hi + sum.ln()));
    }
    let mut col_hi = vec![f64::NEG_INFINITY; m];
    for i in 0..n {
        let row = c.row(i);
        let row = row.as_slice().expect("row-major cost matrix");
        let fi = f[i];
        for j in 0..m {
            let v = (fi - row[j]) * inv_eps;
            if v > col_hi[j] {
                col_hi[j] = v;
            }
        }
    }
    let mut col_sum = vec![0.0f64; m];
    for i in 0..n {
        let row = c.row(i);
        let row = row.as_slice().expect("row-major cost matrix");
        let fi = f[i];
        for j in 0..m {
            col_sum[j] += ((fi - row[j]) * inv_eps - col_hi[j]).exp();
        }
    }
    for j in 0..m {
        g[j] = eps * (log_b - (col_hi[j] + col_sum[j].ln()));
    }
}

/// Standard alternating dual updates with an epsilon-scaling warm start.
fn sinkhorn_general(
    c: &Array2<f64>,
    n: usize,
    m: usize,
    cfg: &SolverConfig,
) -> Result<SinkhornSolution> {
    let eps = cfg.epsilon;
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();

    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; m];
    let mut iterations = 0;
    let mut marginal_error = f64::INFINITY;
    let mut converged = false;

    for warm_eps in epsilon_ladder(c, eps) {
        for _ in 0..WARM_ITERS {
            general_update(c, &mut f, &mut g, warm_eps, log_a, log_b);
            iterations += 1;
        }
    }

    for iter in 0..cfg.max_iter {
        general_update(c, &mut f, &mut g, eps, log_a, log_b);
        iterations += 1;
        if (iter + 1) % CHECK_EVERY == 0 || iter + 1 == cfg.max_iter {
            marginal_error = marginal_violation(c, &f, &g, 1.0 / eps, log_a, log_b);
            if marginal_error <= cfg.tol {
                converged = true;
                break;
            }
        }
    }

    Ok(finish_solution(
        c,
        Array1::from(f),
        Array1::from(g),
        eps,
        iterations,
        marginal_error,
        converged,
    ))
}

/// Fixed-point iteration for the case `mu == nu` bit for bit: a single
/// potential with averaged updates, which converges faster and keeps the
/// self-transport terms of the debiased divergence on one deterministic
/// path.
fn sinkhorn_symmetric(c: &Array2<f64>, n: usize, cfg: &SolverConfig) -> Result<SinkhornSolution> {
    let eps = cfg.epsilon;
    let log_a = -(n as f64).ln();

    fn averaged_update(c: &Array2<f64>, f: &mut [f64], fresh: &mut [f64], eps: f64, log_a: f64) {
        let n = f.len();
        let inv_eps = 1.0 / eps;
        for i in 0..n {
            let row = c.row(i);
            let row = row.as_slice().expect("row-major cost matrix");
            let mut hi = f64::NEG_INFINITY;
            for j in 0..n {
                let v = (f[j] - row[j]) * inv_eps;
                if v > hi {
                    hi = v;
                }
            }
            let mut sum = 0.0;
            for j in 0..n {
                sum += ((f[j] - row[j]) * inv_eps - hi).exp();
            }
            fresh[i] = eps * (log_a - (hi + sum.ln()));
        }
        for i in 0..n {
            f[i] = 0.5 * (f[i] + fresh[i]);
        }
    }

    let mut f = vec![0.0f64; n];
    let mut fresh = vec![0.0f64; n];
    let mut iterations = 0;
    let mut marginal_error = f64::INFINITY;
    let mut converged = false;

    for warm_eps in epsilon_ladder(c, eps) {
        for _ in 0..WARM_ITERS {
            averaged_update(c, &mut f, &mut fresh, warm_eps, log_a);
            iterations += 1;
        }
    }

    for iter in 0..cfg.max_iter {
        averaged_update(c, &mut f, &mut fresh, eps, log_a);
        iterations += 1;
        if (iter + 1) % CHECK_EVERY == 0 || iter + 1 == cfg.max_iter {
            marginal_error = marginal_violation(c, &f, &f, 1.0 / eps, log_a, log_a);
            if marginal_error <= cfg.tol {
                converged = true;
                break;
            }
        }
    }

    let f = Array1::from(f);
    Ok(finish_solution(
        c,
        f.clone(),
        f,
        eps,
        iterations,
        marginal_error,
        converged,
    ))
}

/// Worst deviation of a coupling row/column sum from its target marginal.
fn marginal_violation(
    c: &Array2<f64>,
    f: &[f64],
    g: &[f64],
    inv_eps: f64,
    log_a: f64,
    log_b: f64,
) -> f64 {
    let (n, m) = c.dim();
    let a = log_a.exp();
    let b = log_b.exp();
    let mut col = vec![0.0f64; m];
    let mut worst = 0.0f64;
    for i in 0..n {
        let row = c.row(i);
        let row = row.as_slice().expect("row-major cost matrix");
        let fi = f[i];
        let mut row_sum = 0.0;
        for j in 0..m {
            let p = ((fi + g[j] - row[j]) * inv_eps).exp();
            row_sum += p;
            col[j] += p;
        }
        let dev = (row_sum - a).abs();
        if dev > worst {
            worst = dev;
        }
    }
    for cj in col {
        let dev = (cj - b).abs();
        if dev > worst {
            worst = dev;
        }
    }
    worst
}

fn finish_solution(
    c: &Array2<f64>,
    f: Array1<f64>,
    g: Array1<f64>,
    eps: f64,
    iterations: usize,
    marginal_error: f64,
    converged: bool,
) -> SinkhornSolution {
    let (n, m) = c.dim();
    let inv_eps = 1.0 / eps;
    let mut log_coupling = Array2::<f64>::zeros((n, m));
    let mut transport_cost = 0.0;
    let mut neg_entropy = 0.0;
    for i in 0..n {
        for j in 0..m {
            let lp = (f[i] + g[j] - c[[i, j]]) * inv_eps;
            log_coupling[[i, j]] = lp;
            let p = lp.exp();
            transport_cost += p * c[[i, j]];
            neg_entropy += p * lp;
        }
    }
    SinkhornSolution {
        transport_cost,
        entropic_cost: transport_cost + eps * neg_entropy,
        potential_f: f,
        potential_g: g,
        log_coupling,
        iterations,
        marginal_error,
        converged,
    }
}

/// Debiased Sinkhorn divergence
/// `W(mu, nu) - (W(mu, mu) + W(nu, nu)) / 2` on the entropic cost.
///
/// Zero when `mu == nu` (the three terms share one deterministic solve) and
/// positive for distinct measures. Fails if any inner solve does not
/// converge, since a divergence built on unconverged potentials is not
/// trustworthy.
pub fn sinkhorn_divergence(mu: &DiscreteMeasure, nu: &DiscreteMeasure, epsilon: f64) -> Result<f64> {
    sinkhorn_divergence_with(mu, nu, &SolverConfig::with_epsilon(epsilon))
}

/// [`sinkhorn_divergence`] with explicit solver settings.
pub fn sinkhorn_divergence_with(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cfg: &SolverConfig,
) -> Result<f64> {
    let cross = converged_solve(mu, nu, cfg)?;
    let self_mu = converged_solve(mu, mu, cfg)?;
    let self_nu = converged_solve(nu, nu, cfg)?;
    Ok(cross.entropic_cost - 0.5 * (self_mu.entropic_cost + self_nu.entropic_cost))
}

/// Divergence value together with its gradient with respect to the source
/// support points.
#[derive(Debug, Clone)]
pub struct DivergenceEval {
    /// The debiased divergence.
    pub value: f64,
    /// `d value / d x_i`, one row per source point.
    pub grad_mu: Array2<f64>,
}

/// Value and analytic gradient of the debiased divergence with respect to
/// the positions of `mu`'s support points.
///
/// At a converged coupling the potentials are stationary, so the gradient
/// reduces to the coupling-weighted derivative of the cost:
/// `2 * sum_j P_ij (x_i - y_j)` for the cross term, and both occurrences of
/// `x` contribute for the self term.
pub fn divergence_gradient(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    epsilon: f64,
) -> Result<DivergenceEval> {
    divergence_gradient_with(mu, nu, &SolverConfig::with_epsilon(epsilon))
}

/// [`divergence_gradient`] with explicit solver settings.
pub fn divergence_gradient_with(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cfg: &SolverConfig,
) -> Result<DivergenceEval> {
    let cross = converged_solve(mu, nu, cfg)?;
    let self_mu = converged_solve(mu, mu, cfg)?;
    let self_nu = converged_solve(nu, nu, cfg)?;
    let value =
        cross.entropic_cost - 0.5 * (self_mu.entropic_cost + self_nu.entropic_cost);

    let x = mu.points();
    let y = nu.points();
    let p_cross = cross.coupling();
    // 2 * (rowsum(P) * x_i - (P y)_i)
    let row_mass = p_cross.sum_axis(ndarray::Axis(1));
    let mut grad = x * &row_mass.insert_axis(ndarray::Axis(1));
    grad -= &p_cross.dot(y);
    grad *= 2.0;

    // Self term: x enters as both marginals, so both P_ij and P_ji weight
    // the difference (x_i - x_j); the 1/2 debias factor cancels the 2 from
    // the squared cost derivative.
    let p_self = self_mu.coupling();
    let s = &p_self + &p_self.t();
    let s_mass = s.sum_axis(ndarray::Axis(1));
    let mut self_grad = x * &s_mass.insert_axis(ndarray::Axis(1));
    self_grad -= &s.dot(x);
    grad -= &self_grad;

    Ok(DivergenceEval {
        value,
        grad_mu: grad,
    })
}

/// Gradient of the plain (non-debiased) entropic cost `W(mu, nu)` with
/// respect to the positions of `nu`'s support points:
/// `2 * sum_i P_ij (y_j - x_i)`.
pub(crate) fn entropic_cost_grad_nu(
    solution: &SinkhornSolution,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Array2<f64> {
    let x = mu.points();
    let y = nu.points();
    let p = solution.coupling();
    let col_mass = p.sum_axis(ndarray::Axis(0));
    let mut grad = y * &col_mass.insert_axis(ndarray::Axis(1));
    grad -= &p.t().dot(x);
    grad * 2.0
}

pub(crate) fn converged_solve(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cfg: &SolverConfig,
) -> Result<SinkhornSolution> {
    let solution = sinkhorn_with(mu, nu, cfg)?;
    solution.require_converged().map_err(|_| Error::NotConverged {
        iterations: solution.iterations,
        residual: solution.marginal_error,
        tolerance: cfg.tol,
    })?;
    Ok(solution)
}

/// Exact OT cost between equal-size measures by enumerating all matchings.
///
/// With uniform weights and `n == m` the unregularized optimum is attained
/// at a permutation, so brute force over `n!` matchings is exact. Capped at
/// `n <= 8` to keep the enumeration honest about its cost. Intended as a
/// reference for tests, not as a production path.
pub fn exact_ot_oracle(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    let n = mu.len();
    if nu.len() != n {
        return Err(Error::invalid(
            "exact oracle needs equal point counts (permutation couplings)",
        ));
    }
    if n > 8 {
        return Err(Error::invalid("exact oracle is capped at 8 points"));
    }
    let c = cost_matrix(mu, nu)?;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm, iterative form.
    let mut stack = vec![0usize; n];
    let cost_of = |perm: &[usize]| -> f64 { perm.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum() };
    best = best.min(cost_of(&perm));
    let mut i = 1;
    while i < n {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            best = best.min(cost_of(&perm));
            stack[i] += 1;
            i = 1;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    Ok(best / n as f64)
}
