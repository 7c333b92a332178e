//! Fermi-Dirac entropy minimization through its concave dual.
//!
//! For bounds `a_j < b_j` with width `D_j = b_j - a_j` the primal objective is
//!
//! ```text
//! Psi(x) = sum_j u_j ln u_j + v_j ln v_j,   u_j = (x_j - a_j) / D_j,  v_j = 1 - u_j
//! ```
//!
//! and its conjugate is `M(tau) = sum_j ln(exp(a_j tau_j) + exp(b_j tau_j))`.
//! The multipliers maximize `Sigma(lambda) = <lambda, y> - M(A^t lambda)`,
//! whose gradient is `y - A x(lambda)` with the primal map
//! `x_j = a_j + D_j * sigmoid(D_j tau_j)`, `tau = A^t lambda`. At the
//! maximizer `Sigma = Psi(x*)`, and the gradient norm is the reconstruction
//! error `||A x* - y||`.
//!
//! Unknowns with `a_j = b_j` are fixed at `a_j`: their columns are moved to
//! the right-hand side and their entropy and conjugate terms are dropped.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assembly::{BoxConstraints, LinearSystem};
use crate::error::{CtmError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stop once `||grad Sigma||_2` falls to this value.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Starting multipliers; zeros when absent.
    pub initial_lambda: Option<Vec<f64>>,
    /// Step length of the first iteration.
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    /// Used whenever the two-point ratio is not a finite positive number.
    pub fallback_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            max_iterations: 200_000,
            initial_lambda: None,
            initial_step: 1e-2,
            min_step: 1e-8,
            max_step: 1e8,
            fallback_step: 1e-2,
        }
    }
}

impl SolverConfig {
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.tolerance.is_finite()
            && self.tolerance > 0.0
            && self.min_step > 0.0
            && self.min_step <= self.initial_step
            && self.initial_step <= self.max_step
            && self.max_step.is_finite()
            && self.fallback_step.is_finite()
            && self.fallback_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(CtmError::Input(format!(
                "invalid solver configuration {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub lambda_star: DVector<f64>,
    /// Recovered unknowns, row-major over `Q`.
    pub x_star: DVector<f64>,
    /// `||grad Sigma(lambda*)||`, equal to `||A x* - y||`.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub dual_value: f64,
    /// `Psi(x*)` evaluated from the multipliers, so saturated coordinates
    /// (`x_j` rounding onto a bound) still contribute their exact value.
    pub entropy_value: f64,
    pub converged: bool,
}

/// Pinned unknowns substituted out of a [`LinearSystem`].
struct Reduced {
    a: DMatrix<f64>,
    y: DVector<f64>,
    lower: Vec<f64>,
    width: Vec<f64>,
    free: Vec<usize>,
    /// Full-length unknown vector holding the pinned values, zero elsewhere.
    base_x: DVector<f64>,
}

impl Reduced {
    fn new(system: &LinearSystem) -> Result<Self> {
        let n = system.num_unknowns();
        let bounds = &system.bounds;
        if bounds.len() != n {
            return Err(CtmError::Dimension {
                expected: n,
                actual: bounds.len(),
                context: "box constraints vs. unknowns",
            });
        }
        if system.y.len() != system.num_equations() {
            return Err(CtmError::Dimension {
                expected: system.num_equations(),
                actual: system.y.len(),
                context: "data vector vs. equations",
            });
        }
        if system
            .a_matrix
            .iter()
            .chain(system.y.iter())
            .any(|v| !v.is_finite())
        {
            return Err(CtmError::Input("non-finite value in linear system".into()));
        }
        let free = bounds.free();
        let mut base_x = DVector::zeros(n);
        for j in bounds.pinned() {
            base_x[j] = bounds.lower()[j];
        }
        let y = &system.y - &system.a_matrix * &base_x;
        let a = system.a_matrix.select_columns(free.iter());
        Ok(Self {
            a,
            y,
            lower: free.iter().map(|&j| bounds.lower()[j]).collect(),
            width: free
                .iter()
                .map(|&j| bounds.upper()[j] - bounds.lower()[j])
                .collect(),
            free,
            base_x,
        })
    }

    fn check_lambda(&self, lambda: &DVector<f64>) -> Result<()> {
        if lambda.len() != self.a.nrows() {
            return Err(CtmError::Dimension {
                expected: self.a.nrows(),
                actual: lambda.len(),
                context: "multiplier vector",
            });
        }
        Ok(())
    }

    fn tau(&self, lambda: &DVector<f64>, tau: &mut DVector<f64>) {
        tau.gemv_tr(1.0, &self.a, lambda, 0.0);
    }

    fn primal(&self, tau: &DVector<f64>, x: &mut DVector<f64>) {
        for (k, t) in tau.iter().enumerate() {
            x[k] = self.lower[k] + self.width[k] * sigmoid(self.width[k] * t);
        }
    }

    fn conjugate(&self, tau: &DVector<f64>) -> f64 {
        tau.iter()
            .enumerate()
            .map(|(k, &t)| log_add_exp(self.lower[k] * t, (self.lower[k] + self.width[k]) * t))
            .sum()
    }

    fn objective(&self, lambda: &DVector<f64>, tau: &DVector<f64>) -> f64 {
        lambda.dot(&self.y) - self.conjugate(tau)
    }

    /// `y - A x`, written into `g`.
    fn gradient(&self, x: &DVector<f64>, g: &mut DVector<f64>) {
        g.copy_from(&self.y);
        g.gemv(-1.0, &self.a, x, 1.0);
    }

    fn entropy_at(&self, tau: &DVector<f64>) -> f64 {
        tau.iter()
            .enumerate()
            .map(|(k, &t)| {
                let z = self.width[k] * t;
                xlogx(sigmoid(z)) + xlogx(sigmoid(-z))
            })
            .sum()
    }

    fn expand(&self, x_free: &DVector<f64>) -> DVector<f64> {
        let mut x = self.base_x.clone();
        for (k, &j) in self.free.iter().enumerate() {
            x[j] = x_free[k];
        }
        x
    }
}

/// Logistic function without overflow for large `|z|`.
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(exp(p) + exp(q))`.
fn log_add_exp(p: f64, q: f64) -> f64 {
    let hi = p.max(q);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (-(p - q).abs()).exp().ln_1p()
}

fn xlogx(u: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u * u.ln()
    }
}

/// Fermi-Dirac entropy of `x` over the free coordinates of `bounds`.
///
/// Every free coordinate must lie strictly inside its interval and every
/// pinned coordinate must sit at its pin.
pub fn entropy(x: &DVector<f64>, bounds: &BoxConstraints) -> Result<f64> {
    if x.len() != bounds.len() {
        return Err(CtmError::Dimension {
            expected: bounds.len(),
            actual: x.len(),
            context: "entropy argument",
        });
    }
    let mut total = 0.0;
    for (j, &v) in x.iter().enumerate() {
        let (a, b) = (bounds.lower()[j], bounds.upper()[j]);
        if a == b {
            if v != a {
                return Err(CtmError::Domain(format!(
                    "x[{j}] = {v} differs from its pinned value {a}"
                )));
            }
            continue;
        }
        if !(a < v && v < b) {
            return Err(CtmError::Domain(format!(
                "x[{j}] = {v} is not inside ({a}, {b})"
            )));
        }
        let d = b - a;
        let u = (v - a) / d;
        let w = (b - v) / d;
        total += u * u.ln() + w * w.ln();
    }
    Ok(total)
}

/// `M(tau) = sum_j ln(exp(a_j tau_j) + exp(b_j tau_j))` over free coordinates.
pub fn dual_m(tau: &DVector<f64>, bounds: &BoxConstraints) -> Result<f64> {
    if tau.len() != bounds.len() {
        return Err(CtmError::Dimension {
            expected: bounds.len(),
            actual: tau.len(),
            context: "conjugate argument",
        });
    }
    Ok(tau
        .iter()
        .enumerate()
        .filter(|(j, _)| !bounds.is_pinned(*j))
        .map(|(j, &t)| log_add_exp(bounds.lower()[j] * t, bounds.upper()[j] * t))
        .sum())
}

/// `Sigma(y, lambda) = <lambda, y> - M(A^t lambda)`, with pinned unknowns
/// folded into `y`.
pub fn dual_objective(system: &LinearSystem, lambda: &DVector<f64>) -> Result<f64> {
    let reduced = Reduced::new(system)?;
    reduced.check_lambda(lambda)?;
    let mut tau = DVector::zeros(reduced.free.len());
    reduced.tau(lambda, &mut tau);
    Ok(reduced.objective(lambda, &tau))
}

/// `grad Sigma = y - A x(lambda)`.
pub fn dual_gradient(system: &LinearSystem, lambda: &DVector<f64>) -> Result<DVector<f64>> {
    let reduced = Reduced::new(system)?;
    reduced.check_lambda(lambda)?;
    let n = reduced.free.len();
    let mut tau = DVector::zeros(n);
    let mut x = DVector::zeros(n);
    let mut g = DVector::zeros(lambda.len());
    reduced.tau(lambda, &mut tau);
    reduced.primal(&tau, &mut x);
    reduced.gradient(&x, &mut g);
    Ok(g)
}

/// `x_j = (a_j e^{a_j tau_j} + b_j e^{b_j tau_j}) / (e^{a_j tau_j} + e^{b_j tau_j})`
/// with `tau = A^t lambda`; pinned unknowns return their pin.
pub fn primal_from_dual(system: &LinearSystem, lambda: &DVector<f64>) -> Result<DVector<f64>> {
    let reduced = Reduced::new(system)?;
    reduced.check_lambda(lambda)?;
    let n = reduced.free.len();
    let mut tau = DVector::zeros(n);
    let mut x = DVector::zeros(n);
    reduced.tau(lambda, &mut tau);
    reduced.primal(&tau, &mut x);
    Ok(reduced.expand(&x))
}

/// Maximizes the dual with two-point (Barzilai-Borwein) step sizes.
///
/// The step after the first iteration is `-<s, d> / <d, d>` where `s` and `d`
/// are the differences of consecutive multipliers and gradients, clamped to
/// `[min_step, max_step]`. Running out of iterations is not an error: the
/// iterate with the smallest gradient norm is returned with `converged = false`.
pub fn solve(system: &LinearSystem, config: &SolverConfig) -> Result<DualSolution> {
    config.validate()?;
    let reduced = Reduced::new(system)?;
    let rows = reduced.a.nrows();
    let n = reduced.free.len();

    let mut lambda = match &config.initial_lambda {
        Some(v) => {
            let l = DVector::from_column_slice(v);
            reduced.check_lambda(&l)?;
            if l.iter().any(|v| !v.is_finite()) {
                return Err(CtmError::Input("non-finite initial multiplier".into()));
            }
            l
        }
        None => DVector::zeros(rows),
    };

    let mut tau = DVector::zeros(n);
    let mut x = DVector::zeros(n);
    let mut grad = DVector::zeros(rows);
    reduced.tau(&lambda, &mut tau);
    reduced.primal(&tau, &mut x);
    reduced.gradient(&x, &mut grad);
    let mut grad_norm = grad.norm();

    let mut best_lambda = lambda.clone();
    let mut best_norm = grad_norm;
    let mut best_iteration = 0;

    let mut next_lambda = DVector::zeros(rows);
    let mut next_grad = DVector::zeros(rows);
    let mut step = config.initial_step;
    let mut iterations = 0;
    let mut converged = grad_norm <= config.tolerance;

    while !converged && iterations < config.max_iterations {
        next_lambda.copy_from(&lambda);
        next_lambda.axpy(step, &grad, 1.0);
        reduced.tau(&next_lambda, &mut tau);
        reduced.primal(&tau, &mut x);
        reduced.gradient(&x, &mut next_grad);
        iterations += 1;

        let next_norm = next_grad.norm();
        if !next_norm.is_finite() {
            log::warn!("gradient became non-finite at iteration {iterations}");
            break;
        }

        // s = next_lambda - lambda = step * grad, d = next_grad - grad.
        let mut s_dot_d = 0.0;
        let mut d_dot_d = 0.0;
        for k in 0..rows {
            let s = next_lambda[k] - lambda[k];
            let d = next_grad[k] - grad[k];
            s_dot_d += s * d;
            d_dot_d += d * d;
        }
        let ratio = -s_dot_d / d_dot_d;
        step = if ratio.is_finite() && ratio > 0.0 {
            ratio.clamp(config.min_step, config.max_step)
        } else {
            config.fallback_step
        };

        std::mem::swap(&mut lambda, &mut next_lambda);
        std::mem::swap(&mut grad, &mut next_grad);
        grad_norm = next_norm;

        if grad_norm < best_norm {
            best_norm = grad_norm;
            best_lambda.copy_from(&lambda);
            best_iteration = iterations;
        }
        converged = grad_norm <= config.tolerance;
    }

    let lambda_star = if converged { lambda } else { best_lambda };
    if !converged {
        log::info!(
            "no convergence after {iterations} iterations; best gradient norm {best_norm:e} at iteration {best_iteration}"
        );
    }
    reduced.tau(&lambda_star, &mut tau);
    reduced.primal(&tau, &mut x);
    reduced.gradient(&x, &mut grad);
    Ok(DualSolution {
        gradient_norm: grad.norm(),
        dual_value: reduced.objective(&lambda_star, &tau),
        entropy_value: reduced.entropy_at(&tau),
        x_star: reduced.expand(&x),
        lambda_star,
        iterations,
        converged,
    })
}
