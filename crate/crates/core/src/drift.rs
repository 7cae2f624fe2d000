//! Discretized likelihood for the drift parameter and the approximate MLE.
//!
//! With left-endpoint evaluation throughout,
//!
//! ```text
//! ℓ(μ) = Σᵢ (a⁻¹ b)·Δxᵢ − (δ/2) Σᵢ bᵀ a⁻¹ b,
//! ∇ℓ(μ) = Σᵢ D_μbᵀ a⁻¹ (Δxᵢ − δ b),
//! ```
//!
//! where `a = a(ϑ, x_{i−1})`, `b = b(μ, x_{i−1})` and `δ` defaults to the
//! process gap `Δ̃` of the record.

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{kron, Solver};
use crate::model::{eval_a, DriftStructure, ModelSpec};
use crate::record::DiscreteRecord;

/// Penalty `γ(μ) = ε^{α+1/2} ‖μ‖_p^p`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize, Serialize)]
pub struct PenaltySpec {
    pub alpha: f64,
    pub p: f64,
}

impl PenaltySpec {
    pub fn new(alpha: f64, p: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(p >= 1.0) {
            return Err(Error::InvalidInput(format!(
                "penalty needs alpha > 0 and p >= 1, got alpha={alpha}, p={p}"
            )));
        }
        Ok(PenaltySpec { alpha, p })
    }

    /// A penalty small enough to be invisible at double precision for
    /// `ε < 1`.
    pub fn negligible() -> Self {
        PenaltySpec { alpha: 60.0, p: 2.0 }
    }

    pub fn weight(&self, epsilon: f64) -> f64 {
        epsilon.powf(self.alpha + 0.5)
    }

    pub fn value(&self, mu: &DVector<f64>, epsilon: f64) -> f64 {
        self.weight(epsilon) * mu.iter().map(|m| m.abs().powf(self.p)).sum::<f64>()
    }

    /// Gradient; at `p = 1` the subgradient at zero is taken as zero.
    pub fn gradient(&self, mu: &DVector<f64>, epsilon: f64) -> DVector<f64> {
        let w = self.weight(epsilon);
        mu.map(|m| {
            if m == 0.0 {
                0.0
            } else {
                w * self.p * m.abs().powf(self.p - 1.0) * m.signum()
            }
        })
    }
}

/// How an estimator terminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    ClosedForm,
    Converged,
    MaxIterExceeded,
    /// The Hessian is numerically singular; the minimum-norm step was taken.
    Degenerate,
    /// Backtracking could not decrease the loss further.
    LineSearchFailed,
}

/// Result of a drift fit. Serializes to
/// `{mu_hat, loglik, grad_norm, iterations, converged}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftFit {
    #[serde(serialize_with = "serialize_vector")]
    pub mu_hat: DVector<f64>,
    /// `ℓ` at `mu_hat` (with `δ = Δ̃`).
    pub loglik: f64,
    /// Norm of the gradient of the solved objective at `mu_hat`.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(skip)]
    pub status: FitStatus,
    /// Smallest eigenvalue of the final Hessian (Newton only).
    #[serde(skip)]
    pub min_hessian_eigenvalue: Option<f64>,
}

fn serialize_vector<S: Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| if x.is_finite() { Some(*x) } else { None }))
}

/// Visits `(i, x_{i−1}, Δxᵢ, solver for a(ϑ, x_{i−1}))` for every increment.
/// The factorization is computed once when the diffusion is state-independent.
pub(crate) fn for_each_step<F>(
    data: &DiscreteRecord,
    model: &ModelSpec,
    vartheta: &DMatrix<f64>,
    mut f: F,
) -> Result<()>
where
    F: FnMut(usize, &DVector<f64>, &DVector<f64>, &Solver),
{
    let d = model.dim_state();
    if data.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "record has dimension {}, model dimension is {d}",
            data.dim()
        )));
    }
    if vartheta.shape() != (d, d) {
        return Err(Error::DimensionMismatch(format!(
            "vartheta is {}x{}, model state dimension is {d}",
            vartheta.nrows(),
            vartheta.ncols()
        )));
    }
    if data.increments() == 0 {
        return Err(Error::InvalidInput("record has no increments".into()));
    }
    let factor = |i: usize, x: &DVector<f64>| -> Result<Solver> {
        let a = eval_a(model, vartheta, x)?;
        Solver::new(&a).map_err(|e| match e {
            Error::IllConditioned(cond) => Error::SingularDiffusion { index: i, cond },
            other => other,
        })
    };
    let mut prev = data.state_vector(0);
    let cached = if model.state_independent_diffusion() {
        Some(factor(0, &prev)?)
    } else {
        None
    };
    let mut dx = DVector::zeros(d);
    for i in 1..data.len() {
        let next = data.state(i);
        for k in 0..d {
            dx[k] = next[k] - prev[k];
        }
        match &cached {
            Some(s) => f(i - 1, &prev, &dx, s),
            None => {
                let s = factor(i - 1, &prev)?;
                f(i - 1, &prev, &dx, &s)
            }
        }
        prev.copy_from_slice(next);
    }
    Ok(())
}

fn check_mu(model: &ModelSpec, mu: &DVector<f64>) -> Result<()> {
    if mu.len() != model.dim_drift_param() {
        return Err(Error::DimensionMismatch(format!(
            "mu has length {}, model expects {}",
            mu.len(),
            model.dim_drift_param()
        )));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidInput(format!("delta must lie in (0, 1], got {delta}")));
    }
    Ok(())
}

/// `ℓ(μ | ϑ)` for an explicit `δ`.
pub fn discretized_loglik(
    data: &DiscreteRecord,
    model: &ModelSpec,
    mu: &DVector<f64>,
    vartheta: &DMatrix<f64>,
    delta: f64,
) -> Result<f64> {
    check_mu(model, mu)?;
    check_delta(delta)?;
    let (mut linear, mut quad) = (0.0, 0.0);
    for_each_step(data, model, vartheta, |_, x, dx, solver| {
        let b = model.drift(mu, x);
        let ainv_b = solver.solve(&b);
        linear += ainv_b.dot(dx);
        quad += b.dot(&ainv_b);
    })?;
    let value = linear - 0.5 * delta * quad;
    if !value.is_finite() {
        return Err(Error::NonFiniteOutput("discretized log-likelihood"));
    }
    Ok(value)
}

/// `∇_μ ℓ(μ | ϑ)` for an explicit `δ`.
pub fn loglik_gradient(
    data: &DiscreteRecord,
    model: &ModelSpec,
    mu: &DVector<f64>,
    vartheta: &DMatrix<f64>,
    delta: f64,
) -> Result<DVector<f64>> {
    check_mu(model, mu)?;
    check_delta(delta)?;
    let mut grad = DVector::zeros(mu.len());
    for_each_step(data, model, vartheta, |_, x, dx, solver| {
        let b = model.drift(mu, x);
        let w = solver.solve(&(dx - b * delta));
        grad += model.drift_jacobian(mu, x).tr_mul(&w);
    })?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteOutput("log-likelihood gradient"));
    }
    Ok(grad)
}

fn solve_gram(gram: &DMatrix<f64>, driver: &DVector<f64>) -> Result<DVector<f64>> {
    let solver = Solver::new(gram).map_err(|e| match e {
        Error::IllConditioned(c) => Error::SingularGram(c),
        other => other,
    })?;
    Ok(solver.solve(driver))
}

fn closed_form_fit(
    data: &DiscreteRecord,
    model: &ModelSpec,
    vartheta: &DMatrix<f64>,
    mu_hat: DVector<f64>,
) -> Result<DriftFit> {
    let delta = data.process_gap();
    let loglik = discretized_loglik(data, model, &mu_hat, vartheta, delta)?;
    let grad_norm = loglik_gradient(data, model, &mu_hat, vartheta, delta)?.norm();
    Ok(DriftFit {
        mu_hat,
        loglik,
        grad_norm,
        iterations: 0,
        converged: true,
        status: FitStatus::ClosedForm,
        min_hessian_eigenvalue: None,
    })
}

/// Closed-form AMLE for `b(μ, x) = B₀(x) μ`:
/// `μ̂ = (Δ̃ Σ B₀ᵀ a⁻¹ B₀)⁻¹ Σ B₀ᵀ a⁻¹ Δx`.
///
/// Also accepts Kronecker-structured models through their `B₀ = β₀ᵀ ⊗ I`
/// embedding.
pub fn amle_linear(data: &DiscreteRecord, model: &ModelSpec, vartheta_hat: &DMatrix<f64>) -> Result<DriftFit> {
    if matches!(model.structure(), DriftStructure::General { .. }) {
        return Err(Error::InvalidInput("amle_linear needs a linear drift model".into()));
    }
    let n0 = model.dim_drift_param();
    let mut gram = DMatrix::zeros(n0, n0);
    let mut driver = DVector::zeros(n0);
    for_each_step(data, model, vartheta_hat, |_, x, dx, solver| {
        let b0 = model.b0(x).expect("linear structure");
        let ainv_b0 = solver.solve_matrix(&b0);
        gram += b0.tr_mul(&ainv_b0);
        driver += ainv_b0.tr_mul(dx);
    })?;
    gram *= data.process_gap();
    let mu_hat = solve_gram(&gram, &driver)?;
    closed_form_fit(data, model, vartheta_hat, mu_hat)
}

/// Closed-form AMLE for `b(μ, x) = A β₀(x)` with `μ = vec(A)`, assembled
/// from the Kronecker Gram `Δ̃ Σ β₀β₀ᵀ ⊗ a⁻¹` and driver `Σ β₀ ⊗ a⁻¹Δx`.
pub fn amle_kron(data: &DiscreteRecord, model: &ModelSpec, vartheta_hat: &DMatrix<f64>) -> Result<DriftFit> {
    let DriftStructure::LinearKron { beta0, dim_beta } = model.structure() else {
        return Err(Error::InvalidInput("amle_kron needs a Kronecker-structured drift model".into()));
    };
    let (d, k) = (model.dim_state(), *dim_beta);
    let (gram, driver) = if model.state_independent_diffusion() {
        let mut s_bb = DMatrix::zeros(k, k);
        let mut s_dxb = DMatrix::zeros(d, k);
        let mut ainv = None;
        for_each_step(data, model, vartheta_hat, |_, x, dx, solver| {
            let beta = beta0(x);
            s_bb += &beta * beta.transpose();
            s_dxb += dx * beta.transpose();
            if ainv.is_none() {
                ainv = Some(solver.inverse());
            }
        })?;
        let ainv = ainv.expect("at least one increment");
        let driver = &ainv * s_dxb;
        (kron(&s_bb, &ainv), DVector::from_column_slice(driver.as_slice()))
    } else {
        let mut gram = DMatrix::zeros(d * k, d * k);
        let mut driver = DVector::zeros(d * k);
        for_each_step(data, model, vartheta_hat, |_, x, dx, solver| {
            let beta = beta0(x);
            let ainv = solver.inverse();
            gram += kron(&(&beta * beta.transpose()), &ainv);
            let w = solver.solve(dx);
            for j in 0..k {
                for r in 0..d {
                    driver[j * d + r] += beta[j] * w[r];
                }
            }
        })?;
        (gram, driver)
    };
    let mu_hat = solve_gram(&(gram * data.process_gap()), &driver)?;
    closed_form_fit(data, model, vartheta_hat, mu_hat)
}

/// Newton solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings { tol: 1e-8, max_iter: 100 }
    }
}

struct Loss<'a> {
    data: &'a DiscreteRecord,
    model: &'a ModelSpec,
    vartheta: &'a DMatrix<f64>,
    penalty: PenaltySpec,
    epsilon: f64,
    delta: f64,
}

impl Loss<'_> {
    fn value(&self, mu: &DVector<f64>) -> Result<f64> {
        let l = discretized_loglik(self.data, self.model, mu, self.vartheta, self.delta)?;
        Ok(-self.epsilon * l + self.penalty.value(mu, self.epsilon))
    }

    fn gradient(&self, mu: &DVector<f64>) -> Result<DVector<f64>> {
        let g = loglik_gradient(self.data, self.model, mu, self.vartheta, self.delta)?;
        Ok(-g * self.epsilon + self.penalty.gradient(mu, self.epsilon))
    }

    fn hessian(&self, mu: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = mu.len();
        let mut h = DMatrix::zeros(n, n);
        let mut probe = mu.clone();
        for k in 0..n {
            let step = 1e-5 * (1.0 + mu[k].abs());
            probe[k] = mu[k] + step;
            let up = self.gradient(&probe)?;
            probe[k] = mu[k] - step;
            let down = self.gradient(&probe)?;
            probe[k] = mu[k];
            h.set_column(k, &((up - down) / (2.0 * step)));
        }
        Ok((&h + h.transpose()) * 0.5)
    }
}

/// Minimum-norm solution of `H s = −g` through the eigendecomposition.
fn pseudo_inverse_step(h: &DMatrix<f64>, g: &DVector<f64>, cutoff: f64) -> DVector<f64> {
    let eig = h.clone().symmetric_eigen();
    let mut step = DVector::zeros(g.len());
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > cutoff {
            let v = eig.eigenvectors.column(j);
            step -= v * (v.dot(g) / lambda);
        }
    }
    step
}

/// Penalized AMLE: minimizes `−ε ℓ(μ | ϑ̂) + γ(μ)` with `δ = Δ̃` by damped
/// Newton steps on a finite-difference Hessian, with backtracking, and
/// gradient descent where the Hessian is not positive definite.
///
/// Running out of iterations is reported through `status` with the best
/// iterate, not as an error.
pub fn amle_newton(
    data: &DiscreteRecord,
    model: &ModelSpec,
    vartheta_hat: &DMatrix<f64>,
    penalty: PenaltySpec,
    epsilon: f64,
    init: &DVector<f64>,
    settings: NewtonSettings,
) -> Result<DriftFit> {
    if !(settings.tol > 0.0) {
        return Err(Error::InvalidInput("tol must be positive".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput("epsilon must be positive".into()));
    }
    check_mu(model, init)?;
    let loss = Loss {
        data,
        model,
        vartheta: vartheta_hat,
        penalty,
        epsilon,
        delta: data.process_gap(),
    };
    let mut mu = init.clone();
    let mut value = loss.value(&mu)?;
    let mut grad = loss.gradient(&mu)?;
    let mut status = FitStatus::MaxIterExceeded;
    let mut min_eig = None;
    let mut iterations = 0;
    while iterations < settings.max_iter {
        if grad.norm() <= settings.tol {
            status = FitStatus::Converged;
            break;
        }
        iterations += 1;
        let hess = loss.hessian(&mu)?;
        let eig = hess.symmetric_eigenvalues();
        let lo = eig.min();
        let scale = eig.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        min_eig = Some(lo);
        if lo.abs() <= 1e-10 * scale {
            let step = pseudo_inverse_step(&hess, &grad, 1e-10 * scale);
            mu += step;
            grad = loss.gradient(&mu)?;
            status = FitStatus::Degenerate;
            break;
        }
        let direction = if lo > 0.0 {
            -hess.cholesky().map(|c| c.solve(&grad)).unwrap_or_else(|| grad.clone())
        } else {
            -grad.clone()
        };
        let slope = grad.dot(&direction);
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-14 {
            let cand = &mu + &direction * t;
            if let Ok(v) = loss.value(&cand) {
                if v <= value + 1e-4 * t * slope {
                    accepted = Some((cand, v, None));
                    break;
                }
                // Close to the optimum the decrease drops below the rounding
                // noise of the objective; fall back to the gradient norm.
                if t == 1.0 && v <= value + 1e-10 * value.abs().max(1.0) {
                    let g = loss.gradient(&cand)?;
                    if g.norm() < grad.norm() {
                        accepted = Some((cand, v, Some(g)));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, v, g)) => {
                mu = cand;
                value = v;
                grad = match g {
                    Some(g) => g,
                    None => loss.gradient(&mu)?,
                };
            }
            None => {
                status = if grad.norm() <= settings.tol {
                    FitStatus::Converged
                } else {
                    FitStatus::LineSearchFailed
                };
                break;
            }
        }
    }
    if status == FitStatus::MaxIterExceeded && grad.norm() <= settings.tol {
        status = FitStatus::Converged;
    }
    let loglik = discretized_loglik(data, model, &mu, vartheta_hat, data.process_gap())?;
    Ok(DriftFit {
        mu_hat: mu,
        loglik,
        grad_norm: grad.norm(),
        iterations,
        converged: status == FitStatus::Converged,
        status,
        min_hessian_eigenvalue: min_eig,
    })
}
