//! Parametric SDE models `dX = b(μ, X) dt + σ(ϑ, X) dW` and their parameters.
//!
//! A [`ModelSpec`] bundles the drift and diffusion callables together with the
//! structural knowledge the estimators can exploit: linear-in-parameter drift
//! (`b(μ, x) = B₀(x) μ`), its Kronecker variant (`b = A β₀(x)`, `μ = vec(A)`),
//! and the two diffusion forms `a(ϑ, x) = a₀(x) ϑ` (Form 1) and
//! `σ(ϑ, x) = σ₀(x) κ` with `ϑ = κ κᵀ` (Form 2).
//!
//! Callables must be pure functions of `(parameter, state)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, kron, sym};

/// `x ↦ vector`.
pub type VectorField = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
/// `x ↦ matrix`.
pub type MatrixField = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// `(μ, x) ↦ b(μ, x)`.
pub type DriftFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// `(μ, x) ↦ D_μ b(μ, x)`, a `d × n₀` matrix.
pub type JacobianFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// `(ϑ, x) ↦ σ(ϑ, x)`.
pub type DiffusionFn = Arc<dyn Fn(&DMatrix<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// The pair `θ = (μ, ϑ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    mu: DVector<f64>,
    vartheta: DMatrix<f64>,
}

impl Parameter {
    /// Checks that `mu` is finite and `vartheta` is symmetric positive definite.
    pub fn new(mu: DVector<f64>, vartheta: DMatrix<f64>) -> Result<Self> {
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("mu has non-finite entries".into()));
        }
        validate_vartheta(&vartheta)?;
        Ok(Parameter { mu, vartheta })
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn vartheta(&self) -> &DMatrix<f64> {
        &self.vartheta
    }
}

/// Symmetric to `1e-12` relative tolerance with strictly positive eigenvalues.
pub fn validate_vartheta(vartheta: &DMatrix<f64>) -> Result<()> {
    if !vartheta.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "vartheta must be square, got {:?}",
            vartheta.shape()
        )));
    }
    if vartheta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("vartheta has non-finite entries".into()));
    }
    let norm = vartheta.norm();
    let asymmetry = (vartheta - vartheta.transpose()).norm();
    if asymmetry > 1e-12 * norm {
        return Err(Error::NotSymmetric { asymmetry, norm });
    }
    let min = SymmetricEigen::new(sym(vartheta)).eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "vartheta min eigenvalue {min:.3e}"
        )));
    }
    Ok(())
}

/// How the drift depends on `μ`.
#[derive(Clone)]
pub enum DriftStructure {
    /// Arbitrary `b(μ, x)`, with an optional analytic Jacobian in `μ`.
    General {
        drift: DriftFn,
        jacobian: Option<JacobianFn>,
    },
    /// `b(μ, x) = B₀(x) μ`.
    Linear { b0: MatrixField },
    /// `b(μ, x) = A β₀(x)` with `μ = vec(A)`, i.e. `B₀(x) = β₀(x)ᵀ ⊗ I_d`.
    LinearKron { beta0: VectorField, dim_beta: usize },
}

/// How `σ` depends on `ϑ`.
#[derive(Clone)]
pub enum DiffusionForm {
    General(DiffusionFn),
    /// `a(ϑ, x) = a₀(x) ϑ`, `σ = (a₀(x) ϑ)^{1/2}`. Requires `a₀(x) ϑ` symmetric.
    Form1 { a0: MatrixField },
    /// `σ(ϑ, x) = σ₀(x) ϑ^{1/2}`, so `a = σ₀ ϑ σ₀ᵀ`.
    Form2 { sigma0: MatrixField },
}

/// Parameter layout of the Ornstein–Uhlenbeck models `dX = (g − H X) dt + κ dW`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OuLayout {
    /// `g ≡ 0`, `μ = vec(H)`, `b(μ, x) = −H x`. In one dimension `b = −μ x`.
    Centered,
    /// `μ = vec([g, −H])` with `β₀(x) = (1, x)`.
    Full,
}

impl OuLayout {
    pub fn dim_param(self, d: usize) -> usize {
        match self {
            OuLayout::Centered => d * d,
            OuLayout::Full => d * (d + 1),
        }
    }

    /// Recovers `(g, H)` from the drift parameter.
    pub fn g_h(self, mu: &DVector<f64>, d: usize) -> (DVector<f64>, DMatrix<f64>) {
        match self {
            OuLayout::Centered => (DVector::zeros(d), linalg::unvec(mu, d, d)),
            OuLayout::Full => {
                let a = linalg::unvec(mu, d, d + 1);
                let g = a.column(0).into_owned();
                let h = -a.columns(1, d).into_owned();
                (g, h)
            }
        }
    }

    /// Inverse of [`OuLayout::g_h`]. `g` is ignored for the centered layout.
    pub fn mu_from(self, g: &DVector<f64>, h: &DMatrix<f64>) -> DVector<f64> {
        match self {
            OuLayout::Centered => linalg::vec(h),
            OuLayout::Full => {
                let d = h.nrows();
                let mut a = DMatrix::zeros(d, d + 1);
                a.set_column(0, g);
                a.columns_mut(1, d).copy_from(&(-h));
                linalg::vec(&a)
            }
        }
    }
}

/// A parametric SDE model.
#[derive(Clone)]
pub struct ModelSpec {
    dim_state: usize,
    dim_drift_param: usize,
    structure: DriftStructure,
    diffusion_form: DiffusionForm,
    ou: Option<OuLayout>,
    state_independent_diffusion: bool,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let structure = match self.structure {
            DriftStructure::General { .. } => "General",
            DriftStructure::Linear { .. } => "Linear",
            DriftStructure::LinearKron { .. } => "LinearKron",
        };
        let form = match self.diffusion_form {
            DiffusionForm::General(_) => "General",
            DiffusionForm::Form1 { .. } => "Form1",
            DiffusionForm::Form2 { .. } => "Form2",
        };
        f.debug_struct("ModelSpec")
            .field("dim_state", &self.dim_state)
            .field("dim_drift_param", &self.dim_drift_param)
            .field("structure", &structure)
            .field("diffusion_form", &form)
            .field("ou", &self.ou)
            .finish()
    }
}

fn identity_field(d: usize) -> MatrixField {
    Arc::new(move |_x: &DVector<f64>| DMatrix::identity(d, d))
}

impl ModelSpec {
    /// A model with arbitrary drift. Without a Jacobian the estimators fall
    /// back to central finite differences in `μ`.
    pub fn general(
        dim_state: usize,
        dim_drift_param: usize,
        drift: DriftFn,
        jacobian: Option<JacobianFn>,
        diffusion_form: DiffusionForm,
    ) -> Self {
        ModelSpec {
            dim_state,
            dim_drift_param,
            structure: DriftStructure::General { drift, jacobian },
            diffusion_form,
            ou: None,
            state_independent_diffusion: false,
        }
    }

    /// `b(μ, x) = B₀(x) μ` with `B₀: ℝ^d → ℝ^{d×n₀}`.
    pub fn linear(
        dim_state: usize,
        dim_drift_param: usize,
        b0: MatrixField,
        diffusion_form: DiffusionForm,
    ) -> Self {
        ModelSpec {
            dim_state,
            dim_drift_param,
            structure: DriftStructure::Linear { b0 },
            diffusion_form,
            ou: None,
            state_independent_diffusion: false,
        }
    }

    /// `b(μ, x) = A β₀(x)` with `A ∈ ℝ^{d×m₀}`, `μ = vec(A)`.
    pub fn linear_kron(
        dim_state: usize,
        dim_beta: usize,
        beta0: VectorField,
        diffusion_form: DiffusionForm,
    ) -> Self {
        ModelSpec {
            dim_state,
            dim_drift_param: dim_state * dim_beta,
            structure: DriftStructure::LinearKron { beta0, dim_beta },
            diffusion_form,
            ou: None,
            state_independent_diffusion: false,
        }
    }

    /// Ornstein–Uhlenbeck model with constant diffusion `σ = ϑ^{1/2}`
    /// (Form 1 with `a₀ ≡ I`, equivalently Form 2 with `σ₀ ≡ I`).
    pub fn ou(d: usize, layout: OuLayout) -> Self {
        let form = DiffusionForm::Form1 {
            a0: identity_field(d),
        };
        let mut model = match layout {
            OuLayout::Centered => {
                let b0: MatrixField = Arc::new(move |x: &DVector<f64>| {
                    -kron(&DMatrix::from_row_slice(1, d, x.as_slice()), &DMatrix::identity(d, d))
                });
                ModelSpec::linear(d, d * d, b0, form)
            }
            OuLayout::Full => {
                let beta0: VectorField = Arc::new(move |x: &DVector<f64>| {
                    let mut b = DVector::zeros(d + 1);
                    b[0] = 1.0;
                    b.rows_mut(1, d).copy_from(x);
                    b
                });
                ModelSpec::linear_kron(d, d + 1, beta0, form)
            }
        };
        model.ou = Some(layout);
        model.state_independent_diffusion = true;
        model
    }

    /// Declares that `a(ϑ, x)` does not depend on `x`, which lets the
    /// estimators factor it once per record.
    pub fn with_state_independent_diffusion(mut self) -> Self {
        self.state_independent_diffusion = true;
        self
    }

    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_drift_param(&self) -> usize {
        self.dim_drift_param
    }

    pub fn structure(&self) -> &DriftStructure {
        &self.structure
    }

    pub fn diffusion_form(&self) -> &DiffusionForm {
        &self.diffusion_form
    }

    pub fn ou_layout(&self) -> Option<OuLayout> {
        self.ou
    }

    pub fn state_independent_diffusion(&self) -> bool {
        self.state_independent_diffusion
    }

    /// `a₀` when the diffusion is of Form 1 (or an OU model, where `a₀ ≡ I`).
    pub fn form1_a0(&self) -> Option<MatrixField> {
        match &self.diffusion_form {
            DiffusionForm::Form1 { a0 } => Some(a0.clone()),
            _ if self.ou.is_some() => Some(identity_field(self.dim_state)),
            _ => None,
        }
    }

    /// `σ₀` when the diffusion is of Form 2 (or an OU model, where `σ₀ ≡ I`).
    pub fn form2_sigma0(&self) -> Option<MatrixField> {
        match &self.diffusion_form {
            DiffusionForm::Form2 { sigma0 } => Some(sigma0.clone()),
            _ if self.ou.is_some() => Some(identity_field(self.dim_state)),
            _ => None,
        }
    }

    /// `B₀(x)` for linear-in-parameter drift (including the Kronecker form).
    pub fn b0(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        match &self.structure {
            DriftStructure::Linear { b0 } => Some(b0(x)),
            DriftStructure::LinearKron { beta0, .. } => Some(kron(
                &row_matrix(&beta0(x)),
                &DMatrix::identity(self.dim_state, self.dim_state),
            )),
            DriftStructure::General { .. } => None,
        }
    }

    /// `b(μ, x)`.
    pub fn drift(&self, mu: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        match &self.structure {
            DriftStructure::General { drift, .. } => drift(mu, x),
            DriftStructure::Linear { b0 } => b0(x) * mu,
            DriftStructure::LinearKron { beta0, dim_beta } => {
                let a = DMatrix::from_column_slice(self.dim_state, *dim_beta, mu.as_slice());
                a * beta0(x)
            }
        }
    }

    /// True when an analytic `D_μ b` is available (always for linear drift).
    pub fn has_jacobian(&self) -> bool {
        !matches!(
            self.structure,
            DriftStructure::General { jacobian: None, .. }
        )
    }

    /// `D_μ b(μ, x)`, a `d × n₀` matrix. Uses central differences when the
    /// model has no analytic Jacobian.
    pub fn drift_jacobian(&self, mu: &DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.structure {
            DriftStructure::General {
                jacobian: Some(j), ..
            } => j(mu, x),
            DriftStructure::General { drift, .. } => {
                let n0 = mu.len();
                let mut jac = DMatrix::zeros(self.dim_state, n0);
                let mut probe = mu.clone();
                for k in 0..n0 {
                    let h = 1e-6 * (1.0 + mu[k].abs());
                    probe[k] = mu[k] + h;
                    let up = drift(&probe, x);
                    probe[k] = mu[k] - h;
                    let down = drift(&probe, x);
                    probe[k] = mu[k];
                    jac.set_column(k, &((up - down) / (2.0 * h)));
                }
                jac
            }
            _ => self.b0(x).expect("linear structure"),
        }
    }

    /// `σ(ϑ, x)`.
    pub fn diffusion(&self, vartheta: &DMatrix<f64>, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.diffusion_form {
            DiffusionForm::General(s) => s(vartheta, x),
            DiffusionForm::Form1 { a0 } => {
                let a = sym(&(a0(x) * vartheta));
                linalg::psd_sqrt(&a).unwrap_or_else(|_| DMatrix::from_element(a.nrows(), a.ncols(), f64::NAN))
            }
            DiffusionForm::Form2 { sigma0 } => {
                let kappa = linalg::psd_sqrt(vartheta)
                    .unwrap_or_else(|_| DMatrix::from_element(vartheta.nrows(), vartheta.ncols(), f64::NAN));
                sigma0(x) * kappa
            }
        }
    }

    /// Checks that the dimensions of `theta` match the model.
    pub fn check_parameter(&self, theta: &Parameter) -> Result<()> {
        if theta.mu().len() != self.dim_drift_param {
            return Err(Error::DimensionMismatch(format!(
                "mu has length {}, model expects {}",
                theta.mu().len(),
                self.dim_drift_param
            )));
        }
        if theta.vartheta().nrows() != self.dim_state {
            return Err(Error::DimensionMismatch(format!(
                "vartheta is {}x{}, model state dimension is {}",
                theta.vartheta().nrows(),
                theta.vartheta().ncols(),
                self.dim_state
            )));
        }
        Ok(())
    }
}

/// `a(ϑ, x) = σ σᵀ`, symmetrized. Forms 1 and 2 are evaluated through their
/// closed forms `a₀ ϑ` and `σ₀ ϑ σ₀ᵀ`.
pub fn eval_a(model: &ModelSpec, vartheta: &DMatrix<f64>, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    if x.len() != model.dim_state() {
        return Err(Error::DimensionMismatch(format!(
            "state has length {}, model dimension is {}",
            x.len(),
            model.dim_state()
        )));
    }
    let a = match model.diffusion_form() {
        DiffusionForm::Form1 { a0 } => a0(x) * vartheta,
        DiffusionForm::Form2 { sigma0 } => {
            let s0 = sigma0(x);
            &s0 * vartheta * s0.transpose()
        }
        DiffusionForm::General(s) => {
            let s = s(vartheta, x);
            &s * s.transpose()
        }
    };
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteOutput("a(vartheta, x)"));
    }
    Ok(sym(&a))
}

/// One radius shell of [`check_drift_dissipativity`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellDiagnostic {
    pub radius: f64,
    /// Largest `⟨x, b(μ, x)⟩` over the sampled points.
    pub max_inner: f64,
    /// `max_inner / r^{q₀}`.
    pub max_normalized: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipativityReport {
    pub q0: f64,
    pub shells: Vec<ShellDiagnostic>,
}

impl DissipativityReport {
    pub fn is_dissipative(&self) -> bool {
        self.shells.iter().all(|s| !s.flagged)
    }

    pub fn first_flagged(&self) -> Option<&ShellDiagnostic> {
        self.shells.iter().find(|s| s.flagged)
    }
}

/// Samples `⟨x, b(μ, x)⟩` on spheres of the given radii with `q₀ = 2`.
pub fn check_drift_dissipativity(
    model: &ModelSpec,
    mu: &DVector<f64>,
    radius_grid: &[f64],
    sample_count: usize,
    seed: u64,
) -> DissipativityReport {
    check_drift_dissipativity_with_exponent(model, mu, radius_grid, sample_count, seed, 2.0)
}

/// As [`check_drift_dissipativity`] with an explicit growth exponent `q₀`.
/// In one dimension the sphere is `{−r, r}` and both points are evaluated.
pub fn check_drift_dissipativity_with_exponent(
    model: &ModelSpec,
    mu: &DVector<f64>,
    radius_grid: &[f64],
    sample_count: usize,
    seed: u64,
    q0: f64,
) -> DissipativityReport {
    let d = model.dim_state();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut directions: Vec<DVector<f64>> = Vec::new();
    if d == 1 {
        directions.push(DVector::from_element(1, 1.0));
        directions.push(DVector::from_element(1, -1.0));
    } else {
        while directions.len() < sample_count.max(1) {
            let z = DVector::from_fn(d, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
            let n = z.norm();
            if n > 1e-12 {
                directions.push(z / n);
            }
        }
    }
    let shells = radius_grid
        .iter()
        .map(|&radius| {
            let max_inner = directions
                .iter()
                .map(|u| {
                    let x = u * radius;
                    x.dot(&model.drift(mu, &x))
                })
                .fold(f64::NEG_INFINITY, f64::max);
            ShellDiagnostic {
                radius,
                max_inner,
                max_normalized: max_inner / radius.powf(q0),
                flagged: !(max_inner < 0.0),
            }
        })
        .collect();
    DissipativityReport { q0, shells }
}

fn row_matrix(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v.as_slice())
}
