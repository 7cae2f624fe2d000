//! Realized quadratic variation and the closed-form estimators of `ϑ`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{kron, sym, unvec, vec, Solver};
use crate::model::MatrixField;
use crate::record::DiscreteRecord;

/// `Σᵢ Δxᵢ Δxᵢᵀ` together with the process gap and increment count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadraticVariation {
    pub matrix: DMatrix<f64>,
    pub gap: f64,
    pub count: usize,
}

/// Realized quadratic variation of the record.
pub fn discretized_qv(data: &DiscreteRecord) -> QuadraticVariation {
    let d = data.dim();
    let mut q = DMatrix::zeros(d, d);
    let mut dx = vec![0.0; d];
    for i in 1..data.len() {
        let (prev, next) = (data.state(i - 1), data.state(i));
        for k in 0..d {
            dx[k] = next[k] - prev[k];
        }
        for c in 0..d {
            for r in c..d {
                q[(r, c)] += dx[r] * dx[c];
            }
        }
    }
    for c in 0..d {
        for r in c + 1..d {
            q[(c, r)] = q[(r, c)];
        }
    }
    QuadraticVariation {
        matrix: q,
        gap: data.process_gap(),
        count: data.increments(),
    }
}

/// A diffusion-parameter estimate: the raw matrix solve and `(ϑ̂ + ϑ̂ᵀ)/2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionEstimate {
    pub raw: DMatrix<f64>,
    pub symmetrized: DMatrix<f64>,
}

impl DiffusionEstimate {
    fn from_raw(raw: DMatrix<f64>) -> Result<Self> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOutput("diffusion estimate"));
        }
        let symmetrized = sym(&raw);
        Ok(DiffusionEstimate { raw, symmetrized })
    }
}

fn integral_solver(m: &DMatrix<f64>) -> Result<Solver> {
    Solver::new(m).map_err(|e| match e {
        Error::IllConditioned(c) => Error::SingularIntegral(c),
        other => other,
    })
}

fn nonempty(data: &DiscreteRecord) -> Result<()> {
    if data.increments() == 0 {
        return Err(Error::InvalidInput("record has no increments".into()));
    }
    Ok(())
}

fn check_field(m: &DMatrix<f64>, d: usize, what: &str) -> Result<()> {
    if m.shape() != (d, d) {
        return Err(Error::DimensionMismatch(format!(
            "{what} returned a {}x{} matrix, state dimension is {d}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Form 1 (`a = a₀ ϑ`): `ϑ̂ = S⁻¹ QV` with `S = Δ̃ Σᵢ a₀(x_{i−1})`.
pub fn estimate_form1(data: &DiscreteRecord, a0: &MatrixField) -> Result<DiffusionEstimate> {
    nonempty(data)?;
    let d = data.dim();
    let mut s = DMatrix::zeros(d, d);
    for i in 0..data.increments() {
        let a = a0(&data.state_vector(i));
        check_field(&a, d, "a0")?;
        s += a;
    }
    s *= data.process_gap();
    form1_from_sums(&discretized_qv(data).matrix, &s)
}

/// Form 1 estimate from an accumulated `QV` and `S = Δ̃ Σ a₀`.
pub fn form1_from_sums(qv: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DiffusionEstimate> {
    DiffusionEstimate::from_raw(integral_solver(s)?.solve_matrix(qv))
}

/// Form 2 (`σ = σ₀ ϑ^{1/2}`):
/// `vec(ϑ̂) = (Δ̃ Σᵢ σ₀ ⊗ σ₀)⁻¹ vec(QV)`.
pub fn estimate_form2(data: &DiscreteRecord, sigma0: &MatrixField) -> Result<DiffusionEstimate> {
    nonempty(data)?;
    let d = data.dim();
    let mut k = DMatrix::zeros(d * d, d * d);
    for i in 0..data.increments() {
        let s0 = sigma0(&data.state_vector(i));
        check_field(&s0, d, "sigma0")?;
        k += kron(&s0, &s0);
    }
    k *= data.process_gap();
    form2_from_sums(&discretized_qv(data).matrix, &k)
}

/// Form 2 estimate from an accumulated `QV` and `K = Δ̃ Σ σ₀ ⊗ σ₀`.
pub fn form2_from_sums(qv: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<DiffusionEstimate> {
    let d = qv.nrows();
    let v: DVector<f64> = integral_solver(k)?.solve(&vec(qv));
    DiffusionEstimate::from_raw(unvec(&v, d, d))
}
