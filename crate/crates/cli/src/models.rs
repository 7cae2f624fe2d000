//! Built-in models selectable from a config file.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use sdecal::linalg::from_rows;
use sdecal::model::MatrixField;
use sdecal::{DiffusionForm, ModelSpec, OuLayout, Parameter};

use crate::config::{from_value, ModelConfig, ModelName};
use crate::CliError;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Ou1dParams {
    /// Mean-reversion rate `h` in `dX = (g − hX) dt + √ϑ dW`.
    #[serde(default = "one")]
    mu: f64,
    #[serde(default = "two")]
    vartheta: f64,
    /// Long-run level times `h`; the drift parameter becomes `(g, −h)` when given.
    #[serde(default)]
    g: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OuNdParams {
    h: Vec<Vec<f64>>,
    vartheta: Vec<Vec<f64>>,
    #[serde(default)]
    g: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VectorParams {
    #[serde(default)]
    mu: Option<Vec<f64>>,
    #[serde(default)]
    vartheta: Option<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScalarParams {
    #[serde(default = "one")]
    mu: f64,
    #[serde(default = "one")]
    vartheta: f64,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

fn matrix(rows: &[Vec<f64>], key: &str) -> Result<DMatrix<f64>, CliError> {
    from_rows(rows).map_err(|e| CliError::Config(format!("`model.params.{key}`: {e}")))
}

fn parameter(mu: DVector<f64>, vartheta: DMatrix<f64>) -> Result<Parameter, CliError> {
    Parameter::new(mu, vartheta).map_err(|e| CliError::Config(format!("`model.params.vartheta`: {e}")))
}

fn check_len(v: &[f64], n: usize, key: &str) -> Result<(), CliError> {
    if v.len() != n {
        return Err(CliError::Config(format!("`model.params.{key}`: expected {n} entries, got {}", v.len())));
    }
    Ok(())
}

fn scalar_a0(f: fn(f64) -> f64) -> MatrixField {
    Arc::new(move |x: &DVector<f64>| DMatrix::from_element(1, 1, f(x[0])))
}

/// Builds the model and true parameter named by the config.
pub fn build(cfg: &ModelConfig) -> Result<(ModelSpec, Parameter), CliError> {
    let params = cfg.params.clone();
    match cfg.name {
        ModelName::Ou1d => {
            let p: Ou1dParams = from_value(params, "model.params")?;
            let vt = DMatrix::from_element(1, 1, p.vartheta);
            match p.g {
                None => Ok((ModelSpec::ou(1, OuLayout::Centered), parameter(DVector::from_element(1, p.mu), vt)?)),
                Some(g) => Ok((
                    ModelSpec::ou(1, OuLayout::Full),
                    parameter(DVector::from_vec(vec![g, -p.mu]), vt)?,
                )),
            }
        }
        ModelName::OuNd => {
            let p: OuNdParams = from_value(params, "model.params")?;
            let h = matrix(&p.h, "h")?;
            let d = h.nrows();
            if !h.is_square() {
                return Err(CliError::Config("`model.params.h`: must be square".into()));
            }
            let vt = matrix(&p.vartheta, "vartheta")?;
            if vt.shape() != (d, d) {
                return Err(CliError::Config(format!("`model.params.vartheta`: must be {d}x{d}")));
            }
            match p.g {
                None => Ok((ModelSpec::ou(d, OuLayout::Centered), parameter(OuLayout::Centered.mu_from(&DVector::zeros(d), &h), vt)?)),
                Some(g) => {
                    check_len(&g, d, "g")?;
                    let g = DVector::from_vec(g);
                    Ok((ModelSpec::ou(d, OuLayout::Full), parameter(OuLayout::Full.mu_from(&g, &h), vt)?))
                }
            }
        }
        ModelName::LinearDriftDemo => {
            let p: VectorParams = from_value(params, "model.params")?;
            let mu = p.mu.unwrap_or_else(|| vec![1.0, 1.5, 0.5]);
            check_len(&mu, 3, "mu")?;
            let vt = match &p.vartheta {
                Some(rows) => matrix(rows, "vartheta")?,
                None => DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
            };
            // b(μ, x) = (−μ₁x₁ + μ₃, −μ₂x₂ − μ₃ tanh x₁)
            let b0: MatrixField = Arc::new(|x: &DVector<f64>| {
                DMatrix::from_row_slice(2, 3, &[-x[0], 0.0, 1.0, 0.0, -x[1], -x[0].tanh()])
            });
            let a0: MatrixField = Arc::new(|_x: &DVector<f64>| DMatrix::identity(2, 2));
            let model = ModelSpec::linear(2, 3, b0, DiffusionForm::Form1 { a0 }).with_state_independent_diffusion();
            Ok((model, parameter(DVector::from_vec(mu), vt)?))
        }
        ModelName::Form1Demo => {
            let p: ScalarParams = from_value(params, "model.params")?;
            let b0: MatrixField = Arc::new(|x: &DVector<f64>| DMatrix::from_element(1, 1, -x[0]));
            let a0 = scalar_a0(|x| 1.0 + x * x / (1.0 + x * x));
            let model = ModelSpec::linear(1, 1, b0, DiffusionForm::Form1 { a0 });
            Ok((
                model,
                parameter(DVector::from_element(1, p.mu), DMatrix::from_element(1, 1, p.vartheta))?,
            ))
        }
        ModelName::Form2Demo => {
            let p: VectorParams = from_value(params, "model.params")?;
            let mu = p.mu.unwrap_or_else(|| vec![1.0, 1.5]);
            check_len(&mu, 2, "mu")?;
            let vt = match &p.vartheta {
                Some(rows) => matrix(rows, "vartheta")?,
                None => DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8]),
            };
            let b0: MatrixField = Arc::new(|x: &DVector<f64>| -DMatrix::from_diagonal(x));
            let sigma0: MatrixField = Arc::new(|x: &DVector<f64>| {
                let s = 1.0 + 0.5 * x[0] * x[0] / (1.0 + x[0] * x[0]);
                DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, s]))
            });
            let model = ModelSpec::linear(2, 2, b0, DiffusionForm::Form2 { sigma0 });
            Ok((model, parameter(DVector::from_vec(mu), vt)?))
        }
    }
}
