//! Limiting covariances under the stationary law `π`.
//!
//! * Drift: `√ε⁻¹ (μ̂ − μ₀) → N(0, Σ⁻¹)` with `Σ = ∫ D_μbᵀ a⁻¹ D_μb dπ`.
//! * Diffusion: `Δ(ε)^{-1/2} (ϑ̂ − ϑ₀) → 2 P⁻¹ (ζ)_sym`, where
//!   `vec(ζ) ~ N(0, C)`, `C = ½ ∫ a ⊗ a dπ` and `P = ∫ a₀ dπ` (Form 1) or
//!   `P = ∫ σ₀ ⊗ σ₀ dπ` acting on `vec` (Form 2).
//!
//! Integrals against `π` are plain Monte Carlo averages over a
//! [`StationarySample`], reported with standard errors.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{commutation, kron, psd_sqrt, serialize_rows, solve_lyapunov, sym, unvec, Solver};
use crate::model::{check_drift_dissipativity, eval_a, MatrixField, ModelSpec, Parameter};
use crate::rng::NoiseStream;
use crate::simulate::BLOWUP_NORM;

/// How a [`StationarySample`] was produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleSource {
    ExactOu,
    ErgodicAverage {
        burn_in: f64,
        stride: usize,
        lag1_autocorrelation: f64,
    },
}

/// `N × d` matrix of (approximately) stationary draws.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarySample {
    pub points: DMatrix<f64>,
    pub source: SampleSource,
}

impl StationarySample {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn point(&self, i: usize) -> DVector<f64> {
        self.points.row(i).transpose()
    }
}

/// Long-path settings for non-OU models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErgodicSettings {
    /// Spacing of retained path points before thinning.
    pub gap: f64,
    pub substeps: usize,
    pub burn_in: f64,
    /// Target bound on the lag-1 autocorrelation of `‖x‖²`.
    pub max_autocorrelation: f64,
    pub max_stride: usize,
}

impl Default for ErgodicSettings {
    fn default() -> Self {
        ErgodicSettings {
            gap: 0.05,
            substeps: 10,
            burn_in: 0.2,
            max_autocorrelation: 0.2,
            max_stride: 1 << 16,
        }
    }
}

/// Draws `n` points from `π` for `θ₀`: exactly `N(H⁻¹g, F)` for OU models,
/// otherwise thinned points of one long Euler path.
pub fn stationary_draws(model: &ModelSpec, theta0: &Parameter, n: usize, seed: u64) -> Result<StationarySample> {
    stationary_draws_with(model, theta0, n, seed, ErgodicSettings::default())
}

pub fn stationary_draws_with(
    model: &ModelSpec,
    theta0: &Parameter,
    n: usize,
    seed: u64,
    settings: ErgodicSettings,
) -> Result<StationarySample> {
    model.check_parameter(theta0)?;
    if n == 0 {
        return Err(Error::InvalidInput("stationary sample size must be positive".into()));
    }
    if !(0.0..=0.9).contains(&settings.burn_in) {
        return Err(Error::InvalidInput("burn-in fraction must lie in [0, 0.9]".into()));
    }
    let d = model.dim_state();
    if let Some(layout) = model.ou_layout() {
        let (g, h) = layout.g_h(theta0.mu(), d);
        let f = solve_lyapunov(&h, theta0.vartheta())?;
        let mean = Solver::new(&h)?.solve(&g);
        let l = match f.clone().cholesky() {
            Some(c) => c.l(),
            None => psd_sqrt(&f)?,
        };
        let mut noise = NoiseStream::new(seed, 0);
        let mut z = DVector::zeros(d);
        let mut points = DMatrix::zeros(n, d);
        for i in 0..n {
            noise.fill_normal(z.as_mut_slice());
            let x = &mean + &l * &z;
            points.row_mut(i).copy_from(&x.transpose());
        }
        return Ok(StationarySample {
            points,
            source: SampleSource::ExactOu,
        });
    }

    let report = check_drift_dissipativity(model, theta0.mu(), &[10.0, 100.0, 1000.0], 64, seed);
    if let Some(s) = report.first_flagged() {
        return Err(Error::NotDissipative {
            radius: s.radius,
            max_inner: s.max_inner,
        });
    }
    let mut stride = 1;
    loop {
        let points = ergodic_path(model, theta0, n, stride, seed, &settings)?;
        let ac = lag1_autocorrelation(&points);
        if ac < settings.max_autocorrelation || stride >= settings.max_stride {
            return Ok(StationarySample {
                points,
                source: SampleSource::ErgodicAverage {
                    burn_in: settings.burn_in,
                    stride,
                    lag1_autocorrelation: ac,
                },
            });
        }
        stride *= 2;
    }
}

fn ergodic_path(
    model: &ModelSpec,
    theta: &Parameter,
    n: usize,
    stride: usize,
    seed: u64,
    settings: &ErgodicSettings,
) -> Result<DMatrix<f64>> {
    let d = model.dim_state();
    let kept = n * stride;
    let total = (kept as f64 / (1.0 - settings.burn_in)).ceil() as usize;
    let burn = total - kept;
    let dt = settings.gap / settings.substeps as f64;
    let sqrt_dt = dt.sqrt();
    let fixed_sigma = model
        .state_independent_diffusion()
        .then(|| model.diffusion(theta.vartheta(), &DVector::zeros(d)));
    let mut noise = NoiseStream::new(seed, 0);
    let mut x = DVector::zeros(d);
    let mut z = DVector::zeros(d);
    let mut points = DMatrix::zeros(n, d);
    let mut step = 0u64;
    for j in 0..total {
        for _ in 0..settings.substeps {
            step += 1;
            noise.fill_normal(z.as_mut_slice());
            let s = match &fixed_sigma {
                Some(s) => s * &z,
                None => model.diffusion(theta.vartheta(), &x) * &z,
            };
            x += model.drift(theta.mu(), &x) * dt + s * sqrt_dt;
            let norm = x.norm();
            if !(norm <= BLOWUP_NORM) {
                return Err(Error::Blowup { step, norm });
            }
        }
        if j >= burn && (j - burn) % stride == 0 {
            let row = (j - burn) / stride;
            if row < n {
                points.row_mut(row).copy_from(&x.transpose());
            }
        }
    }
    Ok(points)
}

fn lag1_autocorrelation(points: &DMatrix<f64>) -> f64 {
    let v: Vec<f64> = points.row_iter().map(|r| r.norm_squared()).collect();
    let n = v.len();
    if n < 3 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let var: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = v.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    cov / var
}

/// `Σ = ∫ D_μbᵀ a⁻¹ D_μb dπ` with entrywise standard errors, and its inverse,
/// the asymptotic covariance of the standardized drift estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftInformation {
    #[serde(serialize_with = "serialize_rows")]
    pub sigma: DMatrix<f64>,
    #[serde(serialize_with = "serialize_rows")]
    pub standard_error: DMatrix<f64>,
    #[serde(serialize_with = "serialize_rows")]
    pub covariance: DMatrix<f64>,
}

fn invert_sigma(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let solver = Solver::new(sigma).map_err(|e| match e {
        Error::IllConditioned(c) => Error::SingularSigma(c),
        other => other,
    })?;
    Ok(sym(&solver.inverse()))
}

/// Monte Carlo estimate of `Σ` over the sample points.
pub fn drift_clt_covariance(model: &ModelSpec, theta0: &Parameter, sample: &StationarySample) -> Result<DriftInformation> {
    model.check_parameter(theta0)?;
    if sample.points.ncols() != model.dim_state() {
        return Err(Error::DimensionMismatch("sample dimension differs from the model".into()));
    }
    let n = sample.len();
    if n < 2 {
        return Err(Error::InvalidInput("stationary sample needs at least two points".into()));
    }
    let terms: Vec<DMatrix<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = sample.point(i);
            let j = model.drift_jacobian(theta0.mu(), &x);
            let a = eval_a(model, theta0.vartheta(), &x)?;
            let solver = Solver::new(&a).map_err(|e| match e {
                Error::IllConditioned(cond) => Error::SingularDiffusion { index: i, cond },
                other => other,
            })?;
            Ok(j.tr_mul(&solver.solve_matrix(&j)))
        })
        .collect::<Result<_>>()?;
    let (mean, se) = mean_and_se(&terms);
    let sigma = sym(&mean);
    let covariance = invert_sigma(&sigma)?;
    Ok(DriftInformation {
        sigma,
        standard_error: se,
        covariance,
    })
}

fn mean_and_se(terms: &[DMatrix<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = terms.len() as f64;
    let (r, c) = terms[0].shape();
    let mut mean = DMatrix::zeros(r, c);
    for t in terms {
        mean += t;
    }
    mean /= n;
    let mut var = DMatrix::zeros(r, c);
    for t in terms {
        let dev = t - &mean;
        var += dev.component_mul(&dev);
    }
    var /= n - 1.0;
    let se = var.map(|v| (v / n).sqrt());
    (mean, se)
}

/// Exact `Σ` for `dX = (g − HX) dt + ϑ^{1/2} dW` with `μ = vec([g, −H])`:
/// `[[1, gᵀH⁻ᵀ], [H⁻¹g, H⁻¹ggᵀH⁻ᵀ + F]] ⊗ ϑ⁻¹`.
pub fn ou_drift_clt_covariance(g: &DVector<f64>, h: &DMatrix<f64>, vartheta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = h.nrows();
    if g.len() != d || vartheta.shape() != (d, d) {
        return Err(Error::DimensionMismatch("OU parameters g, H, vartheta disagree in dimension".into()));
    }
    let f = solve_lyapunov(h, vartheta)?;
    let m = Solver::new(h)?.solve(g);
    let mut block = DMatrix::zeros(d + 1, d + 1);
    block[(0, 0)] = 1.0;
    for i in 0..d {
        block[(0, i + 1)] = m[i];
        block[(i + 1, 0)] = m[i];
        for j in 0..d {
            block[(i + 1, j + 1)] = m[i] * m[j] + f[(i, j)];
        }
    }
    let inv = Solver::new(vartheta)?.inverse();
    Ok(sym(&kron(&block, &sym(&inv))))
}

/// Exact `Σ = F ⊗ ϑ⁻¹` for the centered OU `dX = −HX dt + ϑ^{1/2} dW`
/// with `μ = vec(H)`.
pub fn ou_centered_clt_covariance(h: &DMatrix<f64>, vartheta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let f = solve_lyapunov(h, vartheta)?;
    let inv = Solver::new(vartheta)?.inverse();
    Ok(sym(&kron(&f, &sym(&inv))))
}

/// Diffusion parameterization entering the limit law.
#[derive(Clone)]
pub enum LimitForm {
    /// `a = a₀ ϑ`.
    Form1(MatrixField),
    /// `σ = σ₀ ϑ^{1/2}`.
    Form2(MatrixField),
}

/// Limit law of `Δ(ε)^{-1/2} (ϑ̂ − ϑ₀)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionLimitLaw {
    /// `"form1"` or `"form2"`.
    pub form: &'static str,
    #[serde(rename = "C", serialize_with = "serialize_rows")]
    pub c: DMatrix<f64>,
    #[serde(rename = "P", serialize_with = "serialize_rows")]
    pub p: DMatrix<f64>,
    /// Covariance of `vec` of the limit (column-stacking).
    #[serde(serialize_with = "serialize_rows")]
    pub vec_covariance: DMatrix<f64>,
    /// Linear map taking `vec(ζ)` to `vec` of the limit.
    #[serde(skip)]
    pub map: DMatrix<f64>,
    #[serde(skip)]
    c_sqrt: DMatrix<f64>,
}

impl DiffusionLimitLaw {
    pub fn dim(&self) -> usize {
        (self.c.nrows() as f64).sqrt().round() as usize
    }

    /// One draw of `2 P⁻¹ (ζ)_sym`. The draw is symmetric whenever `P`
    /// commutes with symmetric matrices (scalar `a₀`, `σ₀ ∝ I`, or `d = 1`).
    pub fn sample(&self, noise: &mut NoiseStream) -> DMatrix<f64> {
        let d = self.dim();
        let mut z = DVector::zeros(d * d);
        noise.fill_normal(z.as_mut_slice());
        let v = &self.map * (&self.c_sqrt * z);
        unvec(&v, d, d)
    }
}

/// Assembles `C`, `P`, the limit map and `vec` covariance from the sample.
pub fn diffusion_clt_covariance(
    form: &LimitForm,
    vartheta0: &DMatrix<f64>,
    sample: &StationarySample,
) -> Result<DiffusionLimitLaw> {
    let d = vartheta0.nrows();
    if sample.points.ncols() != d {
        return Err(Error::DimensionMismatch("sample dimension differs from vartheta".into()));
    }
    let n = sample.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty stationary sample".into()));
    }
    let (field, name) = match form {
        LimitForm::Form1(a0) => (a0, "form1"),
        LimitForm::Form2(s0) => (s0, "form2"),
    };
    let pdim = if name == "form1" { d } else { d * d };
    let mut c = DMatrix::zeros(d * d, d * d);
    let mut p = DMatrix::zeros(pdim, pdim);
    for i in 0..n {
        let x = sample.point(i);
        let f = field(&x);
        if f.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!("{name} coefficient must be {d}x{d}")));
        }
        let a = match form {
            LimitForm::Form1(_) => {
                p += &f;
                sym(&(&f * vartheta0))
            }
            LimitForm::Form2(_) => {
                p += kron(&f, &f);
                sym(&(&f * vartheta0 * f.transpose()))
            }
        };
        c += kron(&a, &a);
    }
    c *= 0.5 / n as f64;
    p /= n as f64;
    let c = sym(&c);
    let pinv = Solver::new(&p)
        .map_err(|e| match e {
            Error::IllConditioned(k) => Error::SingularIntegral(k),
            other => other,
        })?
        .inverse();
    let eye = DMatrix::<f64>::identity(d * d, d * d);
    let sym_op = (&eye + commutation(d)) * 0.5;
    let map = match form {
        LimitForm::Form1(_) => kron(&DMatrix::identity(d, d), &pinv) * &sym_op * 2.0,
        LimitForm::Form2(_) => &pinv * &sym_op * 2.0,
    };
    let vec_covariance = sym(&(&map * &c * map.transpose()));
    let c_sqrt = psd_sqrt(&c)?;
    Ok(DiffusionLimitLaw {
        form: name,
        c,
        p,
        vec_covariance,
        map,
        c_sqrt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiffusionForm, DriftFn, JacobianFn, OuLayout};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn ou1(mu: f64, kappa2: f64) -> (ModelSpec, Parameter) {
        let model = ModelSpec::ou(1, OuLayout::Centered);
        let theta = Parameter::new(DVector::from_element(1, mu), DMatrix::from_element(1, 1, kappa2)).unwrap();
        (model, theta)
    }

    fn sample_moments(s: &StationarySample) -> (DVector<f64>, DMatrix<f64>) {
        let n = s.len() as f64;
        let mean = s.points.row_sum().transpose() / n;
        let mut cov = DMatrix::zeros(s.points.ncols(), s.points.ncols());
        for i in 0..s.len() {
            let dv = s.point(i) - &mean;
            cov += &dv * dv.transpose();
        }
        (mean, cov / (n - 1.0))
    }

    #[test]
    fn exact_scalar_ou_draws_have_unit_variance() {
        let (model, theta) = ou1(1.0, 2.0);
        let s = stationary_draws(&model, &theta, 10_000, 3).unwrap();
        assert_eq!(s.source, SampleSource::ExactOu);
        let (_, cov) = sample_moments(&s);
        assert!((cov[(0, 0)] - 1.0).abs() < 0.05);
    }

    #[test]
    fn exact_ou_mean_within_three_se() {
        let model = ModelSpec::ou(2, OuLayout::Full);
        let g = DVector::from_vec(vec![0.5, -0.3]);
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 0.8]);
        let vt = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let theta = Parameter::new(OuLayout::Full.mu_from(&g, &h), vt.clone()).unwrap();
        let s = stationary_draws(&model, &theta, 20_000, 4).unwrap();
        let (mean, cov) = sample_moments(&s);
        let target = h.clone().lu().solve(&g).unwrap();
        for k in 0..2 {
            let se = (cov[(k, k)] / s.len() as f64).sqrt();
            assert!((mean[k] - target[k]).abs() < 3.0 * se);
        }
    }

    fn generic_ou() -> (ModelSpec, Parameter) {
        let drift: DriftFn = Arc::new(|m: &DVector<f64>, x: &DVector<f64>| -x * m[0]);
        let jac: JacobianFn = Arc::new(|_m: &DVector<f64>, x: &DVector<f64>| DMatrix::from_element(1, 1, -x[0]));
        let a0: MatrixField = Arc::new(|_x: &DVector<f64>| DMatrix::identity(1, 1));
        let model = ModelSpec::general(1, 1, drift, Some(jac), DiffusionForm::Form1 { a0 }).with_state_independent_diffusion();
        let theta = Parameter::new(DVector::from_element(1, 1.0), DMatrix::from_element(1, 1, 2.0)).unwrap();
        (model, theta)
    }

    #[test]
    fn ergodic_path_matches_exact_sampler() {
        let (model, theta) = generic_ou();
        let n = 4000;
        let s = stationary_draws(&model, &theta, n, 11).unwrap();
        let SampleSource::ErgodicAverage { lag1_autocorrelation, .. } = s.source else {
            panic!("expected ergodic sample");
        };
        assert!(lag1_autocorrelation < 0.2);
        let (mean, cov) = sample_moments(&s);
        let se_mean = (1.0 / n as f64).sqrt();
        assert!(mean[0].abs() < 4.0 * se_mean, "{mean}");
        // Var of the sample variance of N(0,1) is 2/n; Euler at dt=0.005 adds a small bias.
        assert!((cov[(0, 0)] - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt() + 0.01, "{cov}");
    }

    #[test]
    fn non_dissipative_models_are_rejected() {
        let drift: DriftFn = Arc::new(|_m: &DVector<f64>, x: &DVector<f64>| x.clone());
        let a0: MatrixField = Arc::new(|_x: &DVector<f64>| DMatrix::identity(1, 1));
        let model = ModelSpec::general(1, 1, drift, None, DiffusionForm::Form1 { a0 });
        let theta = Parameter::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        assert!(matches!(stationary_draws(&model, &theta, 100, 0), Err(Error::NotDissipative { .. })));
    }

    #[test]
    fn scalar_drift_information() {
        let (model, theta) = ou1(1.0, 2.0);
        let s = stationary_draws(&model, &theta, 20_000, 5).unwrap();
        let info = drift_clt_covariance(&model, &theta, &s).unwrap();
        assert!((info.sigma[(0, 0)] - 0.5).abs() < 3.0 * info.standard_error[(0, 0)]);
        let exact = ou_centered_clt_covariance(&DMatrix::identity(1, 1), theta.vartheta()).unwrap();
        assert_relative_eq!(exact[(0, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn ou_block_scalar_assembly() {
        let sigma = ou_drift_clt_covariance(&DVector::zeros(1), &DMatrix::identity(1, 1), &DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert_relative_eq!(sigma, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]), epsilon = 1e-14);
    }

    #[test]
    fn ou_block_matches_monte_carlo() {
        let g = DVector::from_vec(vec![0.5, -0.3]);
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 0.8]);
        let vt = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let model = ModelSpec::ou(2, OuLayout::Full);
        let theta = Parameter::new(OuLayout::Full.mu_from(&g, &h), vt.clone()).unwrap();
        let s = stationary_draws(&model, &theta, 40_000, 6).unwrap();
        let info = drift_clt_covariance(&model, &theta, &s).unwrap();
        let exact = ou_drift_clt_covariance(&g, &h, &vt).unwrap();
        for (k, (&mc, &ex)) in info.sigma.iter().zip(exact.iter()).enumerate() {
            let se = info.standard_error.as_slice()[k];
            assert!((mc - ex).abs() <= 3.0 * se + 1e-10 * ex.abs().max(1.0), "entry {k}: {mc} vs {ex} (se {se})");
        }
        let eig = exact.symmetric_eigenvalues();
        assert!(eig.min() > 0.0);
        assert!(ou_drift_clt_covariance(&DVector::zeros(2), &h, &vt).unwrap()[(0, 2)] == 0.0);
    }

    #[test]
    fn scalar_diffusion_limit_variance() {
        let (model, theta) = ou1(1.0, 2.0);
        let s = stationary_draws(&model, &theta, 1000, 7).unwrap();
        let one: MatrixField = Arc::new(|_x: &DVector<f64>| DMatrix::identity(1, 1));
        let law = diffusion_clt_covariance(&LimitForm::Form1(one.clone()), theta.vartheta(), &s).unwrap();
        assert_relative_eq!(law.vec_covariance[(0, 0)], 2.0 * 4.0, max_relative = 1e-12);
        let law2 = diffusion_clt_covariance(&LimitForm::Form2(one), theta.vartheta(), &s).unwrap();
        assert_relative_eq!(law.vec_covariance, law2.vec_covariance, epsilon = 1e-12);
    }

    #[test]
    fn limit_sampler_matches_pushed_covariance() {
        let model = ModelSpec::ou(2, OuLayout::Centered);
        let vt = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let theta = Parameter::new(DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0]), vt.clone()).unwrap();
        let s = stationary_draws(&model, &theta, 2000, 8).unwrap();
        let a0: MatrixField = Arc::new(|x: &DVector<f64>| DMatrix::identity(2, 2) * (1.0 + x[0] * x[0] / (1.0 + x[0] * x[0])));
        let law = diffusion_clt_covariance(&LimitForm::Form1(a0), &vt, &s).unwrap();
        let mut noise = NoiseStream::new(1, 0);
        let n = 100_000;
        let mut acc = DMatrix::zeros(4, 4);
        let mut mean = DVector::zeros(4);
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let m = law.sample(&mut noise);
            assert!((&m - m.transpose()).amax() < 1e-12);
            let v = crate::linalg::vec(&m);
            mean += &v;
            draws.push(v);
        }
        mean /= n as f64;
        for v in &draws {
            let dv = v - &mean;
            acc += &dv * dv.transpose();
        }
        acc /= (n - 1) as f64;
        let rel = (&acc - &law.vec_covariance).norm() / law.vec_covariance.norm();
        assert!(rel < 0.02, "rel {rel}");
    }

    #[test]
    fn limit_law_json_keys() {
        let (model, theta) = ou1(1.0, 2.0);
        let s = stationary_draws(&model, &theta, 10, 7).unwrap();
        let one: MatrixField = Arc::new(|_x: &DVector<f64>| DMatrix::identity(1, 1));
        let law = diffusion_clt_covariance(&LimitForm::Form1(one), theta.vartheta(), &s).unwrap();
        let v = serde_json::to_value(&law).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["C", "P", "form", "vec_covariance"]);
        assert_eq!(v["form"], "form1");
    }
}
