//! Monte Carlo harness: consistency decay along an `ε` grid and CLT checks
//! of standardized estimates against their limiting covariance.
//!
//! Replication `r` at grid point `j` draws its noise from stream
//! `stream_id(j, r)` of `seed_base`, so every replication is a pure function
//! of the plan. Replications run on the current rayon pool, are collected in
//! index order and reduced sequentially, which keeps reports bit-identical
//! for any number of worker threads.

pub mod fast;
pub mod stats;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::{
    diffusion_clt_covariance, drift_clt_covariance, ou_centered_clt_covariance, ou_drift_clt_covariance,
    stationary_draws, LimitForm,
};
use crate::diffusion::{estimate_form1, estimate_form2};
use crate::drift::{amle_kron, amle_linear, amle_newton, FitStatus, NewtonSettings, PenaltySpec};
use crate::error::{Error, Result};
use crate::linalg::{commutation, serialize_rows, sym, to_rows};
use crate::model::{DriftStructure, ModelSpec, OuLayout, Parameter};
use crate::record::{DiscreteRecord, ScalingRegime};
use crate::rng::stream_id;
use crate::simulate::{euler_maruyama, exact_ou, SimConfig, DEFAULT_SUBSTEPS};


/// Which estimator the harness exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    DriftLinear,
    DriftNewton,
    DiffForm1,
    DiffForm2,
}

impl EstimatorKind {
    pub fn is_drift(self) -> bool {
        matches!(self, EstimatorKind::DriftLinear | EstimatorKind::DriftNewton)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Consistency,
    Clt,
}

/// Newton settings for [`EstimatorKind::DriftNewton`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonPlan {
    pub alpha: f64,
    pub p: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Starting point; the true `μ₀` when absent.
    pub init: Option<Vec<f64>>,
}

impl Default for NewtonPlan {
    fn default() -> Self {
        NewtonPlan {
            alpha: 1.0,
            p: 2.0,
            tol: 1e-8,
            max_iter: 100,
            init: None,
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_stationary_points() -> usize {
    20_000
}

fn default_jackknife_groups() -> usize {
    20
}

/// Serializable part of an experiment plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSettings {
    /// Strictly decreasing values in `(0, 1]`.
    pub epsilon_grid: Vec<f64>,
    /// `γ` in `Δ̃(ε) = ε^γ`.
    pub gap_exponent: f64,
    pub replications: usize,
    pub estimator: EstimatorKind,
    pub seed_base: u64,
    /// Simulate OU models with the exact transition instead of Euler.
    #[serde(default)]
    pub use_exact_ou: bool,
    /// Initial state; zero when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Simulator substeps per gap; 1 for exact OU and 16 for Euler when absent.
    #[serde(default)]
    pub substeps: Option<usize>,
    /// Plug the true `ϑ₀` into the drift estimator instead of `ϑ̂`.
    #[serde(default)]
    pub oracle_vartheta: bool,
    /// Permit gap exponents outside the theorem's regime (negative controls).
    #[serde(default)]
    pub allow_regime_violation: bool,
    /// Accumulate sufficient statistics instead of storing paths when the
    /// model and estimator allow it.
    #[serde(default = "default_true")]
    pub streaming: bool,
    #[serde(default)]
    pub newton: NewtonPlan,
    /// Stationary draws used for Monte Carlo limit covariances.
    #[serde(default = "default_stationary_points")]
    pub stationary_points: usize,
    #[serde(default = "default_jackknife_groups")]
    pub jackknife_groups: usize,
}

impl ExperimentSettings {
    pub fn new(epsilon_grid: Vec<f64>, gap_exponent: f64, replications: usize, estimator: EstimatorKind, seed_base: u64) -> Self {
        ExperimentSettings {
            epsilon_grid,
            gap_exponent,
            replications,
            estimator,
            seed_base,
            use_exact_ou: false,
            x0: None,
            substeps: None,
            oracle_vartheta: false,
            allow_regime_violation: false,
            streaming: true,
            newton: NewtonPlan::default(),
            stationary_points: default_stationary_points(),
            jackknife_groups: default_jackknife_groups(),
        }
    }
}

/// A model, its true parameter and the run settings.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub model: ModelSpec,
    /// Label recorded in reports.
    pub model_name: String,
    pub theta0: Parameter,
    pub settings: ExperimentSettings,
}

/// JSON view of a parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterView {
    pub mu: Vec<f64>,
    pub vartheta: Vec<Vec<f64>>,
}

impl From<&Parameter> for ParameterView {
    fn from(p: &Parameter) -> Self {
        ParameterView {
            mu: p.mu().iter().copied().collect(),
            vartheta: to_rows(p.vartheta()),
        }
    }
}

/// Limiting covariance of the standardized estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theory {
    #[serde(serialize_with = "serialize_rows")]
    pub covariance: DMatrix<f64>,
    /// `closed_form` or `monte_carlo`.
    pub source: &'static str,
    /// Entrywise standard error of `Σ` for Monte Carlo drift information.
    #[serde(serialize_with = "serialize_opt_rows")]
    pub information_se: Option<DMatrix<f64>>,
}

fn serialize_opt_rows<S: serde::Serializer>(m: &Option<DMatrix<f64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match m {
        Some(m) => serialize_rows(m, s),
        None => s.serialize_none(),
    }
}

/// Per-`ε` summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonRow {
    pub epsilon: f64,
    pub gap: f64,
    pub m: usize,
    pub scaled_gap: f64,
    /// Multiplier applied to `θ̂ − θ₀` before covariance and normality checks.
    pub standardization: f64,
    pub replications: usize,
    pub successes: usize,
    pub failures: usize,
    pub failure_kinds: BTreeMap<String, usize>,
    /// False when failures exceed 1% of the replications.
    pub valid: bool,
    pub bias: Vec<f64>,
    pub bias_se: Vec<f64>,
    pub bias_norm: f64,
    pub bias_norm_se: f64,
    pub rmse: f64,
    pub rmse_se: f64,
    #[serde(serialize_with = "serialize_rows")]
    pub empirical_covariance: DMatrix<f64>,
    #[serde(serialize_with = "serialize_rows")]
    pub empirical_covariance_se: DMatrix<f64>,
    pub cov_frob_err: Option<f64>,
    pub cov_frob_err_se: Option<f64>,
    pub ks_stat: Option<f64>,
    pub ks_stat_se: Option<f64>,
    pub ks_critical_1pct: Option<f64>,
}

/// Comparison of consecutive grid points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayStep {
    pub from_epsilon: f64,
    pub to_epsilon: f64,
    pub rmse_ratio: f64,
    /// `√(ε'/ε)` for drift, `√(ε'Δ̃'/(εΔ̃))` for diffusion.
    pub predicted_ratio: f64,
    /// `rmse_ratio / predicted_ratio`.
    pub rate_factor: f64,
    /// `(rmse − rmse') / √(se² + se'²)`.
    pub z: f64,
    pub significant: bool,
}

/// One replication's outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub grid_index: usize,
    pub replication: usize,
    pub estimate: std::result::Result<DVector<f64>, String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub mode: RunMode,
    pub model: String,
    pub theta0: ParameterView,
    pub settings: ExperimentSettings,
    pub config_hash: String,
    /// Names of the estimate coordinates.
    pub coordinates: Vec<String>,
    pub theory: Option<Theory>,
    pub rows: Vec<EpsilonRow>,
    pub decay: Vec<DecayStep>,
    /// True when every consecutive RMSE decrease exceeds two combined
    /// standard errors.
    pub decay_significant: bool,
    pub valid: bool,
    pub tolerance_note: &'static str,
    #[serde(skip)]
    pub raw: Vec<ReplicationRecord>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

const TOLERANCE_NOTE: &str = "covariance and normality tolerances are engineering choices; \
limit theorems give no rate for covariance convergence";

impl ExperimentPlan {
    pub fn validate(&self, mode: RunMode) -> Result<()> {
        let s = &self.settings;
        let d = self.model.dim_state();
        self.model.check_parameter(&self.theta0)?;
        if s.epsilon_grid.is_empty() {
            return Err(Error::InvalidInput("epsilon_grid must not be empty".into()));
        }
        if s.epsilon_grid.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(Error::InvalidInput("epsilon_grid values must lie in (0, 1]".into()));
        }
        if s.epsilon_grid.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::InvalidInput("epsilon_grid must be strictly decreasing".into()));
        }
        if s.replications < 2 {
            return Err(Error::InvalidInput("replications must be at least 2".into()));
        }
        if !(s.gap_exponent >= 0.0) {
            return Err(Error::InvalidInput("gap_exponent must be non-negative".into()));
        }
        let needed = match mode {
            RunMode::Consistency => 0.0,
            RunMode::Clt => 1.0,
        };
        if !(s.gap_exponent > needed) && !s.allow_regime_violation {
            return Err(Error::InvalidInput(format!(
                "gap_exponent {} is outside the {} regime (needs > {needed}); set allow_regime_violation for a negative control",
                s.gap_exponent,
                match mode {
                    RunMode::Consistency => "consistency",
                    RunMode::Clt => "CLT",
                }
            )));
        }
        if let Some(x0) = &s.x0 {
            if x0.len() != d {
                return Err(Error::DimensionMismatch(format!("x0 has length {}, model dimension is {d}", x0.len())));
            }
        }
        if s.use_exact_ou && self.model.ou_layout().is_none() {
            return Err(Error::InvalidInput("use_exact_ou requires an OU model".into()));
        }
        if s.substeps == Some(0) {
            return Err(Error::InvalidInput("substeps must be at least 1".into()));
        }
        match s.estimator {
            EstimatorKind::DriftLinear if matches!(self.model.structure(), DriftStructure::General { .. }) => {
                return Err(Error::InvalidInput("drift_linear needs a linear drift model".into()));
            }
            EstimatorKind::DiffForm1 if self.model.form1_a0().is_none() => {
                return Err(Error::InvalidInput("diff_form1 needs a Form 1 model".into()));
            }
            EstimatorKind::DiffForm2 if self.model.form2_sigma0().is_none() => {
                return Err(Error::InvalidInput("diff_form2 needs a Form 2 model".into()));
            }
            _ => {}
        }
        if s.estimator.is_drift()
            && !s.oracle_vartheta
            && self.model.form1_a0().is_none()
            && self.model.form2_sigma0().is_none()
        {
            return Err(Error::InvalidInput(
                "drift runs on a model without Form 1/2 diffusion need oracle_vartheta".into(),
            ));
        }
        if s.estimator == EstimatorKind::DriftNewton {
            PenaltySpec::new(s.newton.alpha, s.newton.p)?;
            if let Some(init) = &s.newton.init {
                if init.len() != self.model.dim_drift_param() {
                    return Err(Error::DimensionMismatch("newton.init length differs from the drift parameter".into()));
                }
            }
        }
        for &e in &s.epsilon_grid {
            ScalingRegime::with_gap_exponent(e, s.gap_exponent)?;
        }
        Ok(())
    }

    pub fn regimes(&self) -> Result<Vec<ScalingRegime>> {
        self.settings
            .epsilon_grid
            .iter()
            .map(|&e| ScalingRegime::with_gap_exponent(e, self.settings.gap_exponent))
            .collect()
    }

    /// SHA-256 of the canonical JSON of model label, `θ₀`, settings and mode.
    pub fn config_hash(&self, mode: RunMode) -> String {
        let canonical = serde_json::json!({
            "mode": mode,
            "model": self.model_name,
            "theta0": ParameterView::from(&self.theta0),
            "settings": self.settings,
        });
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn truth(&self) -> DVector<f64> {
        if self.settings.estimator.is_drift() {
            self.theta0.mu().clone()
        } else {
            vech(self.theta0.vartheta())
        }
    }

    fn coordinates(&self) -> Vec<String> {
        if self.settings.estimator.is_drift() {
            (1..=self.model.dim_drift_param()).map(|k| format!("mu_{k}")).collect()
        } else {
            let d = self.model.dim_state();
            let mut out = Vec::new();
            for c in 0..d {
                for r in c..d {
                    out.push(format!("vartheta_{}{}", r + 1, c + 1));
                }
            }
            out
        }
    }

    fn standardization(&self, regime: &ScalingRegime) -> f64 {
        if self.settings.estimator.is_drift() {
            1.0 / regime.epsilon().sqrt()
        } else {
            1.0 / regime.scaled_gap().sqrt()
        }
    }

    fn fast_path(&self) -> bool {
        let s = &self.settings;
        s.streaming && s.use_exact_ou && self.model.ou_layout().is_some() && s.estimator != EstimatorKind::DriftNewton
    }

    fn sim_config(&self, regime: ScalingRegime, grid_index: usize, replication: usize) -> SimConfig {
        let s = &self.settings;
        let d = self.model.dim_state();
        let k = s
            .substeps
            .unwrap_or(if s.use_exact_ou { 1 } else { DEFAULT_SUBSTEPS });
        SimConfig::new(s.x0.clone().unwrap_or_else(|| vec![0.0; d]), regime, s.seed_base)
            .with_substeps(k)
            .with_stream(stream_id(grid_index, replication))
    }

    fn simulate(&self, cfg: &SimConfig) -> Result<DiscreteRecord> {
        if self.settings.use_exact_ou {
            let layout = self.model.ou_layout().expect("validated");
            let (g, h) = layout.g_h(self.theta0.mu(), self.model.dim_state());
            exact_ou(&g, &h, self.theta0.vartheta(), cfg)
        } else {
            euler_maruyama(&self.model, &self.theta0, cfg)
        }
    }

    /// Runs one replication and returns the estimate vector.
    pub fn replicate(&self, grid_index: usize, regime: ScalingRegime, replication: usize) -> Result<DVector<f64>> {
        let cfg = self.sim_config(regime, grid_index, replication);
        if self.fast_path() {
            return self.replicate_streaming(&cfg);
        }
        let data = self.simulate(&cfg)?;
        self.estimate(&data, regime.epsilon())
    }

    fn replicate_streaming(&self, cfg: &SimConfig) -> Result<DVector<f64>> {
        let d = self.model.dim_state();
        let layout = self.model.ou_layout().expect("fast path needs OU");
        let (g, h) = layout.g_h(self.theta0.mu(), d);
        let sums = fast::exact_ou_sums(&g, &h, self.theta0.vartheta(), cfg)?;
        let gap = cfg.regime.gap();
        match self.settings.estimator {
            EstimatorKind::DiffForm1 => Ok(vech(&sums.form1(gap)?.symmetrized)),
            EstimatorKind::DiffForm2 => Ok(vech(&sums.form2(gap)?.symmetrized)),
            EstimatorKind::DriftLinear => {
                let vh = if self.settings.oracle_vartheta {
                    self.theta0.vartheta().clone()
                } else {
                    sums.form1(gap)?.symmetrized
                };
                sums.drift(layout, gap, &vh)
            }
            EstimatorKind::DriftNewton => unreachable!("excluded from the fast path"),
        }
    }

    /// Applies the plan's estimator to a record (plug-in `ϑ̂` first for drift).
    pub fn estimate(&self, data: &DiscreteRecord, epsilon: f64) -> Result<DVector<f64>> {
        let s = &self.settings;
        let plug_in = || -> Result<DMatrix<f64>> {
            if s.oracle_vartheta {
                return Ok(self.theta0.vartheta().clone());
            }
            match (self.model.form1_a0(), self.model.form2_sigma0()) {
                (Some(a0), _) => Ok(estimate_form1(data, &a0)?.symmetrized),
                (None, Some(s0)) => Ok(estimate_form2(data, &s0)?.symmetrized),
                (None, None) => Err(Error::InvalidInput("no diffusion estimator for this model".into())),
            }
        };
        match s.estimator {
            EstimatorKind::DiffForm1 => {
                let a0 = self.model.form1_a0().expect("validated");
                Ok(vech(&estimate_form1(data, &a0)?.symmetrized))
            }
            EstimatorKind::DiffForm2 => {
                let s0 = self.model.form2_sigma0().expect("validated");
                Ok(vech(&estimate_form2(data, &s0)?.symmetrized))
            }
            EstimatorKind::DriftLinear => {
                let vh = plug_in()?;
                let fit = match self.model.structure() {
                    DriftStructure::LinearKron { .. } => amle_kron(data, &self.model, &vh)?,
                    _ => amle_linear(data, &self.model, &vh)?,
                };
                Ok(fit.mu_hat)
            }
            EstimatorKind::DriftNewton => {
                let vh = plug_in()?;
                let n = &s.newton;
                let init = n
                    .init
                    .as_ref()
                    .map(|v| DVector::from_column_slice(v))
                    .unwrap_or_else(|| self.theta0.mu().clone());
                let fit = amle_newton(
                    data,
                    &self.model,
                    &vh,
                    PenaltySpec::new(n.alpha, n.p)?,
                    epsilon,
                    &init,
                    NewtonSettings {
                        tol: n.tol,
                        max_iter: n.max_iter,
                    },
                )?;
                match fit.status {
                    FitStatus::Converged | FitStatus::ClosedForm => Ok(fit.mu_hat),
                    other => Err(Error::InvalidInput(format!("newton did not converge: {other:?}"))),
                }
            }
        }
    }

    /// Limiting covariance of the standardized estimate.
    pub fn theory(&self) -> Result<Theory> {
        let d = self.model.dim_state();
        let s = &self.settings;
        if s.estimator.is_drift() {
            if let Some(layout) = self.model.ou_layout() {
                let (g, h) = layout.g_h(self.theta0.mu(), d);
                let sigma = match layout {
                    OuLayout::Centered => ou_centered_clt_covariance(&h, self.theta0.vartheta())?,
                    OuLayout::Full => ou_drift_clt_covariance(&g, &h, self.theta0.vartheta())?,
                };
                let cov = crate::linalg::Solver::new(&sigma)
                    .map_err(|e| match e {
                        Error::IllConditioned(c) => Error::SingularSigma(c),
                        other => other,
                    })?
                    .inverse();
                return Ok(Theory {
                    covariance: sym(&cov),
                    source: "closed_form",
                    information_se: None,
                });
            }
            let sample = stationary_draws(&self.model, &self.theta0, s.stationary_points, s.seed_base)?;
            let info = drift_clt_covariance(&self.model, &self.theta0, &sample)?;
            return Ok(Theory {
                covariance: info.covariance,
                source: "monte_carlo",
                information_se: Some(info.standard_error),
            });
        }
        let form = match s.estimator {
            EstimatorKind::DiffForm1 => LimitForm::Form1(self.model.form1_a0().expect("validated")),
            _ => LimitForm::Form2(self.model.form2_sigma0().expect("validated")),
        };
        let sample = stationary_draws(&self.model, &self.theta0, s.stationary_points, s.seed_base)?;
        let law = diffusion_clt_covariance(&form, self.theta0.vartheta(), &sample)?;
        // The estimates are symmetrized, so compare against the law of the
        // symmetrized limit, restricted to lower-triangular coordinates.
        let eye = DMatrix::<f64>::identity(d * d, d * d);
        let sym_op = (&eye + commutation(d)) * 0.5;
        let full = &sym_op * &law.vec_covariance * &sym_op;
        let idx = vech_indices(d);
        let k = idx.len();
        let cov = DMatrix::from_fn(k, k, |i, j| full[(idx[i], idx[j])]);
        let source = if self.model.ou_layout().is_some() && self.model.state_independent_diffusion() {
            "closed_form"
        } else {
            "monte_carlo"
        };
        Ok(Theory {
            covariance: sym(&cov),
            source,
            information_se: None,
        })
    }
}

/// Column-major positions of the lower triangle in `vec(A)`.
pub fn vech_indices(d: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for c in 0..d {
        for r in c..d {
            out.push(c * d + r);
        }
    }
    out
}

/// Lower-triangular coordinates of a symmetric matrix, column by column.
pub fn vech(a: &DMatrix<f64>) -> DVector<f64> {
    let d = a.nrows();
    DVector::from_iterator(d * (d + 1) / 2, vech_indices(d).into_iter().map(|i| a.as_slice()[i]))
}

fn summarize(
    plan: &ExperimentPlan,
    regime: &ScalingRegime,
    outcomes: &[ReplicationRecord],
    theory: Option<&Theory>,
    truth: &DVector<f64>,
) -> EpsilonRow {
    let k = truth.len();
    let scale = plan.standardization(regime);
    let groups = plan.settings.jackknife_groups;
    let mut failure_kinds = BTreeMap::new();
    let mut errors: Vec<DVector<f64>> = Vec::new();
    for o in outcomes {
        match &o.estimate {
            Ok(v) => errors.push(v - truth),
            Err(name) => *failure_kinds.entry(name.clone()).or_insert(0) += 1,
        }
    }
    let failures = outcomes.len() - errors.len();
    let n = errors.len();
    let nan_matrix = DMatrix::from_element(k, k, f64::NAN);
    let mut row = EpsilonRow {
        epsilon: regime.epsilon(),
        gap: regime.gap(),
        m: regime.m(),
        scaled_gap: regime.scaled_gap(),
        standardization: scale,
        replications: outcomes.len(),
        successes: n,
        failures,
        failure_kinds,
        valid: failures as f64 <= 0.01 * outcomes.len() as f64,
        bias: vec![f64::NAN; k],
        bias_se: vec![f64::NAN; k],
        bias_norm: f64::NAN,
        bias_norm_se: f64::NAN,
        rmse: f64::NAN,
        rmse_se: f64::NAN,
        empirical_covariance: nan_matrix.clone(),
        empirical_covariance_se: nan_matrix,
        cov_frob_err: None,
        cov_frob_err_se: None,
        ks_stat: None,
        ks_stat_se: None,
        ks_critical_1pct: None,
    };
    if n < 2 {
        return row;
    }
    let mean = stats::mean_vector(&errors);
    let err_cov = stats::covariance(&errors);
    row.bias = mean.iter().copied().collect();
    row.bias_se = (0..k).map(|j| (err_cov[(j, j)] / n as f64).sqrt()).collect();
    row.bias_norm = mean.norm();
    row.bias_norm_se = if row.bias_norm > 0.0 {
        let g = &mean / row.bias_norm;
        (g.dot(&(&err_cov * &g)) / n as f64).sqrt()
    } else {
        f64::NAN
    };
    let squares: Vec<f64> = errors.iter().map(|e| e.norm_squared()).collect();
    let (mse, mse_se) = stats::mean_se(&squares);
    row.rmse = mse.sqrt();
    row.rmse_se = mse_se / (2.0 * row.rmse);

    let z: Vec<DVector<f64>> = errors.iter().map(|e| e * scale).collect();
    row.empirical_covariance = stats::covariance(&z);
    row.empirical_covariance_se =
        DMatrix::from_fn(k, k, |i, j| stats::jackknife_se(&z, groups, |s| stats::covariance(s)[(i, j)]));
    if let Some(t) = theory {
        let th = &t.covariance;
        row.cov_frob_err = Some(stats::frobenius_rel(&row.empirical_covariance, th));
        row.cov_frob_err_se = Some(stats::jackknife_se(&z, groups, |s| {
            stats::frobenius_rel(&stats::covariance(s), th)
        }));
        if let Ok(dist) = stats::mahalanobis(&z, th) {
            row.ks_stat = Some(stats::chi2_ks(&dist, k));
            row.ks_stat_se = Some(stats::jackknife_se(&dist, groups, |s| stats::chi2_ks(s, k)));
            row.ks_critical_1pct = Some(stats::ks_critical_1pct(n));
        }
    }
    row
}

fn decay(plan: &ExperimentPlan, rows: &[EpsilonRow]) -> Vec<DecayStep> {
    rows.windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let predicted = if plan.settings.estimator.is_drift() {
                (b.epsilon / a.epsilon).sqrt()
            } else {
                (b.scaled_gap / a.scaled_gap).sqrt()
            };
            let ratio = b.rmse / a.rmse;
            let z = (a.rmse - b.rmse) / (a.rmse_se.powi(2) + b.rmse_se.powi(2)).sqrt();
            DecayStep {
                from_epsilon: a.epsilon,
                to_epsilon: b.epsilon,
                rmse_ratio: ratio,
                predicted_ratio: predicted,
                rate_factor: ratio / predicted,
                z,
                significant: z > 2.0,
            }
        })
        .collect()
}

/// Runs the plan. CLT mode attaches the limiting covariance and normality
/// checks; both modes report RMSE decay along the grid.
pub fn run(plan: &ExperimentPlan, mode: RunMode) -> Result<ExperimentReport> {
    plan.validate(mode)?;
    let start = Instant::now();
    let theory = match mode {
        RunMode::Clt => Some(plan.theory()?),
        RunMode::Consistency => None,
    };
    let truth = plan.truth();
    let regimes = plan.regimes()?;
    let mut rows = Vec::with_capacity(regimes.len());
    let mut raw = Vec::new();
    for (j, regime) in regimes.iter().enumerate() {
        let outcomes: Vec<ReplicationRecord> = (0..plan.settings.replications)
            .into_par_iter()
            .map(|r| ReplicationRecord {
                grid_index: j,
                replication: r,
                estimate: plan
                    .replicate(j, *regime, r)
                    .and_then(|v| {
                        if v.iter().all(|x| x.is_finite()) {
                            Ok(v)
                        } else {
                            Err(Error::NonFiniteOutput("estimate"))
                        }
                    })
                    .map_err(|e| e.name().to_string()),
            })
            .collect();
        rows.push(summarize(plan, regime, &outcomes, theory.as_ref(), &truth));
        raw.extend(outcomes);
    }
    let decay = decay(plan, &rows);
    let decay_significant = decay.iter().all(|s| s.significant);
    let valid = rows.iter().all(|r| r.valid);
    Ok(ExperimentReport {
        mode,
        model: plan.model_name.clone(),
        theta0: ParameterView::from(&plan.theta0),
        settings: plan.settings.clone(),
        config_hash: plan.config_hash(mode),
        coordinates: plan.coordinates(),
        theory,
        rows,
        decay,
        decay_significant,
        valid,
        tolerance_note: TOLERANCE_NOTE,
        raw,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn run_consistency(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    run(plan, RunMode::Consistency)
}

pub fn run_clt(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    run(plan, RunMode::Clt)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

impl ExperimentReport {
    /// Writes `report.json`, `summary.csv`, `raw_estimates.csv` and
    /// `timing.json` into `dir`. Everything except `timing.json` is a
    /// deterministic function of the plan.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(dir.join("report.json"), json + "\n")?;

        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.write_record(["epsilon", "gap", "m", "bias", "rmse", "cov_frob_err", "ks_stat", "failures"])?;
        for r in &self.rows {
            w.write_record([
                fmt_float(r.epsilon),
                fmt_float(r.gap),
                r.m.to_string(),
                fmt_float(r.bias_norm),
                fmt_float(r.rmse),
                opt(r.cov_frob_err),
                opt(r.ks_stat),
                r.failures.to_string(),
            ])?;
        }
        w.flush()?;

        let k = self.coordinates.len();
        let mut w = csv::Writer::from_path(dir.join("raw_estimates.csv"))?;
        let mut header = vec!["epsilon_index".to_string(), "epsilon".into(), "replication".into(), "status".into()];
        header.extend(self.coordinates.iter().cloned());
        header.extend(self.coordinates.iter().map(|c| format!("z_{c}")));
        w.write_record(&header)?;
        let truth: Vec<f64> = match self.settings.estimator.is_drift() {
            true => self.theta0.mu.clone(),
            false => {
                let rows = &self.theta0.vartheta;
                let d = rows.len();
                let mut v = Vec::new();
                for c in 0..d {
                    for r in c..d {
                        v.push(rows[r][c]);
                    }
                }
                v
            }
        };
        for rec in &self.raw {
            let row = &self.rows[rec.grid_index];
            let mut fields = vec![
                rec.grid_index.to_string(),
                fmt_float(row.epsilon),
                rec.replication.to_string(),
            ];
            match &rec.estimate {
                Ok(v) => {
                    fields.push("ok".into());
                    fields.extend(v.iter().map(|x| fmt_float(*x)));
                    fields.extend(v.iter().zip(&truth).map(|(x, t)| fmt_float((x - t) * row.standardization)));
                }
                Err(name) => {
                    fields.push(name.clone());
                    fields.extend(std::iter::repeat(String::new()).take(2 * k));
                }
            }
            w.write_record(&fields)?;
        }
        w.flush()?;

        let timing = serde_json::json!({
            "wall_seconds": self.wall_seconds,
            "threads": rayon::current_num_threads(),
        });
        fs::write(dir.join("timing.json"), format!("{timing:#}\n"))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou_plan(estimator: EstimatorKind, grid: Vec<f64>, reps: usize) -> ExperimentPlan {
        let mut settings = ExperimentSettings::new(grid, 1.5, reps, estimator, 42);
        settings.use_exact_ou = true;
        settings.jackknife_groups = 5;
        ExperimentPlan {
            model: ModelSpec::ou(1, OuLayout::Centered),
            model_name: "ou1d".into(),
            theta0: Parameter::new(DVector::from_element(1, 1.0), DMatrix::from_element(1, 1, 2.0)).unwrap(),
            settings,
        }
    }

    #[test]
    fn fast_and_record_paths_agree() {
        for est in [EstimatorKind::DriftLinear, EstimatorKind::DiffForm1, EstimatorKind::DiffForm2] {
            let plan = ou_plan(est, vec![0.1], 3);
            let mut slow = plan.clone();
            slow.settings.streaming = false;
            let regime = plan.regimes().unwrap()[0];
            for r in 0..3 {
                let a = plan.replicate(0, regime, r).unwrap();
                let b = slow.replicate(0, regime, r).unwrap();
                assert!((&a - &b).amax() < 1e-10 * b.amax().max(1.0), "{est:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn report_shape_and_determinism() {
        let plan = ou_plan(EstimatorKind::DriftLinear, vec![0.2, 0.1], 20);
        let a = run_clt(&plan).unwrap();
        assert_eq!(a.rows.len(), 2);
        assert_eq!(a.decay.len(), 1);
        assert_eq!(a.raw.len(), 40);
        let b = run_clt(&plan).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| run_clt(&plan)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
        let theory = a.theory.unwrap();
        assert!((theory.covariance[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn regime_violation_needs_override() {
        let mut plan = ou_plan(EstimatorKind::DriftLinear, vec![0.5], 4);
        plan.settings.gap_exponent = 1.0;
        assert!(run_clt(&plan).is_err());
        assert!(run_consistency(&plan).is_ok());
        plan.settings.gap_exponent = 0.0;
        assert!(run_consistency(&plan).is_err());
        plan.settings.allow_regime_violation = true;
        assert!(run_consistency(&plan).is_ok());
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        // Zero Newton iterations cannot converge, so every replication fails.
        let mut plan = ou_plan(EstimatorKind::DriftNewton, vec![0.5], 5);
        plan.settings.use_exact_ou = false;
        plan.settings.newton.max_iter = 0;
        let rep = run_consistency(&plan).unwrap();
        assert_eq!(rep.rows[0].failures, 5);
        assert!(!rep.valid);
        assert_eq!(rep.rows[0].failure_kinds.len(), 1);
    }

    #[test]
    fn diffusion_theory_scalar() {
        let plan = ou_plan(EstimatorKind::DiffForm1, vec![0.1], 2);
        let t = plan.theory().unwrap();
        assert!((t.covariance[(0, 0)] - 8.0).abs() < 1e-10);
    }

    #[test]
    fn vech_layout() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        assert_eq!(vech(&a).as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(vech_indices(3), vec![0, 1, 2, 4, 5, 8]);
    }

    #[test]
    fn report_directory_files() {
        let plan = ou_plan(EstimatorKind::DiffForm1, vec![0.2, 0.1], 6);
        let rep = run_clt(&plan).unwrap();
        let dir = tempfile::tempdir().unwrap();
        rep.write_dir(dir.path()).unwrap();
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines[0], "epsilon,gap,m,bias,rmse,cov_frob_err,ks_stat,failures");
        assert_eq!(lines.len(), 3);
        let raw = std::fs::read_to_string(dir.path().join("raw_estimates.csv")).unwrap();
        assert_eq!(raw.lines().count(), 13);
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert!(json.get("wall_seconds").is_none());
        assert!(dir.path().join("timing.json").exists());
    }
}
