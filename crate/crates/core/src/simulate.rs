//! Path simulation on the original clock or the scaled clock `t ↦ ε t`.
//!
//! Both simulators take `K` internal substeps per observation gap and draw
//! `d` standard normals per substep from a [`NoiseStream`] keyed by
//! `(seed, stream)`, in the same order. An Euler run and an exact OU run with
//! the same key and `K` are therefore driven by the same Brownian increments.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm, psd_sqrt, solve_lyapunov, Solver};
use crate::model::{validate_vartheta, ModelSpec, Parameter};
use crate::record::{Clock, DiscreteRecord, ScalingRegime};
use crate::rng::NoiseStream;

/// States with norm above this abort the path.
pub const BLOWUP_NORM: f64 = 1e12;

pub const DEFAULT_SUBSTEPS: usize = 16;

fn default_substeps() -> usize {
    DEFAULT_SUBSTEPS
}

/// Simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub x0: Vec<f64>,
    pub regime: ScalingRegime,
    /// Internal steps per observation gap (`K ≥ 1`).
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    pub seed: u64,
    /// ChaCha stream id, used to separate Monte Carlo replications.
    #[serde(default)]
    pub stream: u64,
    #[serde(default)]
    pub clock: Clock,
}

impl SimConfig {
    pub fn new(x0: Vec<f64>, regime: ScalingRegime, seed: u64) -> Self {
        SimConfig {
            x0,
            regime,
            substeps: DEFAULT_SUBSTEPS,
            seed,
            stream: 0,
            clock: Clock::Original,
        }
    }

    pub fn with_substeps(mut self, k: usize) -> Self {
        self.substeps = k;
        self
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub(crate) fn validate(&self, d: usize) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::InvalidInput("substeps must be at least 1".into()));
        }
        if self.x0.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "x0 has length {}, model dimension is {d}",
                self.x0.len()
            )));
        }
        Ok(())
    }

    fn time_scale(&self) -> f64 {
        match self.clock {
            Clock::Original => 1.0,
            Clock::Scaled => self.regime.epsilon(),
        }
    }

    /// Observation gap on the configured clock.
    fn record_gap(&self) -> f64 {
        self.regime.gap() * self.time_scale()
    }
}

/// Receives observations `X(t₀), X(t₁), …` in order.
pub trait PathObserver {
    fn observe(&mut self, x: &[f64]);
}

impl<F: FnMut(&[f64])> PathObserver for F {
    fn observe(&mut self, x: &[f64]) {
        self(x)
    }
}

struct Collector {
    states: Vec<f64>,
}

impl PathObserver for Collector {
    fn observe(&mut self, x: &[f64]) {
        self.states.extend_from_slice(x);
    }
}

fn into_record(cfg: &SimConfig, states: Vec<f64>, d: usize) -> Result<DiscreteRecord> {
    let gap = cfg.record_gap();
    let times = (0..=cfg.regime.m()).map(|i| i as f64 * gap).collect();
    DiscreteRecord::with_time_scale(times, states, d, cfg.time_scale())
}

fn check_blowup(x: &[f64], step: u64) -> Result<()> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm <= BLOWUP_NORM) {
        return Err(Error::Blowup { step, norm });
    }
    Ok(())
}

/// Euler–Maruyama with `K` substeps per gap; returns the `m + 1` observations.
pub fn euler_maruyama(model: &ModelSpec, theta: &Parameter, cfg: &SimConfig) -> Result<DiscreteRecord> {
    let d = model.dim_state();
    let mut c = Collector {
        states: Vec::with_capacity((cfg.regime.m() + 1) * d),
    };
    euler_maruyama_observe(model, theta, cfg, &mut c)?;
    into_record(cfg, c.states, d)
}

/// Streaming form of [`euler_maruyama`].
///
/// Original clock: `X ← X + b h + σ √h Z` with `h = Δ̃/K`.
/// Scaled clock: `X ← X + ε⁻¹ b h_s + ε^{-1/2} σ √h_s Z` with `h_s = ε Δ̃/K`.
pub fn euler_maruyama_observe<O: PathObserver + ?Sized>(
    model: &ModelSpec,
    theta: &Parameter,
    cfg: &SimConfig,
    observer: &mut O,
) -> Result<()> {
    let d = model.dim_state();
    model.check_parameter(theta)?;
    cfg.validate(d)?;
    let k = cfg.substeps;
    let eps = cfg.regime.epsilon();
    let (dt, drift_scale, noise_scale) = match cfg.clock {
        Clock::Original => (cfg.regime.gap() / k as f64, 1.0, 1.0),
        Clock::Scaled => (cfg.regime.scaled_gap() / k as f64, 1.0 / eps, 1.0 / eps.sqrt()),
    };
    let sqrt_dt = dt.sqrt();
    let mu = theta.mu();
    let vartheta = theta.vartheta();
    let fixed_sigma = if model.state_independent_diffusion() {
        Some(model.diffusion(vartheta, &DVector::from_column_slice(&cfg.x0)))
    } else {
        None
    };

    let mut noise = NoiseStream::new(cfg.seed, cfg.stream);
    let mut x = DVector::from_column_slice(&cfg.x0);
    let mut z = DVector::zeros(d);
    check_blowup(x.as_slice(), 0)?;
    observer.observe(x.as_slice());
    let mut step: u64 = 0;
    for _ in 0..cfg.regime.m() {
        for _ in 0..k {
            step += 1;
            noise.fill_normal(z.as_mut_slice());
            let b = model.drift(mu, &x);
            let dw = &z * sqrt_dt;
            let noise_term = match &fixed_sigma {
                Some(s) => s * dw,
                None => model.diffusion(vartheta, &x) * dw,
            };
            x += b * (drift_scale * dt) + noise_term * noise_scale;
            check_blowup(x.as_slice(), step)?;
        }
        observer.observe(x.as_slice());
    }
    Ok(())
}

/// Exact one-step transition of `dX = (g − H X) dt + ϑ^{1/2} dW` over a fixed
/// step `h`: `X ← Φ X + c + L Z` with `Φ = e^{−H h}`, `c = (I − Φ) H⁻¹ g`
/// and `L Lᵀ = F − Φ F Φᵀ`, `H F + F Hᵀ = ϑ`.
#[derive(Debug, Clone)]
pub struct OuTransition {
    pub dim: usize,
    /// Row-major `Φ`.
    pub phi: Vec<f64>,
    pub offset: Vec<f64>,
    /// Row-major lower-triangular factor of the transition covariance.
    pub chol: Vec<f64>,
    pub stationary_mean: DVector<f64>,
    pub stationary_cov: DMatrix<f64>,
}

impl OuTransition {
    pub fn new(g: &DVector<f64>, h: &DMatrix<f64>, vartheta: &DMatrix<f64>, step: f64) -> Result<Self> {
        let d = h.nrows();
        if g.len() != d || vartheta.shape() != (d, d) || !h.is_square() {
            return Err(Error::DimensionMismatch("OU parameters g, H, vartheta disagree in dimension".into()));
        }
        validate_vartheta(vartheta)?;
        let f = solve_lyapunov(h, vartheta)?;
        let phi = expm(&(-h * step));
        let mean = Solver::new(h)?.solve(g);
        let eye = DMatrix::<f64>::identity(d, d);
        let offset = (&eye - &phi) * &mean;
        let v = &f - &phi * &f * phi.transpose();
        let v = (&v + v.transpose()) * 0.5;
        let l = match v.clone().cholesky() {
            Some(c) => c.l(),
            None => psd_sqrt(&v)?,
        };
        let row_major = |m: &DMatrix<f64>| -> Vec<f64> {
            (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect()
        };
        Ok(OuTransition {
            dim: d,
            phi: row_major(&phi),
            offset: offset.iter().copied().collect(),
            chol: row_major(&l),
            stationary_mean: mean,
            stationary_cov: f,
        })
    }

    /// Advances `x` in place using the normals in `z`; `scratch` has length `d`.
    #[inline]
    pub fn advance(&self, x: &mut [f64], z: &[f64], scratch: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.phi[i * d..(i + 1) * d];
            let lrow = &self.chol[i * d..(i + 1) * d];
            let mut acc = self.offset[i];
            for j in 0..d {
                acc += row[j] * x[j] + lrow[j] * z[j];
            }
            scratch[i] = acc;
        }
        x.copy_from_slice(scratch);
    }
}

/// Exact OU sampling on the observation grid. With `K > 1` the exact
/// transition is applied over each of the `K` substeps, which keeps the law
/// exact and consumes the same noise as [`euler_maruyama`] with equal `K`.
pub fn exact_ou(
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    vartheta: &DMatrix<f64>,
    cfg: &SimConfig,
) -> Result<DiscreteRecord> {
    let d = h.nrows();
    let mut c = Collector {
        states: Vec::with_capacity((cfg.regime.m() + 1) * d),
    };
    exact_ou_observe(g, h, vartheta, cfg, &mut c)?;
    into_record(cfg, c.states, d)
}

/// Streaming form of [`exact_ou`].
pub fn exact_ou_observe<O: PathObserver + ?Sized>(
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    vartheta: &DMatrix<f64>,
    cfg: &SimConfig,
    observer: &mut O,
) -> Result<()> {
    let d = h.nrows();
    cfg.validate(d)?;
    let step = cfg.regime.gap() / cfg.substeps as f64;
    let tr = OuTransition::new(g, h, vartheta, step)?;
    let mut noise = NoiseStream::new(cfg.seed, cfg.stream);
    if d == 1 {
        // Scalar loop; consumes the same normals as the general one.
        let (phi, offset, l) = (tr.phi[0], tr.offset[0], tr.chol[0]);
        let mut x = cfg.x0[0];
        observer.observe(std::slice::from_ref(&x));
        for i in 0..cfg.regime.m() {
            for _ in 0..cfg.substeps {
                x = phi * x + offset + l * noise.normal();
            }
            if !(x.abs() <= BLOWUP_NORM) {
                return Err(Error::Blowup {
                    step: (i as u64 + 1) * cfg.substeps as u64,
                    norm: x.abs(),
                });
            }
            observer.observe(std::slice::from_ref(&x));
        }
        return Ok(());
    }
    let mut x = cfg.x0.clone();
    let mut z = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    observer.observe(&x);
    let mut count: u64 = 0;
    for _ in 0..cfg.regime.m() {
        for _ in 0..cfg.substeps {
            noise.fill_normal(&mut z);
            tr.advance(&mut x, &z, &mut scratch);
        }
        count += cfg.substeps as u64;
        check_blowup(&x, count)?;
        observer.observe(&x);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiffusionForm, DriftFn, MatrixField, OuLayout};
    use std::sync::Arc;

    fn scalar_model(drift: DriftFn, sigma: f64) -> (ModelSpec, Parameter) {
        let a0: MatrixField = Arc::new(|_x: &DVector<f64>| DMatrix::identity(1, 1));
        let model = ModelSpec::general(1, 1, drift, None, DiffusionForm::Form1 { a0 })
            .with_state_independent_diffusion();
        let theta = Parameter::new(DVector::from_element(1, 1.0), DMatrix::from_element(1, 1, sigma * sigma)).unwrap();
        (model, theta)
    }

    #[test]
    fn no_dynamics_gives_constant_record() {
        let drift: DriftFn = Arc::new(|_m: &DVector<f64>, _x: &DVector<f64>| DVector::zeros(2));
        let sigma = Arc::new(|_t: &DMatrix<f64>, _x: &DVector<f64>| DMatrix::zeros(2, 2));
        let model = ModelSpec::general(2, 1, drift, None, DiffusionForm::General(sigma));
        let theta = Parameter::new(DVector::zeros(1), DMatrix::identity(2, 2)).unwrap();
        let cfg = SimConfig::new(vec![1.5, -2.0], ScalingRegime::new(0.5, 0.1).unwrap(), 3);
        let rec = euler_maruyama(&model, &theta, &cfg).unwrap();
        assert_eq!(rec.len(), 21);
        for i in 0..rec.len() {
            assert_eq!(rec.state(i), &[1.5, -2.0]);
        }
    }

    #[test]
    fn deterministic_decay_converges_at_first_order() {
        // dx = -x dt on [0, 1], compared with e^{-t}.
        let drift: DriftFn = Arc::new(|_m: &DVector<f64>, x: &DVector<f64>| -x.clone());
        let sigma = Arc::new(|_t: &DMatrix<f64>, _x: &DVector<f64>| DMatrix::zeros(1, 1));
        let model = ModelSpec::general(1, 1, drift, None, DiffusionForm::General(sigma));
        let theta = Parameter::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let regime = ScalingRegime::new(1.0, 0.1).unwrap();
        let err = |k: usize| {
            let cfg = SimConfig::new(vec![1.0], regime, 0).with_substeps(k);
            let rec = euler_maruyama(&model, &theta, &cfg).unwrap();
            (0..rec.len())
                .map(|i| (rec.state(i)[0] - (-rec.times()[i]).exp()).abs())
                .fold(0.0, f64::max)
        };
        let mut prev = err(8);
        for k in [16, 32, 64, 128] {
            let e = err(k);
            let ratio = prev / e;
            assert!((ratio - 2.0).abs() < 0.1, "k={k} ratio={ratio}");
            prev = e;
        }
    }

    #[test]
    fn euler_converges_to_exact_ou_pathwise() {
        // Matched noise: both simulators consume one normal per substep.
        let drift: DriftFn = Arc::new(|_m: &DVector<f64>, x: &DVector<f64>| -x.clone());
        let (model, theta) = scalar_model(drift, 2f64.sqrt());
        let g = DVector::zeros(1);
        let h = DMatrix::identity(1, 1);
        let th = theta.vartheta().clone();
        let regime = ScalingRegime::new(1.0, 0.05).unwrap();
        let rms = |k: usize| {
            let mut acc = 0.0;
            for seed in 0..200u64 {
                let cfg = SimConfig::new(vec![0.5], regime, seed).with_substeps(k);
                let e = euler_maruyama(&model, &theta, &cfg).unwrap();
                let x = exact_ou(&g, &h, &th, &cfg).unwrap();
                let dev = (0..e.len()).map(|i| (e.state(i)[0] - x.state(i)[0]).abs()).fold(0.0, f64::max);
                acc += dev * dev;
            }
            (acc / 200.0).sqrt()
        };
        let errs: Vec<f64> = [1, 4, 16].iter().map(|&k| rms(k)).collect();
        // h shrinks 4x per step; O(sqrt(h)) demands at least a factor 2.
        assert!(errs[0] / errs[1] > 2.0, "{errs:?}");
        assert!(errs[1] / errs[2] > 2.0, "{errs:?}");
        assert!(errs[2] < 5e-3, "{errs:?}");
    }

    #[test]
    fn exact_ou_scalar_transition() {
        let g = DVector::zeros(1);
        let h = DMatrix::identity(1, 1);
        let th = DMatrix::from_element(1, 1, 2.0);
        let tr = OuTransition::new(&g, &h, &th, 0.3).unwrap();
        assert!((tr.stationary_cov[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((tr.phi[0] - (-0.3f64).exp()).abs() < 1e-14);
        let v = 1.0 - (-0.6f64).exp();
        assert!((tr.chol[0] - v.sqrt()).abs() < 1e-13);
        assert_eq!(tr.offset[0], 0.0);
    }

    #[test]
    fn exact_ou_is_reproducible() {
        let g = DVector::from_vec(vec![0.2, -0.1]);
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.3, 0.7]);
        let th = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let cfg = SimConfig::new(vec![0.0, 0.0], ScalingRegime::new(0.1, 0.1).unwrap(), 9).with_substeps(1);
        let a = exact_ou(&g, &h, &th, &cfg).unwrap();
        let b = exact_ou(&g, &h, &th, &cfg).unwrap();
        assert_eq!(a, b);
        let c = exact_ou(&g, &h, &th, &cfg.clone().with_stream(1)).unwrap();
        assert_ne!(a.states(), c.states());
    }

    #[test]
    fn exact_ou_rejects_unstable_h() {
        let g = DVector::zeros(1);
        let h = DMatrix::from_element(1, 1, -1.0);
        let th = DMatrix::identity(1, 1);
        let cfg = SimConfig::new(vec![0.0], ScalingRegime::new(0.5, 0.5).unwrap(), 0);
        assert!(matches!(exact_ou(&g, &h, &th, &cfg), Err(Error::UnstableH(_))));
    }

    #[test]
    fn blowup_is_reported() {
        let drift: DriftFn = Arc::new(|_m: &DVector<f64>, x: &DVector<f64>| x.map(|v| v * v * v));
        let (model, theta) = scalar_model(drift, 0.0001);
        let cfg = SimConfig::new(vec![5.0], ScalingRegime::new(0.1, 0.5).unwrap(), 0).with_substeps(1);
        assert!(matches!(euler_maruyama(&model, &theta, &cfg), Err(Error::Blowup { .. })));
    }

    #[test]
    fn scaled_clock_records_scaled_times() {
        let model = ModelSpec::ou(1, OuLayout::Centered);
        let theta = Parameter::new(DVector::from_element(1, 1.0), DMatrix::from_element(1, 1, 2.0)).unwrap();
        let regime = ScalingRegime::new(0.25, 0.5).unwrap();
        let cfg = SimConfig::new(vec![0.0], regime, 4);
        let orig = euler_maruyama(&model, &theta, &cfg).unwrap();
        let scaled = euler_maruyama(&model, &theta, &cfg.clone().with_clock(Clock::Scaled)).unwrap();
        assert_eq!(orig.span(), 4.0);
        assert!((scaled.span() - 1.0).abs() < 1e-15);
        assert_eq!(scaled.process_gap(), orig.gap());
        for i in 0..orig.len() {
            assert!((orig.state(i)[0] - scaled.state(i)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn sim_config_serde_round_trip() {
        let cfg = SimConfig::new(vec![0.5, 1.0], ScalingRegime::with_gap_exponent(0.02, 1.5).unwrap(), 11)
            .with_clock(Clock::Scaled)
            .with_stream(5);
        let s = serde_json::to_string(&cfg).unwrap();
        let back: SimConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(cfg, back);
    }
}
