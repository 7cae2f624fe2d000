//! Estimation of multivariate diffusions `dX = b(μ, X) dt + σ(ϑ, X) dW`
//! observed at high frequency over a long horizon `T = 1/ε`.
//!
//! * [`simulate`]: Euler–Maruyama and exact OU paths with counter-based noise.
//! * [`drift`]: discretized likelihood and the approximate MLE of `μ`.
//! * [`diffusion`]: realized quadratic variation and closed-form `ϑ̂`.
//! * [`asymptotics`]: limiting covariances under the stationary law.
//! * [`experiment`]: Monte Carlo consistency and CLT harness.

pub mod asymptotics;
pub mod diffusion;
pub mod drift;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod record;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{DiffusionForm, DriftStructure, ModelSpec, OuLayout, Parameter};
pub use record::{Clock, DiscreteRecord, ScalingRegime};
