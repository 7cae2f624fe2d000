//! Monte Carlo summary statistics.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::linalg::Solver;

/// Asymptotic one-sample Kolmogorov–Smirnov critical value at level 1%.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// One-sample KS statistic `sup |F_n − F|`.
pub fn ks_statistic<F: Fn(f64) -> f64>(values: &[f64], cdf: F) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// KS statistic of squared Mahalanobis distances against `χ²(k)`.
pub fn chi2_ks(distances: &[f64], k: usize) -> f64 {
    let chi = ChiSquared::new(k as f64).expect("positive degrees of freedom");
    ks_statistic(distances, |x| chi.cdf(x.max(0.0)))
}

/// Squared Mahalanobis distances `zᵀ Θ⁻¹ z`.
pub fn mahalanobis(points: &[DVector<f64>], cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    let solver = Solver::new(cov).map_err(|e| match e {
        Error::IllConditioned(c) => Error::SingularSigma(c),
        other => other,
    })?;
    Ok(points.iter().map(|z| z.dot(&solver.solve(z))).collect())
}

pub fn mean_vector(points: &[DVector<f64>]) -> DVector<f64> {
    let k = points[0].len();
    let mut m = DVector::zeros(k);
    for p in points {
        m += p;
    }
    m / points.len() as f64
}

/// Unbiased sample covariance.
pub fn covariance(points: &[DVector<f64>]) -> DMatrix<f64> {
    let k = points[0].len();
    let mean = mean_vector(points);
    let mut c = DMatrix::zeros(k, k);
    for p in points {
        let d = p - &mean;
        c += &d * d.transpose();
    }
    c / (points.len() as f64 - 1.0).max(1.0)
}

/// Frobenius relative error `‖A − B‖ / ‖B‖`.
pub fn frobenius_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Mean and standard error of a scalar sample.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Delete-a-group jackknife standard error of `stat` over `groups`
/// contiguous blocks of `items`.
pub fn jackknife_se<T, F>(items: &[T], groups: usize, stat: F) -> f64
where
    T: Clone,
    F: Fn(&[T]) -> f64,
{
    let n = items.len();
    let g = groups.min(n);
    if g < 2 {
        return f64::NAN;
    }
    let bounds: Vec<usize> = (0..=g).map(|j| j * n / g).collect();
    let leave_out: Vec<f64> = (0..g)
        .map(|j| {
            let kept: Vec<T> = items[..bounds[j]].iter().chain(&items[bounds[j + 1]..]).cloned().collect();
            stat(&kept)
        })
        .collect();
    let mean = leave_out.iter().sum::<f64>() / g as f64;
    let ss: f64 = leave_out.iter().map(|v| (v - mean).powi(2)).sum();
    ((g as f64 - 1.0) / g as f64 * ss).sqrt()
}
