//! Invariants of the drift and diffusion estimators on arbitrary records.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sdecal::diffusion::{discretized_qv, estimate_form1, estimate_form2};
use sdecal::drift::{amle_linear, discretized_loglik, loglik_gradient};
use sdecal::model::MatrixField;
use sdecal::rng::NoiseStream;
use sdecal::{DiscreteRecord, ModelSpec, OuLayout};

fn random_walk(seed: u64, d: usize, m: usize, gap: f64) -> DiscreteRecord {
    let mut noise = NoiseStream::new(seed, 0);
    let mut x = vec![0.0; d];
    let mut states = x.clone();
    for _ in 0..m {
        for v in x.iter_mut() {
            *v += -0.3 * *v * gap + gap.sqrt() * noise.normal();
        }
        states.extend_from_slice(&x);
    }
    DiscreteRecord::new((0..=m).map(|i| i as f64 * gap).collect(), states, d).unwrap()
}

fn map_states(data: &DiscreteRecord, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> DiscreteRecord {
    let states = (0..data.len()).flat_map(|i| f(&data.state_vector(i)).as_slice().to_vec()).collect();
    DiscreteRecord::new(data.times().to_vec(), states, data.dim()).unwrap()
}

fn identity(d: usize) -> MatrixField {
    Arc::new(move |_x: &DVector<f64>| DMatrix::identity(d, d))
}

fn square(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.5..1.5f64, d * d).prop_map(move |v| DMatrix::from_vec(d, d, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qv_is_linearly_equivariant(seed in any::<u64>(), a in square(2)) {
        let data = random_walk(seed, 2, 200, 0.01);
        let moved = map_states(&data, |x| &a * x);
        let lhs = discretized_qv(&moved).matrix;
        let rhs = &a * discretized_qv(&data).matrix * a.transpose();
        prop_assert!((lhs - &rhs).amax() <= 1e-10 * rhs.amax().max(1.0));
    }

    #[test]
    fn qv_ignores_translation(seed in any::<u64>(), c in prop::collection::vec(-5.0..5.0f64, 3)) {
        let data = random_walk(seed, 3, 150, 0.02);
        let shift = DVector::from_vec(c);
        let moved = map_states(&data, |x| x + &shift);
        let diff = discretized_qv(&moved).matrix - discretized_qv(&data).matrix;
        prop_assert!(diff.amax() <= 1e-9);
    }

    #[test]
    fn form1_scales_quadratically(seed in any::<u64>(), c in 0.1..10.0f64) {
        let data = random_walk(seed, 2, 100, 0.01);
        let scaled = map_states(&data, |x| x * c);
        let a = estimate_form1(&data, &identity(2)).unwrap().raw;
        let b = estimate_form1(&scaled, &identity(2)).unwrap().raw;
        prop_assert!((b - &a * (c * c)).amax() <= 1e-10 * a.amax() * c * c);
    }

    #[test]
    fn form2_with_identity_equals_form1(seed in any::<u64>(), d in 1..4usize) {
        let data = random_walk(seed, d, 120, 0.01);
        let a = estimate_form1(&data, &identity(d)).unwrap();
        let b = estimate_form2(&data, &identity(d)).unwrap();
        prop_assert!((a.raw - b.raw).amax() <= 1e-12 * a.symmetrized.amax().max(1.0));
    }

    #[test]
    fn loglik_is_affine_in_delta(seed in any::<u64>(), mu in prop::collection::vec(-2.0..2.0f64, 4),
                                 d1 in 0.001..1.0f64, d2 in 0.001..1.0f64) {
        let data = random_walk(seed, 2, 100, 0.01);
        let model = ModelSpec::ou(2, OuLayout::Centered);
        let mu = DVector::from_vec(mu);
        let vt = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.7]);
        let l = |delta: f64| discretized_loglik(&data, &model, &mu, &vt, delta).unwrap();
        let mid = l(0.5 * (d1 + d2));
        prop_assert!((l(d1) + l(d2) - 2.0 * mid).abs() <= 1e-9 * mid.abs().max(1.0));
    }

    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>(), mu in prop::collection::vec(-2.0..2.0f64, 6)) {
        let data = random_walk(seed, 2, 200, 0.01);
        let model = ModelSpec::ou(2, OuLayout::Full);
        let mu = DVector::from_vec(mu);
        let vt = DMatrix::from_row_slice(2, 2, &[0.9, -0.1, -0.1, 0.6]);
        let delta = data.process_gap();
        let grad = loglik_gradient(&data, &model, &mu, &vt, delta).unwrap();
        let h = 1e-5;
        let fd = DVector::from_fn(6, |i, _| {
            let (mut up, mut down) = (mu.clone(), mu.clone());
            up[i] += h;
            down[i] -= h;
            (discretized_loglik(&data, &model, &up, &vt, delta).unwrap()
                - discretized_loglik(&data, &model, &down, &vt, delta).unwrap())
                / (2.0 * h)
        });
        prop_assert!((&grad - &fd).norm() <= 1e-6 * fd.norm().max(1e-3));
    }

    #[test]
    fn closed_form_zeroes_the_gradient(seed in any::<u64>()) {
        let data = random_walk(seed, 2, 300, 0.01);
        let model = ModelSpec::ou(2, OuLayout::Full);
        let vt = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let fit = amle_linear(&data, &model, &vt).unwrap();
        let grad = loglik_gradient(&data, &model, &fit.mu_hat, &vt, data.process_gap()).unwrap();
        let scale = loglik_gradient(&data, &model, &DVector::zeros(6), &vt, data.process_gap()).unwrap().norm();
        prop_assert!(grad.norm() <= 1e-9 * scale.max(1.0));
    }

    #[test]
    fn subsampling_keeps_every_stride_th_point(seed in any::<u64>(), stride in 1..6usize) {
        let data = random_walk(seed, 2, 120, 0.01);
        let sub = data.subsample(stride).unwrap();
        prop_assert_eq!(sub.increments() * stride, data.increments());
        prop_assert!((sub.process_gap() - stride as f64 * data.process_gap()).abs() <= 1e-12);
        for i in 0..sub.len() {
            prop_assert_eq!(sub.state(i), data.state(i * stride));
        }
        // Coarse increments are sums over blocks of fine ones.
        let mut qv = DMatrix::zeros(2, 2);
        for i in 0..sub.increments() {
            let dx = data.state_vector((i + 1) * stride) - data.state_vector(i * stride);
            qv += &dx * dx.transpose();
        }
        prop_assert!((discretized_qv(&sub).matrix - qv).amax() <= 1e-12);
    }
}

#[test]
fn drift_estimate_is_unchanged_by_time_scale_bookkeeping() {
    let data = random_walk(7, 1, 400, 0.01);
    let model = ModelSpec::ou(1, OuLayout::Centered);
    let vt = DMatrix::from_element(1, 1, 1.0);
    let a = amle_linear(&data, &model, &vt).unwrap().mu_hat[0];
    // Stamping the same states on a clock running twice as fast halves
    // the process gap, which doubles the mean-reversion rate.
    let fast = data.clone().rescaled(2.0);
    let b = amle_linear(&fast, &model, &vt).unwrap().mu_hat[0];
    assert!((b - 2.0 * a).abs() <= 1e-10 * a.abs().max(1.0), "{a} {b}");
}
