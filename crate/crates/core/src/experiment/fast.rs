//! Streaming estimation for OU models simulated exactly.
//!
//! With `a₀ = I` every estimator used by the harness is a function of
//! `Σx xᵀ`, `Σx`, `ΣΔx xᵀ`, `ΣΔx`, `ΣΔx Δxᵀ` and the increment count (sums
//! at left endpoints), so paths never need to be stored.

use nalgebra::{DMatrix, DVector};

use crate::diffusion::{form1_from_sums, form2_from_sums, DiffusionEstimate};
use crate::error::{Error, Result};
use crate::linalg::{kron, Solver};
use crate::model::OuLayout;
use crate::rng::NoiseStream;
use crate::simulate::{exact_ou_observe, OuTransition, PathObserver, SimConfig, BLOWUP_NORM};

/// Running sums over consecutive observation pairs.
#[derive(Debug, Clone)]
pub struct OuSums {
    d: usize,
    prev: Vec<f64>,
    started: bool,
    pub count: usize,
    /// `Σ x xᵀ`, column-major `d × d`.
    pub s_xx: Vec<f64>,
    pub s_x: Vec<f64>,
    /// `Σ Δx xᵀ`, column-major `d × d`.
    pub s_dxx: Vec<f64>,
    pub s_dx: Vec<f64>,
    /// `Σ Δx Δxᵀ`, column-major `d × d`.
    pub qv: Vec<f64>,
}

impl OuSums {
    pub fn new(d: usize) -> Self {
        OuSums {
            d,
            prev: vec![0.0; d],
            started: false,
            count: 0,
            s_xx: vec![0.0; d * d],
            s_x: vec![0.0; d],
            s_dxx: vec![0.0; d * d],
            s_dx: vec![0.0; d],
            qv: vec![0.0; d * d],
        }
    }

    fn mat(&self, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.d, self.d, v)
    }

    /// `ϑ̂` for Form 1 with `a₀ = I`.
    pub fn form1(&self, gap: f64) -> Result<DiffusionEstimate> {
        let s = DMatrix::identity(self.d, self.d) * (gap * self.count as f64);
        form1_from_sums(&self.mat(&self.qv), &s)
    }

    /// `ϑ̂` for Form 2 with `σ₀ = I`.
    pub fn form2(&self, gap: f64) -> Result<DiffusionEstimate> {
        let dd = self.d * self.d;
        let k = DMatrix::identity(dd, dd) * (gap * self.count as f64);
        form2_from_sums(&self.mat(&self.qv), &k)
    }

    /// Closed-form drift AMLE under constant `a = ϑ̂`, assembled through the
    /// Kronecker Gram `Δ̃ (Σ β₀β₀ᵀ) ⊗ ϑ̂⁻¹` and driver `vec(ϑ̂⁻¹ Σ Δx β₀ᵀ)`.
    pub fn drift(&self, layout: OuLayout, gap: f64, vartheta_hat: &DMatrix<f64>) -> Result<DVector<f64>> {
        let d = self.d;
        let ainv = Solver::new(vartheta_hat)
            .map_err(|e| match e {
                Error::IllConditioned(cond) => Error::SingularDiffusion { index: 0, cond },
                other => other,
            })?
            .inverse();
        let (s_bb, s_dxb, sign) = match layout {
            OuLayout::Centered => (self.mat(&self.s_xx), self.mat(&self.s_dxx), -1.0),
            OuLayout::Full => {
                let mut bb = DMatrix::zeros(d + 1, d + 1);
                bb[(0, 0)] = self.count as f64;
                let mut dxb = DMatrix::zeros(d, d + 1);
                for i in 0..d {
                    bb[(0, i + 1)] = self.s_x[i];
                    bb[(i + 1, 0)] = self.s_x[i];
                    dxb[(i, 0)] = self.s_dx[i];
                    for j in 0..d {
                        bb[(i + 1, j + 1)] = self.s_xx[j * d + i];
                        dxb[(i, j + 1)] = self.s_dxx[j * d + i];
                    }
                }
                (bb, dxb, 1.0)
            }
        };
        let gram = kron(&s_bb, &ainv) * gap;
        let driver = &ainv * s_dxb * sign;
        let solver = Solver::new(&gram).map_err(|e| match e {
            Error::IllConditioned(c) => Error::SingularGram(c),
            other => other,
        })?;
        Ok(solver.solve(&DVector::from_column_slice(driver.as_slice())))
    }
}

impl PathObserver for OuSums {
    #[inline]
    fn observe(&mut self, x: &[f64]) {
        let d = self.d;
        if !self.started {
            self.prev.copy_from_slice(x);
            self.started = true;
            return;
        }
        if d == 1 {
            let (p, xn) = (self.prev[0], x[0]);
            let dx = xn - p;
            self.s_xx[0] += p * p;
            self.s_x[0] += p;
            self.s_dxx[0] += dx * p;
            self.s_dx[0] += dx;
            self.qv[0] += dx * dx;
            self.prev[0] = xn;
            self.count += 1;
            return;
        } else {
            for c in 0..d {
                let pc = self.prev[c];
                let dc = x[c] - pc;
                self.s_x[c] += pc;
                self.s_dx[c] += dc;
                for r in 0..d {
                    let pr = self.prev[r];
                    let dr = x[r] - pr;
                    self.s_xx[c * d + r] += pr * pc;
                    self.s_dxx[c * d + r] += dr * pc;
                    self.qv[c * d + r] += dr * dc;
                }
            }
        }
        self.count += 1;
        self.prev.copy_from_slice(x);
    }
}

/// Simulates an exact OU path and returns its sufficient statistics. The
/// one-dimensional case runs a fused loop that draws the same normals in the
/// same order as [`exact_ou_observe`] and produces identical sums.
pub fn exact_ou_sums(g: &DVector<f64>, h: &DMatrix<f64>, vartheta: &DMatrix<f64>, cfg: &SimConfig) -> Result<OuSums> {
    let d = h.nrows();
    if d != 1 {
        let mut sums = OuSums::new(d);
        exact_ou_observe(g, h, vartheta, cfg, &mut sums)?;
        return Ok(sums);
    }
    cfg.validate(1)?;
    let k = cfg.substeps;
    let tr = OuTransition::new(g, h, vartheta, cfg.regime.gap() / k as f64)?;
    let (phi, offset, l) = (tr.phi[0], tr.offset[0], tr.chol[0]);
    let mut noise = NoiseStream::new(cfg.seed, cfg.stream);
    let mut x = cfg.x0[0];
    let (mut s_xx, mut s_x, mut s_dxx, mut s_dx, mut qv) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let m = cfg.regime.m();
    for i in 0..m {
        let p = x;
        for _ in 0..k {
            x = phi * x + offset + l * noise.normal();
        }
        if !(x.abs() <= BLOWUP_NORM) {
            return Err(Error::Blowup {
                step: (i as u64 + 1) * k as u64,
                norm: x.abs(),
            });
        }
        let dx = x - p;
        s_xx += p * p;
        s_x += p;
        s_dxx += dx * p;
        s_dx += dx;
        qv += dx * dx;
    }
    Ok(OuSums {
        d: 1,
        prev: vec![x],
        started: true,
        count: m,
        s_xx: vec![s_xx],
        s_x: vec![s_x],
        s_dxx: vec![s_dxx],
        s_dx: vec![s_dx],
        qv: vec![qv],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{estimate_form1, estimate_form2};
    use crate::drift::{amle_kron, amle_linear};
    use crate::model::{ModelSpec, Parameter};
    use crate::record::ScalingRegime;
    use crate::simulate::{exact_ou, SimConfig};

    #[test]
    fn scalar_sums_match_general_sums_exactly() {
        let g = DVector::from_element(1, 0.4);
        let h = DMatrix::from_element(1, 1, 1.3);
        let vt = DMatrix::from_element(1, 1, 0.9);
        let cfg = SimConfig::new(vec![0.1], ScalingRegime::new(0.05, 0.01).unwrap(), 5).with_substeps(3);
        let fast = exact_ou_sums(&g, &h, &vt, &cfg).unwrap();
        let mut general = OuSums::new(1);
        exact_ou_observe(&g, &h, &vt, &cfg, &mut general).unwrap();
        assert_eq!(fast.count, general.count);
        assert_eq!(fast.s_xx, general.s_xx);
        assert_eq!(fast.s_x, general.s_x);
        assert_eq!(fast.s_dxx, general.s_dxx);
        assert_eq!(fast.s_dx, general.s_dx);
        assert_eq!(fast.qv, general.qv);
    }

    #[test]
    fn streaming_matches_record_estimators() {
        for (d, layout) in [(1, OuLayout::Centered), (1, OuLayout::Full), (2, OuLayout::Centered), (2, OuLayout::Full)] {
            let g = DVector::from_fn(d, |i, _| 0.3 - 0.4 * i as f64);
            let h = if d == 1 {
                DMatrix::from_element(1, 1, 1.2)
            } else {
                DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 0.8])
            };
            let g = if layout == OuLayout::Centered { DVector::zeros(d) } else { g };
            let vt = if d == 1 {
                DMatrix::from_element(1, 1, 0.7)
            } else {
                DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5])
            };
            let cfg = SimConfig::new(vec![0.2; d], ScalingRegime::new(0.05, 0.01).unwrap(), 17).with_substeps(1);
            let rec = exact_ou(&g, &h, &vt, &cfg).unwrap();
            let mut sums = OuSums::new(d);
            crate::simulate::exact_ou_observe(&g, &h, &vt, &cfg, &mut sums).unwrap();
            let gap = rec.process_gap();

            let model = ModelSpec::ou(d, layout);
            let a0 = model.form1_a0().unwrap();
            let s0 = model.form2_sigma0().unwrap();
            let f1 = estimate_form1(&rec, &a0).unwrap();
            let f2 = estimate_form2(&rec, &s0).unwrap();
            let scale = f1.raw.amax();
            assert!((sums.form1(gap).unwrap().raw - &f1.raw).amax() <= 1e-10 * scale);
            assert!((sums.form2(gap).unwrap().raw - &f2.raw).amax() <= 1e-10 * scale);

            let vh = f1.symmetrized.clone();
            let lib = match layout {
                OuLayout::Centered => amle_linear(&rec, &model, &vh).unwrap(),
                OuLayout::Full => amle_kron(&rec, &model, &vh).unwrap(),
            };
            let fast = sums.drift(layout, gap, &vh).unwrap();
            let err = (&fast - &lib.mu_hat).amax();
            assert!(err <= 1e-9 * lib.mu_hat.amax().max(1.0), "{d} {layout:?}: {fast} vs {}", lib.mu_hat);
            let _ = Parameter::new(layout.mu_from(&g, &h), vt).unwrap();
        }
    }
}
