//! Discrete observation records and the scaling regime that couples the
//! observation gap with the time span.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which clock a record's time stamps are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Clock {
    /// The process clock, span `T = 1/ε`, gap `Δ̃`.
    #[default]
    Original,
    /// The rescaled clock `t ↦ ε t`, span 1, gap `Δ(ε) = ε Δ̃`.
    Scaled,
}

/// `(ε, Δ̃(ε), m, T = 1/ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegimeSpec", into = "RegimeSpec")]
pub struct ScalingRegime {
    epsilon: f64,
    gap: f64,
    span: f64,
    m: usize,
    gap_exponent: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegimeSpec {
    epsilon: f64,
    #[serde(default)]
    gap: Option<f64>,
    #[serde(default)]
    gap_exponent: Option<f64>,
}

impl TryFrom<RegimeSpec> for ScalingRegime {
    type Error = Error;

    fn try_from(spec: RegimeSpec) -> Result<Self> {
        match (spec.gap_exponent, spec.gap) {
            (Some(g), _) => ScalingRegime::with_gap_exponent(spec.epsilon, g),
            (None, Some(gap)) => ScalingRegime::new(spec.epsilon, gap),
            (None, None) => Err(Error::InvalidInput(
                "regime needs either `gap` or `gap_exponent`".into(),
            )),
        }
    }
}

impl From<ScalingRegime> for RegimeSpec {
    fn from(r: ScalingRegime) -> Self {
        RegimeSpec {
            epsilon: r.epsilon,
            gap: Some(r.gap),
            gap_exponent: r.gap_exponent,
        }
    }
}

impl ScalingRegime {
    /// Regime with an explicit gap; `1/(Δ̃ ε)` must be an integer to `1e-9`.
    pub fn new(epsilon: f64, gap: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        if !(gap > 0.0) || !gap.is_finite() {
            return Err(Error::InvalidInput(format!("gap must be positive, got {gap}")));
        }
        let m = (1.0 / (gap * epsilon)).round();
        if m < 1.0 || (m * gap * epsilon - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "1/(gap * epsilon) = {} is not an integer",
                1.0 / (gap * epsilon)
            )));
        }
        Ok(ScalingRegime {
            epsilon,
            gap,
            span: 1.0 / epsilon,
            m: m as usize,
            gap_exponent: None,
        })
    }

    /// `Δ̃(ε) ≈ ε^γ`. The observation count is `m = round(ε^{−(1+γ)})` and the
    /// gap is then set to `1/(m ε)` so that `m Δ̃ ε = 1`.
    pub fn with_gap_exponent(epsilon: f64, gamma: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::InvalidInput(format!(
                "gap exponent must be non-negative, got {gamma}"
            )));
        }
        let m = epsilon.powf(-(1.0 + gamma)).round().max(1.0);
        Ok(ScalingRegime {
            epsilon,
            gap: 1.0 / (m * epsilon),
            span: 1.0 / epsilon,
            m: m as usize,
            gap_exponent: Some(gamma),
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `Δ̃(ε)`, the gap on the process clock.
    pub fn gap(&self) -> f64 {
        self.gap
    }

    /// `Δ(ε) = ε Δ̃(ε)`, the gap on the scaled clock.
    pub fn scaled_gap(&self) -> f64 {
        self.epsilon * self.gap
    }

    /// `T = 1/ε`.
    pub fn span(&self) -> f64 {
        self.span
    }

    /// Number of increments.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn gap_exponent(&self) -> Option<f64> {
        self.gap_exponent
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    Ok(())
}

/// Observations `X(t₀), …, X(t_m)` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteRecord {
    times: Vec<f64>,
    /// Row-major `(m + 1) × d`.
    states: Vec<f64>,
    dim: usize,
    gap: f64,
    span: f64,
    time_scale: f64,
}

impl DiscreteRecord {
    /// Builds a record on the original clock, validating grid uniformity.
    pub fn new(times: Vec<f64>, states: Vec<f64>, dim: usize) -> Result<Self> {
        Self::with_time_scale(times, states, dim, 1.0)
    }

    /// Builds a record whose time stamps are `time_scale ×` process time
    /// (`time_scale = ε` for the scaled clock).
    pub fn with_time_scale(times: Vec<f64>, states: Vec<f64>, dim: usize, time_scale: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("state dimension must be positive".into()));
        }
        if times.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a record needs at least two observations, got {}",
                times.len()
            )));
        }
        if states.len() != times.len() * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} states for {} times of dimension {dim}",
                states.len(),
                times.len()
            )));
        }
        if !(time_scale > 0.0) {
            return Err(Error::InvalidInput(format!("time scale must be positive, got {time_scale}")));
        }
        if times.iter().chain(states.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("record contains non-finite values".into()));
        }
        let m = times.len() - 1;
        let span = times[m] - times[0];
        let gap = span / m as f64;
        if !(gap > 0.0) {
            return Err(Error::InvalidInput("observation times must be increasing".into()));
        }
        // Stamps carry representation error of order ulp(t); allow for it.
        let tmax = times[0].abs().max(times[m].abs());
        let tol = (1e-12 * gap).max(4.0 * f64::EPSILON * tmax);
        for i in 1..=m {
            let step = times[i] - times[i - 1];
            if (step - gap).abs() > tol {
                return Err(Error::NonUniformGrid { index: i, step, gap });
            }
        }
        debug_assert!(((m as f64) * gap - span).abs() <= 1e-9 * span);
        Ok(DiscreteRecord {
            times,
            states,
            dim,
            gap,
            span,
            time_scale,
        })
    }

    /// Number of observations `m + 1`.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of increments `m`.
    pub fn increments(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn state_vector(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.state(i))
    }

    /// Gap between time stamps on the record's own clock.
    pub fn gap(&self) -> f64 {
        self.gap
    }

    /// `t_m − t₀` on the record's own clock.
    pub fn span(&self) -> f64 {
        self.span
    }

    pub fn time_scale(&self) -> f64 {
        self.time_scale
    }

    /// `Δ̃`: the observation gap measured on the process clock. This is what
    /// the Riemann sums in the estimators are weighted by.
    pub fn process_gap(&self) -> f64 {
        self.gap / self.time_scale
    }

    /// Reinterprets the time stamps as living on a clock scaled by `time_scale`.
    pub fn rescaled(mut self, time_scale: f64) -> Self {
        self.time_scale = time_scale;
        self
    }

    /// Keeps every `stride`-th observation.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        if stride == 0 || self.increments() % stride != 0 {
            return Err(Error::InvalidInput(format!(
                "stride {stride} does not divide {} increments",
                self.increments()
            )));
        }
        let times = self.times.iter().step_by(stride).copied().collect();
        let states = (0..self.len())
            .step_by(stride)
            .flat_map(|i| self.state(i).iter().copied())
            .collect();
        Self::with_time_scale(times, states, self.dim, self.time_scale)
    }

    /// CSV with header `t,x1,...,xd`, 17 significant digits per value.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(self.dim + 1);
        for i in 0..self.len() {
            row.clear();
            row.push(format!("{:.16e}", self.times[i]));
            row.extend(self.state(i).iter().map(|v| format!("{v:.16e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Parses the CSV written by [`DiscreteRecord::write_csv`]. The result is
    /// on the original clock.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.is_empty() || header.get(0).map(str::trim) != Some("t") {
            return Err(Error::InvalidInput("CSV header must start with `t`".into()));
        }
        let dim = header.len() - 1;
        for (k, name) in header.iter().skip(1).enumerate() {
            if name.trim() != format!("x{}", k + 1) {
                return Err(Error::InvalidInput(format!(
                    "CSV column {} should be `x{}`, found `{name}`",
                    k + 2,
                    k + 1
                )));
            }
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::InvalidInput(format!("CSV row {}: cannot parse `{s}`", line + 2))
                })
            };
            if rec.len() != dim + 1 {
                return Err(Error::InvalidInput(format!(
                    "CSV row {} has {} fields, expected {}",
                    line + 2,
                    rec.len(),
                    dim + 1
                )));
            }
            times.push(parse(&rec[0])?);
            for k in 1..=dim {
                states.push(parse(&rec[k])?);
            }
        }
        Self::new(times, states, dim)
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(times: &[f64], xs: &[f64]) -> Result<DiscreteRecord> {
        DiscreteRecord::new(times.to_vec(), xs.to_vec(), 1)
    }

    #[test]
    fn regime_from_gap_exponent() {
        for (eps, gamma) in [(1.0 / 50.0, 1.5), (1.0 / 800.0, 1.5), (0.1, 0.0), (1.0 / 400.0, 1.5)] {
            let r = ScalingRegime::with_gap_exponent(eps, gamma).unwrap();
            assert!((r.m() as f64 * r.gap() * eps - 1.0).abs() <= 1e-9);
            assert_eq!(r.span() * eps, 1.0);
            assert!((r.gap() / eps.powf(gamma) - 1.0).abs() < 1e-3);
        }
        let r = ScalingRegime::with_gap_exponent(1.0 / 800.0, 1.5).unwrap();
        assert_eq!(r.m(), 18_101_934);
    }

    #[test]
    fn regime_with_explicit_gap() {
        let r = ScalingRegime::new(0.1, 0.01).unwrap();
        assert_eq!(r.m(), 1000);
        assert!((r.scaled_gap() - 0.001).abs() < 1e-18);
        assert!(ScalingRegime::new(0.1, 0.3).is_err());
        assert!(ScalingRegime::new(0.0, 0.1).is_err());
        assert!(ScalingRegime::new(1.5, 0.1).is_err());
    }

    #[test]
    fn regime_serde_round_trip() {
        let r = ScalingRegime::with_gap_exponent(0.02, 1.5).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        let back: ScalingRegime = serde_json::from_str(&s).unwrap();
        assert_eq!(r, back);
        let bad: std::result::Result<ScalingRegime, _> = serde_json::from_str(r#"{"epsilon": 0.1}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn uniform_grid_required() {
        assert!(record(&[0.0, 0.1, 0.2], &[1.0, 2.0, 3.0]).is_ok());
        let err = record(&[0.0, 0.1, 0.25], &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, Error::NonUniformGrid { index: 1, .. }));
        assert!(err.to_string().contains("gap-uniformity"));
        assert!(record(&[0.0], &[1.0]).is_err());
        assert!(record(&[0.0, 0.1], &[1.0]).is_err());
    }

    #[test]
    fn large_time_stamps_pass_uniformity() {
        let gap = 1.0 / 22627.0;
        let m = 2_000_000;
        let times: Vec<f64> = (0..=m).map(|i| i as f64 * gap).collect();
        let states = vec![0.0; m + 1];
        let r = DiscreteRecord::new(times, states, 1).unwrap();
        assert!((r.gap() - gap).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let times: Vec<f64> = (0..5).map(|i| i as f64 * 0.1).collect();
        let states = vec![0.1, 1.0 / 3.0, -2.5e-300, 7.0, std::f64::consts::PI, 1e300, 0.0, -0.0, 1.0, 2.0];
        let r = DiscreteRecord::new(times, states, 2).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2\n"));
        let back = DiscreteRecord::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.states(), r.states());
        assert_eq!(back.times(), r.times());
    }

    #[test]
    fn csv_rejects_bad_header_and_rows() {
        assert!(DiscreteRecord::read_csv("time,x1\n0,1\n1,2\n".as_bytes()).is_err());
        assert!(DiscreteRecord::read_csv("t,x1\n0,1\n1,abc\n".as_bytes()).is_err());
        let e = DiscreteRecord::read_csv("t,x1\n0,1\n1,2\n3,3\n".as_bytes()).unwrap_err();
        assert!(matches!(e, Error::NonUniformGrid { .. }));
    }

    #[test]
    fn subsample_and_process_gap() {
        let times: Vec<f64> = (0..=8).map(|i| i as f64 * 0.25).collect();
        let states: Vec<f64> = (0..=8).map(|i| i as f64).collect();
        let r = DiscreteRecord::new(times, states, 1).unwrap();
        let s = r.subsample(2).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.state(2), &[4.0]);
        assert_eq!(s.gap(), 0.5);
        assert!(r.subsample(3).is_err());
        let scaled = r.rescaled(0.5);
        assert_eq!(scaled.process_gap(), 0.5);
    }
}
