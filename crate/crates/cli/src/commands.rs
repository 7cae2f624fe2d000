//! Command implementations.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use sdecal::diffusion::{discretized_qv, estimate_form1, estimate_form2, DiffusionEstimate};
use sdecal::drift::{amle_kron, amle_linear, amle_newton, DriftFit, NewtonSettings, PenaltySpec};
use sdecal::experiment::{run, ExperimentPlan, ExperimentReport};
use sdecal::linalg::{from_rows, serialize_rows};
use sdecal::simulate::{euler_maruyama, exact_ou, SimConfig};
use sdecal::{DiscreteRecord, DriftStructure, ModelSpec, Parameter, ScalingRegime};

use crate::config::{DriftMethod, EstimationConfig, FormChoice, RunConfig};
use crate::CliError;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

pub fn write_resolved(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.io.output)
        .map_err(|e| CliError::Config(format!("`io.output`: cannot create {}: {e}", cfg.io.output.display())))?;
    write_json(&cfg.io.output.join("resolved_config.json"), cfg)
}

pub fn simulate(cfg: &RunConfig, model: &ModelSpec, theta: &Parameter) -> Result<(), CliError> {
    let sim = cfg.simulation.as_ref().expect("resolved");
    let regime = match (sim.gap, sim.gap_exponent) {
        (Some(gap), _) => ScalingRegime::new(sim.epsilon, gap),
        (None, Some(g)) => ScalingRegime::with_gap_exponent(sim.epsilon, g),
        (None, None) => unreachable!("resolved"),
    }
    .map_err(|e| CliError::Config(format!("`simulation`: {e}")))?;
    let d = model.dim_state();
    let x0 = sim.x0.clone().unwrap_or_else(|| vec![0.0; d]);
    let sc = SimConfig::new(x0, regime, sim.seed)
        .with_substeps(sim.substeps)
        .with_clock(sim.clock);
    let record = if sim.exact {
        let layout = model
            .ou_layout()
            .ok_or_else(|| CliError::Config("`simulation.exact`: only available for OU models".into()))?;
        let (g, h) = layout.g_h(theta.mu(), d);
        exact_ou(&g, &h, theta.vartheta(), &sc)?
    } else {
        euler_maruyama(model, theta, &sc)?
    };
    let path = cfg.io.output.join("path.csv");
    record.write_csv_file(&path)?;
    println!("wrote {} observations to {}", record.len(), path.display());
    Ok(())
}

fn load_record(cfg: &RunConfig) -> Result<DiscreteRecord, CliError> {
    let input = cfg.io.input.as_ref().expect("resolved");
    if !input.exists() {
        return Err(CliError::Config(format!("`io.input`: {} does not exist", input.display())));
    }
    Ok(DiscreteRecord::read_csv_file(input)?)
}

fn native_form(model: &ModelSpec, choice: Option<FormChoice>) -> Result<FormChoice, CliError> {
    let form = match choice {
        Some(c) => c,
        None if model.form1_a0().is_some() => FormChoice::Form1,
        None => FormChoice::Form2,
    };
    let ok = match form {
        FormChoice::Form1 => model.form1_a0().is_some(),
        FormChoice::Form2 => model.form2_sigma0().is_some(),
    };
    if !ok {
        return Err(CliError::Config("`estimation.form`: not available for this model".into()));
    }
    Ok(form)
}

fn estimate_vartheta(model: &ModelSpec, data: &DiscreteRecord, form: FormChoice) -> Result<DiffusionEstimate, CliError> {
    Ok(match form {
        FormChoice::Form1 => estimate_form1(data, &model.form1_a0().expect("checked"))?,
        FormChoice::Form2 => estimate_form2(data, &model.form2_sigma0().expect("checked"))?,
    })
}

pub fn estimate_drift(cfg: &RunConfig, model: &ModelSpec) -> Result<(), CliError> {
    let est: &EstimationConfig = cfg.estimation.as_ref().expect("resolved");
    let data = load_record(cfg)?;
    if data.dim() != model.dim_state() {
        return Err(CliError::Config(format!(
            "`io.input`: record has dimension {}, model `{}` has {}",
            data.dim(),
            cfg.model.name.as_str(),
            model.dim_state()
        )));
    }
    let vartheta = match &est.vartheta {
        Some(rows) => from_rows(rows).map_err(|e| CliError::Config(format!("`estimation.vartheta`: {e}")))?,
        None => estimate_vartheta(model, &data, native_form(model, est.form)?)?.symmetrized,
    };
    let fit: DriftFit = match est.method {
        DriftMethod::ClosedForm => match model.structure() {
            DriftStructure::LinearKron { .. } => amle_kron(&data, model, &vartheta)?,
            DriftStructure::Linear { .. } => amle_linear(&data, model, &vartheta)?,
            DriftStructure::General { .. } => {
                return Err(CliError::Config("`estimation.method`: closed-form needs a linear drift".into()))
            }
        },
        DriftMethod::Newton => {
            let epsilon = est.epsilon.unwrap_or(1.0 / data.span());
            let penalty = PenaltySpec::new(est.penalty.alpha, est.penalty.p)
                .map_err(|e| CliError::Config(format!("`estimation.penalty`: {e}")))?;
            let init = match &est.init {
                Some(v) if v.len() == model.dim_drift_param() => DVector::from_column_slice(v),
                Some(_) => return Err(CliError::Config("`estimation.init`: wrong length".into())),
                None => DVector::zeros(model.dim_drift_param()),
            };
            amle_newton(
                &data,
                model,
                &vartheta,
                penalty,
                epsilon,
                &init,
                NewtonSettings {
                    tol: est.tol,
                    max_iter: est.max_iter,
                },
            )?
        }
    };
    let path = cfg.io.output.join("drift_fit.json");
    write_json(&path, &fit)?;
    println!("mu_hat = {:?} (converged: {})", fit.mu_hat.as_slice(), fit.converged);
    Ok(())
}

#[derive(Serialize)]
struct DiffusionOutput {
    form: FormChoice,
    #[serde(serialize_with = "serialize_rows")]
    raw: DMatrix<f64>,
    #[serde(serialize_with = "serialize_rows")]
    symmetrized: DMatrix<f64>,
    #[serde(serialize_with = "serialize_rows")]
    quadratic_variation: DMatrix<f64>,
    gap: f64,
    count: usize,
}

pub fn estimate_diffusion(cfg: &RunConfig, model: &ModelSpec) -> Result<(), CliError> {
    let est = cfg.estimation.as_ref().expect("resolved");
    let data = load_record(cfg)?;
    if data.dim() != model.dim_state() {
        return Err(CliError::Config(format!(
            "`io.input`: record has dimension {}, model `{}` has {}",
            data.dim(),
            cfg.model.name.as_str(),
            model.dim_state()
        )));
    }
    let form = native_form(model, est.form)?;
    let e = estimate_vartheta(model, &data, form)?;
    let qv = discretized_qv(&data);
    let out = DiffusionOutput {
        form,
        raw: e.raw,
        symmetrized: e.symmetrized,
        quadratic_variation: qv.matrix,
        gap: qv.gap,
        count: qv.count,
    };
    write_json(&cfg.io.output.join("diffusion_estimate.json"), &out)?;
    println!("vartheta_hat = {:?}", sdecal::linalg::to_rows(&out.symmetrized));
    Ok(())
}

pub fn experiment(cfg: &RunConfig, model: ModelSpec, theta: Parameter) -> Result<ExperimentReport, CliError> {
    let plan_cfg = cfg.plan.as_ref().expect("resolved");
    let plan = ExperimentPlan {
        model,
        model_name: cfg.model.name.as_str().to_string(),
        theta0: theta,
        settings: plan_cfg.settings.clone(),
    };
    plan.validate(plan_cfg.mode)
        .map_err(|e| if e.is_input_error() { CliError::Config(format!("`plan.settings`: {e}")) } else { e.into() })?;
    let report = run(&plan, plan_cfg.mode)?;
    report.write_dir(&cfg.io.output)?;
    println!("{:>12} {:>10} {:>12} {:>12} {:>10} {:>10} {:>8}", "epsilon", "m", "bias", "rmse", "cov_err", "ks", "failed");
    for r in &report.rows {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:>12.6} {:>10} {:>12.4e} {:>12.4e} {:>10} {:>10} {:>8}",
            r.epsilon,
            r.m,
            r.bias_norm,
            r.rmse,
            show(r.cov_frob_err),
            show(r.ks_stat),
            r.failures
        );
    }
    println!("report written to {}", cfg.io.output.display());
    Ok(report)
}
