use std::fs;
use std::path::Path;

use robot_core::concentration::{sigma_hat, threshold_clean, threshold_contaminated, ConcentrationInputs};
use robot_core::domain_adapt::{robot_domain_adapt, AdaptParams, DomainAdaptDataset, KrrModel};
use robot_core::estimators::{fit_merwe, EstimationConfig};
use robot_core::io::{read_table, write_table, Table};
use robot_core::lambda_select::{log_grid, select_lambda_for_sample};
use robot_core::measure::read_measure_csv;
use robot_core::regression::{ols_fit, robot_regression};
use robot_core::sampling::{contaminate, ContaminationSpec, GenerativeModel, Mechanism, SeedStream};
use robot_core::{recover_tv_modification, robot_distance, DiscreteMeasure, GroundMetric, RobotError, Scalar};
use serde::Serialize;
use serde_json::{json, Value};

use crate::manifest;
use crate::{
    AdaptArgs, CliError, ConcArgs, DistArgs, EstimateArgs, Family, MetricArg, ModelArgs, Precision, PredictArgs,
    RegressArgs, SampleArgs, SelectLambdaArgs,
};

type CliResult = Result<Value, CliError>;

fn to_value(v: &impl Serialize) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::invalid(e.to_string()))
}

fn save_json(path: Option<&Path>, value: &Value) -> Result<(), CliError> {
    if let Some(p) = path {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::invalid(e.to_string()))?;
        fs::write(p, text + "\n").map_err(RobotError::from)?;
    }
    Ok(())
}

fn lambda_json(lambda: f64) -> Value {
    if lambda.is_infinite() {
        json!("infinite")
    } else {
        json!(lambda)
    }
}

fn dist_with<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    metric: GroundMetric,
    lambda: T,
    plan: Option<&Path>,
) -> CliResult {
    let sol = robot_distance(mu, nu, metric, lambda)?;
    let tv = recover_tv_modification(&sol, mu)?;
    if let Some(p) = plan {
        let file = fs::File::create(p).map_err(RobotError::from)?;
        sol.plan.write_csv(file)?;
    }
    Ok(json!({
        "value": sol.value.as_f64(),
        "lambda": lambda_json(lambda.as_f64()),
        "source_atoms": mu.len(),
        "target_atoms": nu.len(),
        "trimmed_mass": sol.trimmed_mass.as_f64(),
        "outliers": tv.outliers,
    }))
}

fn to_f32(m: &DiscreteMeasure<f64>) -> Result<DiscreteMeasure<f32>, CliError> {
    let coords = m.coords().iter().map(|&x| x as f32).collect();
    let weights = m.weights().iter().map(|&w| w as f32).collect();
    Ok(DiscreteMeasure::from_flat(m.dim(), coords, weights)?)
}

pub fn dist(a: DistArgs) -> CliResult {
    let mu = read_measure_csv(&a.source)?;
    let nu = read_measure_csv(&a.target)?;
    let metric = match a.metric {
        MetricArg::Euclidean => GroundMetric::Euclidean,
        MetricArg::Abs => GroundMetric::AbsoluteDifference,
    };
    let mut out = match a.precision {
        Precision::F64 => dist_with(&mu, &nu, metric, a.lambda, a.plan.as_deref())?,
        Precision::F32 => dist_with(&to_f32(&mu)?, &to_f32(&nu)?, metric, a.lambda as f32, a.plan.as_deref())?,
    };
    out["precision"] = json!(match a.precision {
        Precision::F64 => "f64",
        Precision::F32 => "f32",
    });
    save_json(a.out.as_deref(), &out)?;
    Ok(out)
}

fn model_from(m: &ModelArgs) -> Result<GenerativeModel, CliError> {
    let model = match m.family {
        Family::LognormalSum => GenerativeModel::LognormalSum {
            gamma: m.gamma,
            sigma: m.sigma,
            l: m.l,
        },
        Family::AlphaStable => GenerativeModel::AlphaStable {
            alpha: m.alpha,
            beta: m.beta,
            scale: m.scale,
            loc: m.loc,
        },
        Family::Gaussian => GenerativeModel::Gaussian { mean: m.mean, sd: m.sd },
        Family::Uniform => GenerativeModel::Uniform { a: m.a, b: m.b },
    };
    model.validate()?;
    Ok(model)
}

pub fn sample(a: SampleArgs) -> CliResult {
    let model = model_from(&a.model)?;
    let spec = ContaminationSpec {
        epsilon: a.epsilon,
        eta: a.eta,
        mechanism: a.mechanism.parse::<Mechanism>()?,
    };
    let s = contaminate(&model, &spec, a.n, SeedStream::new(a.seed))?;
    write_table(&a.out, &["x".to_string()], s.values.iter().map(|&x| vec![x]))?;
    Ok(json!({
        "model": model,
        "contamination": spec,
        "n": a.n,
        "outliers": s.outliers.len(),
        "seed": a.seed,
        "out": a.out,
    }))
}

pub fn estimate(a: EstimateArgs) -> CliResult {
    let data = read_measure_csv(&a.data)?;
    if data.dim() != 1 {
        return Err(CliError::invalid("estimation needs a one-column sample"));
    }
    let model = model_from(&a.model)?;
    let [lo, hi] = a.bounds[..] else {
        return Err(CliError::invalid("--bounds LO HI is required"));
    };
    let mut cfg = EstimationConfig::new(a.lambda, a.m, a.k, lo, hi, a.seed);
    cfg.params = a.param.into_iter().collect();
    cfg.common_random_numbers = !a.fresh_noise;
    let fit = fit_merwe(&data, &model, &cfg)?;
    let mut out = to_value(&fit)?;
    out["lambda"] = lambda_json(a.lambda);
    save_json(a.out.as_deref(), &out)?;
    Ok(out)
}

pub fn select_lambda(a: SelectLambdaArgs) -> CliResult {
    let sample = read_measure_csv(&a.data)?;
    let grid = log_grid(a.grid_min, a.grid_max, a.grid_n)?;
    let report = select_lambda_for_sample(&sample, &grid, a.tau, a.t, a.iota)?;
    let out = to_value(&report)?;
    save_json(a.out.as_deref(), &out)?;
    Ok(out)
}

pub fn conc(a: ConcArgs) -> CliResult {
    let sigma = match (&a.sigma, &a.sigma_from) {
        (Some(s), None) => *s,
        (None, Some(p)) => sigma_hat(&read_measure_csv(p)?, a.lambda)?,
        _ => return Err(CliError::invalid("give exactly one of --sigma and --sigma-from")),
    };
    if !(0.0..1.0).contains(&a.tau) {
        return Err(CliError::invalid("tau must lie in [0, 1)"));
    }
    let n_out = ((a.tau * a.n as f64).round() as usize).min(a.n);
    let clean = threshold_clean(&ConcentrationInputs::new(a.n, 0, a.lambda, a.t, sigma)?)?;
    let dirty = threshold_contaminated(&ConcentrationInputs::new(a.n, n_out, a.lambda, a.t, sigma)?)?;
    Ok(json!({
        "n": a.n,
        "n_outliers": n_out,
        "lambda": a.lambda,
        "t": a.t,
        "sigma": sigma,
        "threshold_clean": clean,
        "threshold_contaminated": dirty.threshold,
        "threshold_symmetrized": dirty.symmetrized,
    }))
}

fn column(table: &Table, name: &str, path: &Path) -> Result<Vec<f64>, CliError> {
    let k = table
        .column(name)
        .ok_or_else(|| CliError::invalid(format!("{}: no column named '{name}'", path.display())))?;
    Ok(table.rows.iter().map(|r| r[k]).collect())
}

pub fn regress(a: RegressArgs) -> CliResult {
    let table = read_table(&a.data)?;
    let x = column(&table, "x", &a.data)?;
    let y = column(&table, "y", &a.data)?;
    let ols = ols_fit(&x, &y)?;
    let report = robot_regression(&x, &y, a.lambda, a.max_iters, a.seed)?;
    let removed = report.kept_mask.iter().filter(|k| !**k).count();
    let out = json!({
        "ols": ols,
        "robot": report,
        "removed": removed,
    });
    save_json(a.out.as_deref(), &out)?;
    Ok(out)
}

/// Covariate rows (every column except `y`) and the `y` column if present.
fn features(table: &Table) -> (Vec<Vec<f64>>, Option<Vec<f64>>) {
    let y = table.column("y");
    let x = table
        .rows
        .iter()
        .map(|r| r.iter().enumerate().filter(|(k, _)| Some(*k) != y).map(|(_, v)| *v).collect())
        .collect();
    (x, y.map(|k| table.rows.iter().map(|r| r[k]).collect()))
}

pub fn adapt(a: AdaptArgs) -> CliResult {
    let source = read_table(&a.source)?;
    let (sx, sy) = features(&source);
    let sy = sy.ok_or_else(|| CliError::invalid(format!("{}: source needs a 'y' column", a.source.display())))?;
    let target = read_table(&a.target)?;
    let (tx, ty) = features(&target);
    let data = DomainAdaptDataset::new(sx, sy, tx)?;
    let params = AdaptParams {
        lambda: a.lambda,
        alpha_balance: a.alpha,
        bandwidth: a.bandwidth,
        ridge: a.ridge,
        max_iters: a.max_iters,
    };
    let (model, report) = robot_domain_adapt(&data, &params)?;
    let text = serde_json::to_string_pretty(&model).map_err(|e| CliError::invalid(e.to_string()))?;
    fs::write(&a.out, text + "\n").map_err(RobotError::from)?;
    if let Some(p) = &a.diagnostics {
        let headers: Vec<String> = ["iteration", "outliers", "objective", "coef_change"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows = report
            .iterations
            .iter()
            .map(|it| vec![it.iteration as f64, it.outliers as f64, it.objective, it.coef_change]);
        write_table(p, &headers, rows)?;
    }
    let mut out = to_value(&report)?;
    if let Some(ty) = ty {
        let pred = model.predict(&data.target_x);
        let mse = pred.iter().zip(&ty).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / ty.len() as f64;
        out["target_mse"] = json!(mse);
    }
    out["model"] = json!(a.out);
    Ok(out)
}

pub fn predict(a: PredictArgs) -> CliResult {
    let text = fs::read_to_string(&a.model).map_err(RobotError::from)?;
    let model: KrrModel =
        serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", a.model.display())))?;
    let table = read_table(&a.data)?;
    let (x, _) = features(&table);
    let dim = model.support.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != dim) {
        return Err(CliError::invalid(format!("model expects {dim} covariate columns")));
    }
    let pred = model.predict(&x);
    write_table(&a.out, &["prediction".to_string()], pred.iter().map(|&p| vec![p]))?;
    Ok(json!({ "rows": pred.len(), "out": a.out }))
}

pub fn validate(path: &Path) -> CliResult {
    let m = manifest::load(path)?;
    let d = manifest::validate(&m);
    let report = json!({ "valid": d.errors.is_empty(), "errors": d.errors, "warnings": d.warnings });
    if d.errors.is_empty() {
        Ok(report)
    } else {
        Err(CliError {
            code: 2,
            message: d.errors.join("; "),
            report: Some(report),
        })
    }
}
