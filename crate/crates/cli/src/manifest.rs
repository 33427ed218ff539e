//! Experiment manifests: a JSON file naming one experiment, its settings, a
//! root seed, a replicate count and an output directory.
//!
//! Running a manifest writes `results.csv`, `summary.json` and an echo of the
//! manifest (with defaults filled in) to `manifest.json`. A failed run leaves
//! a `FAILED` file holding the error message.

use std::fs;
use std::path::{Path, PathBuf};

use robot_core::domain_adapt::AdaptParams;
use robot_core::experiments::{
    quantile, sensitivity_study, AdaptStudy, CoverageStudy, ErrorSummary, EstimationStudy, RegressionStudy,
};
use robot_core::io::fmt_real;
use robot_core::lambda_select::log_grid;
use robot_core::RobotError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub experiment: Experiment,
    /// Root seed; every replicate derives its own child stream from it.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub output_dir: PathBuf,
}

fn default_replicates() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum Experiment {
    Table1 {
        n: usize,
        epsilon: f64,
        eta: f64,
        #[serde(default = "d_m")]
        m: usize,
        #[serde(default = "d_k")]
        k: usize,
        #[serde(default = "d_lambda5")]
        lambda: f64,
        #[serde(default = "d_bounds_ln")]
        bounds: (f64, f64),
        #[serde(default = "d_true")]
        common_random_numbers: bool,
    },
    Table2 {
        alpha: f64,
        n: usize,
        epsilon: f64,
        eta: f64,
        #[serde(default = "d_m")]
        m: usize,
        #[serde(default = "d_k")]
        k: usize,
        #[serde(default = "d_lambda5")]
        lambda: f64,
        #[serde(default = "d_bounds_stable")]
        bounds: (f64, f64),
        #[serde(default = "d_true")]
        common_random_numbers: bool,
    },
    Sensitivity {
        n: usize,
        lambdas: Vec<f64>,
        #[serde(default = "d_xmin")]
        x_min: f64,
        #[serde(default = "d_xmax")]
        x_max: f64,
        #[serde(default = "d_xsteps")]
        x_steps: usize,
    },
    LambdaSelect {
        n: usize,
        epsilon: f64,
        eta: f64,
        #[serde(default = "d_tau")]
        tau: f64,
        #[serde(default = "d_one")]
        t: f64,
        #[serde(default = "d_iota")]
        iota: f64,
        #[serde(default = "d_one")]
        grid_min: f64,
        #[serde(default = "d_grid_max")]
        grid_max: f64,
        #[serde(default = "d_grid_n")]
        grid_n: usize,
    },
    Regression {
        n: usize,
        epsilon: f64,
        eta: f64,
        #[serde(default = "d_n_test")]
        n_test: usize,
        #[serde(default = "d_one")]
        alpha: f64,
        #[serde(default = "d_one")]
        beta: f64,
        #[serde(default = "d_one")]
        sigma: f64,
        #[serde(default = "d_one")]
        lambda: f64,
        #[serde(default = "d_iters")]
        max_iters: usize,
    },
    Adapt {
        #[serde(default = "d_domain")]
        ns: usize,
        #[serde(default = "d_domain")]
        nt: usize,
        #[serde(default = "d_one")]
        lambda: f64,
        #[serde(default = "d_one")]
        alpha_balance: f64,
        #[serde(default)]
        bandwidth: Option<f64>,
        #[serde(default = "d_ridge")]
        ridge: f64,
        #[serde(default = "d_iters")]
        max_iters: usize,
    },
    ConcentrationCoverage {
        n: usize,
        lambda: f64,
        #[serde(default = "d_ts")]
        ts: Vec<f64>,
        #[serde(default = "d_reference")]
        reference_n: usize,
    },
}

fn d_m() -> usize {
    1000
}
fn d_k() -> usize {
    20
}
fn d_lambda5() -> f64 {
    5.0
}
fn d_bounds_ln() -> (f64, f64) {
    (-2.0, 2.0)
}
fn d_bounds_stable() -> (f64, f64) {
    (-10.0, 10.0)
}
fn d_true() -> bool {
    true
}
fn d_xmin() -> f64 {
    -20.0
}
fn d_xmax() -> f64 {
    20.0
}
fn d_xsteps() -> usize {
    401
}
fn d_tau() -> f64 {
    0.1
}
fn d_one() -> f64 {
    1.0
}
fn d_iota() -> f64 {
    0.001
}
fn d_grid_max() -> f64 {
    6f64.exp()
}
fn d_grid_n() -> usize {
    60
}
fn d_n_test() -> usize {
    1000
}
fn d_iters() -> usize {
    10
}
fn d_domain() -> usize {
    200
}
fn d_ridge() -> f64 {
    1e-3
}
fn d_ts() -> Vec<f64> {
    vec![1.0, 2.0]
}
fn d_reference() -> usize {
    10_000
}

/// Outcome of [`validate`]: errors make the manifest unusable, warnings do not.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

/// Parses a manifest file. Syntax and schema problems are reported as
/// invalid input.
pub fn load(path: &Path) -> Result<Manifest, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

fn check(errors: &mut Vec<String>, ok: bool, msg: &str) {
    if !ok {
        errors.push(msg.to_string());
    }
}

pub fn validate(manifest: &Manifest) -> Diagnostics {
    let mut d = Diagnostics::default();
    if manifest.seed.is_none() {
        d.warnings.push("seed missing; using 0".into());
    }
    let e = &mut d.errors;
    let epsilon_ok = |x: f64| (0.0..1.0).contains(&x);
    match &manifest.experiment {
        Experiment::Table1 {
            n, epsilon, eta, m, k, lambda, bounds, ..
        }
        | Experiment::Table2 {
            n, epsilon, eta, m, k, lambda, bounds, ..
        } => {
            check(e, *n >= 1, "n must be at least 1");
            check(e, epsilon_ok(*epsilon), "epsilon must lie in [0, 1)");
            check(e, eta.is_finite(), "eta must be finite");
            check(e, *m >= 1 && *k >= 1, "m and k must be at least 1");
            check(e, *lambda > 0.0, "lambda must be positive");
            check(e, bounds.0.is_finite() && bounds.1.is_finite() && bounds.0 < bounds.1, "bounds must satisfy lo < hi");
            if let Experiment::Table2 { alpha, .. } = &manifest.experiment {
                check(e, *alpha > 0.0 && *alpha <= 2.0, "alpha must lie in (0, 2]");
            }
        }
        Experiment::Sensitivity {
            n,
            lambdas,
            x_min,
            x_max,
            x_steps,
        } => {
            check(e, *n >= 2, "n must be at least 2");
            check(e, !lambdas.is_empty() && lambdas.iter().all(|&l| l > 0.0), "lambdas must be positive and nonempty");
            check(e, x_min < x_max && *x_steps >= 2, "need x_min < x_max and x_steps >= 2");
        }
        Experiment::LambdaSelect {
            n,
            epsilon,
            tau,
            t,
            iota,
            grid_min,
            grid_max,
            grid_n,
            ..
        } => {
            check(e, *n >= 1, "n must be at least 1");
            check(e, epsilon_ok(*epsilon), "epsilon must lie in [0, 1)");
            check(e, epsilon_ok(*tau), "tau must lie in [0, 1)");
            check(e, *t > 0.0 && *iota > 0.0, "t and iota must be positive");
            check(e, *grid_min > 0.0 && grid_max > grid_min && *grid_n >= 2, "grid needs 0 < min < max and n >= 2");
        }
        Experiment::Regression {
            n,
            epsilon,
            sigma,
            lambda,
            max_iters,
            n_test,
            ..
        } => {
            check(e, *n >= 3 && *n_test >= 1, "need n >= 3 and n_test >= 1");
            check(e, epsilon_ok(*epsilon), "epsilon must lie in [0, 1)");
            check(e, *sigma > 0.0 && *lambda > 0.0, "sigma and lambda must be positive");
            check(e, *max_iters >= 1, "max_iters must be at least 1");
        }
        Experiment::Adapt {
            ns,
            nt,
            lambda,
            alpha_balance,
            bandwidth,
            ridge,
            max_iters,
        } => {
            check(e, *ns >= 2 && *nt >= 2, "ns and nt must be at least 2");
            check(e, *lambda > 0.0 && *alpha_balance >= 0.0, "need lambda > 0 and alpha_balance >= 0");
            check(e, bandwidth.is_none_or(|h| h > 0.0), "bandwidth must be positive");
            check(e, *ridge >= 0.0 && *max_iters >= 1, "need ridge >= 0 and max_iters >= 1");
        }
        Experiment::ConcentrationCoverage {
            n,
            lambda,
            ts,
            reference_n,
        } => {
            check(e, *n >= 1 && *reference_n >= 1, "n and reference_n must be positive");
            check(e, *lambda > 0.0 && lambda.is_finite(), "lambda must be positive and finite");
            check(e, !ts.is_empty() && ts.iter().all(|&t| t > 0.0), "ts must be positive and nonempty");
        }
    }
    d
}

/// CSV content as header plus rows of already formatted fields.
struct Csv {
    headers: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

fn write_csv(path: &Path, csv: &Csv) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(RobotError::from)?;
    w.write_record(&csv.headers).map_err(RobotError::from)?;
    for row in &csv.rows {
        w.write_record(row).map_err(RobotError::from)?;
    }
    w.flush().map_err(RobotError::from)?;
    Ok(())
}

fn r(x: f64) -> String {
    fmt_real(x)
}

fn estimation_study(manifest: &Manifest, seed: u64) -> EstimationStudy {
    match manifest.experiment {
        Experiment::Table1 {
            n,
            epsilon,
            eta,
            m,
            k,
            lambda,
            bounds,
            common_random_numbers,
        } => {
            let mut s = EstimationStudy::lognormal(n, epsilon, eta, manifest.replicates, seed);
            (s.m, s.k, s.lambda, s.bounds, s.common_random_numbers) = (m, k, lambda, bounds, common_random_numbers);
            s
        }
        Experiment::Table2 {
            alpha,
            n,
            epsilon,
            eta,
            m,
            k,
            lambda,
            bounds,
            common_random_numbers,
        } => {
            let mut s = EstimationStudy::stable(alpha, n, epsilon, eta, manifest.replicates, seed);
            (s.m, s.k, s.lambda, s.bounds, s.common_random_numbers) = (m, k, lambda, bounds, common_random_numbers);
            s
        }
        _ => unreachable!("only called for estimation experiments"),
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn compute(manifest: &Manifest) -> Result<(Csv, Value), CliError> {
    let seed = manifest.seed.unwrap_or(0);
    let reps = manifest.replicates;
    Ok(match &manifest.experiment {
        Experiment::Table1 { .. } | Experiment::Table2 { .. } => {
            let study = estimation_study(manifest, seed);
            let rows = study.run()?;
            let merwe: Vec<f64> = rows.iter().map(|r| r.merwe).collect();
            let mewe: Vec<f64> = rows.iter().map(|r| r.mewe).collect();
            let csv = Csv {
                headers: vec!["replicate", "merwe", "mewe", "merwe_evals", "mewe_evals"],
                rows: rows
                    .iter()
                    .map(|x| {
                        vec![
                            x.replicate.to_string(),
                            r(x.merwe),
                            r(x.mewe),
                            x.merwe_evals.to_string(),
                            x.mewe_evals.to_string(),
                        ]
                    })
                    .collect(),
            };
            let summary = json!({
                "truth": study.truth(),
                "merwe": ErrorSummary::of(&merwe, study.truth()),
                "mewe": ErrorSummary::of(&mewe, study.truth()),
            });
            (csv, summary)
        }
        Experiment::Sensitivity {
            n,
            lambdas,
            x_min,
            x_max,
            x_steps,
        } => {
            let grid: Vec<f64> = (0..*x_steps)
                .map(|i| x_min + (x_max - x_min) * i as f64 / (*x_steps - 1) as f64)
                .collect();
            let rows = sensitivity_study(*n, lambdas, &grid, seed)?;
            let peaks: Vec<Value> = lambdas
                .iter()
                .map(|&l| {
                    let peak = rows.iter().filter(|x| x.lambda == l).map(|x| x.delta).fold(0.0, f64::max);
                    json!({ "lambda": l, "max_delta": peak, "two_lambda": 2.0 * l })
                })
                .collect();
            let csv = Csv {
                headers: vec!["lambda", "x", "delta"],
                rows: rows.iter().map(|x| vec![r(x.lambda), r(x.x), r(x.delta)]).collect(),
            };
            (csv, json!({ "curves": peaks }))
        }
        Experiment::LambdaSelect {
            n,
            epsilon,
            eta,
            tau,
            t,
            iota,
            grid_min,
            grid_max,
            grid_n,
        } => {
            let grid = log_grid(*grid_min, *grid_max, *grid_n)?;
            let study = EstimationStudy::lognormal(*n, *epsilon, *eta, reps, seed);
            let reports = robot_core::experiments::run_replicates(reps, |i| study.select_lambda(i, *tau, *t, *iota, &grid))?;
            let mut logs: Vec<f64> = reports.iter().map(|x| x.lambda_star.ln()).collect();
            logs.sort_by(f64::total_cmp);
            let csv = Csv {
                headers: vec!["replicate", "lambda_star", "ln_lambda_star", "fallback"],
                rows: reports
                    .iter()
                    .enumerate()
                    .map(|(i, x)| {
                        vec![
                            i.to_string(),
                            r(x.lambda_star),
                            r(x.lambda_star.ln()),
                            u8::from(x.warning.is_some()).to_string(),
                        ]
                    })
                    .collect(),
            };
            let summary = if logs.is_empty() {
                json!({ "count": 0 })
            } else {
                json!({
                    "count": logs.len(),
                    "ln_lambda_star": {
                        "mean": mean(logs.iter().copied()),
                        "q05": quantile(&logs, 0.05),
                        "median": quantile(&logs, 0.5),
                        "q95": quantile(&logs, 0.95),
                    },
                    "fallbacks": reports.iter().filter(|x| x.warning.is_some()).count(),
                })
            };
            (csv, summary)
        }
        Experiment::Regression {
            n,
            epsilon,
            eta,
            n_test,
            alpha,
            beta,
            sigma,
            lambda,
            max_iters,
        } => {
            let study = RegressionStudy {
                n: *n,
                n_test: *n_test,
                alpha: *alpha,
                beta: *beta,
                sigma: *sigma,
                epsilon: *epsilon,
                eta: *eta,
                lambda: *lambda,
                max_iters: *max_iters,
                replicates: reps,
                seed,
            };
            let rows = study.run()?;
            let csv = Csv {
                headers: vec![
                    "replicate",
                    "ols_alpha",
                    "ols_beta",
                    "robot_alpha",
                    "robot_beta",
                    "ols_test_mse",
                    "robot_test_mse",
                    "outliers",
                    "recall",
                    "false_removal",
                    "iterations",
                ],
                rows: rows
                    .iter()
                    .map(|x| {
                        vec![
                            x.replicate.to_string(),
                            r(x.ols_alpha),
                            r(x.ols_beta),
                            r(x.robot_alpha),
                            r(x.robot_beta),
                            r(x.ols_test_mse),
                            r(x.robot_test_mse),
                            x.outliers.to_string(),
                            r(x.recall),
                            r(x.false_removal),
                            x.iterations.to_string(),
                        ]
                    })
                    .collect(),
            };
            let summary = json!({
                "count": rows.len(),
                "robot_wins": rows.iter().filter(|x| x.robot_test_mse < x.ols_test_mse).count(),
                "mean_ols_test_mse": mean(rows.iter().map(|x| x.ols_test_mse)),
                "mean_robot_test_mse": mean(rows.iter().map(|x| x.robot_test_mse)),
                "mean_recall": mean(rows.iter().map(|x| x.recall)),
                "mean_false_removal": mean(rows.iter().map(|x| x.false_removal)),
            });
            (csv, summary)
        }
        Experiment::Adapt {
            ns,
            nt,
            lambda,
            alpha_balance,
            bandwidth,
            ridge,
            max_iters,
        } => {
            let study = AdaptStudy {
                ns: *ns,
                nt: *nt,
                params: AdaptParams {
                    lambda: *lambda,
                    alpha_balance: *alpha_balance,
                    bandwidth: *bandwidth,
                    ridge: *ridge,
                    max_iters: *max_iters,
                },
                replicates: reps,
                seed,
            };
            let rows = study.run()?;
            let csv = Csv {
                headers: vec!["replicate", "robust_mse", "ot_mse", "krr_mse", "removed", "iterations"],
                rows: rows
                    .iter()
                    .map(|x| {
                        vec![
                            x.replicate.to_string(),
                            r(x.robust_mse),
                            r(x.ot_mse),
                            r(x.krr_mse),
                            x.removed.to_string(),
                            x.iterations.to_string(),
                        ]
                    })
                    .collect(),
            };
            let summary = json!({
                "count": rows.len(),
                "ordering_holds": rows.iter().filter(|x| x.robust_mse < x.ot_mse && x.ot_mse < x.krr_mse).count(),
                "mean_robust_mse": mean(rows.iter().map(|x| x.robust_mse)),
                "mean_ot_mse": mean(rows.iter().map(|x| x.ot_mse)),
                "mean_krr_mse": mean(rows.iter().map(|x| x.krr_mse)),
            });
            (csv, summary)
        }
        Experiment::ConcentrationCoverage {
            n,
            lambda,
            ts,
            reference_n,
        } => {
            let rows = if reps == 0 {
                Vec::new()
            } else {
                CoverageStudy {
                    n: *n,
                    reference_n: *reference_n,
                    lambda: *lambda,
                    ts: ts.clone(),
                    replicates: reps,
                    seed,
                }
                .run()?
            };
            let csv = Csv {
                headers: vec!["t", "sigma", "threshold", "mean_distance", "exceedance", "nominal"],
                rows: rows
                    .iter()
                    .map(|x| vec![r(x.t), r(x.sigma), r(x.threshold), r(x.mean_distance), r(x.exceedance), r(x.nominal)])
                    .collect(),
            };
            (csv, json!({ "replicates": reps, "rows": rows }))
        }
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::invalid(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::from(RobotError::from(e)))
}

/// Validates and runs `manifest`, writing the artifacts into its output
/// directory. Returns the summary on success.
pub fn run(manifest: &Manifest) -> Result<Value, CliError> {
    let diagnostics = validate(manifest);
    if !diagnostics.errors.is_empty() {
        return Err(CliError::invalid(diagnostics.errors.join("; ")));
    }
    let dir = &manifest.output_dir;
    fs::create_dir_all(dir).map_err(RobotError::from)?;
    let failed = dir.join("FAILED");
    if failed.exists() {
        fs::remove_file(&failed).map_err(RobotError::from)?;
    }
    let mut echo = manifest.clone();
    echo.seed = Some(manifest.seed.unwrap_or(0));
    write_json(&dir.join("manifest.json"), &echo)?;
    match compute(manifest) {
        Ok((csv, summary)) => {
            write_csv(&dir.join("results.csv"), &csv)?;
            write_json(&dir.join("summary.json"), &summary)?;
            Ok(summary)
        }
        Err(err) => {
            let _ = fs::write(&failed, format!("{err}\n"));
            Err(err)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Manifest {
        serde_json::from_str(text).unwrap()
    }

    #[test]
    fn defaults_are_filled() {
        let m = parse(r#"{"experiment":"table1","n":50,"epsilon":0.1,"eta":4,"seed":3,"output_dir":"x"}"#);
        assert_eq!(m.replicates, 100);
        match m.experiment {
            Experiment::Table1 { m, k, lambda, .. } => assert_eq!((m, k, lambda), (1000, 20, 5.0)),
            _ => panic!("wrong experiment"),
        }
    }

    #[test]
    fn domain_errors_are_reported() {
        let m = parse(r#"{"experiment":"table1","n":50,"epsilon":1.2,"eta":4,"seed":3,"output_dir":"x"}"#);
        let d = validate(&m);
        assert_eq!(d.errors.len(), 1);
        assert!(d.errors[0].contains("epsilon"));
    }

    #[test]
    fn missing_seed_is_a_warning() {
        let m = parse(r#"{"experiment":"sensitivity","n":20,"lambdas":[1],"output_dir":"x"}"#);
        let d = validate(&m);
        assert!(d.errors.is_empty());
        assert_eq!(d.warnings.len(), 1);
    }

    #[test]
    fn unknown_experiment_is_rejected() {
        assert!(serde_json::from_str::<Manifest>(r#"{"experiment":"gan","output_dir":"x"}"#).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let m = parse(r#"{"experiment":"adapt","seed":1,"replicates":2,"output_dir":"out"}"#);
        let back: Manifest = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(m, back);
    }
}
