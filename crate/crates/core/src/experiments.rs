//! Monte-Carlo drivers shared by the command line and the test suites.
//!
//! Each driver takes a root seed and derives one child stream per replicate,
//! so rows are reproducible and independent of how replicates are scheduled.
//! Rows come back sorted by replicate index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concentration::{sigma_hat, threshold_clean, ConcentrationInputs};
use crate::domain_adapt::{krr_fit, robot_domain_adapt, simulate_shifted_domains, AdaptParams};
use crate::error::{Result, RobotError};
use crate::estimators::{fit_merwe, fit_mewe, EstimateResult, EstimationConfig};
use crate::lambda_select::{select_lambda_for_sample, LambdaSelectionReport};
use crate::measure::{DiscreteMeasure, GroundMetric};
use crate::regression::{ols_fit, robot_regression, simulate_linear};
use crate::robot::{robot_value, sensitivity_curve};
use crate::sampling::{contaminate, ContaminationSpec, GenerativeModel, Mechanism, SeedStream};

/// Replicated comparison of the trimmed and untrimmed estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationStudy {
    pub model: GenerativeModel,
    pub contamination: ContaminationSpec,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub lambda: f64,
    pub bounds: (f64, f64),
    pub replicates: usize,
    pub seed: u64,
    /// Freeze the model noise across evaluations of one fit. When false every
    /// objective evaluation draws fresh noise.
    #[serde(default = "default_true")]
    pub common_random_numbers: bool,
}

fn default_true() -> bool {
    true
}

impl EstimationStudy {
    /// Sum of ten log-normals, `γ = 0`, `σ = 1`, location-shift outliers.
    pub fn lognormal(n: usize, epsilon: f64, eta: f64, replicates: usize, seed: u64) -> Self {
        EstimationStudy {
            model: GenerativeModel::LognormalSum {
                gamma: 0.0,
                sigma: 1.0,
                l: 10,
            },
            contamination: ContaminationSpec {
                epsilon,
                eta,
                mechanism: Mechanism::LocationShift,
            },
            n,
            m: 1000,
            k: 20,
            lambda: 5.0,
            bounds: (-2.0, 2.0),
            replicates,
            seed,
            common_random_numbers: true,
        }
    }

    /// Symmetric stable law `(α, 0, 1, 0)` with shifted-location outliers.
    pub fn stable(alpha: f64, n: usize, epsilon: f64, eta: f64, replicates: usize, seed: u64) -> Self {
        EstimationStudy {
            model: GenerativeModel::AlphaStable {
                alpha,
                beta: 0.0,
                scale: 1.0,
                loc: 0.0,
            },
            contamination: ContaminationSpec {
                epsilon,
                eta,
                mechanism: Mechanism::StableShift,
            },
            n,
            m: 1000,
            k: 20,
            lambda: 5.0,
            bounds: (-10.0, 10.0),
            replicates,
            seed,
            common_random_numbers: true,
        }
    }

    pub fn truth(&self) -> f64 {
        self.model
            .parameter(self.model.location_name())
            .expect("location parameter exists")
    }

    /// Data sample of replicate `i`.
    pub fn data(&self, i: usize) -> Result<Vec<f64>> {
        let root = SeedStream::new(self.seed);
        Ok(contaminate(&self.model, &self.contamination, self.n, root.child_indexed("data", i as u64))?.values)
    }

    fn config(&self, i: usize) -> EstimationConfig {
        let fit_seed = SeedStream::new(self.seed).child_indexed("fit", i as u64).key();
        let mut cfg = EstimationConfig::new(self.lambda, self.m, self.k, self.bounds.0, self.bounds.1, fit_seed);
        cfg.common_random_numbers = self.common_random_numbers;
        cfg
    }

    pub fn replicate(&self, i: usize) -> Result<EstimateRow> {
        let data = DiscreteMeasure::uniform_1d(&self.data(i)?)?;
        let cfg = self.config(i);
        let merwe = fit_merwe(&data, &self.model, &cfg)?;
        let mewe = fit_mewe(&data, &self.model, &cfg)?;
        Ok(EstimateRow {
            replicate: i,
            merwe: merwe.theta_hat[0],
            mewe: mewe.theta_hat[0],
            merwe_evals: merwe.evals,
            mewe_evals: mewe.evals,
        })
    }

    pub fn run(&self) -> Result<Vec<EstimateRow>> {
        run_replicates(self.replicates, |i| self.replicate(i))
    }

    /// Trimmed estimator only, on replicate `i`.
    pub fn merwe(&self, i: usize) -> Result<EstimateResult> {
        fit_merwe(&DiscreteMeasure::uniform_1d(&self.data(i)?)?, &self.model, &self.config(i))
    }

    /// λ selection on the data of replicate `i`.
    pub fn select_lambda(&self, i: usize, tau: f64, t: f64, iota: f64, grid: &[f64]) -> Result<LambdaSelectionReport> {
        select_lambda_for_sample(&DiscreteMeasure::uniform_1d(&self.data(i)?)?, grid, tau, t, iota)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub replicate: usize,
    pub merwe: f64,
    pub mewe: f64,
    pub merwe_evals: usize,
    pub mewe_evals: usize,
}

/// Bias, mean squared error and quantiles of a set of estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub count: usize,
    pub bias: f64,
    pub mse: f64,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
}

impl ErrorSummary {
    /// `None` for an empty slice.
    pub fn of(estimates: &[f64], truth: f64) -> Option<Self> {
        if estimates.is_empty() {
            return None;
        }
        let n = estimates.len() as f64;
        let bias = estimates.iter().map(|e| e - truth).sum::<f64>() / n;
        let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / n;
        let mut sorted = estimates.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(ErrorSummary {
            count: estimates.len(),
            bias,
            mse,
            q05: quantile(&sorted, 0.05),
            median: quantile(&sorted, 0.5),
            q95: quantile(&sorted, 0.95),
        })
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Runs `f(0..count)` on the rayon pool and returns the rows in index order.
pub fn run_replicates<T: Send>(count: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..count).into_par_iter().map(f).collect()
}

fn standard_normal_sample(n: usize, seed: SeedStream) -> Result<Vec<f64>> {
    GenerativeModel::Gaussian { mean: 0.0, sd: 1.0 }.sample(n, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub lambda: f64,
    pub x: f64,
    pub delta: f64,
}

/// Sensitivity curves of one standard-normal sample of size `n` for each λ.
pub fn sensitivity_study(n: usize, lambdas: &[f64], x_grid: &[f64], seed: u64) -> Result<Vec<SensitivityRow>> {
    let sample = DiscreteMeasure::uniform_1d(&standard_normal_sample(n, SeedStream::new(seed).child("sample"))?)?;
    let per_lambda = run_replicates(lambdas.len(), |k| sensitivity_curve(&sample, x_grid, lambdas[k]))?;
    Ok(lambdas
        .iter()
        .zip(per_lambda)
        .flat_map(|(&lambda, curve)| curve.into_iter().map(move |(x, delta)| SensitivityRow { lambda, x, delta }))
        .collect())
}

/// Deviation of `W^(λ)` between a clean standard-normal sample and a large
/// fixed reference sample, compared with the clean-sample threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStudy {
    pub n: usize,
    pub reference_n: usize,
    pub lambda: f64,
    pub ts: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageRow {
    pub t: f64,
    pub sigma: f64,
    pub threshold: f64,
    pub mean_distance: f64,
    pub exceedance: f64,
    /// Nominal exceedance level `2e^{-t}`.
    pub nominal: f64,
}

impl CoverageStudy {
    pub fn run(&self) -> Result<Vec<CoverageRow>> {
        let root = SeedStream::new(self.seed);
        let reference = DiscreteMeasure::uniform_1d(&standard_normal_sample(self.reference_n, root.child("reference"))?)?;
        let sigma = sigma_hat(&reference, self.lambda)?;
        let distances = run_replicates(self.replicates, |i| {
            let sample = DiscreteMeasure::uniform_1d(&standard_normal_sample(self.n, root.child_indexed("sample", i as u64))?)?;
            robot_value(&sample, &reference, GroundMetric::AbsoluteDifference, self.lambda)
        })?;
        let mean = distances.iter().sum::<f64>() / distances.len() as f64;
        self.ts
            .iter()
            .map(|&t| {
                let threshold = threshold_clean(&ConcentrationInputs::new(self.n, 0, self.lambda, t, sigma)?)?;
                let hits = distances.iter().filter(|&&w| (w - mean).abs() > threshold).count();
                Ok(CoverageRow {
                    t,
                    sigma,
                    threshold,
                    mean_distance: mean,
                    exceedance: hits as f64 / distances.len() as f64,
                    nominal: 2.0 * (-t).exp(),
                })
            })
            .collect()
    }
}

/// Average `W^(λ)` between `U(0, 1)` and its empirical measure for each `n`.
/// The continuous law is represented by its `reference_n` mid-quantiles.
pub fn mean_rate_curve(ns: &[usize], lambda: f64, replicates: usize, reference_n: usize, seed: u64) -> Result<Vec<(usize, f64)>> {
    use rand::Rng;
    if reference_n == 0 || replicates == 0 {
        return Err(RobotError::invalid("reference size and replicate count must be positive"));
    }
    let grid: Vec<f64> = (0..reference_n).map(|i| (i as f64 + 0.5) / reference_n as f64).collect();
    let reference = DiscreteMeasure::uniform_1d(&grid)?;
    let root = SeedStream::new(seed);
    ns.iter()
        .map(|&n| {
            let ws = run_replicates(replicates, |r| {
                let mut rng = root.child_indexed("n", n as u64).child_indexed("replicate", r as u64).rng();
                let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                robot_value(&DiscreteMeasure::uniform_1d(&xs)?, &reference, GroundMetric::AbsoluteDifference, lambda)
            })?;
            Ok((n, ws.iter().sum::<f64>() / replicates as f64))
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln n`.
pub fn loglog_slope(points: &[(usize, f64)]) -> Result<f64> {
    let x: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    Ok(ols_fit(&x, &y)?.alpha)
}

/// Outlier-removal regression against plain least squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionStudy {
    pub n: usize,
    pub n_test: usize,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub lambda: f64,
    pub max_iters: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl RegressionStudy {
    /// `α = β = σ = 1`, `λ = 1`, ten rounds, 1000 clean test rows.
    pub fn standard(n: usize, epsilon: f64, eta: f64, replicates: usize, seed: u64) -> Self {
        RegressionStudy {
            n,
            n_test: 1000,
            alpha: 1.0,
            beta: 1.0,
            sigma: 1.0,
            epsilon,
            eta,
            lambda: 1.0,
            max_iters: 10,
            replicates,
            seed,
        }
    }

    pub fn replicate(&self, i: usize) -> Result<RegressionRow> {
        let root = SeedStream::new(self.seed);
        let (x, y, outlier) = simulate_linear(
            self.n,
            self.alpha,
            self.beta,
            self.sigma,
            self.epsilon,
            self.eta,
            root.child_indexed("train", i as u64),
        )?;
        let (tx, ty, _) = simulate_linear(
            self.n_test,
            self.alpha,
            self.beta,
            self.sigma,
            0.0,
            0.0,
            root.child_indexed("test", i as u64),
        )?;
        let ols = ols_fit(&x, &y)?;
        let report = robot_regression(&x, &y, self.lambda, self.max_iters, root.child_indexed("fit", i as u64).key())?;
        let robust = report.fit();
        let n_out = outlier.iter().filter(|&&o| o).count();
        let caught = (0..self.n).filter(|&k| outlier[k] && !report.kept_mask[k]).count();
        let false_removed = (0..self.n).filter(|&k| !outlier[k] && !report.kept_mask[k]).count();
        Ok(RegressionRow {
            replicate: i,
            ols_alpha: ols.alpha,
            ols_beta: ols.beta,
            robot_alpha: robust.alpha,
            robot_beta: robust.beta,
            ols_test_mse: ols.mse(&tx, &ty),
            robot_test_mse: robust.mse(&tx, &ty),
            outliers: n_out,
            recall: if n_out == 0 { 1.0 } else { caught as f64 / n_out as f64 },
            false_removal: false_removed as f64 / (self.n - n_out).max(1) as f64,
            iterations: report.iterations,
        })
    }

    pub fn run(&self) -> Result<Vec<RegressionRow>> {
        run_replicates(self.replicates, |i| self.replicate(i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub replicate: usize,
    pub ols_alpha: f64,
    pub ols_beta: f64,
    pub robot_alpha: f64,
    pub robot_beta: f64,
    pub ols_test_mse: f64,
    pub robot_test_mse: f64,
    pub outliers: usize,
    /// Share of injected outliers absent from the final fit.
    pub recall: f64,
    /// Share of clean rows absent from the final fit.
    pub false_removal: f64,
    pub iterations: usize,
}

/// Trimmed transport adaptation against untrimmed transport and a KRR fit
/// on the source alone, scored on the hidden target labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptStudy {
    pub ns: usize,
    pub nt: usize,
    pub params: AdaptParams,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptRow {
    pub replicate: usize,
    pub robust_mse: f64,
    pub ot_mse: f64,
    pub krr_mse: f64,
    pub removed: usize,
    pub iterations: usize,
}

impl AdaptStudy {
    pub fn replicate(&self, i: usize) -> Result<AdaptRow> {
        let seed = SeedStream::new(self.seed).child_indexed("domains", i as u64);
        let (data, target_y) = simulate_shifted_domains(self.ns, self.nt, seed)?;
        let mse = |pred: Vec<f64>| pred.iter().zip(&target_y).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / pred.len() as f64;
        let (robust, report) = robot_domain_adapt(&data, &self.params)?;
        let untrimmed = AdaptParams {
            lambda: f64::INFINITY,
            bandwidth: Some(report.bandwidth),
            ..self.params
        };
        let (plain_ot, _) = robot_domain_adapt(&data, &untrimmed)?;
        let source_only = krr_fit(&data.source_x, &data.source_y, report.bandwidth, self.params.ridge)?;
        Ok(AdaptRow {
            replicate: i,
            robust_mse: mse(robust.predict(&data.target_x)),
            ot_mse: mse(plain_ot.predict(&data.target_x)),
            krr_mse: mse(source_only.predict(&data.target_x)),
            removed: report.removed.len(),
            iterations: report.iterations.len(),
        })
    }

    pub fn run(&self) -> Result<Vec<AdaptRow>> {
        run_replicates(self.replicates, |i| self.replicate(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert_eq!(quantile(&v, 0.0), 0.0);
        assert_eq!(quantile(&v, 0.125), 0.5);
    }

    #[test]
    fn error_summary_of_constant_estimates() {
        let s = ErrorSummary::of(&[1.5; 4], 1.0).unwrap();
        assert_eq!(s.bias, 0.5);
        assert_eq!(s.mse, 0.25);
        assert!(ErrorSummary::of(&[], 0.0).is_none());
    }

    #[test]
    fn loglog_slope_of_power_law() {
        let pts: Vec<(usize, f64)> = [10usize, 100, 1000].iter().map(|&n| (n, 3.0 / (n as f64).sqrt())).collect();
        assert!((loglog_slope(&pts).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn replicates_are_reproducible() {
        let study = RegressionStudy::standard(60, 0.1, 4.0, 2, 11);
        assert_eq!(study.replicate(1).unwrap(), study.replicate(1).unwrap());
        assert_eq!(study.run().unwrap()[1], study.replicate(1).unwrap());
    }

    #[test]
    fn estimation_study_data_has_requested_size() {
        let study = EstimationStudy::lognormal(50, 0.2, 4.0, 1, 3);
        assert_eq!(study.data(0).unwrap().len(), 50);
        assert_eq!(study.truth(), 0.0);
    }
}
