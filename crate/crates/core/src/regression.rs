//! Outlier removal for simple linear regression by trimmed transport of
//! residuals onto a normal reference sample.
//!
//! Each round fits least squares on the kept rows, draws `n` reference
//! residuals from `N(0, σ̃²)`, solves the trimmed transport problem between
//! all `n` residuals and the reference, and marks as outliers the rows whose
//! whole mass ends up on trimmed pairs. Rows flagged in one round may be
//! readmitted in a later one; `kept_mask` reflects the final round.

use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Result, RobotError};
use crate::measure::{DiscreteMeasure, GroundMetric};
use crate::robot::{recover_tv_modification, robot_distance};
use crate::sampling::SeedStream;

/// Least-squares line `y ≈ alpha·x + beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OlsFit {
    pub alpha: f64,
    pub beta: f64,
    /// Sample standard deviation of the residuals.
    pub sigma: f64,
}

impl OlsFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.alpha * x + self.beta
    }

    pub fn residuals(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        x.iter().zip(y).map(|(&xi, &yi)| yi - self.predict(xi)).collect()
    }

    /// Mean squared prediction error on `(x, y)`.
    pub fn mse(&self, x: &[f64], y: &[f64]) -> f64 {
        let r = self.residuals(x, y);
        r.iter().map(|e| e * e).sum::<f64>() / r.len() as f64
    }
}

pub fn ols_fit(x: &[f64], y: &[f64]) -> Result<OlsFit> {
    if x.len() != y.len() {
        return Err(RobotError::invalid(format!("x has {} rows, y has {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(RobotError::invalid("least squares needs at least 3 rows"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(RobotError::invalid("regression data must be finite"));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if !(sxx > 0.0) {
        return Err(RobotError::invalid("covariate has zero variance"));
    }
    let alpha = sxy / sxx;
    let beta = my - alpha * mx;
    let fit = OlsFit { alpha, beta, sigma: 0.0 };
    let r = fit.residuals(x, y);
    let mr = r.iter().sum::<f64>() / nf;
    let sigma = (r.iter().map(|e| (e - mr).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    Ok(OlsFit { sigma, ..fit })
}

/// Rows whose residual mass is entirely trimmed against a fresh
/// `N(0, σ̃²)` reference of the same size.
pub fn robot_outlier_step(residuals: &[f64], sigma_tilde: f64, lambda: f64, seed: SeedStream) -> Result<Vec<usize>> {
    if residuals.is_empty() {
        return Err(RobotError::invalid("no residuals"));
    }
    if !(sigma_tilde > 0.0) || !sigma_tilde.is_finite() {
        return Err(RobotError::invalid(format!("sigma_tilde must be positive, got {sigma_tilde}")));
    }
    let normal = Normal::new(0.0, sigma_tilde).map_err(|e| RobotError::invalid(e.to_string()))?;
    let mut rng = seed.rng();
    let reference: Vec<f64> = (0..residuals.len()).map(|_| normal.sample(&mut rng)).collect();
    let mu = DiscreteMeasure::uniform_1d(residuals)?;
    let nu = DiscreteMeasure::uniform_1d(&reference)?;
    let sol = robot_distance(&mu, &nu, GroundMetric::AbsoluteDifference, lambda)?;
    Ok(recover_tv_modification(&sol, &mu)?.outliers)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustFitReport {
    pub alpha_hat: f64,
    pub beta_hat: f64,
    /// `σ̃` entering each round (the initial full-data fit first).
    pub sigma_tilde: Vec<f64>,
    /// Rows flagged in each round. The last entry is the complement of
    /// `kept_mask`.
    pub removed_indices: Vec<Vec<usize>>,
    /// Rows used by the final fit.
    pub kept_mask: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
}

impl RobustFitReport {
    pub fn fit(&self) -> OlsFit {
        OlsFit {
            alpha: self.alpha_hat,
            beta: self.beta_hat,
            sigma: *self.sigma_tilde.last().unwrap_or(&0.0),
        }
    }
}

/// Fit, detect, remove, refit; stops when both coefficients move by less
/// than `1e-6` or after `max_iters` rounds.
///
/// Every round recomputes residuals for all rows from the current fit, so a
/// row flagged early can be readmitted. Round `ℓ` draws its reference from
/// the child stream `("reference", ℓ)` of `seed`.
pub fn robot_regression(x: &[f64], y: &[f64], lambda: f64, max_iters: usize, seed: u64) -> Result<RobustFitReport> {
    if max_iters == 0 {
        return Err(RobotError::invalid("max_iters must be at least 1"));
    }
    let n = x.len();
    let root = SeedStream::new(seed);
    let mut fit = ols_fit(x, y)?;
    let mut sigma_tilde = vec![fit.sigma];
    let mut removed_indices = Vec::new();
    let mut kept_mask = vec![true; n];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        if !(fit.sigma > 0.0) {
            // exact fit on the kept rows: nothing left to detect
            converged = true;
            break;
        }
        let residuals = fit.residuals(x, y);
        let h = robot_outlier_step(&residuals, fit.sigma, lambda, root.child_indexed("reference", iterations as u64))?;
        iterations += 1;
        if n - h.len() < 3 {
            return Err(RobotError::AlgorithmFailure(format!(
                "round {iterations} flagged {} of {n} rows; fewer than 3 remain",
                h.len()
            )));
        }
        kept_mask = vec![true; n];
        for &i in &h {
            kept_mask[i] = false;
        }
        let (kx, ky): (Vec<f64>, Vec<f64>) = (0..n).filter(|&i| kept_mask[i]).map(|i| (x[i], y[i])).unzip();
        let next = ols_fit(&kx, &ky)?;
        removed_indices.push(h);
        sigma_tilde.push(next.sigma);
        let change = (next.alpha - fit.alpha).abs().max((next.beta - fit.beta).abs());
        fit = next;
        if change < 1e-6 {
            converged = true;
            break;
        }
    }
    Ok(RobustFitReport {
        alpha_hat: fit.alpha,
        beta_hat: fit.beta,
        sigma_tilde,
        removed_indices,
        kept_mask,
        iterations,
        converged,
    })
}

/// Data from `y = αx + β + z` with `x ~ U(0, 10)`, `z ~ N(0, σ²)`; each row
/// independently receives, with probability `epsilon`, an extra
/// `N(η + x, 1)` term. Returns `(x, y, is_outlier)`.
pub fn simulate_linear(
    n: usize,
    alpha: f64,
    beta: f64,
    sigma: f64,
    epsilon: f64,
    eta: f64,
    seed: SeedStream,
) -> Result<(Vec<f64>, Vec<f64>, Vec<bool>)> {
    if !(0.0..1.0).contains(&epsilon) || !(sigma > 0.0) {
        return Err(RobotError::invalid("need epsilon in [0, 1) and sigma > 0"));
    }
    use rand::Rng;
    let mut rng = seed.rng();
    let noise = Normal::new(0.0, sigma).map_err(|e| RobotError::invalid(e.to_string()))?;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = rng.random_range(0.0..10.0);
        let mut yi = alpha * xi + beta + noise.sample(&mut rng);
        let hit = rng.random::<f64>() < epsilon;
        if hit {
            yi += eta + xi + rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        x.push(xi);
        y.push(yi);
        out.push(hit);
    }
    Ok((x, y, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ols_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let f = ols_fit(&x, &y).unwrap();
        assert_relative_eq!(f.alpha, 2.0, epsilon = 1e-12);
        assert_relative_eq!(f.beta, 1.0, epsilon = 1e-12);
        assert!(f.sigma < 1e-12);
    }

    #[test]
    fn ols_constant_response() {
        let f = ols_fit(&[0.0, 1.0, 5.0], &[3.0, 3.0, 3.0]).unwrap();
        assert_relative_eq!(f.alpha, 0.0, epsilon = 1e-15);
        assert_relative_eq!(f.beta, 3.0, epsilon = 1e-12);
        assert!(f.sigma < 1e-12);
    }

    #[test]
    fn ols_rejects_degenerate_designs() {
        assert!(ols_fit(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).is_err());
        assert!(ols_fit(&[1.0, 2.0], &[0.0, 1.0]).is_err());
        assert!(ols_fit(&[1.0, 2.0, 3.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn ols_consistent_on_noisy_line() {
        use rand::Rng;
        let mut rng = SeedStream::new(4).rng();
        let x: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.0..10.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 0.01 * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        assert!((ols_fit(&x, &y).unwrap().alpha - 1.0).abs() < 0.01);
    }

    #[test]
    fn huge_residual_is_flagged() {
        let mut r = vec![0.1, -0.2, 0.05, 0.3, -0.1, 0.0, 0.2, -0.3];
        r.push(1e6);
        let h = robot_outlier_step(&r, 0.2, 1.0, SeedStream::new(3)).unwrap();
        assert_eq!(h, vec![8]);
    }

    #[test]
    fn infinite_lambda_flags_nothing() {
        let r = [0.1, -0.2, 50.0, 1e6];
        let h = robot_outlier_step(&r, 1.0, f64::INFINITY, SeedStream::new(1)).unwrap();
        assert!(h.is_empty());
    }

    #[test]
    fn well_inside_residuals_are_kept() {
        // every residual is within 2λ of every reference draw whp
        let r: Vec<f64> = (0..20).map(|i| (i as f64 - 10.0) * 0.01).collect();
        let h = robot_outlier_step(&r, 0.05, 5.0, SeedStream::new(2)).unwrap();
        assert!(h.is_empty());
    }

    #[test]
    fn clean_data_keeps_almost_everything() {
        let (x, y, _) = simulate_linear(500, 1.0, 1.0, 1.0, 0.0, 0.0, SeedStream::new(5)).unwrap();
        let rep = robot_regression(&x, &y, 1.0, 10, 9).unwrap();
        let removed = rep.kept_mask.iter().filter(|k| !**k).count();
        assert!(removed <= 10, "{removed}");
        let ols = ols_fit(&x, &y).unwrap();
        assert!((rep.alpha_hat - ols.alpha).abs() < 0.05);
    }

    #[test]
    fn kept_mask_matches_last_round() {
        let (x, y, _) = simulate_linear(300, 1.0, 1.0, 1.0, 0.2, 8.0, SeedStream::new(6)).unwrap();
        let rep = robot_regression(&x, &y, 1.0, 5, 1).unwrap();
        let last = rep.removed_indices.last().unwrap();
        let masked: Vec<usize> = (0..x.len()).filter(|&i| !rep.kept_mask[i]).collect();
        assert_eq!(&masked, last);
        assert_eq!(rep.sigma_tilde.len(), rep.iterations + 1);
        let kx: Vec<f64> = (0..x.len()).filter(|&i| rep.kept_mask[i]).map(|i| x[i]).collect();
        let ky: Vec<f64> = (0..x.len()).filter(|&i| rep.kept_mask[i]).map(|i| y[i]).collect();
        let refit = ols_fit(&kx, &ky).unwrap();
        assert_relative_eq!(refit.alpha, rep.alpha_hat, epsilon = 1e-12);
    }

    #[test]
    fn exact_line_stops_immediately() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 2.0).collect();
        let rep = robot_regression(&x, &y, 1.0, 10, 0).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(rep.converged && rep.kept_mask.iter().all(|&k| k));
    }
}
