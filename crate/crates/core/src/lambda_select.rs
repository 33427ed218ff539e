//! Data-driven choice of λ.
//!
//! For each λ on a grid the clean-sample threshold is divided by the
//! contaminated one at an assumed outlier share τ, giving a ratio `Q(λ)`.
//! Small λ discards too much and `Q` moves quickly; λ* is the first grid
//! point after which the slope of `Q` stays below a cutoff ι.

use serde::Serialize;

use crate::concentration::{geometric_median, sigma_hat_about};
use crate::error::{Result, RobotError};
use crate::measure::{check_lambda, DiscreteMeasure};

/// Outcome of [`select_lambda_for_sample`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSelectionReport {
    pub grid: Vec<f64>,
    pub sigma_values: Vec<f64>,
    pub q_values: Vec<f64>,
    /// `as_values[k]` is the slope on `[grid[k], grid[k + 1]]`.
    pub as_values: Vec<f64>,
    pub lambda_star: f64,
    pub tau: f64,
    pub t: f64,
    pub iota: f64,
    /// Set when no suffix of slopes is below ι and the last grid point was
    /// returned instead.
    pub warning: Option<String>,
}

/// Selected λ and whether the fallback rule fired.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub lambda_star: f64,
    pub index: usize,
    pub fallback: bool,
}

/// `n` points log-spaced on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && lo.is_finite() && hi.is_finite()) || n < 2 {
        return Err(RobotError::invalid("log grid needs 0 < lo < hi and at least two points"));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect())
}

/// 60 log-spaced points on `[1, e^6]`.
pub fn default_grid() -> Vec<f64> {
    log_grid(1.0, 6f64.exp(), 60).expect("static grid")
}

/// `[σ√(2t/n) + 4λt/n] / [σ√(1-τ)√(2t/n) + 4λt/n + 4τλ]`.
pub fn q_ratio(n: usize, tau: f64, lambda: f64, t: f64, sigma: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if n == 0 {
        return Err(RobotError::invalid("n must be positive"));
    }
    if !(0.0..1.0).contains(&tau) {
        return Err(RobotError::invalid(format!("tau must lie in [0, 1), got {tau}")));
    }
    if !(t > 0.0) || !(sigma >= 0.0) || !t.is_finite() || !sigma.is_finite() || !lambda.is_finite() {
        return Err(RobotError::invalid("need t > 0, sigma >= 0 and finite lambda"));
    }
    let n = n as f64;
    let root = (2.0 * t / n).sqrt();
    let num = sigma * root + 4.0 * lambda * t / n;
    let den = sigma * (1.0 - tau).sqrt() * root + 4.0 * lambda * t / n + 4.0 * tau * lambda;
    if den <= 0.0 {
        return Err(RobotError::invalid("ratio has a zero denominator"));
    }
    Ok(num / den)
}

/// `|Q_{k+1} - Q_k| / (λ_{k+1} - λ_k)`.
pub fn absolute_slopes(grid: &[f64], q_values: &[f64]) -> Result<Vec<f64>> {
    if grid.len() != q_values.len() || grid.len() < 2 {
        return Err(RobotError::invalid("grid and Q values need equal length >= 2"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(RobotError::invalid("grid must be strictly increasing"));
    }
    Ok(grid
        .windows(2)
        .zip(q_values.windows(2))
        .map(|(g, q)| (q[1] - q[0]).abs() / (g[1] - g[0]))
        .collect())
}

/// Smallest `λ_k` with `AS_i <= ι` for every `i >= k`.
///
/// `as_values` may have one entry fewer than `grid`. When even the last
/// slope exceeds ι the last grid point is returned with `fallback` set.
pub fn select_lambda(grid: &[f64], as_values: &[f64], iota: f64) -> Result<Selection> {
    if grid.is_empty() {
        return Err(RobotError::invalid("empty grid"));
    }
    if !(iota > 0.0) {
        return Err(RobotError::invalid("iota must be positive"));
    }
    if as_values.len() > grid.len() {
        return Err(RobotError::invalid("more slopes than grid points"));
    }
    let mut k = as_values.len();
    while k > 0 && as_values[k - 1] <= iota {
        k -= 1;
    }
    if k == as_values.len() && !as_values.is_empty() {
        let last = grid.len() - 1;
        return Ok(Selection {
            lambda_star: grid[last],
            index: last,
            fallback: true,
        });
    }
    Ok(Selection {
        lambda_star: grid[k],
        index: k,
        fallback: false,
    })
}

/// Full procedure on one sample: `σ̂(λ)` at every grid point, `Q`, slopes and λ*.
pub fn select_lambda_for_sample(
    sample: &DiscreteMeasure<f64>,
    grid: &[f64],
    tau: f64,
    t: f64,
    iota: f64,
) -> Result<LambdaSelectionReport> {
    let center = geometric_median(sample)?;
    let n = sample.len();
    let mut sigma_values = Vec::with_capacity(grid.len());
    let mut q_values = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let sigma = sigma_hat_about(sample, &center, lambda)?;
        sigma_values.push(sigma);
        q_values.push(q_ratio(n, tau, lambda, t, sigma)?);
    }
    let as_values = absolute_slopes(grid, &q_values)?;
    let sel = select_lambda(grid, &as_values, iota)?;
    let warning = sel.fallback.then(|| {
        format!("no slope suffix below iota = {iota}; returning the largest grid point")
    });
    Ok(LambdaSelectionReport {
        grid: grid.to_vec(),
        sigma_values,
        q_values,
        as_values,
        lambda_star: sel.lambda_star,
        tau,
        t,
        iota,
        warning,
    })
}
