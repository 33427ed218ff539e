//! Robust domain adaptation for regression.
//!
//! The target response is unknown, so a regressor `f` is fitted to
//! pseudo-labels obtained by transporting source labels onto target points
//! under the joint cost `α·d(x_s, x_t) + (y_s − f(x_t))²`. Trimming that cost
//! at `2λ` exposes source rows that cannot be matched cheaply; those rows are
//! dropped before the pseudo-labels are formed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RobotError};
use crate::ot::{solve_exact, CostMatrix};
use crate::robot::OUTLIER_TOL;
use crate::sampling::SeedStream;

/// Source rows `(x, y)` and unlabelled target rows `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainAdaptDataset {
    pub source_x: Vec<Vec<f64>>,
    pub source_y: Vec<f64>,
    pub target_x: Vec<Vec<f64>>,
}

impl DomainAdaptDataset {
    pub fn new(source_x: Vec<Vec<f64>>, source_y: Vec<f64>, target_x: Vec<Vec<f64>>) -> Result<Self> {
        if source_x.is_empty() || target_x.is_empty() {
            return Err(RobotError::invalid("source and target must be nonempty"));
        }
        if source_x.len() != source_y.len() {
            return Err(RobotError::invalid("source features and labels differ in length"));
        }
        let dim = source_x[0].len();
        if dim == 0 || source_x.iter().chain(&target_x).any(|r| r.len() != dim) {
            return Err(RobotError::invalid("all covariate rows must share one positive dimension"));
        }
        if source_x.iter().chain(&target_x).flatten().chain(&source_y).any(|v| !v.is_finite()) {
            return Err(RobotError::invalid("data must be finite"));
        }
        Ok(DomainAdaptDataset {
            source_x,
            source_y,
            target_x,
        })
    }

    pub fn dim(&self) -> usize {
        self.source_x[0].len()
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `D_ij = α·‖x_s_i − x_t_j‖ + (y_s_i − f_j)²`.
pub fn joint_cost(alpha: f64, xs: &[Vec<f64>], ys: &[f64], xt: &[Vec<f64>], f_of_xt: &[f64]) -> Result<CostMatrix<f64>> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(RobotError::invalid("alpha must be finite and nonnegative"));
    }
    if xs.len() != ys.len() || xt.len() != f_of_xt.len() {
        return Err(RobotError::invalid("features and labels differ in length"));
    }
    if let Some(first) = xs.first() {
        if xs.iter().chain(xt).any(|r| r.len() != first.len()) {
            return Err(RobotError::invalid("covariate dimension mismatch"));
        }
    }
    Ok(CostMatrix::from_fn(xs.len(), xt.len(), |i, j| {
        alpha * euclid(&xs[i], &xt[j]) + (ys[i] - f_of_xt[j]).powi(2)
    }))
}

/// Gaussian-kernel ridge regression `f(x) = Σ_i a_i exp(−‖x − x_i‖² / 2h²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrrModel {
    pub bandwidth: f64,
    pub ridge: f64,
    pub support: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
}

impl KrrModel {
    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }

    pub fn predict_one(&self, x: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coefficients)
            .map(|(s, a)| a * self.kernel(x, s))
            .sum()
    }

    pub fn predict(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        xs.iter().map(|x| self.predict_one(x)).collect()
    }
}

/// Solves `(K + ridge·I) a = y`.
pub fn krr_fit(x: &[Vec<f64>], y: &[f64], bandwidth: f64, ridge: f64) -> Result<KrrModel> {
    if x.is_empty() || x.len() != y.len() {
        return Err(RobotError::invalid("KRR needs equally many (nonzero) features and labels"));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() || !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(RobotError::invalid("bandwidth must be positive and ridge nonnegative"));
    }
    let mut model = KrrModel {
        bandwidth,
        ridge,
        support: x.to_vec(),
        coefficients: Vec::new(),
    };
    let n = x.len();
    let k = DMatrix::from_fn(n, n, |i, j| model.kernel(&x[i], &x[j]) + if i == j { ridge } else { 0.0 });
    let rhs = DVector::from_column_slice(y);
    let sol = match k.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => k
            .lu()
            .solve(&rhs)
            .ok_or_else(|| RobotError::solver("kernel system is singular; use a positive ridge"))?,
    };
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(RobotError::solver("kernel system produced non-finite coefficients"));
    }
    model.coefficients = sol.iter().copied().collect();
    Ok(model)
}

/// Median of pairwise Euclidean distances among `points`.
pub fn median_heuristic(points: &[Vec<f64>]) -> Result<f64> {
    let mut d = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(euclid(&points[i], &points[j]));
        }
    }
    if d.is_empty() {
        return Err(RobotError::invalid("median heuristic needs at least two points"));
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    if !(med > 0.0) {
        return Err(RobotError::invalid("all points coincide; bandwidth undefined"));
    }
    Ok(med)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptParams {
    /// Trimming level; infinite gives plain transport-based adaptation.
    pub lambda: f64,
    pub alpha_balance: f64,
    /// `None` picks the median heuristic on pooled covariates.
    pub bandwidth: Option<f64>,
    pub ridge: f64,
    pub max_iters: usize,
}

impl Default for AdaptParams {
    fn default() -> Self {
        AdaptParams {
            lambda: 1.0,
            alpha_balance: 1.0,
            bandwidth: None,
            ridge: 1e-3,
            max_iters: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptIteration {
    pub iteration: usize,
    /// Number of source rows removed this round.
    pub outliers: usize,
    /// Mean squared gap between pseudo-labels and the current fit.
    pub objective: f64,
    /// Largest change in a dual coefficient; infinite when the support changed.
    pub coef_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptReport {
    pub bandwidth: f64,
    pub iterations: Vec<AdaptIteration>,
    pub converged: bool,
    /// Source rows removed in the final round.
    pub removed: Vec<usize>,
}

/// One transport step: plan, removed rows and pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub removed: Vec<usize>,
    /// `(target index, label)` for every target column that keeps mass.
    pub labels: Vec<(usize, f64)>,
    /// Column-renormalised plan restricted to kept rows, as `(i, j, mass)`.
    pub plan: Vec<(usize, usize, f64)>,
}

/// Trimmed transport between source and target under the joint cost, row
/// removal and column renormalisation.
pub fn pseudo_labels(data: &DomainAdaptDataset, f_of_xt: &[f64], lambda: f64, alpha: f64) -> Result<PseudoLabels> {
    if !(lambda > 0.0) {
        return Err(RobotError::invalid("lambda must be positive"));
    }
    let raw = joint_cost(alpha, &data.source_x, &data.source_y, &data.target_x, f_of_xt)?;
    let two_lambda = 2.0 * lambda;
    let trimmed = raw.map(|d| d.min(two_lambda));
    let (ns, nt) = (data.source_x.len(), data.target_x.len());
    let a = vec![1.0 / ns as f64; ns];
    let b = vec![1.0 / nt as f64; nt];
    let sol = solve_exact(&trimmed, &a, &b)?;

    let mut s = vec![0.0; ns];
    for e in sol.plan.entries() {
        if raw.get(e.row, e.col) >= two_lambda {
            s[e.row] -= e.mass;
        }
    }
    let removed: Vec<usize> = (0..ns).filter(|&i| (a[i] + s[i]).abs() <= OUTLIER_TOL).collect();
    if removed.len() == ns {
        return Err(RobotError::AlgorithmFailure("every source row was removed".into()));
    }
    let mut keep = vec![true; ns];
    for &i in &removed {
        keep[i] = false;
    }

    let mut col_mass = vec![0.0; nt];
    let mut col_label = vec![0.0; nt];
    for e in sol.plan.entries().iter().filter(|e| keep[e.row]) {
        col_mass[e.col] += e.mass;
        col_label[e.col] += e.mass * data.source_y[e.row];
    }
    let labels = (0..nt)
        .filter(|&j| col_mass[j] > 0.0)
        .map(|j| (j, col_label[j] / col_mass[j]))
        .collect();
    let plan = sol
        .plan
        .entries()
        .iter()
        .filter(|e| keep[e.row] && col_mass[e.col] > 0.0)
        .map(|e| (e.row, e.col, e.mass * b[e.col] / col_mass[e.col]))
        .collect();
    Ok(PseudoLabels { removed, labels, plan })
}

/// Alternates transport with pseudo-labels and KRR refits, starting from a
/// KRR fit on the raw source data. Stops when no dual coefficient moves by
/// more than `1e-5` or after `max_iters` rounds.
pub fn robot_domain_adapt(data: &DomainAdaptDataset, params: &AdaptParams) -> Result<(KrrModel, AdaptReport)> {
    if params.max_iters == 0 {
        return Err(RobotError::invalid("max_iters must be at least 1"));
    }
    let bandwidth = match params.bandwidth {
        Some(h) => h,
        None => {
            let pooled: Vec<Vec<f64>> = data.source_x.iter().chain(&data.target_x).cloned().collect();
            median_heuristic(&pooled)?
        }
    };
    let mut model = krr_fit(&data.source_x, &data.source_y, bandwidth, params.ridge)?;
    let mut iterations = Vec::new();
    let mut removed = Vec::new();
    let mut converged = false;
    for it in 0..params.max_iters {
        let f = model.predict(&data.target_x);
        let step = pseudo_labels(data, &f, params.lambda, params.alpha_balance)?;
        let xs: Vec<Vec<f64>> = step.labels.iter().map(|&(j, _)| data.target_x[j].clone()).collect();
        let ys: Vec<f64> = step.labels.iter().map(|&(_, y)| y).collect();
        let next = krr_fit(&xs, &ys, bandwidth, params.ridge)?;
        let objective = step
            .labels
            .iter()
            .map(|&(j, y)| (y - next.predict_one(&data.target_x[j])).powi(2))
            .sum::<f64>()
            / step.labels.len() as f64;
        let coef_change = if next.support == model.support {
            next.coefficients
                .iter()
                .zip(&model.coefficients)
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        iterations.push(AdaptIteration {
            iteration: it + 1,
            outliers: step.removed.len(),
            objective,
            coef_change,
        });
        removed = step.removed;
        model = next;
        if coef_change < 1e-5 {
            converged = true;
            break;
        }
    }
    Ok((
        model,
        AdaptReport {
            bandwidth,
            iterations,
            converged,
            removed,
        },
    ))
}

/// Two-cluster source/target pair with a drifted response and outliers in
/// the last tenth of the source. Returns the dataset and the hidden target
/// labels.
///
/// Source: `x ~ N(−2, 1)` for the first half, `N(2, 1)` for the rest,
/// `y = sin(x/2) + z`, plus 2 on the last tenth. Target: `x ~ N(−1, 1)`
/// then `N(2, 1)`, `y = sin((x − 2)/2) + z`. Noise `z ~ N(0, 0.1²)`.
pub fn simulate_shifted_domains(ns: usize, nt: usize, seed: SeedStream) -> Result<(DomainAdaptDataset, Vec<f64>)> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = seed.rng();
    let mut normal = move || rng.sample::<f64, _>(StandardNormal);
    let mut source_x = Vec::with_capacity(ns);
    let mut source_y = Vec::with_capacity(ns);
    for i in 0..ns {
        let centre = if i < ns / 2 { -2.0 } else { 2.0 };
        let x = centre + normal();
        let shift = if i >= 9 * ns / 10 { 2.0 } else { 0.0 };
        source_x.push(vec![x]);
        source_y.push((x / 2.0).sin() + shift + 0.1 * normal());
    }
    let mut target_x = Vec::with_capacity(nt);
    let mut target_y = Vec::with_capacity(nt);
    for j in 0..nt {
        let centre = if j < nt / 2 { -1.0 } else { 2.0 };
        let x = centre + normal();
        target_x.push(vec![x]);
        target_y.push(((x - 2.0) / 2.0).sin() + 0.1 * normal());
    }
    Ok((DomainAdaptDataset::new(source_x, source_y, target_x)?, target_y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn joint_cost_examples() {
        let c = joint_cost(1.0, &col(&[0.0]), &[0.0], &col(&[2.0]), &[3.0]).unwrap();
        assert_eq!(c.get(0, 0), 11.0);
        let c = joint_cost(0.0, &col(&[0.0, 5.0]), &[1.0, 2.0], &col(&[9.0, 9.0]), &[1.0, 2.0]).unwrap();
        assert_eq!(c.get(0, 0), 0.0);
        assert_eq!(c.get(1, 1), 0.0);
        let c = joint_cost(1.0, &col(&[1.0, 1.0]), &[2.0, 2.0], &col(&[0.0, 3.0]), &[0.5, 0.0]).unwrap();
        assert_eq!(c.row(0), c.row(1));
        assert!(joint_cost(1.0, &col(&[0.0]), &[0.0], &[vec![0.0, 1.0]], &[0.0]).is_err());
    }

    #[test]
    fn krr_interpolates_with_tiny_ridge() {
        let x = col(&[-1.0, 0.0, 0.5, 2.0]);
        let y = [0.3, -1.0, 2.0, 0.7];
        let m = krr_fit(&x, &y, 0.7, 1e-12).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert!((m.predict_one(xi) - yi).abs() < 1e-6);
        }
    }

    #[test]
    fn krr_zero_labels_give_zero_coefficients() {
        let m = krr_fit(&col(&[0.0, 1.0, 2.0]), &[0.0; 3], 1.0, 1e-3).unwrap();
        assert!(m.coefficients.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn krr_shrinks_to_zero_under_huge_ridge() {
        let m = krr_fit(&col(&[0.0, 1.0, 2.0]), &[5.0, -3.0, 1.0], 1.0, 1e12).unwrap();
        assert!(m.predict_one(&[0.5]).abs() < 1e-9);
    }

    #[test]
    fn krr_singular_system_without_ridge_fails() {
        assert!(krr_fit(&col(&[1.0, 1.0]), &[0.0, 1.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn median_heuristic_on_line() {
        assert_eq!(median_heuristic(&col(&[0.0, 1.0, 3.0])).unwrap(), 2.0);
        assert!(median_heuristic(&col(&[1.0])).is_err());
    }

    #[test]
    fn pseudo_labels_are_convex_combinations_and_mass_is_kept() {
        let (data, _) = simulate_shifted_domains(60, 50, SeedStream::new(3)).unwrap();
        let f = vec![0.0; 50];
        let step = pseudo_labels(&data, &f, 1.0, 1.0).unwrap();
        let kept: Vec<f64> = (0..60).filter(|i| !step.removed.contains(i)).map(|i| data.source_y[i]).collect();
        let lo = kept.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = kept.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for &(_, y) in &step.labels {
            assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
        }
        let total: f64 = step.plan.iter().map(|e| e.2).sum();
        let expect = step.labels.len() as f64 / 50.0;
        assert!((total - expect).abs() < 1e-9);
    }

    #[test]
    fn infinite_lambda_removes_nothing() {
        let (data, _) = simulate_shifted_domains(40, 40, SeedStream::new(4)).unwrap();
        let step = pseudo_labels(&data, &vec![0.0; 40], f64::INFINITY, 1.0).unwrap();
        assert!(step.removed.is_empty());
        assert_eq!(step.labels.len(), 40);
    }

    #[test]
    fn identical_domains_reproduce_source_fit() {
        let xs: Vec<f64> = (0..40).map(|i| -3.0 + 6.0 * i as f64 / 39.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let data = DomainAdaptDataset::new(col(&xs), ys.clone(), col(&xs)).unwrap();
        let params = AdaptParams {
            lambda: 100.0,
            ..AdaptParams::default()
        };
        let (model, report) = robot_domain_adapt(&data, &params).unwrap();
        let source = krr_fit(&col(&xs), &ys, report.bandwidth, params.ridge).unwrap();
        for x in &xs {
            assert!((model.predict_one(&[*x]) - source.predict_one(&[*x])).abs() <= 0.1);
        }
        assert!(report.removed.is_empty());
    }
}
