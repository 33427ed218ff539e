//! Robust Wasserstein distance `W^(λ)`: transport under `min(d, 2λ)`.
//!
//! Besides the value, [`robot_distance`] reports how much source mass rides
//! on trimmed pairs (`d >= 2λ`). That mass is what the total-variation
//! modification `s` removes, and atoms whose whole mass is removed are the
//! detected outliers.

use crate::error::{Result, RobotError};
use crate::measure::{build_cost_matrix, cap, check_lambda, DiscreteMeasure, GroundMetric};
use crate::ot::{self, line, TransportPlan};
use crate::scalar::Scalar;

/// Tolerance on `|μ_i + s_i|` for declaring atom `i` an outlier.
pub const OUTLIER_TOL: f64 = 1e-7;

/// Default sensitivity grid: 81 points on `[-20, 20]`.
pub fn default_sensitivity_grid() -> Vec<f64> {
    (0..81).map(|k| -20.0 + 0.5 * k as f64).collect()
}

/// Optimal trimmed transport between two measures.
#[derive(Debug, Clone)]
pub struct RobotSolution<T: Scalar = f64> {
    pub value: T,
    pub lambda: T,
    pub plan: TransportPlan<T>,
    /// Source potential; `psi_i + phi_j <= min(d_ij, 2λ)`.
    pub psi: Vec<T>,
    pub phi: Vec<T>,
    /// `s_i = -Σ_j Π_ij 1{d_ij >= 2λ}`.
    pub s: Vec<T>,
    /// Total plan mass on trimmed pairs, equal to `-Σ s_i`.
    pub trimmed_mass: T,
}

/// TV modification of the source measure and the atoms it deletes entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct TvModification<T: Scalar = f64> {
    pub s: Vec<T>,
    pub outliers: Vec<usize>,
}

/// Result of checking a single potential on the union support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualCheck<T: Scalar = f64> {
    pub feasible: bool,
    pub dual_value: T,
    /// Primal value minus `dual_value`.
    pub gap: T,
    /// Largest `|ψ(u) - ψ(v)| - min(d(u, v), 2λ)` over support pairs.
    pub max_violation: T,
}

fn check_pair<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    metric: GroundMetric,
    lambda: T,
) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(RobotError::invalid(format!(
            "dimension mismatch: {} vs {}",
            mu.dim(),
            nu.dim()
        )));
    }
    metric.check_dim(mu.dim())?;
    check_lambda(lambda)
}

/// Solves the trimmed problem and reconstructs `s`.
///
/// One-dimensional inputs use the sparse line solver, everything else a
/// dense exact solve on the trimmed cost matrix. `lambda = +∞` gives `W₁`.
pub fn robot_distance<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    metric: GroundMetric,
    lambda: T,
) -> Result<RobotSolution<T>> {
    check_pair(mu, nu, metric, lambda)?;
    let two_lambda = lambda + lambda;
    let (plan, psi, phi) = if mu.dim() == 1 {
        let sol = line::solve_line(
            mu.coords(),
            mu.weights(),
            nu.coords(),
            nu.weights(),
            two_lambda,
            true,
        )?;
        (sol.plan.expect("plan requested"), sol.psi, sol.phi)
    } else {
        let costs = build_cost_matrix(mu, nu, metric, lambda)?;
        let sol = ot::solve_exact(costs.trimmed(), mu.weights(), nu.weights())?;
        (sol.plan, sol.duals.psi, sol.duals.phi)
    };

    let dist = |i: usize, j: usize| metric.distance(mu.atom(i), nu.atom(j));
    let value = plan.cost_with(|i, j| cap(dist(i, j), lambda));
    let mut s = vec![T::zero(); mu.len()];
    for e in plan.entries() {
        if dist(e.row, e.col) >= two_lambda {
            s[e.row] -= e.mass;
        }
    }
    let trimmed_mass = T::zero() - s.iter().copied().sum::<T>();
    Ok(RobotSolution {
        value,
        lambda,
        plan,
        psi,
        phi,
        s,
        trimmed_mass,
    })
}

/// Value of `W^(λ)` only; skips plan construction where possible.
pub fn robot_value<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    metric: GroundMetric,
    lambda: T,
) -> Result<T> {
    check_pair(mu, nu, metric, lambda)?;
    let two_lambda = lambda + lambda;
    if mu.dim() == 1 {
        if two_lambda.is_infinite() {
            return Ok(ot::w1_line(mu.coords(), mu.weights(), nu.coords(), nu.weights()));
        }
        return line::capped_value(mu.coords(), mu.weights(), nu.coords(), nu.weights(), two_lambda);
    }
    let costs = build_cost_matrix(mu, nu, metric, lambda)?;
    Ok(ot::solve_exact(costs.trimmed(), mu.weights(), nu.weights())?.value)
}

/// `s` together with `H = {i : |μ_i + s_i| <= 1e-7}`.
pub fn recover_tv_modification<T: Scalar>(
    solution: &RobotSolution<T>,
    mu: &DiscreteMeasure<T>,
) -> Result<TvModification<T>> {
    if solution.s.len() != mu.len() {
        return Err(RobotError::invalid(format!(
            "solution has {} source atoms, measure has {}",
            solution.s.len(),
            mu.len()
        )));
    }
    let tol = T::lit(OUTLIER_TOL);
    let outliers = mu
        .weights()
        .iter()
        .zip(&solution.s)
        .enumerate()
        .filter(|(_, (&w, &s))| (w + s).abs() <= tol)
        .map(|(i, _)| i)
        .collect();
    Ok(TvModification {
        s: solution.s.clone(),
        outliers,
    })
}

fn union_point<'a, T: Scalar>(mu: &'a DiscreteMeasure<T>, nu: &'a DiscreteMeasure<T>, k: usize) -> &'a [T] {
    if k < mu.len() {
        mu.atom(k)
    } else {
        nu.atom(k - mu.len())
    }
}

/// Single potential on the union support (source atoms first, then target
/// atoms) built from a solution's target potential by the c-transform
/// `ψ(z) = min_j (c_λ(z, y_j) - φ_j)`.
///
/// Since `c_λ` is a metric, `ψ` is `c_λ`-Lipschitz and attains the optimal
/// value in the one-potential dual.
pub fn merged_dual<T: Scalar>(
    solution: &RobotSolution<T>,
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    metric: GroundMetric,
) -> Result<Vec<T>> {
    if solution.phi.len() != nu.len() || solution.psi.len() != mu.len() {
        return Err(RobotError::invalid("solution does not match the measures"));
    }
    check_pair(mu, nu, metric, solution.lambda)?;
    let total = mu.len() + nu.len();
    Ok((0..total)
        .map(|k| {
            let z = union_point(mu, nu, k);
            (0..nu.len())
                .map(|j| cap(metric.distance(z, nu.atom(j)), solution.lambda) - solution.phi[j])
                .fold(T::infinity(), T::min)
        })
        .collect())
}

/// Checks `|ψ(u) - ψ(v)| <= min(d(u, v), 2λ) + 1e-9` over all pairs of the
/// union support and evaluates `Σ ψ dμ - Σ ψ dν` against `W^(λ)`.
pub fn verify_dual<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    metric: GroundMetric,
    lambda: T,
    psi: &[T],
) -> Result<DualCheck<T>> {
    check_pair(mu, nu, metric, lambda)?;
    let total = mu.len() + nu.len();
    if psi.len() != total {
        return Err(RobotError::invalid(format!(
            "potential has {} entries, union support has {total}",
            psi.len()
        )));
    }
    let mut max_violation = T::neg_infinity();
    for u in 0..total {
        for v in u + 1..total {
            let c = cap(metric.distance(union_point(mu, nu, u), union_point(mu, nu, v)), lambda);
            max_violation = max_violation.max((psi[u] - psi[v]).abs() - c);
        }
    }
    let max_violation = max_violation.max(T::zero());
    let plus: T = psi[..mu.len()].iter().zip(mu.weights()).map(|(&p, &w)| p * w).sum();
    let minus: T = psi[mu.len()..].iter().zip(nu.weights()).map(|(&p, &w)| p * w).sum();
    let dual_value = plus - minus;
    let primal = robot_value(mu, nu, metric, lambda)?;
    Ok(DualCheck {
        feasible: max_violation <= T::lit(1e-9),
        dual_value,
        gap: primal - dual_value,
        max_violation,
    })
}

/// `Δ(x) = n·W^(λ)(μ̂_n, μ̂_n^(x))` where `μ̂_n^(x)` moves the last atom of
/// `sample` to `x`.
pub fn sensitivity_curve<T: Scalar>(
    sample: &DiscreteMeasure<T>,
    x_grid: &[T],
    lambda: T,
) -> Result<Vec<(T, T)>> {
    check_lambda(lambda)?;
    if sample.dim() != 1 {
        return Err(RobotError::invalid("sensitivity curve needs a one-dimensional sample"));
    }
    if sample.len() < 2 {
        return Err(RobotError::invalid("sensitivity curve needs at least two atoms"));
    }
    if !sample.is_uniform() {
        return Err(RobotError::invalid("sensitivity curve needs uniform weights"));
    }
    let n = sample.len();
    let n_t = T::count(n);
    let metric = GroundMetric::AbsoluteDifference;
    x_grid
        .iter()
        .map(|&x| {
            let moved = sample.with_replaced_atom(n - 1, &[x])?;
            let sol = robot_distance(sample, &moved, metric, lambda)?;
            // n·Π_ij is an integer count here, so scale before summing
            let delta = sol.plan.entries().iter().fold(T::zero(), |acc, e| {
                let d = metric.distance(sample.atom(e.row), moved.atom(e.col));
                acc + (e.mass * n_t).round() * cap(d, lambda)
            });
            Ok((x, delta))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(xs: &[f64]) -> DiscreteMeasure<f64> {
        DiscreteMeasure::uniform_1d(xs).unwrap()
    }

    #[test]
    fn diracs_are_capped() {
        let s = robot_distance(&m1(&[0.0]), &m1(&[3.0]), GroundMetric::Euclidean, 1.0).unwrap();
        assert_eq!(s.value, 2.0);
        assert_eq!(s.s, vec![-1.0]);
        let tv = recover_tv_modification(&s, &m1(&[0.0])).unwrap();
        assert_eq!(tv.outliers, vec![0]);
    }

    #[test]
    fn two_point_example() {
        let s = robot_distance(&m1(&[0.0, 10.0]), &m1(&[1.0, 2.0]), GroundMetric::AbsoluteDifference, 1.0).unwrap();
        assert!((s.value - 1.5).abs() < 1e-15);
        assert_eq!(s.s, vec![0.0, -0.5]);
        assert_eq!(s.trimmed_mass, 0.5);
    }

    #[test]
    fn identical_measures_are_at_distance_zero() {
        let mu = m1(&[0.3, -1.0, 4.0]);
        for lambda in [0.1, 1.0, f64::INFINITY] {
            let s = robot_distance(&mu, &mu, GroundMetric::Euclidean, lambda).unwrap();
            assert_eq!(s.value, 0.0);
            assert!(s.s.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn one_far_atom_is_the_only_outlier() {
        let mu = m1(&[0.0, 0.1, 100.0]);
        let nu = m1(&[0.0, 0.1, 0.2]);
        let s = robot_distance(&mu, &nu, GroundMetric::AbsoluteDifference, 1.0).unwrap();
        let tv = recover_tv_modification(&s, &mu).unwrap();
        assert_eq!(tv.outliers, vec![2]);
    }

    #[test]
    fn zero_potential_is_feasible() {
        let mu = m1(&[0.0, 1.0]);
        let nu = m1(&[5.0, 7.0]);
        let c = verify_dual(&mu, &nu, GroundMetric::Euclidean, 1.0, &[0.0; 4]).unwrap();
        assert!(c.feasible);
        assert_eq!(c.dual_value, 0.0);
        assert!((c.gap - 2.0).abs() < 1e-12);
    }

    #[test]
    fn merged_dual_closes_the_gap() {
        let mu = DiscreteMeasure::new(vec![vec![0.0f64, 0.0], vec![1.0, 3.0], vec![-2.0, 0.5]], vec![0.2, 0.5, 0.3]).unwrap();
        let nu = DiscreteMeasure::uniform(vec![vec![0.5, 0.0], vec![4.0, 4.0]]).unwrap();
        let sol = robot_distance(&mu, &nu, GroundMetric::Euclidean, 1.5).unwrap();
        let psi = merged_dual(&sol, &mu, &nu, GroundMetric::Euclidean).unwrap();
        let c = verify_dual(&mu, &nu, GroundMetric::Euclidean, 1.5, &psi).unwrap();
        assert!(c.feasible, "violation {}", c.max_violation);
        assert!(c.gap.abs() < 1e-12, "gap {}", c.gap);
    }

    #[test]
    fn steep_potential_is_infeasible() {
        let mu = m1(&[0.0]);
        let nu = m1(&[1.0]);
        let c = verify_dual(&mu, &nu, GroundMetric::Euclidean, 1.0, &[0.0, 3.0]).unwrap();
        assert!(!c.feasible);
    }

    #[test]
    fn potential_length_is_checked() {
        let mu = m1(&[0.0]);
        assert!(verify_dual(&mu, &mu, GroundMetric::Euclidean, 1.0, &[0.0]).is_err());
    }

    #[test]
    fn sensitivity_examples() {
        let sample = m1(&[0.0, 0.0, 0.0, 0.0]);
        let curve = sensitivity_curve(&sample, &[0.0, 1.0, 2.0, 50.0, -7.0], 1.0).unwrap();
        let deltas: Vec<f64> = curve.iter().map(|p| p.1).collect();
        assert_eq!(deltas, vec![0.0, 1.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn sensitivity_needs_two_atoms() {
        assert!(sensitivity_curve(&m1(&[0.0]), &[1.0], 1.0).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let mu = DiscreteMeasure::<f32>::uniform_1d(&[0.0, 10.0]).unwrap();
        let nu = DiscreteMeasure::<f32>::uniform_1d(&[1.0, 2.0]).unwrap();
        let v = robot_value(&mu, &nu, GroundMetric::AbsoluteDifference, 1.0f32).unwrap();
        assert!((v - 1.5).abs() < 1e-6);
    }
}
