//! Deviation thresholds for `W^(λ)` between a measure and its empirical
//! version, with and without outliers, plus the robust scale proxy they use.

use crate::error::{Result, RobotError};
use crate::measure::{check_lambda, DiscreteMeasure, GroundMetric};
use crate::scalar::Scalar;

const WEISZFELD_TOL: f64 = 1e-8;
const WEISZFELD_MAX_ITERS: usize = 10_000;

/// Sample layout and tail level for the deviation thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationInputs<T: Scalar = f64> {
    pub n: usize,
    pub n_inliers: usize,
    pub n_outliers: usize,
    pub lambda: T,
    pub t: T,
    pub sigma: T,
}

impl<T: Scalar> ConcentrationInputs<T> {
    /// `n` draws of which the last `n_outliers` are outliers.
    pub fn new(n: usize, n_outliers: usize, lambda: T, t: T, sigma: T) -> Result<Self> {
        let inputs = ConcentrationInputs {
            n,
            n_inliers: n.saturating_sub(n_outliers),
            n_outliers,
            lambda,
            t,
            sigma,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    fn validate(&self) -> Result<()> {
        if self.n_inliers + self.n_outliers != self.n {
            return Err(RobotError::invalid("inlier and outlier counts must add up to n"));
        }
        if self.n_inliers == 0 {
            return Err(RobotError::invalid("at least one inlier is required"));
        }
        check_lambda(self.lambda)?;
        if !(self.t > T::zero()) || !self.t.is_finite() {
            return Err(RobotError::invalid("t must be positive and finite"));
        }
        if !(self.sigma >= T::zero()) || !self.sigma.is_finite() {
            return Err(RobotError::invalid("sigma must be nonnegative and finite"));
        }
        Ok(())
    }
}

/// Both contaminated-sample thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContaminatedThresholds<T: Scalar = f64> {
    /// `σ√(|I|/n)√(2t/n) + 4λt/n + 2λ|O|/n`
    pub threshold: T,
    /// Same with `4λ|O|/n`, for deviations around the symmetrized mean.
    pub symmetrized: T,
}

/// `σ√(2t/|I|) + 4λt/|I|`, valid for clean samples only.
pub fn threshold_clean<T: Scalar>(inputs: &ConcentrationInputs<T>) -> Result<T> {
    inputs.validate()?;
    if inputs.n_outliers != 0 {
        return Err(RobotError::invalid(
            "sample has outliers; use threshold_contaminated",
        ));
    }
    let ni = T::count(inputs.n_inliers);
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    Ok(inputs.sigma * (two * inputs.t / ni).sqrt() + four * inputs.lambda * inputs.t / ni)
}

pub fn threshold_contaminated<T: Scalar>(inputs: &ConcentrationInputs<T>) -> Result<ContaminatedThresholds<T>> {
    inputs.validate()?;
    let n = T::count(inputs.n);
    let ni = T::count(inputs.n_inliers);
    let no = T::count(inputs.n_outliers);
    let (two, four) = (T::lit(2.0), T::lit(4.0));
    let lambda = inputs.lambda;
    let base = inputs.sigma * (ni / n).sqrt() * (two * inputs.t / n).sqrt() + four * lambda * inputs.t / n;
    Ok(ContaminatedThresholds {
        threshold: base + two * lambda * no / n,
        symmetrized: base + four * lambda * no / n,
    })
}

/// `(|I|/n)·w ∓ 2λ|O|/n`, bracketing `W^(λ)` against the full sample when
/// `w` is the distance against the inlier sub-sample.
pub fn sandwich_bounds<T: Scalar>(w_inlier: T, lambda: T, n: usize, n_outliers: usize) -> Result<(T, T)> {
    check_lambda(lambda)?;
    if n == 0 || n_outliers > n {
        return Err(RobotError::invalid("need 0 <= |O| <= n and n >= 1"));
    }
    let nt = T::count(n);
    let inner = T::count(n - n_outliers) / nt * w_inlier;
    let slack = T::lit(2.0) * lambda * T::count(n_outliers) / nt;
    Ok((inner - slack, inner + slack))
}

/// Parameters of the mean-rate bound for samples in a ball of radius `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanRateInputs<T: Scalar = f64> {
    pub k: T,
    pub d: usize,
    pub n: usize,
    pub c: T,
}

/// `C√(K(K∧λ)/n)` for d = 1, `(CK/√n)·log(√n/K)` for d = 2 and
/// `CK/n^{1/d}` for d ≥ 3.
pub fn mean_rate_bound<T: Scalar>(inputs: &MeanRateInputs<T>, lambda: T) -> Result<T> {
    check_lambda(lambda)?;
    let MeanRateInputs { k, d, n, c } = *inputs;
    if d < 1 {
        return Err(RobotError::invalid("dimension must be at least 1"));
    }
    if !(k > T::zero()) || !(c > T::zero()) || n < 2 {
        return Err(RobotError::invalid("need K > 0, C > 0 and n >= 2"));
    }
    let nt = T::count(n);
    Ok(match d {
        1 => c * (k * k.min(lambda) / nt).sqrt(),
        2 => c * k / nt.sqrt() * (nt.sqrt() / k).ln(),
        _ => c * k / nt.powf(T::one() / T::count(d)),
    })
}

/// Minimizer of the summed Euclidean distance to `points` (rows of the
/// measure, weights ignored).
///
/// In one dimension this is the sample median, the midpoint of the two
/// middle values for even counts. Otherwise Weiszfeld's iteration is run
/// until the step length drops below `1e-8`.
pub fn geometric_median<T: Scalar>(points: &DiscreteMeasure<T>) -> Result<Vec<T>> {
    let d = points.dim();
    if d == 1 {
        let mut v = points.coords().to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
        let n = v.len();
        let med = if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / T::lit(2.0)
        };
        return Ok(vec![med]);
    }

    let n = T::count(points.len());
    let mut y: Vec<T> = (0..d)
        .map(|k| points.atoms().map(|a| a[k]).sum::<T>() / n)
        .collect();
    let tol = T::lit(WEISZFELD_TOL);
    let tiny = T::epsilon();
    for _ in 0..WEISZFELD_MAX_ITERS {
        let mut num = vec![T::zero(); d];
        let mut den = T::zero();
        // Vardi–Zhang correction for iterates that land on a data point
        let mut at_point = T::zero();
        let mut pull = vec![T::zero(); d];
        for a in points.atoms() {
            let dist = GroundMetric::Euclidean.distance(a, &y);
            if dist <= tiny {
                at_point += T::one();
                continue;
            }
            for k in 0..d {
                num[k] += a[k] / dist;
                pull[k] += (a[k] - y[k]) / dist;
            }
            den += T::one() / dist;
        }
        if den == T::zero() {
            return Ok(y);
        }
        let t_point: Vec<T> = num.iter().map(|&v| v / den).collect();
        let next: Vec<T> = if at_point > T::zero() {
            let r = pull.iter().map(|&p| p * p).sum::<T>().sqrt();
            if r <= at_point {
                return Ok(y);
            }
            let w = (at_point / r).min(T::one());
            t_point
                .iter()
                .zip(&y)
                .map(|(&tp, &yk)| (T::one() - w) * tp + w * yk)
                .collect()
        } else {
            t_point
        };
        let step = GroundMetric::Euclidean.distance(&next, &y);
        y = next;
        if step <= tol {
            return Ok(y);
        }
    }
    Err(RobotError::solver(format!(
        "geometric median did not converge in {WEISZFELD_MAX_ITERS} iterations"
    )))
}

/// `sqrt( (1/n) Σ min(d²(X_i, m), (2λ)²) )` with `m` the geometric median.
pub fn sigma_hat<T: Scalar>(sample: &DiscreteMeasure<T>, lambda: T) -> Result<T> {
    check_lambda(lambda)?;
    let center = geometric_median(sample)?;
    sigma_hat_about(sample, &center, lambda)
}

/// [`sigma_hat`] around a precomputed center, for λ sweeps.
pub fn sigma_hat_about<T: Scalar>(sample: &DiscreteMeasure<T>, center: &[T], lambda: T) -> Result<T> {
    check_lambda(lambda)?;
    if center.len() != sample.dim() {
        return Err(RobotError::invalid("center has wrong dimension"));
    }
    let cap2 = T::lit(4.0) * lambda * lambda;
    let total: T = sample
        .atoms()
        .map(|a| {
            let d = GroundMetric::Euclidean.distance(a, center);
            (d * d).min(cap2)
        })
        .sum();
    Ok((total / T::count(sample.len())).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m1(xs: &[f64]) -> DiscreteMeasure<f64> {
        DiscreteMeasure::uniform_1d(xs).unwrap()
    }

    #[test]
    fn sigma_hat_examples() {
        assert_eq!(sigma_hat(&m1(&[2.0, 2.0, 2.0]), 1.0).unwrap(), 0.0);
        assert_relative_eq!(sigma_hat(&m1(&[-1.0, 0.0, 1.0]), 10.0).unwrap(), (2.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(sigma_hat(&m1(&[0.0, 0.0, 100.0]), 1.0).unwrap(), (4.0f64 / 3.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn median_examples() {
        assert_eq!(geometric_median(&m1(&[5.0])).unwrap(), vec![5.0]);
        assert_eq!(geometric_median(&m1(&[2.0, 0.0, 1.0])).unwrap(), vec![1.0]);
        assert_eq!(geometric_median(&m1(&[0.0, 1.0, 2.0, 10.0])).unwrap(), vec![1.5]);
    }

    #[test]
    fn triangle_median_is_centroid() {
        let h = 3f64.sqrt() / 2.0;
        let tri = DiscreteMeasure::uniform(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, h]]).unwrap();
        let m = geometric_median(&tri).unwrap();
        assert_relative_eq!(m[0], 0.5, epsilon = 1e-7);
        assert_relative_eq!(m[1], h / 3.0, epsilon = 1e-7);
    }

    #[test]
    fn median_at_a_data_point() {
        // four corners plus the center: the center is optimal and is itself an atom
        let pts = DiscreteMeasure::uniform(vec![
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![-1.0, 1.0],
            vec![1.0, -1.0],
            vec![-1.0, -1.0],
        ])
        .unwrap();
        let m: Vec<f64> = geometric_median(&pts).unwrap();
        assert!(m[0].abs() < 1e-7 && m[1].abs() < 1e-7);
    }

    #[test]
    fn clean_threshold_examples() {
        let i = ConcentrationInputs::new(100, 0, 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(threshold_clean(&i).unwrap(), 0.02f64.sqrt() + 0.04, epsilon = 1e-15);
        let i = ConcentrationInputs::new(50, 0, 2.0, 2.0, 0.0).unwrap();
        assert_relative_eq!(threshold_clean(&i).unwrap(), 16.0 / 50.0, epsilon = 1e-15);
        let i = ConcentrationInputs::new(100, 0, 1.0, 1e-12, 1.0).unwrap();
        assert!(threshold_clean(&i).unwrap() < 1e-5);
    }

    #[test]
    fn clean_threshold_rejects_outliers() {
        let i = ConcentrationInputs::new(100, 1, 1.0, 1.0, 1.0).unwrap();
        assert!(threshold_clean(&i).is_err());
    }

    #[test]
    fn contaminated_threshold_examples() {
        let i = ConcentrationInputs::new(100, 10, 1.0, 1.0, 1.0).unwrap();
        let th = threshold_contaminated(&i).unwrap();
        assert_relative_eq!(th.threshold, 0.9f64.sqrt() * 0.02f64.sqrt() + 0.04 + 0.2, epsilon = 1e-15);
        assert_relative_eq!(th.symmetrized, 0.9f64.sqrt() * 0.02f64.sqrt() + 0.04 + 0.4, epsilon = 1e-15);

        let clean = ConcentrationInputs::new(100, 0, 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(
            threshold_contaminated(&clean).unwrap().threshold,
            threshold_clean(&clean).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn invalid_counts_rejected() {
        assert!(ConcentrationInputs::new(10, 10, 1.0, 1.0, 1.0).is_err());
        assert!(ConcentrationInputs::new(10, 11, 1.0, 1.0, 1.0).is_err());
        assert!(ConcentrationInputs::new(10, 1, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn sandwich_examples() {
        assert_eq!(sandwich_bounds(0.3, 1.0, 10, 0).unwrap(), (0.3, 0.3));
        let (lo, hi) = sandwich_bounds(0.0, 1.0, 10, 1).unwrap();
        assert_relative_eq!(lo, -0.2);
        assert_relative_eq!(hi, 0.2);
    }

    #[test]
    fn mean_rate_examples() {
        let r = |k: f64, d: usize, n: usize, lambda: f64| {
            mean_rate_bound(&MeanRateInputs { k, d, n, c: 1.0 }, lambda).unwrap()
        };
        assert_relative_eq!(r(1.0, 1, 100, 10.0), 0.1, epsilon = 1e-15);
        assert_relative_eq!(r(4.0, 1, 100, 1.0), 0.2, epsilon = 1e-15);
        assert_relative_eq!(r(2.0, 3, 1000, 1.0), 0.2, epsilon = 1e-12);
        assert_relative_eq!(r(1.0, 2, 100, 1.0), 0.1 * 10f64.ln(), epsilon = 1e-15);
        assert!(mean_rate_bound(&MeanRateInputs { k: 1.0, d: 0, n: 10, c: 1.0 }, 1.0).is_err());
    }
}
