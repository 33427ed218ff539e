//! Discrete probability measures, ground metrics and trimmed cost matrices.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RobotError};
use crate::ot::CostMatrix;
use crate::scalar::Scalar;

/// Tolerance on `|Σ w - 1|` for `n` weights: `1e-8` in double precision,
/// widened to a few ulps per term for narrower types.
pub fn weight_tolerance<T: Scalar>(n: usize) -> T {
    let ulps = T::epsilon() * T::count(n.max(1)) * T::lit(4.0);
    T::lit(1e-8).max(ulps)
}

/// Finitely supported probability measure on ℝ^d.
///
/// Atoms are stored row-major in one buffer. Duplicate atoms are allowed
/// and are not merged.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure<T: Scalar = f64> {
    dim: usize,
    coords: Vec<T>,
    weights: Vec<T>,
}

impl<T: Scalar> DiscreteMeasure<T> {
    /// Builds a measure from atoms and weights.
    ///
    /// Weights summing to 1 within [`weight_tolerance`] are renormalized;
    /// larger deviations are rejected.
    pub fn new(atoms: Vec<Vec<T>>, weights: Vec<T>) -> Result<Self> {
        let dim = atoms.first().map_or(0, Vec::len);
        if atoms.iter().any(|a| a.len() != dim) {
            return Err(RobotError::invalid("atoms have differing dimensions"));
        }
        let coords = atoms.into_iter().flatten().collect();
        Self::from_flat(dim, coords, weights)
    }

    /// Uniform weights `1/n`.
    pub fn uniform(atoms: Vec<Vec<T>>) -> Result<Self> {
        let n = atoms.len();
        if n == 0 {
            return Err(RobotError::invalid("measure needs at least one atom"));
        }
        let w = T::one() / T::count(n);
        Self::new(atoms, vec![w; n])
    }

    /// Uniform measure on real values (d = 1).
    pub fn uniform_1d(values: &[T]) -> Result<Self> {
        if values.is_empty() {
            return Err(RobotError::invalid("measure needs at least one atom"));
        }
        let w = T::one() / T::count(values.len());
        Self::from_flat(1, values.to_vec(), vec![w; values.len()])
    }

    /// Point mass at `point`.
    pub fn dirac(point: Vec<T>) -> Result<Self> {
        let dim = point.len();
        Self::from_flat(dim, point, vec![T::one()])
    }

    /// Row-major coordinates, `coords.len() == weights.len() * dim`.
    pub fn from_flat(dim: usize, coords: Vec<T>, mut weights: Vec<T>) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(RobotError::invalid("measure needs at least one atom"));
        }
        if dim == 0 {
            return Err(RobotError::invalid("atoms must have dimension at least 1"));
        }
        if coords.len() != n * dim {
            return Err(RobotError::invalid(format!(
                "{} coordinates do not form {n} atoms of dimension {dim}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(RobotError::invalid("atom coordinates must be finite"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(RobotError::invalid("weights must be finite and nonnegative"));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > weight_tolerance::<T>(n) {
            return Err(RobotError::invalid(format!(
                "weights sum to {total}, not 1"
            )));
        }
        if total != T::one() {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Ok(DiscreteMeasure {
            dim,
            coords,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atom(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.coords.chunks(self.dim)
    }

    /// Flat coordinate buffer; for d = 1 this is the list of atom positions.
    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn is_uniform(&self) -> bool {
        crate::ot::is_uniform(&self.weights)
    }

    /// Copy with atom `i` moved to `point`.
    pub fn with_replaced_atom(&self, i: usize, point: &[T]) -> Result<Self> {
        if point.len() != self.dim {
            return Err(RobotError::invalid("replacement point has wrong dimension"));
        }
        if i >= self.len() {
            return Err(RobotError::invalid("atom index out of range"));
        }
        let mut out = self.clone();
        out.coords[i * self.dim..(i + 1) * self.dim].copy_from_slice(point);
        Ok(out)
    }

    /// Sub-measure on the given atoms with renormalized weights.
    pub fn restrict(&self, indices: &[usize]) -> Result<Self> {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        let mut weights = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(RobotError::invalid("atom index out of range"));
            }
            coords.extend_from_slice(self.atom(i));
            weights.push(self.weights[i]);
        }
        let total: T = weights.iter().copied().sum();
        if !(total > T::zero()) {
            return Err(RobotError::invalid("restriction carries no mass"));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::from_flat(self.dim, coords, weights)
    }
}

/// Ground distance between atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundMetric {
    #[default]
    Euclidean,
    /// `|x - y|` on the real line.
    AbsoluteDifference,
}

impl GroundMetric {
    pub fn distance<T: Scalar>(&self, x: &[T], y: &[T]) -> T {
        match self {
            GroundMetric::Euclidean => {
                if x.len() == 1 {
                    return (x[0] - y[0]).abs();
                }
                x.iter()
                    .zip(y)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<T>()
                    .sqrt()
            }
            GroundMetric::AbsoluteDifference => (x[0] - y[0]).abs(),
        }
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self {
            GroundMetric::AbsoluteDifference if dim != 1 => Err(RobotError::invalid(format!(
                "absolute-difference metric needs d = 1, got d = {dim}"
            ))),
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for GroundMetric {
    type Err = RobotError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(GroundMetric::Euclidean),
            "absolute-difference" | "abs" => Ok(GroundMetric::AbsoluteDifference),
            other => Err(RobotError::invalid(format!("unknown metric '{other}'"))),
        }
    }
}

/// `min(d, 2λ)`.
pub fn trimmed_cost<T: Scalar>(d: T, lambda: T) -> Result<T> {
    if !(d >= T::zero()) {
        return Err(RobotError::invalid(format!("distance must be nonnegative, got {d}")));
    }
    check_lambda(lambda)?;
    Ok(cap(d, lambda))
}

#[inline]
pub(crate) fn cap<T: Scalar>(d: T, lambda: T) -> T {
    d.min(lambda + lambda)
}

/// λ must be positive; `+∞` (no trimming) is accepted.
pub fn check_lambda<T: Scalar>(lambda: T) -> Result<()> {
    if lambda > T::zero() {
        Ok(())
    } else {
        Err(RobotError::invalid(format!("lambda must be positive, got {lambda}")))
    }
}

/// Raw and trimmed pairwise distances at one trimming level.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimmedCostMatrix<T: Scalar = f64> {
    raw: CostMatrix<T>,
    lambda: T,
    trimmed: CostMatrix<T>,
    mask: Vec<bool>,
}

impl<T: Scalar> TrimmedCostMatrix<T> {
    /// Trims an existing raw matrix; lets λ sweeps reuse one distance pass.
    pub fn from_raw(raw: CostMatrix<T>, lambda: T) -> Result<Self> {
        check_lambda(lambda)?;
        if raw.as_slice().iter().any(|d| !(*d >= T::zero())) {
            return Err(RobotError::invalid("raw distances must be nonnegative"));
        }
        let two_lambda = lambda + lambda;
        let trimmed = raw.map(|d| d.min(two_lambda));
        let mask = raw.as_slice().iter().map(|&d| d >= two_lambda).collect();
        Ok(TrimmedCostMatrix {
            raw,
            lambda,
            trimmed,
            mask,
        })
    }

    /// Same raw distances at a different λ.
    pub fn retrim(&self, lambda: T) -> Result<Self> {
        Self::from_raw(self.raw.clone(), lambda)
    }

    pub fn raw(&self) -> &CostMatrix<T> {
        &self.raw
    }

    pub fn trimmed(&self) -> &CostMatrix<T> {
        &self.trimmed
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn rows(&self) -> usize {
        self.raw.rows()
    }

    pub fn cols(&self) -> usize {
        self.raw.cols()
    }

    /// `(i, j) ∈ 𝓘`, i.e. `raw_ij >= 2λ`.
    pub fn is_trimmed(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.raw.cols() + j]
    }

    /// All trimmed index pairs in row-major order.
    pub fn trimmed_set(&self) -> Vec<(usize, usize)> {
        let cols = self.raw.cols();
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &t)| t)
            .map(|(k, _)| (k / cols, k % cols))
            .collect()
    }
}

/// Pairwise distances between the atoms of `mu` and `nu`, trimmed at `2λ`.
pub fn build_cost_matrix<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    metric: GroundMetric,
    lambda: T,
) -> Result<TrimmedCostMatrix<T>> {
    if mu.dim() != nu.dim() {
        return Err(RobotError::invalid(format!(
            "dimension mismatch: {} vs {}",
            mu.dim(),
            nu.dim()
        )));
    }
    metric.check_dim(mu.dim())?;
    let raw = CostMatrix::from_fn(mu.len(), nu.len(), |i, j| metric.distance(mu.atom(i), nu.atom(j)));
    TrimmedCostMatrix::from_raw(raw, lambda)
}

/// Reads a sample CSV: a header row, one atom per row, coordinates in the
/// columns. A final column named `weight` holds weights; without it the
/// atoms are uniform.
pub fn read_measure_csv(path: impl AsRef<Path>) -> Result<DiscreteMeasure<f64>> {
    let table = crate::io::read_table(path)?;
    let weighted = table
        .headers
        .last()
        .is_some_and(|h| h.trim().eq_ignore_ascii_case("weight"));
    let dim = table.headers.len() - usize::from(weighted);
    if dim == 0 {
        return Err(RobotError::invalid("sample file has no coordinate columns"));
    }
    let mut coords = Vec::with_capacity(table.rows.len() * dim);
    let mut weights = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        coords.extend_from_slice(&row[..dim]);
        if weighted {
            weights.push(row[dim]);
        }
    }
    if !weighted {
        let n = table.rows.len().max(1);
        weights = vec![1.0 / n as f64; table.rows.len()];
    }
    DiscreteMeasure::from_flat(dim, coords, weights)
}

/// Writes a measure with coordinate columns `x0..x{d-1}` and a `weight`
/// column.
pub fn write_measure_csv(measure: &DiscreteMeasure<f64>, path: impl AsRef<Path>) -> Result<()> {
    let mut headers: Vec<String> = (0..measure.dim()).map(|k| format!("x{k}")).collect();
    headers.push("weight".into());
    let rows = measure
        .atoms()
        .zip(measure.weights())
        .map(|(a, &w)| a.iter().copied().chain(std::iter::once(w)).collect());
    crate::io::write_table(path, &headers, rows)
}
