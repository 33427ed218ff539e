//! Exact discrete optimal transport.
//!
//! [`solve_exact`] works on any dense cost matrix. It dispatches to a
//! linear-assignment solver when both marginals are uniform with equal
//! support sizes and to a network simplex otherwise. Masses are converted to
//! integers before pivoting (see [`MassScale`]), so plans satisfy the
//! marginal constraints to within the quantization step.
//!
//! For measures on the real line, [`line`] solves the same problem on a sparse
//! graph whose shortest paths reproduce the (optionally capped) distance.

pub(crate) mod assignment;
pub mod line;
pub(crate) mod network_simplex;

use std::io::Write;

use crate::error::{Result, RobotError};
use crate::measure::{weight_tolerance, DiscreteMeasure, GroundMetric};
use crate::scalar::Scalar;

/// Pivot budget per node for the network simplex.
pub const PIVOTS_PER_NODE: usize = 50;

/// Dense row-major matrix of transport costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T: Scalar = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> CostMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(RobotError::invalid(format!(
                "cost matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CostMatrix { rows, cols, data }
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(RobotError::invalid("ragged cost matrix rows"));
        }
        Ok(CostMatrix {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn max(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &c| m.max(c))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        CostMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&c| f(c)).collect(),
        }
    }
}

/// One strictly positive cell of a transport plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanEntry<T> {
    pub row: usize,
    pub col: usize,
    pub mass: T,
}

/// Coupling matrix stored by its positive entries (sorted by row, then
/// column). Basic solutions have at most `rows + cols - 1` of them.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan<T: Scalar = f64> {
    rows: usize,
    cols: usize,
    entries: Vec<PlanEntry<T>>,
    row_marginals: Vec<T>,
    col_marginals: Vec<T>,
}

impl<T: Scalar> TransportPlan<T> {
    /// Collects entries; duplicate cells are summed and zero cells dropped.
    pub fn from_entries(rows: usize, cols: usize, mut entries: Vec<PlanEntry<T>>) -> Result<Self> {
        for e in &entries {
            if e.row >= rows || e.col >= cols {
                return Err(RobotError::invalid(format!(
                    "plan entry ({}, {}) outside {rows}x{cols}",
                    e.row, e.col
                )));
            }
            if !(e.mass >= T::zero()) {
                return Err(RobotError::invalid("negative or NaN plan mass"));
            }
        }
        entries.sort_by_key(|e| (e.row, e.col));
        let mut merged: Vec<PlanEntry<T>> = Vec::with_capacity(entries.len());
        for e in entries {
            match merged.last_mut() {
                Some(last) if last.row == e.row && last.col == e.col => last.mass += e.mass,
                _ => merged.push(e),
            }
        }
        merged.retain(|e| e.mass > T::zero());
        let mut row_marginals = vec![T::zero(); rows];
        let mut col_marginals = vec![T::zero(); cols];
        for e in &merged {
            row_marginals[e.row] += e.mass;
            col_marginals[e.col] += e.mass;
        }
        Ok(TransportPlan {
            rows,
            cols,
            entries: merged,
            row_marginals,
            col_marginals,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[PlanEntry<T>] {
        &self.entries
    }

    pub fn row_marginals(&self) -> &[T] {
        &self.row_marginals
    }

    pub fn col_marginals(&self) -> &[T] {
        &self.col_marginals
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries
            .binary_search_by_key(&(i, j), |e| (e.row, e.col))
            .map(|k| self.entries[k].mass)
            .unwrap_or_else(|_| T::zero())
    }

    pub fn positive_count(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut m = vec![vec![T::zero(); self.cols]; self.rows];
        for e in &self.entries {
            m[e.row][e.col] = e.mass;
        }
        m
    }

    /// `Σ Π_ij c(i, j)`.
    pub fn cost_with(&self, cost: impl Fn(usize, usize) -> T) -> T {
        self.entries.iter().map(|e| e.mass * cost(e.row, e.col)).sum()
    }

    pub fn total_mass(&self) -> T {
        self.entries.iter().map(|e| e.mass).sum()
    }

    /// Largest deviation of the plan marginals from `a` and `b`.
    pub fn marginal_residual(&self, a: &[T], b: &[T]) -> T {
        let mut worst = T::zero();
        for (r, w) in self.row_marginals.iter().zip(a) {
            worst = worst.max((*r - *w).abs());
        }
        for (c, w) in self.col_marginals.iter().zip(b) {
            worst = worst.max((*c - *w).abs());
        }
        worst
    }

    /// Writes `i,j,mass` rows for debugging.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "mass"])?;
        for e in &self.entries {
            w.write_record([
                e.row.to_string(),
                e.col.to_string(),
                crate::io::fmt_real(e.mass.as_f64()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Kantorovich potentials: `psi_i + phi_j <= c_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials<T: Scalar = f64> {
    pub psi: Vec<T>,
    pub phi: Vec<T>,
    pub objective: T,
}

impl<T: Scalar> DualPotentials<T> {
    pub(crate) fn new(psi: Vec<T>, phi: Vec<T>, a: &[T], b: &[T]) -> Self {
        let objective = dual_objective(&psi, &phi, a, b);
        DualPotentials {
            psi,
            phi,
            objective,
        }
    }

    /// Largest violation of `psi_i + phi_j <= c_ij` (zero when feasible).
    pub fn max_violation(&self, cost: impl Fn(usize, usize) -> T) -> T {
        let mut worst = T::zero();
        for (i, &p) in self.psi.iter().enumerate() {
            for (j, &q) in self.phi.iter().enumerate() {
                worst = worst.max(p + q - cost(i, j));
            }
        }
        worst
    }
}

fn dual_objective<T: Scalar>(psi: &[T], phi: &[T], a: &[T], b: &[T]) -> T {
    let s: T = psi.iter().zip(a).map(|(&p, &w)| p * w).sum();
    let t: T = phi.iter().zip(b).map(|(&p, &w)| p * w).sum();
    s + t
}

/// Primal plan, dual potentials and optimal value of one transport problem.
#[derive(Debug, Clone)]
pub struct OtSolution<T: Scalar = f64> {
    pub plan: TransportPlan<T>,
    pub duals: DualPotentials<T>,
    pub value: T,
}

/// Fixed-point representation of two marginals used by the flow solvers.
///
/// Uniform marginals use `scale = lcm(n, m)` so that every atom carries an
/// exact integer mass. Otherwise `scale = 2^40` and each weight vector is
/// rounded by largest remainders so that both sides sum exactly to `scale`.
#[derive(Debug, Clone)]
pub struct MassScale {
    pub scale: i64,
    pub source: Vec<i64>,
    pub target: Vec<i64>,
}

const GENERIC_SCALE: i64 = 1 << 40;

impl MassScale {
    pub fn new<T: Scalar>(a: &[T], b: &[T]) -> Self {
        let (n, m) = (a.len() as i64, b.len() as i64);
        if is_uniform(a) && is_uniform(b) && n > 0 && m > 0 {
            let l = lcm(n, m);
            if l <= GENERIC_SCALE {
                return MassScale {
                    scale: l,
                    source: vec![l / n; a.len()],
                    target: vec![l / m; b.len()],
                };
            }
        }
        MassScale {
            scale: GENERIC_SCALE,
            source: round_to_total(a, GENERIC_SCALE),
            target: round_to_total(b, GENERIC_SCALE),
        }
    }

    pub fn mass<T: Scalar>(&self, units: i64) -> T {
        T::lit(units as f64 / self.scale as f64)
    }
}

pub(crate) fn is_uniform<T: Scalar>(w: &[T]) -> bool {
    w.first().is_some_and(|&w0| w.iter().all(|&x| x == w0))
}

fn gcd(mut a: i64, mut b: i64) -> i64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

fn lcm(a: i64, b: i64) -> i64 {
    a / gcd(a, b) * b
}

fn round_to_total<T: Scalar>(w: &[T], total: i64) -> Vec<i64> {
    let sum: f64 = w.iter().map(|x| x.as_f64()).sum();
    let mut units = Vec::with_capacity(w.len());
    let mut fracs = Vec::with_capacity(w.len());
    let mut assigned = 0i64;
    for (k, x) in w.iter().enumerate() {
        let exact = x.as_f64() / sum * total as f64;
        let fl = exact.floor();
        units.push(fl as i64);
        assigned += fl as i64;
        fracs.push((exact - fl, k));
    }
    // deterministic: largest fraction first, lowest index on ties
    fracs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let mut rest = total - assigned;
    let mut k = 0;
    while rest > 0 && !fracs.is_empty() {
        units[fracs[k % fracs.len()].1] += 1;
        rest -= 1;
        k += 1;
    }
    while rest < 0 {
        // only reachable through pathological rounding of huge weights
        let idx = units
            .iter()
            .enumerate()
            .max_by_key(|(_, &u)| u)
            .map(|(i, _)| i)
            .unwrap();
        units[idx] -= 1;
        rest += 1;
    }
    units
}

pub(crate) fn validate_marginals<T: Scalar>(a: &[T], b: &[T]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(RobotError::invalid("marginals must be nonempty"));
    }
    for (name, w) in [("source", a), ("target", b)] {
        if w.iter().any(|x| !x.is_finite() || *x < T::zero()) {
            return Err(RobotError::invalid(format!(
                "{name} weights must be finite and nonnegative"
            )));
        }
        let s: T = w.iter().copied().sum();
        if (s - T::one()).abs() > weight_tolerance::<T>(w.len()) {
            return Err(RobotError::invalid(format!(
                "{name} weights sum to {s}, expected 1"
            )));
        }
    }
    let (sa, sb): (T, T) = (a.iter().copied().sum(), b.iter().copied().sum());
    if (sa - sb).abs() > weight_tolerance::<T>(a.len().max(b.len())) {
        return Err(RobotError::invalid(format!(
            "marginal masses differ: {sa} vs {sb}"
        )));
    }
    Ok(())
}

/// Solves `min Σ Π_ij c_ij` over couplings of `a` and `b`.
///
/// The returned value equals `Σ Π_ij c_ij` of the returned plan; the duals
/// certify optimality (`|value - duals.objective|` is at rounding level).
pub fn solve_exact<T: Scalar>(cost: &CostMatrix<T>, a: &[T], b: &[T]) -> Result<OtSolution<T>> {
    validate_marginals(a, b)?;
    let (n, m) = (a.len(), b.len());
    if cost.rows() != n || cost.cols() != m {
        return Err(RobotError::invalid(format!(
            "cost matrix is {}x{}, marginals are {n} and {m}",
            cost.rows(),
            cost.cols()
        )));
    }
    if cost.as_slice().iter().any(|c| !c.is_finite() || *c < T::zero()) {
        return Err(RobotError::invalid("costs must be finite and nonnegative"));
    }

    if n == m && is_uniform(a) && is_uniform(b) {
        return Ok(solve_assignment(cost, a, b));
    }
    solve_network(cost, a, b)
}

fn solve_assignment<T: Scalar>(cost: &CostMatrix<T>, a: &[T], b: &[T]) -> OtSolution<T> {
    let n = a.len();
    let asg = assignment::solve(n, cost.as_slice());
    let w = T::one() / T::count(n);
    let entries = asg
        .col_of_row
        .iter()
        .enumerate()
        .map(|(i, &j)| PlanEntry {
            row: i,
            col: j,
            mass: w,
        })
        .collect();
    let plan = TransportPlan::from_entries(n, n, entries).expect("permutation plan is valid");
    let value = plan.cost_with(|i, j| cost.get(i, j));
    let duals = DualPotentials::new(asg.u, asg.v, a, b);
    OtSolution { plan, duals, value }
}

fn solve_network<T: Scalar>(cost: &CostMatrix<T>, a: &[T], b: &[T]) -> Result<OtSolution<T>> {
    let (n, m) = (a.len(), b.len());
    let masses = MassScale::new(a, b);
    let mut supply = masses.source.clone();
    supply.extend(masses.target.iter().map(|&x| -x));
    let mut graph = network_simplex::FlowGraph::with_arc_capacity(supply, n * m);
    for i in 0..n {
        for j in 0..m {
            graph.add_arc(i, n + j, cost.get(i, j));
        }
    }
    let sol = network_simplex::solve(&graph, PIVOTS_PER_NODE * (n + m))?;
    let mut entries = Vec::with_capacity(n + m);
    for (e, &f) in sol.flow.iter().enumerate() {
        if f > 0 {
            entries.push(PlanEntry {
                row: e / m,
                col: e % m,
                mass: masses.mass(f),
            });
        }
    }
    let plan = TransportPlan::from_entries(n, m, entries)?;
    let value = plan.cost_with(|i, j| cost.get(i, j));
    let psi = sol.potential[..n].iter().map(|&p| -p).collect();
    let phi = sol.potential[n..].to_vec();
    let duals = DualPotentials::new(psi, phi, a, b);
    Ok(OtSolution { plan, duals, value })
}

/// Order-1 Wasserstein distance under `metric`.
///
/// One-dimensional measures use the closed form `∫ |F_μ - F_ν|`; higher
/// dimensions solve the dense problem.
pub fn w1_distance<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    metric: GroundMetric,
) -> Result<T> {
    if mu.dim() != nu.dim() {
        return Err(RobotError::invalid(format!(
            "dimension mismatch: {} vs {}",
            mu.dim(),
            nu.dim()
        )));
    }
    metric.check_dim(mu.dim())?;
    if mu.dim() == 1 {
        return Ok(w1_line(mu.coords(), mu.weights(), nu.coords(), nu.weights()));
    }
    let cost = CostMatrix::from_fn(mu.len(), nu.len(), |i, j| {
        metric.distance(mu.atom(i), nu.atom(j))
    });
    Ok(solve_exact(&cost, mu.weights(), nu.weights())?.value)
}

/// `∫ |F_μ(z) - F_ν(z)| dz` for weighted samples on the line.
pub fn w1_line<T: Scalar>(xs: &[T], a: &[T], ys: &[T], b: &[T]) -> T {
    let mut events: Vec<(T, T)> = Vec::with_capacity(xs.len() + ys.len());
    events.extend(xs.iter().zip(a).map(|(&x, &w)| (x, w)));
    events.extend(ys.iter().zip(b).map(|(&y, &w)| (y, -w)));
    events.sort_by(|p, q| p.0.partial_cmp(&q.0).expect("finite coordinates"));
    let mut cdf_gap = T::zero();
    let mut total = T::zero();
    for k in 0..events.len() {
        cdf_gap += events[k].1;
        if k + 1 < events.len() {
            total += cdf_gap.abs() * (events[k + 1].0 - events[k].0);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one() {
        let c = CostMatrix::new(1, 1, vec![7.0]).unwrap();
        let s = solve_exact(&c, &[1.0], &[1.0]).unwrap();
        assert_eq!(s.value, 7.0);
        assert_eq!(s.plan.get(0, 0), 1.0);
    }

    #[test]
    fn uniform_two_by_two_is_diagonal() {
        let c = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 2.0]]).unwrap();
        let s = solve_exact(&c, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert_eq!(s.value, 1.5);
        assert_eq!(s.plan.get(0, 0), 0.5);
        assert_eq!(s.plan.get(1, 1), 0.5);
        assert_eq!(s.plan.positive_count(), 2);
    }

    #[test]
    fn zero_diagonal_gives_zero_value() {
        let c = CostMatrix::from_fn(4, 4, |i, j| (i as f64 - j as f64).abs());
        let w = [0.1, 0.2, 0.3, 0.4];
        let s = solve_exact(&c, &w, &w).unwrap();
        assert_eq!(s.value, 0.0);
        for e in s.plan.entries() {
            assert_eq!(e.row, e.col);
        }
    }

    #[test]
    fn infeasible_weights_are_rejected() {
        let c = CostMatrix::from_fn(2, 2, |_, _| 1.0);
        let err = solve_exact(&c, &[0.5, 0.5], &[0.5, 0.6]).unwrap_err();
        assert!(matches!(err, RobotError::InvalidArgument(_)));
    }

    #[test]
    fn negative_cost_is_rejected() {
        let c = CostMatrix::from_fn(1, 1, |_, _| -1.0);
        assert!(solve_exact(&c, &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn rounding_keeps_totals() {
        let a = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0 + 1e-12];
        let b = [0.25, 0.75];
        let s = MassScale::new(&a, &b);
        assert_eq!(s.source.iter().sum::<i64>(), s.scale);
        assert_eq!(s.target.iter().sum::<i64>(), s.scale);
    }

    #[test]
    fn uniform_scale_is_exact() {
        let a = vec![0.2; 5];
        let b = vec![1.0 / 3.0; 3];
        let s = MassScale::new(&a, &b);
        assert_eq!(s.scale, 15);
        assert_eq!(s.source, vec![3; 5]);
        assert_eq!(s.target, vec![5; 3]);
    }

    #[test]
    fn plan_csv_has_header() {
        let plan = TransportPlan::from_entries(
            1,
            2,
            vec![
                PlanEntry { row: 0, col: 0, mass: 0.25 },
                PlanEntry { row: 0, col: 1, mass: 0.75 },
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        plan.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("i,j,mass\n0,0,"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn w1_line_quantile_example() {
        let v = w1_line(&[0.0f64, 1.0], &[0.5, 0.5], &[2.0, 3.0], &[0.5, 0.5]);
        assert!((v - 2.0).abs() < 1e-15);
    }
}
