//! Dense linear assignment by shortest augmenting paths (Hungarian method
//! with potentials), O(n³).

use crate::scalar::Scalar;

/// Optimal permutation for a square cost matrix.
#[derive(Debug, Clone)]
pub(crate) struct Assignment<T> {
    /// `col_of_row[i]` is the column matched to row `i`.
    pub col_of_row: Vec<usize>,
    /// Row potentials `u` and column potentials `v` with
    /// `u[i] + v[j] <= cost(i, j)` and equality on matched pairs.
    pub u: Vec<T>,
    pub v: Vec<T>,
}

/// Solves `min Σ cost(i, σ(i))` over permutations σ of `0..n`.
///
/// `cost` is row-major `n × n`. Ties are resolved toward the lowest column
/// index, so results are deterministic.
pub(crate) fn solve<T: Scalar>(n: usize, cost: &[T]) -> Assignment<T> {
    debug_assert_eq!(cost.len(), n * n);
    // 1-based arrays; index 0 is the virtual column.
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = inf);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            col_of_row[p[j] - 1] = j - 1;
        }
    }
    Assignment {
        col_of_row,
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
    }
}
