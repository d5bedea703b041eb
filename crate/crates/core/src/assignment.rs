//! Maximum-similarity linear assignment with post-hoc confidence filtering.
//!
//! Matrices may be rectangular. An entry equal to [`FORBIDDEN`] marks a pair
//! that must never be reported (e.g. cross-class pairs); the solver prefers
//! any allowed pair over a forbidden one and drops forbidden pairs from its
//! output. Among optimal assignments the one whose per-row column vector is
//! lexicographically smallest is returned, so results are reproducible.

use crate::error::{Error, Result};

/// Sentinel similarity for pairs that may not be matched.
pub const FORBIDDEN: f64 = f64::NEG_INFINITY;

/// Relative tolerance used to decide which edges are tight at the optimum.
const TIGHT_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<R = usize, C = usize> {
    row_keys: Vec<R>,
    col_keys: Vec<C>,
    values: Vec<f64>,
}

impl<R: Clone, C: Clone> SimilarityMatrix<R, C> {
    /// `values` is row-major with `row_keys.len() * col_keys.len()` entries.
    pub fn new(row_keys: Vec<R>, col_keys: Vec<C>, values: Vec<f64>) -> Result<Self> {
        if values.len() != row_keys.len() * col_keys.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{} matrix",
                values.len(),
                row_keys.len(),
                col_keys.len()
            )));
        }
        Ok(Self {
            row_keys,
            col_keys,
            values,
        })
    }

    pub fn from_fn(row_keys: Vec<R>, col_keys: Vec<C>, mut f: impl FnMut(&R, &C) -> f64) -> Self {
        let values = row_keys
            .iter()
            .flat_map(|r| col_keys.iter().map(|c| f(r, c)).collect::<Vec<_>>())
            .collect();
        Self {
            row_keys,
            col_keys,
            values,
        }
    }

    pub fn try_from_fn<E>(
        row_keys: Vec<R>,
        col_keys: Vec<C>,
        mut f: impl FnMut(&R, &C) -> std::result::Result<f64, E>,
    ) -> std::result::Result<Self, E> {
        let mut values = Vec::with_capacity(row_keys.len() * col_keys.len());
        for r in &row_keys {
            for c in &col_keys {
                values.push(f(r, c)?);
            }
        }
        Ok(Self {
            row_keys,
            col_keys,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.row_keys.len()
    }

    pub fn cols(&self) -> usize {
        self.col_keys.len()
    }

    /// Number of entries, `M x N`.
    pub fn size(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols() + col]
    }

    pub fn row_keys(&self) -> &[R] {
        &self.row_keys
    }

    pub fn col_keys(&self) -> &[C] {
        &self.col_keys
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            row_keys: self.row_keys.clone(),
            col_keys: self.col_keys.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair<R, C> {
    pub row: R,
    pub col: C,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment<R = usize, C = usize> {
    /// Matched pairs in ascending row order.
    pub pairs: Vec<Pair<R, C>>,
    pub unmatched_rows: Vec<R>,
    pub unmatched_cols: Vec<C>,
}

impl<R, C> Assignment<R, C> {
    pub fn total_similarity(&self) -> f64 {
        self.pairs.iter().map(|p| p.similarity).sum()
    }
}

/// One-to-one assignment of `min(M, N)` pairs maximizing total similarity.
pub fn hungarian_max<R: Clone, C: Clone>(
    matrix: &SimilarityMatrix<R, C>,
) -> Result<Assignment<R, C>> {
    let (m, n) = (matrix.rows(), matrix.cols());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (idx, &v) in matrix.values.iter().enumerate() {
        if v == FORBIDDEN {
            continue;
        }
        if !v.is_finite() {
            return Err(Error::NonFiniteSimilarity {
                row: idx / n,
                col: idx % n,
            });
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }

    let col_of_row = if m == 0 || n == 0 {
        vec![usize::MAX; m]
    } else {
        let size = m.max(n);
        let range = if hi >= lo { hi - lo } else { 0.0 };
        // Any assignment with fewer forbidden pairs is strictly cheaper.
        let forbidden_cost = range * (size as f64 + 1.0) + 1.0;
        let mut cost = vec![0.0; size * size];
        for i in 0..m {
            for j in 0..n {
                let v = matrix.get(i, j);
                cost[i * size + j] = if v == FORBIDDEN {
                    forbidden_cost
                } else {
                    hi - v
                };
            }
        }
        let tol = TIGHT_RTOL * range.max(1e-300);
        let padded = solve_min_lexicographic(&cost, size, tol);
        padded[..m].to_vec()
    };

    let mut pairs = Vec::new();
    let mut row_used = vec![false; m];
    let mut col_used = vec![false; n];
    for (i, &j) in col_of_row.iter().enumerate() {
        if j < n && matrix.get(i, j) != FORBIDDEN {
            row_used[i] = true;
            col_used[j] = true;
            pairs.push(Pair {
                row: matrix.row_keys[i].clone(),
                col: matrix.col_keys[j].clone(),
                similarity: matrix.get(i, j),
            });
        }
    }
    Ok(Assignment {
        pairs,
        unmatched_rows: keys_where_unused(&matrix.row_keys, &row_used),
        unmatched_cols: keys_where_unused(&matrix.col_keys, &col_used),
    })
}

fn keys_where_unused<K: Clone>(keys: &[K], used: &[bool]) -> Vec<K> {
    keys.iter()
        .zip(used)
        .filter(|(_, &u)| !u)
        .map(|(k, _)| k.clone())
        .collect()
}

/// Drops pairs whose similarity is not strictly above `alpha`.
pub fn threshold_filter<R, C>(assignment: Assignment<R, C>, alpha: f64) -> Assignment<R, C> {
    let Assignment {
        pairs,
        mut unmatched_rows,
        mut unmatched_cols,
    } = assignment;
    let mut kept = Vec::with_capacity(pairs.len());
    for p in pairs {
        if p.similarity > alpha {
            kept.push(p);
        } else {
            unmatched_rows.push(p.row);
            unmatched_cols.push(p.col);
        }
    }
    Assignment {
        pairs: kept,
        unmatched_rows,
        unmatched_cols,
    }
}

/// Square min-cost assignment (shortest augmenting path with potentials),
/// followed by a pass that moves to the lexicographically smallest optimum.
/// Returns the column assigned to each row.
fn solve_min_lexicographic(cost: &[f64], n: usize, tol: f64) -> Vec<usize> {
    let c = |i: usize, j: usize| cost[i * n + j];
    // 1-based arrays; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
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

    let mut col_of = vec![0usize; n];
    let mut row_of = vec![0usize; n];
    for j in 1..=n {
        col_of[p[j] - 1] = j - 1;
        row_of[j - 1] = p[j] - 1;
    }

    // Every optimal assignment is a perfect matching on edges with zero
    // reduced cost under these potentials.
    let tight: Vec<bool> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            c(i, j) - u[i + 1] - v[j + 1] <= tol
        })
        .collect();

    for i in 0..n {
        for j in 0..col_of[i] {
            if !tight[i * n + j] || row_of[j] < i {
                continue;
            }
            // Free col_of[i] by routing row_of[j] along an alternating path
            // through rows after i, then give j to row i.
            let target = col_of[i];
            let mut visited = vec![false; n];
            let mut path = Vec::new();
            if reroute(
                row_of[j],
                target,
                i,
                n,
                &tight,
                &row_of,
                &mut visited,
                &mut path,
            ) {
                for &(r, col) in &path {
                    col_of[r] = col;
                    row_of[col] = r;
                }
                col_of[i] = j;
                row_of[j] = i;
                break;
            }
        }
    }
    col_of
}

/// Depth-first search for an alternating path from `row` to the free column
/// `target`, using only tight edges and rows after `fixed`.
#[allow(clippy::too_many_arguments)]
fn reroute(
    row: usize,
    target: usize,
    fixed: usize,
    n: usize,
    tight: &[bool],
    row_of: &[usize],
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    visited[row] = true;
    for col in 0..n {
        if !tight[row * n + col] {
            continue;
        }
        if col == target {
            path.push((row, col));
            return true;
        }
        let owner = row_of[col];
        if owner == row || owner <= fixed || visited[owner] {
            continue;
        }
        path.push((row, col));
        if reroute(owner, target, fixed, n, tight, row_of, visited, path) {
            return true;
        }
        path.pop();
    }
    false
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Exhaustive search over all matchings of size `min(M, N)`.

    /// Returns the per-row column (`None` for unmatched rows) and the total,
    /// keeping the first optimum in lexicographic order (`None` sorts last).
    pub fn brute_force_max(values: &[f64], m: usize, n: usize) -> (Vec<Option<usize>>, f64) {
        let k = m.min(n);
        let mut best: Option<(Vec<Option<usize>>, f64)> = None;
        let mut current = vec![None; m];
        let mut used = vec![false; n];
        recurse(values, m, n, k, 0, 0, &mut current, &mut used, &mut best);
        best.unwrap_or((vec![None; m], 0.0))
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        values: &[f64],
        m: usize,
        n: usize,
        k: usize,
        row: usize,
        placed: usize,
        current: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        best: &mut Option<(Vec<Option<usize>>, f64)>,
    ) {
        if row == m {
            if placed != k {
                return;
            }
            let total: f64 = current
                .iter()
                .enumerate()
                .filter_map(|(i, c)| c.map(|j| values[i * n + j]))
                .sum();
            if best.as_ref().is_none_or(|(_, b)| total > *b) {
                *best = Some((current.clone(), total));
            }
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                current[row] = Some(j);
                recurse(values, m, n, k, row + 1, placed + 1, current, used, best);
                current[row] = None;
                used[j] = false;
            }
        }
        if m - row > k - placed {
            recurse(values, m, n, k, row + 1, placed, current, used, best);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::brute_force_max;
    use super::*;
    use proptest::prelude::*;

    fn matrix(m: usize, n: usize, values: Vec<f64>) -> SimilarityMatrix {
        SimilarityMatrix::new((0..m).collect(), (0..n).collect(), values).unwrap()
    }

    fn per_row(a: &Assignment, m: usize) -> Vec<Option<usize>> {
        let mut v = vec![None; m];
        for p in &a.pairs {
            v[p.row] = Some(p.col);
        }
        v
    }

    #[test]
    fn single_entry() {
        let a = hungarian_max(&matrix(1, 1, vec![0.7])).unwrap();
        assert_eq!(
            a.pairs,
            vec![Pair {
                row: 0,
                col: 0,
                similarity: 0.7
            }]
        );
    }

    #[test]
    fn anti_diagonal_two_by_two() {
        let values = vec![1.0, 2.0, 2.0, 1.0];
        let (expected, total) = brute_force_max(&values, 2, 2);
        assert_eq!(expected, vec![Some(1), Some(0)]);
        assert_eq!(total, 4.0);
        let a = hungarian_max(&matrix(2, 2, values)).unwrap();
        assert_eq!(per_row(&a, 2), expected);
        assert_eq!(a.total_similarity(), 4.0);
    }

    #[test]
    fn empty_and_rectangular() {
        let a = hungarian_max(&matrix(0, 3, vec![])).unwrap();
        assert!(a.pairs.is_empty());
        assert_eq!(a.unmatched_cols, vec![0, 1, 2]);
        let a = hungarian_max(&matrix(3, 1, vec![0.1, 0.9, 0.5])).unwrap();
        assert_eq!(per_row(&a, 3), vec![None, Some(0), None]);
        assert_eq!(a.unmatched_rows, vec![0, 2]);
    }

    #[test]
    fn ties_break_lexicographically() {
        let a = hungarian_max(&matrix(3, 3, vec![1.0; 9])).unwrap();
        assert_eq!(per_row(&a, 3), vec![Some(0), Some(1), Some(2)]);
        let a = hungarian_max(&matrix(3, 2, vec![0.0; 6])).unwrap();
        assert_eq!(per_row(&a, 3), vec![Some(0), Some(1), None]);
    }

    #[test]
    fn forbidden_pairs_are_avoided_and_dropped() {
        let a = hungarian_max(&matrix(2, 2, vec![5.0, FORBIDDEN, 4.0, 0.0])).unwrap();
        // Taking (0,0)=5 forces (1,1)=0; the alternative uses a forbidden pair.
        assert_eq!(per_row(&a, 2), vec![Some(0), Some(1)]);
        let a = hungarian_max(&matrix(1, 2, vec![FORBIDDEN, FORBIDDEN])).unwrap();
        assert!(a.pairs.is_empty());
        assert_eq!(a.unmatched_rows, vec![0]);
        assert_eq!(a.unmatched_cols, vec![0, 1]);
    }

    #[test]
    fn rejects_nan_and_positive_infinity() {
        assert!(matches!(
            hungarian_max(&matrix(1, 2, vec![0.0, f64::NAN])),
            Err(Error::NonFiniteSimilarity { row: 0, col: 1 })
        ));
        assert!(hungarian_max(&matrix(1, 1, vec![f64::INFINITY])).is_err());
    }

    #[test]
    fn threshold_examples() {
        let a = Assignment {
            pairs: vec![
                Pair {
                    row: 0,
                    col: 0,
                    similarity: 0.9,
                },
                Pair {
                    row: 1,
                    col: 1,
                    similarity: 0.1,
                },
            ],
            unmatched_rows: vec![],
            unmatched_cols: vec![],
        };
        let kept = threshold_filter(a.clone(), 0.3);
        assert_eq!(kept.pairs.len(), 1);
        assert_eq!(kept.pairs[0].row, 0);
        assert_eq!(kept.unmatched_rows, vec![1]);
        assert_eq!(kept.unmatched_cols, vec![1]);
        assert_eq!(threshold_filter(a.clone(), f64::NEG_INFINITY), a);
        let none = threshold_filter(a, 0.9);
        assert!(none.pairs.is_empty());
        assert_eq!(none.unmatched_rows, vec![0, 1]);
    }

    fn small_matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        (0usize..6, 0usize..6).prop_flat_map(|(m, n)| {
            (
                Just(m),
                Just(n),
                proptest::collection::vec(-5.0f64..5.0, m * n),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_exhaustive_search((m, n, values) in small_matrix()) {
            let a = hungarian_max(&matrix(m, n, values.clone())).unwrap();
            let (expected, total) = brute_force_max(&values, m, n);
            prop_assert_eq!(a.pairs.len(), m.min(n));
            prop_assert_eq!(per_row(&a, m), expected);
            prop_assert_eq!(a.total_similarity(), total);
        }

        #[test]
        fn integer_ties_follow_documented_order((m, n, values) in (0usize..5, 0usize..5).prop_flat_map(|(m, n)| {
            (Just(m), Just(n), proptest::collection::vec((0i32..3).prop_map(f64::from), m * n))
        })) {
            let a = hungarian_max(&matrix(m, n, values.clone())).unwrap();
            let (expected, total) = brute_force_max(&values, m, n);
            prop_assert_eq!(per_row(&a, m), expected);
            prop_assert_eq!(a.total_similarity(), total);
        }

        #[test]
        fn positive_scaling_keeps_pairs((m, n, values) in small_matrix(), c in 1e-3f64..1e3) {
            let base = matrix(m, n, values);
            let a = hungarian_max(&base).unwrap();
            let b = hungarian_max(&base.scaled(c)).unwrap();
            prop_assert_eq!(per_row(&a, m), per_row(&b, m));
        }
    }
}
