//! LU-based direct solver used to produce reference solutions.
//!
//! Small systems use dense LU with partial pivoting. Larger systems are
//! reordered with reverse Cuthill-McKee and factored as a band matrix
//! without pivoting, which is stable for the symmetric positive definite
//! matrices produced by the generators.

use std::collections::VecDeque;

use thiserror::Error;

use super::CsrMatrix;

const DENSE_LIMIT: usize = 2000;
const PIVOT_RTOL: f64 = 1e-14;

#[derive(Debug, Error, PartialEq)]
pub enum DirectSolveError {
    #[error("matrix is numerically singular (pivot {pivot:e} at step {step})")]
    SingularMatrix { step: usize, pivot: f64 },
    #[error("right-hand side has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

pub fn direct_solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, DirectSolveError> {
    let n = a.n();
    if b.len() != n {
        return Err(DirectSolveError::DimensionMismatch { expected: n, got: b.len() });
    }
    let threshold = PIVOT_RTOL * a.max_abs();
    if n <= DENSE_LIMIT {
        dense_lu_solve(n, a.to_dense(), b, threshold)
    } else {
        banded_solve(a, b, threshold)
    }
}

fn dense_lu_solve(
    n: usize,
    mut m: Vec<f64>,
    b: &[f64],
    threshold: f64,
) -> Result<Vec<f64>, DirectSolveError> {
    let mut x = b.to_vec();
    for k in 0..n {
        let (piv_row, piv_abs) = (k..n)
            .map(|i| (i, m[i * n + k].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if !(piv_abs >= threshold) || piv_abs == 0.0 {
            return Err(DirectSolveError::SingularMatrix { step: k, pivot: m[piv_row * n + k] });
        }
        if piv_row != k {
            for j in 0..n {
                m.swap(k * n + j, piv_row * n + j);
            }
            x.swap(k, piv_row);
        }
        let pivot = m[k * n + k];
        for i in k + 1..n {
            let factor = m[i * n + k] / pivot;
            if factor == 0.0 {
                continue;
            }
            m[i * n + k] = factor;
            for j in k + 1..n {
                m[i * n + j] -= factor * m[k * n + j];
            }
            x[i] -= factor * x[k];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s -= m[i * n + j] * x[j];
        }
        x[i] = s / m[i * n + i];
    }
    Ok(x)
}

/// Reverse Cuthill-McKee ordering of the (symmetrized) adjacency graph.
/// Returns `perm` with `perm[new] = old`.
pub(crate) fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> =
                a.row(v).0.iter().copied().filter(|&j| !visited[j]).collect();
            nbrs.sort_by_key(|&j| (degree[j], j));
            for j in nbrs {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

fn banded_solve(a: &CsrMatrix, b: &[f64], threshold: f64) -> Result<Vec<f64>, DirectSolveError> {
    let n = a.n();
    let perm = reverse_cuthill_mckee(a);
    let mut inv = vec![0usize; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let mut bw = 0usize;
    for i in 0..n {
        for &j in a.row(i).0 {
            bw = bw.max(inv[i].abs_diff(inv[j]));
        }
    }
    // row-major band storage: row i holds columns i-bw ..= i+bw
    let width = 2 * bw + 1;
    let mut band = vec![0.0; n * width];
    let idx = |i: usize, j: usize| i * width + (j + bw - i);
    for i in 0..n {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            band[idx(inv[i], inv[j])] += v;
        }
    }
    let mut x: Vec<f64> = perm.iter().map(|&old| b[old]).collect();
    for k in 0..n {
        let pivot = band[idx(k, k)];
        if !(pivot.abs() >= threshold) || pivot == 0.0 {
            return Err(DirectSolveError::SingularMatrix { step: k, pivot });
        }
        let last = (k + bw).min(n - 1);
        for i in k + 1..=last {
            let factor = band[idx(i, k)] / pivot;
            if factor == 0.0 {
                continue;
            }
            band[idx(i, k)] = factor;
            for j in k + 1..=last {
                band[idx(i, j)] -= factor * band[idx(k, j)];
            }
            x[i] -= factor * x[k];
        }
    }
    for i in (0..n).rev() {
        let last = (i + bw).min(n - 1);
        let mut s = x[i];
        for j in i + 1..=last {
            s -= band[idx(i, j)] * x[j];
        }
        x[i] = s / band[idx(i, i)];
    }
    let mut out = vec![0.0; n];
    for (new, &old) in perm.iter().enumerate() {
        out[old] = x[new];
    }
    Ok(out)
}
