//! Incomplete LU preconditioner with threshold dropping (ILUT).
//!
//! The factors are built once per system with their values stored in a
//! fixed format (fp32 in the experiments). Only the precision of the two
//! triangular solves in [`apply_precond`] varies from iteration to
//! iteration.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::precision::{format_of, EmulationMode, Precision, PrecisionFormat};
use crate::sparsela::CsrMatrix;

const PIVOT_RTOL: f64 = 1e-14;

#[derive(Debug, Error, PartialEq)]
pub enum PrecondError {
    #[error("zero pivot in row {0} of the incomplete factorization")]
    ZeroPivot(usize),
    #[error("zero diagonal entry in row {0}")]
    ZeroDiagonal(usize),
    #[error("invalid ILUT parameters: {0}")]
    InvalidParameters(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecondKind {
    Ilut,
    Jacobi,
}

/// `M = L U` with `L` unit lower triangular (diagonal implicit) and `U`
/// upper triangular with the diagonal stored first in each row.
#[derive(Debug, Clone)]
pub struct IlutFactors {
    pub l: CsrMatrix,
    pub u: CsrMatrix,
    pub storage_fmt: PrecisionFormat,
    pub drop_tol: f64,
    pub fill_factor: f64,
    pub kind: PrecondKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IlutParams {
    pub drop_tol: f64,
    pub fill_factor: f64,
    pub storage: Precision,
}

impl Default for IlutParams {
    fn default() -> Self {
        Self { drop_tol: 1e-4, fill_factor: 10.0, storage: Precision::Fp32 }
    }
}

impl IlutFactors {
    pub fn n(&self) -> usize {
        self.u.n()
    }

    pub fn nnz(&self) -> usize {
        self.l.nnz() + self.u.nnz()
    }

    /// Factors of the identity, i.e. no preconditioning.
    pub fn identity(n: usize) -> Self {
        Self {
            l: CsrMatrix::from_triplets(n, &[]).expect("empty matrix"),
            u: CsrMatrix::identity(n),
            storage_fmt: format_of(Precision::Fp64),
            drop_tol: 0.0,
            fill_factor: 1.0,
            kind: PrecondKind::Jacobi,
        }
    }

    /// Dense row-major `L U`, for checks on small systems.
    pub fn lu_dense(&self) -> Vec<f64> {
        let n = self.n();
        let u = self.u.to_dense();
        let mut out = u.clone();
        for i in 0..n {
            let (cols, vals) = self.l.row(i);
            for (&k, &lik) in cols.iter().zip(vals) {
                for j in 0..n {
                    out[i * n + j] += lik * u[k * n + j];
                }
            }
        }
        out
    }
}

/// Keep the `cap` entries of largest weight, returned sorted by column.
fn keep_largest(mut entries: Vec<(usize, f64, f64)>, cap: usize) -> Vec<(usize, f64)> {
    if entries.len() > cap {
        entries.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        entries.truncate(cap);
    }
    entries.sort_by_key(|e| e.0);
    entries.into_iter().map(|(j, v, _)| (j, v)).collect()
}

/// Row-wise ILUT(τ, p) in the IKJ ordering.
///
/// Entries of the working row smaller than `drop_tol * ‖a_i‖₂` are dropped
/// (a multiplier `l_ik` is measured as `|l_ik · u_kk|`), and each row of `L`
/// (resp. `U`) keeps at most `⌊fill_factor · nnz⌋` off-diagonal entries,
/// where `nnz` counts the strictly lower (resp. upper) entries of row `i`
/// of `A`. Stored values are rounded to `storage_fmt`.
pub fn ilut_factor(
    a: &CsrMatrix,
    drop_tol: f64,
    fill_factor: f64,
    storage_fmt: PrecisionFormat,
) -> Result<IlutFactors, PrecondError> {
    if !(drop_tol >= 0.0) || !(fill_factor >= 1.0) {
        return Err(PrecondError::InvalidParameters(format!(
            "drop_tol={drop_tol}, fill_factor={fill_factor}"
        )));
    }
    let n = a.n();
    let pivot_floor = PIVOT_RTOL * a.max_abs();
    let mut w = vec![0.0f64; n];
    let mut touched = vec![false; n];
    let mut pattern: Vec<usize> = Vec::new();
    let mut pending: BinaryHeap<Reverse<usize>> = BinaryHeap::new();

    let mut l_rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut u_rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);

    for i in 0..n {
        let (cols, vals) = a.row(i);
        let tau = drop_tol * vals.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (&j, &v) in cols.iter().zip(vals) {
            w[j] = v;
            touched[j] = true;
            pattern.push(j);
            if j < i {
                pending.push(Reverse(j));
            }
        }
        if !touched[i] {
            touched[i] = true;
            pattern.push(i);
        }

        while let Some(Reverse(k)) = pending.pop() {
            let u_row = &u_rows[k];
            // threshold on the row entry itself, before scaling by the pivot
            if w[k] == 0.0 || w[k].abs() < tau {
                w[k] = 0.0;
                continue;
            }
            let wk = w[k] / u_row[0].1;
            w[k] = wk;
            for &(j, ukj) in &u_row[1..] {
                if !touched[j] {
                    touched[j] = true;
                    pattern.push(j);
                    if j < i {
                        pending.push(Reverse(j));
                    }
                }
                w[j] -= wk * ukj;
            }
        }

        let (lower_cnt, upper_cnt) = a.row_split_counts(i);
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for &j in &pattern {
            let v = w[j];
            if j == i || v == 0.0 {
                continue;
            }
            if j < i {
                // lower entries are multipliers; compare them in the units of A
                let pivot = u_rows[j][0].1;
                if (v * pivot).abs() >= tau {
                    lower.push((j, v, (v * pivot).abs()));
                }
            } else if v.abs() >= tau {
                upper.push((j, v, v.abs()));
            }
        }
        let diag = w[i];
        for &j in &pattern {
            w[j] = 0.0;
            touched[j] = false;
        }
        pattern.clear();

        let round = |(j, v): (usize, f64)| (j, storage_fmt.round(v));
        let diag = storage_fmt.round(diag);
        if !(diag.abs() >= pivot_floor) || diag == 0.0 {
            return Err(PrecondError::ZeroPivot(i));
        }
        let lower = keep_largest(lower, (fill_factor * lower_cnt as f64).floor() as usize);
        let upper = keep_largest(upper, (fill_factor * upper_cnt as f64).floor() as usize);
        l_rows.push(lower.into_iter().map(round).filter(|e| e.1 != 0.0).collect());
        let mut u_row = vec![(i, diag)];
        u_row.extend(upper.into_iter().map(round).filter(|e| e.1 != 0.0));
        u_rows.push(u_row);
    }

    Ok(IlutFactors {
        l: rows_to_csr(n, &l_rows),
        u: rows_to_csr(n, &u_rows),
        storage_fmt,
        drop_tol,
        fill_factor,
        kind: PrecondKind::Ilut,
    })
}

fn rows_to_csr(n: usize, rows: &[Vec<(usize, f64)>]) -> CsrMatrix {
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for row in rows {
        for &(j, v) in row {
            col_idx.push(j);
            values.push(v);
        }
        row_ptr.push(col_idx.len());
    }
    CsrMatrix::new(n, row_ptr, col_idx, values).expect("factor rows are sorted and in range")
}

/// `M = diag(A)` stored in fp32.
pub fn jacobi_fallback(a: &CsrMatrix) -> Result<IlutFactors, PrecondError> {
    let fmt = format_of(Precision::Fp32);
    let d = a.diagonal();
    if let Some(i) = d.iter().position(|&v| v == 0.0) {
        return Err(PrecondError::ZeroDiagonal(i));
    }
    let d: Vec<f64> = d.into_iter().map(|v| fmt.round(v)).collect();
    Ok(IlutFactors {
        l: CsrMatrix::from_triplets(a.n(), &[]).expect("empty matrix"),
        u: CsrMatrix::from_diagonal(&d),
        storage_fmt: fmt,
        drop_tol: 0.0,
        fill_factor: 1.0,
        kind: PrecondKind::Jacobi,
    })
}

/// ILUT with automatic Jacobi fallback on a zero pivot. The second value
/// carries the warning to record when the fallback was taken.
pub fn build_preconditioner(
    a: &CsrMatrix,
    params: &IlutParams,
) -> Result<(IlutFactors, Option<String>), PrecondError> {
    match ilut_factor(a, params.drop_tol, params.fill_factor, format_of(params.storage)) {
        Ok(m) => Ok((m, None)),
        Err(PrecondError::ZeroPivot(i)) => {
            let msg = format!("ILUT zero pivot in row {i}; using Jacobi preconditioner");
            warn!("{msg}");
            Ok((jacobi_fallback(a)?, Some(msg)))
        }
        Err(e) => Err(e),
    }
}

/// `z = fl(U⁻¹ L⁻¹ r)` in the given format.
pub fn apply_precond(
    m: &IlutFactors,
    r: &[f64],
    fmt: &PrecisionFormat,
    mode: EmulationMode,
) -> Vec<f64> {
    let mut z = vec![0.0; r.len()];
    apply_precond_into(m, r, fmt, mode, &mut z);
    z
}

pub(crate) fn apply_precond_into(
    m: &IlutFactors,
    r: &[f64],
    fmt: &PrecisionFormat,
    mode: EmulationMode,
    z: &mut [f64],
) {
    let n = m.n();
    assert_eq!(r.len(), n, "preconditioner dimension mismatch");
    let strict = mode == EmulationMode::Strict && fmt.tag != Precision::Fp64;
    let fl = |x: f64| fmt.round(x);

    for i in 0..n {
        let (cols, vals) = m.l.row(i);
        let mut s = fl(r[i]);
        if strict {
            for (&j, &lij) in cols.iter().zip(vals) {
                s = fl(s - fl(fl(lij) * z[j]));
            }
        } else {
            for (&j, &lij) in cols.iter().zip(vals) {
                s -= fl(lij) * z[j];
            }
        }
        z[i] = s;
    }
    for i in (0..n).rev() {
        let (cols, vals) = m.u.row(i);
        let mut s = z[i];
        if strict {
            for (&j, &uij) in cols[1..].iter().zip(&vals[1..]) {
                s = fl(s - fl(fl(uij) * z[j]));
            }
            z[i] = fl(s / fl(vals[0]));
        } else {
            for (&j, &uij) in cols[1..].iter().zip(&vals[1..]) {
                s -= fl(uij) * z[j];
            }
            z[i] = s / fl(vals[0]);
        }
    }
    if !strict {
        for zi in z.iter_mut() {
            *zi = fl(*zi);
        }
    }
}
