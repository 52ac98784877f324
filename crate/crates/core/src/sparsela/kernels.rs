//! Emulated and full-precision vector kernels.
//!
//! All accumulations run in ascending index order so that results are
//! bit-reproducible; at `fp64` the emulated kernels coincide with the plain
//! double loops.

use super::CsrMatrix;
use crate::precision::{EmulationMode, Precision, PrecisionFormat};

/// `q = fl(A v)` in the given format.
pub fn matvec_emulated(
    a: &CsrMatrix,
    v: &[f64],
    fmt: &PrecisionFormat,
    mode: EmulationMode,
) -> Vec<f64> {
    let mut out = vec![0.0; a.n()];
    matvec_emulated_into(a, v, fmt, mode, &mut out);
    out
}

pub(crate) fn matvec_emulated_into(
    a: &CsrMatrix,
    v: &[f64],
    fmt: &PrecisionFormat,
    mode: EmulationMode,
    out: &mut [f64],
) {
    assert_eq!(a.n(), v.len(), "matvec dimension mismatch");
    if fmt.tag == Precision::Fp64 {
        matvec_fp64_into(a, v, out);
        return;
    }
    let vr: Vec<f64> = v.iter().map(|&x| fmt.round(x)).collect();
    for (i, slot) in out.iter_mut().enumerate() {
        let (cols, vals) = a.row(i);
        *slot = match mode {
            EmulationMode::Strict => cols.iter().zip(vals).fold(0.0, |acc, (&j, &aij)| {
                fmt.round(acc + fmt.round(fmt.round(aij) * vr[j]))
            }),
            EmulationMode::Fast => fmt.round(
                cols.iter().zip(vals).fold(0.0, |acc, (&j, &aij)| acc + fmt.round(aij) * vr[j]),
            ),
        };
    }
}

/// Plain double-precision CSR product.
pub fn matvec_fp64(a: &CsrMatrix, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.n()];
    matvec_fp64_into(a, v, &mut out);
    out
}

fn matvec_fp64_into(a: &CsrMatrix, v: &[f64], out: &mut [f64]) {
    assert_eq!(a.n(), v.len(), "matvec dimension mismatch");
    for (i, slot) in out.iter_mut().enumerate() {
        let (cols, vals) = a.row(i);
        let mut acc = 0.0;
        for (&j, &aij) in cols.iter().zip(vals) {
            acc += aij * v[j];
        }
        *slot = acc;
    }
}

/// `fl(uᵀv)` with sequential left-to-right accumulation.
pub fn dot_emulated(u: &[f64], v: &[f64], fmt: &PrecisionFormat, mode: EmulationMode) -> f64 {
    assert_eq!(u.len(), v.len(), "dot length mismatch");
    if fmt.tag == Precision::Fp64 {
        return dot_fp64(u, v);
    }
    match mode {
        EmulationMode::Strict => u.iter().zip(v).fold(0.0, |acc, (&x, &y)| {
            fmt.round(acc + fmt.round(fmt.round(x) * fmt.round(y)))
        }),
        EmulationMode::Fast => {
            fmt.round(u.iter().zip(v).fold(0.0, |acc, (&x, &y)| acc + fmt.round(x) * fmt.round(y)))
        }
    }
}

pub fn dot_fp64(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len(), "dot length mismatch");
    let mut acc = 0.0;
    for (&x, &y) in u.iter().zip(v) {
        acc += x * y;
    }
    acc
}

/// `y + alpha * x` in double precision.
pub fn axpy_fp64(alpha: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), y.len(), "axpy length mismatch");
    x.iter().zip(y).map(|(&xi, &yi)| yi + alpha * xi).collect()
}

pub(crate) fn axpy_in_place(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2_fp64(v: &[f64]) -> f64 {
    dot_fp64(v, v).sqrt()
}
