//! Sparse storage and the precision-emulated kernels used by the solver.

mod csr;
mod direct;
pub(crate) mod kernels;
pub mod mmio;

pub use csr::CsrMatrix;
pub use direct::{direct_solve, DirectSolveError};
pub use kernels::{axpy_fp64, dot_emulated, dot_fp64, matvec_emulated, matvec_fp64, norm2_fp64};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("row pointer array has length {got}, expected {expected}")]
    RowPtrLength { expected: usize, got: usize },
    #[error("row pointers are not a valid nondecreasing offset array")]
    RowPtrOrder,
    #[error("column index {col} out of range for dimension {n}")]
    ColumnOutOfRange { col: usize, n: usize },
    #[error("column indices in row {row} are not strictly increasing")]
    UnsortedRow { row: usize },
    #[error("col_idx and values lengths differ ({cols} vs {vals})")]
    LengthMismatch { cols: usize, vals: usize },
}
