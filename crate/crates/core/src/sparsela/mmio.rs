//! Matrix Market coordinate I/O and plain-text vectors.
//!
//! Symmetric matrices are written as `%%MatrixMarket matrix coordinate real
//! symmetric` with the lower triangle only. Values use Rust's shortest
//! round-trip scientific notation, so write-then-read is lossless.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use super::{CsrMatrix, SparseError};

#[derive(Debug, Error)]
pub enum MmError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Structure(#[from] SparseError),
}

fn parse_err(line: usize, msg: impl Into<String>) -> MmError {
    MmError::Parse { line, msg: msg.into() }
}

pub fn write_matrix_market<W: Write>(a: &CsrMatrix, mut w: W) -> io::Result<()> {
    let symmetric = a.is_symmetric();
    let kind = if symmetric { "symmetric" } else { "general" };
    writeln!(w, "%%MatrixMarket matrix coordinate real {kind}")?;
    let entries: Vec<(usize, usize, f64)> = (0..a.n())
        .flat_map(|i| {
            let (cols, vals) = a.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v)).collect::<Vec<_>>()
        })
        .filter(|&(i, j, _)| !symmetric || j <= i)
        .collect();
    writeln!(w, "{} {} {}", a.n(), a.n(), entries.len())?;
    for (i, j, v) in entries {
        writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
    }
    Ok(())
}

pub fn save_matrix_market(a: &CsrMatrix, path: &Path) -> Result<(), MmError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_matrix_market(a, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_matrix_market<R: BufRead>(r: R) -> Result<CsrMatrix, MmError> {
    let mut lines = r.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let header = header?.to_lowercase();
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(parse_err(1, "missing %%MatrixMarket matrix header"));
    }
    if fields[2] != "coordinate" {
        return Err(parse_err(1, "only coordinate format is supported"));
    }
    if fields[3] != "real" && fields[3] != "integer" {
        return Err(parse_err(1, format!("unsupported field type `{}`", fields[3])));
    }
    let symmetric = match fields[4] {
        "general" => false,
        "symmetric" => true,
        other => return Err(parse_err(1, format!("unsupported symmetry `{other}`"))),
    };

    let mut size: Option<(usize, usize)> = None;
    let mut triplets = Vec::new();
    for (lineno, line) in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        let num = |s: &str| s.parse::<usize>().map_err(|e| parse_err(lineno + 1, e.to_string()));
        match size {
            None => {
                if parts.len() != 3 {
                    return Err(parse_err(lineno + 1, "expected `rows cols nnz`"));
                }
                let (m, n, nnz) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
                if m != n {
                    return Err(parse_err(lineno + 1, "matrix must be square"));
                }
                triplets.reserve(if symmetric { 2 * nnz } else { nnz });
                size = Some((n, nnz));
            }
            Some((n, _)) => {
                if parts.len() != 3 {
                    return Err(parse_err(lineno + 1, "expected `i j value`"));
                }
                let (i, j) = (num(parts[0])?, num(parts[1])?);
                if i == 0 || j == 0 || i > n || j > n {
                    return Err(parse_err(lineno + 1, "index out of range"));
                }
                let v: f64 = parts[2].parse().map_err(|_| parse_err(lineno + 1, "bad value"))?;
                triplets.push((i - 1, j - 1, v));
                if symmetric && i != j {
                    triplets.push((j - 1, i - 1, v));
                }
            }
        }
    }
    let (n, nnz) = size.ok_or_else(|| parse_err(1, "missing size line"))?;
    let stored = if symmetric {
        triplets.iter().filter(|t| t.0 >= t.1).count()
    } else {
        triplets.len()
    };
    if stored != nnz {
        return Err(parse_err(0, format!("expected {nnz} entries, found {stored}")));
    }
    Ok(CsrMatrix::from_triplets(n, &triplets)?)
}

pub fn load_matrix_market(path: &Path) -> Result<CsrMatrix, MmError> {
    read_matrix_market(BufReader::new(fs::File::open(path)?))
}

pub fn save_vector(v: &[f64], path: &Path) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for x in v {
        writeln!(w, "{x:e}")?;
    }
    w.flush()
}

pub fn load_vector(path: &Path) -> Result<Vec<f64>, MmError> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(t.parse().map_err(|_| parse_err(lineno + 1, "bad value"))?);
    }
    Ok(out)
}
