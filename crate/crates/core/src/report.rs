//! Summary statistics and report tables.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cgsolver::SolveStatus;
use crate::precision::Precision;

#[derive(Debug, Error, PartialEq)]
#[error("cannot summarize an empty sample")]
pub struct EmptyInput;

/// Mean, sample standard deviation, extremes and quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub p25: f64,
    pub p75: f64,
}

/// Percentile by linear interpolation between closest ranks on sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `std` uses the `n - 1` denominator and is 0 for a single value.
pub fn summarize(values: &[f64]) -> Result<Summary, EmptyInput> {
    if values.is_empty() {
        return Err(EmptyInput);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Summary {
        mean,
        std,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        p25: percentile(&sorted, 0.25),
        p75: percentile(&sorted, 0.75),
    })
}

/// Format with three significant digits, for presentation only.
pub fn sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    format!("{x:.2e}")
}

/// One solver run on one test matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub matrix_id: usize,
    pub solver: String,
    pub rel_error: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Decisions per format, counted over the four operations of every
    /// iteration.
    pub histogram: BTreeMap<Precision, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverAggregate {
    pub solver: String,
    pub error: Summary,
    pub iterations: Summary,
    pub converged: usize,
    pub total: usize,
    /// Percentage of all precision decisions per format.
    pub precision_pct: BTreeMap<Precision, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub label: String,
    pub rows: Vec<MatrixRow>,
    pub aggregates: Vec<SolverAggregate>,
}

pub fn precision_percentages(rows: &[&MatrixRow]) -> BTreeMap<Precision, f64> {
    let mut counts: BTreeMap<Precision, usize> = BTreeMap::new();
    for r in rows {
        for (&p, &c) in &r.histogram {
            *counts.entry(p).or_default() += c;
        }
    }
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(p, c)| (p, if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 }))
        .collect()
}

impl ExperimentReport {
    /// Aggregates per solver, in order of first appearance in `rows`.
    pub fn from_rows(label: impl Into<String>, rows: Vec<MatrixRow>) -> Result<Self, EmptyInput> {
        let mut solvers: Vec<String> = Vec::new();
        for r in &rows {
            if !solvers.contains(&r.solver) {
                solvers.push(r.solver.clone());
            }
        }
        let mut aggregates = Vec::new();
        for s in solvers {
            let sel: Vec<&MatrixRow> = rows.iter().filter(|r| r.solver == s).collect();
            let errors: Vec<f64> = sel.iter().map(|r| r.rel_error).collect();
            let its: Vec<f64> = sel.iter().map(|r| r.iterations as f64).collect();
            aggregates.push(SolverAggregate {
                solver: s.clone(),
                error: summarize(&errors)?,
                iterations: summarize(&its)?,
                converged: sel.iter().filter(|r| r.status == SolveStatus::Converged).count(),
                total: sel.len(),
                precision_pct: precision_percentages(&sel),
            });
        }
        if aggregates.is_empty() {
            return Err(EmptyInput);
        }
        Ok(Self { label: label.into(), rows, aggregates })
    }

    pub fn aggregate(&self, solver: &str) -> Option<&SolverAggregate> {
        self.aggregates.iter().find(|a| a.solver == solver)
    }

    pub fn write_rows_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let formats = Precision::EXPERIMENT_SET;
        write!(w, "matrix_id,solver,rel_error,iterations,status")?;
        for p in formats {
            write!(w, ",n_{p}")?;
        }
        writeln!(w)?;
        for r in &self.rows {
            write!(w, "{},{},{:e},{},{}", r.matrix_id, r.solver, r.rel_error, r.iterations, r.status.as_str())?;
            for p in formats {
                write!(w, ",{}", r.histogram.get(&p).copied().unwrap_or(0))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Rows `<solver> Error` / `<solver> Iterations` with columns
    /// Mean, Std, Min, Max, 25%, 75%.
    pub fn write_aggregates_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "metric,mean,std,min,max,p25,p75")?;
        for a in &self.aggregates {
            for (name, s) in [("Error", &a.error), ("Iterations", &a.iterations)] {
                writeln!(
                    w,
                    "{} {},{:e},{:e},{:e},{:e},{:e},{:e}",
                    a.solver, name, s.mean, s.std, s.min, s.max, s.p25, s.p75
                )?;
            }
        }
        Ok(())
    }

    /// Percentage of decisions per format, one row per solver.
    pub fn write_precision_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let formats = Precision::EXPERIMENT_SET;
        write!(w, "setting,solver")?;
        for p in formats {
            write!(w, ",{p}")?;
        }
        writeln!(w)?;
        for a in &self.aggregates {
            write!(w, "{},{}", self.label, a.solver)?;
            for p in formats {
                write!(w, ",{:.6}", a.precision_pct.get(&p).copied().unwrap_or(0.0))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Human-readable table with three significant digits.
    pub fn render_table(&self) -> String {
        let mut s = format!("{:<22}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}\n", "Metric", "Mean", "Std", "Min", "Max", "25%", "75%");
        for a in &self.aggregates {
            for (name, m) in [("Error", &a.error), ("Iterations", &a.iterations)] {
                s += &format!(
                    "{:<22}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}\n",
                    format!("{} {}", a.solver, name),
                    sig3(m.mean),
                    sig3(m.std),
                    sig3(m.min),
                    sig3(m.max),
                    sig3(m.p25),
                    sig3(m.p75)
                );
            }
        }
        s
    }
}
