//! Preconditioned conjugate gradient with per-iteration precision control.
//!
//! Four operations run at a policy-chosen precision: the matrix-vector
//! product `q = A p` (p1), the preconditioner solve `z = M⁻¹ r` (p2), and
//! the inner products `ν = pᵀq` (p3) and `σ = rᵀz` (p4). The scalars
//! `α = σ/ν`, `β = σ'/σ` and the updates of `x`, `r` and `p` always run in
//! double precision.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::precision::{EmulationMode, Precision};
use crate::precond::{apply_precond_into, IlutFactors};
use crate::sparsela::kernels::{axpy_in_place, matvec_emulated_into};
use crate::sparsela::{dot_emulated, dot_fp64, norm2_fp64, CsrMatrix};

/// Precisions for `(matvec, precond solve, ν inner product, σ inner product)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrecisionAction {
    pub p1: Precision,
    pub p2: Precision,
    pub p3: Precision,
    pub p4: Precision,
}

impl PrecisionAction {
    pub fn uniform(p: Precision) -> Self {
        Self { p1: p, p2: p, p3: p, p4: p }
    }

    pub fn from_array(ops: [Precision; 4]) -> Self {
        Self { p1: ops[0], p2: ops[1], p3: ops[2], p4: ops[3] }
    }

    pub fn as_array(&self) -> [Precision; 4] {
        [self.p1, self.p2, self.p3, self.p4]
    }
}

/// Chooses the precisions for iteration `k` given `ρ_k = ‖r_k‖/‖b‖`.
pub trait PrecisionPolicy {
    fn select(&mut self, k: usize, rho: f64) -> PrecisionAction;
}

impl<P: PrecisionPolicy + ?Sized> PrecisionPolicy for &mut P {
    fn select(&mut self, k: usize, rho: f64) -> PrecisionAction {
        (**self).select(k, rho)
    }
}

/// Emits the same format for all four operations at every state.
#[derive(Debug, Clone, Copy)]
pub struct FixedPolicy(pub Precision);

impl PrecisionPolicy for FixedPolicy {
    fn select(&mut self, _k: usize, _rho: f64) -> PrecisionAction {
        PrecisionAction::uniform(self.0)
    }
}

pub fn fixed_policy(fmt: Precision) -> FixedPolicy {
    FixedPolicy(fmt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CgConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub min_iters: usize,
    pub emulation_mode: EmulationMode,
    pub precision_set: Vec<Precision>,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 1000,
            min_iters: 10,
            emulation_mode: EmulationMode::Strict,
            precision_set: Precision::EXPERIMENT_SET.to_vec(),
        }
    }
}

impl CgConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(format!("tol must lie in (0, 1), got {}", self.tol));
        }
        if self.min_iters >= self.max_iters {
            return Err(format!(
                "min_iters ({}) must be below max_iters ({})",
                self.min_iters, self.max_iters
            ));
        }
        if self.precision_set.is_empty() {
            return Err("precision_set is empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    Breakdown,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIters => "maxiters",
            SolveStatus::Breakdown => "breakdown",
        }
    }
}

/// One CG iteration: the state it started from, the action taken and the
/// resulting scalars. `beta` is `None` on the final iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// `‖r_k‖/‖b‖` when the action was chosen.
    pub rho: f64,
    /// `‖r_{k+1}‖/‖b‖` after the update (NaN if breakdown hit before it).
    pub rho_next: f64,
    pub action: PrecisionAction,
    pub alpha: f64,
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub x: Vec<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Residual ratio of the returned iterate.
    pub final_rho: f64,
    pub trace: Vec<IterationRecord>,
}

/// Outcome of a single [`CgState::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Continue,
    Converged,
    Breakdown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub outcome: StepOutcome,
    pub record_rho_next: f64,
    pub alpha: f64,
    pub beta: Option<f64>,
}

/// Iterate vectors and scalars of one CG run, advanced one step at a time.
///
/// The training loop drives this directly; [`cg_solve`] wraps it with a
/// policy and a trace.
pub struct CgState<'a> {
    a: &'a CsrMatrix,
    m: &'a IlutFactors,
    mode: EmulationMode,
    tol: f64,
    min_iters: usize,
    b_norm: f64,
    x: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
    sigma: f64,
    k: usize,
    rho: f64,
    best_x: Vec<f64>,
    best_rho: f64,
    broken: bool,
}

impl<'a> CgState<'a> {
    /// `x₀ = 0`, `r₀ = b`, `z₀ = fl_{p2}(M⁻¹ r₀)`, `p₀ = z₀`, `σ₀ = r₀ᵀz₀` in fp64.
    pub fn new(
        a: &'a CsrMatrix,
        b: &[f64],
        m: &'a IlutFactors,
        initial_p2: Precision,
        cfg: &CgConfig,
    ) -> Self {
        let n = a.n();
        assert_eq!(b.len(), n, "rhs dimension mismatch");
        assert_eq!(m.n(), n, "preconditioner dimension mismatch");
        let b_norm = norm2_fp64(b);
        let r = b.to_vec();
        let mut z = vec![0.0; n];
        apply_precond_into(m, &r, &initial_p2.format(), cfg.emulation_mode, &mut z);
        let sigma = dot_fp64(&r, &z);
        let broken = !(sigma.is_finite() && sigma != 0.0 && b_norm > 0.0);
        Self {
            a,
            m,
            mode: cfg.emulation_mode,
            tol: cfg.tol,
            min_iters: cfg.min_iters,
            b_norm,
            x: vec![0.0; n],
            r,
            p: z.clone(),
            z,
            q: vec![0.0; n],
            sigma,
            k: 0,
            rho: if b_norm > 0.0 { 1.0 } else { 0.0 },
            best_x: vec![0.0; n],
            best_rho: 1.0,
            broken,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn residual(&self) -> &[f64] {
        &self.r
    }

    /// True when initialization already broke down (σ₀ zero or non-finite).
    pub fn is_broken(&self) -> bool {
        self.broken
    }

    pub fn best(&self) -> (&[f64], f64) {
        (&self.best_x, self.best_rho)
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>, f64, f64) {
        (self.x, self.best_x, self.rho, self.best_rho)
    }

    pub fn step(&mut self, action: &PrecisionAction) -> StepReport {
        let breakdown = |alpha: f64, rho_next: f64| StepReport {
            outcome: StepOutcome::Breakdown,
            record_rho_next: rho_next,
            alpha,
            beta: None,
        };
        if self.broken {
            return breakdown(f64::NAN, f64::NAN);
        }

        matvec_emulated_into(self.a, &self.p, &action.p1.format(), self.mode, &mut self.q);
        let nu = dot_emulated(&self.p, &self.q, &action.p3.format(), self.mode);
        if !(nu > 0.0) || !nu.is_finite() {
            self.broken = true;
            return breakdown(f64::NAN, f64::NAN);
        }
        let alpha = self.sigma / nu;
        if !alpha.is_finite() {
            self.broken = true;
            return breakdown(alpha, f64::NAN);
        }
        axpy_in_place(alpha, &self.p, &mut self.x);
        axpy_in_place(-alpha, &self.q, &mut self.r);
        self.k += 1;
        let rho_next = norm2_fp64(&self.r) / self.b_norm;
        if !rho_next.is_finite() || self.x.iter().any(|v| !v.is_finite()) {
            self.broken = true;
            return breakdown(alpha, rho_next);
        }
        self.rho = rho_next;
        if rho_next < self.best_rho {
            self.best_rho = rho_next;
            self.best_x.copy_from_slice(&self.x);
        }
        if rho_next < self.tol && self.k >= self.min_iters {
            return StepReport {
                outcome: StepOutcome::Converged,
                record_rho_next: rho_next,
                alpha,
                beta: None,
            };
        }

        apply_precond_into(self.m, &self.r, &action.p2.format(), self.mode, &mut self.z);
        let sigma_next = dot_emulated(&self.r, &self.z, &action.p4.format(), self.mode);
        if sigma_next == 0.0 || !sigma_next.is_finite() {
            self.broken = true;
            return breakdown(alpha, rho_next);
        }
        let beta = sigma_next / self.sigma;
        if !beta.is_finite() {
            self.broken = true;
            return breakdown(alpha, rho_next);
        }
        for (pi, &zi) in self.p.iter_mut().zip(&self.z) {
            *pi = zi + beta * *pi;
        }
        self.sigma = sigma_next;
        StepReport { outcome: StepOutcome::Continue, record_rho_next: rho_next, alpha, beta: Some(beta) }
    }
}

/// Run preconditioned CG with `policy` choosing the precisions at each
/// iteration. The precision for `z₀` is the policy's `p2` at `(k=0, ρ=1)`.
pub fn cg_solve<P: PrecisionPolicy>(
    a: &CsrMatrix,
    b: &[f64],
    m: &IlutFactors,
    mut policy: P,
    cfg: &CgConfig,
) -> SolveResult {
    let initial = policy.select(0, 1.0);
    let mut state = CgState::new(a, b, m, initial.p2, cfg);
    let mut trace = Vec::new();
    let mut status = SolveStatus::MaxIters;

    if state.is_broken() {
        status = SolveStatus::Breakdown;
    } else {
        for k in 0..cfg.max_iters {
            let rho = state.rho();
            let action = if k == 0 { initial } else { policy.select(k, rho) };
            let rep = state.step(&action);
            trace.push(IterationRecord {
                k,
                rho,
                rho_next: rep.record_rho_next,
                action,
                alpha: rep.alpha,
                beta: rep.beta,
            });
            match rep.outcome {
                StepOutcome::Continue => {}
                StepOutcome::Converged => {
                    status = SolveStatus::Converged;
                    break;
                }
                StepOutcome::Breakdown => {
                    status = SolveStatus::Breakdown;
                    break;
                }
            }
        }
    }

    let iterations = trace.len();
    let (x, best_x, rho, best_rho) = state.into_parts();
    let (x, final_rho) =
        if status == SolveStatus::Breakdown { (best_x, best_rho) } else { (x, rho) };
    SolveResult { x, status, iterations, final_rho, trace }
}

/// Writes the iteration trace as CSV with columns
/// `k,rho,p1,p2,p3,p4,alpha,beta`.
pub fn write_trace_csv<W: Write>(trace: &[IterationRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "k,rho,p1,p2,p3,p4,alpha,beta")?;
    for rec in trace {
        let a = rec.action;
        let beta = rec.beta.map(|b| format!("{b:e}")).unwrap_or_default();
        writeln!(
            w,
            "{},{:e},{},{},{},{},{:e},{}",
            rec.k, rec.rho, a.p1, a.p2, a.p3, a.p4, rec.alpha, beta
        )?;
    }
    Ok(())
}
