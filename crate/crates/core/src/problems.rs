//! Test-problem generators: sparse random SPD systems `A = B Bᵀ + βI` and
//! five-point 2D Poisson discretizations on randomly sampled subdomains.

use std::f64::consts::PI;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::precond::{build_preconditioner, IlutFactors, IlutParams, PrecondKind};
use crate::sparsela::{direct_solve, CsrMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRandomSpec {
    pub n: usize,
    /// Number of sampled `(i, j)` index pairs at scale 1.
    pub n_pairs: usize,
    pub beta_range: (f64, f64),
    /// Multiplier on `n_pairs`, drawn uniformly per instance.
    pub sparsity_scale_range: (f64, f64),
    pub seed: u64,
}

impl SparseRandomSpec {
    pub fn desk(seed: u64) -> Self {
        Self { n: 500, n_pairs: 500, beta_range: (1e-4, 1e-2), sparsity_scale_range: (0.8, 1.2), seed }
    }

    pub fn full_scale(seed: u64) -> Self {
        Self { n: 5000, n_pairs: 5000, ..Self::desk(seed) }
    }
}

/// Sampled parameters of one synthetic instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRandomParams {
    pub scale: f64,
    pub pairs: usize,
    pub beta: f64,
    pub rhs: String,
}

/// Sample `B` from index pairs with `N(0,1)` values, then assemble
/// `A = B Bᵀ + βI`. The right-hand side has i.i.d. standard normal entries.
pub fn gen_sparse_spd(spec: &SparseRandomSpec) -> (CsrMatrix, Vec<f64>, SparseRandomParams) {
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (slo, shi) = spec.sparsity_scale_range;
    let scale = if slo < shi { rng.random_range(slo..shi) } else { slo };
    let pairs = (scale * spec.n_pairs as f64).round() as usize;

    // columns of B: for each column, its (row, value) entries in sample order
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for _ in 0..pairs {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let v: f64 = rng.sample(StandardNormal);
        match columns[j].iter_mut().find(|e| e.0 == i) {
            Some(e) => e.1 += v,
            None => columns[j].push((i, v)),
        }
    }
    let (blo, bhi) = spec.beta_range;
    let beta = if blo < bhi { rng.random_range(blo..bhi) } else { blo };

    // B Bᵀ = Σ_c b_c b_cᵀ; (i, j) and (j, i) receive the same products in
    // the same order, so the assembled matrix is exactly symmetric.
    let mut triplets = Vec::new();
    for col in &columns {
        for &(i, vi) in col {
            for &(j, vj) in col {
                triplets.push((i, j, vi * vj));
            }
        }
    }
    for i in 0..n {
        triplets.push((i, i, beta));
    }
    let a = CsrMatrix::from_triplets(n, &triplets).expect("indices are in range");
    let b: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    (a, b, SparseRandomParams { scale, pairs, beta, rhs: "iid_standard_normal".into() })
}

/// Boundary data along one edge, as a function of the edge coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BoundaryCondition {
    Constant { c: f64 },
    Linear { c0: f64, c1: f64 },
    Sinusoidal { amp: f64, freq: f64, phase: f64 },
}

impl BoundaryCondition {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            BoundaryCondition::Constant { c } => c,
            BoundaryCondition::Linear { c0, c1 } => c0 + c1 * s,
            BoundaryCondition::Sinusoidal { amp, freq, phase } => amp * (freq * s + phase).sin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SourceTerm {
    Zero,
    Sinusoidal { amp: f64, kx: f64, ky: f64 },
    /// `c[0] + c[1]x + c[2]y + c[3]x² + c[4]xy + c[5]y²`
    Polynomial { c: [f64; 6] },
}

impl SourceTerm {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            SourceTerm::Zero => 0.0,
            SourceTerm::Sinusoidal { amp, kx, ky } => amp * (kx * x).sin() * (ky * y).sin(),
            SourceTerm::Polynomial { c } => {
                c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y
            }
        }
    }
}

/// A fully realized Poisson problem on `[a_x, b_x] × [a_y, b_y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonInstance {
    pub nx: usize,
    pub ny: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Edges in the order west (x = a_x), east (x = b_x), south (y = a_y),
    /// north (y = b_y). West/east are functions of y, south/north of x.
    pub bc: [BoundaryCondition; 4],
    pub source: SourceTerm,
}

/// Sampling ranges for the randomized boundary and source parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonSampling {
    pub amplitude: (f64, f64),
    /// Sinusoid frequencies, in multiples of π.
    pub freq_pi: (f64, f64),
    pub poly_coeff: (f64, f64),
}

impl Default for PoissonSampling {
    fn default() -> Self {
        Self { amplitude: (-1.0, 1.0), freq_pi: (0.5, 3.0), poly_coeff: (-1.0, 1.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonSpec {
    pub nx: usize,
    pub ny: usize,
    pub seed: u64,
    #[serde(default)]
    pub sampling: PoissonSampling,
}

impl PoissonSpec {
    pub fn desk(seed: u64) -> Self {
        Self { nx: 40, ny: 40, seed, sampling: PoissonSampling::default() }
    }

    pub fn full_scale(seed: u64) -> Self {
        Self { nx: 80, ny: 80, ..Self::desk(seed) }
    }

    /// Sample subdomain, boundary conditions and source.
    pub fn sample(&self) -> PoissonInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let s = &self.sampling;
        let interval = |rng: &mut ChaCha8Rng| {
            let a = rng.random_range(0.0..1.9);
            let w = rng.random_range(0.1..(2.0 - a));
            (a, a + w)
        };
        let x_range = interval(&mut rng);
        let y_range = interval(&mut rng);
        let u = |rng: &mut ChaCha8Rng, r: (f64, f64)| rng.random_range(r.0..r.1);
        let bc = std::array::from_fn(|_| match rng.random_range(0..3) {
            0 => BoundaryCondition::Constant { c: u(&mut rng, s.amplitude) },
            1 => BoundaryCondition::Linear { c0: u(&mut rng, s.amplitude), c1: u(&mut rng, s.amplitude) },
            _ => BoundaryCondition::Sinusoidal {
                amp: u(&mut rng, s.amplitude),
                freq: u(&mut rng, s.freq_pi) * PI,
                phase: rng.random_range(0.0..2.0 * PI),
            },
        });
        let source = match rng.random_range(0..3) {
            0 => SourceTerm::Zero,
            1 => SourceTerm::Sinusoidal {
                amp: u(&mut rng, s.amplitude),
                kx: u(&mut rng, s.freq_pi) * PI,
                ky: u(&mut rng, s.freq_pi) * PI,
            },
            _ => SourceTerm::Polynomial { c: std::array::from_fn(|_| u(&mut rng, s.poly_coeff)) },
        };
        PoissonInstance { nx: self.nx, ny: self.ny, x_range, y_range, bc, source }
    }
}

impl PoissonInstance {
    pub fn spacing(&self) -> (f64, f64) {
        (
            (self.x_range.1 - self.x_range.0) / (self.nx + 1) as f64,
            (self.y_range.1 - self.y_range.0) / (self.ny + 1) as f64,
        )
    }

    /// Assemble the five-point system, unknowns ordered row-major with `y`
    /// outermost: index `j·nx + i` for grid point `(x_i, y_j)`.
    pub fn assemble(&self) -> (CsrMatrix, Vec<f64>) {
        let (nx, ny) = (self.nx, self.ny);
        let (hx, hy) = self.spacing();
        let (cx, cy) = (1.0 / (hx * hx), 1.0 / (hy * hy));
        let ax = self.x_range.0;
        let ay = self.y_range.0;
        let xs = |i: usize| ax + (i + 1) as f64 * hx;
        let ys = |j: usize| ay + (j + 1) as f64 * hy;
        let [west, east, south, north] = &self.bc;

        let mut triplets = Vec::with_capacity(5 * nx * ny);
        let mut rhs = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let row = j * nx + i;
                let (x, y) = (xs(i), ys(j));
                let mut f = self.source.eval(x, y);
                if j > 0 {
                    triplets.push((row, row - nx, -cy));
                } else {
                    f += cy * south.eval(x);
                }
                if i > 0 {
                    triplets.push((row, row - 1, -cx));
                } else {
                    f += cx * west.eval(y);
                }
                triplets.push((row, row, 2.0 * cx + 2.0 * cy));
                if i + 1 < nx {
                    triplets.push((row, row + 1, -cx));
                } else {
                    f += cx * east.eval(y);
                }
                if j + 1 < ny {
                    triplets.push((row, row + nx, -cy));
                } else {
                    f += cy * north.eval(x);
                }
                rhs[row] = f;
            }
        }
        (CsrMatrix::from_triplets(nx * ny, &triplets).expect("stencil indices in range"), rhs)
    }
}

pub fn gen_poisson2d(spec: &PoissonSpec) -> (CsrMatrix, Vec<f64>, PoissonInstance) {
    let inst = spec.sample();
    let (a, b) = inst.assemble();
    (a, b, inst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemFamily {
    Sparse,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Seed offset separating test instances from training instances.
pub const TEST_SEED_OFFSET: u64 = 1_000_000;

impl Split {
    pub fn seed(self, base_seed: u64, i: usize) -> u64 {
        let offset = match self {
            Split::Train => 0,
            Split::Test => TEST_SEED_OFFSET,
        };
        base_seed.wrapping_add(offset).wrapping_add(i as u64)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Size parameters shared by all instances of a problem set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilyScale {
    pub sparse_n: usize,
    pub sparse_pairs: usize,
    pub sparse_beta_range: (f64, f64),
    pub sparse_scale_range: (f64, f64),
    pub poisson_nx: usize,
    pub poisson_ny: usize,
    pub poisson_sampling: PoissonSampling,
}

impl Default for FamilyScale {
    fn default() -> Self {
        Self::desk()
    }
}

impl FamilyScale {
    pub fn desk() -> Self {
        Self {
            sparse_n: 500,
            sparse_pairs: 500,
            sparse_beta_range: (1e-4, 1e-2),
            sparse_scale_range: (0.8, 1.2),
            poisson_nx: 40,
            poisson_ny: 40,
            poisson_sampling: PoissonSampling::default(),
        }
    }

    pub fn full() -> Self {
        Self { sparse_n: 5000, sparse_pairs: 5000, poisson_nx: 80, poisson_ny: 80, ..Self::desk() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceParams {
    Sparse(SparseRandomParams),
    Poisson(PoissonInstance),
}

/// Everything recorded about one instance for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceManifest {
    pub id: usize,
    pub split: Split,
    pub seed: u64,
    pub n: usize,
    pub nnz: usize,
    pub params: InstanceParams,
    pub precond: PrecondKind,
    pub precond_nnz: usize,
    pub precond_warning: Option<String>,
}

pub struct ProblemInstance {
    pub a: CsrMatrix,
    pub b: Vec<f64>,
    pub x_true: Vec<f64>,
    pub m: IlutFactors,
    pub manifest: InstanceManifest,
}

/// Generate `count` instances with seeds `split.seed(base_seed, i)`, each
/// with a direct-solve reference solution and an ILUT preconditioner
/// (Jacobi on zero pivot). Failing instances are logged and skipped.
pub fn make_problem_set(
    family: ProblemFamily,
    count: usize,
    base_seed: u64,
    split: Split,
    scale: &FamilyScale,
    ilut: &IlutParams,
) -> Vec<ProblemInstance> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let seed = split.seed(base_seed, i);
        let (a, b, params) = match family {
            ProblemFamily::Sparse => {
                let spec = SparseRandomSpec {
                    n: scale.sparse_n,
                    n_pairs: scale.sparse_pairs,
                    beta_range: scale.sparse_beta_range,
                    sparsity_scale_range: scale.sparse_scale_range,
                    seed,
                };
                let (a, b, p) = gen_sparse_spd(&spec);
                (a, b, InstanceParams::Sparse(p))
            }
            ProblemFamily::Poisson => {
                let spec = PoissonSpec {
                    nx: scale.poisson_nx,
                    ny: scale.poisson_ny,
                    seed,
                    sampling: scale.poisson_sampling.clone(),
                };
                let (a, b, inst) = gen_poisson2d(&spec);
                (a, b, InstanceParams::Poisson(inst))
            }
        };
        let x_true = match direct_solve(&a, &b) {
            Ok(x) => x,
            Err(e) => {
                warn!("{} instance {i} (seed {seed}) skipped: {e}", split.as_str());
                continue;
            }
        };
        let (m, warning) = match build_preconditioner(&a, ilut) {
            Ok(v) => v,
            Err(e) => {
                warn!("{} instance {i} (seed {seed}) skipped: {e}", split.as_str());
                continue;
            }
        };
        let manifest = InstanceManifest {
            id: i,
            split,
            seed,
            n: a.n(),
            nnz: a.nnz(),
            params,
            precond: m.kind,
            precond_nnz: m.nnz(),
            precond_warning: warning,
        };
        out.push(ProblemInstance { a, b, x_true, m, manifest });
    }
    out
}
